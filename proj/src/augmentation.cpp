#include "trot/augmentation.hpp"

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>

namespace trot {

namespace {

// FFTW plans are cached per spatial shape; buffers come from fftw_malloc so
// the plan alignment assumptions always hold.
struct FftWorkspace {
  fftw_plan fwd = nullptr, bwd = nullptr;
  double* real = nullptr;
  fftw_complex* freq = nullptr;
  int64_t n_real = 0, n_freq = 0;

  FftWorkspace(int d, int h, int w) {
    n_real = static_cast<int64_t>(d) * h * w;
    n_freq = static_cast<int64_t>(d) * h * (w / 2 + 1);
    real = fftw_alloc_real(static_cast<size_t>(n_real));
    freq = fftw_alloc_complex(static_cast<size_t>(n_freq));
    fwd = fftw_plan_dft_r2c_3d(d, h, w, real, freq, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_c2r_3d(d, h, w, freq, real, FFTW_ESTIMATE);
  }
  ~FftWorkspace() {
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
    fftw_free(real);
    fftw_free(freq);
  }
};

FftWorkspace& workspace_for(const Shape3& s) {
  static std::map<std::array<int, 3>, std::unique_ptr<FftWorkspace>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(s);
  if (it == cache.end())
    it = cache.emplace(s, std::make_unique<FftWorkspace>(s[0], s[1], s[2])).first;
  return *it->second;
}

int centered_index(int f, int n) { return f <= n / 2 ? f : f - n; }

}  // namespace

TensorD gibbs_lowpass(const TensorD& intensities, double cutoff_fraction) {
  require(intensities.rank() == 4, "ShapeMismatch", "gibbs_lowpass expects (C,D,H,W)");
  const int d = static_cast<int>(intensities.dim(1));
  const int h = static_cast<int>(intensities.dim(2));
  const int w = static_cast<int>(intensities.dim(3));
  FftWorkspace& ws = workspace_for({d, h, w});
  TensorD out(intensities.shape);
  const double limit0 = cutoff_fraction * (d / 2.0);
  const double limit1 = cutoff_fraction * (h / 2.0);
  const double limit2 = cutoff_fraction * (w / 2.0);
  for (int64_t c = 0; c < intensities.dim(0); ++c) {
    const double* src = intensities.data.data() + c * ws.n_real;
    std::copy(src, src + ws.n_real, ws.real);
    fftw_execute(ws.fwd);
    int64_t idx = 0;
    for (int f0 = 0; f0 < d; ++f0)
      for (int f1 = 0; f1 < h; ++f1)
        for (int f2 = 0; f2 <= w / 2; ++f2, ++idx) {
          bool keep = std::abs(centered_index(f0, d)) <= limit0 &&
                      std::abs(centered_index(f1, h)) <= limit1 && f2 <= limit2;
          if (!keep) {
            ws.freq[idx][0] = 0.0;
            ws.freq[idx][1] = 0.0;
          }
        }
    fftw_execute(ws.bwd);
    double* dst = out.data.data() + c * ws.n_real;
    const double scale = 1.0 / static_cast<double>(ws.n_real);
    for (int64_t i = 0; i < ws.n_real; ++i) dst[i] = ws.real[i] * scale;
  }
  return out;
}

Volume texture_augment(const Volume& v, const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  Volume out = v;
  if (uniform(rng, 0.0, 1.0) < cfg.prob_noise) {
    double std = uniform(rng, cfg.noise_std.first, cfg.noise_std.second);
    for (auto& x : out.intensities.data) x += gaussian(rng, 0.0, std);
  }
  if (uniform(rng, 0.0, 1.0) < cfg.prob_gibbs) {
    double cutoff = uniform(rng, cfg.gibbs_cutoff.first, cfg.gibbs_cutoff.second);
    out.intensities = gibbs_lowpass(out.intensities, cutoff);
  }
  if (uniform(rng, 0.0, 1.0) < cfg.prob_scale) {
    double s = uniform(rng, cfg.intensity_scale.first, cfg.intensity_scale.second);
    for (auto& x : out.intensities.data) x *= s;
  }
  if (uniform(rng, 0.0, 1.0) < cfg.prob_shift) {
    double sh = uniform(rng, cfg.intensity_shift.first, cfg.intensity_shift.second);
    for (auto& x : out.intensities.data) x += sh;
  }
  for (auto& x : out.intensities.data) x = std::clamp(x, 0.0, 1.0);
  return out;
}

std::pair<Volume, Tensor<uint8_t>> block_mask(const Volume& v, const AugmentationConfig& cfg,
                                              Rng& rng) {
  cfg.validate();
  const Shape3 s = v.spatial_shape();
  const Shape3& b = cfg.mask_block;
  for (int k = 0; k < 3; ++k)
    require(b[static_cast<size_t>(k)] > 0 && s[static_cast<size_t>(k)] % b[static_cast<size_t>(k)] == 0,
            "ShapeMismatch",
            "mask_block " + shape3_str(b) + " does not divide volume shape " + shape3_str(s));
  const Shape3 units{s[0] / b[0], s[1] / b[1], s[2] / b[2]};
  const int64_t n_units = prod3(units);
  const auto n_mask = static_cast<int64_t>(std::llround(cfg.mask_ratio * static_cast<double>(n_units)));
  std::vector<int64_t> order(static_cast<size_t>(n_units));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Tensor<uint8_t> map({units[0], units[1], units[2]});
  for (int64_t i = 0; i < n_mask; ++i) map[order[static_cast<size_t>(i)]] = 1;
  Volume out = v;
  const int64_t C = out.intensities.dim(0);
  for (int64_t u = 0; u < n_units; ++u) {
    if (!map[u]) continue;
    int64_t u2 = u % units[2], u1 = (u / units[2]) % units[1], u0 = u / (units[1] * units[2]);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t z = u0 * b[0]; z < (u0 + 1) * b[0]; ++z)
        for (int64_t y = u1 * b[1]; y < (u1 + 1) * b[1]; ++y)
          for (int64_t x = u2 * b[2]; x < (u2 + 1) * b[2]; ++x)
            out.intensities.at4(c, z, y, x) = 0.0;
  }
  return {std::move(out), std::move(map)};
}

ViewPair make_view_pair(const Volume& v, const AugmentationConfig& cfg, const Shape3& token_grid,
                        const std::vector<Shape3>& patch_sizes, Rng& rng) {
  ViewPair pair;
  pair.transform = cfg.spatial_enabled ? sample_valid_transform(token_grid, patch_sizes, rng)
                                       : identity_transform();
  Volume tex_a = texture_augment(v, cfg, rng);
  Volume tex_b = texture_augment(v, cfg, rng);
  if (cfg.mask_on_rotated_view) {
    Volume rotated = tex_a;
    rotated.intensities = apply_to_grid(tex_a.intensities, pair.transform);
    if (rotated.has_label()) rotated.label = apply_to_grid3(tex_a.label, pair.transform);
    auto [masked_rot, map] = block_mask(rotated, cfg, rng);
    pair.view_rotated = std::move(masked_rot);
    pair.mask_map = std::move(map);
    pair.view_masked = std::move(tex_b);
  } else {
    pair.view_rotated = tex_a;
    pair.view_rotated.intensities = apply_to_grid(tex_a.intensities, pair.transform);
    if (tex_a.has_label()) pair.view_rotated.label = apply_to_grid3(tex_a.label, pair.transform);
    auto [masked, map] = block_mask(tex_b, cfg, rng);
    pair.view_masked = std::move(masked);
    pair.mask_map = std::move(map);
  }
  return pair;
}

}  // namespace trot
