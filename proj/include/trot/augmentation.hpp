#pragma once

#include "trot/spatial.hpp"
#include "trot/volume.hpp"

namespace trot {

// Two-view construction: texture transforms on both views, block masking on
// one, a grid symmetry on the other.
struct AugmentationConfig {
  std::pair<double, double> noise_std{0.0, 0.1};
  std::pair<double, double> gibbs_cutoff{0.5, 1.0};  // retained low-frequency fraction per axis
  std::pair<double, double> intensity_scale{0.9, 1.1};
  std::pair<double, double> intensity_shift{-0.1, 0.1};
  double prob_noise = 0.5, prob_gibbs = 0.5, prob_scale = 0.5, prob_shift = 0.5;
  double mask_ratio = 0.75;
  Shape3 mask_block{4, 4, 4};  // one mask unit = the coarsest token grid's receptive patch
  bool mask_on_rotated_view = false;
  bool spatial_enabled = true;

  void validate() const {
    require(mask_ratio >= 0.0, "ConfigError", "mask_ratio must be >= 0");
    require(mask_ratio <= 0.85, "MaskRatioTooHigh",
            "mask_ratio " + std::to_string(mask_ratio) + " exceeds 0.85");
    auto ordered = [](const std::pair<double, double>& r) { return r.first <= r.second; };
    require(ordered(noise_std) && ordered(gibbs_cutoff) && ordered(intensity_scale) &&
                ordered(intensity_shift),
            "ConfigError", "augmentation ranges must be ordered (lo, hi)");
  }
};

struct ViewPair {
  Volume view_rotated;       // spatial transform applied (plus mask when mask_on_rotated_view)
  Volume view_masked;        // block mask applied (texture-only when mask_on_rotated_view)
  SpatialTransform transform;
  Tensor<uint8_t> mask_map;  // over mask units, 1 = masked
};

// Random combination of Gaussian noise, Gibbs noise (sharp 3D frequency
// truncation), intensity scaling and intensity shift. Labels untouched,
// output clipped to [0,1]. Draw order per sub-transform: application coin,
// then parameters, then per-voxel noise draws when applicable.
Volume texture_augment(const Volume& v, const AugmentationConfig& cfg, Rng& rng);

// Zero out round(mask_ratio * n_units) whole blocks; unmasked voxels stay
// bit-identical.
std::pair<Volume, Tensor<uint8_t>> block_mask(const Volume& v, const AugmentationConfig& cfg,
                                              Rng& rng);

// Each view gets an independent texture draw from the stream.
ViewPair make_view_pair(const Volume& v, const AugmentationConfig& cfg, const Shape3& token_grid,
                        const std::vector<Shape3>& patch_sizes, Rng& rng);

// Low-pass the volume by zeroing all DFT coefficients whose centered index
// exceeds cutoff*(N/2) on any axis; real part of the inverse transform.
TensorD gibbs_lowpass(const TensorD& intensities, double cutoff_fraction);

}  // namespace trot
