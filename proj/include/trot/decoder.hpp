#pragma once

#include "trot/encoder.hpp"

namespace trot {

// Convolutional U-shaped decoder for fine-tuning: transposed-convolution
// upsampling, skip connections from every encoder stage plus an input stem,
// and a 1-voxel-kernel classification head producing K+1 logits per voxel.
template <typename T>
class SegDecoder {
 public:
  using Var = typename Tape<T>::Var;

  SegDecoder(EncoderConfig enc_cfg, int n_classes, int stem_channels = 8)
      : enc_(std::move(enc_cfg)), n_classes_(n_classes), stem_(stem_channels) {
    require(n_classes_ >= 1, "ConfigError", "decoder needs at least one foreground class");
    build_transpose_maps();
  }

  int n_logits() const { return n_classes_ + 1; }

  void init_params(ParamStore<T>& store, const std::string& prefix, Rng& rng) const {
    init_conv3(store, prefix + "stem", enc_.in_channels, stem_, rng);
    for (int l = enc_.n_stages - 1; l >= 1; --l) {
      int cl = enc_.stage_dim(l), cd = enc_.stage_dim(l - 1);
      init_tconv(store, prefix + "up" + std::to_string(l), cl, cd, {2, 2, 2}, rng);
      init_conv3(store, prefix + "fuse" + std::to_string(l), 2 * cd, cd, rng);
    }
    init_tconv(store, prefix + "up0", enc_.stage_dim(0), stem_, enc_.patch_size, rng);
    init_conv3(store, prefix + "fuse0", 2 * stem_, stem_, rng);
    init_tconv(store, prefix + "head", stem_, n_logits(), {1, 1, 1}, rng);
  }

  // skips: encoder stage outputs (tokens as [N, C]); returns logits
  // (K+1, D, H, W) at full voxel resolution.
  Var forward(TapeBind<T>& bind, ParamStore<T>& store, const std::string& prefix,
              const TensorD& volume, const std::vector<StageOutput<T>>& skips) const {
    Tape<T>& tape = bind.tape();
    require(static_cast<int>(skips.size()) == enc_.n_stages, "ShapeMismatch",
            "decoder expects one skip per encoder stage");
    Var y = to_channel_major(tape, skips.back(), enc_.n_stages - 1);
    for (int l = enc_.n_stages - 1; l >= 1; --l) {
      y = tconv(bind, store, prefix + "up" + std::to_string(l), y, {2, 2, 2});
      Var skip = to_channel_major(tape, skips[static_cast<size_t>(l - 1)], l - 1);
      y = concat_channels(tape, y, skip);
      y = tape.gelu(conv3(bind, store, prefix + "fuse" + std::to_string(l), y));
    }
    y = tconv(bind, store, prefix + "up0", y, enc_.patch_size);
    Var in = tape.constant(volume.template cast<T>());
    Var stem = tape.gelu(conv3(bind, store, prefix + "stem", in));
    y = concat_channels(tape, y, stem);
    y = tape.gelu(conv3(bind, store, prefix + "fuse0", y));
    return tconv(bind, store, prefix + "head", y, {1, 1, 1});
  }

 private:
  EncoderConfig enc_;
  int n_classes_;
  int stem_;
  std::vector<typename Tape<T>::IndexMap> transpose_maps_;  // [N,C] -> [C,d,h,w] per stage

  static void init_conv3(ParamStore<T>& store, const std::string& prefix, int ci, int co, Rng& rng) {
    Tensor<T> w({co, ci, 3, 3, 3});
    double std = 1.0 / std::sqrt(27.0 * ci);
    for (auto& v : w.data) v = static_cast<T>(gaussian(rng, 0.0, std));
    store.add(prefix + ".weight", std::move(w));
    store.add(prefix + ".bias", Tensor<T>({co}));
  }

  static void init_tconv(ParamStore<T>& store, const std::string& prefix, int ci, int co, Shape3 p,
                         Rng& rng) {
    Tensor<T> w({ci, co, p[0], p[1], p[2]});
    double std = 1.0 / std::sqrt(static_cast<double>(ci));
    for (auto& v : w.data) v = static_cast<T>(gaussian(rng, 0.0, std));
    store.add(prefix + ".weight", std::move(w));
    store.add(prefix + ".bias", Tensor<T>({co}));
  }

  Var conv3(TapeBind<T>& bind, ParamStore<T>& store, const std::string& prefix, Var x) const {
    return bind.tape().conv3d_k3(x, bind.use(store.get(prefix + ".weight")),
                                 bind.use(store.get(prefix + ".bias")));
  }

  Var tconv(TapeBind<T>& bind, ParamStore<T>& store, const std::string& prefix, Var x,
            Shape3 p) const {
    return bind.tape().tconv3d_p(x, bind.use(store.get(prefix + ".weight")),
                                 bind.use(store.get(prefix + ".bias")), p);
  }

  Var to_channel_major(Tape<T>& tape, const StageOutput<T>& s, int stage) const {
    const auto& g = s.grid;
    return tape.gather(s.tokens, transpose_maps_[static_cast<size_t>(stage)],
                       {s.dim, g[0], g[1], g[2]});
  }

  static Var concat_channels(Tape<T>& tape, Var a, Var b) {
    const auto& sa = tape.val(a).shape;
    const auto& sb = tape.val(b).shape;
    require(sa.size() == 4 && sb.size() == 4 && sa[1] == sb[1] && sa[2] == sb[2] && sa[3] == sb[3],
            "ShapeMismatch", "channel concat on mismatched grids");
    int64_t n = sa[1] * sa[2] * sa[3];
    auto a2 = tape.reshape(a, {sa[0], n});
    auto b2 = tape.reshape(b, {sb[0], n});
    return tape.reshape(tape.concat_rows(a2, b2), {sa[0] + sb[0], sa[1], sa[2], sa[3]});
  }

  void build_transpose_maps() {
    for (int s = 0; s < enc_.n_stages; ++s) {
      Shape3 g = enc_.stage_grid(s);
      int64_t n = prod3(g), c = enc_.stage_dim(s);
      auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c));
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < n; ++i) (*map)[static_cast<size_t>(ch * n + i)] = i * c + ch;
      transpose_maps_.push_back(std::move(map));
    }
  }
};

// Soft-Dice over foreground classes plus voxel-wise cross-entropy.
// logits: (K+1, D, H, W); labels: (D, H, W) in {0..K}.
template <typename T>
typename Tape<T>::Var dice_ce_loss(Tape<T>& tape, typename Tape<T>::Var logits,
                                   const TensorI& labels, double eps = 1e-6) {
  const auto& ls = tape.val(logits).shape;
  require(ls.size() == 4 && ls[1] == labels.dim(0) && ls[2] == labels.dim(1) &&
              ls[3] == labels.dim(2),
          "ShapeMismatch", "logit grid does not match label grid");
  const int64_t k1 = ls[0];
  const int64_t n = ls[1] * ls[2] * ls[3];
  // (K+1, N) -> (N, K+1)
  auto tmap = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * k1));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < k1; ++c) (*tmap)[static_cast<size_t>(i * k1 + c)] = c * n + i;
  auto lt = tape.gather(logits, tmap, {n, k1});

  // cross-entropy via stable logsumexp
  auto ones = std::make_shared<Tensor<T>>(Tensor<T>::full({n, k1}, T(1)));
  auto lse = tape.weighted_lse_rows(lt, ones);
  auto pick = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>();
  for (int64_t i = 0; i < n; ++i) {
    int32_t cls = labels[i];
    require(cls >= 0 && cls < k1, "ShapeMismatch", "label value out of range for the logit head");
    pick->push_back({i, cls});
  }
  auto ce = tape.mean_all(tape.sub(lse, tape.gather_pairs(lt, pick)));

  // soft dice on softmax probabilities, foreground classes only
  auto probs = tape.softmax_lastdim(lt);
  Tensor<T> onehot({n, k1});
  std::vector<double> tsum(static_cast<size_t>(k1), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    onehot.at2(i, labels[i]) = T(1);
    tsum[static_cast<size_t>(labels[i])] += 1.0;
  }
  auto inter = tape.colsum(tape.mul(probs, tape.constant(onehot)));  // [K+1]
  auto psum = tape.colsum(probs);
  Tensor<T> tsum_t({k1});
  for (int64_t c = 0; c < k1; ++c) tsum_t[c] = static_cast<T>(tsum[static_cast<size_t>(c)]);
  auto fg = std::make_shared<std::vector<int64_t>>();
  for (int64_t c = 1; c < k1; ++c) fg->push_back(c);
  const int64_t kf = k1 - 1;
  auto num = tape.add_scalar(tape.scale(tape.gather(inter, fg, {kf}), 2.0), eps);
  auto den = tape.add_scalar(tape.gather(tape.add_const(psum, tsum_t), fg, {kf}), eps);
  auto dice_mean = tape.mean_all(tape.div(num, den));
  auto dice_loss = tape.add_scalar(tape.scale(dice_mean, -1.0), 1.0);
  return tape.add(ce, dice_loss);
}

// Argmax labels from a logit grid.
template <typename T>
TensorI argmax_labels(const Tensor<T>& logits) {
  const int64_t k1 = logits.dim(0);
  const int64_t n = logits.numel() / k1;
  TensorI out({logits.dim(1), logits.dim(2), logits.dim(3)});
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    T bv = logits[i];
    for (int64_t c = 1; c < k1; ++c)
      if (logits[c * n + i] > bv) {
        bv = logits[c * n + i];
        best = static_cast<int>(c);
      }
    out[i] = best;
  }
  return out;
}

}  // namespace trot
