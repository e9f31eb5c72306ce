#pragma once

#include "trot/encoder.hpp"

namespace trot {

struct LossConfig {
  enum class Framework { SimTROT, SimTROTW, BTROT, GlobalSimCLR };
  Framework framework = Framework::SimTROT;
  double tau = 0.5;
  double w = 5.0;  // multiplier on same-position cross-volume denominator terms
  bool symmetrize = true;
  int proj_dim = 32;
  double ema_momentum = 0.996;  // B-TROT target update

  void validate() const {
    require(tau > 0.0, "ConfigError", "tau must be > 0");
    require(w >= 0.0, "ConfigError", "attention weight w must be >= 0");
    require(proj_dim >= 1, "ConfigError", "proj_dim must be >= 1");
    require(ema_momentum >= 0.0 && ema_momentum <= 1.0, "ConfigError",
            "ema momentum must lie in [0,1]");
  }
};

inline LossConfig::Framework framework_from_string(const std::string& s) {
  if (s == "simtrot") return LossConfig::Framework::SimTROT;
  if (s == "simtrot_w") return LossConfig::Framework::SimTROTW;
  if (s == "btrot") return LossConfig::Framework::BTROT;
  if (s == "global_simclr") return LossConfig::Framework::GlobalSimCLR;
  fail("ConfigError", "unknown framework '" + s + "'");
}

inline std::string framework_to_string(LossConfig::Framework f) {
  switch (f) {
    case LossConfig::Framework::SimTROT: return "simtrot";
    case LossConfig::Framework::SimTROTW: return "simtrot_w";
    case LossConfig::Framework::BTROT: return "btrot";
    case LossConfig::Framework::GlobalSimCLR: return "global_simclr";
  }
  return "?";
}

// ---- projection / prediction heads: 2-layer position-wise MLP ----

template <typename T>
void init_mlp_head(ParamStore<T>& store, const std::string& prefix, int in_dim, int out_dim,
                   Rng& rng) {
  init_linear(store, prefix + ".fc1", in_dim, 2 * in_dim, rng);
  init_linear(store, prefix + ".fc2", 2 * in_dim, out_dim, rng);
}

template <typename T>
typename Tape<T>::Var mlp_head_forward(TapeBind<T>& bind, ParamStore<T>& store,
                                       const std::string& prefix, typename Tape<T>::Var x) {
  Tape<T>& tape = bind.tape();
  auto h = tape.linear(x, bind.use(store.get(prefix + ".fc1.weight")),
                       bind.use(store.get(prefix + ".fc1.bias")));
  h = tape.gelu(h);
  return tape.linear(h, bind.use(store.get(prefix + ".fc2.weight")),
                     bind.use(store.get(prefix + ".fc2.bias")));
}

// ---- contrastive losses ----
//
// Token layout: rows 0..B*M-1 hold view A (restored rotated view), rows
// B*M..2*B*M-1 hold view B (masked view); row i*M + m is volume i, position m.
// Embeddings are re-normalized inside the loss so raw projections can be fed
// directly. The anchor set is both views when symmetrize, else view A only.

namespace detail {

template <typename T>
std::shared_ptr<Tensor<T>> contrastive_weights(int B, int M, double w) {
  const int64_t n = static_cast<int64_t>(2) * B * M;
  auto wm = std::make_shared<Tensor<T>>(std::vector<int64_t>{n, n});
  for (int64_t a = 0; a < n; ++a) {
    int64_t ra = a % (static_cast<int64_t>(B) * M);
    int64_t vol_a = ra / M, pos_a = ra % M;
    for (int64_t b = 0; b < n; ++b) {
      if (a == b) continue;
      int64_t rb = b % (static_cast<int64_t>(B) * M);
      int64_t vol_b = rb / M, pos_b = rb % M;
      double val = 1.0;
      if (pos_a == pos_b && vol_a != vol_b) val = w;  // both views of other volumes
      wm->at2(a, b) = static_cast<T>(val);
    }
  }
  return wm;
}

template <typename T>
typename Tape<T>::Var contrastive_core(Tape<T>& tape, typename Tape<T>::Var z_a,
                                       typename Tape<T>::Var z_b, int B, int M, double tau,
                                       double w, bool symmetrize) {
  require(B >= 1 && M >= 1, "DegenerateBatch", "contrastive loss needs at least one token pair");
  const int64_t half = static_cast<int64_t>(B) * M;
  auto zz = tape.rownormalize(tape.concat_rows(z_a, z_b));
  auto s = tape.scale(tape.matmul_nt(zz, zz), 1.0 / tau);
  auto lse = tape.weighted_lse_rows(s, contrastive_weights<T>(B, M, w));
  auto pairs = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>();
  for (int64_t a = 0; a < 2 * half; ++a)
    pairs->push_back({a, a < half ? a + half : a - half});
  auto pos = tape.gather_pairs(s, pairs);
  auto per_anchor = tape.sub(lse, pos);
  if (symmetrize) return tape.mean_all(per_anchor);
  auto sel = std::make_shared<std::vector<int64_t>>();
  for (int64_t a = 0; a < half; ++a) sel->push_back(a);
  return tape.mean_all(tape.gather(per_anchor, sel, {half}));
}

}  // namespace detail

// NT-Xent over all tokens of both views: the denominator runs over every
// other token in the batch (including the positive).
template <typename T>
typename Tape<T>::Var token_contrastive_loss(Tape<T>& tape, typename Tape<T>::Var z_a,
                                             typename Tape<T>::Var z_b, int B, int M, double tau,
                                             bool symmetrize = true) {
  return detail::contrastive_core(tape, z_a, z_b, B, M, tau, 1.0, symmetrize);
}

// Same with the same-position cross-volume denominator terms multiplied by w;
// w = 1 reduces exactly to token_contrastive_loss.
template <typename T>
typename Tape<T>::Var weighted_token_contrastive_loss(Tape<T>& tape, typename Tape<T>::Var z_a,
                                                      typename Tape<T>::Var z_b, int B, int M,
                                                      double tau, double w, bool symmetrize = true) {
  return detail::contrastive_core(tape, z_a, z_b, B, M, tau, w, symmetrize);
}

// NT-Xent over volume-level embeddings (one token per view).
template <typename T>
typename Tape<T>::Var global_simclr_loss(Tape<T>& tape, typename Tape<T>::Var pooled_a,
                                         typename Tape<T>::Var pooled_b, int B, double tau,
                                         bool symmetrize = true) {
  require(B >= 2, "DegenerateBatch", "global SimCLR needs batch size >= 2");
  return detail::contrastive_core(tape, pooled_a, pooled_b, B, 1, tau, 1.0, symmetrize);
}

// One direction of the BYOL token loss: mean over positions of the squared
// distance between normalized prediction and normalized (detached) target.
template <typename T>
typename Tape<T>::Var byol_pair_loss(Tape<T>& tape, typename Tape<T>::Var pred,
                                     typename Tape<T>::Var target_detached) {
  require(tape.val(pred).shape == tape.val(target_detached).shape, "ShapeMismatch",
          "byol loss shape mismatch");
  auto d = tape.sub(tape.rownormalize(pred), tape.rownormalize(target_detached));
  return tape.mean_all(tape.rowsum(tape.mul(d, d)));
}

// ---- collapse diagnostics ----

struct CollapseReport {
  double cross_volume_same_position_cosine = 0.0;  // high + low within-volume => collapse
  double within_volume_cross_position_cosine = 0.0;
  double positive_pair_cosine = 0.0;
  double mean_position_variance = 0.0;
};

// z, z_hat: (B*M, P) unit rows; z is the designated (restored) view.
inline CollapseReport collapse_metrics(const TensorD& z, const TensorD& z_hat, int B, int M) {
  require(B >= 2, "DegenerateBatch", "collapse metrics need at least two volumes");
  require(z.rank() == 2 && z.shape == z_hat.shape &&
              z.dim(0) == static_cast<int64_t>(B) * M,
          "ShapeMismatch", "collapse_metrics expects (B*M, P) token matrices");
  const int64_t P = z.dim(1);
  auto dot = [&](const TensorD& x, int64_t r1, const TensorD& y, int64_t r2) {
    double s = 0;
    for (int64_t c = 0; c < P; ++c) s += x.at2(r1, c) * y.at2(r2, c);
    return s;
  };
  CollapseReport rep;
  {
    double acc = 0;
    int64_t n = 0;
    for (int64_t m = 0; m < M; ++m)
      for (int64_t i = 0; i < B; ++i)
        for (int64_t j = i + 1; j < B; ++j, ++n)
          acc += dot(z, i * M + m, z, j * M + m);
    rep.cross_volume_same_position_cosine = n ? acc / static_cast<double>(n) : 0.0;
  }
  if (M >= 2) {
    double acc = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < B; ++i)
      for (int64_t m = 0; m < M; ++m)
        for (int64_t q = m + 1; q < M; ++q, ++n) acc += dot(z, i * M + m, z, i * M + q);
    rep.within_volume_cross_position_cosine = acc / static_cast<double>(n);
  }
  {
    double acc = 0;
    for (int64_t r = 0; r < z.dim(0); ++r) acc += dot(z, r, z_hat, r);
    rep.positive_pair_cosine = acc / static_cast<double>(z.dim(0));
  }
  {
    double acc = 0;
    std::vector<double> mean(static_cast<size_t>(P));
    for (int64_t m = 0; m < M; ++m) {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < P; ++c) mean[static_cast<size_t>(c)] += z.at2(i * M + m, c);
      for (auto& v : mean) v /= B;
      double var = 0;
      for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < P; ++c) {
          double d = z.at2(i * M + m, c) - mean[static_cast<size_t>(c)];
          var += d * d;
        }
      acc += var / B;
    }
    rep.mean_position_variance = acc / static_cast<double>(M);
  }
  return rep;
}

// Unit-normalized rows; zero rows stay zero.
inline TensorD normalize_rows_plain(const TensorD& x) {
  TensorD out = x;
  const int64_t C = x.dim(1);
  for (int64_t r = 0; r < x.dim(0); ++r) {
    double s = 0;
    for (int64_t c = 0; c < C; ++c) s += x.at2(r, c) * x.at2(r, c);
    if (s <= 1e-24) continue;
    double inv = 1.0 / std::sqrt(s);
    for (int64_t c = 0; c < C; ++c) out.at2(r, c) *= inv;
  }
  return out;
}

}  // namespace trot
