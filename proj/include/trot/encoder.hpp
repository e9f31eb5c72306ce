#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trot/spatial.hpp"
#include "trot/tape.hpp"
#include "trot/volume.hpp"

namespace trot {

// Architecture hyperparameters for the 3D transformer encoder. Hierarchical:
// windowed attention with optional shifted windows and 2x2x2 patch merging
// after each stage (embed dim doubles). Flat: single stage, global attention,
// constant dim.
struct EncoderConfig {
  enum class Variant { Hierarchical, Flat };
  Variant variant = Variant::Hierarchical;
  Shape3 input_shape{32, 32, 32};
  int in_channels = 1;
  Shape3 patch_size{2, 2, 2};
  int n_stages = 3;
  int blocks_per_stage = 2;
  int embed_dim = 16;  // stage 0
  Shape3 window{4, 4, 4};
  int n_heads = 2;
  bool shifted_windows = true;
  double mlp_ratio = 2.0;
  double pos_emb_std = 0.02;
  bool center_input = false;  // z-score the input volume before patch partition
  bool check_finite = true;

  Shape3 token_grid() const {
    return {input_shape[0] / patch_size[0], input_shape[1] / patch_size[1],
            input_shape[2] / patch_size[2]};
  }
  Shape3 stage_grid(int s) const {
    Shape3 g = token_grid();
    for (int k = 0; k < 3; ++k) g[static_cast<size_t>(k)] >>= s;
    return g;
  }
  int stage_dim(int s) const { return embed_dim << s; }
  int out_dim() const { return stage_dim(n_stages - 1); }
  Shape3 out_grid() const { return stage_grid(n_stages - 1); }

  // voxels covered by one token of the coarsest grid; also the mask unit
  Shape3 coarse_patch() const {
    Shape3 p = patch_size;
    for (int k = 0; k < 3; ++k) p[static_cast<size_t>(k)] <<= (n_stages - 1);
    return p;
  }

  // patch shapes that must stay invariant under a sampled spatial transform
  std::vector<Shape3> invariance_patch_sizes() const {
    std::vector<Shape3> v{patch_size};
    for (int s = 1; s < n_stages; ++s) v.push_back({2, 2, 2});
    return v;
  }

  void validate() const {
    require(in_channels >= 1 && embed_dim >= 1 && n_stages >= 1 && blocks_per_stage >= 1 &&
                n_heads >= 1,
            "ConfigError", "encoder sizes must be positive");
    require(embed_dim % n_heads == 0, "ConfigError", "embed_dim must be divisible by n_heads");
    if (variant == Variant::Flat)
      require(n_stages == 1, "ConfigError", "flat encoder variant is single-stage");
    for (int k = 0; k < 3; ++k) {
      require(patch_size[static_cast<size_t>(k)] >= 1, "ConfigError", "patch_size must be >= 1");
      require(input_shape[static_cast<size_t>(k)] % patch_size[static_cast<size_t>(k)] == 0,
              "ShapeMismatch", "input shape not divisible by patch size");
    }
    Shape3 g = token_grid();
    for (int k = 0; k < 3; ++k)
      require(g[static_cast<size_t>(k)] % (1 << (n_stages - 1)) == 0, "ShapeMismatch",
              "token grid not divisible by 2^(n_stages-1)");
    for (int s = 0; s < n_stages; ++s) {
      Shape3 gs = stage_grid(s), ws = stage_window(s);
      for (int k = 0; k < 3; ++k)
        require(gs[static_cast<size_t>(k)] % ws[static_cast<size_t>(k)] == 0, "WindowMismatch",
                "window does not divide the stage-" + std::to_string(s) + " token grid");
    }
  }

  // window clamped to the stage grid (global attention once the grid is small)
  Shape3 stage_window(int s) const {
    Shape3 g = stage_grid(s), w{};
    for (int k = 0; k < 3; ++k)
      w[static_cast<size_t>(k)] = variant == Variant::Flat
                                      ? g[static_cast<size_t>(k)]
                                      : std::min(window[static_cast<size_t>(k)], g[static_cast<size_t>(k)]);
    return w;
  }

  int mlp_hidden(int s) const {
    return std::max(1, static_cast<int>(std::lround(mlp_ratio * stage_dim(s))));
  }

  int64_t expected_param_count() const {
    auto lin = [](int64_t ci, int64_t co) { return ci * co + co; };
    Shape3 g = token_grid();
    int64_t n0 = prod3(g);
    int64_t total = lin(static_cast<int64_t>(in_channels) * prod3(patch_size), embed_dim);
    total += n0 * embed_dim;  // positional table
    for (int s = 0; s < n_stages; ++s) {
      int64_t c = stage_dim(s), ch = mlp_hidden(s);
      total += blocks_per_stage * (2 * (2 * c) + 4 * lin(c, c) + lin(c, ch) + lin(ch, c));
      if (s + 1 < n_stages) total += lin(8 * c, 2 * c);
    }
    return total;
  }
};

// ---- parameter storage ----

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;      // filled after a training step
  Tensor<T> momentum;  // SGD state
};

template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    require(by_name_.find(name) == by_name_.end(), "ConfigError", "duplicate parameter " + name);
    params_.push_back(std::make_unique<Parameter<T>>());
    Parameter<T>& p = *params_.back();
    p.name = name;
    p.value = std::move(init);
    by_name_[name] = &p;
    return p;
  }

  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  Parameter<T>& get(const std::string& name) {
    auto it = by_name_.find(name);
    require(it != by_name_.end(), "KeyMismatch", "unknown parameter " + name);
    return *it->second;
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = by_name_.find(name);
    require(it != by_name_.end(), "KeyMismatch", "unknown parameter " + name);
    return *it->second;
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> v;
    for (auto& p : params_) v.push_back(p.get());
    return v;
  }
  std::vector<const Parameter<T>*> all() const {
    std::vector<const Parameter<T>*> v;
    for (auto& p : params_) v.push_back(p.get());
    return v;
  }

  std::vector<Parameter<T>*> with_prefix(const std::string& prefix) {
    std::vector<Parameter<T>*> v;
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) v.push_back(p.get());
    return v;
  }

  int64_t count_values(const std::string& prefix = "") const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) n += p->value.numel();
    return n;
  }

  size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, Parameter<T>*> by_name_;
};

// Per-tape binding of parameters to leaf nodes; grads are read back through it.
template <typename T>
class TapeBind {
 public:
  explicit TapeBind(Tape<T>& tape) : tape_(&tape) {}

  typename Tape<T>::Var use(Parameter<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    auto var = tape_->leaf(p.value);
    bound_.emplace(&p, var);
    return var;
  }

  // Copy accumulated gradients back into the parameters (zeros if untouched).
  void pull_grads() {
    for (auto& [p, var] : bound_) p->grad = tape_->grad_or_zero(var);
  }

  Tape<T>& tape() { return *tape_; }

 private:
  Tape<T>* tape_;
  std::map<Parameter<T>*, typename Tape<T>::Var> bound_;
};

// ---- initialization ----

// std <= 0 selects fan-in scaling (1/sqrt(ci)), which keeps activations O(1)
// through the small dims used here.
template <typename T>
void init_linear(ParamStore<T>& store, const std::string& prefix, int64_t ci, int64_t co, Rng& rng,
                 double std = 0.0) {
  if (std <= 0.0) std = 1.0 / std::sqrt(static_cast<double>(ci));
  Tensor<T> w({ci, co});
  for (auto& v : w.data) v = static_cast<T>(gaussian(rng, 0.0, std));
  store.add(prefix + ".weight", std::move(w));
  store.add(prefix + ".bias", Tensor<T>({co}));
}

template <typename T>
void init_layernorm(ParamStore<T>& store, const std::string& prefix, int64_t c) {
  store.add(prefix + ".gamma", Tensor<T>::full({c}, T(1)));
  store.add(prefix + ".beta", Tensor<T>({c}));
}

// ---- encoder ----

template <typename T>
struct StageOutput {
  typename Tape<T>::Var tokens;  // [N, C]
  Shape3 grid;
  int dim;
};

template <typename T>
class Encoder {
 public:
  using Var = typename Tape<T>::Var;

  explicit Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_maps();
  }

  const EncoderConfig& config() const { return cfg_; }

  // Parameter creation order is fixed; replaying it with the same seed
  // reproduces initialization exactly.
  void init_params(ParamStore<T>& store, const std::string& prefix, Rng& rng) const {
    const Shape3 g = cfg_.token_grid();
    init_linear(store, prefix + "patch_embed",
                static_cast<int64_t>(cfg_.in_channels) * prod3(cfg_.patch_size), cfg_.embed_dim, rng);
    Tensor<T> pos({prod3(g), cfg_.embed_dim});
    for (auto& v : pos.data) v = static_cast<T>(gaussian(rng, 0.0, cfg_.pos_emb_std));
    store.add(prefix + "pos_embed", std::move(pos));
    for (int s = 0; s < cfg_.n_stages; ++s) {
      const int c = cfg_.stage_dim(s), ch = cfg_.mlp_hidden(s);
      for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
        std::string bp = prefix + "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
        init_layernorm(store, bp + "ln1", c);
        init_linear(store, bp + "attn.wq", c, c, rng);
        init_linear(store, bp + "attn.wk", c, c, rng);
        init_linear(store, bp + "attn.wv", c, c, rng);
        init_linear(store, bp + "attn.proj", c, c, rng);
        init_layernorm(store, bp + "ln2", c);
        init_linear(store, bp + "mlp.fc1", c, ch, rng);
        init_linear(store, bp + "mlp.fc2", ch, c, rng);
      }
      if (s + 1 < cfg_.n_stages)
        init_linear(store, prefix + "merge" + std::to_string(s), 8 * c, 2 * c, rng);
    }
  }

  // Per-volume z-score, applied ahead of the patch partition when configured.
  TensorD preprocess(const TensorD& volume) const {
    if (!cfg_.center_input) return volume;
    double mean = 0;
    for (double v : volume.data) mean += v;
    mean /= static_cast<double>(volume.numel());
    double var = 0;
    for (double v : volume.data) var += (v - mean) * (v - mean);
    double inv = 1.0 / std::max(std::sqrt(var / static_cast<double>(volume.numel())), 1e-6);
    TensorD out = volume;
    for (auto& v : out.data) v = (v - mean) * inv;
    return out;
  }

  // Forward over the tape; returns one entry per stage (post-blocks,
  // pre-merge). Input volume enters as a constant.
  std::vector<StageOutput<T>> forward(TapeBind<T>& bind, ParamStore<T>& store,
                                      const std::string& prefix, const TensorD& volume_raw) const {
    Tape<T>& tape = bind.tape();
    require(volume_raw.rank() == 4 && volume_raw.dim(0) == cfg_.in_channels &&
                volume_raw.dim(1) == cfg_.input_shape[0] &&
                volume_raw.dim(2) == cfg_.input_shape[1] &&
                volume_raw.dim(3) == cfg_.input_shape[2],
            "ShapeMismatch", "encoder input volume has wrong shape");
    TensorD volume = preprocess(volume_raw);
    Var vol = tape.constant(volume.template cast<T>());
    Var x = tape.gather(vol, patch_map_,
                        {prod3(cfg_.token_grid()),
                         static_cast<int64_t>(cfg_.in_channels) * prod3(cfg_.patch_size)});
    x = tape.linear(x, bind.use(store.get(prefix + "patch_embed.weight")),
                    bind.use(store.get(prefix + "patch_embed.bias")));
    x = tape.add(x, bind.use(store.get(prefix + "pos_embed")));
    std::vector<StageOutput<T>> outs;
    for (int s = 0; s < cfg_.n_stages; ++s) {
      for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
        std::string bp = prefix + "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
        x = block_forward(bind, store, bp, x, stage_geom_[static_cast<size_t>(s)],
                          cfg_.shifted_windows && (b % 2 == 1));
        if (cfg_.check_finite)
          require(tape.val(x).all_finite(), "NonFiniteActivation",
                  "non-finite activation after " + bp.substr(0, bp.size() - 1));
      }
      outs.push_back(StageOutput<T>{x, cfg_.stage_grid(s), cfg_.stage_dim(s)});
      if (s + 1 < cfg_.n_stages) {
        const int c = cfg_.stage_dim(s);
        x = tape.gather(x, merge_maps_[static_cast<size_t>(s)],
                        {prod3(cfg_.stage_grid(s)) / 8, static_cast<int64_t>(8) * c});
        x = tape.linear(x, bind.use(store.get(prefix + "merge" + std::to_string(s) + ".weight")),
                        bind.use(store.get(prefix + "merge" + std::to_string(s) + ".bias")));
      }
    }
    return outs;
  }

  // Plain-value encode (no gradients): final-stage token grid as (N, C).
  Tensor<T> encode_values(ParamStore<T>& store, const std::string& prefix,
                          const TensorD& volume) const {
    Tape<T> tape;
    TapeBind<T> bind(tape);
    auto outs = forward(bind, store, prefix, volume);
    return tape.val(outs.back().tokens);
  }

  // Patch partition alone: linear projection of each voxel block plus the
  // positional embedding, as (N, E).
  Tensor<T> partition_values(ParamStore<T>& store, const std::string& prefix,
                             const TensorD& volume_raw) const {
    Tape<T> tape;
    TapeBind<T> bind(tape);
    TensorD volume = preprocess(volume_raw);
    Var vol = tape.constant(volume.template cast<T>());
    Var x = tape.gather(vol, patch_map_,
                        {prod3(cfg_.token_grid()),
                         static_cast<int64_t>(cfg_.in_channels) * prod3(cfg_.patch_size)});
    x = tape.linear(x, bind.use(store.get(prefix + "patch_embed.weight")),
                    bind.use(store.get(prefix + "patch_embed.bias")));
    x = tape.add(x, bind.use(store.get(prefix + "pos_embed")));
    return tape.val(x);
  }

  // (N, C) -> (N/8, 8C) gather: children of each 2x2x2 group concatenated
  // z-major. Exposed so tests can check the merge against an independent oracle.
  static std::vector<int64_t> merge_gather_map(const Shape3& grid, int dim) {
    return build_merge_map_static(grid, dim);
  }

 private:
  struct StageGeom {
    Shape3 grid, window, shift;
    int64_t n_windows = 0, window_volume = 0;
    typename Tape<T>::IndexMap part_plain, part_shift;      // [N,C] -> [nW*H, n_w, d_h]
    typename Tape<T>::IndexMap unpart_plain, unpart_shift;  // inverse
    std::shared_ptr<Tensor<T>> attn_mask;                   // [nW*H, n_w, n_w], shifted blocks
  };

  EncoderConfig cfg_;
  typename Tape<T>::IndexMap patch_map_;
  std::vector<typename Tape<T>::IndexMap> merge_maps_;
  std::vector<StageGeom> stage_geom_;

  Var block_forward(TapeBind<T>& bind, ParamStore<T>& store, const std::string& bp, Var x,
                    const StageGeom& geom, bool want_shift) const {
    Tape<T>& tape = bind.tape();
    const bool shifted = want_shift && (geom.shift[0] > 0 || geom.shift[1] > 0 || geom.shift[2] > 0);
    const int64_t dh = tape.val(x).dim(1) / cfg_.n_heads;
    const std::vector<int64_t> wshape{geom.n_windows * cfg_.n_heads, geom.window_volume, dh};
    Var h = tape.layernorm(x, bind.use(store.get(bp + "ln1.gamma")),
                           bind.use(store.get(bp + "ln1.beta")));
    Var q = tape.linear(h, bind.use(store.get(bp + "attn.wq.weight")),
                        bind.use(store.get(bp + "attn.wq.bias")));
    Var k = tape.linear(h, bind.use(store.get(bp + "attn.wk.weight")),
                        bind.use(store.get(bp + "attn.wk.bias")));
    Var v = tape.linear(h, bind.use(store.get(bp + "attn.wv.weight")),
                        bind.use(store.get(bp + "attn.wv.bias")));
    const auto& part = shifted ? geom.part_shift : geom.part_plain;
    Var qw = tape.gather(q, part, wshape);
    Var kw = tape.gather(k, part, wshape);
    Var vw = tape.gather(v, part, wshape);
    Var logits = tape.scale(tape.bmm_nt(qw, kw), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (shifted) logits = tape.add_const(logits, *geom.attn_mask);
    Var att = tape.softmax_lastdim(logits);
    Var ctx = tape.bmm(att, vw);
    Var merged = tape.gather(ctx, shifted ? geom.unpart_shift : geom.unpart_plain,
                             tape.val(x).shape);
    Var proj = tape.linear(merged, bind.use(store.get(bp + "attn.proj.weight")),
                           bind.use(store.get(bp + "attn.proj.bias")));
    x = tape.add(x, proj);
    Var h2 = tape.layernorm(x, bind.use(store.get(bp + "ln2.gamma")),
                            bind.use(store.get(bp + "ln2.beta")));
    Var m = tape.linear(h2, bind.use(store.get(bp + "mlp.fc1.weight")),
                        bind.use(store.get(bp + "mlp.fc1.bias")));
    m = tape.gelu(m);
    m = tape.linear(m, bind.use(store.get(bp + "mlp.fc2.weight")),
                    bind.use(store.get(bp + "mlp.fc2.bias")));
    return tape.add(x, m);
  }

  void build_maps() {
    patch_map_ = std::make_shared<const std::vector<int64_t>>(build_patch_map());
    for (int s = 0; s < cfg_.n_stages; ++s) {
      stage_geom_.push_back(build_stage_geom(s));
      if (s + 1 < cfg_.n_stages)
        merge_maps_.push_back(std::make_shared<const std::vector<int64_t>>(
            build_merge_map_static(cfg_.stage_grid(s), cfg_.stage_dim(s))));
    }
  }

  std::vector<int64_t> build_patch_map() const {
    const Shape3 g = cfg_.token_grid();
    const Shape3& p = cfg_.patch_size;
    const Shape3& in = cfg_.input_shape;
    const int64_t pv = prod3(p);
    const int64_t cols = static_cast<int64_t>(cfg_.in_channels) * pv;
    std::vector<int64_t> map(static_cast<size_t>(prod3(g) * cols));
    int64_t row = 0;
    for (int i = 0; i < g[0]; ++i)
      for (int j = 0; j < g[1]; ++j)
        for (int k = 0; k < g[2]; ++k, ++row)
          for (int c = 0; c < cfg_.in_channels; ++c)
            for (int a = 0; a < p[0]; ++a)
              for (int b = 0; b < p[1]; ++b)
                for (int d = 0; d < p[2]; ++d) {
                  int64_t col = c * pv + (static_cast<int64_t>(a) * p[1] + b) * p[2] + d;
                  int64_t src =
                      ((static_cast<int64_t>(c) * in[0] + i * p[0] + a) * in[1] + j * p[1] + b) *
                          in[2] +
                      k * p[2] + d;
                  map[static_cast<size_t>(row * cols + col)] = src;
                }
    return map;
  }

  // children gathered z-major: child index (a*2+b)*2+c for offsets (a,b,c)
  static std::vector<int64_t> build_merge_map_static(const Shape3& g, int c) {
    const Shape3 h{g[0] / 2, g[1] / 2, g[2] / 2};
    std::vector<int64_t> map(static_cast<size_t>(prod3(h) * 8 * c));
    int64_t row = 0;
    for (int i = 0; i < h[0]; ++i)
      for (int j = 0; j < h[1]; ++j)
        for (int k = 0; k < h[2]; ++k, ++row)
          for (int child = 0; child < 8; ++child) {
            int a = child >> 2, b = (child >> 1) & 1, d = child & 1;
            int64_t src_row =
                (static_cast<int64_t>(2 * i + a) * g[1] + 2 * j + b) * g[2] + 2 * k + d;
            for (int ch = 0; ch < c; ++ch)
              map[static_cast<size_t>(row * 8 * c + child * c + ch)] = src_row * c + ch;
          }
    return map;
  }

  StageGeom build_stage_geom(int s) const {
    StageGeom geom;
    geom.grid = cfg_.stage_grid(s);
    geom.window = cfg_.stage_window(s);
    for (int k = 0; k < 3; ++k)
      geom.shift[static_cast<size_t>(k)] =
          (cfg_.shifted_windows && geom.grid[static_cast<size_t>(k)] > geom.window[static_cast<size_t>(k)])
              ? geom.window[static_cast<size_t>(k)] / 2
              : 0;
    geom.window_volume = prod3(geom.window);
    geom.n_windows = prod3(geom.grid) / geom.window_volume;
    const int c = cfg_.stage_dim(s);
    geom.part_plain = std::make_shared<const std::vector<int64_t>>(
        build_partition_map(geom, c, {0, 0, 0}));
    geom.unpart_plain = std::make_shared<const std::vector<int64_t>>(
        invert_map(*geom.part_plain));
    geom.part_shift = std::make_shared<const std::vector<int64_t>>(
        build_partition_map(geom, c, geom.shift));
    geom.unpart_shift = std::make_shared<const std::vector<int64_t>>(invert_map(*geom.part_shift));
    geom.attn_mask = std::make_shared<Tensor<T>>(build_attn_mask(geom));
    return geom;
  }

  // [N,C] -> [nW*H, n_w, d_h]; position lookup includes the cyclic roll.
  std::vector<int64_t> build_partition_map(const StageGeom& geom, int c, Shape3 shift) const {
    const Shape3& g = geom.grid;
    const Shape3& w = geom.window;
    const int heads = cfg_.n_heads;
    const int64_t dh = c / heads;
    const Shape3 nw{g[0] / w[0], g[1] / w[1], g[2] / w[2]};
    std::vector<int64_t> map(static_cast<size_t>(geom.n_windows * heads * geom.window_volume * dh));
    int64_t out = 0;
    for (int W0 = 0; W0 < nw[0]; ++W0)
      for (int W1 = 0; W1 < nw[1]; ++W1)
        for (int W2 = 0; W2 < nw[2]; ++W2)
          for (int h = 0; h < heads; ++h)
            for (int a0 = 0; a0 < w[0]; ++a0)
              for (int a1 = 0; a1 < w[1]; ++a1)
                for (int a2 = 0; a2 < w[2]; ++a2) {
                  // rolled-frame position, then source position under the roll
                  int r0 = W0 * w[0] + a0, r1 = W1 * w[1] + a1, r2 = W2 * w[2] + a2;
                  int s0 = (r0 + shift[0]) % g[0];
                  int s1 = (r1 + shift[1]) % g[1];
                  int s2 = (r2 + shift[2]) % g[2];
                  int64_t src_row = (static_cast<int64_t>(s0) * g[1] + s1) * g[2] + s2;
                  for (int64_t d = 0; d < dh; ++d, ++out)
                    map[static_cast<size_t>(out)] = src_row * c + h * dh + d;
                }
    return map;
  }

  static std::vector<int64_t> invert_map(const std::vector<int64_t>& map) {
    std::vector<int64_t> inv(map.size(), -1);
    for (size_t i = 0; i < map.size(); ++i) inv[static_cast<size_t>(map[i])] = static_cast<int64_t>(i);
    return inv;
  }

  // Region ids in the rolled frame: per axis [0,g-w) -> 0, [g-w,g-s) -> 1,
  // [g-s,g) -> 2; cells with different ids never attend across the seam.
  Tensor<T> build_attn_mask(const StageGeom& geom) const {
    const Shape3& g = geom.grid;
    const Shape3& w = geom.window;
    const Shape3& sh = geom.shift;
    auto region = [&](int pos, int k) {
      if (sh[static_cast<size_t>(k)] == 0) return 0;
      int n = g[static_cast<size_t>(k)], ws = w[static_cast<size_t>(k)], s = sh[static_cast<size_t>(k)];
      if (pos < n - ws) return 0;
      if (pos < n - s) return 1;
      return 2;
    };
    const Shape3 nw{g[0] / w[0], g[1] / w[1], g[2] / w[2]};
    const int64_t nwv = geom.window_volume;
    Tensor<T> mask({geom.n_windows * cfg_.n_heads, nwv, nwv});
    std::vector<int> ids(static_cast<size_t>(nwv));
    int64_t win = 0;
    for (int W0 = 0; W0 < nw[0]; ++W0)
      for (int W1 = 0; W1 < nw[1]; ++W1)
        for (int W2 = 0; W2 < nw[2]; ++W2, ++win) {
          int64_t p = 0;
          for (int a0 = 0; a0 < w[0]; ++a0)
            for (int a1 = 0; a1 < w[1]; ++a1)
              for (int a2 = 0; a2 < w[2]; ++a2, ++p)
                ids[static_cast<size_t>(p)] = (region(W0 * w[0] + a0, 0) * 3 + region(W1 * w[1] + a1, 1)) * 3 +
                                              region(W2 * w[2] + a2, 2);
          for (int h = 0; h < cfg_.n_heads; ++h) {
            int64_t base = win * cfg_.n_heads + h;
            for (int64_t i = 0; i < nwv; ++i)
              for (int64_t j = 0; j < nwv; ++j)
                mask.data[static_cast<size_t>((base * nwv + i) * nwv + j)] =
                    ids[static_cast<size_t>(i)] == ids[static_cast<size_t>(j)] ? T(0) : T(-1e9);
          }
        }
    return mask;
  }
};

// target <- m * target + (1 - m) * online, matched by canonical name over the
// target's parameters (the online store may hold extra heads).
template <typename T>
void ema_update(ParamStore<T>& target, const ParamStore<T>& online, double momentum) {
  for (auto* t : target.all()) {
    require(online.has(t->name), "KeyMismatch", "EMA source lacks parameter " + t->name);
    const Parameter<T>& s = online.get(t->name);
    require(t->value.shape == s.value.shape, "KeyMismatch",
            "EMA parameter shape mismatch for " + t->name);
    for (int64_t j = 0; j < t->value.numel(); ++j)
      t->value[j] = static_cast<T>(momentum * t->value[j] + (1.0 - momentum) * s.value[j]);
  }
}

}  // namespace trot
