// Acceptance suite: runs the project's verification criteria end to end and
// prints one pass/fail line per criterion. Select a subset with
// --criteria 1,2,...; default runs all.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "trot/training.hpp"

using namespace trot;
namespace fs = std::filesystem;

namespace {

struct Check {
  int failures = 0;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      ++failures;
      detail << "    FAILED: " << what << "\n";
    }
  }
  void note(const std::string& what) { detail << "    " << what << "\n"; }
};

fs::path scratch_root() {
  static fs::path root = [] {
    auto p = fs::temp_directory_path() / ("trot_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

TensorD random_grid4(int c, const Shape3& s, Rng& rng) {
  TensorD t({c, s[0], s[1], s[2]});
  for (auto& v : t.data) v = uniform(rng, -1.0, 1.0);
  return t;
}

// ---- criterion 1: group exactness ----

bool criterion1(Check& ck) {
  auto start = std::chrono::steady_clock::now();
  const auto& all = all_transforms();
  ck.expect(all.size() == 48, "group has 48 elements");
  std::set<std::array<int, 6>> table;
  for (const auto& t : all) table.insert(t.serialize());
  ck.expect(table.size() == 48, "elements are distinct");
  for (const auto& a : all) {
    ck.expect(table.count(inverse(a).serialize()) == 1, "inverse stays in the group");
    ck.expect(compose(a, inverse(a)) == identity_transform(), "a * a^-1 = e");
    ck.expect(compose(inverse(a), a) == identity_transform(), "a^-1 * a = e");
    for (const auto& b : all)
      ck.expect(table.count(compose(a, b).serialize()) == 1, "closure under compose");
  }
  Rng rng(1);
  const std::vector<Shape3> shape_classes{{4, 4, 4}, {2, 4, 4}, {2, 3, 4}};
  for (const auto& shape : shape_classes) {
    for (int rep = 0; rep < 100; ++rep) {
      TensorD g = random_grid4(3, shape, rng);
      for (const auto& t : all) {
        if (!t.shape_invariant(shape)) continue;
        TensorD rt = restore_token_grid(apply_to_grid(g, t), t);
        if (!(rt.data == g.data)) {
          ck.expect(false, "restore(apply(g,t),t) == g bit-exactly");
          return ck.failures == 0;
        }
      }
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ck.note("runtime " + std::to_string(secs) + " s");
  ck.expect(secs < 10.0, "runtime < 10 s");
  return ck.failures == 0;
}

// ---- criterion 2: partition/transform commutation ----

// Mean pooling with value-sorted within-block summation: the mean is
// mathematically invariant to voxel reordering, and the canonical summation
// order makes both sides of the commutation identity bit-identical.
TensorD mean_pool_sorted(const TensorD& v, const Shape3& p) {
  Shape3 g{static_cast<int>(v.dim(1)) / p[0], static_cast<int>(v.dim(2)) / p[1],
           static_cast<int>(v.dim(3)) / p[2]};
  TensorD out({v.dim(0), g[0], g[1], g[2]});
  std::vector<double> block;
  for (int64_t c = 0; c < v.dim(0); ++c)
    for (int i = 0; i < g[0]; ++i)
      for (int j = 0; j < g[1]; ++j)
        for (int k = 0; k < g[2]; ++k) {
          block.clear();
          for (int a = 0; a < p[0]; ++a)
            for (int b = 0; b < p[1]; ++b)
              for (int d = 0; d < p[2]; ++d)
                block.push_back(v.at4(c, i * p[0] + a, j * p[1] + b, k * p[2] + d));
          std::sort(block.begin(), block.end());
          double acc = 0;
          for (double x : block) acc += x;
          out.at4(c, i, j, k) = acc / static_cast<double>(block.size());
        }
  return out;
}

bool criterion2(Check& ck) {
  auto start = std::chrono::steady_clock::now();
  Rng rng(2);
  const Shape3 shape{8, 8, 8};
  const Shape3 patch{2, 2, 2};
  const Shape3 grid{4, 4, 4};
  auto valid = valid_transforms(grid, {patch});
  for (int rep = 0; rep < 100; ++rep) {
    TensorD v = random_grid4(1, shape, rng);
    TensorD pooled = mean_pool_sorted(v, patch);
    for (const auto& t : valid) {
      TensorD lhs = mean_pool_sorted(apply_to_grid(v, t), patch);
      TensorD rhs = apply_to_grid(pooled, t);
      if (!(lhs.data == rhs.data)) {
        ck.expect(false, "P(apply(v,t)) == apply(P(v),t) exactly");
        return false;
      }
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ck.note("runtime " + std::to_string(secs) + " s");
  ck.expect(secs < 10.0, "runtime < 10 s");
  return ck.failures == 0;
}

// ---- criterion 3: loss oracles ----

double contrastive_oracle(const TensorD& za, const TensorD& zb, int B, int M, double tau, double w,
                          bool symmetrize) {
  const int64_t half = static_cast<int64_t>(B) * M;
  const int64_t n = 2 * half;
  const int64_t P = za.dim(1);
  std::vector<std::vector<double>> z(static_cast<size_t>(n),
                                     std::vector<double>(static_cast<size_t>(P)));
  for (int64_t r = 0; r < half; ++r)
    for (int64_t c = 0; c < P; ++c) {
      z[static_cast<size_t>(r)][static_cast<size_t>(c)] = za.at2(r, c);
      z[static_cast<size_t>(r + half)][static_cast<size_t>(c)] = zb.at2(r, c);
    }
  for (auto& row : z) {
    double s = 0;
    for (double v : row) s += v * v;
    double inv = 1.0 / std::sqrt(s + 1e-12);
    for (double& v : row) v *= inv;
  }
  auto sim = [&](int64_t a, int64_t b) {
    double s = 0;
    for (int64_t c = 0; c < P; ++c)
      s += z[static_cast<size_t>(a)][static_cast<size_t>(c)] *
           z[static_cast<size_t>(b)][static_cast<size_t>(c)];
    return s;
  };
  const int64_t anchors = symmetrize ? n : half;
  double total = 0;
  for (int64_t a = 0; a < anchors; ++a) {
    int64_t pos = a < half ? a + half : a - half;
    int64_t ra = a % half, va = ra / M, ma = ra % M;
    double denom = 0;
    for (int64_t b = 0; b < n; ++b) {
      if (b == a) continue;
      int64_t rb = b % half, vb = rb / M, mb = rb % M;
      denom += ((mb == ma && vb != va) ? w : 1.0) * std::exp(sim(a, b) / tau);
    }
    total += -std::log(std::exp(sim(a, pos) / tau) / denom);
  }
  return total / static_cast<double>(anchors);
}

bool criterion3(Check& ck) {
  auto start = std::chrono::steady_clock::now();
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    int B = uniform_int(rng, 1, 4);
    int M = uniform_int(rng, 1, 64);
    if (B * M < 2) M = 2;
    int P = uniform_int(rng, 4, 16);
    TensorD za({static_cast<int64_t>(B) * M, P}), zb(za.shape);
    for (auto& v : za.data) v = uniform(rng, -1.0, 1.0);
    for (auto& v : zb.data) v = uniform(rng, -1.0, 1.0);
    bool sym = rep % 2 == 0;
    double w = rep % 3 == 0 ? 1.0 : std::exp(uniform(rng, std::log(0.1), std::log(10.0)));

    double got1, got3, got3w1;
    {
      TapeD tape;
      got1 = tape.val(
          token_contrastive_loss(tape, tape.constant(za), tape.constant(zb), B, M, 0.5, sym))[0];
    }
    {
      TapeD tape;
      got3 = tape.val(weighted_token_contrastive_loss(tape, tape.constant(za), tape.constant(zb),
                                                      B, M, 0.5, w, sym))[0];
    }
    {
      TapeD tape;
      got3w1 = tape.val(weighted_token_contrastive_loss(tape, tape.constant(za), tape.constant(zb),
                                                        B, M, 0.5, 1.0, sym))[0];
    }
    double want1 = contrastive_oracle(za, zb, B, M, 0.5, 1.0, sym);
    double want3 = contrastive_oracle(za, zb, B, M, 0.5, w, sym);
    ck.expect(std::abs(got1 - want1) / std::max(std::abs(want1), 1e-12) < 1e-6,
              "token NT-Xent vs brute force within 1e-6 relative");
    ck.expect(std::abs(got3 - want3) / std::max(std::abs(want3), 1e-12) < 1e-6,
              "weighted token loss vs brute force within 1e-6 relative");
    ck.expect(std::abs(got3w1 - got1) / std::max(std::abs(got1), 1e-12) < 1e-6,
              "weighted loss at w=1 equals the unweighted loss within 1e-6 relative");
    if (ck.failures) return false;
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ck.note("runtime " + std::to_string(secs) + " s");
  ck.expect(secs < 60.0, "runtime < 60 s");
  return ck.failures == 0;
}

// ---- criterion 4: gradient checks ----

bool criterion4(Check& ck) {
  auto start = std::chrono::steady_clock::now();
  Rng rng(4);
  const double h = 1e-5, tol = 1e-4;
  auto rel_ok = [&](double fd, double an) {
    return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < tol;
  };

  // contrastive losses on token inputs
  for (double w : {1.0, 5.0}) {
    const int B = 2, M = 8, P = 8;
    TensorD za({B * M, P}), zb({B * M, P});
    for (auto& v : za.data) v = uniform(rng, -1.0, 1.0);
    for (auto& v : zb.data) v = uniform(rng, -1.0, 1.0);
    TapeD tape;
    auto a = tape.leaf(za);
    auto b = tape.leaf(zb);
    tape.backward(weighted_token_contrastive_loss(tape, a, b, B, M, 0.5, w, true));
    TensorD ga = tape.grad(a), gb = tape.grad(b);
    auto eval = [&](const TensorD& xa, const TensorD& xb) {
      TapeD t2;
      return t2.val(weighted_token_contrastive_loss(t2, t2.constant(xa), t2.constant(xb), B, M,
                                                    0.5, w, true))[0];
    };
    int checked = 0;
    while (checked < 50) {
      int64_t j = uniform_int(rng, 0, static_cast<int>(za.numel()) - 1);
      bool side = checked % 2 == 0;
      TensorD xp = side ? za : zb, xm = xp;
      xp[j] += h;
      xm[j] -= h;
      double fd = side ? (eval(xp, zb) - eval(xm, zb)) / (2 * h)
                       : (eval(za, xp) - eval(za, xm)) / (2 * h);
      double an = side ? ga[j] : gb[j];
      ck.expect(rel_ok(fd, an), "contrastive gradient (w=" + std::to_string(w) + ") element");
      ++checked;
    }
    if (ck.failures) return false;
  }

  // BYOL-style loss on prediction inputs
  {
    const int N = 32, P = 8;
    TensorD p({N, P}), t({N, P});
    for (auto& v : p.data) v = uniform(rng, -1.0, 1.0);
    for (auto& v : t.data) v = uniform(rng, -1.0, 1.0);
    TapeD tape;
    auto pv = tape.leaf(p);
    tape.backward(byol_pair_loss(tape, pv, tape.constant(t)));
    TensorD gp = tape.grad(pv);
    auto eval = [&](const TensorD& x) {
      TapeD t2;
      return t2.val(byol_pair_loss(t2, t2.constant(x), t2.constant(t)))[0];
    };
    for (int checked = 0; checked < 50; ++checked) {
      int64_t j = uniform_int(rng, 0, static_cast<int>(p.numel()) - 1);
      TensorD xp = p, xm = p;
      xp[j] += h;
      xm[j] -= h;
      double fd = (eval(xp) - eval(xm)) / (2 * h);
      ck.expect(rel_ok(fd, gp[j]), "byol gradient element");
    }
    if (ck.failures) return false;
  }

  // end-to-end: encode + restore + projection + weighted contrastive loss
  {
    EncoderConfig cfg;
    cfg.input_shape = {8, 8, 8};
    cfg.patch_size = {2, 2, 2};
    cfg.n_stages = 2;
    cfg.blocks_per_stage = 1;
    cfg.embed_dim = 4;
    cfg.window = {2, 2, 2};
    cfg.n_heads = 2;
    Encoder<double> enc(cfg);
    ParamStore<double> store;
    Rng init(5);
    enc.init_params(store, "enc.", init);
    init_mlp_head(store, "proj", cfg.out_dim(), 8, init);
    Rng vr(6);
    TensorD va = random_grid4(1, {8, 8, 8}, vr);
    TensorD vb = random_grid4(1, {8, 8, 8}, vr);
    for (auto& x : va.data) x = std::abs(x);
    for (auto& x : vb.data) x = std::abs(x);
    const SpatialTransform t = all_transforms()[17];
    auto restore = std::make_shared<const std::vector<int64_t>>(
        token_restore_map(t, cfg.out_grid(), cfg.out_dim()));
    const int64_t M = prod3(cfg.out_grid());
    auto build = [&](TapeBind<double>& bind) {
      Tape<double>& tape = bind.tape();
      auto rot = enc.forward(bind, store, "enc.", apply_to_grid(va, t)).back().tokens;
      auto zr = mlp_head_forward(bind, store, "proj",
                                 tape.gather(rot, restore, {M, cfg.out_dim()}));
      auto zm = mlp_head_forward(bind, store, "proj",
                                 enc.forward(bind, store, "enc.", vb).back().tokens);
      return weighted_token_contrastive_loss(tape, zr, zm, 1, static_cast<int>(M), 0.5, 5.0, true);
    };
    Tape<double> tape;
    TapeBind<double> bind(tape);
    tape.backward(build(bind));
    bind.pull_grads();
    auto eval = [&]() {
      Tape<double> t2;
      TapeBind<double> b2(t2);
      return t2.val(build(b2))[0];
    };
    auto params = store.all();
    for (int checked = 0; checked < 50; ++checked) {
      auto* p = params[static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(params.size()) - 1))];
      int64_t j = uniform_int(rng, 0, static_cast<int>(p->value.numel()) - 1);
      double orig = p->value[j];
      p->value[j] = orig + h;
      double fp = eval();
      p->value[j] = orig - h;
      double fm = eval();
      p->value[j] = orig;
      double fd = (fp - fm) / (2 * h);
      double an = p->grad.data.empty() ? 0.0 : p->grad[j];
      ck.expect(rel_ok(fd, an), "end-to-end gradient for " + p->name);
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ck.note("runtime " + std::to_string(secs) + " s");
  ck.expect(secs < 300.0, "runtime < 5 min");
  return ck.failures == 0;
}

// ---- criterion 5: BYOL stop-gradient and EMA closed form ----

bool criterion5(Check& ck) {
  fs::path dir = scratch_root() / "c5";
  fs::create_directories(dir);
  DatasetSpec spec;
  spec.n_volumes = 4;
  spec.shape = {8, 8, 8};
  spec.n_classes = 2;
  spec.seed = 50;
  save_dataset(generate_dataset(spec), spec, (dir / "data").string());
  RunConfig cfg;
  cfg.mode = "pretrain";
  cfg.framework = "btrot";
  cfg.data_path = (dir / "data").string();
  cfg.data_split = {1.0, 0.0, 0.0};
  cfg.seed = 51;
  cfg.enc.input_shape = {8, 8, 8};
  cfg.enc.patch_size = {2, 2, 2};
  cfg.enc.n_stages = 2;
  cfg.enc.blocks_per_stage = 1;
  cfg.enc.embed_dim = 4;
  cfg.enc.window = {2, 2, 2};
  cfg.enc.n_heads = 2;
  cfg.loss.proj_dim = 8;
  Pretrainer<double> trainer(cfg);
  Tape<double> tape;
  TapeBind<double> bind(tape);
  Rng rng_aug(cfg.seed ^ kAugStream);
  auto loss = trainer.batch_loss(bind, {0, 1}, rng_aug);
  tape.backward(loss);
  bind.pull_grads();
  for (auto* p : trainer.target_params().all()) {
    double mag = 0;
    if (!p->grad.data.empty())
      for (double g : p->grad.data) mag += std::abs(g);
    ck.expect(mag == 0.0, "target gradient identically zero for " + p->name);
  }

  // EMA closed form at k=5, m=0.9 within 1e-9
  ParamStore<double> online, target;
  Rng rng(52);
  TensorD w0({16}), t0({16});
  for (auto& v : w0.data) v = uniform(rng, -1.0, 1.0);
  for (auto& v : t0.data) v = uniform(rng, -1.0, 1.0);
  online.add("enc.w", w0);
  target.add("enc.w", t0);
  const double m = 0.9;
  for (int k = 0; k < 5; ++k) ema_update(target, online, m);
  const double mk = std::pow(m, 5);
  for (int64_t i = 0; i < 16; ++i)
    ck.expect(std::abs(target.get("enc.w").value[i] - (mk * t0[i] + (1 - mk) * w0[i])) < 1e-9,
              "EMA closed form m^k t0 + (1-m^k) w");
  return ck.failures == 0;
}

// ---- criterion 6: collapse direction ----

RunConfig collapse_base_cfg(const std::string& data_path) {
  RunConfig cfg;
  cfg.mode = "pretrain";
  cfg.framework = "simtrot";
  cfg.data_path = data_path;
  cfg.data_split = {1.0, 0.0, 0.0};
  cfg.batch_size = 2;
  cfg.epochs = 38;  // 8 steps per epoch over 16 volumes -> 304 steps
  cfg.eval_cadence = 50;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.nesterov = true;
  cfg.enc.input_shape = {16, 16, 16};
  cfg.enc.patch_size = {2, 2, 2};
  cfg.enc.n_stages = 2;
  cfg.enc.blocks_per_stage = 1;
  cfg.enc.embed_dim = 8;
  cfg.enc.window = {4, 4, 4};
  cfg.enc.n_heads = 2;
  cfg.enc.pos_emb_std = 0.5;   // position signal available from the start
  cfg.enc.center_input = true; // z-scored input keeps token directions diverse
  cfg.loss.proj_dim = 32;
  // gentle views so content matching stays learnable within 300 steps
  cfg.aug.mask_ratio = 0.25;
  cfg.aug.prob_gibbs = 0.0;
  cfg.aug.noise_std = {0.0, 0.05};
  return cfg;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

bool criterion6(Check& ck) {
  auto start = std::chrono::steady_clock::now();
  fs::path dir = scratch_root() / "c6";
  fs::create_directories(dir);
  // volume-specific structure everywhere: dense blobs plus strong background
  // texture, so content features can discriminate volumes at every position
  DatasetSpec spec;
  spec.n_volumes = 16;
  spec.shape = {16, 16, 16};
  spec.n_classes = 2;
  spec.blobs_min = 3;
  spec.blobs_max = 6;
  spec.radius_min_frac = 0.15;
  spec.radius_max_frac = 0.35;
  spec.background_noise = 0.2;
  spec.seed = 60;
  save_dataset(generate_dataset(spec), spec, (dir / "data").string());

  auto final_cosine = [&](RunConfig cfg, const std::string& tag) {
    std::string run_dir = (dir / tag).string();
    Pretrainer<double> trainer(cfg);
    trainer.run(run_dir);
    return load_run_record(run_dir).summary_double("final_cross_volume_cosine");
  };

  std::vector<double> no_rr, with_rr, w5, w0;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    RunConfig a = collapse_base_cfg((dir / "data").string());
    a.seed = seed;
    a.aug.spatial_enabled = false;
    no_rr.push_back(final_cosine(a, "eq1_norr_s" + std::to_string(seed)));

    RunConfig b = collapse_base_cfg((dir / "data").string());
    b.seed = seed;
    b.aug.spatial_enabled = true;
    with_rr.push_back(final_cosine(b, "eq1_rr_s" + std::to_string(seed)));

    RunConfig c = collapse_base_cfg((dir / "data").string());
    c.seed = seed;
    c.framework = "simtrot_w";
    c.loss.w = 5.0;
    c.aug.spatial_enabled = false;
    w5.push_back(final_cosine(c, "eq3_w5_s" + std::to_string(seed)));

    RunConfig d = collapse_base_cfg((dir / "data").string());
    d.seed = seed;
    d.framework = "simtrot_w";
    d.loss.w = 0.0;
    d.aug.spatial_enabled = false;
    w0.push_back(final_cosine(d, "eq3_w0_s" + std::to_string(seed)));
  }
  double m_norr = median3(no_rr), m_rr = median3(with_rr);
  double m_w5 = median3(w5), m_w0 = median3(w0);
  ck.note("median cross-volume cosine: no-R&R " + std::to_string(m_norr) + ", with-R&R " +
          std::to_string(m_rr));
  ck.note("median cross-volume cosine: w=5 " + std::to_string(m_w5) + ", w=0 " +
          std::to_string(m_w0));
  ck.expect(m_norr >= m_rr + 0.2, "no rotate-and-restore collapses >= 0.2 above the R&R run");
  ck.expect(m_w5 <= m_w0, "attention weight 5 keeps cosine at or below the w=0 run");
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ck.note("runtime " + std::to_string(secs) + " s");
  ck.expect(secs < 1800.0, "runtime < 30 min");
  return ck.failures == 0;
}

// ---- criterion 7: limited-label direction ----

RunConfig finetune_base_cfg(const std::string& data_path) {
  RunConfig cfg;
  cfg.mode = "finetune";
  cfg.framework = "simtrot_w";
  cfg.data_path = data_path;
  cfg.data_split = {0.6, 0.1, 0.3};
  cfg.batch_size = 2;
  cfg.epochs = 20;
  cfg.eval_cadence = 1000;  // final evaluation only
  cfg.lr = 0.01;
  cfg.momentum = 0.9;
  cfg.nesterov = true;
  cfg.enc.input_shape = {16, 16, 16};
  cfg.enc.patch_size = {2, 2, 2};
  cfg.enc.n_stages = 2;
  cfg.enc.blocks_per_stage = 1;
  cfg.enc.embed_dim = 8;
  cfg.enc.window = {4, 4, 4};
  cfg.enc.n_heads = 2;
  cfg.enc.pos_emb_std = 0.5;
  cfg.enc.center_input = true;  // matches the pre-training encoder
  cfg.loss.proj_dim = 32;
  return cfg;
}

bool criterion7(Check& ck) {
  auto start = std::chrono::steady_clock::now();
  fs::path dir = scratch_root() / "c7";
  fs::create_directories(dir);
  DatasetSpec spec;
  spec.n_volumes = 20;
  spec.shape = {16, 16, 16};
  spec.n_classes = 3;
  spec.blobs_min = 2;
  spec.blobs_max = 4;
  spec.radius_min_frac = 0.12;
  spec.radius_max_frac = 0.28;
  spec.background_noise = 0.1;
  spec.seed = 70;
  save_dataset(generate_dataset(spec), spec, (dir / "data").string());

  std::map<std::string, std::vector<double>> dice;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    // SimTROT-W pre-training for this seed
    RunConfig pre = collapse_base_cfg((dir / "data").string());
    pre.framework = "simtrot_w";
    pre.data_split = {0.6, 0.1, 0.3};
    pre.seed = seed;
    pre.epochs = 50;  // 6 steps per epoch over 12 train volumes -> 300 steps
    std::string pre_dir = (dir / ("pre_s" + std::to_string(seed))).string();
    Pretrainer<double>(pre).run(pre_dir);
    std::string ckpt = pre_dir + "/ckpt_final.bin";

    for (double fraction : {0.1, 1.0}) {
      for (bool pretrained : {false, true}) {
        RunConfig fin = finetune_base_cfg((dir / "data").string());
        fin.seed = seed;
        fin.labeled_fraction = fraction;
        if (pretrained) fin.finetune_checkpoint = ckpt;
        // keep the optimizer-step budget comparable across fractions
        fin.epochs = fraction < 0.5 ? 60 : 20;
        std::string tag = std::string(pretrained ? "pre" : "scratch") + "_f" +
                          std::to_string(fraction < 0.5 ? 10 : 100) + "_s" + std::to_string(seed);
        std::string run_dir = (dir / tag).string();
        Finetuner<double>(fin).run(run_dir);
        double d = load_run_record(run_dir).summary_double("final_mean_dice");
        dice[std::string(pretrained ? "pre" : "scratch") + (fraction < 0.5 ? "_10" : "_100")]
            .push_back(d);
      }
    }
  }
  double pre10 = median3(dice["pre_10"]), scr10 = median3(dice["scratch_10"]);
  double pre100 = median3(dice["pre_100"]), scr100 = median3(dice["scratch_100"]);
  ck.note("median dice at 10% labels: pretrained " + std::to_string(pre10) + ", scratch " +
          std::to_string(scr10));
  ck.note("median dice at 100% labels: pretrained " + std::to_string(pre100) + ", scratch " +
          std::to_string(scr100));
  ck.expect(pre10 >= scr10 - 0.01, "pretrained non-inferior to scratch at 10% labels");
  ck.expect((pre10 - scr10) >= (pre100 - scr100) - 0.05,
            "pretraining gap at 10% labels >= gap at 100% - 0.05");
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ck.note("runtime " + std::to_string(secs) + " s");
  ck.expect(secs < 7200.0, "runtime < 2 h");
  return ck.failures == 0;
}

// ---- criterion 8: metric oracles ----

bool criterion8(Check& ck) {
  Rng rng(8);
  auto boundary = [&](const TensorI& m, int cls) {
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < m.dim(0); ++z)
      for (int y = 0; y < m.dim(1); ++y)
        for (int x = 0; x < m.dim(2); ++x) {
          if (m.at3(z, y, x) != cls) continue;
          bool edge = false;
          const int dz[] = {1, -1, 0, 0, 0, 0}, dy[] = {0, 0, 1, -1, 0, 0},
                    dx[] = {0, 0, 0, 0, 1, -1};
          for (int n = 0; n < 6; ++n) {
            int zz = z + dz[n], yy = y + dy[n], xx = x + dx[n];
            if (zz < 0 || zz >= m.dim(0) || yy < 0 || yy >= m.dim(1) || xx < 0 ||
                xx >= m.dim(2) || m.at3(zz, yy, xx) != cls)
              edge = true;
          }
          if (edge) out.push_back({z, y, x});
        }
    return out;
  };
  for (int rep = 0; rep < 50; ++rep) {
    TensorI p({8, 8, 8}), t({8, 8, 8});
    for (int b = 0; b < 4; ++b) {
      int cz = uniform_int(rng, 0, 7), cy = uniform_int(rng, 0, 7), cx = uniform_int(rng, 0, 7);
      int r = uniform_int(rng, 1, 2);
      TensorI& dst = b % 2 == 0 ? p : t;
      for (int z = std::max(0, cz - r); z <= std::min(7, cz + r); ++z)
        for (int y = std::max(0, cy - r); y <= std::min(7, cy + r); ++y)
          for (int x = std::max(0, cx - r); x <= std::min(7, cx + r); ++x) dst.at3(z, y, x) = 1;
    }
    int64_t np = 0, nt = 0, ni = 0;
    for (int64_t i = 0; i < p.numel(); ++i) {
      np += p[i] == 1;
      nt += t[i] == 1;
      ni += p[i] == 1 && t[i] == 1;
    }
    double dice_expect =
        (np + nt) == 0 ? 1.0 : 2.0 * static_cast<double>(ni) / static_cast<double>(np + nt);
    ck.expect(dice_score(p, t, 1) == dice_expect, "dice matches the counting oracle exactly");

    auto bp = boundary(p, 1), bt = boundary(t, 1);
    double want;
    if (bp.empty() && bt.empty()) want = 0.0;
    else if (bp.empty() || bt.empty()) want = kHd95Sentinel;
    else {
      std::vector<double> d;
      auto side = [&](const auto& from, const auto& to) {
        for (const auto& a : from) {
          double best = 1e300;
          for (const auto& b : to) {
            double v = 0;
            for (int k = 0; k < 3; ++k) {
              double diff = a[static_cast<size_t>(k)] - b[static_cast<size_t>(k)];
              v += diff * diff;
            }
            best = std::min(best, v);
          }
          d.push_back(std::sqrt(best));
        }
      };
      side(bp, bt);
      side(bt, bp);
      std::sort(d.begin(), d.end());
      double pos = 0.95 * static_cast<double>(d.size() - 1);
      auto lo = static_cast<size_t>(pos);
      size_t hi = std::min(lo + 1, d.size() - 1);
      want = d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
    }
    double got = hd95(p, t, 1);
    if (std::isinf(want)) ck.expect(std::isinf(got), "hd95 sentinel agreement");
    else ck.expect(std::abs(got - want) < 1e-9, "hd95 matches the all-pairs oracle within 1e-9");
  }
  return ck.failures == 0;
}

// ---- criterion 9: determinism ----

bool criterion9(Check& ck) {
  fs::path dir = scratch_root() / "c9";
  fs::create_directories(dir);
  DatasetSpec spec;
  spec.n_volumes = 4;
  spec.shape = {8, 8, 8};
  spec.n_classes = 2;
  spec.seed = 90;
  save_dataset(generate_dataset(spec), spec, (dir / "data").string());
  RunConfig cfg;
  cfg.mode = "pretrain";
  cfg.framework = "simtrot_w";
  cfg.data_path = (dir / "data").string();
  cfg.data_split = {1.0, 0.0, 0.0};
  cfg.seed = 91;
  cfg.epochs = 3;
  cfg.eval_cadence = 2;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.enc.input_shape = {8, 8, 8};
  cfg.enc.patch_size = {2, 2, 2};
  cfg.enc.n_stages = 2;
  cfg.enc.blocks_per_stage = 1;
  cfg.enc.embed_dim = 4;
  cfg.enc.window = {2, 2, 2};
  cfg.enc.n_heads = 2;
  cfg.loss.proj_dim = 8;
  Pretrainer<double>(cfg).run((dir / "a").string());
  Pretrainer<double>(cfg).run((dir / "b").string());
  auto read = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  };
  std::string ra = read(dir / "a" / "records.txt");
  ck.expect(!ra.empty(), "records were written");
  ck.expect(ra == read(dir / "b" / "records.txt"), "records.txt bit-identical across invocations");
  ck.expect(read(dir / "a" / "summary.txt") == read(dir / "b" / "summary.txt"),
            "summary.txt bit-identical across invocations");
  ck.expect(read(dir / "a" / "ckpt_final.bin") == read(dir / "b" / "ckpt_final.bin"),
            "checkpoints bit-identical across invocations");
  return ck.failures == 0;
}

// ---- criterion 10: config guards and defaults ----

bool criterion10(Check& ck) {
  RunConfig cfg;
  ck.expect(cfg.loss.tau == 0.5, "default tau = 0.5");
  ck.expect(cfg.loss.w == 5.0, "default attention weight w = 5");
  ck.expect(cfg.aug.mask_ratio == 0.75, "default mask ratio = 0.75");
  ck.expect(cfg.batch_size == 2, "default batch size = 2");
  bool rejected = false;
  try {
    AugmentationConfig aug;
    aug.mask_ratio = 0.86;
    aug.validate();
  } catch (const Error& e) {
    rejected = std::string(e.code()) == "MaskRatioTooHigh";
  }
  ck.expect(rejected, "mask_ratio > 0.85 rejected with MaskRatioTooHigh");
  bool override_rejected = false;
  try {
    RunConfig c2;
    apply_override(c2, "augment.mask_ratio", "0.9");
    c2.data_path = "x";
    c2.validate();
  } catch (const Error&) {
    override_rejected = true;
  }
  ck.expect(override_rejected, "config validation rejects mask_ratio 0.9");
  return ck.failures == 0;
}

struct Criterion {
  int id;
  std::string name;
  std::function<bool(Check&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--criteria" && i + 1 < argc) {
      std::string list = argv[++i];
      std::string cur;
      for (char c : list + ",") {
        if (c == ',') {
          if (!cur.empty()) selected.insert(std::stoi(cur));
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
    }
  }
  std::vector<Criterion> criteria{
      {1, "group exactness (48 elements, bit-exact round trips)", criterion1},
      {2, "partition/transform commutation (mean pooling, exact)", criterion2},
      {3, "loss oracles (brute force, w=1 reduction identity)", criterion3},
      {4, "gradient checks vs central finite differences", criterion4},
      {5, "BYOL stop-gradient and EMA closed form", criterion5},
      {6, "collapse direction with and without rotate-and-restore", criterion6},
      {7, "limited-label fine-tuning direction", criterion7},
      {8, "metric oracles (dice exact, hd95 within 1e-9)", criterion8},
      {9, "determinism of run records", criterion9},
      {10, "config guards and default hyperparameters", criterion10},
  };
  int failures = 0;
  for (auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Check ck;
    bool ok = false;
    std::string error;
    auto t0 = std::chrono::steady_clock::now();
    try {
      ok = c.run(ck);
    } catch (const std::exception& e) {
      error = e.what();
      ok = false;
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.name << " ("
              << std::fixed << std::setprecision(1) << secs << " s)\n";
    if (!error.empty()) std::cout << "    exception: " << error << "\n";
    std::cout << ck.detail.str();
    std::cout.unsetf(std::ios::fixed);
    if (!ok) ++failures;
  }
  fs::remove_all(scratch_root());
  if (failures) std::cout << failures << " criterion(s) failed\n";
  else std::cout << "all selected criteria passed\n";
  return failures == 0 ? 0 : 1;
}
