#pragma once

#include <chrono>
#include <filesystem>

#include "trot/augmentation.hpp"
#include "trot/checkpoint.hpp"
#include "trot/config.hpp"
#include "trot/decoder.hpp"
#include "trot/metrics.hpp"
#include "trot/objectives.hpp"
#include "trot/record.hpp"
#include "trot/synthetic.hpp"

namespace trot {

// RNG discipline (fixed so a step can be replayed outside the loop):
//   parameter init   Rng(seed)          encoder first, then heads / decoder
//   epoch shuffles   Rng(seed ^ kDataStream), one shuffle per epoch
//   augmentation     Rng(seed ^ kAugStream), consumed per volume in batch order
//                    (crop offsets first when cropping, then the view pair)
//   eval views       Rng(seed ^ kEvalStream), drawn once at startup
inline constexpr uint64_t kDataStream = 0xDA7A;
inline constexpr uint64_t kAugStream = 0xA106;
inline constexpr uint64_t kEvalStream = 0x45564C;

// ---- SGD with optional Nesterov momentum and poly decay ----

template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Parameter<T>*> params, double lr, double momentum, bool nesterov,
               double poly_exponent, int64_t total_steps)
      : params_(std::move(params)),
        lr0_(lr),
        momentum_(momentum),
        nesterov_(nesterov),
        poly_exp_(poly_exponent),
        total_steps_(std::max<int64_t>(1, total_steps)) {
    for (auto* p : params_)
      if (p->momentum.data.empty()) p->momentum = Tensor<T>(p->value.shape);
  }

  double lr_at(int64_t step) const {
    if (poly_exp_ <= 0.0) return lr0_;
    double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps_);
    return lr0_ * std::pow(std::max(frac, 0.0), poly_exp_);
  }

  void step(int64_t step_index) {
    const double lr = lr_at(step_index);
    for (auto* p : params_) {
      if (p->grad.data.empty()) continue;
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        double g = p->grad[i];
        double v = momentum_ * p->momentum[i] + g;
        p->momentum[i] = static_cast<T>(v);
        double d = nesterov_ ? g + momentum_ * v : v;
        p->value[i] -= static_cast<T>(lr * d);
      }
    }
  }

  const std::vector<Parameter<T>*>& params() const { return params_; }
  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (auto* p : params_) names.push_back(p->name);
    return names;
  }

 private:
  std::vector<Parameter<T>*> params_;
  double lr0_, momentum_;
  bool nesterov_;
  double poly_exp_;
  int64_t total_steps_;
};

// ---- shared helpers ----

inline TensorD crop_to_shape(const TensorD& intensities, const Shape3& target, Rng& rng) {
  Shape3 s{static_cast<int>(intensities.dim(1)), static_cast<int>(intensities.dim(2)),
           static_cast<int>(intensities.dim(3))};
  if (s == target) return intensities;
  for (int k = 0; k < 3; ++k)
    require(s[static_cast<size_t>(k)] >= target[static_cast<size_t>(k)], "ShapeMismatch",
            "volume " + shape3_str(s) + " smaller than encoder input " + shape3_str(target));
  Shape3 off{};
  for (int k = 0; k < 3; ++k)
    off[static_cast<size_t>(k)] =
        uniform_int(rng, 0, s[static_cast<size_t>(k)] - target[static_cast<size_t>(k)]);
  TensorD out({intensities.dim(0), target[0], target[1], target[2]});
  for (int64_t c = 0; c < intensities.dim(0); ++c)
    for (int z = 0; z < target[0]; ++z)
      for (int y = 0; y < target[1]; ++y)
        for (int x = 0; x < target[2]; ++x)
          out.at4(c, z, y, x) = intensities.at4(c, z + off[0], y + off[1], x + off[2]);
  return out;
}

// ---- pre-training ----

template <typename T>
class Pretrainer {
 public:
  using Var = typename Tape<T>::Var;

  explicit Pretrainer(const RunConfig& cfg) : cfg_(cfg), encoder_(cfg.enc) {
    cfg_.validate();
    framework_ = framework_from_string(cfg_.framework);
    aug_ = cfg_.resolved_augment();
    auto loaded = load_dataset(cfg_.data_path);
    dataset_ = std::move(loaded.volumes);
    auto split = split_dataset(static_cast<int>(dataset_.size()), cfg_.data_split, cfg_.split_seed);
    train_ids_ = split.train;
    require(!train_ids_.empty(), "ConfigError", "pre-training requires a non-empty train split");
    Rng init(cfg_.seed);
    encoder_.init_params(online_, "enc.", init);
    init_mlp_head(online_, "proj", cfg_.enc.out_dim(), cfg_.loss.proj_dim, init);
    if (framework_ == LossConfig::Framework::BTROT) {
      init_mlp_head(online_, "pred", cfg_.loss.proj_dim, cfg_.loss.proj_dim, init);
      for (auto* p : online_.all())
        if (p->name.rfind("pred", 0) != 0) target_.add(p->name, p->value);
    }
  }

  const EncoderConfig& enc_cfg() const { return cfg_.enc; }
  ParamStore<T>& online_params() { return online_; }
  ParamStore<T>& target_params() { return target_; }
  const std::vector<int>& train_ids() const { return train_ids_; }
  const std::vector<Volume>& dataset() const { return dataset_; }

  std::vector<std::string> optimized_param_names() const {
    std::vector<std::string> names;
    for (const auto* p : online_.all()) names.push_back(p->name);
    return names;
  }

  // One batch forward; the loss node is returned on the caller-visible tape.
  Var batch_loss(TapeBind<T>& bind, const std::vector<int>& ids, Rng& rng_aug) {
    Tape<T>& tape = bind.tape();
    const int B = static_cast<int>(ids.size());
    const Shape3 out_grid = cfg_.enc.out_grid();
    const int out_dim = cfg_.enc.out_dim();
    const int64_t M = prod3(out_grid);
    std::vector<Var> rot_tok, msk_tok, rot_tgt, msk_on;
    for (int b = 0; b < B; ++b) {
      const Volume& vol = dataset_[static_cast<size_t>(ids[static_cast<size_t>(b)])];
      Volume cropped = vol;
      cropped.intensities = crop_to_shape(vol.intensities, cfg_.enc.input_shape, rng_aug);
      cropped.label = TensorI();
      ViewPair vp = make_view_pair(cropped, aug_, cfg_.enc.token_grid(),
                                   cfg_.enc.invariance_patch_sizes(), rng_aug);
      auto restore = std::make_shared<const std::vector<int64_t>>(
          token_restore_map(vp.transform, out_grid, out_dim));
      auto rot_out = encoder_.forward(bind, online_, "enc.", vp.view_rotated.intensities);
      rot_tok.push_back(tape.gather(rot_out.back().tokens, restore, {M, out_dim}));
      if (framework_ == LossConfig::Framework::BTROT) {
        auto tgt_out = encoder_.forward(bind, target_, "enc.", vp.view_masked.intensities);
        msk_tok.push_back(tgt_out.back().tokens);
        if (cfg_.loss.symmetrize) {
          auto tgt_rot = encoder_.forward(bind, target_, "enc.", vp.view_rotated.intensities);
          rot_tgt.push_back(tape.gather(tgt_rot.back().tokens, restore, {M, out_dim}));
          auto on_msk = encoder_.forward(bind, online_, "enc.", vp.view_masked.intensities);
          msk_on.push_back(on_msk.back().tokens);
        }
      } else {
        auto msk_out = encoder_.forward(bind, online_, "enc.", vp.view_masked.intensities);
        msk_tok.push_back(msk_out.back().tokens);
      }
    }
    auto concat_all = [&](std::vector<Var>& vs) {
      Var acc = vs[0];
      for (size_t i = 1; i < vs.size(); ++i) acc = tape.concat_rows(acc, vs[static_cast<size_t>(i)]);
      return acc;
    };
    switch (framework_) {
      case LossConfig::Framework::SimTROT:
      case LossConfig::Framework::SimTROTW: {
        auto zr = mlp_head_forward(bind, online_, "proj", concat_all(rot_tok));
        auto zm = mlp_head_forward(bind, online_, "proj", concat_all(msk_tok));
        double w = framework_ == LossConfig::Framework::SimTROTW ? cfg_.loss.w : 1.0;
        return weighted_token_contrastive_loss(tape, zr, zm, B, static_cast<int>(M), cfg_.loss.tau,
                                               w, cfg_.loss.symmetrize);
      }
      case LossConfig::Framework::GlobalSimCLR: {
        std::vector<Var> pr, pm;
        for (int b = 0; b < B; ++b) {
          pr.push_back(tape.colmean(rot_tok[static_cast<size_t>(b)]));
          pm.push_back(tape.colmean(msk_tok[static_cast<size_t>(b)]));
        }
        auto zr = mlp_head_forward(bind, online_, "proj", concat_all(pr));
        auto zm = mlp_head_forward(bind, online_, "proj", concat_all(pm));
        return global_simclr_loss(tape, zr, zm, B, cfg_.loss.tau, cfg_.loss.symmetrize);
      }
      case LossConfig::Framework::BTROT: {
        auto online_pred = mlp_head_forward(
            bind, online_, "pred", mlp_head_forward(bind, online_, "proj", concat_all(rot_tok)));
        auto target_proj = tape.detach(mlp_head_forward(bind, target_, "proj", concat_all(msk_tok)));
        auto loss = byol_pair_loss(tape, online_pred, target_proj);
        if (cfg_.loss.symmetrize) {
          auto online_pred2 = mlp_head_forward(
              bind, online_, "pred", mlp_head_forward(bind, online_, "proj", concat_all(msk_on)));
          auto target_proj2 =
              tape.detach(mlp_head_forward(bind, target_, "proj", concat_all(rot_tgt)));
          loss = tape.scale(tape.add(loss, byol_pair_loss(tape, online_pred2, target_proj2)), 0.5);
        }
        return loss;
      }
    }
    fail("ConfigError", "unreachable framework");
  }

  // Token matrices for collapse diagnostics on a fixed eval batch.
  std::pair<TensorD, TensorD> eval_tokens(const std::vector<ViewPair>& pairs) {
    const Shape3 out_grid = cfg_.enc.out_grid();
    const int out_dim = cfg_.enc.out_dim();
    const int64_t M = prod3(out_grid);
    const int64_t P = cfg_.loss.proj_dim;
    TensorD z({static_cast<int64_t>(pairs.size()) * M, P});
    TensorD zh(z.shape);
    for (size_t b = 0; b < pairs.size(); ++b) {
      Tape<T> tape;
      TapeBind<T> bind(tape);
      auto restore = std::make_shared<const std::vector<int64_t>>(
          token_restore_map(pairs[b].transform, out_grid, out_dim));
      auto rot = encoder_.forward(bind, online_, "enc.", pairs[b].view_rotated.intensities);
      auto zr = mlp_head_forward(bind, online_, "proj",
                                 tape.gather(rot.back().tokens, restore, {M, out_dim}));
      auto msk = encoder_.forward(bind, online_, "enc.", pairs[b].view_masked.intensities);
      auto zm = mlp_head_forward(bind, online_, "proj", msk.back().tokens);
      const auto& vr = tape.val(zr);
      const auto& vm = tape.val(zm);
      for (int64_t m = 0; m < M; ++m)
        for (int64_t c = 0; c < P; ++c) {
          z.at2(static_cast<int64_t>(b) * M + m, c) = static_cast<double>(vr.at2(m, c));
          zh.at2(static_cast<int64_t>(b) * M + m, c) = static_cast<double>(vm.at2(m, c));
        }
    }
    return {normalize_rows_plain(z), normalize_rows_plain(zh)};
  }

  std::vector<ViewPair> make_eval_pairs() {
    Rng rng(cfg_.seed ^ kEvalStream);
    std::vector<ViewPair> pairs;
    const int n = std::min<int>(4, static_cast<int>(train_ids_.size()));
    for (int i = 0; i < n; ++i) {
      const Volume& vol = dataset_[static_cast<size_t>(train_ids_[static_cast<size_t>(i)])];
      Volume cropped = vol;
      cropped.intensities = crop_to_shape(vol.intensities, cfg_.enc.input_shape, rng);
      cropped.label = TensorI();
      pairs.push_back(make_view_pair(cropped, aug_, cfg_.enc.token_grid(),
                                     cfg_.enc.invariance_patch_sizes(), rng));
    }
    return pairs;
  }

  // Full training loop; artifacts go to run_dir.
  void run(const std::string& run_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(run_dir);
    {
      std::ofstream cfg_out(fs::path(run_dir) / "config.cfg");
      cfg_out << cfg_.snapshot();
    }
    RunRecordWriter rec(run_dir);
    const int B = cfg_.batch_size;
    const auto steps_per_epoch =
        static_cast<int64_t>((train_ids_.size() + B - 1) / static_cast<size_t>(B));
    const int64_t total_steps = steps_per_epoch * cfg_.epochs;
    SgdOptimizer<T> opt(online_.all(), cfg_.lr, cfg_.momentum, cfg_.nesterov,
                        cfg_.resolved_poly_exponent(), total_steps);
    Rng rng_data(cfg_.seed ^ kDataStream);
    Rng rng_aug(cfg_.seed ^ kAugStream);
    auto eval_pairs = make_eval_pairs();
    // fixed eval views, transform serialized as perm triple + flip bits
    for (size_t k = 0; k < eval_pairs.size(); ++k) {
      auto s = eval_pairs[k].transform.serialize();
      static const char* part[6] = {"perm0", "perm1", "perm2", "flip0", "flip1", "flip2"};
      for (int c = 0; c < 6; ++c)
        rec.add(0, "eval/view" + std::to_string(k) + "/transform/" + part[c],
                static_cast<double>(s[static_cast<size_t>(c)]));
    }
    const std::string ckpt_path = (fs::path(run_dir) / "ckpt_final.bin").string();
    int64_t step = 0;
    double last_loss = 0.0;
    CollapseReport last_collapse;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::vector<int> order = train_ids_;
      std::shuffle(order.begin(), order.end(), rng_data);
      for (int64_t sb = 0; sb < steps_per_epoch; ++sb) {
        auto begin = order.begin() + sb * B;
        auto end = order.begin() + std::min<int64_t>(static_cast<int64_t>(order.size()), (sb + 1) * B);
        std::vector<int> ids(begin, end);
        if (framework_ == LossConfig::Framework::GlobalSimCLR && ids.size() < 2) {
          ++step;
          continue;  // a lone volume cannot form negatives
        }
        auto t0 = std::chrono::steady_clock::now();
        Tape<T> tape;
        TapeBind<T> bind(tape);
        auto loss = batch_loss(bind, ids, rng_aug);
        last_loss = static_cast<double>(tape.val(loss)[0]);
        if (!std::isfinite(last_loss)) {
          rec.set_summary("aborted_at_step", static_cast<double>(step));
          rec.set_summary("status", "NonFiniteLoss");
          rec.finalize();
          fail("NonFiniteLoss", "non-finite loss at step " + std::to_string(step) +
                                    "; last good checkpoint retained");
        }
        tape.backward(loss);
        bind.pull_grads();
        opt.step(step);
        if (framework_ == LossConfig::Framework::BTROT)
          ema_update(target_, online_, cfg_.loss.ema_momentum);
        rec.add(step, "train/loss", last_loss);
        rec.add(step, "train/lr", opt.lr_at(step));
        auto t1 = std::chrono::steady_clock::now();
        rec.add_timing(step, std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (cfg_.eval_cadence > 0 && (step % cfg_.eval_cadence == 0 || step + 1 == total_steps) &&
            eval_pairs.size() >= 2) {
          auto [z, zh] = eval_tokens(eval_pairs);
          last_collapse = collapse_metrics(z, zh, static_cast<int>(eval_pairs.size()),
                                           static_cast<int>(prod3(cfg_.enc.out_grid())));
          rec.add(step, "collapse/cross_volume_same_position_cosine",
                  last_collapse.cross_volume_same_position_cosine);
          rec.add(step, "collapse/within_volume_cross_position_cosine",
                  last_collapse.within_volume_cross_position_cosine);
          rec.add(step, "collapse/positive_pair_cosine", last_collapse.positive_pair_cosine);
          rec.add(step, "collapse/mean_position_variance", last_collapse.mean_position_variance);
        }
        if (cfg_.checkpoint_cadence > 0 && step > 0 && step % cfg_.checkpoint_cadence == 0)
          save_checkpoint((fs::path(run_dir) / ("ckpt_step_" + std::to_string(step) + ".bin")).string(),
                          online_, cfg_.snapshot());
        ++step;
      }
    }
    save_checkpoint(ckpt_path, online_, cfg_.snapshot());
    rec.set_summary("mode", cfg_.mode);
    rec.set_summary("framework", cfg_.framework);
    rec.set_summary("seed", static_cast<double>(cfg_.seed));
    rec.set_summary("steps", static_cast<double>(step));
    rec.set_summary("final_loss", last_loss);
    rec.set_summary("final_cross_volume_cosine", last_collapse.cross_volume_same_position_cosine);
    rec.set_summary("final_within_volume_cosine",
                    last_collapse.within_volume_cross_position_cosine);
    rec.set_summary("final_positive_cosine", last_collapse.positive_pair_cosine);
    rec.set_summary("checkpoint", "ckpt_final.bin");
    rec.set_summary("status", "ok");
    rec.finalize();
  }

 private:
  RunConfig cfg_;
  LossConfig::Framework framework_;
  AugmentationConfig aug_;
  Encoder<T> encoder_;
  ParamStore<T> online_, target_;
  std::vector<Volume> dataset_;
  std::vector<int> train_ids_;
};

// ---- fine-tuning ----

template <typename T>
class Finetuner {
 public:
  explicit Finetuner(const RunConfig& cfg)
      : cfg_(cfg), encoder_(cfg.enc), decoder_(cfg.enc, resolve_classes(cfg)) {
    cfg_.validate();
    auto loaded = load_dataset(cfg_.data_path);
    dataset_ = std::move(loaded.volumes);
    n_classes_ = cfg_.finetune_n_classes > 0 ? cfg_.finetune_n_classes : loaded.n_classes;
    require(n_classes_ >= 1, "ConfigError", "fine-tuning needs n_classes >= 1");
    auto split = split_dataset(static_cast<int>(dataset_.size()), cfg_.data_split, cfg_.split_seed);
    labeled_ = subsample_labeled(split.train, cfg_.labeled_fraction, cfg_.seed);
    test_ids_ = split.test;
    require(!labeled_.empty(), "EmptyLabeledSet", "no labeled volumes after subsampling");
    Rng init(cfg_.seed);
    encoder_.init_params(store_, "enc.", init);
    decoder_.init_params(store_, "dec.", init);
    if (!cfg_.finetune_checkpoint.empty()) {
      validate_checkpoint_config(cfg_.finetune_checkpoint);
      load_checkpoint_into(cfg_.finetune_checkpoint, store_, "enc.");
      pretrained_ = true;
    }
  }

  int n_classes() const { return n_classes_; }
  ParamStore<T>& params() { return store_; }
  const std::vector<int>& labeled_ids() const { return labeled_; }
  const std::vector<int>& test_ids() const { return test_ids_; }

  typename Tape<T>::Var batch_loss(TapeBind<T>& bind, const std::vector<int>& ids) {
    Tape<T>& tape = bind.tape();
    typename Tape<T>::Var acc = 0;
    bool first = true;
    for (int id : ids) {
      const Volume& vol = dataset_[static_cast<size_t>(id)];
      require(vol.has_label(), "EmptyLabeledSet", "volume " + vol.id + " has no label mask");
      require(vol.spatial_shape() == cfg_.enc.input_shape, "ShapeMismatch",
              "fine-tuning expects volumes at the encoder input shape");
      auto outs = encoder_.forward(bind, store_, "enc.", vol.intensities);
      auto logits = decoder_.forward(bind, store_, "dec.", vol.intensities, outs);
      auto l = dice_ce_loss(tape, logits, vol.label);
      acc = first ? l : tape.add(acc, l);
      first = false;
    }
    return tape.scale(acc, 1.0 / static_cast<double>(ids.size()));
  }

  TensorI predict(const Volume& vol) {
    Tape<T> tape;
    TapeBind<T> bind(tape);
    auto outs = encoder_.forward(bind, store_, "enc.", vol.intensities);
    auto logits = decoder_.forward(bind, store_, "dec.", vol.intensities, outs);
    return argmax_labels(tape.val(logits));
  }

  struct EvalScores {
    std::vector<double> dice_per_class, hd95_per_class;  // class index 1..K at [k-1]
    double mean_dice = 0.0, mean_hd95 = 0.0;
    int64_t n_infinite_hd95 = 0;
  };

  EvalScores evaluate(RunRecordWriter* rec, int64_t step) {
    EvalScores s;
    s.dice_per_class.assign(static_cast<size_t>(n_classes_), 0.0);
    s.hd95_per_class.assign(static_cast<size_t>(n_classes_), 0.0);
    std::vector<int64_t> hd_counts(static_cast<size_t>(n_classes_), 0);
    for (int id : test_ids_) {
      const Volume& vol = dataset_[static_cast<size_t>(id)];
      TensorI pred = predict(vol);
      for (int k = 1; k <= n_classes_; ++k) {
        auto r = evaluate_class(pred, vol.label, k, vol.spacing);
        s.dice_per_class[static_cast<size_t>(k - 1)] += r.dice;
        if (std::isfinite(r.hd95)) {
          s.hd95_per_class[static_cast<size_t>(k - 1)] += r.hd95;
          ++hd_counts[static_cast<size_t>(k - 1)];
        } else {
          ++s.n_infinite_hd95;
        }
        if (rec) {
          rec->add(step, "eval/vol" + vol.id + "/class" + std::to_string(k) + "/dice", r.dice);
          rec->add(step, "eval/vol" + vol.id + "/class" + std::to_string(k) + "/hd95", r.hd95);
        }
      }
    }
    const auto nv = static_cast<double>(test_ids_.size());
    double dice_acc = 0, hd_acc = 0;
    int64_t hd_classes = 0;
    for (int k = 0; k < n_classes_; ++k) {
      s.dice_per_class[static_cast<size_t>(k)] /= std::max(nv, 1.0);
      dice_acc += s.dice_per_class[static_cast<size_t>(k)];
      if (hd_counts[static_cast<size_t>(k)] > 0) {
        s.hd95_per_class[static_cast<size_t>(k)] /= static_cast<double>(hd_counts[static_cast<size_t>(k)]);
        hd_acc += s.hd95_per_class[static_cast<size_t>(k)];
        ++hd_classes;
      } else {
        s.hd95_per_class[static_cast<size_t>(k)] = kHd95Sentinel;
      }
      if (rec) {
        rec->add(step, "eval/dice/class" + std::to_string(k + 1),
                 s.dice_per_class[static_cast<size_t>(k)]);
        rec->add(step, "eval/hd95/class" + std::to_string(k + 1),
                 s.hd95_per_class[static_cast<size_t>(k)]);
      }
    }
    s.mean_dice = dice_acc / std::max(1, n_classes_);
    s.mean_hd95 = hd_classes > 0 ? hd_acc / hd_classes : kHd95Sentinel;
    if (rec) {
      rec->add(step, "eval/dice/mean", s.mean_dice);
      rec->add(step, "eval/hd95/mean", s.mean_hd95);
      rec->add(step, "eval/hd95/n_infinite", static_cast<double>(s.n_infinite_hd95));
    }
    return s;
  }

  void run(const std::string& run_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(run_dir);
    {
      std::ofstream cfg_out(fs::path(run_dir) / "config.cfg");
      cfg_out << cfg_.snapshot();
    }
    RunRecordWriter rec(run_dir);
    const int B = cfg_.batch_size;
    const auto steps_per_epoch =
        static_cast<int64_t>((labeled_.size() + B - 1) / static_cast<size_t>(B));
    const int64_t total_steps = steps_per_epoch * cfg_.epochs;
    SgdOptimizer<T> opt(store_.all(), cfg_.lr, cfg_.momentum, cfg_.nesterov,
                        cfg_.resolved_poly_exponent(), total_steps);
    Rng rng_data(cfg_.seed ^ kDataStream);
    int64_t step = 0;
    double last_loss = 0.0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::vector<int> order = labeled_;
      std::shuffle(order.begin(), order.end(), rng_data);
      for (int64_t sb = 0; sb < steps_per_epoch; ++sb) {
        auto begin = order.begin() + sb * B;
        auto end = order.begin() + std::min<int64_t>(static_cast<int64_t>(order.size()), (sb + 1) * B);
        std::vector<int> ids(begin, end);
        auto t0 = std::chrono::steady_clock::now();
        Tape<T> tape;
        TapeBind<T> bind(tape);
        auto loss = batch_loss(bind, ids);
        last_loss = static_cast<double>(tape.val(loss)[0]);
        if (!std::isfinite(last_loss)) {
          rec.set_summary("aborted_at_step", static_cast<double>(step));
          rec.set_summary("status", "NonFiniteLoss");
          rec.finalize();
          fail("NonFiniteLoss", "non-finite loss at step " + std::to_string(step));
        }
        tape.backward(loss);
        bind.pull_grads();
        opt.step(step);
        rec.add(step, "train/loss", last_loss);
        rec.add(step, "train/lr", opt.lr_at(step));
        auto t1 = std::chrono::steady_clock::now();
        rec.add_timing(step, std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (cfg_.eval_cadence > 0 && !test_ids_.empty() &&
            (step % cfg_.eval_cadence == 0 || step + 1 == total_steps))
          evaluate(&rec, step);
        ++step;
      }
    }
    save_checkpoint((fs::path(run_dir) / "ckpt_final.bin").string(), store_, cfg_.snapshot());
    EvalScores final_scores;
    if (!test_ids_.empty()) final_scores = evaluate(nullptr, step);
    rec.set_summary("mode", cfg_.mode);
    rec.set_summary("framework", cfg_.framework);
    rec.set_summary("seed", static_cast<double>(cfg_.seed));
    rec.set_summary("labeled_fraction", cfg_.labeled_fraction);
    rec.set_summary("pretrained", pretrained_ ? 1.0 : 0.0);
    rec.set_summary("steps", static_cast<double>(step));
    rec.set_summary("final_loss", last_loss);
    rec.set_summary("final_mean_dice", final_scores.mean_dice);
    rec.set_summary("final_mean_hd95", final_scores.mean_hd95);
    for (int k = 1; k <= n_classes_; ++k)
      rec.set_summary("final_dice_class" + std::to_string(k),
                      final_scores.dice_per_class[static_cast<size_t>(k - 1)]);
    rec.set_summary("checkpoint", "ckpt_final.bin");
    rec.set_summary("status", "ok");
    rec.finalize();
  }

 private:
  RunConfig cfg_;
  Encoder<T> encoder_;
  SegDecoder<T> decoder_;
  ParamStore<T> store_;
  std::vector<Volume> dataset_;
  std::vector<int> labeled_, test_ids_;
  int n_classes_ = 0;
  bool pretrained_ = false;

  static int resolve_classes(const RunConfig& cfg) {
    if (cfg.finetune_n_classes > 0) return cfg.finetune_n_classes;
    auto loaded = load_dataset(cfg.data_path);
    require(loaded.n_classes >= 1, "ConfigError", "dataset index does not declare n_classes");
    return loaded.n_classes;
  }

  void validate_checkpoint_config(const std::string& path) const {
    RunConfig ck = parse_config_text(checkpoint_config_text(path), {});
    auto same3 = [](const Shape3& a, const Shape3& b) { return a == b; };
    bool ok = ck.enc.variant == cfg_.enc.variant && same3(ck.enc.input_shape, cfg_.enc.input_shape) &&
              ck.enc.in_channels == cfg_.enc.in_channels &&
              same3(ck.enc.patch_size, cfg_.enc.patch_size) && ck.enc.n_stages == cfg_.enc.n_stages &&
              ck.enc.blocks_per_stage == cfg_.enc.blocks_per_stage &&
              ck.enc.embed_dim == cfg_.enc.embed_dim && same3(ck.enc.window, cfg_.enc.window) &&
              ck.enc.n_heads == cfg_.enc.n_heads;
    require(ok, "CheckpointMismatch",
            "checkpoint " + path + " was produced with a different encoder configuration");
  }
};

// ---- ablation grid ----

struct AblationAxis {
  std::string name;                 // config key, or the shorthands mask / rotate
  std::vector<std::string> values;  // for mask/rotate: on/off
};

struct AblationChild {
  std::string suffix;
  RunConfig cfg;
};

inline std::vector<AblationChild> expand_ablation_grid(const RunConfig& base,
                                                       const std::vector<AblationAxis>& axes) {
  std::vector<AblationChild> grid{{"", base}};
  for (const auto& axis : axes) {
    require(!axis.values.empty(), "ConfigError", "ablation axis " + axis.name + " has no values");
    std::vector<AblationChild> next;
    for (const auto& g : grid)
      for (const auto& v : axis.values) {
        AblationChild child = g;
        if (!child.suffix.empty()) child.suffix += "__";
        child.suffix += axis.name + "=" + v;
        if (axis.name == "mask") {
          require(v == "on" || v == "off", "ConfigError", "mask axis takes on/off");
          if (v == "off") child.cfg.aug.mask_ratio = 0.0;
          else child.cfg.aug.mask_ratio = base.aug.mask_ratio;
        } else if (axis.name == "rotate") {
          require(v == "on" || v == "off", "ConfigError", "rotate axis takes on/off");
          child.cfg.aug.spatial_enabled = v == "on";
        } else {
          apply_override(child.cfg, axis.name, v);
        }
        next.push_back(std::move(child));
      }
    grid = std::move(next);
  }
  return grid;
}

}  // namespace trot
