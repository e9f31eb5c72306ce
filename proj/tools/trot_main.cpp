// trot CLI: data generation, pre-training, fine-tuning, ablation grids,
// collapse diagnostics, and static report emission.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "trot/plot.hpp"
#include "trot/training.hpp"

namespace fs = std::filesystem;
using namespace trot;

namespace {

int exit_code_for(const Error& e) {
  const std::string& c = e.code();
  if (c == "NonFiniteLoss" || c == "NonFiniteActivation") return 4;
  if (c == "IoError" || c == "FormatError" || c == "EmptyLabeledSet" || c == "MissingRecord")
    return 3;
  return 2;  // configuration / usage errors
}

// Refuse to clobber an existing run unless --force; with --force the
// directory is rebuilt from scratch so reruns are deterministic.
void prepare_out_dir(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    require(force, "ConfigError",
            "output directory " + dir + " already exists; rerun with --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

template <typename T>
void run_pretrain(const RunConfig& cfg, const std::string& run_dir) {
  Pretrainer<T> trainer(cfg);
  trainer.run(run_dir);
}

template <typename T>
void run_finetune(const RunConfig& cfg, const std::string& run_dir) {
  Finetuner<T> trainer(cfg);
  trainer.run(run_dir);
}

void run_config(const RunConfig& cfg, const std::string& run_dir, Precision prec) {
  if (cfg.mode == "finetune") {
    if (prec == Precision::Float32) run_finetune<float>(cfg, run_dir);
    else run_finetune<double>(cfg, run_dir);
  } else {
    if (prec == Precision::Float32) run_pretrain<float>(cfg, run_dir);
    else run_pretrain<double>(cfg, run_dir);
  }
}

int cmd_train(const std::string& mode, const std::string& config_path,
              const std::vector<std::string>& overrides, bool force) {
  RunConfig cfg = parse_config_file(config_path, overrides);
  require(cfg.mode == mode, "ConfigError",
          "config declares mode '" + cfg.mode + "' but the '" + mode + "' command was invoked");
  cfg.validate();
  std::string run_dir = (fs::path(cfg.out_dir) / cfg.resolved_run_id()).string();
  prepare_out_dir(run_dir, force);
  run_config(cfg, run_dir, precision_from_env());
  std::cout << "run complete: " << run_dir << "\n";
  return 0;
}

int cmd_gen_data(const DatasetSpec& spec, const std::string& out, bool force) {
  prepare_out_dir(out, force);
  auto ds = generate_dataset(spec);
  save_dataset(ds, spec, out);
  std::cout << "wrote " << ds.size() << " volumes to " << out << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::vector<std::string>& axis_specs, bool force) {
  RunConfig base = parse_config_file(config_path, overrides);
  std::vector<AblationAxis> axes;
  for (const auto& spec : axis_specs) {
    size_t eq = spec.find('=');
    require(eq != std::string::npos, "ConfigError", "--axis expects name=v1,v2,...: " + spec);
    AblationAxis axis;
    axis.name = spec.substr(0, eq);
    std::string cur;
    for (char c : spec.substr(eq + 1)) {
      if (c == ',') {
        axis.values.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    axis.values.push_back(cur);
    axes.push_back(std::move(axis));
  }
  auto grid = expand_ablation_grid(base, axes);
  std::string parent = (fs::path(base.out_dir) / base.resolved_run_id()).string();
  prepare_out_dir(parent, force);
  std::ostringstream table;
  table << "child\tfinal_loss\tfinal_mean_dice\tfinal_cross_volume_cosine\n";
  Precision prec = precision_from_env();
  for (const auto& child : grid) {
    std::string suffix = child.suffix.empty() ? "base" : child.suffix;
    std::string dir = (fs::path(parent) / suffix).string();
    RunConfig cfg = child.cfg;
    cfg.run_id = cfg.resolved_run_id() + "__" + suffix;
    std::cout << "[ablate] " << suffix << "\n";
    run_config(cfg, dir, prec);
    RunRecord rec = load_run_record(dir);
    auto opt_value = [&](const std::string& key) {
      return rec.has_summary(key) ? rec.summary.at(key) : std::string("-");
    };
    table << suffix << "\t" << opt_value("final_loss") << "\t" << opt_value("final_mean_dice")
          << "\t" << opt_value("final_cross_volume_cosine") << "\n";
  }
  std::ofstream os(fs::path(parent) / "ablation_summary.txt");
  os << table.str();
  std::cout << table.str();
  return 0;
}

template <typename T>
int diagnose_impl(const std::string& ckpt, const std::string& data_dir, int n_volumes,
                  const std::string& out) {
  require(n_volumes >= 2, "ConfigError", "diagnose needs --n-volumes >= 2");
  RunConfig ck = parse_config_text(checkpoint_config_text(ckpt), {});
  Encoder<T> encoder(ck.enc);
  ParamStore<T> store;
  Rng init(0);
  encoder.init_params(store, "enc.", init);
  load_checkpoint_into(ckpt, store, "enc.");
  auto loaded = load_dataset(data_dir);
  require(static_cast<int>(loaded.volumes.size()) >= n_volumes, "ConfigError",
          "dataset has fewer volumes than --n-volumes");
  const Shape3 grid = ck.enc.out_grid();
  const int64_t M = prod3(grid);
  const int64_t C = ck.enc.out_dim();
  TensorD z({static_cast<int64_t>(n_volumes) * M, C});
  Rng crop_rng(0);
  for (int i = 0; i < n_volumes; ++i) {
    TensorD in = crop_to_shape(loaded.volumes[static_cast<size_t>(i)].intensities,
                               ck.enc.input_shape, crop_rng);
    auto tokens = encoder.encode_values(store, "enc.", in);
    for (int64_t m = 0; m < M; ++m)
      for (int64_t c = 0; c < C; ++c)
        z.at2(static_cast<int64_t>(i) * M + m, c) = static_cast<double>(tokens.at2(m, c));
  }
  TensorD zn = normalize_rows_plain(z);
  CollapseReport rep = collapse_metrics(zn, zn, n_volumes, static_cast<int>(M));
  fs::create_directories(out);
  {
    std::ofstream os(fs::path(out) / "collapse.txt");
    os << 0 << "\tcollapse/cross_volume_same_position_cosine\t"
       << format_double_exact(rep.cross_volume_same_position_cosine) << "\n";
    os << 0 << "\tcollapse/within_volume_cross_position_cosine\t"
       << format_double_exact(rep.within_volume_cross_position_cosine) << "\n";
    os << 0 << "\tcollapse/mean_position_variance\t"
       << format_double_exact(rep.mean_position_variance) << "\n";
  }
  TensorD proj = pca_2d(zn);
  std::vector<ScatterGroup> groups(static_cast<size_t>(M));
  for (int64_t m = 0; m < M; ++m) {
    groups[static_cast<size_t>(m)].label = "pos" + std::to_string(m);
    groups[static_cast<size_t>(m)].color_index = static_cast<int>(m);
    for (int i = 0; i < n_volumes; ++i)
      groups[static_cast<size_t>(m)].points.push_back(
          {proj.at2(static_cast<int64_t>(i) * M + m, 0),
           proj.at2(static_cast<int64_t>(i) * M + m, 1)});
  }
  write_scatter_plot((fs::path(out) / "tokens_pca.svg").string(),
                     "token embeddings by position (" + std::to_string(n_volumes) + " volumes)",
                     groups);
  std::cout << "cross_volume_same_position_cosine = " << rep.cross_volume_same_position_cosine
            << "\nwithin_volume_cross_position_cosine = " << rep.within_volume_cross_position_cosine
            << "\nreport written to " << out << "\n";
  return 0;
}

int cmd_diagnose(const std::string& ckpt, const std::string& data_dir, int n_volumes,
                 const std::string& out) {
  if (precision_from_env() == Precision::Float32)
    return diagnose_impl<float>(ckpt, data_dir, n_volumes, out);
  return diagnose_impl<double>(ckpt, data_dir, n_volumes, out);
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out,
               const std::string& sweep_key, bool force) {
  std::vector<std::pair<std::string, RunRecord>> runs;
  std::vector<std::string> missing;
  for (const auto& d : dirs) {
    try {
      runs.emplace_back(fs::path(d).filename().string(), load_run_record(d));
    } catch (const Error& e) {
      missing.push_back(d + " (" + e.what() + ")");
    }
  }
  for (const auto& m : missing) std::cerr << "missing record: " << m << "\n";
  require(!runs.empty(), "MissingRecord", "no readable run records among the given directories");
  prepare_out_dir(out, force);

  std::ostringstream table;
  table << "run\tmode\tframework\tlabeled_fraction\tfinal_loss\tfinal_mean_dice\tfinal_mean_hd95"
           "\tfinal_cross_volume_cosine\n";
  auto cell = [](const RunRecord& r, const std::string& k) {
    return r.has_summary(k) ? r.summary.at(k) : std::string("-");
  };
  for (const auto& [name, rec] : runs)
    table << name << "\t" << cell(rec, "mode") << "\t" << cell(rec, "framework") << "\t"
          << cell(rec, "labeled_fraction") << "\t" << cell(rec, "final_loss") << "\t"
          << cell(rec, "final_mean_dice") << "\t" << cell(rec, "final_mean_hd95") << "\t"
          << cell(rec, "final_cross_volume_cosine") << "\n";
  {
    std::ofstream os(fs::path(out) / "report_table.txt");
    os << table.str();
  }
  std::cout << table.str();

  auto curve = [&](const std::string& record_name, const std::string& fname,
                   const std::string& title, const std::string& ylab) {
    std::vector<Series> series;
    for (const auto& [name, rec] : runs) {
      auto pts = rec.series(record_name);
      if (pts.empty()) continue;
      Series s;
      s.label = name;
      for (auto [step, v] : pts) s.points.push_back({static_cast<double>(step), v});
      series.push_back(std::move(s));
    }
    if (!series.empty())
      write_line_plot((fs::path(out) / fname).string(), title, "step", ylab, series);
  };
  curve("train/loss", "loss.svg", "training loss", "loss");
  curve("collapse/cross_volume_same_position_cosine", "collapse.svg",
        "cross-volume same-position cosine", "cosine");
  curve("eval/dice/mean", "dice.svg", "mean test dice", "dice");

  // dice vs labeled fraction, pretrained and scratch as separate lines
  {
    std::map<int, std::vector<std::pair<double, double>>> by_group;
    for (const auto& [name, rec] : runs)
      if (rec.has_summary("labeled_fraction") && rec.has_summary("final_mean_dice"))
        by_group[rec.has_summary("pretrained") ? static_cast<int>(rec.summary_double("pretrained"))
                                               : 0]
            .push_back(
                {rec.summary_double("labeled_fraction"), rec.summary_double("final_mean_dice")});
    if (!by_group.empty() && (by_group.size() > 1 || by_group.begin()->second.size() > 1)) {
      std::vector<Series> series;
      for (auto& [g, pts] : by_group) {
        std::sort(pts.begin(), pts.end());
        series.push_back(Series{g ? "pretrained" : "scratch", pts});
      }
      write_line_plot((fs::path(out) / "dice_vs_labeled_fraction.svg").string(),
                      "dice vs labeled fraction", "labeled fraction", "dice", series);
    }
  }

  // sweep curve over an explicit or auto-detected config key, in argument order
  std::string key = sweep_key;
  if (key.empty() && runs.size() > 1 && !runs[0].second.config.empty()) {
    std::vector<std::string> differing;
    for (const auto& [k, v] : runs[0].second.config) {
      if (k == "run_id" || k == "out_dir") continue;
      for (const auto& [name, rec] : runs) {
        auto it = rec.config.find(k);
        if (it != rec.config.end() && it->second != v) {
          differing.push_back(k);
          break;
        }
      }
    }
    if (differing.size() == 1) key = differing[0];
  }
  if (!key.empty()) {
    Series s;
    s.label = key;
    for (const auto& [name, rec] : runs) {
      auto it = rec.config.find(key);
      if (it == rec.config.end()) continue;
      double x = 0;
      try {
        x = std::stod(it->second);
      } catch (...) {
        continue;
      }
      double y = rec.has_summary("final_mean_dice") ? rec.summary_double("final_mean_dice")
                 : rec.has_summary("final_cross_volume_cosine")
                     ? rec.summary_double("final_cross_volume_cosine")
                     : rec.summary_double("final_loss");
      s.points.push_back({x, y});
    }
    if (s.points.size() >= 2)
      write_line_plot((fs::path(out) / "sweep.svg").string(), "sweep over " + key, key, "metric",
                      {s});
  }
  std::cout << "report written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-level rotate-and-restore pre-training for 3D transformer encoders"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic blob segmentation dataset");
  DatasetSpec spec;
  std::string gen_out = "data";
  std::vector<int> gen_shape{32, 32, 32};
  std::vector<int> gen_blobs{1, 3};
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--n", spec.n_volumes, "number of volumes");
  gen->add_option("--shape", gen_shape, "volume shape D H W")->expected(3);
  gen->add_option("--classes", spec.n_classes, "foreground classes");
  gen->add_option("--channels", spec.n_channels, "intensity channels");
  gen->add_option("--blobs", gen_blobs, "blobs per class (min max)")->expected(2);
  gen->add_option("--noise", spec.background_noise, "background noise level");
  gen->add_option("--seed", spec.seed, "generation seed");
  gen->add_flag("--force", gen_force, "overwrite an existing dataset directory");

  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  auto* pre = app.add_subcommand("pretrain", "run self-supervised pre-training");
  pre->add_option("config", config_path, "run configuration file")->required();
  pre->add_option("--set", overrides, "override a config key (key=value)");
  pre->add_flag("--force", force, "overwrite an existing run directory");
  auto* fin = app.add_subcommand("finetune", "fine-tune a segmentation model");
  fin->add_option("config", config_path, "run configuration file")->required();
  fin->add_option("--set", overrides, "override a config key (key=value)");
  fin->add_flag("--force", force, "overwrite an existing run directory");

  auto* abl = app.add_subcommand("ablate", "run a grid of child runs over config axes");
  std::vector<std::string> axis_specs;
  abl->add_option("config", config_path, "base run configuration file")->required();
  abl->add_option("--axis", axis_specs, "axis spec name=v1,v2 (mask/rotate take on,off)");
  abl->add_option("--set", overrides, "override a config key (key=value)");
  abl->add_flag("--force", force, "overwrite an existing grid directory");

  auto* diag = app.add_subcommand("diagnose", "collapse diagnostics for a checkpoint");
  std::string ckpt, diag_data, diag_out = "diagnose_out";
  int n_volumes = 4;
  diag->add_option("--checkpoint", ckpt, "encoder checkpoint")->required();
  diag->add_option("--data", diag_data, "dataset directory")->required();
  diag->add_option("--n-volumes", n_volumes, "volumes to encode (>= 2)");
  diag->add_option("--out", diag_out, "output directory");

  auto* rep = app.add_subcommand("report", "summary table and curves for finished runs");
  std::vector<std::string> run_dirs;
  std::string report_out = "report_out", sweep_key;
  rep->add_option("runs", run_dirs, "run directories")->required();
  rep->add_option("--out", report_out, "output directory");
  rep->add_option("--sweep-key", sweep_key, "config key for the sweep curve");
  rep->add_flag("--force", force, "overwrite an existing report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      spec.shape = {gen_shape[0], gen_shape[1], gen_shape[2]};
      spec.blobs_min = gen_blobs[0];
      spec.blobs_max = gen_blobs[1];
      return cmd_gen_data(spec, gen_out, gen_force);
    }
    if (pre->parsed()) return cmd_train("pretrain", config_path, overrides, force);
    if (fin->parsed()) return cmd_train("finetune", config_path, overrides, force);
    if (abl->parsed()) return cmd_ablate(config_path, overrides, axis_specs, force);
    if (diag->parsed()) return cmd_diagnose(ckpt, diag_data, n_volumes, diag_out);
    if (rep->parsed()) return cmd_report(run_dirs, report_out, sweep_key, force);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
