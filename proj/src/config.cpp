#include "trot/config.hpp"

#include <fstream>
#include <sstream>

namespace trot {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    require(pos == v.size(), "ConfigError", "trailing characters in value for " + key);
    return d;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("ConfigError", "expected a real number for " + key + ", got '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long d = std::stol(v, &pos);
    require(pos == v.size(), "ConfigError", "trailing characters in value for " + key);
    return static_cast<int>(d);
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("ConfigError", "expected an integer for " + key + ", got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    unsigned long long d = std::stoull(v, &pos);
    require(pos == v.size(), "ConfigError", "trailing characters in value for " + key);
    return d;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("ConfigError", "expected an unsigned integer for " + key + ", got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail("ConfigError", "expected a boolean for " + key + ", got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

Shape3 parse_shape3(const std::string& key, const std::string& v) {
  auto parts = split_commas(v);
  require(parts.size() == 3, "ConfigError", key + " expects three comma-separated integers");
  return {parse_int(key, parts[0]), parse_int(key, parts[1]), parse_int(key, parts[2])};
}

std::array<double, 3> parse_frac3(const std::string& key, const std::string& v) {
  auto parts = split_commas(v);
  require(parts.size() == 3, "ConfigError", key + " expects three comma-separated reals");
  return {parse_double(key, parts[0]), parse_double(key, parts[1]), parse_double(key, parts[2])};
}

std::pair<double, double> parse_range(const std::string& key, const std::string& v) {
  auto parts = split_commas(v);
  require(parts.size() == 2, "ConfigError", key + " expects 'lo,hi'");
  return {parse_double(key, parts[0]), parse_double(key, parts[1])};
}

std::string fmt_shape3(const Shape3& s) {
  return std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]);
}

std::string fmt_frac3(const std::array<double, 3>& s) {
  return fmt_double(s[0]) + "," + fmt_double(s[1]) + "," + fmt_double(s[2]);
}

std::string fmt_range(const std::pair<double, double>& r) {
  return fmt_double(r.first) + "," + fmt_double(r.second);
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    auto add = [&](std::string key, auto get, auto set) {
      f.push_back(Field{std::move(key), get, set});
    };
    add("mode", [](const RunConfig& c) { return c.mode; },
        [](RunConfig& c, const std::string& v) {
          require(v == "pretrain" || v == "finetune", "ConfigError",
                  "mode must be pretrain or finetune");
          c.mode = v;
        });
    add("run_id", [](const RunConfig& c) { return c.run_id; },
        [](RunConfig& c, const std::string& v) { c.run_id = v; });
    add("out_dir", [](const RunConfig& c) { return c.out_dir; },
        [](RunConfig& c, const std::string& v) { c.out_dir = v; });
    add("framework", [](const RunConfig& c) { return c.framework; },
        [](RunConfig& c, const std::string& v) {
          framework_from_string(v);  // validates
          c.framework = v;
        });
    add("seed", [](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); });
    add("data.path", [](const RunConfig& c) { return c.data_path; },
        [](RunConfig& c, const std::string& v) { c.data_path = v; });
    add("data.split", [](const RunConfig& c) { return fmt_frac3(c.data_split); },
        [](RunConfig& c, const std::string& v) { c.data_split = parse_frac3("data.split", v); });
    add("data.split_seed", [](const RunConfig& c) { return std::to_string(c.split_seed); },
        [](RunConfig& c, const std::string& v) { c.split_seed = parse_u64("data.split_seed", v); });
    add("data.labeled_fraction",
        [](const RunConfig& c) { return fmt_double(c.labeled_fraction); },
        [](RunConfig& c, const std::string& v) {
          c.labeled_fraction = parse_double("data.labeled_fraction", v);
        });
    add("batch_size", [](const RunConfig& c) { return std::to_string(c.batch_size); },
        [](RunConfig& c, const std::string& v) { c.batch_size = parse_int("batch_size", v); });
    add("epochs", [](const RunConfig& c) { return std::to_string(c.epochs); },
        [](RunConfig& c, const std::string& v) { c.epochs = parse_int("epochs", v); });
    add("eval_cadence", [](const RunConfig& c) { return std::to_string(c.eval_cadence); },
        [](RunConfig& c, const std::string& v) { c.eval_cadence = parse_int("eval_cadence", v); });
    add("checkpoint_cadence",
        [](const RunConfig& c) { return std::to_string(c.checkpoint_cadence); },
        [](RunConfig& c, const std::string& v) {
          c.checkpoint_cadence = parse_int("checkpoint_cadence", v);
        });
    add("optimizer.lr", [](const RunConfig& c) { return fmt_double(c.lr); },
        [](RunConfig& c, const std::string& v) { c.lr = parse_double("optimizer.lr", v); });
    add("optimizer.momentum", [](const RunConfig& c) { return fmt_double(c.momentum); },
        [](RunConfig& c, const std::string& v) {
          c.momentum = parse_double("optimizer.momentum", v);
        });
    add("optimizer.nesterov", [](const RunConfig& c) { return c.nesterov ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) { c.nesterov = parse_bool("optimizer.nesterov", v); });
    add("optimizer.poly_exponent",
        [](const RunConfig& c) { return c.poly_exponent < 0 ? "auto" : fmt_double(c.poly_exponent); },
        [](RunConfig& c, const std::string& v) {
          c.poly_exponent = v == "auto" ? -1.0 : parse_double("optimizer.poly_exponent", v);
        });
    add("ema.momentum", [](const RunConfig& c) { return fmt_double(c.loss.ema_momentum); },
        [](RunConfig& c, const std::string& v) {
          c.loss.ema_momentum = parse_double("ema.momentum", v);
        });
    add("loss.tau", [](const RunConfig& c) { return fmt_double(c.loss.tau); },
        [](RunConfig& c, const std::string& v) { c.loss.tau = parse_double("loss.tau", v); });
    add("loss.w", [](const RunConfig& c) { return fmt_double(c.loss.w); },
        [](RunConfig& c, const std::string& v) { c.loss.w = parse_double("loss.w", v); });
    add("loss.symmetrize", [](const RunConfig& c) { return c.loss.symmetrize ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
          c.loss.symmetrize = parse_bool("loss.symmetrize", v);
        });
    add("loss.proj_dim", [](const RunConfig& c) { return std::to_string(c.loss.proj_dim); },
        [](RunConfig& c, const std::string& v) { c.loss.proj_dim = parse_int("loss.proj_dim", v); });
    add("encoder.variant",
        [](const RunConfig& c) {
          return c.enc.variant == EncoderConfig::Variant::Flat ? "flat" : "hierarchical";
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "flat") c.enc.variant = EncoderConfig::Variant::Flat;
          else if (v == "hierarchical") c.enc.variant = EncoderConfig::Variant::Hierarchical;
          else fail("ConfigError", "encoder.variant must be hierarchical or flat");
        });
    add("encoder.input_shape", [](const RunConfig& c) { return fmt_shape3(c.enc.input_shape); },
        [](RunConfig& c, const std::string& v) {
          c.enc.input_shape = parse_shape3("encoder.input_shape", v);
        });
    add("encoder.in_channels", [](const RunConfig& c) { return std::to_string(c.enc.in_channels); },
        [](RunConfig& c, const std::string& v) {
          c.enc.in_channels = parse_int("encoder.in_channels", v);
        });
    add("encoder.patch_size", [](const RunConfig& c) { return fmt_shape3(c.enc.patch_size); },
        [](RunConfig& c, const std::string& v) {
          c.enc.patch_size = parse_shape3("encoder.patch_size", v);
        });
    add("encoder.n_stages", [](const RunConfig& c) { return std::to_string(c.enc.n_stages); },
        [](RunConfig& c, const std::string& v) { c.enc.n_stages = parse_int("encoder.n_stages", v); });
    add("encoder.blocks_per_stage",
        [](const RunConfig& c) { return std::to_string(c.enc.blocks_per_stage); },
        [](RunConfig& c, const std::string& v) {
          c.enc.blocks_per_stage = parse_int("encoder.blocks_per_stage", v);
        });
    add("encoder.embed_dim", [](const RunConfig& c) { return std::to_string(c.enc.embed_dim); },
        [](RunConfig& c, const std::string& v) { c.enc.embed_dim = parse_int("encoder.embed_dim", v); });
    add("encoder.window", [](const RunConfig& c) { return fmt_shape3(c.enc.window); },
        [](RunConfig& c, const std::string& v) { c.enc.window = parse_shape3("encoder.window", v); });
    add("encoder.heads", [](const RunConfig& c) { return std::to_string(c.enc.n_heads); },
        [](RunConfig& c, const std::string& v) { c.enc.n_heads = parse_int("encoder.heads", v); });
    add("encoder.shifted_windows",
        [](const RunConfig& c) { return c.enc.shifted_windows ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
          c.enc.shifted_windows = parse_bool("encoder.shifted_windows", v);
        });
    add("encoder.mlp_ratio", [](const RunConfig& c) { return fmt_double(c.enc.mlp_ratio); },
        [](RunConfig& c, const std::string& v) {
          c.enc.mlp_ratio = parse_double("encoder.mlp_ratio", v);
        });
    add("encoder.pos_emb_std", [](const RunConfig& c) { return fmt_double(c.enc.pos_emb_std); },
        [](RunConfig& c, const std::string& v) {
          c.enc.pos_emb_std = parse_double("encoder.pos_emb_std", v);
        });
    add("encoder.center_input",
        [](const RunConfig& c) { return c.enc.center_input ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
          c.enc.center_input = parse_bool("encoder.center_input", v);
        });
    add("augment.noise_std", [](const RunConfig& c) { return fmt_range(c.aug.noise_std); },
        [](RunConfig& c, const std::string& v) { c.aug.noise_std = parse_range("augment.noise_std", v); });
    add("augment.gibbs_cutoff", [](const RunConfig& c) { return fmt_range(c.aug.gibbs_cutoff); },
        [](RunConfig& c, const std::string& v) {
          c.aug.gibbs_cutoff = parse_range("augment.gibbs_cutoff", v);
        });
    add("augment.scale", [](const RunConfig& c) { return fmt_range(c.aug.intensity_scale); },
        [](RunConfig& c, const std::string& v) {
          c.aug.intensity_scale = parse_range("augment.scale", v);
        });
    add("augment.shift", [](const RunConfig& c) { return fmt_range(c.aug.intensity_shift); },
        [](RunConfig& c, const std::string& v) {
          c.aug.intensity_shift = parse_range("augment.shift", v);
        });
    add("augment.prob_noise", [](const RunConfig& c) { return fmt_double(c.aug.prob_noise); },
        [](RunConfig& c, const std::string& v) {
          c.aug.prob_noise = parse_double("augment.prob_noise", v);
        });
    add("augment.prob_gibbs", [](const RunConfig& c) { return fmt_double(c.aug.prob_gibbs); },
        [](RunConfig& c, const std::string& v) {
          c.aug.prob_gibbs = parse_double("augment.prob_gibbs", v);
        });
    add("augment.prob_scale", [](const RunConfig& c) { return fmt_double(c.aug.prob_scale); },
        [](RunConfig& c, const std::string& v) {
          c.aug.prob_scale = parse_double("augment.prob_scale", v);
        });
    add("augment.prob_shift", [](const RunConfig& c) { return fmt_double(c.aug.prob_shift); },
        [](RunConfig& c, const std::string& v) {
          c.aug.prob_shift = parse_double("augment.prob_shift", v);
        });
    add("augment.mask_ratio", [](const RunConfig& c) { return fmt_double(c.aug.mask_ratio); },
        [](RunConfig& c, const std::string& v) {
          c.aug.mask_ratio = parse_double("augment.mask_ratio", v);
        });
    add("augment.mask_block", [](const RunConfig& c) { return c.mask_block_spec; },
        [](RunConfig& c, const std::string& v) {
          if (v != "auto") parse_shape3("augment.mask_block", v);  // validate format
          c.mask_block_spec = v;
        });
    add("augment.mask_on_rotated_view",
        [](const RunConfig& c) { return c.aug.mask_on_rotated_view ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
          c.aug.mask_on_rotated_view = parse_bool("augment.mask_on_rotated_view", v);
        });
    add("augment.spatial_enabled",
        [](const RunConfig& c) { return c.aug.spatial_enabled ? "true" : "false"; },
        [](RunConfig& c, const std::string& v) {
          c.aug.spatial_enabled = parse_bool("augment.spatial_enabled", v);
        });
    add("finetune.checkpoint", [](const RunConfig& c) { return c.finetune_checkpoint; },
        [](RunConfig& c, const std::string& v) { c.finetune_checkpoint = v; });
    add("finetune.n_classes", [](const RunConfig& c) { return std::to_string(c.finetune_n_classes); },
        [](RunConfig& c, const std::string& v) {
          c.finetune_n_classes = parse_int("finetune.n_classes", v);
        });
    return f;
  }();
  return fields;
}

const Field& field_for(const std::string& key) {
  for (const auto& f : schema())
    if (f.key == key) return f;
  fail("ConfigError", "unknown configuration key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : schema()) keys.push_back(f.key);
  return keys;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  field_for(key).set(cfg, value);
}

std::string RunConfig::resolved_run_id() const {
  if (!run_id.empty()) return run_id;
  return mode + "_" + framework + "_s" + std::to_string(seed);
}

AugmentationConfig RunConfig::resolved_augment() const {
  AugmentationConfig a = aug;
  if (mask_block_spec == "auto") a.mask_block = enc.coarse_patch();
  else a.mask_block = parse_shape3("augment.mask_block", mask_block_spec);
  return a;
}

void RunConfig::validate() const {
  require(batch_size >= 1, "ConfigError", "batch_size must be >= 1");
  require(epochs >= 1, "ConfigError", "epochs must be >= 1");
  require(lr > 0.0, "ConfigError", "optimizer.lr must be > 0");
  require(eval_cadence >= 1, "ConfigError", "eval_cadence must be >= 1");
  require(!data_path.empty(), "ConfigError", "data.path is required");
  enc.validate();
  resolved_augment().validate();
  loss.validate();
  if (mode == "finetune")
    require(labeled_fraction > 0.0 && labeled_fraction <= 1.0, "InvalidFraction",
            "data.labeled_fraction must be in (0,1]");
}

std::string RunConfig::snapshot() const {
  std::ostringstream os;
  for (const auto& f : schema()) {
    if (f.key == "optimizer.poly_exponent") {
      os << f.key << " = ";
      std::ostringstream tmp;
      tmp.precision(17);
      tmp << resolved_poly_exponent();
      os << tmp.str() << "\n";
      continue;
    }
    if (f.key == "run_id") {
      os << f.key << " = " << resolved_run_id() << "\n";
      continue;
    }
    os << f.key << " = " << f.get(*this) << "\n";
  }
  return os.str();
}

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    require(eq != std::string::npos, "ConfigError",
            "line " + std::to_string(lineno) + " is not 'key = value': " + t);
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    field_for(key).set(cfg, value);
  }
  for (const auto& ov : overrides) {
    size_t eq = ov.find('=');
    require(eq != std::string::npos, "ConfigError", "override must be key=value: " + ov);
    field_for(trim(ov.substr(0, eq))).set(cfg, trim(ov.substr(eq + 1)));
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  require(is.good(), "ConfigError", "cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), overrides);
}

}  // namespace trot
