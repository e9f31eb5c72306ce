#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "trot/augmentation.hpp"
#include "trot/encoder.hpp"
#include "trot/objectives.hpp"

namespace trot {

// Flat, human-readable run configuration ("key = value" lines, '#' comments).
// Unknown keys are rejected; overrides are type-checked against the schema.
struct RunConfig {
  std::string mode = "pretrain";  // pretrain | finetune
  std::string run_id;             // derived from mode+framework+seed when empty
  std::string out_dir = "runs";
  std::string framework = "simtrot";
  uint64_t seed = 1;

  std::string data_path;
  std::array<double, 3> data_split{0.8, 0.15, 0.05};
  uint64_t split_seed = 12345;  // kept apart from the run seed so every run sees the same split
  double labeled_fraction = 1.0;

  int batch_size = 2;
  int epochs = 50;
  int eval_cadence = 25;        // steps between diagnostic evaluations
  int checkpoint_cadence = 0;   // 0 = final checkpoint only

  double lr = 1e-4;
  double momentum = 0.99;
  bool nesterov = true;
  double poly_exponent = -1.0;  // auto: 0 for pretrain, 0.9 for finetune

  EncoderConfig enc;
  AugmentationConfig aug;
  std::string mask_block_spec = "auto";  // auto = coarsest token receptive patch
  LossConfig loss;

  std::string finetune_checkpoint;  // empty = train from scratch
  int finetune_n_classes = 0;       // 0 = read from dataset index

  double resolved_poly_exponent() const {
    if (poly_exponent >= 0.0) return poly_exponent;
    return mode == "finetune" ? 0.9 : 0.0;
  }

  std::string resolved_run_id() const;
  AugmentationConfig resolved_augment() const;  // mask_block resolved against the encoder
  void validate() const;

  // schema-ordered "key = value" snapshot that reproduces this config
  std::string snapshot() const;
};

RunConfig parse_config_file(const std::string& path, const std::vector<std::string>& overrides);
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides);

// Applies "key=value" to an existing config (used by the ablation grid).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

std::vector<std::string> config_keys();

}  // namespace trot
