#pragma once

#include <string>
#include <vector>

#include "trot/volume.hpp"

namespace trot {

// Parameters of the synthetic multi-class "organ blob" dataset. Every volume
// is background noise plus, per class, a few axis-aligned ellipsoids with a
// class-specific intensity band. Later classes overwrite earlier ones.
struct DatasetSpec {
  int n_volumes = 20;
  Shape3 shape{32, 32, 32};
  int n_channels = 1;
  int n_classes = 3;                       // K foreground classes; label 0 is background
  int blobs_min = 1, blobs_max = 3;        // ellipsoid count range per class
  double radius_min_frac = 0.08, radius_max_frac = 0.22;  // semi-axes as fraction of extent
  std::vector<std::pair<double, double>> class_intensity;  // per class; filled by default_bands()
  double background_noise = 0.05;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  uint64_t seed = 1;

  // Evenly spaced intensity bands over (0.25, 0.95) when none are given.
  void fill_default_bands();
  void validate(int downsample_divisor) const;
};

// Deterministic generation; the RNG draw order is fixed and documented in the
// implementation so an independent oracle can replay it.
std::vector<Volume> generate_dataset(const DatasetSpec& spec);

// Directory layout: index.txt (key-value) + one vol_<id>.bin per volume with a
// fixed binary header followed by raw little-endian arrays.
void save_dataset(const std::vector<Volume>& ds, const DatasetSpec& spec, const std::string& dir);

struct LoadedDataset {
  std::vector<Volume> volumes;
  int n_classes = 0;
};

LoadedDataset load_dataset(const std::string& dir);

Volume load_volume_file(const std::string& path, const std::string& id);
void save_volume_file(const Volume& v, const std::string& path);

struct DatasetSplit {
  std::vector<int> train, val, test;  // indices into the source collection
};

// Seed-deterministic shuffle split. Fractions must sum to 1 within 1e-9.
DatasetSplit split_dataset(int n_volumes, const std::array<double, 3>& fractions, uint64_t seed);

// First ceil(fraction*n) entries of a seed-deterministic shuffle; subsets nest
// across fractions for a fixed seed.
std::vector<int> subsample_labeled(const std::vector<int>& train, double fraction, uint64_t seed);

}  // namespace trot
