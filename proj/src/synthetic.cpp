#include "trot/synthetic.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace trot {

namespace fs = std::filesystem;

void DatasetSpec::fill_default_bands() {
  if (!class_intensity.empty()) return;
  for (int k = 0; k < n_classes; ++k) {
    double c = 0.25 + 0.70 * (k + 0.5) / n_classes;
    class_intensity.emplace_back(c - 0.05, c + 0.05);
  }
}

void DatasetSpec::validate(int downsample_divisor) const {
  require(n_volumes >= 0, "InvalidSpec", "n_volumes must be >= 0");
  require(n_classes >= 1, "InvalidSpec", "n_classes must be >= 1");
  require(n_channels >= 1, "InvalidSpec", "n_channels must be >= 1");
  require(blobs_min >= 0 && blobs_max >= blobs_min, "InvalidSpec", "bad blobs_per_class range");
  for (int k = 0; k < 3; ++k) {
    require(shape[static_cast<size_t>(k)] >= 8, "InvalidSpec", "shape components must be >= 8");
    if (downsample_divisor > 1)
      require(shape[static_cast<size_t>(k)] % downsample_divisor == 0, "InvalidSpec",
              "shape " + shape3_str(shape) + " not divisible by encoder downsampling factor " +
                  std::to_string(downsample_divisor));
  }
}

// Draw order per volume (one RNG stream for the whole dataset):
//   1. background noise, channel-major voxel loop: |N(0, background_noise)|
//   2. for class k = 1..K: count ~ U{blobs_min..blobs_max}; per blob:
//      center (3 uniforms in [0, extent)), semi-axes (3 uniforms in the
//      radius fraction range scaled by extent, floored at 1.5 voxels),
//      intensity (1 uniform in the class band).
// Rasterization consumes no randomness.
std::vector<Volume> generate_dataset(const DatasetSpec& spec_in) {
  DatasetSpec spec = spec_in;
  spec.fill_default_bands();
  spec.validate(1);
  require(static_cast<int>(spec.class_intensity.size()) == spec.n_classes, "InvalidSpec",
          "class_intensity must have one band per class");
  Rng rng(spec.seed);
  std::vector<Volume> out;
  out.reserve(static_cast<size_t>(spec.n_volumes));
  const auto [d, h, w] = std::array<int, 3>{spec.shape[0], spec.shape[1], spec.shape[2]};
  for (int vi = 0; vi < spec.n_volumes; ++vi) {
    Volume v;
    std::ostringstream id;
    id << std::setw(4) << std::setfill('0') << vi;
    v.id = id.str();
    v.spacing = spec.spacing;
    v.intensities = TensorD({spec.n_channels, d, h, w});
    v.label = TensorI({d, h, w});
    for (auto& x : v.intensities.data) x = std::abs(gaussian(rng, 0.0, spec.background_noise));
    for (int k = 1; k <= spec.n_classes; ++k) {
      int count = uniform_int(rng, spec.blobs_min, spec.blobs_max);
      for (int b = 0; b < count; ++b) {
        std::array<double, 3> center, radius;
        for (int ax = 0; ax < 3; ++ax)
          center[static_cast<size_t>(ax)] = uniform(rng, 0.0, spec.shape[static_cast<size_t>(ax)]);
        for (int ax = 0; ax < 3; ++ax)
          radius[static_cast<size_t>(ax)] = std::max(
              1.5, uniform(rng, spec.radius_min_frac, spec.radius_max_frac) *
                       spec.shape[static_cast<size_t>(ax)]);
        auto band = spec.class_intensity[static_cast<size_t>(k - 1)];
        double intensity = uniform(rng, band.first, band.second);
        for (int z = 0; z < d; ++z)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              double dz = (z - center[0]) / radius[0];
              double dy = (y - center[1]) / radius[1];
              double dx = (x - center[2]) / radius[2];
              if (dz * dz + dy * dy + dx * dx <= 1.0) {
                v.label.at3(z, y, x) = k;
                for (int c = 0; c < spec.n_channels; ++c)
                  v.intensities.at4(c, z, y, x) = intensity * (1.0 + 0.1 * c);
              }
            }
      }
    }
    for (auto& x : v.intensities.data) x = std::clamp(x, 0.0, 1.0);
    v.validate(spec.n_classes);
    out.push_back(std::move(v));
  }
  return out;
}

namespace {

constexpr char kVolumeMagic[8] = {'T', 'R', 'O', 'T', 'V', 'O', 'L', '\0'};
constexpr uint32_t kVolumeVersion = 1;
constexpr uint32_t kDtypeF64 = 2;
constexpr uint32_t kDtypeI32 = 10;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(is.good(), "FormatError", "truncated file while reading " + what);
  return v;
}

}  // namespace

void save_volume_file(const Volume& v, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "IoError", "cannot open " + path + " for writing");
  os.write(kVolumeMagic, 8);
  write_pod(os, kVolumeVersion);
  write_pod(os, kDtypeF64);
  write_pod(os, kDtypeI32);
  write_pod(os, static_cast<uint32_t>(v.intensities.dim(0)));
  write_pod(os, static_cast<uint32_t>(v.intensities.dim(1)));
  write_pod(os, static_cast<uint32_t>(v.intensities.dim(2)));
  write_pod(os, static_cast<uint32_t>(v.intensities.dim(3)));
  for (double s : v.spacing) write_pod(os, s);
  write_pod(os, static_cast<uint32_t>(v.has_label() ? 1 : 0));
  os.write(reinterpret_cast<const char*>(v.intensities.data.data()),
           static_cast<std::streamsize>(v.intensities.data.size() * sizeof(double)));
  if (v.has_label())
    os.write(reinterpret_cast<const char*>(v.label.data.data()),
             static_cast<std::streamsize>(v.label.data.size() * sizeof(int32_t)));
  require(os.good(), "IoError", "write failed for " + path);
}

Volume load_volume_file(const std::string& path, const std::string& id) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "IoError", "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::memcmp(magic, kVolumeMagic, 8) == 0, "FormatError",
          "bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(is, "version");
  require(version == kVolumeVersion, "FormatError",
          "unknown volume schema version " + std::to_string(version) + " in " + path);
  uint32_t dt_i = read_pod<uint32_t>(is, "intensity dtype");
  uint32_t dt_l = read_pod<uint32_t>(is, "label dtype");
  require(dt_i == kDtypeF64, "FormatError", "unsupported intensity dtype code in " + path);
  require(dt_l == kDtypeI32, "FormatError", "unsupported label dtype code in " + path);
  int64_t c = read_pod<uint32_t>(is, "channels");
  int64_t d = read_pod<uint32_t>(is, "depth");
  int64_t h = read_pod<uint32_t>(is, "height");
  int64_t w = read_pod<uint32_t>(is, "width");
  Volume v;
  v.id = id;
  for (auto& s : v.spacing) s = read_pod<double>(is, "spacing");
  uint32_t has_label = read_pod<uint32_t>(is, "label flag");
  v.intensities = TensorD({c, d, h, w});
  is.read(reinterpret_cast<char*>(v.intensities.data.data()),
          static_cast<std::streamsize>(v.intensities.data.size() * sizeof(double)));
  require(is.good(), "FormatError", "truncated intensities in " + path);
  if (has_label) {
    v.label = TensorI({d, h, w});
    is.read(reinterpret_cast<char*>(v.label.data.data()),
            static_cast<std::streamsize>(v.label.data.size() * sizeof(int32_t)));
    require(is.good(), "FormatError", "truncated labels in " + path);
  }
  return v;
}

void save_dataset(const std::vector<Volume>& ds, const DatasetSpec& spec, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream idx(fs::path(dir) / "index.txt");
  require(idx.good(), "IoError", "cannot write index.txt under " + dir);
  idx << "schema_version = 1\n";
  idx << "n_volumes = " << ds.size() << "\n";
  idx << "n_classes = " << spec.n_classes << "\n";
  for (const auto& v : ds) {
    std::string fname = "vol_" + v.id + ".bin";
    idx << "volume " << v.id << " " << fname << "\n";
    save_volume_file(v, (fs::path(dir) / fname).string());
  }
  require(idx.good(), "IoError", "write failed for index.txt");
}

LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream idx(fs::path(dir) / "index.txt");
  require(idx.good(), "IoError", "cannot open index.txt under " + dir);
  LoadedDataset out;
  std::string line;
  int64_t n_volumes = -1;
  int schema = -1;
  while (std::getline(idx, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "volume") {
      std::string id, fname;
      ls >> id >> fname;
      require(!id.empty() && !fname.empty(), "FormatError", "malformed volume line: " + line);
      out.volumes.push_back(load_volume_file((fs::path(dir) / fname).string(), id));
    } else {
      std::string eq, value;
      ls >> eq >> value;
      require(eq == "=", "FormatError", "malformed index line: " + line);
      if (key == "schema_version") schema = std::stoi(value);
      else if (key == "n_volumes") n_volumes = std::stoll(value);
      else if (key == "n_classes") out.n_classes = std::stoi(value);
      else fail("FormatError", "unknown index key: " + key);
    }
  }
  require(schema == 1, "FormatError", "unknown index schema version " + std::to_string(schema));
  require(n_volumes == static_cast<int64_t>(out.volumes.size()), "FormatError",
          "index n_volumes disagrees with volume lines");
  return out;
}

DatasetSplit split_dataset(int n_volumes, const std::array<double, 3>& fractions, uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  require(std::abs(sum - 1.0) <= 1e-9 && fractions[0] >= 0 && fractions[1] >= 0 && fractions[2] >= 0,
          "InvalidFractions", "split fractions must be nonnegative and sum to 1");
  std::vector<int> idx(static_cast<size_t>(n_volumes));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n1 = static_cast<size_t>(fractions[0] * n_volumes + 1e-9);
  auto n2 = static_cast<size_t>(fractions[1] * n_volumes + 1e-9);
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<long>(n1));
  s.val.assign(idx.begin() + static_cast<long>(n1), idx.begin() + static_cast<long>(n1 + n2));
  s.test.assign(idx.begin() + static_cast<long>(n1 + n2), idx.end());
  return s;
}

std::vector<int> subsample_labeled(const std::vector<int>& train, double fraction, uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, "InvalidFraction",
          "labeled fraction must be in (0, 1]");
  std::vector<int> idx = train;
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n = static_cast<size_t>(std::ceil(fraction * static_cast<double>(train.size())));
  idx.resize(n);
  return idx;
}

}  // namespace trot
