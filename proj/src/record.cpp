#include "trot/record.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace trot {

namespace fs = std::filesystem;

std::string format_double_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

RunRecordWriter::RunRecordWriter(const std::string& run_dir) : dir_(run_dir) {
  fs::create_directories(run_dir);
  records_file_ = std::fopen((fs::path(run_dir) / "records.txt").string().c_str(), "w");
  timing_file_ = std::fopen((fs::path(run_dir) / "timing.txt").string().c_str(), "w");
  require(records_file_ && timing_file_, "IoError", "cannot open record files under " + run_dir);
}

RunRecordWriter::~RunRecordWriter() {
  if (!finalized_) {
    try {
      finalize();
    } catch (...) {
    }
  }
  if (records_file_) std::fclose(static_cast<FILE*>(records_file_));
  if (timing_file_) std::fclose(static_cast<FILE*>(timing_file_));
}

void RunRecordWriter::add(int64_t step, const std::string& name, double value) {
  entries_.push_back(RecordEntry{step, name, value});
  std::fprintf(static_cast<FILE*>(records_file_), "%lld\t%s\t%s\n",
               static_cast<long long>(step), name.c_str(), format_double_exact(value).c_str());
}

void RunRecordWriter::add_timing(int64_t step, double wall_ms) {
  std::fprintf(static_cast<FILE*>(timing_file_), "%lld\t%.3f\n", static_cast<long long>(step),
               wall_ms);
}

void RunRecordWriter::set_summary(const std::string& key, const std::string& value) {
  for (auto& kv : summary_)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  summary_.emplace_back(key, value);
}

void RunRecordWriter::set_summary(const std::string& key, double value) {
  set_summary(key, format_double_exact(value));
}

void RunRecordWriter::finalize() {
  std::fflush(static_cast<FILE*>(records_file_));
  std::fflush(static_cast<FILE*>(timing_file_));
  std::ofstream os(fs::path(dir_) / "summary.txt");
  require(os.good(), "IoError", "cannot write summary.txt under " + dir_);
  for (const auto& [k, v] : summary_) os << k << " = " << v << "\n";
  finalized_ = true;
}

std::vector<std::pair<int64_t, double>> RunRecord::series(const std::string& name) const {
  std::vector<std::pair<int64_t, double>> out;
  for (const auto& e : entries)
    if (e.name == name) out.emplace_back(e.step, e.value);
  return out;
}

double RunRecord::summary_double(const std::string& key) const {
  auto it = summary.find(key);
  require(it != summary.end(), "MissingRecord", "summary key " + key + " not found");
  if (it->second == "inf") return std::numeric_limits<double>::infinity();
  return std::stod(it->second);
}

namespace {

std::map<std::string, std::string> parse_kv_file(const std::string& path, bool required) {
  std::map<std::string, std::string> out;
  std::ifstream is(path);
  if (!is.good()) {
    require(!required, "MissingRecord", "missing file " + path);
    return out;
  }
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace

RunRecord load_run_record(const std::string& run_dir) {
  RunRecord rec;
  std::ifstream is(fs::path(run_dir) / "records.txt");
  require(is.good(), "MissingRecord", "no records.txt under " + run_dir);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    RecordEntry e;
    std::string value;
    ls >> e.step >> e.name >> value;
    require(!ls.fail(), "FormatError", "malformed record line: " + line);
    e.value = value == "inf" ? std::numeric_limits<double>::infinity() : std::stod(value);
    rec.entries.push_back(std::move(e));
  }
  rec.summary = parse_kv_file((fs::path(run_dir) / "summary.txt").string(), false);
  rec.config = parse_kv_file((fs::path(run_dir) / "config.cfg").string(), false);
  return rec;
}

}  // namespace trot
