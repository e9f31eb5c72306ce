#pragma once

#include <map>
#include <string>
#include <vector>

#include "trot/common.hpp"

namespace trot {

// Line-delimited training trajectory: one "<step>\t<name>\t<value>" record per
// line, plus a key-value summary file. Wall-clock timing goes to a separate
// sidecar so the deterministic artifacts stay byte-comparable across runs.
struct RecordEntry {
  int64_t step = 0;
  std::string name;
  double value = 0.0;
};

class RunRecordWriter {
 public:
  explicit RunRecordWriter(const std::string& run_dir);
  ~RunRecordWriter();

  void add(int64_t step, const std::string& name, double value);
  void add_timing(int64_t step, double wall_ms);
  void set_summary(const std::string& key, const std::string& value);
  void set_summary(const std::string& key, double value);
  void finalize();  // writes summary.txt

  const std::vector<RecordEntry>& entries() const { return entries_; }
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<RecordEntry> entries_;
  std::vector<std::pair<std::string, std::string>> summary_;
  void* records_file_;  // FILE*
  void* timing_file_;
  bool finalized_ = false;
};

struct RunRecord {
  std::vector<RecordEntry> entries;
  std::map<std::string, std::string> summary;
  std::map<std::string, std::string> config;  // effective snapshot

  std::vector<std::pair<int64_t, double>> series(const std::string& name) const;
  double summary_double(const std::string& key) const;
  bool has_summary(const std::string& key) const { return summary.count(key) > 0; }
};

// Throws MissingRecord when the directory lacks a record stream.
RunRecord load_run_record(const std::string& run_dir);

std::string format_double_exact(double v);

}  // namespace trot
