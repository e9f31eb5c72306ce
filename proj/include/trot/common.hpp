#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace trot {

// All library failures carry a short machine-checkable code ("ShapeNotInvariant",
// "FormatError", ...) plus a human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, const std::string& code, const std::string& message) {
  if (!cond) fail(code, message);
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

inline double gaussian(Rng& rng, double mean, double std) {
  std::normal_distribution<double> d(mean, std);
  return d(rng);
}

using Shape3 = std::array<int, 3>;

inline std::string shape3_str(const Shape3& s) {
  std::ostringstream os;
  os << s[0] << "x" << s[1] << "x" << s[2];
  return os.str();
}

inline long long prod3(const Shape3& s) {
  return static_cast<long long>(s[0]) * s[1] * s[2];
}

// Runtime scalar width selected by the TROT_PRECISION environment variable
// (float32 | float64, default float64).
enum class Precision { Float32, Float64 };

inline Precision precision_from_string(const std::string& s) {
  if (s == "float32" || s == "f32" || s == "32") return Precision::Float32;
  if (s == "float64" || s == "f64" || s == "64" || s.empty()) return Precision::Float64;
  fail("ConfigError", "unknown precision '" + s + "' (expected float32 or float64)");
}

inline Precision precision_from_env() {
  const char* v = std::getenv("TROT_PRECISION");
  return precision_from_string(v ? std::string(v) : "");
}

}  // namespace trot
