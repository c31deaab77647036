#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ge2e {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Error categories. Validation errors map to CLI exit code 2,
/// numerical errors to exit code 3.
enum class ErrorKind {
  SilentInput,
  TooShort,
  NoSpeech,
  NumericalError,
  DegenerateEmbedding,
  DegenerateCentroid,
  DegenerateInput,
  ShapeError,
  InsufficientUtterances,
  CorpusTooSmall,
  NoTrials,
  PartitionEmpty,
  OpenSetViolation,
  EmptyManifest,
  FormatError,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  bool numerical() const {
    return kind_ == ErrorKind::NumericalError ||
           kind_ == ErrorKind::DegenerateEmbedding ||
           kind_ == ErrorKind::DegenerateCentroid ||
           kind_ == ErrorKind::DegenerateInput;
  }

 private:
  ErrorKind kind_;
};

/// Deterministic RNG. mt19937_64 plus hand-rolled distributions so that
/// streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Derives an independent stream, e.g. per evaluation iteration.
  static Rng derive(std::uint64_t seed, std::uint64_t index) {
    return Rng(seed * 0x9e3779b97f4a7c15ULL + index + 1);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  /// Standard normal via Box-Muller (no state caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

constexpr double kPi = 3.14159265358979323846;

}  // namespace ge2e
