#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace rotlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Invalid arguments or violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A bad configuration key or value. The CLI maps this to exit status 2.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Singular systems, degenerate statistics. The CLI maps this to exit status 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

/// Seeds a stream from (seed, stream) so that chunks and grid points get
/// independent, reproducible generators.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// splitmix64 finalizer.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Welford accumulator for a scalar stream.
class RunningStats {
 public:
  void push(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  void merge(const RunningStats& o);
  std::uint64_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance.
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stderr_mean() const {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Parses counts written as "1000000", "1e6" or "2.5e5".
std::uint64_t parse_count(const std::string& text);

}  // namespace rotlab
