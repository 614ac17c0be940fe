#pragma once

// Co-adaptation bookkeeping: conditional and total covariances of noised
// activations, and Monte-Carlo checks of the reduction factors.

#include "rotlab/regularizers.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rotlab {

struct CovStats {
  std::uint64_t n = 0;
  Vec mean;
  Mat cov;

  /// Unbiased (n - 1) estimate from the rows of `samples`.
  static CovStats from_samples(const Mat& samples);
  void validate() const;
};

/// Streaming mean/covariance over rows.
class CovAccumulator {
 public:
  explicit CovAccumulator(Eigen::Index dim);
  void push(const Vec& x);
  CovStats stats() const;
  std::uint64_t count() const { return n_; }

 private:
  std::uint64_t n_ = 0;
  Vec mean_;
  Mat m2_;
};

/// ‖Σ - diag(Σ)‖₁ / trace(Σ), entrywise L1.
double coadaptation(const Mat& cov);
inline double coadaptation(const CovStats& s) { return coadaptation(s.cov); }

enum class NoiseMethod { dropout, rotation };
std::string to_string(NoiseMethod m);
NoiseMethod parse_noise_method(const std::string& name);

/// Var[x̃ | x]: dropout λ·diag(xxᵀ); rotation λ/(D-1)·(xᵀx I - xxᵀ),
/// with λ = (1-p)/p. For odd D the rotation coefficient is λ/D.
Mat conditional_variance(const Vec& x, NoiseMethod method, double keep_rate);

/// Var[x̃] = Σ + E[Var[x̃|x]] for a source with mean c and covariance Σ.
Mat total_variance(const CovStats& s, NoiseMethod method, double keep_rate);

/// Factor by which co-adaptation shrinks for centered inputs:
/// p for dropout, p - (1-p)/(D-1) for rotation (even D).
double reduction_factor(NoiseMethod method, double keep_rate, std::size_t dim);

/// Multivariate normal source sampled through a Cholesky factor.
class GaussianSource {
 public:
  GaussianSource(Vec mean, Mat cov);
  /// Unit variances with common correlation ρ.
  static GaussianSource equicorrelated(std::size_t dim, double rho);

  Eigen::Index dim() const { return mean_.size(); }
  const Vec& mean() const { return mean_; }
  const Mat& cov() const { return cov_; }
  Vec sample(Rng& rng) const;
  Mat sample(std::size_t n, Rng& rng) const;

 private:
  Vec mean_;
  Mat cov_;
  Mat factor_;
};

struct CoadaptReport {
  std::string method;
  double keep_rate = 1.0;
  std::size_t dim = 0;
  std::uint64_t n = 0;
  double co_input = 0.0;
  double co_output = 0.0;
  double predicted_factor = 0.0;
  /// NaN when co_input is zero; check `factor_defined`.
  double observed_factor = 0.0;
  double stderr_factor = 0.0;
  bool factor_defined = true;
};

/// Samples the source, centers each sample with the source mean, applies the
/// op and compares co(output)/co(input) with the closed-form factor. The
/// standard error comes from independent chunks.
CoadaptReport verify_reduction(const GaussianSource& source, NoiseMethod method,
                               double keep_rate, std::uint64_t n_samples, std::uint64_t seed,
                               std::size_t chunks = 20);

/// The NoiseOp that realizes `method` at keep rate p (rotation uses a
/// Gaussian tangent with σ² = (1-p)/p).
NoiseOpSpec noise_spec_for(NoiseMethod method, double keep_rate);

/// Monte-Carlo E[(x̃ - x)(x̃ - x)ᵀ | x] with entrywise standard errors.
struct ConditionalMoments {
  Vec mean_shift;     ///< E[x̃ - x]
  Vec mean_stderr;
  Mat cov;            ///< E[(x̃ - x)(x̃ - x)ᵀ]
  Mat cov_stderr;
};
ConditionalMoments mc_conditional_moments(const NoiseOp& op, const Vec& x, std::uint64_t n,
                                          Rng& rng);

void write_coadapt_csv_header(std::ostream& os);
void write_coadapt_csv_row(std::ostream& os, const CoadaptReport& r);

}  // namespace rotlab
