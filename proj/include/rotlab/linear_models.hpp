#pragma once

// Linear regression with the noise marginalized out, plus the two angle
// demonstrations for classifiers.

#include "rotlab/rotation.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rotlab {

struct RegressionProblem {
  Mat X;  ///< N×D design
  Vec y;  ///< N targets
  double lambda = 0.0;  ///< noise strength (1-p)/p

  void validate() const;
};

/// XᵀX + λ(trace(XᵀX) I - XᵀX)/(D-1); the divisor is D for odd D.
Mat rotation_system_matrix(const RegressionProblem& p);
/// XᵀX + λ diag(XᵀX).
Mat dropout_system_matrix(const RegressionProblem& p);

/// Minimizer of E_R Σ (y_i - wᵀ R_i x_i)². Throws NumericalError when the
/// system is singular (smallest LDLT pivot below 1e-12 relative).
Vec solve_rotation_lr(const RegressionProblem& p);
/// Minimizer of the dropout-marginalized objective.
Vec solve_dropout_lr(const RegressionProblem& p);

struct ConditionNumbers {
  double rotation;  ///< +inf when singular
  double dropout;   ///< +inf when singular
};

/// Spectral condition numbers of both system matrices.
ConditionNumbers condition_numbers(const RegressionProblem& p);

/// Condition number of a symmetric PSD matrix; +inf when the smallest
/// eigenvalue is not above 1e-12 times the largest.
double spd_condition_number(const Mat& m);

struct MeanEstimate {
  double mean = 0.0;
  double stderr = 0.0;
};

/// cos² of the angle between x and its inverted-dropout image, for x with
/// i.i.d. |N(0,1)| entries.
MeanEstimate dropout_rotation_angle(std::size_t dim, double keep_rate, std::uint64_t n_samples,
                                    Rng& rng);

struct FlipPoint {
  double margin = 0.0;
  double flip_rate = 0.0;
  double stderr = 0.0;
};

/// P(argmax_k w_k·Rx differs from argmax_k w_k·x). Rows of W are normalized
/// first. Ties are broken uniformly at random, in expectation.
FlipPoint logistic_flip_rate(const Mat& W, const Vec& x, const RotationSampler& sampler,
                             std::uint64_t n_samples, Rng& rng);

/// Flip rate against the angular margin between x and the bisector of the
/// first two weight rows. x is placed in their plane at the given margin,
/// tilted toward row 0. Default grid: 20 margins over [0, 1.5·angle_scale].
std::vector<FlipPoint> logistic_margin_demo(const Mat& W, const RotationSampler& sampler,
                                            const std::vector<double>& margins,
                                            std::uint64_t n_samples, Rng& rng);
std::vector<double> default_margin_grid(const RotationSampler& sampler);

void write_kappa_csv_header(std::ostream& os);
void write_kappa_csv_row(std::ostream& os, double lambda, const std::string& method,
                         std::size_t dim, std::size_t n, double kappa);
void write_flip_csv(std::ostream& os, const std::vector<FlipPoint>& curve);

}  // namespace rotlab
