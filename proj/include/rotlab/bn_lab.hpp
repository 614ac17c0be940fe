#pragma once

// Batch-normalization statistics under noise and at small batch sizes.

#include "rotlab/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rotlab {

// ---------------------------------------------------------------------------
// Variance shift between train-mode (noised) and test-mode BN inputs.

enum class DropoutPlacement {
  a,  ///< weight -> dropout -> BN
  b,  ///< dropout -> weight -> BN
};
std::string to_string(DropoutPlacement p);
DropoutPlacement parse_placement(const std::string& name);

struct FeatureMoments {
  Vec mean;  ///< c
  Mat cov;   ///< Σ
  void validate() const;
};

/// Mean and covariance of ReLU(z) for z ~ N(0, Σz), via the arc-cosine kernel.
FeatureMoments relu_gaussian_moments(const Mat& latent_cov);

/// n rows uniform on the unit sphere in R^D.
Mat sample_sphere_rows(std::size_t n, std::size_t dim, Rng& rng);

struct ShiftReport {
  DropoutPlacement placement = DropoutPlacement::a;
  bool centered = false;
  double keep_rate = 1.0;
  std::size_t dim = 0;
  Vec var_train;  ///< closed form
  Vec var_test;   ///< (WΣWᵀ)_ii
  Vec ratio;      ///< max(train/test, test/train)
  double ratio_mean = 0.0, ratio_var = 0.0, ratio_max = 0.0;
  /// Filled when Monte-Carlo cross-checking was requested.
  std::optional<Vec> mc_var_train;
  std::optional<Vec> mc_var_train_stderr;
};

/// Closed-form per-unit train/test variances of the BN input for dropout-a
/// or dropout-b, optionally with zero-centered dropout. With n_mc > 0 the
/// train variances are also simulated from Gaussian features with the same
/// moments.
ShiftReport variance_shift(DropoutPlacement placement, bool centered, double keep_rate,
                           const FeatureMoments& features, const Mat& W, std::uint64_t n_mc = 0,
                           std::uint64_t seed = 0);

void write_shift_csv_header(std::ostream& os);
void write_shift_csv_rows(std::ostream& os, const ShiftReport& r);

/// Low-rank plus diagonal latent covariance A Aᵀ/k + I/2, A ∈ R^{D×k} with
/// standard normal entries, k = max(1, D/4).
Mat random_latent_cov(std::size_t dim, Rng& rng);

/// One repetition of the placement comparison: fresh latent covariance and
/// fresh sphere rows, then dropout-a, dropout-b and centered dropout-a.
struct ShiftTrial {
  ShiftReport a, b, a_centered;
  bool b_has_smaller_spread() const { return b.ratio_var < a.ratio_var; }
  bool a_has_larger_max() const { return a.ratio_max > b.ratio_max; }
};
ShiftTrial variance_shift_trial(std::size_t dim, std::size_t rows, double keep_rate,
                                std::uint64_t seed, std::uint64_t rep);

void write_shift_summary_csv_header(std::ostream& os);
void write_shift_summary_csv_row(std::ostream& os, std::uint64_t rep, const ShiftTrial& t);

// ---------------------------------------------------------------------------
// Batch normalization.

struct BatchNormState {
  Vec running_mean;
  Vec running_var;
  Vec gamma;
  Vec beta;
  double eps = 1e-5;
  double momentum = 0.1;
  std::uint64_t updates = 0;

  explicit BatchNormState(Eigen::Index units = 0, double eps = 1e-5, double momentum = 0.1);
  bool populated() const { return updates > 0; }
  void validate() const;
};

struct BatchNormCache {
  Mat xhat;      ///< normalized values
  Vec inv_std;   ///< 1/sqrt(σ²_B + ε) per unit
};

/// Normalizes each column of a B×U batch with its biased batch statistics,
/// then updates the running mean and the unbiased running variance. The
/// first update copies the batch statistics; later ones use the momentum.
Mat bn_train_forward(const Mat& batch, BatchNormState& state, BatchNormCache* cache = nullptr);

/// (x - μ_B) / sqrt(σ²_B + ε) for one batch vector, without state.
Vec standardize_batch(const Vec& batch, double eps);

struct PolyCoeffs {
  double a1 = 1.0, a3 = 0.0, a5 = 0.0, a7 = 0.0;
  double rmse = 0.0;
  double operator()(double x) const {
    const double x2 = x * x;
    return x * (a1 + x2 * (a3 + x2 * (a5 + x2 * a7)));
  }
};

struct TestCorrection {
  enum class Kind { none, keep_rate, poly };
  Kind kind = Kind::none;
  double keep_rate = 1.0;  ///< running variance is multiplied by p
  PolyCoeffs poly;

  static TestCorrection none() { return {}; }
  static TestCorrection divide_running_var(double keep_rate);
  static TestCorrection polynomial(const PolyCoeffs& c);
};

/// Test-mode normalization of an N×U batch with the running statistics.
Mat bn_test_forward(const Mat& x, const BatchNormState& state,
                    const TestCorrection& correction = TestCorrection::none());

// ---------------------------------------------------------------------------
// Small-batch nonlinearity.

enum class SourceDist { gaussian, uniform, uniform_square, uniform_cube, laplace };
std::string to_string(SourceDist d);
SourceDist parse_source_dist(const std::string& name);
std::vector<SourceDist> all_source_dists();

/// Raw draw (N(0,1), Unif(0,1), U², U³, Laplace(0,1)).
double sample_raw(SourceDist d, Rng& rng);
double raw_mean(SourceDist d);
double raw_variance(SourceDist d);
/// Draw standardized to mean 0, variance 1.
double sample_standardized(SourceDist d, Rng& rng);
/// Density of the standardized distribution.
double standardized_pdf(SourceDist d, double z);

/// Train-mode statistic of x1 written through the statistics of the other
/// B-1 points: sqrt((B-1)/B)·(x1-μ)/sqrt(σ² + (x1-μ)²/B), with μ, σ² the mean
/// and 1/(B-1) variance of `others`.
double f_train_leave_one_out(double x1, std::span<const double> others);

/// Direct (x1 - μ_B)/σ_B over the whole batch, batch[0] = x1, ε = 0.
double f_train_direct(std::span<const double> batch);

struct CurvePoint {
  double x_test = 0.0;    ///< f_Test abscissa
  double f_expect = 0.0;
  double f_var = 0.0;
  double stderr = 0.0;    ///< of f_expect
};

struct NonlinearityCurve {
  SourceDist dist = SourceDist::gaussian;
  std::size_t batch = 0;
  std::vector<CurvePoint> points;
};

std::vector<double> make_grid(double lo, double hi, double step);

/// For each f_Test value x (standardized source, so f_Test(x) = x), draws
/// n_mc sets of B-1 companions and averages the train-mode statistic.
/// Point i uses stream i of `seed`.
NonlinearityCurve mc_nonlinearity_curve(SourceDist dist, std::size_t batch,
                                        const std::vector<double>& grid, std::uint64_t n_mc,
                                        std::uint64_t seed);

enum class PolyWeighting {
  uniform,         ///< plain least squares over the grid
  source_density,  ///< weights = standardized source density at each abscissa
};

/// Least-squares odd polynomial a1 x + a3 x³ + a5 x⁵ + a7 x⁷ through
/// (x_test, f_expect). rmse is the (weighted) residual RMS.
PolyCoeffs fit_poly_correction(const NonlinearityCurve& curve,
                               PolyWeighting weighting = PolyWeighting::source_density);

/// Normalizer for the leave-one-out statistics.
enum class CrossNormalizer {
  remaining,    ///< 1/(B-1): mean and variance of the other B-1 points
  batch_size,   ///< 1/B for both, as literally written
};

/// Each element normalized by the mean/variance of the other elements.
Vec cross_normalize(const Vec& batch, double gamma = 1.0, double beta = 0.0, double eps = 1e-5,
                    CrossNormalizer normalizer = CrossNormalizer::remaining);

/// E[CN output of x1 | x1 = x] with ε = 0 and γ = 1, β = 0, companions drawn
/// from the standardized source. The result is linear in x.
NonlinearityCurve mc_cross_norm_curve(SourceDist dist, std::size_t batch,
                                      const std::vector<double>& grid, std::uint64_t n_mc,
                                      std::uint64_t seed,
                                      CrossNormalizer normalizer = CrossNormalizer::remaining);

/// Leave-one-out mean and variance for element i.
std::pair<double, double> leave_one_out_stats(const Vec& batch, Eigen::Index i,
                                              CrossNormalizer normalizer);

struct NoiseBudget {
  double value = 0.0;
  double stderr = 0.0;
};

/// E_x[f_Var(x, B)] for x from the standardized source: each draw pairs two
/// independent companion sets for the same x, (f₁ - f₂)²/2 is unbiased.
NoiseBudget noise_budget(std::size_t batch, SourceDist dist, std::uint64_t n_mc, Rng& rng);

void write_curve_csv_header(std::ostream& os);
void write_curve_csv_rows(std::ostream& os, const NonlinearityCurve& c);
void write_poly_csv_header(std::ostream& os);
void write_poly_csv_row(std::ostream& os, std::size_t batch, const PolyCoeffs& c);

}  // namespace rotlab
