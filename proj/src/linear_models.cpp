#include "rotlab/linear_models.hpp"

#include "rotlab/csv.hpp"

#include <limits>
#include <ostream>

namespace rotlab {

void RegressionProblem::validate() const {
  if (X.rows() < 1) throw Error("regression needs at least one sample");
  if (X.rows() != y.size()) throw Error("design rows and targets differ in length");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("lambda must be non-negative");
}

Mat rotation_system_matrix(const RegressionProblem& p) {
  p.validate();
  const Eigen::Index d = p.X.cols();
  if (d < 2) throw Error("rotation undefined below dimension 2");
  const Mat gram = p.X.transpose() * p.X;
  return gram + p.lambda / pair_denominator(d) *
                    (gram.trace() * Mat::Identity(d, d) - gram);
}

Mat dropout_system_matrix(const RegressionProblem& p) {
  p.validate();
  const Mat gram = p.X.transpose() * p.X;
  return gram + p.lambda * Mat(gram.diagonal().asDiagonal());
}

namespace {

Vec solve_spd(const Mat& a, const Vec& b) {
  Eigen::LDLT<Mat> ldlt(a);
  const Vec pivots = ldlt.vectorD();
  const double largest = pivots.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(largest > 0.0) || pivots.minCoeff() <= 1e-12 * largest) {
    throw NumericalError("singular regularized system (unbounded condition number)");
  }
  return ldlt.solve(b);
}

}  // namespace

Vec solve_rotation_lr(const RegressionProblem& p) {
  return solve_spd(rotation_system_matrix(p), p.X.transpose() * p.y);
}

Vec solve_dropout_lr(const RegressionProblem& p) {
  return solve_spd(dropout_system_matrix(p), p.X.transpose() * p.y);
}

double spd_condition_number(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  const Vec ev = es.eigenvalues();
  const double hi = ev.maxCoeff(), lo = ev.minCoeff();
  if (!(hi > 0.0) || lo <= 1e-12 * hi) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

ConditionNumbers condition_numbers(const RegressionProblem& p) {
  const Mat gram = p.X.transpose() * p.X;
  if (!(gram.trace() > 0.0)) throw Error("condition numbers need trace(XᵀX) > 0");
  return {spd_condition_number(rotation_system_matrix(p)),
          spd_condition_number(dropout_system_matrix(p))};
}

MeanEstimate dropout_rotation_angle(std::size_t dim, double keep_rate, std::uint64_t n_samples,
                                    Rng& rng) {
  if (dim < 2) throw Error("angle demo needs dim >= 2");
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) throw Error("keep rate must lie in (0, 1]");
  std::normal_distribution<double> z;
  std::bernoulli_distribution keep(keep_rate);
  RunningStats stats;
  for (std::uint64_t s = 0; s < n_samples; ++s) {
    double xx = 0.0, xy = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = std::abs(z(rng));
      const double y = keep(rng) ? x / keep_rate : 0.0;
      xx += x * x;
      xy += x * y;
      yy += y * y;
    }
    stats.push(yy > 0.0 ? xy * xy / (xx * yy) : 0.0);
  }
  return {stats.mean(), stats.stderr_mean()};
}

namespace {

Mat normalized_rows(const Mat& W) {
  if (W.rows() < 2) throw Error("flip-rate demo needs at least two weight rows");
  Mat out = W;
  for (Eigen::Index k = 0; k < out.rows(); ++k) {
    const double n = out.row(k).norm();
    if (!(n > 0.0)) throw Error("weight rows must be nonzero");
    out.row(k) /= n;
  }
  return out;
}

Eigen::Index reference_class(const Vec& scores) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < scores.size(); ++k) {
    if (scores(k) > scores(best)) best = k;
  }
  return best;
}

// Expected flip indicator under uniform random tie-breaking.
double flip_indicator(const Vec& scores, Eigen::Index ref) {
  int greater = 0, equal = 0;
  for (Eigen::Index k = 0; k < scores.size(); ++k) {
    if (k == ref) continue;
    if (scores(k) > scores(ref)) ++greater;
    else if (scores(k) == scores(ref)) ++equal;
  }
  if (greater > 0) return 1.0;
  return static_cast<double>(equal) / static_cast<double>(equal + 1);
}

}  // namespace

FlipPoint logistic_flip_rate(const Mat& W, const Vec& x, const RotationSampler& sampler,
                             std::uint64_t n_samples, Rng& rng) {
  const Mat Wn = normalized_rows(W);
  if (Wn.cols() != x.size()) throw Error("weight width and input dimension differ");
  const Eigen::Index ref = reference_class(Wn * x);
  const auto dim = static_cast<std::size_t>(x.size());
  RunningStats stats;
  Vec rx(x.size());
  for (std::uint64_t s = 0; s < n_samples; ++s) {
    const RotationRealization r = sampler.sample(dim, rng);
    apply_rotation({x.data(), dim}, r.pairing, r.tangents[0], {rx.data(), dim});
    stats.push(flip_indicator(Wn * rx, ref));
  }
  return {0.0, stats.mean(), stats.stderr_mean()};
}

std::vector<double> default_margin_grid(const RotationSampler& sampler) {
  const double top = 1.5 * sampler.angle.angle_scale();
  std::vector<double> grid(20);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = top * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
  }
  return grid;
}

std::vector<FlipPoint> logistic_margin_demo(const Mat& W, const RotationSampler& sampler,
                                            const std::vector<double>& margins,
                                            std::uint64_t n_samples, Rng& rng) {
  const Mat Wn = normalized_rows(W);
  const Vec w0 = Wn.row(0).transpose(), w1 = Wn.row(1).transpose();
  Vec bisector = w0 + w1, toward = w0 - w1;
  if (!(bisector.norm() > 0.0) || !(toward.norm() > 0.0)) {
    throw Error("the first two weight rows must be distinct and not opposite");
  }
  bisector.normalize();
  toward.normalize();
  std::vector<FlipPoint> curve;
  curve.reserve(margins.size());
  for (double m : margins) {
    const Vec x = std::cos(m) * bisector + std::sin(m) * toward;
    FlipPoint pt = logistic_flip_rate(Wn, x, sampler, n_samples, rng);
    pt.margin = m;
    curve.push_back(pt);
  }
  return curve;
}

void write_kappa_csv_header(std::ostream& os) {
  csv::write_row(os, {"lambda", "method", "D", "N", "kappa"});
}

void write_kappa_csv_row(std::ostream& os, double lambda, const std::string& method,
                         std::size_t dim, std::size_t n, double kappa) {
  csv::write_row(os, {csv::num(lambda), method, std::to_string(dim), std::to_string(n),
                      csv::num(kappa)});
}

void write_flip_csv(std::ostream& os, const std::vector<FlipPoint>& curve) {
  csv::write_row(os, {"margin", "flip_rate", "stderr"});
  for (const auto& p : curve) {
    csv::write_row(os, {csv::num(p.margin), csv::num(p.flip_rate), csv::num(p.stderr)});
  }
}

}  // namespace rotlab
