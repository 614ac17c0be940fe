#include "rotlab/noise_lab.hpp"

#include "rotlab/csv.hpp"

#include <limits>
#include <ostream>

namespace rotlab {

CovStats CovStats::from_samples(const Mat& samples) {
  if (samples.rows() < 2) throw Error("covariance needs at least two samples");
  CovStats s;
  s.n = static_cast<std::uint64_t>(samples.rows());
  s.mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  return s;
}

void CovStats::validate() const {
  if (n < 2) throw Error("CovStats needs n >= 2");
  if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
    throw Error("CovStats shape mismatch");
  }
  if (!cov.isApprox(cov.transpose(), 1e-12)) throw Error("covariance is not symmetric");
  if ((cov.diagonal().array() < 0.0).any()) throw Error("covariance has a negative variance");
}

CovAccumulator::CovAccumulator(Eigen::Index dim)
    : mean_(Vec::Zero(dim)), m2_(Mat::Zero(dim, dim)) {}

void CovAccumulator::push(const Vec& x) {
  ++n_;
  const Vec delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_.noalias() += delta * (x - mean_).transpose();
}

CovStats CovAccumulator::stats() const {
  if (n_ < 2) throw Error("covariance needs at least two samples");
  CovStats s;
  s.n = n_;
  s.mean = mean_;
  // The rank-one updates are only symmetric up to rounding.
  s.cov = 0.5 * (m2_ + m2_.transpose()) / static_cast<double>(n_ - 1);
  return s;
}

double coadaptation(const Mat& cov) {
  const double trace = cov.trace();
  if (!(trace > 0.0)) throw NumericalError("degenerate covariance");
  const double off = cov.cwiseAbs().sum() - cov.diagonal().cwiseAbs().sum();
  return off / trace;
}

std::string to_string(NoiseMethod m) { return m == NoiseMethod::dropout ? "dropout" : "rotation"; }

NoiseMethod parse_noise_method(const std::string& name) {
  if (name == "dropout" || name == "bernoulli") return NoiseMethod::dropout;
  if (name == "rotation") return NoiseMethod::rotation;
  throw Error("unknown method '" + name + "'");
}

namespace {

double noise_strength(double keep_rate) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) throw Error("keep rate must lie in (0, 1]");
  return (1.0 - keep_rate) / keep_rate;
}

}  // namespace

Mat conditional_variance(const Vec& x, NoiseMethod method, double keep_rate) {
  const double lambda = noise_strength(keep_rate);
  const Eigen::Index d = x.size();
  if (method == NoiseMethod::dropout) {
    return lambda * Mat(x.cwiseAbs2().asDiagonal());
  }
  if (d < 2) throw Error("rotation undefined below dimension 2");
  return lambda / pair_denominator(d) *
         (x.squaredNorm() * Mat::Identity(d, d) - x * x.transpose());
}

Mat total_variance(const CovStats& s, NoiseMethod method, double keep_rate) {
  const double lambda = noise_strength(keep_rate);
  const Eigen::Index d = s.cov.rows();
  const Mat second = s.cov + s.mean * s.mean.transpose();
  if (method == NoiseMethod::dropout) {
    return s.cov + lambda * Mat(second.diagonal().asDiagonal());
  }
  if (d < 2) throw Error("rotation undefined below dimension 2");
  const Mat I = Mat::Identity(d, d);
  return s.cov + lambda / pair_denominator(d) * (second.trace() * I - second);
}

double reduction_factor(NoiseMethod method, double keep_rate, std::size_t dim) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) throw Error("keep rate must lie in (0, 1]");
  if (method == NoiseMethod::dropout) return keep_rate;
  if (dim < 2) throw Error("rotation undefined below dimension 2");
  const double lambda = noise_strength(keep_rate);
  const double m = pair_denominator(static_cast<Eigen::Index>(dim));
  return (1.0 - lambda / m) / (1.0 + lambda * static_cast<double>(dim - 1) / m);
}

GaussianSource::GaussianSource(Vec mean, Mat cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size()) {
    throw Error("source mean/covariance shape mismatch");
  }
  if (!(cov_.trace() > 0.0)) throw Error("source covariance must have positive trace");
  // LDLT tolerates semidefinite covariances; factor = P' L sqrt(D).
  Eigen::LDLT<Mat> ldlt(cov_);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -1e-12).any()) {
    throw Error("source covariance is not positive semidefinite");
  }
  const Vec sqrt_d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Mat l = ldlt.matrixL();
  factor_ = ldlt.transpositionsP().transpose() * (l * sqrt_d.asDiagonal());
}

GaussianSource GaussianSource::equicorrelated(std::size_t dim, double rho) {
  const auto d = static_cast<Eigen::Index>(dim);
  if (dim < 1) throw Error("dimension must be positive");
  if (!(rho > -1.0 / std::max<double>(1.0, static_cast<double>(dim) - 1.0) - 1e-15 && rho <= 1.0)) {
    throw Error("equicorrelation outside the positive semidefinite range");
  }
  Mat cov = Mat::Constant(d, d, rho);
  cov.diagonal().setOnes();
  return GaussianSource(Vec::Zero(d), cov);
}

Vec GaussianSource::sample(Rng& rng) const {
  std::normal_distribution<double> z;
  Vec e(mean_.size());
  for (auto& v : e) v = z(rng);
  return mean_ + factor_ * e;
}

Mat GaussianSource::sample(std::size_t n, Rng& rng) const {
  Mat out(static_cast<Eigen::Index>(n), mean_.size());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = sample(rng).transpose();
  return out;
}

NoiseOpSpec noise_spec_for(NoiseMethod method, double keep_rate) {
  if (method == NoiseMethod::dropout) return NoiseOpSpec::bernoulli(keep_rate);
  if (keep_rate >= 1.0) return NoiseOpSpec::rotation(AngleDistribution::fixed(0.0));
  return NoiseOpSpec::rotation(AngleDistribution::gaussian_for_keep_rate(keep_rate));
}

CoadaptReport verify_reduction(const GaussianSource& source, NoiseMethod method,
                               double keep_rate, std::uint64_t n_samples, std::uint64_t seed,
                               std::size_t chunks) {
  if (chunks < 2) throw Error("need at least two chunks for a standard error");
  if (n_samples < 2 * chunks) throw Error("too few samples for the chunk layout");
  const NoiseOp op(noise_spec_for(method, keep_rate));
  const Eigen::Index d = source.dim();

  CoadaptReport rep;
  rep.method = to_string(method);
  rep.keep_rate = keep_rate;
  rep.dim = static_cast<std::size_t>(d);
  rep.n = n_samples;
  rep.predicted_factor = reduction_factor(method, keep_rate, rep.dim);

  CovAccumulator all_in(d), all_out(d);
  RunningStats chunk_factors;
  bool defined = true;
  for (std::size_t k = 0; k < chunks; ++k) {
    Rng rng = make_rng(seed, k);
    const std::uint64_t m = n_samples / chunks + (k < n_samples % chunks ? 1 : 0);
    CovAccumulator in(d), out(d);
    for (std::uint64_t i = 0; i < m; ++i) {
      const Vec x = source.sample(rng) - source.mean();
      const Vec y = op.forward(x, rng);
      in.push(x);
      out.push(y);
      all_in.push(x);
      all_out.push(y);
    }
    const double ci = coadaptation(in.stats());
    if (ci > 0.0) {
      chunk_factors.push(coadaptation(out.stats()) / ci);
    } else {
      defined = false;
    }
  }
  rep.co_input = coadaptation(all_in.stats());
  rep.co_output = coadaptation(all_out.stats());
  // A diagonal source has co(x) = 0; its sample estimate is pure noise.
  const bool source_coupled =
      source.cov().cwiseAbs().sum() > source.cov().diagonal().cwiseAbs().sum();
  defined = defined && source_coupled && rep.co_input > 0.0;
  rep.factor_defined = defined;
  if (defined) {
    rep.observed_factor = rep.co_output / rep.co_input;
    rep.stderr_factor = chunk_factors.stderr_mean();
  } else {
    rep.observed_factor = std::numeric_limits<double>::quiet_NaN();
    rep.stderr_factor = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

ConditionalMoments mc_conditional_moments(const NoiseOp& op, const Vec& x, std::uint64_t n,
                                          Rng& rng) {
  if (n < 2) throw Error("need at least two draws");
  const Eigen::Index d = x.size();
  Vec s1 = Vec::Zero(d), s1sq = Vec::Zero(d);
  Mat s2 = Mat::Zero(d, d), s2sq = Mat::Zero(d, d);
  for (std::uint64_t i = 0; i < n; ++i) {
    const Vec e = op.forward(x, rng) - x;
    const Mat outer = e * e.transpose();
    s1 += e;
    s1sq += e.cwiseAbs2();
    s2 += outer;
    s2sq += outer.cwiseAbs2();
  }
  const double nn = static_cast<double>(n);
  ConditionalMoments m;
  m.mean_shift = s1 / nn;
  m.mean_stderr = ((s1sq / nn - m.mean_shift.cwiseAbs2()) / (nn - 1.0)).cwiseMax(0.0).cwiseSqrt();
  m.cov = s2 / nn;
  m.cov_stderr = ((s2sq / nn - m.cov.cwiseAbs2()) / (nn - 1.0)).cwiseMax(0.0).cwiseSqrt();
  return m;
}

void write_coadapt_csv_header(std::ostream& os) {
  csv::write_row(os, {"method", "p", "D", "n", "co_in", "co_out", "factor_obs", "factor_pred",
                      "stderr"});
}

void write_coadapt_csv_row(std::ostream& os, const CoadaptReport& r) {
  csv::write_row(os, {r.method, csv::num(r.keep_rate), std::to_string(r.dim), std::to_string(r.n),
                      csv::num(r.co_input), csv::num(r.co_output), csv::num(r.observed_factor),
                      csv::num(r.predicted_factor), csv::num(r.stderr_factor)});
}

}  // namespace rotlab
