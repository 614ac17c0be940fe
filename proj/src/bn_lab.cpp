#include "rotlab/bn_lab.hpp"

#include "rotlab/csv.hpp"
#include "rotlab/noise_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

namespace rotlab {

std::string to_string(DropoutPlacement p) { return p == DropoutPlacement::a ? "dropout-a" : "dropout-b"; }

DropoutPlacement parse_placement(const std::string& name) {
  if (name == "a" || name == "dropout-a") return DropoutPlacement::a;
  if (name == "b" || name == "dropout-b") return DropoutPlacement::b;
  throw Error("unknown dropout placement '" + name + "'");
}

void FeatureMoments::validate() const {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
    throw Error("feature mean/covariance shape mismatch");
  }
  if (!cov.isApprox(cov.transpose(), 1e-10)) throw Error("feature covariance is not symmetric");
  if (!(cov.trace() > 0.0)) throw Error("feature covariance must have positive trace");
  Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * es.eigenvalues().cwiseAbs().maxCoeff()) {
    throw Error("feature covariance is not positive semidefinite");
  }
}

FeatureMoments relu_gaussian_moments(const Mat& latent_cov) {
  const Eigen::Index d = latent_cov.rows();
  if (latent_cov.cols() != d || d < 1) throw Error("latent covariance must be square");
  const Vec s = latent_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  FeatureMoments m;
  m.mean = s / std::sqrt(2.0 * std::numbers::pi);
  m.cov.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double ss = s(i) * s(j);
      double second = 0.0;
      if (ss > 0.0) {
        const double rho = std::clamp(latent_cov(i, j) / ss, -1.0, 1.0);
        const double phi = std::acos(rho);
        second = ss / (2.0 * std::numbers::pi) *
                 (std::sin(phi) + (std::numbers::pi - phi) * std::cos(phi));
      }
      m.cov(i, j) = second - m.mean(i) * m.mean(j);
    }
  }
  return m;
}

Mat sample_sphere_rows(std::size_t n, std::size_t dim, Rng& rng) {
  if (dim < 1) throw Error("sphere dimension must be positive");
  std::normal_distribution<double> z;
  Mat W(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    do {
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = z(rng);
    } while (!(W.row(i).norm() > 0.0));
    W.row(i).normalize();
  }
  return W;
}

ShiftReport variance_shift(DropoutPlacement placement, bool centered, double keep_rate,
                           const FeatureMoments& features, const Mat& W, std::uint64_t n_mc,
                           std::uint64_t seed) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) throw Error("keep rate must lie in (0, 1]");
  features.validate();
  if (W.cols() != features.mean.size()) throw Error("weight width and feature dimension differ");
  const double lambda = (1.0 - keep_rate) / keep_rate;
  const Vec& c = features.mean;
  const Mat& S = features.cov;

  ShiftReport r;
  r.placement = placement;
  r.centered = centered;
  r.keep_rate = keep_rate;
  r.dim = static_cast<std::size_t>(W.cols());
  const Eigen::Index n = W.rows();
  r.var_test = (W * S).cwiseProduct(W).rowwise().sum();
  if (placement == DropoutPlacement::a) {
    const Vec noise = centered ? r.var_test
                               : Vec(r.var_test + (W * c).cwiseAbs2());
    r.var_train = r.var_test + lambda * noise;
  } else {
    const Vec diag = centered ? Vec(S.diagonal()) : Vec(S.diagonal() + c.cwiseAbs2());
    r.var_train = r.var_test + lambda * (W.cwiseAbs2() * diag);
  }
  r.ratio.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double tr = r.var_train(i), te = r.var_test(i);
    r.ratio(i) = (te > 0.0 && tr > 0.0) ? std::max(tr / te, te / tr)
                                        : std::numeric_limits<double>::infinity();
  }
  r.ratio_mean = r.ratio.mean();
  r.ratio_var = n > 1 ? (r.ratio.array() - r.ratio_mean).square().sum() / static_cast<double>(n - 1)
                      : 0.0;
  r.ratio_max = r.ratio.maxCoeff();

  if (n_mc > 0) {
    const GaussianSource source(c, S);
    const NoiseOp drop(NoiseOpSpec::bernoulli(keep_rate));
    const Vec wc = W * c;
    Rng rng = make_rng(seed, 0);
    std::vector<RunningStats> acc(static_cast<std::size_t>(n));
    for (std::uint64_t s = 0; s < n_mc; ++s) {
      const Vec x = source.sample(rng);
      Vec y;
      if (placement == DropoutPlacement::a) {
        const Vec clean = W * x;
        y = centered ? Vec(drop.forward(Vec(clean - wc), rng) + wc) : drop.forward(clean, rng);
      } else {
        const Vec xt = centered ? Vec(drop.forward(Vec(x - c), rng) + c) : drop.forward(x, rng);
        y = W * xt;
      }
      // Zero-centered noise keeps E[ỹ] = Wc, so squared deviations from it
      // estimate the variance directly.
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = y(i) - wc(i);
        acc[static_cast<std::size_t>(i)].push(e * e);
      }
    }
    Vec v(n), se(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      v(i) = acc[static_cast<std::size_t>(i)].mean();
      se(i) = acc[static_cast<std::size_t>(i)].stderr_mean();
    }
    r.mc_var_train = v;
    r.mc_var_train_stderr = se;
  }
  return r;
}

void write_shift_csv_header(std::ostream& os) {
  csv::write_row(os, {"placement", "centered", "p", "D", "unit", "var_train", "var_test", "ratio"});
}

void write_shift_csv_rows(std::ostream& os, const ShiftReport& r) {
  for (Eigen::Index i = 0; i < r.ratio.size(); ++i) {
    csv::write_row(os, {to_string(r.placement), r.centered ? "true" : "false",
                        csv::num(r.keep_rate), std::to_string(r.dim), std::to_string(i),
                        csv::num(r.var_train(i)), csv::num(r.var_test(i)), csv::num(r.ratio(i))});
  }
}

Mat random_latent_cov(std::size_t dim, Rng& rng) {
  if (dim < 1) throw Error("latent dimension must be positive");
  const auto d = static_cast<Eigen::Index>(dim);
  const Eigen::Index k = std::max<Eigen::Index>(1, d / 4);
  std::normal_distribution<double> z;
  Mat A(d, k);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = z(rng);
  return A * A.transpose() / static_cast<double>(k) + 0.5 * Mat::Identity(d, d);
}

ShiftTrial variance_shift_trial(std::size_t dim, std::size_t rows, double keep_rate,
                                std::uint64_t seed, std::uint64_t rep) {
  if (rows < 2) throw Error("need at least two weight rows");
  Rng rng = make_rng(seed, rep);
  const FeatureMoments f = relu_gaussian_moments(random_latent_cov(dim, rng));
  const Mat W = sample_sphere_rows(rows, dim, rng);
  return {variance_shift(DropoutPlacement::a, false, keep_rate, f, W),
          variance_shift(DropoutPlacement::b, false, keep_rate, f, W),
          variance_shift(DropoutPlacement::a, true, keep_rate, f, W)};
}

void write_shift_summary_csv_header(std::ostream& os) {
  csv::write_row(os, {"rep", "p", "D", "rows", "ratio_var_a", "ratio_var_b", "ratio_max_a",
                      "ratio_max_b", "ratio_mean_a_centered", "ratio_var_a_centered"});
}

void write_shift_summary_csv_row(std::ostream& os, std::uint64_t rep, const ShiftTrial& t) {
  csv::write_row(os, {std::to_string(rep), csv::num(t.a.keep_rate), std::to_string(t.a.dim),
                      std::to_string(t.a.ratio.size()), csv::num(t.a.ratio_var),
                      csv::num(t.b.ratio_var), csv::num(t.a.ratio_max), csv::num(t.b.ratio_max),
                      csv::num(t.a_centered.ratio_mean), csv::num(t.a_centered.ratio_var)});
}

// ---------------------------------------------------------------------------

BatchNormState::BatchNormState(Eigen::Index units, double eps_, double momentum_)
    : running_mean(Vec::Zero(units)),
      running_var(Vec::Ones(units)),
      gamma(Vec::Ones(units)),
      beta(Vec::Zero(units)),
      eps(eps_),
      momentum(momentum_) {
  validate();
}

void BatchNormState::validate() const {
  if (!(eps > 0.0)) throw Error("batch norm eps must be positive");
  if (!(momentum > 0.0 && momentum <= 1.0)) throw Error("batch norm momentum must lie in (0, 1]");
  const auto u = running_mean.size();
  if (running_var.size() != u || gamma.size() != u || beta.size() != u) {
    throw Error("batch norm state vectors differ in length");
  }
  if ((running_var.array() < 0.0).any()) throw Error("running variance must be non-negative");
}

Mat bn_train_forward(const Mat& batch, BatchNormState& state, BatchNormCache* cache) {
  const Eigen::Index B = batch.rows();
  if (B < 2) throw Error("batch normalization requires a batch of at least 2");
  if (batch.cols() != state.running_mean.size()) throw Error("batch width and BN units differ");
  const Vec mu = batch.colwise().mean().transpose();
  const Mat centered = batch.rowwise() - mu.transpose();
  const Vec var = centered.cwiseAbs2().colwise().sum().transpose() / static_cast<double>(B);
  const Vec inv_std = (var.array() + state.eps).rsqrt().matrix();
  const Mat xhat = centered * inv_std.asDiagonal();
  Mat out = (xhat * state.gamma.asDiagonal()).rowwise() + state.beta.transpose();

  const Vec unbiased = var * (static_cast<double>(B) / static_cast<double>(B - 1));
  if (state.updates == 0) {
    state.running_mean = mu;
    state.running_var = unbiased;
  } else {
    state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mu;
    state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * unbiased;
  }
  ++state.updates;
  if (cache) {
    cache->xhat = xhat;
    cache->inv_std = inv_std;
  }
  return out;
}

Vec standardize_batch(const Vec& batch, double eps) {
  if (batch.size() < 2) throw Error("batch normalization requires a batch of at least 2");
  const double mu = batch.mean();
  const double var = (batch.array() - mu).square().mean();
  if (!(var + eps > 0.0)) return Vec::Zero(batch.size());
  return (batch.array() - mu) / std::sqrt(var + eps);
}

TestCorrection TestCorrection::divide_running_var(double keep_rate) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) throw Error("keep rate must lie in (0, 1]");
  TestCorrection c;
  c.kind = Kind::keep_rate;
  c.keep_rate = keep_rate;
  return c;
}

TestCorrection TestCorrection::polynomial(const PolyCoeffs& coeffs) {
  TestCorrection c;
  c.kind = Kind::poly;
  c.poly = coeffs;
  return c;
}

Mat bn_test_forward(const Mat& x, const BatchNormState& state, const TestCorrection& correction) {
  if (!state.populated()) throw Error("batch norm running statistics are not populated");
  if (x.cols() != state.running_mean.size()) throw Error("input width and BN units differ");
  Vec var = state.running_var;
  if (correction.kind == TestCorrection::Kind::keep_rate) var *= correction.keep_rate;
  const Vec inv_std = (var.array() + state.eps).rsqrt().matrix();
  Mat xhat = (x.rowwise() - state.running_mean.transpose()) * inv_std.asDiagonal();
  if (correction.kind == TestCorrection::Kind::poly) {
    xhat = xhat.unaryExpr([&](double v) { return correction.poly(v); });
  }
  return (xhat * state.gamma.asDiagonal()).rowwise() + state.beta.transpose();
}

// ---------------------------------------------------------------------------

std::string to_string(SourceDist d) {
  switch (d) {
    case SourceDist::gaussian: return "gaussian";
    case SourceDist::uniform: return "uniform";
    case SourceDist::uniform_square: return "uniform-square";
    case SourceDist::uniform_cube: return "uniform-cube";
    case SourceDist::laplace: return "laplace";
  }
  return "unknown";
}

SourceDist parse_source_dist(const std::string& name) {
  for (SourceDist d : all_source_dists()) {
    if (to_string(d) == name) return d;
  }
  throw Error("unknown distribution '" + name + "'");
}

std::vector<SourceDist> all_source_dists() {
  return {SourceDist::gaussian, SourceDist::uniform, SourceDist::uniform_square,
          SourceDist::uniform_cube, SourceDist::laplace};
}

double sample_raw(SourceDist d, Rng& rng) {
  switch (d) {
    case SourceDist::gaussian:
      return std::normal_distribution<double>()(rng);
    case SourceDist::uniform:
      return std::uniform_real_distribution<double>()(rng);
    case SourceDist::uniform_square: {
      const double y = std::uniform_real_distribution<double>()(rng);
      return y * y;
    }
    case SourceDist::uniform_cube: {
      const double y = std::uniform_real_distribution<double>()(rng);
      return y * y * y;
    }
    case SourceDist::laplace: {
      const double e = std::exponential_distribution<double>()(rng);
      return std::bernoulli_distribution(0.5)(rng) ? e : -e;
    }
  }
  throw Error("unknown distribution");
}

double raw_mean(SourceDist d) {
  switch (d) {
    case SourceDist::gaussian: return 0.0;
    case SourceDist::uniform: return 0.5;
    case SourceDist::uniform_square: return 1.0 / 3.0;
    case SourceDist::uniform_cube: return 0.25;
    case SourceDist::laplace: return 0.0;
  }
  return 0.0;
}

double raw_variance(SourceDist d) {
  switch (d) {
    case SourceDist::gaussian: return 1.0;
    case SourceDist::uniform: return 1.0 / 12.0;
    case SourceDist::uniform_square: return 1.0 / 5.0 - 1.0 / 9.0;
    case SourceDist::uniform_cube: return 1.0 / 7.0 - 1.0 / 16.0;
    case SourceDist::laplace: return 2.0;
  }
  return 1.0;
}

double sample_standardized(SourceDist d, Rng& rng) {
  return (sample_raw(d, rng) - raw_mean(d)) / std::sqrt(raw_variance(d));
}

double standardized_pdf(SourceDist d, double z) {
  const double sd = std::sqrt(raw_variance(d));
  const double x = raw_mean(d) + sd * z;
  double raw = 0.0;
  switch (d) {
    case SourceDist::gaussian:
      raw = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      break;
    case SourceDist::uniform:
      raw = (x > 0.0 && x < 1.0) ? 1.0 : 0.0;
      break;
    case SourceDist::uniform_square:
      raw = (x > 0.0 && x < 1.0) ? 0.5 / std::sqrt(x) : 0.0;
      break;
    case SourceDist::uniform_cube:
      raw = (x > 0.0 && x < 1.0) ? std::pow(x, -2.0 / 3.0) / 3.0 : 0.0;
      break;
    case SourceDist::laplace:
      raw = 0.5 * std::exp(-std::abs(x));
      break;
  }
  return sd * raw;
}

double f_train_leave_one_out(double x1, std::span<const double> others) {
  if (others.empty()) throw Error("need at least one companion");
  const double m = static_cast<double>(others.size());
  const double B = m + 1.0;
  // Moments of the companions shifted by x1.
  double mu = 0.0;
  for (double v : others) mu += v - x1;
  mu /= m;
  double var = 0.0;
  for (double v : others) var += (v - x1 - mu) * (v - x1 - mu);
  var /= m;
  const double d = -mu;
  const double denom = var + d * d / B;
  if (!(denom > 0.0)) return 0.0;
  return std::sqrt(m / B) * d / std::sqrt(denom);
}

double f_train_direct(std::span<const double> batch) {
  if (batch.size() < 2) throw Error("batch normalization requires a batch of at least 2");
  const double B = static_cast<double>(batch.size());
  const double pivot = batch[0];
  double mu = 0.0;
  for (double v : batch) mu += v - pivot;
  mu /= B;
  double var = 0.0;
  for (double v : batch) var += (v - pivot - mu) * (v - pivot - mu);
  var /= B;
  if (!(var > 0.0)) return 0.0;
  return -mu / std::sqrt(var);
}

std::vector<double> make_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo)) throw Error("invalid grid");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + step * static_cast<double>(i);
  return g;
}

NonlinearityCurve mc_nonlinearity_curve(SourceDist dist, std::size_t batch,
                                        const std::vector<double>& grid, std::uint64_t n_mc,
                                        std::uint64_t seed) {
  if (batch < 2) throw Error("batch size must be at least 2");
  if (n_mc < 10000) throw Error("nonlinearity curves need at least 1e4 draws per point");
  NonlinearityCurve curve;
  curve.dist = dist;
  curve.batch = batch;
  curve.points.reserve(grid.size());
  std::vector<double> others(batch - 1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Rng rng = make_rng(seed, i);
    RunningStats stats;
    for (std::uint64_t s = 0; s < n_mc; ++s) {
      for (auto& v : others) v = sample_standardized(dist, rng);
      stats.push(f_train_leave_one_out(grid[i], others));
    }
    curve.points.push_back({grid[i], stats.mean(), stats.variance(), stats.stderr_mean()});
  }
  return curve;
}

PolyCoeffs fit_poly_correction(const NonlinearityCurve& curve, PolyWeighting weighting) {
  std::vector<std::size_t> used;
  std::vector<double> weights;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const double w = weighting == PolyWeighting::uniform
                         ? 1.0
                         : standardized_pdf(curve.dist, curve.points[i].x_test);
    if (w > 0.0) {
      used.push_back(i);
      weights.push_back(w);
    }
  }
  if (used.size() < 4) throw Error("polynomial fit needs at least 4 grid points");
  const auto n = static_cast<Eigen::Index>(used.size());
  Mat A(n, 4);
  Vec b(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& p = curve.points[used[static_cast<std::size_t>(r)]];
    const double sw = std::sqrt(weights[static_cast<std::size_t>(r)]);
    const double x = p.x_test, x2 = x * x;
    A(r, 0) = sw * x;
    A(r, 1) = sw * x * x2;
    A(r, 2) = sw * x * x2 * x2;
    A(r, 3) = sw * x * x2 * x2 * x2;
    b(r) = sw * p.f_expect;
  }
  const Vec a = A.colPivHouseholderQr().solve(b);
  PolyCoeffs c{a(0), a(1), a(2), a(3), 0.0};
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  c.rmse = std::sqrt((A * a - b).squaredNorm() / wsum);
  return c;
}

std::pair<double, double> leave_one_out_stats(const Vec& batch, Eigen::Index i,
                                              CrossNormalizer normalizer) {
  const Eigen::Index B = batch.size();
  if (B < 3) throw Error("cross normalization requires a batch of at least 3");
  if (i < 0 || i >= B) throw Error("element index out of range");
  const double div = normalizer == CrossNormalizer::remaining ? static_cast<double>(B - 1)
                                                              : static_cast<double>(B);
  double mu = 0.0;
  for (Eigen::Index k = 0; k < B; ++k) {
    if (k != i) mu += batch(k);
  }
  mu /= div;
  double var = 0.0;
  for (Eigen::Index k = 0; k < B; ++k) {
    if (k != i) var += (batch(k) - mu) * (batch(k) - mu);
  }
  return {mu, var / div};
}

Vec cross_normalize(const Vec& batch, double gamma, double beta, double eps,
                    CrossNormalizer normalizer) {
  if (batch.size() < 3) throw Error("cross normalization requires a batch of at least 3");
  if (!(eps >= 0.0)) throw Error("eps must be non-negative");
  Vec out(batch.size());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const auto [mu, var] = leave_one_out_stats(batch, i, normalizer);
    const double denom = std::sqrt(var + eps);
    const double xhat = denom > 0.0 ? (batch(i) - mu) / denom : 0.0;
    out(i) = gamma * xhat + beta;
  }
  return out;
}

NonlinearityCurve mc_cross_norm_curve(SourceDist dist, std::size_t batch,
                                      const std::vector<double>& grid, std::uint64_t n_mc,
                                      std::uint64_t seed, CrossNormalizer normalizer) {
  if (batch < 3) throw Error("cross normalization requires a batch of at least 3");
  if (n_mc < 2) throw Error("need at least two draws per point");
  NonlinearityCurve curve;
  curve.dist = dist;
  curve.batch = batch;
  Vec b(static_cast<Eigen::Index>(batch));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Rng rng = make_rng(seed, i);
    RunningStats stats;
    b(0) = grid[i];
    for (std::uint64_t s = 0; s < n_mc; ++s) {
      for (Eigen::Index k = 1; k < b.size(); ++k) b(k) = sample_standardized(dist, rng);
      const auto [mu, var] = leave_one_out_stats(b, 0, normalizer);
      stats.push(var > 0.0 ? (b(0) - mu) / std::sqrt(var) : 0.0);
    }
    curve.points.push_back({grid[i], stats.mean(), stats.variance(), stats.stderr_mean()});
  }
  return curve;
}

NoiseBudget noise_budget(std::size_t batch, SourceDist dist, std::uint64_t n_mc, Rng& rng) {
  if (batch < 2) throw Error("batch size must be at least 2");
  if (n_mc < 2) throw Error("noise budget needs at least two draws");
  std::vector<double> a(batch - 1), b(batch - 1);
  RunningStats stats;
  for (std::uint64_t s = 0; s < n_mc; ++s) {
    const double x = sample_standardized(dist, rng);
    for (auto& v : a) v = sample_standardized(dist, rng);
    for (auto& v : b) v = sample_standardized(dist, rng);
    const double d = f_train_leave_one_out(x, a) - f_train_leave_one_out(x, b);
    stats.push(0.5 * d * d);
  }
  return {stats.mean(), stats.stderr_mean()};
}

void write_curve_csv_header(std::ostream& os) {
  csv::write_row(os, {"dist", "B", "x_test", "f_expect", "f_var", "stderr"});
}

void write_curve_csv_rows(std::ostream& os, const NonlinearityCurve& c) {
  for (const auto& p : c.points) {
    csv::write_row(os, {to_string(c.dist), std::to_string(c.batch), csv::num(p.x_test),
                        csv::num(p.f_expect), csv::num(p.f_var), csv::num(p.stderr)});
  }
}

void write_poly_csv_header(std::ostream& os) {
  csv::write_row(os, {"B", "a1", "a3", "a5", "a7", "rmse"});
}

void write_poly_csv_row(std::ostream& os, std::size_t batch, const PolyCoeffs& c) {
  csv::write_row(os, {std::to_string(batch), csv::num(c.a1), csv::num(c.a3), csv::num(c.a5),
                      csv::num(c.a7), csv::num(c.rmse)});
}

}  // namespace rotlab
