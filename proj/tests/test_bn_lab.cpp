#include "rotlab/bn_lab.hpp"
#include "rotlab/noise_lab.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace rotlab;

namespace {

FeatureMoments relu_features(std::size_t dim, Rng& rng) {
  return relu_gaussian_moments(random_latent_cov(dim, rng));
}

}  // namespace

TEST(ReluGaussianMoments, MatchMonteCarlo) {
  Rng rng = make_rng(1);
  const Mat latent = random_latent_cov(5, rng);
  const FeatureMoments m = relu_gaussian_moments(latent);
  const GaussianSource src(Vec::Zero(5), latent);
  CovAccumulator acc(5);
  for (int k = 0; k < 400000; ++k) acc.push(src.sample(rng).cwiseMax(0.0));
  const CovStats s = acc.stats();
  for (Eigen::Index i = 0; i < 5; ++i) {
    const double se = std::sqrt(s.cov(i, i) / static_cast<double>(s.n));
    EXPECT_NEAR(s.mean(i), m.mean(i), 5 * se);
    EXPECT_NEAR(m.mean(i), std::sqrt(latent(i, i) / (2 * std::numbers::pi)), 1e-12);
    EXPECT_NEAR(m.cov(i, i), latent(i, i) * (0.5 - 1 / (2 * std::numbers::pi)), 1e-12);
  }
  EXPECT_LT((s.cov - m.cov).cwiseAbs().maxCoeff(), 0.02 * m.cov.diagonal().maxCoeff());
}

TEST(SampleSphereRows, UnitNorm) {
  Rng rng = make_rng(2);
  const Mat W = sample_sphere_rows(50, 7, rng);
  for (Eigen::Index i = 0; i < W.rows(); ++i) EXPECT_NEAR(W.row(i).norm(), 1.0, 1e-14);
}

TEST(VarianceShift, CenteredDropoutARatioIsInverseKeepRate) {
  Rng rng = make_rng(3);
  const FeatureMoments f = relu_features(16, rng);
  const Mat W = sample_sphere_rows(64, 16, rng);
  for (double p : {0.5, 0.8}) {
    const ShiftReport r = variance_shift(DropoutPlacement::a, true, p, f, W);
    for (double v : r.ratio) EXPECT_NEAR(v, 1.0 / p, 1e-12);
    EXPECT_NEAR(r.ratio_var, 0.0, 1e-20);
  }
}

TEST(VarianceShift, KeepRateOneGivesUnitRatios) {
  Rng rng = make_rng(4);
  const FeatureMoments f = relu_features(8, rng);
  const Mat W = sample_sphere_rows(20, 8, rng);
  for (auto pl : {DropoutPlacement::a, DropoutPlacement::b}) {
    const ShiftReport r = variance_shift(pl, false, 1.0, f, W);
    for (double v : r.ratio) EXPECT_DOUBLE_EQ(v, 1.0);
  }
}

TEST(VarianceShift, RatiosAtLeastOne) {
  Rng rng = make_rng(5);
  const FeatureMoments f = relu_features(12, rng);
  const Mat W = sample_sphere_rows(40, 12, rng);
  for (auto pl : {DropoutPlacement::a, DropoutPlacement::b}) {
    for (bool c : {false, true}) {
      const ShiftReport r = variance_shift(pl, c, 0.6, f, W);
      EXPECT_GE(r.ratio.minCoeff(), 1.0);
    }
  }
}

TEST(VarianceShift, ClosedFormMatchesSimulation) {
  Rng rng = make_rng(6);
  const FeatureMoments f = relu_features(6, rng);
  const Mat W = sample_sphere_rows(5, 6, rng);
  for (auto pl : {DropoutPlacement::a, DropoutPlacement::b}) {
    for (bool c : {false, true}) {
      const ShiftReport r = variance_shift(pl, c, 0.5, f, W, 200000, 7);
      ASSERT_TRUE(r.mc_var_train.has_value());
      for (Eigen::Index i = 0; i < 5; ++i) {
        EXPECT_NEAR((*r.mc_var_train)(i), r.var_train(i), 5 * (*r.mc_var_train_stderr)(i))
            << to_string(pl) << " centered=" << c;
      }
    }
  }
}

TEST(VarianceShift, ExpectedShiftEqualAcrossPlacements) {
  Rng rng = make_rng(8);
  const FeatureMoments f = relu_features(32, rng);
  const Mat W = sample_sphere_rows(20000, 32, rng);
  const ShiftReport a = variance_shift(DropoutPlacement::a, false, 0.5, f, W);
  const ShiftReport b = variance_shift(DropoutPlacement::b, false, 0.5, f, W);
  RunningStats diff;
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    diff.push((a.var_train(i) - a.var_test(i)) - (b.var_train(i) - b.var_test(i)));
  }
  EXPECT_LT(std::abs(diff.mean()), 5 * diff.stderr_mean());
  // Exact value of the common expected shift: λ (tr Σ + ‖c‖²) / D.
  RunningStats shift_a;
  for (Eigen::Index i = 0; i < W.rows(); ++i) shift_a.push(a.var_train(i) - a.var_test(i));
  const double expect = (f.cov.trace() + f.mean.squaredNorm()) / 32.0;
  EXPECT_NEAR(shift_a.mean(), expect, 5 * shift_a.stderr_mean());
}

TEST(VarianceShift, ObservationHoldsInMostTrials) {
  int spread = 0, maxed = 0;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    const ShiftTrial t = variance_shift_trial(64, 256, 0.5, 9, rep);
    spread += t.b_has_smaller_spread();
    maxed += t.a_has_larger_max();
    for (double v : t.a_centered.ratio) EXPECT_NEAR(v, 2.0, 1e-12);
  }
  EXPECT_GE(spread, 19);
  EXPECT_GE(maxed, 19);
}

TEST(VarianceShift, RejectsInvalidInput) {
  FeatureMoments f;
  f.mean = Vec::Zero(3);
  f.cov = -Mat::Identity(3, 3);
  EXPECT_THROW(variance_shift(DropoutPlacement::a, false, 0.5, f, Mat::Ones(2, 3)), Error);
  f.cov = Mat::Zero(3, 3);
  EXPECT_THROW(variance_shift(DropoutPlacement::a, false, 0.5, f, Mat::Ones(2, 3)), Error);
  f.cov = Mat::Identity(3, 3);
  EXPECT_THROW(variance_shift(DropoutPlacement::a, false, 0.0, f, Mat::Ones(2, 3)), Error);
  EXPECT_THROW(variance_shift(DropoutPlacement::a, false, 0.5, f, Mat::Ones(2, 4)), Error);
}

TEST(VarianceShift, CsvSchemas) {
  Rng rng = make_rng(10);
  const FeatureMoments f = relu_features(4, rng);
  const ShiftReport r = variance_shift(DropoutPlacement::b, false, 0.5, f, sample_sphere_rows(3, 4, rng));
  std::ostringstream os;
  write_shift_csv_header(os);
  write_shift_csv_rows(os, r);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "placement,centered,p,D,unit,var_train,var_test,ratio");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}

TEST(BatchNormState, Validation) {
  EXPECT_THROW(BatchNormState(3, 0.0), Error);
  EXPECT_THROW(BatchNormState(3, 1e-5, 0.0), Error);
  EXPECT_THROW(BatchNormState(3, 1e-5, 1.5), Error);
  BatchNormState s(2);
  s.running_var(0) = -1.0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(BnTrainForward, RejectsSingleRow) {
  BatchNormState s(3);
  EXPECT_THROW(bn_train_forward(Mat::Ones(1, 3), s), Error);
}

TEST(BnTrainForward, ConstantFeatureGivesZero) {
  BatchNormState s(2);
  Mat b(4, 2);
  b.col(0).setConstant(3.0);
  b.col(1) << 1, 2, 3, 4;
  const Mat out = bn_train_forward(b, s);
  EXPECT_EQ(out.col(0), Vec::Zero(4));
}

TEST(BnTrainForward, SumOfSquaresIdentity) {
  Rng rng = make_rng(11);
  std::normal_distribution<double> z(2.0, 0.01);
  for (Eigen::Index B : {2, 3, 8, 32}) {
    BatchNormState s(3);
    Mat b(B, 3);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = z(rng);
    BatchNormCache cache;
    bn_train_forward(b, s, &cache);
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double mu = b.col(j).mean();
      const double var = (b.col(j).array() - mu).square().mean();
      EXPECT_NEAR(cache.xhat.col(j).squaredNorm(), B * var / (var + s.eps), 1e-12 * B);
      EXPECT_NEAR(cache.xhat.col(j).sum(), 0.0, 1e-12);
    }
  }
}

TEST(BnTrainForward, RunningStatisticsFollowMomentum) {
  BatchNormState s(1, 1e-5, 0.1);
  const Mat b1 = (Mat(2, 1) << 0.0, 2.0).finished();
  const Mat b2 = (Mat(2, 1) << 4.0, 8.0).finished();
  bn_train_forward(b1, s);
  EXPECT_DOUBLE_EQ(s.running_mean(0), 1.0);
  EXPECT_DOUBLE_EQ(s.running_var(0), 2.0);
  bn_train_forward(b2, s);
  EXPECT_DOUBLE_EQ(s.running_mean(0), 0.9 * 1.0 + 0.1 * 6.0);
  EXPECT_DOUBLE_EQ(s.running_var(0), 0.9 * 2.0 + 0.1 * 8.0);
  EXPECT_EQ(s.updates, 2u);
}

TEST(BnTrainForward, AffineParameters) {
  BatchNormState s(1);
  s.gamma(0) = 2.0;
  s.beta(0) = -1.0;
  const Mat b = (Mat(2, 1) << 0.0, 2.0).finished();
  const Mat out = bn_train_forward(b, s);
  const double xhat = 1.0 / std::sqrt(1.0 + s.eps);
  EXPECT_NEAR(out(0, 0), -2.0 * xhat - 1.0, 1e-15);
  EXPECT_NEAR(out(1, 0), 2.0 * xhat - 1.0, 1e-15);
}

TEST(BnTrainForward, LongRunOutputVarianceIsOne) {
  Rng rng = make_rng(12);
  std::normal_distribution<double> z;
  BatchNormState s(1);
  RunningStats st;
  Mat b(8, 1);
  for (int k = 0; k < 100000; ++k) {
    for (auto& v : b.reshaped()) v = z(rng);
    const Mat out = bn_train_forward(b, s);
    for (double v : out.reshaped()) st.push(v);
  }
  EXPECT_NEAR(st.variance(), 1.0, 0.005);
}

TEST(StrictVariance, EveryBatchSizeAndSource) {
  for (SourceDist d : all_source_dists()) {
    for (std::size_t B : {2u, 4u, 8u, 32u}) {
      Rng rng = make_rng(13, B);
      std::vector<double> batch(B);
      RunningStats sq;
      for (int k = 0; k < 20000; ++k) {
        for (auto& v : batch) v = sample_raw(d, rng);
        const double f = f_train_direct(batch);
        sq.push(f * f);
      }
      EXPECT_LT(std::abs(sq.mean() - 1.0), 5 * sq.stderr_mean() + 1e-12) << to_string(d) << " " << B;
    }
  }
}

TEST(BnTestForward, RequiresPopulatedStats) {
  const BatchNormState s(2);
  EXPECT_THROW(bn_test_forward(Mat::Ones(1, 2), s), Error);
}

TEST(BnTestForward, IdentityPolyEqualsNoCorrection) {
  Rng rng = make_rng(14);
  BatchNormState s(3);
  bn_train_forward(Mat::Random(5, 3), s);
  const Mat x = Mat::Random(4, 3);
  EXPECT_EQ(bn_test_forward(x, s, TestCorrection::polynomial(PolyCoeffs{})), bn_test_forward(x, s));
}

TEST(BnTestForward, KeepRateCorrectionScalesRunningVariance) {
  BatchNormState s(1);
  s.running_mean(0) = 1.0;
  s.running_var(0) = 4.0;
  s.updates = 1;
  const Mat x = (Mat(1, 1) << 3.0).finished();
  EXPECT_NEAR(bn_test_forward(x, s)(0, 0), 2.0 / std::sqrt(4.0 + s.eps), 1e-15);
  EXPECT_NEAR(bn_test_forward(x, s, TestCorrection::divide_running_var(0.5))(0, 0),
              2.0 / std::sqrt(2.0 + s.eps), 1e-15);
  EXPECT_THROW(TestCorrection::divide_running_var(0.0), Error);
}

TEST(PolyCorrection, ShrinksCurveGap) {
  const auto fit_grid = make_grid(-6.0, 6.0, 0.1);
  const PolyCoeffs c =
      fit_poly_correction(mc_nonlinearity_curve(SourceDist::gaussian, 8, fit_grid, 20000, 15));
  const auto grid = make_grid(-3.0, 3.0, 0.05);
  const NonlinearityCurve truth = mc_nonlinearity_curve(SourceDist::gaussian, 8, grid, 20000, 16);
  BatchNormState s(1);
  s.running_mean(0) = 0.0;
  s.running_var(0) = 1.0 - s.eps;
  s.updates = 1;
  Mat x(static_cast<Eigen::Index>(grid.size()), 1);
  for (std::size_t i = 0; i < grid.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = grid[i];
  const Mat plain = bn_test_forward(x, s);
  const Mat fixed = bn_test_forward(x, s, TestCorrection::polynomial(c));
  double gap_plain = 0.0, gap_fixed = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    gap_plain += std::pow(plain(r, 0) - truth.points[i].f_expect, 2);
    gap_fixed += std::pow(fixed(r, 0) - truth.points[i].f_expect, 2);
  }
  EXPECT_LE(gap_fixed, 0.25 * gap_plain);
}

TEST(LeaveOneOut, MatchesDirectStatistic) {
  Rng rng = make_rng(17);
  for (SourceDist d : all_source_dists()) {
    for (std::size_t B : {2u, 3u, 8u, 64u}) {
      for (int k = 0; k < 200; ++k) {
        std::vector<double> batch(B);
        for (auto& v : batch) v = sample_raw(d, rng);
        const double direct = f_train_direct(batch);
        const double loo = f_train_leave_one_out(batch[0], std::span(batch).subspan(1));
        EXPECT_NEAR(direct, loo, 1e-12);
      }
    }
  }
}

TEST(LeaveOneOut, HardBoundIsSqrtOfBMinusOne) {
  Rng rng = make_rng(18);
  std::vector<double> others(7);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    for (auto& v : others) v = sample_standardized(SourceDist::laplace, rng);
    const double f = std::abs(f_train_leave_one_out(50.0 * (k % 3 - 1), others));
    EXPECT_LE(f, std::sqrt(7.0) + 1e-12);
    worst = std::max(worst, f);
  }
  EXPECT_GT(worst, 7.0 / std::sqrt(8.0));
}

TEST(SourceDist, StandardizedMoments) {
  for (SourceDist d : all_source_dists()) {
    EXPECT_EQ(parse_source_dist(to_string(d)), d);
    Rng rng = make_rng(19);
    RunningStats st;
    for (int k = 0; k < 200000; ++k) st.push(sample_standardized(d, rng));
    EXPECT_LT(std::abs(st.mean()), 5 * st.stderr_mean()) << to_string(d);
    EXPECT_NEAR(st.variance(), 1.0, 0.03) << to_string(d);
    // Density against the raw CDF: P(U^k <= r) = r^(1/k); the power sources
    // are integrated away from their singularity at raw value 0.
    const double sd = std::sqrt(raw_variance(d)), m = raw_mean(d);
    double lo = -30.0, hi = 30.0, expect = 1.0;
    if (d == SourceDist::uniform_square || d == SourceDist::uniform_cube) {
      const double k = d == SourceDist::uniform_square ? 2.0 : 3.0;
      lo = (0.01 - m) / sd;
      hi = (1.0 - m) / sd;
      expect = 1.0 - std::pow(0.01, 1.0 / k);
    }
    double mass = 0.0;
    const int steps = 200000;
    const double h = (hi - lo) / steps;
    for (int i = 0; i < steps; ++i) mass += standardized_pdf(d, lo + (i + 0.5) * h) * h;
    EXPECT_NEAR(mass, expect, 1e-4) << to_string(d);
  }
  EXPECT_THROW(parse_source_dist("cauchy"), Error);
}

TEST(NonlinearityCurve, SymmetricSourceIsOddAndMonotone) {
  const auto grid = make_grid(-3.0, 3.0, 0.25);
  for (SourceDist d : {SourceDist::gaussian, SourceDist::uniform, SourceDist::laplace}) {
    const NonlinearityCurve c = mc_nonlinearity_curve(d, 8, grid, 20000, 20);
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = c.points[i];
      const auto& b = c.points[n - 1 - i];
      EXPECT_LT(std::abs(a.f_expect + b.f_expect), 5 * std::hypot(a.stderr, b.stderr)) << to_string(d);
      EXPECT_LE(std::abs(a.f_expect), 7.0 / std::sqrt(8.0));
      if (i > 0) {
        const auto& prev = c.points[i - 1];
        EXPECT_GE(a.f_expect - prev.f_expect, -5 * std::hypot(a.stderr, prev.stderr));
      }
    }
    EXPECT_LT(std::abs(c.points[n / 2].f_expect), 5 * c.points[n / 2].stderr);
  }
}

TEST(NonlinearityCurve, DistributionsAgreeWithinBand) {
  const auto grid = make_grid(-3.0, 3.0, 0.5);
  std::vector<NonlinearityCurve> curves;
  for (SourceDist d : all_source_dists()) curves.push_back(mc_nonlinearity_curve(d, 8, grid, 20000, 21));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double lo = 1e300, hi = -1e300;
    for (const auto& c : curves) {
      lo = std::min(lo, c.points[i].f_expect);
      hi = std::max(hi, c.points[i].f_expect);
    }
    EXPECT_LT(hi - lo, 0.2) << grid[i];
  }
}

TEST(NonlinearityCurve, Preconditions) {
  EXPECT_THROW(mc_nonlinearity_curve(SourceDist::gaussian, 1, {0.0}, 10000, 1), Error);
  EXPECT_THROW(mc_nonlinearity_curve(SourceDist::gaussian, 8, {0.0}, 100, 1), Error);
  EXPECT_THROW(make_grid(1.0, 0.0, 0.1), Error);
  EXPECT_EQ(make_grid(-3.0, 3.0, 0.05).size(), 121u);
}

TEST(FitPolyCorrection, ExactLinearCurve) {
  NonlinearityCurve c;
  c.dist = SourceDist::gaussian;
  for (double x : make_grid(-3.0, 3.0, 0.5)) c.points.push_back({x, x, 0.0, 0.0});
  for (auto w : {PolyWeighting::uniform, PolyWeighting::source_density}) {
    const PolyCoeffs p = fit_poly_correction(c, w);
    EXPECT_NEAR(p.a1, 1.0, 1e-12);
    EXPECT_NEAR(p.a3, 0.0, 1e-12);
    EXPECT_NEAR(p.a5, 0.0, 1e-12);
    EXPECT_NEAR(p.a7, 0.0, 1e-12);
    EXPECT_NEAR(p.rmse, 0.0, 1e-12);
  }
}

TEST(FitPolyCorrection, RecoversKnownPolynomial) {
  const PolyCoeffs truth{1.1, -0.09, 0.006, -0.0002};
  NonlinearityCurve c;
  for (double x : make_grid(-4.0, 4.0, 0.1)) c.points.push_back({x, truth(x), 0.0, 0.0});
  const PolyCoeffs p = fit_poly_correction(c, PolyWeighting::uniform);
  EXPECT_NEAR(p.a1, truth.a1, 1e-10);
  EXPECT_NEAR(p.a3, truth.a3, 1e-10);
  EXPECT_NEAR(p.a5, truth.a5, 1e-10);
  EXPECT_NEAR(p.a7, truth.a7, 1e-10);
}

TEST(FitPolyCorrection, NeedsFourPoints) {
  NonlinearityCurve c;
  for (double x : {0.1, 0.2, 0.3}) c.points.push_back({x, x, 0.0, 0.0});
  EXPECT_THROW(fit_poly_correction(c, PolyWeighting::uniform), Error);
}

TEST(FitPolyCorrection, LargeBatchApproachesIdentity) {
  const auto grid = make_grid(-3.0, 3.0, 0.25);
  const PolyCoeffs p = fit_poly_correction(mc_nonlinearity_curve(SourceDist::gaussian, 256, grid, 10000, 22));
  EXPECT_NEAR(p.a1, 1.0, 0.01);
  EXPECT_NEAR(p.a3, 0.0, 0.01);
  EXPECT_NEAR(p.a5, 0.0, 0.002);
  EXPECT_NEAR(p.a7, 0.0, 0.0002);
}

TEST(CrossNormalize, ConstantBatchIsZero) {
  EXPECT_EQ(cross_normalize(Vec::Constant(5, 2.5)), Vec::Zero(5));
  EXPECT_THROW(cross_normalize(Vec::Ones(2)), Error);
}

TEST(CrossNormalize, LeaveOneOutStatsIgnoreTheElement) {
  Rng rng = make_rng(23);
  Vec b = Vec::Random(6);
  for (auto norm : {CrossNormalizer::remaining, CrossNormalizer::batch_size}) {
    const auto before = leave_one_out_stats(b, 2, norm);
    b(2) += 17.0;
    const auto after = leave_one_out_stats(b, 2, norm);
    EXPECT_EQ(before, after);
  }
}

TEST(CrossNormalize, MatchesDirectFormula) {
  const Vec b = (Vec(4) << 1.0, 2.0, 4.0, 7.0).finished();
  const Vec out = cross_normalize(b, 2.0, 0.5, 0.0);
  // element 0: others {2,4,7}, mean 13/3, variance (1/3)Σ(x-m)² = 38/9.
  const double expect = 2.0 * (1.0 - 13.0 / 3.0) / std::sqrt(38.0 / 9.0) + 0.5;
  EXPECT_NEAR(out(0), expect, 1e-14);
  const auto [mu, var] = leave_one_out_stats(b, 0, CrossNormalizer::batch_size);
  EXPECT_NEAR(mu, 13.0 / 4.0, 1e-15);
  EXPECT_NEAR(var, ((2 - 3.25) * (2 - 3.25) + (4 - 3.25) * (4 - 3.25) + (7 - 3.25) * (7 - 3.25)) / 4, 1e-14);
}

TEST(CrossNormalize, ExpectationIsAffine) {
  const auto grid = make_grid(-3.0, 3.0, 0.25);
  const NonlinearityCurve c = mc_cross_norm_curve(SourceDist::gaussian, 8, grid, 40000, 24);
  // Weighted straight-line fit, then every point within 3 standard errors.
  Mat A(static_cast<Eigen::Index>(grid.size()), 2);
  Vec y(A.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const auto& p = c.points[static_cast<std::size_t>(i)];
    A(i, 0) = 1.0 / p.stderr;
    A(i, 1) = p.x_test / p.stderr;
    y(i) = p.f_expect / p.stderr;
  }
  const Vec coef = A.colPivHouseholderQr().solve(y);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    EXPECT_LT(std::abs(A.row(i).dot(coef) - y(i)), 3.0) << grid[static_cast<std::size_t>(i)];
  }
}

TEST(CrossNormalize, PlainBatchNormIsNotAffine) {
  const auto grid = make_grid(-3.0, 3.0, 0.25);
  const NonlinearityCurve c = mc_nonlinearity_curve(SourceDist::gaussian, 8, grid, 40000, 24);
  Mat A(static_cast<Eigen::Index>(grid.size()), 2);
  Vec y(A.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const auto& p = c.points[static_cast<std::size_t>(i)];
    A(i, 0) = 1.0 / p.stderr;
    A(i, 1) = p.x_test / p.stderr;
    y(i) = p.f_expect / p.stderr;
  }
  const Vec coef = A.colPivHouseholderQr().solve(y);
  EXPECT_GT((A * coef - y).cwiseAbs().maxCoeff(), 10.0);
}

TEST(NoiseBudget, SmallBatchBounds) {
  Rng rng = make_rng(25);
  EXPECT_LT(noise_budget(4, SourceDist::gaussian, 100000, rng).value, 0.5);
  EXPECT_LT(noise_budget(8, SourceDist::gaussian, 100000, rng).value, 0.2);
  EXPECT_LT(noise_budget(16, SourceDist::gaussian, 100000, rng).value, 0.1);
}

TEST(NoiseBudget, MatchesCurveIntegral) {
  // ∫ φ(x) f_Var(x) dx by quadrature over an independent curve.
  const auto grid = make_grid(-5.0, 5.0, 0.25);
  const NonlinearityCurve c = mc_nonlinearity_curve(SourceDist::gaussian, 8, grid, 20000, 26);
  double integral = 0.0;
  for (const auto& p : c.points) integral += standardized_pdf(SourceDist::gaussian, p.x_test) * p.f_var * 0.25;
  Rng rng = make_rng(27);
  const NoiseBudget nb = noise_budget(8, SourceDist::gaussian, 200000, rng);
  EXPECT_NEAR(nb.value, integral, 5 * nb.stderr + 0.005);
}

TEST(CurveCsv, Schemas) {
  NonlinearityCurve c;
  c.dist = SourceDist::laplace;
  c.batch = 4;
  c.points.push_back({0.5, 0.4, 0.1, 0.01});
  std::ostringstream os;
  write_curve_csv_header(os);
  write_curve_csv_rows(os, c);
  write_poly_csv_header(os);
  write_poly_csv_row(os, 8, PolyCoeffs{});
  EXPECT_EQ(os.str(),
            "dist,B,x_test,f_expect,f_var,stderr\nlaplace,4,0.5,0.4,0.1,0.01\n"
            "B,a1,a3,a5,a7,rmse\n8,1,0,0,0,0\n");
}
