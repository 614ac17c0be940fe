#include "rotlab/cli.hpp"

#include "rotlab/bn_lab.hpp"
#include "rotlab/csv.hpp"
#include "rotlab/linear_models.hpp"
#include "rotlab/nn.hpp"
#include "rotlab/noise_lab.hpp"
#include "rotlab/rotation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

#ifndef ROTLAB_VERSION
#define ROTLAB_VERSION "dev"
#endif

namespace rotlab::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string normalize_key(std::string k) {
  std::replace(k.begin(), k.end(), '_', '-');
  return k;
}

int line_of_key(const std::string& text, const std::string& raw_key) {
  const auto pos = text.find("\"" + raw_key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

std::string scalar_token(const json& v, const std::string& key, int line) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return csv::num(v.get<double>());
  throw ConfigError(key, "line " + std::to_string(line) + ": expected a number or string");
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  ExperimentConfig cfg;
  cfg.path = path;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return cfg;

  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", path + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config", path + ": top level must be an object");
  for (const auto& [raw, value] : root.items()) {
    ConfigEntry e;
    e.key = normalize_key(raw);
    e.line = line_of_key(text, raw);
    const std::string opt = "--" + e.key;
    if (value.is_boolean()) {
      e.tokens = {opt + "=" + (value.get<bool>() ? "true" : "false")};
    } else if (value.is_array()) {
      if (value.empty()) throw ConfigError(e.key, "line " + std::to_string(e.line) + ": empty list");
      e.tokens.push_back(opt);
      for (const auto& item : value) e.tokens.push_back(scalar_token(item, e.key, e.line));
    } else {
      e.tokens = {opt, scalar_token(value, e.key, e.line)};
    }
    cfg.entries.push_back(std::move(e));
  }
  return cfg;
}

namespace {

std::uint64_t count_arg(const std::string& key, const std::string& text) {
  try {
    return parse_count(text);
  } catch (const Error&) {
    throw ConfigError(key, "not a non-negative integer count: '" + text + "'");
  }
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

struct Context {
  std::string command;
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> outputs;

  std::ofstream open(const std::string& name) {
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + (out_dir / name).string() + "'");
    outputs.push_back(name);
    return f;
  }
};

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  bool plot = false;
};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  Common common;
  std::vector<std::pair<std::string, std::function<json()>>> echo;
  std::set<std::string> keys;
  std::function<void(Context&)> body;

  template <class T>
  CLI::Option* opt(const std::string& key, T& var, const std::string& help) {
    echo.emplace_back(key, [&var] { return json(var); });
    keys.insert(key);
    return app->add_option("--" + key, var, help)->capture_default_str();
  }
  CLI::Option* flag(const std::string& key, bool& var, const std::string& help) {
    echo.emplace_back(key, [&var] { return json(var); });
    keys.insert(key);
    return app->add_flag("--" + key, var, help);
  }
};

AngleDistribution make_angle(const std::string& kind, double sigma, double max_angle,
                             double angle) {
  if (kind == "gaussian") {
    require(sigma > 0.0 && std::isfinite(sigma), "sigma", "must be positive");
    return AngleDistribution::gaussian_tangent(sigma);
  }
  if (kind == "uniform") {
    require(max_angle > 0.0 && max_angle < std::numbers::pi / 2, "max-angle",
            "must lie in (0, pi/2)");
    return AngleDistribution::uniform_angle(max_angle);
  }
  if (kind == "fixed") {
    require(std::abs(angle) < std::numbers::pi / 2, "angle", "must lie in (-pi/2, pi/2)");
    return AngleDistribution::fixed(angle);
  }
  throw ConfigError("angle-dist", "expected gaussian, uniform or fixed, got '" + kind + "'");
}

void check_keep_rates(const std::vector<double>& ps, const std::string& key = "keep-rate") {
  for (double p : ps) require(p > 0.0 && p <= 1.0, key, "must lie in (0, 1]");
}

SourceDist dist_arg(const std::string& name, const std::string& key = "dist") {
  try {
    return parse_source_dist(name);
  } catch (const Error&) {
    throw ConfigError(key, "unknown distribution '" + name +
                               "' (gaussian, uniform, uniform-square, uniform-cube, laplace)");
  }
}

std::vector<double> grid_arg(double lo, double hi, double step) {
  require(std::isfinite(lo) && std::isfinite(hi) && lo < hi, "lo", "need lo < hi");
  require(step > 0.0 && (hi - lo) / step < 1e6, "step", "must be positive and not too small");
  return make_grid(lo, hi, step);
}

// ---------------------------------------------------------------------------

struct VerifyRotation {
  std::size_t dim = 8;
  std::string angle_dist = "gaussian";
  double sigma = 0.5;
  double max_angle = 0.5;
  double angle = 0.3;
  std::string samples = "1e6";
  std::string oracle_samples = "100";

  void add(Command& c) {
    c.opt("dim", dim, "Vector dimension D >= 2");
    c.opt("angle-dist", angle_dist, "gaussian (tan ~ N(0, sigma^2)), uniform or fixed");
    c.opt("sigma", sigma, "Tangent standard deviation");
    c.opt("max-angle", max_angle, "Half-width of the uniform angle law");
    c.opt("angle", angle, "Fixed angle");
    c.opt("samples", samples, "Monte-Carlo draws");
    c.opt("oracle-samples", oracle_samples, "Realizations checked against the dense matrix");
  }

  void run(Context& ctx) const {
    require(dim >= 2, "dim", "rotation needs D >= 2");
    const AngleDistribution ad = make_angle(angle_dist, sigma, max_angle, angle);
    const RotationSampler sampler{ad};
    const std::uint64_t n = count_arg("samples", samples);
    const std::uint64_t n_oracle = count_arg("oracle-samples", oracle_samples);
    require(n >= 2, "samples", "need at least two draws");

    Rng rng = make_rng(ctx.seed, 0);
    std::normal_distribution<double> z;
    const auto d = static_cast<Eigen::Index>(dim);
    Vec x(d), g(d);
    for (auto& v : x) v = z(rng);

    double dense = 0.0, adjoint = 0.0, inner = 0.0, norm = 0.0;
    for (std::uint64_t k = 0; k < n_oracle; ++k) {
      const RotationRealization r = sampler.sample(dim, rng);
      const double t = r.tangents[0];
      for (auto& v : g) v = z(rng);
      const Vec rx = apply_rotation(x, r);
      const Mat M = dense_rotation_matrix(r.pairing, t);
      const double scale = x.cwiseAbs().maxCoeff() * (1.0 + std::abs(t));
      dense = std::max(dense, (rx - M * x).cwiseAbs().maxCoeff() / scale);
      const Vec rtg = apply_rotation_transpose(g, r);
      adjoint = std::max(adjoint, std::abs(rx.dot(g) - x.dot(rtg)) / (scale * g.norm() * std::sqrt(dim)));
      inner = std::max(inner, std::abs(x.dot(rx) - x.squaredNorm()) / (scale * x.norm()));
      const double fixed = r.pairing.fixed ? x(static_cast<Eigen::Index>(*r.pairing.fixed)) : 0.0;
      const double expect = x.squaredNorm() + t * t * (x.squaredNorm() - fixed * fixed);
      norm = std::max(norm, std::abs(rx.squaredNorm() - expect) / expect);
    }

    const NoiseOp op(NoiseOpSpec::rotation(ad));
    const ConditionalMoments m = mc_conditional_moments(op, x, n, rng);
    const Mat expect = conditional_variance(x, NoiseMethod::rotation, keep_rate_for(ad));
    const double floor = 1e-12 * x.squaredNorm();
    double shift_z = 0.0, cov_z = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      shift_z = std::max(shift_z, std::abs(m.mean_shift(i)) / std::max(m.mean_stderr(i), floor));
      for (Eigen::Index j = 0; j < d; ++j) {
        cov_z = std::max(cov_z, std::abs(m.cov(i, j) - expect(i, j)) /
                                    std::max(m.cov_stderr(i, j), floor));
      }
    }

    auto f = ctx.open("verify_rotation.csv");
    csv::write_row(f, {"check", "value", "tolerance", "pass"});
    int failed = 0;
    auto row = [&](const std::string& name, double v, double tol) {
      const bool ok = v <= tol;
      if (!ok) ++failed;
      csv::write_row(f, {name, csv::num(v), csv::num(tol), ok ? "true" : "false"});
    };
    row("dense_oracle_rel_err", dense, 1e-12);
    row("adjoint_rel_err", adjoint, 1e-12);
    row("inner_product_rel_err", inner, 1e-12);
    row("norm_identity_rel_err", norm, 1e-12);
    row("mean_shift_max_z", shift_z, 4.0);
    row("conditional_cov_max_z", cov_z, 4.0);
    ctx.out << "equivalent keep rate " << keep_rate_for(ad) << ", " << (6 - failed)
            << "/6 invariant checks passed\n";
    if (failed > 0) ctx.err << "rotlab: warning: " << failed << " invariant check(s) failed\n";
  }
};

struct Coadapt {
  std::size_t dim = 8;
  double rho = 0.5;
  std::vector<double> keep_rate{0.8};
  std::string samples = "1e6";
  std::size_t chunks = 20;

  void add(Command& c) {
    c.opt("dim", dim, "Dimension D");
    c.opt("rho", rho, "Common correlation of the Gaussian source");
    c.opt("keep-rate", keep_rate, "Keep rates p (one or more)");
    c.opt("samples", samples, "Samples per method and keep rate");
    c.opt("chunks", chunks, "Independent chunks for the standard error");
  }

  void run(Context& ctx) const {
    require(dim >= 2, "dim", "need D >= 2");
    require(rho > -1.0 / static_cast<double>(dim - 1) && rho < 1.0, "rho",
            "must lie in (-1/(D-1), 1)");
    check_keep_rates(keep_rate);
    require(chunks >= 2, "chunks", "need at least two chunks");
    const std::uint64_t n = count_arg("samples", samples);
    require(n >= 2 * chunks, "samples", "need at least two samples per chunk");
    const GaussianSource src = GaussianSource::equicorrelated(dim, rho);
    auto f = ctx.open("coadapt.csv");
    write_coadapt_csv_header(f);
    std::uint64_t stream = 0;
    for (double p : keep_rate) {
      for (NoiseMethod m : {NoiseMethod::dropout, NoiseMethod::rotation}) {
        const CoadaptReport r =
            verify_reduction(src, m, p, n, mix_seed(ctx.seed, stream++), chunks);
        write_coadapt_csv_row(f, r);
        ctx.out << r.method << " p=" << p << ": factor " << r.observed_factor << " +- "
                << r.stderr_factor << " (closed form " << r.predicted_factor << ")\n";
      }
    }
  }
};

struct Linreg {
  std::size_t dim = 8;
  std::size_t n = 50;
  std::vector<double> lambda{0.25, 1.0, 4.0};
  std::size_t problems = 1;
  bool degenerate_column = false;
  double column_scale = 1e-8;

  void add(Command& c) {
    c.opt("dim", dim, "Feature dimension D");
    c.opt("n", n, "Samples per problem");
    c.opt("lambda", lambda, "Noise strengths (1-p)/p");
    c.opt("problems", problems, "Random design matrices");
    c.flag("degenerate-column", degenerate_column, "Scale the last column by --column-scale");
    c.opt("column-scale", column_scale, "Scale of the degenerate column");
  }

  void run(Context& ctx) const {
    require(dim >= 2, "dim", "need D >= 2");
    require(n >= 1, "n", "need at least one sample");
    require(problems >= 1, "problems", "need at least one problem");
    for (double l : lambda) require(l >= 0.0 && std::isfinite(l), "lambda", "must be >= 0");
    Rng rng = make_rng(ctx.seed, 0);
    std::normal_distribution<double> z;
    auto f = ctx.open("linreg.csv");
    write_kappa_csv_header(f);
    const auto d = static_cast<Eigen::Index>(dim);
    for (std::size_t k = 0; k < problems; ++k) {
      RegressionProblem prob;
      prob.X.resize(static_cast<Eigen::Index>(n), d);
      for (Eigen::Index i = 0; i < prob.X.size(); ++i) prob.X.data()[i] = z(rng);
      if (degenerate_column) prob.X.col(d - 1) *= column_scale;
      prob.y.resize(static_cast<Eigen::Index>(n));
      for (auto& v : prob.y) v = z(rng);
      for (double l : lambda) {
        prob.lambda = l;
        const ConditionNumbers c = condition_numbers(prob);
        write_kappa_csv_row(f, l, "rotation", dim, n, c.rotation);
        write_kappa_csv_row(f, l, "dropout", dim, n, c.dropout);
        if (k == 0) {
          ctx.out << "lambda=" << l << ": kappa_rot " << c.rotation << ", kappa_drop "
                  << c.dropout;
          if (l == 1.0) ctx.out << " (bound " << pair_denominator(d) << ")";
          ctx.out << "\n";
        }
      }
    }
  }
};

struct AngleDemo {
  std::size_t dim = 1024;
  std::vector<double> keep_rate{0.5, 0.8};
  std::string samples = "1e4";
  std::size_t classes = 10;
  std::size_t flip_dim = 64;
  double sigma = 0.5;
  std::string flip_samples = "1e4";

  void add(Command& c) {
    c.opt("dim", dim, "Dimension for the dropout angle");
    c.opt("keep-rate", keep_rate, "Dropout keep rates");
    c.opt("samples", samples, "Draws per keep rate");
    c.opt("classes", classes, "Classes of the random linear classifier");
    c.opt("flip-dim", flip_dim, "Input dimension of the classifier");
    c.opt("sigma", sigma, "Tangent standard deviation of the rotation");
    c.opt("flip-samples", flip_samples, "Rotations per margin");
  }

  void run(Context& ctx) const {
    require(dim >= 2, "dim", "need D >= 2");
    check_keep_rates(keep_rate);
    require(classes >= 2, "classes", "need at least two classes");
    require(flip_dim >= 2, "flip-dim", "need D >= 2");
    require(sigma > 0.0, "sigma", "must be positive");
    const std::uint64_t n = count_arg("samples", samples);
    const std::uint64_t nf = count_arg("flip-samples", flip_samples);
    require(n >= 2, "samples", "need at least two draws");
    require(nf >= 2, "flip-samples", "need at least two draws");

    auto f = ctx.open("angle_demo.csv");
    csv::write_row(f, {"D", "p", "cos2_mean", "stderr"});
    std::uint64_t stream = 0;
    for (double p : keep_rate) {
      Rng rng = make_rng(ctx.seed, stream++);
      const MeanEstimate e = dropout_rotation_angle(dim, p, n, rng);
      csv::write_row(f, {std::to_string(dim), csv::num(p), csv::num(e.mean), csv::num(e.stderr)});
      ctx.out << "p=" << p << ": E cos^2 = " << e.mean << " +- " << e.stderr << "\n";
    }

    Rng rng = make_rng(ctx.seed, stream++);
    std::normal_distribution<double> z;
    Mat W(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(flip_dim));
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = z(rng);
    const RotationSampler sampler{AngleDistribution::gaussian_tangent(sigma)};
    const auto curve = logistic_margin_demo(W, sampler, default_margin_grid(sampler), nf, rng);
    auto g = ctx.open("flip_rate.csv");
    write_flip_csv(g, curve);
  }
};

struct VarShift {
  std::size_t dim = 64;
  std::size_t rows = 256;
  double keep_rate = 0.5;
  std::size_t reps = 100;
  bool per_unit = false;

  void add(Command& c) {
    c.opt("dim", dim, "Feature dimension D");
    c.opt("rows", rows, "Unit-sphere weight rows");
    c.opt("keep-rate", keep_rate, "Dropout keep rate p");
    c.opt("reps", reps, "Repetitions");
    c.flag("per-unit", per_unit, "Also write per-unit ratios");
  }

  void run(Context& ctx) const {
    require(dim >= 1, "dim", "must be positive");
    require(rows >= 2, "rows", "need at least two rows");
    require(keep_rate > 0.0 && keep_rate <= 1.0, "keep-rate", "must lie in (0, 1]");
    require(reps >= 1, "reps", "need at least one repetition");
    auto f = ctx.open("var_shift.csv");
    write_shift_summary_csv_header(f);
    std::optional<std::ofstream> units;
    if (per_unit) {
      units.emplace(ctx.open("var_shift_units.csv"));
      std::ostringstream head;
      write_shift_csv_header(head);
      *units << "rep," << head.str();
    }
    std::size_t spread = 0, max = 0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const ShiftTrial t = variance_shift_trial(dim, rows, keep_rate, ctx.seed, rep);
      write_shift_summary_csv_row(f, rep, t);
      spread += t.b_has_smaller_spread();
      max += t.a_has_larger_max();
      if (units) {
        for (const ShiftReport* r : {&t.a, &t.b, &t.a_centered}) {
          std::ostringstream body;
          write_shift_csv_rows(body, *r);
          std::istringstream lines(body.str());
          for (std::string line; std::getline(lines, line);) *units << rep << "," << line << "\r\n";
        }
      }
    }
    ctx.out << "Var[r_b] < Var[r_a] in " << spread << "/" << reps << ", max r_a > max r_b in "
            << max << "/" << reps << "\n";
  }
};

struct BnCurve {
  std::vector<std::size_t> batch{8};
  std::vector<std::string> dist{"gaussian"};
  double lo = -3.0, hi = 3.0, step = 0.05;
  std::string samples = "1e5";

  void add(Command& c) {
    c.opt("batch", batch, "Batch sizes B");
    c.opt("dist", dist, "Source distributions, or 'all'");
    c.opt("lo", lo, "Grid start");
    c.opt("hi", hi, "Grid end");
    c.opt("step", step, "Grid step");
    c.opt("samples", samples, "Draws per grid point (>= 1e4)");
  }

  void run(Context& ctx) const {
    std::vector<SourceDist> dists;
    for (const auto& name : dist) {
      if (name == "all") {
        for (SourceDist d : all_source_dists()) dists.push_back(d);
      } else {
        dists.push_back(dist_arg(name));
      }
    }
    for (std::size_t b : batch) require(b >= 2, "batch", "need B >= 2");
    const std::uint64_t n = count_arg("samples", samples);
    require(n >= 10000, "samples", "need at least 1e4 draws per point");
    const auto grid = grid_arg(lo, hi, step);
    auto f = ctx.open("bn_curve.csv");
    write_curve_csv_header(f);
    for (std::size_t b : batch) {
      for (SourceDist d : dists) write_curve_csv_rows(f, mc_nonlinearity_curve(d, b, grid, n, ctx.seed));
    }
  }
};

struct BnPoly {
  std::vector<std::size_t> batch{8};
  std::string dist = "gaussian";
  std::string weighting = "density";
  double lo = -6.0, hi = 6.0, step = 0.05;
  std::string samples = "1e6";
  bool write_curve = false;

  void add(Command& c) {
    c.opt("batch", batch, "Batch sizes B");
    c.opt("dist", dist, "Source distribution");
    c.opt("weighting", weighting, "density (source-weighted) or uniform least squares");
    c.opt("lo", lo, "Grid start");
    c.opt("hi", hi, "Grid end");
    c.opt("step", step, "Grid step");
    c.opt("samples", samples, "Draws per grid point (>= 1e4)");
    c.flag("write-curve", write_curve, "Also write the fitted curve");
  }

  void run(Context& ctx) const {
    const SourceDist d = dist_arg(dist);
    require(weighting == "density" || weighting == "uniform", "weighting",
            "expected density or uniform");
    for (std::size_t b : batch) require(b >= 2, "batch", "need B >= 2");
    const std::uint64_t n = count_arg("samples", samples);
    require(n >= 10000, "samples", "need at least 1e4 draws per point");
    const auto grid = grid_arg(lo, hi, step);
    const PolyWeighting w =
        weighting == "density" ? PolyWeighting::source_density : PolyWeighting::uniform;
    auto f = ctx.open("bn_poly.csv");
    write_poly_csv_header(f);
    std::optional<std::ofstream> cf;
    if (write_curve) {
      cf.emplace(ctx.open("bn_poly_curve.csv"));
      write_curve_csv_header(*cf);
    }
    for (std::size_t b : batch) {
      const NonlinearityCurve curve = mc_nonlinearity_curve(d, b, grid, n, ctx.seed);
      const PolyCoeffs c = fit_poly_correction(curve, w);
      write_poly_csv_row(f, b, c);
      if (cf) write_curve_csv_rows(*cf, curve);
      ctx.out << std::setprecision(6) << "B=" << b << ": a1=" << c.a1 << " a3=" << c.a3
              << " a5=" << c.a5 << " a7=" << c.a7 << "\n";
    }
  }
};

struct CnCheck {
  std::size_t batch = 8;
  std::string dist = "gaussian";
  std::string normalizer = "remaining";
  double lo = -3.0, hi = 3.0, step = 0.25;
  std::string samples = "1e5";

  void add(Command& c) {
    c.opt("batch", batch, "Batch size B >= 3");
    c.opt("dist", dist, "Source distribution");
    c.opt("normalizer", normalizer, "remaining (1/(B-1)) or batch-size (1/B)");
    c.opt("lo", lo, "Grid start");
    c.opt("hi", hi, "Grid end");
    c.opt("step", step, "Grid step");
    c.opt("samples", samples, "Draws per grid point (>= 1e4)");
  }

  static std::pair<double, double> max_line_z(const NonlinearityCurve& c) {
    const auto n = static_cast<Eigen::Index>(c.points.size());
    Mat A(n, 2);
    Vec y(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& p = c.points[static_cast<std::size_t>(i)];
      w(i) = 1.0 / std::max(p.stderr, 1e-300);
      A(i, 0) = w(i);
      A(i, 1) = w(i) * p.x_test;
      y(i) = w(i) * p.f_expect;
    }
    const Vec coef = A.colPivHouseholderQr().solve(y);
    return {coef(1), (A * coef - y).cwiseAbs().maxCoeff()};
  }

  void run(Context& ctx) const {
    require(batch >= 3, "batch", "cross normalization needs B >= 3");
    const SourceDist d = dist_arg(dist);
    require(normalizer == "remaining" || normalizer == "batch-size", "normalizer",
            "expected remaining or batch-size");
    const std::uint64_t n = count_arg("samples", samples);
    require(n >= 10000, "samples", "need at least 1e4 draws per point");
    const auto grid = grid_arg(lo, hi, step);
    require(grid.size() >= 3, "step", "need at least three grid points");
    const CrossNormalizer norm =
        normalizer == "remaining" ? CrossNormalizer::remaining : CrossNormalizer::batch_size;
    // Same seed for both curves: common random numbers per grid point.
    const NonlinearityCurve cn = mc_cross_norm_curve(d, batch, grid, n, ctx.seed, norm);
    const NonlinearityCurve bn = mc_nonlinearity_curve(d, batch, grid, n, ctx.seed);
    auto f = ctx.open("cn_check.csv");
    csv::write_row(f, {"x", "cn_expect", "cn_stderr", "bn_expect", "bn_stderr"});
    for (std::size_t i = 0; i < grid.size(); ++i) {
      csv::write_row(f, {csv::num(grid[i]), csv::num(cn.points[i].f_expect),
                         csv::num(cn.points[i].stderr), csv::num(bn.points[i].f_expect),
                         csv::num(bn.points[i].stderr)});
    }
    const auto [cn_slope, cn_z] = max_line_z(cn);
    const auto [bn_slope, bn_z] = max_line_z(bn);
    ctx.out << "CN: slope " << cn_slope << ", max |residual|/stderr from a line " << cn_z << "\n"
            << "BN: slope " << bn_slope << ", max |residual|/stderr from a line " << bn_z << "\n";
  }
};

struct NoiseBudgetCmd {
  std::vector<std::size_t> batch{8, 16};
  std::string dist = "gaussian";
  std::string samples = "1e6";

  void add(Command& c) {
    c.opt("batch", batch, "Batch sizes B");
    c.opt("dist", dist, "Source distribution");
    c.opt("samples", samples, "Paired draws per batch size");
  }

  void run(Context& ctx) const {
    const SourceDist d = dist_arg(dist);
    for (std::size_t b : batch) require(b >= 2, "batch", "need B >= 2");
    const std::uint64_t n = count_arg("samples", samples);
    require(n >= 2, "samples", "need at least two draws");
    auto f = ctx.open("noise_budget.csv");
    csv::write_row(f, {"batch", "dist", "budget", "stderr"});
    for (std::size_t b : batch) {
      Rng rng = make_rng(ctx.seed, b);
      const NoiseBudget nb = noise_budget(b, d, n, rng);
      csv::write_row(f, {std::to_string(b), to_string(d), csv::num(nb.value), csv::num(nb.stderr)});
      ctx.out << "B=" << b << ": E[f_Var] = " << nb.value << " +- " << nb.stderr << "\n";
    }
  }
};

struct TrainDemo {
  std::vector<std::size_t> hidden{64, 64};
  std::vector<std::string> methods{"baseline", "rotation"};
  std::vector<double> keep_rate{0.8};
  bool centered = false;
  bool batchnorm = false;
  std::string noise_position = "before";
  std::size_t seeds = 5;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t dim = 20;
  std::size_t n_train = 200;
  std::size_t n_val = 2000;
  double separation = 2.0;
  double label_flip = 0.1;
  std::string train_csv;
  std::string val_csv;
  std::size_t report_every = 0;

  void add(Command& c) {
    c.opt("hidden", hidden, "Hidden layer widths");
    c.opt("methods", methods, "Regularizers: baseline, rotation, dropout, gaussian");
    c.opt("keep-rate", keep_rate, "Equivalent keep rates for the noisy regularizers");
    c.flag("centered", centered, "Center noise with the batch mean");
    c.flag("batchnorm", batchnorm, "Batch norm after every hidden linear layer");
    c.opt("noise-position", noise_position, "before (weights) or after (weights, before BN)");
    c.opt("seeds", seeds, "Paired seeds: seed, seed+1, ...");
    c.opt("epochs", epochs, "Training epochs");
    c.opt("batch-size", batch_size, "Mini-batch size");
    c.opt("lr", lr, "Learning rate");
    c.opt("momentum", momentum, "SGD momentum");
    c.opt("weight-decay", weight_decay, "L2 weight decay");
    c.opt("dim", dim, "Input dimension of the synthetic data");
    c.opt("n-train", n_train, "Training samples");
    c.opt("n-val", n_val, "Validation samples");
    c.opt("separation", separation, "Distance between the class means");
    c.opt("label-flip", label_flip, "Fraction of flipped labels");
    c.opt("train-csv", train_csv, "Training data CSV (label in the last column)");
    c.opt("val-csv", val_csv, "Validation data CSV");
    c.opt("report-every", report_every, "Also report every k epochs (0: final only)");
  }

  std::optional<NoiseOpSpec> noise_for(const std::string& method, double p) const {
    if (method == "baseline") return std::nullopt;
    NoiseOpSpec s;
    if (method == "rotation") {
      s = NoiseOpSpec::rotation(AngleDistribution::gaussian_for_keep_rate(p), centered);
    } else if (method == "dropout") {
      s = NoiseOpSpec::bernoulli(p, centered);
    } else if (method == "gaussian") {
      s = NoiseOpSpec::gaussian((1.0 - p) / p, centered);
    } else {
      throw ConfigError("methods", "unknown regularizer '" + method + "'");
    }
    return s;
  }

  void run(Context& ctx) const {
    require(!hidden.empty(), "hidden", "need at least one hidden layer");
    for (std::size_t h : hidden) require(h >= 1, "hidden", "widths must be positive");
    check_keep_rates(keep_rate);
    for (double p : keep_rate) require(p < 1.0, "keep-rate", "must be below 1 for noise");
    require(noise_position == "before" || noise_position == "after", "noise-position",
            "expected before or after");
    require(seeds >= 1, "seeds", "need at least one seed");
    require(train_csv.empty() == val_csv.empty(), train_csv.empty() ? "train-csv" : "val-csv",
            "train-csv and val-csv go together");

    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.learning_rate = lr;
    cfg.momentum = momentum;
    cfg.weight_decay = weight_decay;
    cfg.data = {dim, n_train, n_val, separation, label_flip};
    cfg.report_every = report_every;
    std::size_t input_dim = dim;
    if (!train_csv.empty()) {
      cfg.train_csv = train_csv;
      cfg.val_csv = val_csv;
      input_dim = static_cast<std::size_t>(load_csv_dataset(train_csv).X.cols());
    }

    ModelSpec model;
    model.input_dim = input_dim;
    for (std::size_t h : hidden) {
      LayerSpec l;
      l.width = h;
      l.batchnorm = batchnorm;
      l.noise_position =
          noise_position == "before" ? NoisePosition::before_weight : NoisePosition::after_weight;
      model.layers.push_back(l);
    }
    LayerSpec head;
    head.width = 2;
    head.activation = Activation::none;
    if (train_csv.empty()) {
      head.width = 2;
    } else {
      int top = 0;
      for (int y : load_csv_dataset(train_csv).y) top = std::max(top, y);
      head.width = static_cast<std::size_t>(top) + 1;
    }
    model.layers.push_back(head);

    std::vector<Regularizer> grid;
    for (const auto& m : methods) {
      if (m == "baseline") {
        grid.push_back({"baseline", std::nullopt});
        continue;
      }
      for (double p : keep_rate) grid.push_back({m, noise_for(m, p)});
    }
    std::vector<std::uint64_t> seed_list;
    for (std::size_t k = 0; k < seeds; ++k) seed_list.push_back(ctx.seed + k);

    const GeneralizationTable table = train_and_report(model, cfg, grid, seed_list);
    auto f = ctx.open("train.csv");
    write_train_csv(f, table.rows);
    auto s = ctx.open("train_summary.csv");
    write_summary_csv(s, table.summary);
    const SummaryRow* base = nullptr;
    for (const auto& r : table.summary) {
      if (r.regularizer == "baseline") base = &r;
    }
    for (const auto& r : table.summary) {
      ctx.out << r.regularizer << " (p=" << r.strength << "): train " << r.train_mean << " +- "
              << r.train_sd << ", val " << r.val_mean << " +- " << r.val_sd << ", gap "
              << r.gap_mean << " +- " << r.gap_sd;
      if (base && &r != base) {
        ctx.out << ", sign-test p " << sign_test_p_value(r.gaps, base->gaps);
      }
      ctx.out << "\n";
    }
  }
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("ROTLAB_OUT_DIR"); env && *env) return env;
  return "rotlab-out";
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& key) {
  const std::string opt = "--" + key;
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == opt || a.rfind(opt + "=", 0) == 0;
  });
}

struct Registry {
  VerifyRotation verify_rotation;
  Coadapt coadapt;
  Linreg linreg;
  AngleDemo angle_demo;
  VarShift var_shift;
  BnCurve bn_curve;
  BnPoly bn_poly;
  CnCheck cn_check;
  NoiseBudgetCmd noise_budget;
  TrainDemo train_demo;
};

template <class P>
void add_command(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds,
                 const std::string& name, const std::string& help, P& params) {
  auto c = std::make_unique<Command>();
  c->name = name;
  c->app = app.add_subcommand(name, help);
  c->app->add_option("--config", c->common.config, "JSON config file (flags win)");
  c->opt("seed", c->common.seed, "Base seed");
  c->app->add_option("--out", c->common.out, "Output directory (default $ROTLAB_OUT_DIR or rotlab-out)");
  c->app->add_flag("--plot", c->common.plot, "Render PNG plots with python3 -m rotlab.plot");
  params.add(*c);
  c->body = [&params](Context& ctx) { params.run(ctx); };
  cmds.push_back(std::move(c));
}

}  // namespace

std::vector<std::string> subcommands() {
  return {"verify-rotation", "coadapt", "linreg", "angle-demo", "var-shift",
          "bn-curve", "bn-poly", "cn-check", "noise-budget", "train-demo"};
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  Registry reg;
  CLI::App app{"RotationOut numerics lab", "rotlab"};
  app.set_version_flag("--version", std::string(ROTLAB_VERSION));
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> cmds;
  add_command(app, cmds, "verify-rotation", "Rotation operator invariants", reg.verify_rotation);
  add_command(app, cmds, "coadapt", "Co-adaptation reduction factors", reg.coadapt);
  add_command(app, cmds, "linreg", "Condition numbers of marginalized regression", reg.linreg);
  add_command(app, cmds, "angle-demo", "Dropout angle and rotation flip rates", reg.angle_demo);
  add_command(app, cmds, "var-shift", "BN variance shift for dropout placements", reg.var_shift);
  add_command(app, cmds, "bn-curve", "Small-batch BN nonlinearity curves", reg.bn_curve);
  add_command(app, cmds, "bn-poly", "Polynomial test-mode correction", reg.bn_poly);
  add_command(app, cmds, "cn-check", "Cross-normalization linearity", reg.cn_check);
  add_command(app, cmds, "noise-budget", "Small-batch BN noise budget", reg.noise_budget);
  add_command(app, cmds, "train-demo", "Desk-scale generalization runs", reg.train_demo);

  // Config values are spliced in right after the subcommand name, skipping
  // keys that also appear as flags.
  std::vector<std::string> args = args_in;
  Command* chosen = nullptr;
  std::size_t sub_pos = 0;
  for (std::size_t i = 1; i < args.size() && !chosen; ++i) {
    for (auto& c : cmds) {
      if (args[i] == c->name) {
        chosen = c.get();
        sub_pos = i;
      }
    }
  }
  try {
    if (chosen) {
      std::string config_path;
      for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
      }
      if (!config_path.empty()) {
        const ExperimentConfig cfg = load_config(config_path);
        const std::vector<std::string> cli_args(args.begin() + static_cast<long>(sub_pos) + 1,
                                                args.end());
        std::vector<std::string> spliced;
        for (const auto& e : cfg.entries) {
          const bool known = chosen->keys.count(e.key) > 0 || e.key == "out" || e.key == "plot";
          if (!known) {
            throw ConfigError(e.key, config_path + ":" + std::to_string(e.line) +
                                         ": unknown key for " + chosen->name);
          }
          if (!given_on_command_line(cli_args, e.key)) {
            spliced.insert(spliced.end(), e.tokens.begin(), e.tokens.end());
          }
        }
        args.insert(args.begin() + static_cast<long>(sub_pos) + 1, spliced.begin(), spliced.end());
      }
    }

    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    try {
      app.parse(rev);
    } catch (const CLI::CallForHelp&) {
      out << (chosen ? chosen->app->help() : app.help());
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::CallForVersion&) {
      out << ROTLAB_VERSION << "\n";
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "rotlab: " << e.what() << "\n";
      return 2;
    }
    if (!chosen) {
      err << "rotlab: no subcommand given\n";
      return 2;
    }

    Context ctx{chosen->name,
                chosen->common.out.empty() ? default_out_dir() : fs::path(chosen->common.out),
                chosen->common.seed,
                out,
                err,
                {}};
    std::error_code ec;
    fs::create_directories(ctx.out_dir, ec);
    if (ec) {
      err << "rotlab: cannot create output directory '" << ctx.out_dir.string()
          << "': " << ec.message() << "\n";
      return 1;
    }
    chosen->body(ctx);

    json manifest;
    manifest["command"] = chosen->name;
    manifest["version"] = ROTLAB_VERSION;
    manifest["seed"] = chosen->common.seed;
    manifest["timestamp"] = utc_timestamp();
    json config;
    for (const auto& [key, get] : chosen->echo) config[key] = get();
    manifest["config"] = config;
    if (!chosen->common.config.empty()) manifest["config_file"] = chosen->common.config;
    manifest["outputs"] = ctx.outputs;
    auto mf = ctx.open(chosen->name + ".manifest.json");
    mf << manifest.dump(2) << "\n";
    out << "wrote " << (ctx.out_dir / ctx.outputs.front()).string();
    if (ctx.outputs.size() > 2) out << " and " << ctx.outputs.size() - 2 << " more";
    out << "\n";

    if (chosen->common.plot) {
      const std::string cmd = "python3 -m rotlab.plot --dir '" + ctx.out_dir.string() +
                              "' --command " + chosen->name;
      if (std::system(cmd.c_str()) != 0) err << "rotlab: warning: plotting failed\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "rotlab: config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "rotlab: numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "rotlab: invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "rotlab: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace rotlab::cli
