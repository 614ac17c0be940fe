#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rotlab/bn_lab.hpp"
#include "rotlab/cli.hpp"
#include "rotlab/linear_models.hpp"
#include "rotlab/noise_lab.hpp"
#include "rotlab/rotation.hpp"

#include <sstream>

namespace py = pybind11;
using namespace rotlab;

namespace {

Pairing pairing_from(const std::vector<std::size_t>& perm) { return Pairing::from_permutation(perm); }

py::dict curve_dict(const NonlinearityCurve& c) {
  std::vector<double> x, f, v, se;
  for (const auto& p : c.points) {
    x.push_back(p.x_test);
    f.push_back(p.f_expect);
    v.push_back(p.f_var);
    se.push_back(p.stderr);
  }
  py::dict d;
  d["x"] = x;
  d["f_expect"] = f;
  d["f_var"] = v;
  d["stderr"] = se;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "RotationOut numerics lab";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  m.def(
      "apply_rotation",
      [](const Vec& x, const std::vector<std::size_t>& perm, double tangent) {
        return apply_rotation(x, RotationRealization{pairing_from(perm), {tangent}});
      },
      py::arg("x"), py::arg("perm"), py::arg("tangent"),
      "Rotate x with the pairing (perm[l], perm[l+d]) and tan(theta) = tangent.");
  m.def(
      "apply_rotation_transpose",
      [](const Vec& g, const std::vector<std::size_t>& perm, double tangent) {
        return apply_rotation_transpose(g, RotationRealization{pairing_from(perm), {tangent}});
      },
      py::arg("g"), py::arg("perm"), py::arg("tangent"));
  m.def(
      "dense_rotation_matrix",
      [](const std::vector<std::size_t>& perm, double tangent) {
        return dense_rotation_matrix(pairing_from(perm), tangent);
      },
      py::arg("perm"), py::arg("tangent"));
  m.def("keep_rate_for_sigma", [](double sigma) {
    return keep_rate_for(AngleDistribution::gaussian_tangent(sigma));
  });
  m.def("uniform_angle_for_keep_rate", [](double p) {
    return AngleDistribution::uniform_for_keep_rate(p).parameter();
  });

  m.def("coadaptation", [](const Mat& cov) { return coadaptation(cov); });
  m.def(
      "conditional_variance",
      [](const Vec& x, const std::string& method, double p) {
        return conditional_variance(x, parse_noise_method(method), p);
      },
      py::arg("x"), py::arg("method"), py::arg("keep_rate"));
  m.def(
      "reduction_factor",
      [](const std::string& method, double p, std::size_t dim) {
        return reduction_factor(parse_noise_method(method), p, dim);
      },
      py::arg("method"), py::arg("keep_rate"), py::arg("dim"));
  m.def(
      "verify_reduction",
      [](std::size_t dim, double rho, const std::string& method, double p, std::uint64_t n,
         std::uint64_t seed) {
        const CoadaptReport r = verify_reduction(GaussianSource::equicorrelated(dim, rho),
                                                 parse_noise_method(method), p, n, seed);
        py::dict d;
        d["observed"] = r.observed_factor;
        d["predicted"] = r.predicted_factor;
        d["stderr"] = r.stderr_factor;
        d["co_input"] = r.co_input;
        d["co_output"] = r.co_output;
        return d;
      },
      py::arg("dim"), py::arg("rho"), py::arg("method"), py::arg("keep_rate"), py::arg("n"),
      py::arg("seed") = 0);

  m.def(
      "solve_rotation_lr",
      [](const Mat& X, const Vec& y, double lambda) {
        return solve_rotation_lr({X, y, lambda});
      },
      py::arg("X"), py::arg("y"), py::arg("lam"));
  m.def(
      "solve_dropout_lr",
      [](const Mat& X, const Vec& y, double lambda) { return solve_dropout_lr({X, y, lambda}); },
      py::arg("X"), py::arg("y"), py::arg("lam"));
  m.def(
      "condition_numbers",
      [](const Mat& X, double lambda) {
        const ConditionNumbers c = condition_numbers({X, Vec::Zero(X.rows()), lambda});
        return py::make_tuple(c.rotation, c.dropout);
      },
      py::arg("X"), py::arg("lam"), "(kappa_rotation, kappa_dropout); inf when singular");

  m.def(
      "variance_shift_trial",
      [](std::size_t dim, std::size_t rows, double p, std::uint64_t seed, std::uint64_t rep) {
        const ShiftTrial t = variance_shift_trial(dim, rows, p, seed, rep);
        py::dict d;
        d["ratio_a"] = t.a.ratio;
        d["ratio_b"] = t.b.ratio;
        d["ratio_a_centered"] = t.a_centered.ratio;
        return d;
      },
      py::arg("dim"), py::arg("rows"), py::arg("keep_rate"), py::arg("seed") = 0,
      py::arg("rep") = 0);

  m.def(
      "f_train_leave_one_out",
      [](double x1, const std::vector<double>& others) { return f_train_leave_one_out(x1, others); },
      py::arg("x1"), py::arg("others"));
  m.def(
      "f_train_direct", [](const std::vector<double>& batch) { return f_train_direct(batch); },
      py::arg("batch"));
  m.def(
      "nonlinearity_curve",
      [](std::size_t batch, const std::string& dist, const std::vector<double>& grid,
         std::uint64_t n, std::uint64_t seed) {
        return curve_dict(mc_nonlinearity_curve(parse_source_dist(dist), batch, grid, n, seed));
      },
      py::arg("batch"), py::arg("dist"), py::arg("grid"), py::arg("n"), py::arg("seed") = 0);
  m.def(
      "fit_poly_correction",
      [](const std::vector<double>& x, const std::vector<double>& f, const std::string& dist,
         bool density_weighted) {
        if (x.size() != f.size()) throw Error("x and f differ in length");
        NonlinearityCurve c;
        c.dist = parse_source_dist(dist);
        for (std::size_t i = 0; i < x.size(); ++i) c.points.push_back({x[i], f[i], 0.0, 0.0});
        const PolyCoeffs p = fit_poly_correction(
            c, density_weighted ? PolyWeighting::source_density : PolyWeighting::uniform);
        return py::make_tuple(p.a1, p.a3, p.a5, p.a7);
      },
      py::arg("x"), py::arg("f_expect"), py::arg("dist") = "gaussian",
      py::arg("density_weighted") = true);
  m.def(
      "cross_normalize",
      [](const Vec& batch, double eps) { return cross_normalize(batch, 1.0, 0.0, eps); },
      py::arg("batch"), py::arg("eps") = 1e-5);
  m.def(
      "noise_budget",
      [](std::size_t batch, const std::string& dist, std::uint64_t n, std::uint64_t seed) {
        Rng rng = make_rng(seed, batch);
        const NoiseBudget b = noise_budget(batch, parse_source_dist(dist), n, rng);
        return py::make_tuple(b.value, b.stderr);
      },
      py::arg("batch"), py::arg("dist") = "gaussian", py::arg("n") = 100000,
      py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        std::vector<std::string> argv{"rotlab"};
        argv.insert(argv.end(), args.begin(), args.end());
        const int status = cli::run(argv, out, err);
        return py::make_tuple(status, out.str(), err.str());
      },
      py::arg("args"), "Runs a rotlab subcommand; returns (status, stdout, stderr).");
}
