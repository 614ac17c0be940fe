#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner.

#include "rotlab/nn.hpp"
#include "rotlab/rotation.hpp"

#include <cmath>
#include <functional>
#include <utility>

namespace rotlab::oracle {

/// (1/cos θ) M(θ, P) from cos/sin entries: M has cos θ on the diagonal of
/// every paired coordinate, +sin θ at (first, second) and -sin θ at
/// (second, first); a fixed coordinate keeps a 1 (it is not scaled).
inline Mat rotation_matrix(const Pairing& p, double tangent) {
  const double theta = std::atan(tangent);
  const double c = std::cos(theta), s = std::sin(theta);
  const auto d = static_cast<Eigen::Index>(p.dim);
  Mat M = Mat::Zero(d, d);
  for (const auto& [i, j] : p.pairs) {
    const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
    M(a, a) = c;
    M(b, b) = c;
    M(a, b) = s;
    M(b, a) = -s;
  }
  Mat R = M / c;
  if (p.fixed) {
    const auto f = static_cast<Eigen::Index>(*p.fixed);
    R(f, f) = 1.0;
  }
  return R;
}

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

struct GradientEstimate {
  Vec mean;
  Vec stderr;
};

/// Monte-Carlo gradient of E_R Σ_i (y_i - wᵀ R_i x_i)² at w, with a fresh
/// rotation for every sample and draw: g = -2 Σ_i (y_i - wᵀR_i x_i) R_i x_i.
inline GradientEstimate marginalized_lr_gradient(const Mat& X, const Vec& y, const Vec& w,
                                                 const RotationSampler& sampler,
                                                 std::uint64_t draws, Rng& rng) {
  const auto d = static_cast<std::size_t>(X.cols());
  Vec s1 = Vec::Zero(X.cols()), s2 = Vec::Zero(X.cols());
  Vec g(X.cols()), rx(X.cols()), x(X.cols());
  for (std::uint64_t k = 0; k < draws; ++k) {
    g.setZero();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      x = X.row(i).transpose();
      const RotationRealization r = sampler.sample(d, rng);
      apply_rotation({x.data(), d}, r.pairing, r.tangents[0], {rx.data(), d});
      g -= 2.0 * (y(i) - w.dot(rx)) * rx;
    }
    s1 += g;
    s2 += g.cwiseAbs2();
  }
  const double n = static_cast<double>(draws);
  GradientEstimate e;
  e.mean = s1 / n;
  e.stderr = ((s2 / n - e.mean.cwiseAbs2()) / (n - 1.0)).cwiseMax(0.0).cwiseSqrt();
  return e;
}

/// Loss of a fixed-noise training forward pass: the noise stream is
/// re-seeded on every call so each evaluation sees the same realization.
inline double realized_loss(Mlp& model, const Mat& x, const std::vector<int>& y,
                            std::uint64_t noise_seed, Mode mode = Mode::train) {
  Rng rng = make_rng(noise_seed, 99);
  return softmax_cross_entropy(model.forward(x, mode, rng).logits, y, nullptr);
}

struct FdReport {
  double worst_rel = 0.0;  ///< max |analytic - fd| / max(|analytic|, |fd|, floor)
  std::size_t checked = 0;
};

/// Central differences (step h) against the analytic gradient for every
/// parameter entry (W, b, and γ/β where present).
inline FdReport finite_difference_check(Mlp& model, const Mat& x, const std::vector<int>& y,
                                        std::uint64_t noise_seed, Mode mode = Mode::train,
                                        double h = 1e-5, double floor = 1e-4) {
  Rng rng = make_rng(noise_seed, 99);
  ForwardResult fr = model.forward(x, mode, rng);
  Mat dlogits;
  softmax_cross_entropy(fr.logits, y, &dlogits);
  const Gradients g = model.backward(fr.cache, dlogits);

  FdReport rep;
  auto probe = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    model.touch();
    const double up = realized_loss(model, x, y, noise_seed, mode);
    param = keep - h;
    model.touch();
    const double down = realized_loss(model, x, y, noise_seed, mode);
    param = keep;
    model.touch();
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(fd), floor});
    rep.worst_rel = std::max(rep.worst_rel, std::abs(analytic - fd) / denom);
    ++rep.checked;
  };
  auto& layers = model.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    for (Eigen::Index i = 0; i < layers[k].W.size(); ++i) probe(layers[k].W.data()[i], g.W[k].data()[i]);
    for (Eigen::Index i = 0; i < layers[k].b.size(); ++i) probe(layers[k].b(i), g.b[k](i));
    if (layers[k].bn) {
      for (Eigen::Index i = 0; i < layers[k].bn->gamma.size(); ++i) {
        probe(layers[k].bn->gamma(i), g.gamma[k](i));
      }
      for (Eigen::Index i = 0; i < layers[k].bn->beta.size(); ++i) {
        probe(layers[k].bn->beta(i), g.beta[k](i));
      }
    }
  }
  return rep;
}

/// Input gradient by central differences, for checking the noise backward
/// pass in isolation: d/dx of Σ_n gᵀ op(x)_n at a fixed realization.
inline Mat noise_input_fd(const std::function<Mat(const Mat&)>& op, const Mat& x, const Mat& g,
                          double h = 1e-6) {
  Mat out(x.rows(), x.cols());
  Mat xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = xp.data()[i];
    xp.data()[i] = keep + h;
    const double up = op(xp).cwiseProduct(g).sum();
    xp.data()[i] = keep - h;
    const double down = op(xp).cwiseProduct(g).sum();
    xp.data()[i] = keep;
    out.data()[i] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace rotlab::oracle
