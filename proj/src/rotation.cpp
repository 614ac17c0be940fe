#include "rotlab/rotation.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>

namespace rotlab {

namespace {

void require_dim(std::size_t dim) {
  if (dim < 2) throw Error("rotation undefined below dimension 2");
}

void require_same(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace

Pairing Pairing::from_permutation(std::span<const std::size_t> perm) {
  require_dim(perm.size());
  Pairing p;
  p.dim = perm.size();
  const std::size_t d = p.dim / 2;
  p.pairs.reserve(d);
  for (std::size_t l = 0; l < d; ++l) p.pairs.emplace_back(perm[l], perm[l + d]);
  if (p.dim % 2 == 1) p.fixed = perm[p.dim - 1];
  p.validate();
  return p;
}

void Pairing::validate() const {
  require_dim(dim);
  if (pairs.empty()) throw Error("pairing has no pairs");
  if (fixed.has_value() != (dim % 2 == 1)) {
    throw Error("a fixed coordinate is required exactly when the dimension is odd");
  }
  std::vector<int> seen(dim, 0);
  auto mark = [&](std::size_t i) {
    if (i >= dim || seen[i]++) throw Error("pairing does not partition the coordinates");
  };
  for (const auto& [i, j] : pairs) {
    mark(i);
    mark(j);
  }
  if (fixed) mark(*fixed);
  if (2 * pairs.size() + (fixed ? 1 : 0) != dim) {
    throw Error("pairing does not partition the coordinates");
  }
}

Pairing sample_pairing(std::size_t dim, Rng& rng) {
  require_dim(dim);
  std::vector<std::size_t> perm(dim);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return Pairing::from_permutation(perm);
}

AngleDistribution AngleDistribution::uniform_angle(double max_angle) {
  if (!(max_angle > 0.0 && max_angle < std::numbers::pi / 2)) {
    throw Error("uniform angle bound must lie in (0, pi/2)");
  }
  return {Kind::uniform_angle, max_angle};
}

AngleDistribution AngleDistribution::gaussian_tangent(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("tangent sigma must be positive");
  return {Kind::gaussian_tangent, sigma};
}

AngleDistribution AngleDistribution::fixed(double angle) {
  if (!(std::abs(angle) < std::numbers::pi / 2)) {
    throw Error("fixed angle must lie in (-pi/2, pi/2)");
  }
  return {Kind::fixed, angle};
}

AngleDistribution AngleDistribution::gaussian_for_keep_rate(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("keep rate must lie in (0, 1)");
  return gaussian_tangent(std::sqrt((1.0 - p) / p));
}

AngleDistribution AngleDistribution::uniform_for_keep_rate(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("keep rate must lie in (0, 1)");
  return uniform_angle(uniform_angle_for_second_moment((1.0 - p) / p));
}

double AngleDistribution::sample_tangent(Rng& rng) const {
  switch (kind_) {
    case Kind::uniform_angle:
      return std::tan(std::uniform_real_distribution<double>(-parameter_, parameter_)(rng));
    case Kind::gaussian_tangent:
      return std::normal_distribution<double>(0.0, parameter_)(rng);
    case Kind::fixed:
      break;
  }
  return std::tan(parameter_);
}

double AngleDistribution::sample_tangent_one_sided(Rng& rng) const {
  if (kind_ == Kind::fixed) return std::tan(parameter_);
  return std::abs(sample_tangent(rng));
}

double AngleDistribution::angle_scale() const {
  if (kind_ == Kind::gaussian_tangent) return std::atan(parameter_);
  return std::abs(parameter_);
}

double second_moment_of_tangent(const AngleDistribution& d) {
  const double a = d.parameter();
  switch (d.kind()) {
    case AngleDistribution::Kind::uniform_angle:
      return std::tan(a) / a - 1.0;
    case AngleDistribution::Kind::gaussian_tangent:
      return a * a;
    case AngleDistribution::Kind::fixed:
      break;
  }
  return std::tan(a) * std::tan(a);
}

double keep_rate_for(const AngleDistribution& d) {
  return 1.0 / (1.0 + second_moment_of_tangent(d));
}

double uniform_angle_for_second_moment(double target) {
  if (!(target > 0.0) || !std::isfinite(target)) {
    throw Error("target E tan^2 must be positive and finite");
  }
  // tan(Θ)/Θ - 1 increases monotonically from 0 to +inf on (0, π/2).
  double lo = 0.0, hi = std::numbers::pi / 2;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    const double m = std::tan(mid) / mid - 1.0;
    (m < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

RotationRealization RotationSampler::sample(std::size_t dim, Rng& rng) const {
  RotationRealization r{sample_pairing(dim, rng), {}};
  r.tangents.push_back(angle.sample_tangent(rng));
  return r;
}

void apply_rotation(std::span<const double> x, const Pairing& pairing, double tangent,
                    std::span<double> out) {
  require_same(x.size(), pairing.dim);
  require_same(out.size(), pairing.dim);
  for (const auto& [i, j] : pairing.pairs) {
    const double u = x[i], v = x[j];
    out[i] = u + tangent * v;
    out[j] = v - tangent * u;
  }
  if (pairing.fixed) out[*pairing.fixed] = x[*pairing.fixed];
}

void apply_rotation_transpose(std::span<const double> g, const Pairing& pairing, double tangent,
                              std::span<double> out) {
  apply_rotation(g, pairing, -tangent, out);
}

Vec apply_rotation(const Vec& x, const RotationRealization& r) {
  if (r.tangents.size() != 1) throw Error("dense rotation expects a single tangent");
  Vec out(x.size());
  apply_rotation({x.data(), static_cast<std::size_t>(x.size())}, r.pairing, r.tangents[0],
                 {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Vec apply_rotation_transpose(const Vec& g, const RotationRealization& r) {
  if (r.tangents.size() != 1) throw Error("dense rotation expects a single tangent");
  Vec out(g.size());
  apply_rotation_transpose({g.data(), static_cast<std::size_t>(g.size())}, r.pairing,
                           r.tangents[0], {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Mat dense_rotation_matrix(const Pairing& pairing, double tangent) {
  pairing.validate();
  const auto n = static_cast<Eigen::Index>(pairing.dim);
  Mat m = Mat::Identity(n, n);
  for (const auto& [i, j] : pairing.pairs) {
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = tangent;
    m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = -tangent;
  }
  return m;
}

Vec batch_mean(const Mat& batch) { return batch.colwise().mean().transpose(); }

Mat apply_centered(const Mat& batch, const RotationSampler& sampler, Rng& rng,
                   std::vector<RotationRealization>* used) {
  if (batch.rows() < 2) throw Error("centered variant requires batch statistics");
  const auto dim = static_cast<std::size_t>(batch.cols());
  require_dim(dim);
  const Vec mean = batch_mean(batch);
  Mat out(batch.rows(), batch.cols());
  Vec centered(dim), rotated(dim);
  for (Eigen::Index n = 0; n < batch.rows(); ++n) {
    RotationRealization r = sampler.sample(dim, rng);
    centered = batch.row(n).transpose() - mean;
    apply_rotation({centered.data(), dim}, r.pairing, r.tangents[0], {rotated.data(), dim});
    out.row(n) = (rotated + mean).transpose();
    if (used) used->push_back(std::move(r));
  }
  return out;
}

std::vector<FeatureMap> apply_featuremap(std::span<const FeatureMap> batch,
                                         const RotationSampler& sampler,
                                         const std::optional<BlockSpec>& block, Rng& rng) {
  if (batch.empty()) return {};
  const std::size_t C = batch.front().channels, H = batch.front().height,
                    W = batch.front().width;
  if (C < 2) throw Error("feature-map rotation needs at least 2 channels");
  for (const auto& m : batch) {
    if (m.channels != C || m.height != H || m.width != W || m.data.size() != C * H * W) {
      throw Error("feature maps in a batch must share their shape");
    }
  }
  if (block) {
    if (block->height == 0 || block->width == 0 || block->height > H || block->width > W) {
      throw Error("rotation block larger than the feature map");
    }
    if (block->anchor == BlockSpec::Anchor::fixed &&
        (block->top + block->height > H || block->left + block->width > W)) {
      throw Error("rotation block anchored outside the feature map");
    }
  }

  std::vector<double> mean(C, 0.0);
  for (const auto& m : batch) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < H * W; ++k) mean[c] += m.data[c * H * W + k];
    }
  }
  for (auto& v : mean) v /= static_cast<double>(batch.size() * H * W);

  double sign = 1.0;
  if (sampler.symmetric_featuremap_sign) {
    sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  }

  std::vector<FeatureMap> out(batch.begin(), batch.end());
  std::vector<double> column(C), rotated(C);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Pairing pairing = sample_pairing(C, rng);
    std::size_t top = 0, left = 0, bh = H, bw = W;
    if (block) {
      bh = block->height;
      bw = block->width;
      if (block->anchor == BlockSpec::Anchor::fixed) {
        top = block->top;
        left = block->left;
      } else {
        top = std::uniform_int_distribution<std::size_t>(0, H - bh)(rng);
        left = std::uniform_int_distribution<std::size_t>(0, W - bw)(rng);
      }
    }
    for (std::size_t h = top; h < top + bh; ++h) {
      for (std::size_t w = left; w < left + bw; ++w) {
        const double t = sign * sampler.angle.sample_tangent_one_sided(rng);
        for (std::size_t c = 0; c < C; ++c) column[c] = batch[b].at(c, h, w) - mean[c];
        apply_rotation(column, pairing, t, rotated);
        for (std::size_t c = 0; c < C; ++c) out[b].at(c, h, w) = rotated[c] + mean[c];
      }
    }
  }
  return out;
}

std::vector<Vec> fixed_direction_sequence(std::span<const Vec> xs, const RotationSampler& sampler,
                                          Rng& rng, const std::optional<Vec>& center) {
  if (xs.empty()) return {};
  const auto dim = static_cast<std::size_t>(xs.front().size());
  for (const auto& x : xs) require_same(static_cast<std::size_t>(x.size()), dim);
  if (center) require_same(static_cast<std::size_t>(center->size()), dim);
  const Pairing pairing = sample_pairing(dim, rng);
  std::vector<Vec> out;
  out.reserve(xs.size());
  Vec shifted(dim), rotated(dim);
  for (const auto& x : xs) {
    const double t = sampler.angle.sample_tangent(rng);
    shifted = center ? Vec(x - *center) : x;
    apply_rotation({shifted.data(), dim}, pairing, t, {rotated.data(), dim});
    out.push_back(center ? Vec(rotated + *center) : rotated);
  }
  return out;
}

}  // namespace rotlab
