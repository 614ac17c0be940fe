#pragma once

// Random pair-rotation operators R = M(P, θ) / cos θ applied in O(D).
//
// A pairing P splits the D coordinates into d planes (i, j). Inside a plane
// the operator acts as
//
//   [u']   [ 1      tan θ ] [u]
//   [v'] = [ -tan θ   1   ] [v]
//
// so every coordinate receives noise drawn from its partner. For odd D one
// coordinate is left untouched.

#include "rotlab/common.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace rotlab {

struct Pairing {
  /// (first, second): first += tan·x[second], second -= tan·x[first].
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::optional<std::size_t> fixed;
  std::size_t dim = 0;

  /// Builds pairs (P_l, P_{l+d}) from a 0-indexed permutation. For odd
  /// length the last entry becomes the fixed coordinate.
  static Pairing from_permutation(std::span<const std::size_t> perm);

  /// Throws Error unless every coordinate is covered exactly once.
  void validate() const;
};

/// 1 / P(i and j share a plane): D-1 for even D, D when one coordinate stays
/// fixed.
inline double pair_denominator(Eigen::Index d) {
  return static_cast<double>(d % 2 == 0 ? d - 1 : d);
}

/// Uniform pairing induced by a uniformly random permutation.
Pairing sample_pairing(std::size_t dim, Rng& rng);

class AngleDistribution {
 public:
  enum class Kind { uniform_angle, gaussian_tangent, fixed };

  /// θ ~ Unif(-Θ, Θ), Θ in (0, π/2).
  static AngleDistribution uniform_angle(double max_angle);
  /// tan θ ~ N(0, σ²), σ > 0.
  static AngleDistribution gaussian_tangent(double sigma);
  /// θ fixed in (-π/2, π/2). θ = 0 gives the identity.
  static AngleDistribution fixed(double angle);

  /// Gaussian tangent whose E tan²θ matches Bernoulli keep rate p.
  static AngleDistribution gaussian_for_keep_rate(double p);
  /// Uniform angle whose E tan²θ matches keep rate p; Θ found by bisection.
  static AngleDistribution uniform_for_keep_rate(double p);

  Kind kind() const { return kind_; }
  double parameter() const { return parameter_; }

  double sample_tangent(Rng& rng) const;
  /// |tan θ| for the stochastic kinds, the fixed tangent otherwise.
  double sample_tangent_one_sided(Rng& rng) const;

  /// Representative angle: Θ, θ, or atan σ for the Gaussian tangent.
  double angle_scale() const;

 private:
  AngleDistribution(Kind kind, double parameter) : kind_(kind), parameter_(parameter) {}
  Kind kind_;
  double parameter_;
};

/// E tan²θ. Uniform angle: tan(Θ)/Θ - 1.
double second_moment_of_tangent(const AngleDistribution& d);

/// Equivalent Bernoulli keep rate 1 / (1 + E tan²θ).
double keep_rate_for(const AngleDistribution& d);

/// Solves tan(Θ)/Θ - 1 = target on (0, π/2) to 1e-12.
double uniform_angle_for_second_moment(double target);

struct RotationRealization {
  Pairing pairing;
  /// One tangent for a dense vector, one per spatial position for feature maps.
  std::vector<double> tangents;
};

struct RotationSampler {
  AngleDistribution angle = AngleDistribution::fixed(0.0);
  /// Feature-map angles are one-sided; when set, every position touched by one
  /// apply_featuremap call shares a single random sign.
  bool symmetric_featuremap_sign = false;

  RotationRealization sample(std::size_t dim, Rng& rng) const;
};

/// y = x + tan θ · s with s[first] = x[second], s[second] = -x[first].
void apply_rotation(std::span<const double> x, const Pairing& pairing, double tangent,
                    std::span<double> out);
Vec apply_rotation(const Vec& x, const RotationRealization& r);

/// Rᵀg; the same pairing with the tangent negated.
void apply_rotation_transpose(std::span<const double> g, const Pairing& pairing, double tangent,
                              std::span<double> out);
Vec apply_rotation_transpose(const Vec& g, const RotationRealization& r);

/// Dense (1/cos θ) M(θ, P) built entry by entry.
Mat dense_rotation_matrix(const Pairing& pairing, double tangent);

/// Per-feature batch mean (column mean of an N×D batch).
Vec batch_mean(const Mat& batch);

/// x̃ = R(x - E[x]) + E[x] with a fresh R per row and the batch mean as E[x].
/// Realizations are appended to `used` when given.
Mat apply_centered(const Mat& batch, const RotationSampler& sampler, Rng& rng,
                   std::vector<RotationRealization>* used = nullptr);

/// Channel-major C×H×W map.
struct FeatureMap {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), data(c * h * w, 0.0) {}
  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return data[(c * height + h) * width + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return data[(c * height + h) * width + w];
  }
};

struct BlockSpec {
  enum class Anchor { uniform, fixed };
  std::size_t height = 1, width = 1;
  Anchor anchor = Anchor::uniform;
  std::size_t top = 0, left = 0;  // used with Anchor::fixed
};

/// Rotates every spatial column x_hw ∈ R^C of each map with one pairing shared
/// by the map and an independent one-sided angle per position. Centering uses
/// the per-channel mean over batch × H × W. With a block, only positions
/// inside the sampled block are touched.
std::vector<FeatureMap> apply_featuremap(std::span<const FeatureMap> batch,
                                         const RotationSampler& sampler,
                                         const std::optional<BlockSpec>& block, Rng& rng);

/// One pairing for the whole sequence, a fresh angle per step:
/// x̃_t = R(P, θ_t)(x_t - center) + center. Center defaults to zero.
std::vector<Vec> fixed_direction_sequence(std::span<const Vec> xs, const RotationSampler& sampler,
                                          Rng& rng, const std::optional<Vec>& center = {});

}  // namespace rotlab
