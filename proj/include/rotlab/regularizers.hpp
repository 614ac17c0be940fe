#pragma once

#include "rotlab/rotation.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rotlab {

enum class NoiseKind { rotation, rotation_block, bernoulli, gaussian, uout };
enum class Placement { dense, featuremap, sequence };
enum class Mode { train, eval };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

/// Which op and how strong. Only the strength field matching `kind` is read:
/// keep_rate for bernoulli, variance for gaussian, beta for uout, angle for
/// the rotation kinds.
struct NoiseOpSpec {
  NoiseKind kind = NoiseKind::bernoulli;
  double keep_rate = 1.0;
  double variance = 0.0;
  double beta = 0.0;
  AngleDistribution angle = AngleDistribution::fixed(0.0);
  bool centered = false;
  Placement placement = Placement::dense;
  std::optional<BlockSpec> block;

  static NoiseOpSpec rotation(const AngleDistribution& angle, bool centered = false);
  static NoiseOpSpec bernoulli(double keep_rate, bool centered = false);
  static NoiseOpSpec gaussian(double variance, bool centered = false);
  static NoiseOpSpec uniform(double beta, bool centered = false);

  void validate() const;
  /// Per-coordinate multiplier variance; for rotation E tan²θ.
  double noise_variance() const;
  /// Bernoulli keep rate with the same multiplier variance.
  double equivalent_keep_rate() const;
  /// Short label such as "rotation(sigma=0.5)".
  std::string label() const;
};

/// Given the realization, every op here is linear in its input: a pair
/// rotation or a diagonal scale.
struct NoiseRealization {
  std::variant<RotationRealization, Vec> op;

  Vec apply(const Vec& x) const;
  Vec apply_transpose(const Vec& g) const;
};

/// Inverted dropout: zero with probability 1-p, survivors scaled by 1/p.
Vec bernoulli_dropout(const Vec& x, double keep_rate, Rng& rng);
/// x_i (1 + ε_i), ε_i ~ N(0, σ²).
Vec gaussian_dropout(const Vec& x, double variance, Rng& rng);
/// x_i (1 + r_i), r_i ~ Unif[-β, β].
Vec uout(const Vec& x, double beta, Rng& rng);

class NoiseOp {
 public:
  explicit NoiseOp(NoiseOpSpec spec);

  const NoiseOpSpec& spec() const { return spec_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  /// Draws the realization for one dim-length vector.
  NoiseRealization sample(std::size_t dim, Rng& rng) const;

  /// Row-wise noise over an N×D batch. Centered ops subtract the batch mean
  /// first and add it back. Realizations and the mean used are reported
  /// through the optional out-parameters. Eval mode returns the input.
  Mat forward(const Mat& batch, Rng& rng, std::vector<NoiseRealization>* used = nullptr,
              Vec* center = nullptr) const;

  /// Single uncentered vector.
  Vec forward(const Vec& x, Rng& rng) const;

 private:
  NoiseOpSpec spec_;
  Mode mode_ = Mode::train;
};

/// Applies `spec` to x - mean and adds the batch mean back.
Mat centered(const NoiseOpSpec& spec, const Mat& batch, Rng& rng);

}  // namespace rotlab
