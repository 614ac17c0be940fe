#include "rotlab/regularizers.hpp"

#include <cstdio>

namespace rotlab {

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::rotation: return "rotation";
    case NoiseKind::rotation_block: return "rotation-block";
    case NoiseKind::bernoulli: return "bernoulli";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::uout: return "uout";
  }
  return "unknown";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "rotation") return NoiseKind::rotation;
  if (name == "rotation-block") return NoiseKind::rotation_block;
  if (name == "bernoulli" || name == "dropout") return NoiseKind::bernoulli;
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "uout") return NoiseKind::uout;
  throw Error("unknown noise kind '" + name + "'");
}

NoiseOpSpec NoiseOpSpec::rotation(const AngleDistribution& angle, bool centered) {
  NoiseOpSpec s;
  s.kind = NoiseKind::rotation;
  s.angle = angle;
  s.centered = centered;
  return s;
}

NoiseOpSpec NoiseOpSpec::bernoulli(double keep_rate, bool centered) {
  NoiseOpSpec s;
  s.kind = NoiseKind::bernoulli;
  s.keep_rate = keep_rate;
  s.centered = centered;
  s.validate();
  return s;
}

NoiseOpSpec NoiseOpSpec::gaussian(double variance, bool centered) {
  NoiseOpSpec s;
  s.kind = NoiseKind::gaussian;
  s.variance = variance;
  s.centered = centered;
  s.validate();
  return s;
}

NoiseOpSpec NoiseOpSpec::uniform(double beta, bool centered) {
  NoiseOpSpec s;
  s.kind = NoiseKind::uout;
  s.beta = beta;
  s.centered = centered;
  s.validate();
  return s;
}

void NoiseOpSpec::validate() const {
  switch (kind) {
    case NoiseKind::bernoulli:
      if (!(keep_rate > 0.0 && keep_rate <= 1.0)) throw Error("keep rate must lie in (0, 1]");
      break;
    case NoiseKind::gaussian:
      if (!(variance >= 0.0) || !std::isfinite(variance)) {
        throw Error("gaussian dropout variance must be non-negative");
      }
      break;
    case NoiseKind::uout:
      if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error("uout beta must be non-negative");
      break;
    case NoiseKind::rotation:
    case NoiseKind::rotation_block:
      break;
  }
  if (placement == Placement::featuremap && kind != NoiseKind::rotation &&
      kind != NoiseKind::rotation_block) {
    throw Error("feature-map placement is only defined for rotation noise");
  }
}

double NoiseOpSpec::noise_variance() const {
  switch (kind) {
    case NoiseKind::bernoulli: return (1.0 - keep_rate) / keep_rate;
    case NoiseKind::gaussian: return variance;
    case NoiseKind::uout: return beta * beta / 3.0;
    case NoiseKind::rotation:
    case NoiseKind::rotation_block: break;
  }
  return second_moment_of_tangent(angle);
}

double NoiseOpSpec::equivalent_keep_rate() const { return 1.0 / (1.0 + noise_variance()); }

std::string NoiseOpSpec::label() const {
  char buf[96];
  switch (kind) {
    case NoiseKind::bernoulli:
      std::snprintf(buf, sizeof buf, "bernoulli(p=%g)", keep_rate);
      break;
    case NoiseKind::gaussian:
      std::snprintf(buf, sizeof buf, "gaussian(var=%g)", variance);
      break;
    case NoiseKind::uout:
      std::snprintf(buf, sizeof buf, "uout(beta=%g)", beta);
      break;
    case NoiseKind::rotation:
    case NoiseKind::rotation_block: {
      const char* what = angle.kind() == AngleDistribution::Kind::gaussian_tangent ? "sigma"
                         : angle.kind() == AngleDistribution::Kind::uniform_angle ? "Theta"
                                                                                   : "theta";
      std::snprintf(buf, sizeof buf, "%s(%s=%g)", to_string(kind).c_str(), what,
                    angle.parameter());
      break;
    }
  }
  return centered ? std::string("centered-") + buf : std::string(buf);
}

Vec NoiseRealization::apply(const Vec& x) const {
  if (const auto* r = std::get_if<RotationRealization>(&op)) return apply_rotation(x, *r);
  const Vec& scale = std::get<Vec>(op);
  if (scale.size() != x.size()) throw Error("dimension mismatch in noise realization");
  return x.cwiseProduct(scale);
}

Vec NoiseRealization::apply_transpose(const Vec& g) const {
  if (const auto* r = std::get_if<RotationRealization>(&op)) {
    return apply_rotation_transpose(g, *r);
  }
  return apply(g);
}

NoiseOp::NoiseOp(NoiseOpSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

NoiseRealization NoiseOp::sample(std::size_t dim, Rng& rng) const {
  switch (spec_.kind) {
    case NoiseKind::rotation:
    case NoiseKind::rotation_block:
      return {RotationSampler{spec_.angle}.sample(dim, rng)};
    case NoiseKind::bernoulli: {
      Vec scale(static_cast<Eigen::Index>(dim));
      std::bernoulli_distribution keep(spec_.keep_rate);
      for (auto& s : scale) s = keep(rng) ? 1.0 / spec_.keep_rate : 0.0;
      return {scale};
    }
    case NoiseKind::gaussian: {
      Vec scale(static_cast<Eigen::Index>(dim));
      std::normal_distribution<double> eps(0.0, std::sqrt(spec_.variance));
      for (auto& s : scale) s = spec_.variance > 0.0 ? 1.0 + eps(rng) : 1.0;
      return {scale};
    }
    case NoiseKind::uout: {
      Vec scale(static_cast<Eigen::Index>(dim));
      std::uniform_real_distribution<double> r(-spec_.beta, spec_.beta);
      for (auto& s : scale) s = spec_.beta > 0.0 ? 1.0 + r(rng) : 1.0;
      return {scale};
    }
  }
  throw Error("unknown noise kind");
}

Mat NoiseOp::forward(const Mat& batch, Rng& rng, std::vector<NoiseRealization>* used,
                     Vec* center) const {
  const auto dim = static_cast<std::size_t>(batch.cols());
  if (mode_ == Mode::eval) {
    if (center) *center = Vec::Zero(batch.cols());
    return batch;
  }
  Vec mean = Vec::Zero(batch.cols());
  if (spec_.centered) {
    if (batch.rows() < 2) throw Error("centered variant requires batch statistics");
    mean = batch_mean(batch);
  }
  if (center) *center = mean;
  Mat out(batch.rows(), batch.cols());
  for (Eigen::Index n = 0; n < batch.rows(); ++n) {
    NoiseRealization r = sample(dim, rng);
    // Same expression as apply_centered so the two paths agree bit for bit.
    const Vec shifted = batch.row(n).transpose() - mean;
    out.row(n) = (r.apply(shifted) + mean).transpose();
    if (used) used->push_back(std::move(r));
  }
  return out;
}

Vec NoiseOp::forward(const Vec& x, Rng& rng) const {
  if (mode_ == Mode::eval) return x;
  return sample(static_cast<std::size_t>(x.size()), rng).apply(x);
}

Vec bernoulli_dropout(const Vec& x, double keep_rate, Rng& rng) {
  return NoiseOp(NoiseOpSpec::bernoulli(keep_rate)).forward(x, rng);
}

Vec gaussian_dropout(const Vec& x, double variance, Rng& rng) {
  return NoiseOp(NoiseOpSpec::gaussian(variance)).forward(x, rng);
}

Vec uout(const Vec& x, double beta, Rng& rng) {
  return NoiseOp(NoiseOpSpec::uniform(beta)).forward(x, rng);
}

Mat centered(const NoiseOpSpec& spec, const Mat& batch, Rng& rng) {
  NoiseOpSpec s = spec;
  s.centered = true;
  return NoiseOp(s).forward(batch, rng);
}

}  // namespace rotlab
