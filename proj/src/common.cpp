#include "rotlab/common.hpp"

#include <charconv>

namespace rotlab {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(mix_seed(seed, stream)),
                    static_cast<std::uint32_t>(mix_seed(seed, stream) >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

void RunningStats::merge(const RunningStats& o) {
  if (o.n_ == 0) return;
  if (n_ == 0) {
    *this = o;
    return;
  }
  const double n = static_cast<double>(n_), m = static_cast<double>(o.n_);
  const double delta = o.mean_ - mean_;
  mean_ += delta * m / (n + m);
  m2_ += o.m2_ + delta * delta * n * m / (n + m);
  n_ += o.n_;
}

std::uint64_t parse_count(const std::string& text) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !(value >= 0.0) || value > 1e15 ||
      value != std::floor(value)) {
    throw Error("not a non-negative integer count: '" + text + "'");
  }
  return static_cast<std::uint64_t>(value);
}

}  // namespace rotlab
