#include "blosa/init.hpp"

#include <cmath>
#include <stdexcept>

namespace blosa {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  // FNV-1a over the stream name, mixed with the seed and index.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed ^ h) + index);
}

double glorot_limit(Index fan_in, Index fan_out) {
  if (fan_in < 1 || fan_out < 1) throw std::invalid_argument("glorot_init: fans must be >= 1");
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename Scalar>
Tensor<Scalar> glorot_init(Index fan_in, Index fan_out, Rng& rng) {
  const double limit = glorot_limit(fan_in, fan_out);
  return uniform_init<Scalar>({fan_in, fan_out}, -limit, limit, rng);
}

template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, double lo, double hi, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double keep_prob, Rng* rng, bool training) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0) {
    throw std::invalid_argument("dropout: keep_prob must lie in (0, 1]");
  }
  if (!training || keep_prob == 1.0) return x;
  if (rng == nullptr) throw std::invalid_argument("dropout: training mode needs an rng");
  Tensor<Scalar> mask(x.shape());
  std::bernoulli_distribution keep(keep_prob);
  const Scalar scale = static_cast<Scalar>(1.0 / keep_prob);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(*rng) ? scale : Scalar(0);
  return x * constant(x.graph(), std::move(mask), "dropout_mask");
}

template Tensor<float> glorot_init(Index, Index, Rng&);
template Tensor<double> glorot_init(Index, Index, Rng&);
template Tensor<float> uniform_init(Shape, double, double, Rng&);
template Tensor<double> uniform_init(Shape, double, double, Rng&);
template Var<float> dropout(const Var<float>&, double, Rng*, bool);
template Var<double> dropout(const Var<double>&, double, Rng*, bool);

}  // namespace blosa
