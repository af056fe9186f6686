#include "ckan/parameters.h"

namespace ckan {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index) {
  // splitmix64 finalizer over a mixed state
  std::uint64_t z = base ^ (tag * 0x9E3779B97F4A7C15ULL) ^ (index * 0xBF58476D1CE4E5B9ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v));
}

Tensor parameter(Shape shape, double fill) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

Tensor parameter(Tensor values) {
  Tensor t = values.detach();
  t.set_requires_grad(true);
  return t;
}

}  // namespace ckan
