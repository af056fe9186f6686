#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ckan/tensor.h"

namespace ckan {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Trainable tensors of a model in a fixed, documented order. The order is the
// serialization order of checkpoints.
using ParameterList = std::vector<NamedParameter>;

inline void append(ParameterList& into, const ParameterList& more) {
  into.insert(into.end(), more.begin(), more.end());
}

inline void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

// Seeded pseudo-random source threaded explicitly through initialization,
// sampling and noise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// Deterministic stream derivation: independent seeds for (base, tag, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0);

Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng);
Tensor parameter(Shape shape, double fill = 0.0);
Tensor parameter(Tensor values);

}  // namespace ckan
