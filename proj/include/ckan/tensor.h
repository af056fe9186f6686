#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ckan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense row-major float64 array with an optional reverse-mode gradient record.
//
// Tensor is a handle: copies share the same storage. Values produced by ops
// are immutable; only leaves (parameters, inputs) are mutated, through
// mutable_values(), which also bumps the version used by weight caches.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  std::uint64_t version() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Copy of the values with no gradient history.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Leaves with requires_grad accumulate
  // d(this)/d(leaf) into their grad buffer; intermediate history is released.
  // Leaves not connected to this tensor receive nothing.
  void backward() const;

  const detail::TensorImpl* id() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of the differentiable operations reachable from a root.
// Every entry appears after all entries producing its operands.
struct GradTape {
  struct Entry {
    std::string_view op;
    // Positions of operand entries inside `entries`; leaves are not listed.
    std::vector<std::size_t> operands;
  };
  std::vector<Entry> entries;
};

GradTape build_tape(const Tensor& root);

// Whether newly executed ops record history. Thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace ckan
