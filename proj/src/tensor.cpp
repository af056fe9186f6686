#include "ckan/tensor.h"

#include <cmath>
#include <sstream>
#include <unordered_map>

#include "ckan/autograd.h"
#include "ckan/errors.h"

namespace ckan {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

const Shape& Tensor::shape() const {
  static const Shape empty;
  return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!impl_) return {};
  return impl_->data;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) return {};
  ++impl_->version;
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor " + shape_str(shape()));
  return impl_->data[0];
}

std::uint64_t Tensor::version() const { return impl_ ? impl_->version : 0; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw DimensionError("set_requires_grad on undefined tensor");
  if (impl_->node) throw DimensionError("requires_grad can only be toggled on leaves");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_ || !impl_->node; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) return {};
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) return {};
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

namespace {

// Post-order DFS over nodes: operands before consumers.
std::vector<detail::TensorImpl*> topological_order(detail::TensorImpl* root) {
  std::vector<detail::TensorImpl*> order;
  if (!root->node) return order;
  std::unordered_map<detail::TensorImpl*, bool> visited;
  struct Frame {
    detail::TensorImpl* impl;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  visited[root] = true;
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& operands = top.impl->node->operands;
    if (top.next < operands.size()) {
      auto* child = operands[top.next++].get();
      if (child->node && !visited[child]) {
        visited[child] = true;
        stack.push_back({child, 0});
      }
      continue;
    }
    order.push_back(top.impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

GradTape build_tape(const Tensor& root) {
  GradTape tape;
  if (!root.defined()) return tape;
  auto order = topological_order(root.impl().get());
  std::unordered_map<const detail::TensorImpl*, std::size_t> position;
  for (auto* impl : order) {
    GradTape::Entry entry{impl->node->op, {}};
    for (const auto& operand : impl->node->operands) {
      auto it = position.find(operand.get());
      if (it != position.end()) entry.operands.push_back(it->second);
    }
    position[impl] = tape.entries.size();
    tape.entries.push_back(std::move(entry));
  }
  return tape;
}

void Tensor::backward() const {
  if (!impl_) throw DimensionError("backward on undefined tensor");
  if (numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got " + shape_str(shape()));
  }
  if (!impl_->requires_grad) return;
  if (!impl_->node) {
    // The loss is itself a leaf.
    if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
    impl_->grad[0] += 1.0;
    return;
  }
  auto order = topological_order(impl_.get());
  impl_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (impl->grad.empty()) continue;
    impl->node->backward(impl->grad, impl->node->operands);
  }
  // Release history: the tape is consumed.
  for (auto* impl : order) {
    impl->grad.clear();
    impl->grad.shrink_to_fit();
    impl->node.reset();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

std::span<double> grad_target(const ImplPtr& operand) {
  if (!operand->requires_grad) return {};
  if (operand->grad.empty()) operand->grad.assign(operand->data.size(), 0.0);
  return operand->grad;
}

void check_finite(std::string_view op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
    }
  }
}

namespace {

template <typename Operands>
Tensor make_result_impl(std::string_view op, Shape shape, std::vector<double> values,
                        const Operands& operands, BackwardFn backward) {
  check_finite(op, values);
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& t : operands) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<GradNode>();
  node->op = op;
  for (const auto& t : operands) node->operands.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

}  // namespace

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> operands, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(values), operands,
                          std::move(backward));
}

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& operands, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(values), operands,
                          std::move(backward));
}

}  // namespace detail
}  // namespace ckan
