#pragma once

// Building blocks for implementing differentiable ops outside tensor-core
// (unfold, spline term, pixel shuffle, ...).

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ckan/tensor.h"

namespace ckan::detail {

struct GradNode;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t version = 0;
  std::shared_ptr<GradNode> node;
  // Opaque owner bound to the storage lifetime (e.g. a GaugeToken).
  std::shared_ptr<void> attachment;
};

using ImplPtr = std::shared_ptr<TensorImpl>;

// Receives the gradient of the op output and accumulates into the operands.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<const ImplPtr> operands)>;

struct GradNode {
  std::string_view op;
  std::vector<ImplPtr> operands;
  BackwardFn backward;
};

// Gradient buffer of an operand, allocated zeroed on first use. Empty when the
// operand does not require grad.
std::span<double> grad_target(const ImplPtr& operand);

// Wraps freshly computed values into a Tensor. Attaches `backward` when grad
// mode is on and any operand requires grad. Raises NumericError on non-finite
// values.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> operands, BackwardFn backward);
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& operands, BackwardFn backward);

void check_finite(std::string_view op, std::span<const double> values);

// Dense kernels on raw row-major buffers. `accumulate` adds into C instead of
// overwriting. Each call adds m*n*k to the matmul MAC counter.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
// C[m x n] = A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

}  // namespace ckan::detail
