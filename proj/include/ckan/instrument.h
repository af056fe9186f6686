#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace ckan::instrument {

// Monotonic operation counter. Hot loops accumulate locally and call add()
// once per kernel invocation.
class Counter {
 public:
  void add(std::int64_t n) { value_.fetch_add(n, std::memory_order_relaxed); }
  std::int64_t value() const { return value_.load(std::memory_order_relaxed); }
  void reset() { value_.store(0, std::memory_order_relaxed); }

 private:
  std::atomic<std::int64_t> value_{0};
};

// Tracks the number of live elements in a class of buffers and the high-water
// mark since the last reset.
class Gauge {
 public:
  void acquire(std::int64_t n);
  void release(std::int64_t n);
  std::int64_t current() const;
  std::int64_t peak() const;
  // Sets peak to the current live count.
  void reset_peak();

 private:
  mutable std::mutex mu_;
  std::int64_t current_ = 0;
  std::int64_t peak_ = 0;
};

// RAII registration of a buffer with a gauge.
class GaugeToken {
 public:
  GaugeToken(Gauge& gauge, std::int64_t elements);
  ~GaugeToken();
  GaugeToken(const GaugeToken&) = delete;
  GaugeToken& operator=(const GaugeToken&) = delete;

 private:
  Gauge& gauge_;
  std::int64_t elements_;
};

// Process-wide name -> counter/gauge registry. Returned references stay valid
// for the lifetime of the process.
class Registry {
 public:
  Counter& counter(const std::string& name);
  Gauge& gauge(const std::string& name);

  // Current counter values plus "<gauge>.peak" / "<gauge>.current" entries.
  std::map<std::string, std::int64_t> snapshot() const;
  void reset_all();

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Counter>> counters_;
  std::map<std::string, std::unique_ptr<Gauge>> gauges_;
};

Registry& registry();

// Well-known instrument names.
inline constexpr const char* kMatmulMacs = "tensor.matmul_macs";
inline constexpr const char* kSplineBasisEvals = "spline.basis_evals";
inline constexpr const char* kSplineMacs = "kan.spline_macs";
inline constexpr const char* kUnfoldElements = "ckan.unfold_elements";
inline constexpr const char* kPatchBuffer = "ckan.patch_buffer";

}  // namespace ckan::instrument
