#include "ckan/instrument.h"

#include <algorithm>

namespace ckan::instrument {

void Gauge::acquire(std::int64_t n) {
  std::lock_guard lock(mu_);
  current_ += n;
  peak_ = std::max(peak_, current_);
}

void Gauge::release(std::int64_t n) {
  std::lock_guard lock(mu_);
  current_ -= n;
}

std::int64_t Gauge::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

std::int64_t Gauge::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

void Gauge::reset_peak() {
  std::lock_guard lock(mu_);
  peak_ = current_;
}

GaugeToken::GaugeToken(Gauge& gauge, std::int64_t elements)
    : gauge_(gauge), elements_(elements) {
  gauge_.acquire(elements_);
}

GaugeToken::~GaugeToken() { gauge_.release(elements_); }

Counter& Registry::counter(const std::string& name) {
  std::lock_guard lock(mu_);
  auto& slot = counters_[name];
  if (!slot) slot = std::make_unique<Counter>();
  return *slot;
}

Gauge& Registry::gauge(const std::string& name) {
  std::lock_guard lock(mu_);
  auto& slot = gauges_[name];
  if (!slot) slot = std::make_unique<Gauge>();
  return *slot;
}

std::map<std::string, std::int64_t> Registry::snapshot() const {
  std::lock_guard lock(mu_);
  std::map<std::string, std::int64_t> out;
  for (const auto& [name, c] : counters_) out[name] = c->value();
  for (const auto& [name, g] : gauges_) {
    out[name + ".peak"] = g->peak();
    out[name + ".current"] = g->current();
  }
  return out;
}

void Registry::reset_all() {
  std::lock_guard lock(mu_);
  for (auto& [name, c] : counters_) c->reset();
  for (auto& [name, g] : gauges_) g->reset_peak();
}

Registry& registry() {
  static Registry instance;
  return instance;
}

}  // namespace ckan::instrument
