#include "run_config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ckan/errors.h"

namespace ckan::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) throw ConfigError(key + ": cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

// Binds a key to a field reached through `field(cfg)`.
template <class T, class F>
Entry bind(std::string key, F field) {
  Entry e;
  e.key = std::move(key);
  // field() only hands out a reference; reading through it does not modify c
  e.get = [field](const RunConfig& c) { return fmt(static_cast<const T&>(field(const_cast<RunConfig&>(c)))); };
  e.set = [field](RunConfig& c, const std::string& k, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) {
      field(c) = parse_bool(k, v);
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      field(c) = parse_list(k, v);
    } else {
      field(c) = parse_number<T>(k, v);
    }
  };
  return e;
}

void add_adam(std::vector<Entry>& out, const std::string& prefix, AdamConfig TrainConfig::*which) {
  out.push_back(bind<double>(prefix + ".lr", [which](RunConfig& c) -> double& { return (c.train.*which).lr; }));
  out.push_back(bind<double>(prefix + ".beta1", [which](RunConfig& c) -> double& { return (c.train.*which).beta1; }));
  out.push_back(bind<double>(prefix + ".beta2", [which](RunConfig& c) -> double& { return (c.train.*which).beta2; }));
  out.push_back(bind<double>(prefix + ".eps", [which](RunConfig& c) -> double& { return (c.train.*which).eps; }));
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    using R = RunConfig;
    t.push_back(bind<std::size_t>("generator.base_channels", [](R& c) -> std::size_t& { return c.generator.base_channels; }));
    t.push_back(bind<std::size_t>("generator.num_residual_blocks",
                                  [](R& c) -> std::size_t& { return c.generator.num_residual_blocks; }));
    t.push_back(bind<std::size_t>("generator.upscale", [](R& c) -> std::size_t& { return c.generator.upscale; }));
    t.push_back(bind<bool>("generator.ckan_blocks", [](R& c) -> bool& { return c.generator.ckan_blocks; }));
    t.push_back(bind<bool>("generator.ckan_upsample", [](R& c) -> bool& { return c.generator.ckan_upsample; }));
    t.push_back(bind<std::size_t>("generator.kan_hidden", [](R& c) -> std::size_t& { return c.generator.kan_hidden; }));
    t.push_back(bind<double>("generator.residual_gain", [](R& c) -> double& { return c.generator.residual_gain; }));
    t.push_back(bind<std::uint64_t>("generator.seed", [](R& c) -> std::uint64_t& { return c.generator.seed; }));

    t.push_back(bind<int>("kan.spline_degree", [](R& c) -> int& { return c.generator.kan.spline_degree; }));
    t.push_back(bind<std::size_t>("kan.spline_basis", [](R& c) -> std::size_t& { return c.generator.kan.spline_basis; }));
    t.push_back(bind<double>("kan.grid_lo", [](R& c) -> double& { return c.generator.kan.grid_lo; }));
    t.push_back(bind<double>("kan.grid_hi", [](R& c) -> double& { return c.generator.kan.grid_hi; }));
    t.push_back(bind<std::size_t>("kan.max_rank", [](R& c) -> std::size_t& { return c.generator.kan.max_rank; }));
    t.push_back(bind<double>("kan.init_gain", [](R& c) -> double& { return c.generator.kan.init_gain; }));
    t.push_back(bind<double>("kan.layer_norm_eps", [](R& c) -> double& { return c.generator.kan.layer_norm_eps; }));

    t.push_back(bind<std::size_t>("ckan.chunk_pixels", [](R& c) -> std::size_t& { return c.generator.chunk_pixels; }));

    t.push_back(bind<std::vector<std::size_t>>(
        "discriminator.channels", [](R& c) -> std::vector<std::size_t>& { return c.discriminator.channels; }));
    t.push_back(bind<double>("discriminator.leaky_slope", [](R& c) -> double& { return c.discriminator.leaky_slope; }));
    t.push_back(bind<std::uint64_t>("discriminator.seed", [](R& c) -> std::uint64_t& { return c.discriminator.seed; }));

    t.push_back(bind<std::size_t>("train.epochs", [](R& c) -> std::size_t& { return c.train.epochs; }));
    t.push_back(bind<std::size_t>("train.patches_per_epoch",
                                  [](R& c) -> std::size_t& { return c.train.patches_per_epoch; }));
    t.push_back(bind<std::size_t>("train.patch_size", [](R& c) -> std::size_t& { return c.train.patch_size; }));
    add_adam(t, "train.adam_g", &TrainConfig::adam_g);
    add_adam(t, "train.adam_d", &TrainConfig::adam_d);
    t.push_back(bind<double>("train.lambda_adv", [](R& c) -> double& { return c.train.weights.lambda_adv; }));
    t.push_back(bind<double>("train.lambda_perc", [](R& c) -> double& { return c.train.weights.lambda_perc; }));
    t.push_back(bind<double>("train.lambda_pix", [](R& c) -> double& { return c.train.weights.lambda_pix; }));
    t.push_back(bind<std::uint64_t>("train.seed", [](R& c) -> std::uint64_t& { return c.train.seed; }));
    t.push_back(bind<double>("train.psnr_guard_delta", [](R& c) -> double& { return c.train.psnr_guard_delta; }));
    t.push_back(bind<double>("train.noise_sigma", [](R& c) -> double& { return c.train.noise_sigma; }));
    t.push_back(bind<double>("train.blur_sigma", [](R& c) -> double& { return c.train.blur_sigma; }));
    t.push_back(bind<std::uint64_t>("train.extractor_seed", [](R& c) -> std::uint64_t& { return c.train.extractor_seed; }));
    return t;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::defaults(Stage stage) {
  RunConfig c;
  c.train = TrainConfig::defaults(stage);
  return c;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(e.key);
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(cfg, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected KEY=VALUE, got '" + assignment + "'");
  apply_setting(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> effective_values(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.key, e.get(cfg));
  return out;
}

}  // namespace ckan::cli
