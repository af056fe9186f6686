#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ckan/models.h"
#include "ckan/training.h"

namespace ckan::cli {

// Everything a run can be configured with, addressed by dotted keys such as
// `generator.kan_hidden` or `ckan.chunk_pixels`.
struct RunConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;

  static RunConfig defaults(Stage stage);
};

// Every accepted key, in echo order.
std::vector<std::string> config_keys();

// Throws ConfigError on an unknown key or a value that does not parse.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
// `KEY=VALUE` (spaces around '=' allowed).
void apply_override(RunConfig& cfg, const std::string& assignment);

// Flat `key = value` lines, `#` starts a comment. Throws ConfigError with the
// line number on malformed lines or unknown keys, IoError when unreadable.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// (key, value) for every key, values formatted so that applying them again
// reproduces the configuration exactly.
std::vector<std::pair<std::string, std::string>> effective_values(const RunConfig& cfg);

}  // namespace ckan::cli
