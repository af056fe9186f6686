#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ckan/data.h"
#include "ckan/models.h"
#include "ckan/objectives.h"
#include "ckan/parameters.h"

namespace ckan {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static AdamState zeros(const ParameterList& params);
};

// One update of a flat parameter vector; `step` is the 1-based step index.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamConfig& cfg);

// Updates every parameter from its accumulated gradient (missing gradients
// count as zero), then clears the gradients.
void adam_step(const ParameterList& params, AdamState& state, const AdamConfig& cfg);

enum class Stage { kPretrain = 0, kAdversarial = 1 };
const char* stage_name(Stage s);

struct TrainConfig {
  Stage stage = Stage::kPretrain;
  // Target epoch count of the stage. Resumed runs continue until reached.
  std::size_t epochs = 10;
  std::size_t patches_per_epoch = 100;
  std::size_t patch_size = 64;
  AdamConfig adam_g;
  AdamConfig adam_d;
  LossWeights weights = LossWeights::pretraining();
  std::uint64_t seed = 1;
  double psnr_guard_delta = 0.5;
  // Degradation of training patches when the manifest has no LR files.
  double noise_sigma = 0.0;
  double blur_sigma = 0.0;
  std::uint64_t extractor_seed = 0x5EED;
  // Empty: no checkpoints are written.
  std::filesystem::path checkpoint_dir;

  static TrainConfig defaults(Stage stage);
  // Throws ConfigError.
  void validate() const;
};

// HR images plus optional paired LR images.
struct Dataset {
  std::vector<std::string> names;
  std::vector<ImageBuffer> hr;
  std::vector<std::optional<ImageBuffer>> lr;
  std::size_t scale = 4;
};

Dataset load_dataset(const std::filesystem::path& manifest);

struct ValidationMetrics {
  double psnr_y = 0.0;
  double msssim_y = 0.0;
  double perc_dist = 0.0;
  double bicubic_psnr_y = 0.0;
};

// Mean metrics of the generator over a dataset, plus the bicubic baseline.
ValidationMetrics validate_generator(const Generator& g, const Dataset& val,
                                     const PerceptualExtractor& ex);

struct EarlyStopState {
  double baseline_psnr = 0.0;
  double best_perc = std::numeric_limits<double>::infinity();
  std::int64_t best_epoch = -1;
};

enum class EarlyStopDecision { kKeep, kNewBest };

// new_best iff perc_dist < best_perc and psnr_y >= baseline_psnr - guard.
EarlyStopDecision early_stop_update(EarlyStopState& state, const ValidationMetrics& m,
                                    double guard_delta, std::int64_t epoch);

struct TrainState {
  Generator g;
  Discriminator d;
  AdamState opt_g;
  AdamState opt_d;
  Stage stage = Stage::kPretrain;
  std::uint64_t epoch = 0;        // completed epochs over both stages
  std::uint64_t stage_start = 0;  // epoch at which the current stage began
  double best_psnr = -std::numeric_limits<double>::infinity();
  EarlyStopState early_stop;
};

TrainState make_train_state(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg);

// Binary layout (little-endian):
//   "CKAN", u32 version, u64 config hash, u32 stage, u64 epoch, u64 stage_start,
//   f64 best_psnr, f64 baseline_psnr, f64 best_perc, i64 best_epoch,
//   u64 block count, then blocks of (u64 length, f64 values...) in order:
//   generator parameters, discriminator parameters, generator Adam m then v,
//   discriminator Adam m then v; finally u64 generator and discriminator step.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TrainState& s);
// Loads into a state built from the same configuration. Throws
// CheckpointError on version, hash or layout mismatch.
void load_checkpoint(const std::filesystem::path& path, TrainState& s);

// Line-oriented JSON log; one object per line, flushed per line.
class JsonlLog {
 public:
  JsonlLog() = default;
  JsonlLog(const std::filesystem::path& path, bool append);
  bool is_open() const { return out_.is_open(); }
  void write(const std::string& line);

 private:
  std::ofstream out_;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  double l_g = 0.0;
  std::optional<double> l_d;
  double l_pix = 0.0;
  double l_perc = 0.0;
  std::optional<double> l_adv;
  ValidationMetrics val;
  bool new_best = false;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
  // Validation of the model the stage started from.
  ValidationMetrics initial;
};

// Runs the stage in cfg.stage until the stage's target epoch count. The state
// may be fresh, resumed from a checkpoint of the same stage, or (adversarial)
// loaded from a pretraining checkpoint.
TrainResult train(const TrainConfig& cfg, TrainState& state, const Dataset& train_set,
                  const Dataset& val_set, JsonlLog* log = nullptr);

// Convenience wrappers.
TrainResult pretrain(const TrainConfig& cfg, TrainState& state, const Dataset& train_set,
                     const Dataset& val_set, JsonlLog* log = nullptr);
// Loads the pretraining checkpoint into `state` and trains adversarially.
TrainResult adversarial_train(const TrainConfig& cfg, const std::filesystem::path& pretrained,
                              TrainState& state, const Dataset& train_set, const Dataset& val_set,
                              JsonlLog* log = nullptr);

}  // namespace ckan
