#include "ckan/training.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ckan/errors.h"
#include "ckan/metrics.h"
#include "ckan/ops.h"

namespace ckan {

namespace fs = std::filesystem;

AdamState AdamState::zeros(const ParameterList& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw ConfigError("adam_update: step index is 1-based");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    param[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

void adam_step(const ParameterList& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  ++state.step;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::span<const double> g = t.grad();
    if (g.empty()) {
      zeros.assign(t.numel(), 0.0);
      g = zeros;
    }
    adam_update(t.mutable_values(), g, state.m[i], state.v[i], state.step, cfg);
    t.zero_grad();
  }
}

const char* stage_name(Stage s) { return s == Stage::kPretrain ? "pretrain" : "adversarial"; }

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.weights = stage == Stage::kPretrain ? LossWeights::pretraining() : LossWeights{};
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (patches_per_epoch < 1) throw ConfigError("train.patches_per_epoch must be >= 1");
  if (patch_size < 1) throw ConfigError("train.patch_size must be >= 1");
  for (const auto* a : {&adam_g, &adam_d}) {
    if (!(a->lr > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(a->beta1 >= 0.0 && a->beta1 < 1.0) || !(a->beta2 >= 0.0 && a->beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(a->eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  }
  weights.validate();
  if (!(psnr_guard_delta >= 0.0)) throw ConfigError("train.psnr_guard_delta must be >= 0");
  if (!(noise_sigma >= 0.0) || !(blur_sigma >= 0.0)) throw ConfigError("degradation sigmas must be >= 0");
}

Dataset load_dataset(const fs::path& manifest) {
  const DatasetManifest m = load_manifest(manifest);
  Dataset d;
  d.scale = m.scale;
  for (const auto& e : m.entries) {
    d.names.push_back(e.hr.filename().string());
    ImageBuffer hr = load_image(e.hr);
    if (hr.width % m.scale != 0 || hr.height % m.scale != 0) {
      throw ConfigError(e.hr.string() + ": size not divisible by scale " + std::to_string(m.scale));
    }
    std::optional<ImageBuffer> lr;
    if (e.lr) {
      lr = load_image(*e.lr);
      if (lr->width * m.scale != hr.width || lr->height * m.scale != hr.height) {
        throw ConfigError(e.lr->string() + ": LR size does not match HR / scale");
      }
    }
    d.hr.push_back(std::move(hr));
    d.lr.push_back(std::move(lr));
  }
  return d;
}

namespace {

ImageBuffer lr_of(const Dataset& d, std::size_t i) {
  return d.lr[i] ? *d.lr[i] : degrade(d.hr[i], d.scale);
}

}  // namespace

ValidationMetrics validate_generator(const Generator& g, const Dataset& val, const PerceptualExtractor& ex) {
  if (val.hr.empty()) throw ConfigError("validation set is empty");
  if (val.scale != g.config.upscale) {
    throw ConfigError("validation scale " + std::to_string(val.scale) + " differs from generator upscale " +
                      std::to_string(g.config.upscale));
  }
  NoGradGuard guard;
  std::vector<EvalPair> model, cubic;
  for (std::size_t i = 0; i < val.hr.size(); ++i) {
    const ImageBuffer lr = lr_of(val, i);
    const Tensor hr = val.hr[i].to_tensor();
    model.push_back({val.names[i], hr, generator_forward(lr.to_tensor(), g)});
    cubic.push_back(
        {val.names[i], hr, bicubic_resample(lr, val.hr[i].width, val.hr[i].height).to_tensor()});
  }
  const MetricReport r = evaluate_set(model, ex);
  ValidationMetrics m;
  m.psnr_y = r.mean.psnr_y;
  m.msssim_y = r.mean.msssim_y;
  m.perc_dist = r.mean.perc_dist;
  double b = 0.0;
  for (const auto& p : cubic) b += psnr(to_luminance(p.reference), to_luminance(p.test)).db;
  m.bicubic_psnr_y = b / static_cast<double>(cubic.size());
  return m;
}

EarlyStopDecision early_stop_update(EarlyStopState& state, const ValidationMetrics& m, double guard_delta,
                                    std::int64_t epoch) {
  if (m.perc_dist < state.best_perc && m.psnr_y >= state.baseline_psnr - guard_delta) {
    state.best_perc = m.perc_dist;
    state.best_epoch = epoch;
    return EarlyStopDecision::kNewBest;
  }
  return EarlyStopDecision::kKeep;
}

TrainState make_train_state(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg) {
  TrainState s{make_generator(gcfg), make_discriminator(dcfg), {}, {}, Stage::kPretrain, 0, 0,
               -std::numeric_limits<double>::infinity(), {}};
  s.opt_g = AdamState::zeros(s.g.parameters());
  s.opt_d = AdamState::zeros(s.d.parameters());
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'C', 'K', 'A', 'N'};

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void block(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  void block(std::span<double> out, const std::string& what) {
    const std::uint64_t n = u64();
    if (n != out.size()) {
      throw CheckpointError("checkpoint block '" + what + "' holds " + std::to_string(n) +
                            " values, model expects " + std::to_string(out.size()));
    }
    need(8 * n);
    for (auto& x : out) x = f64();
  }
  void raw(char* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

std::size_t block_count(const TrainState& s) {
  const std::size_t ng = s.g.parameters().size(), nd = s.d.parameters().size();
  return 3 * ng + 3 * nd;
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainState& s) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(config_hash(s.g.config, s.d.config));
  w.u32(static_cast<std::uint32_t>(s.stage));
  w.u64(s.epoch);
  w.u64(s.stage_start);
  w.f64(s.best_psnr);
  w.f64(s.early_stop.baseline_psnr);
  w.f64(s.early_stop.best_perc);
  w.i64(s.early_stop.best_epoch);
  w.u64(block_count(s));
  for (const auto& p : s.g.parameters()) w.block(p.tensor.values());
  for (const auto& p : s.d.parameters()) w.block(p.tensor.values());
  for (const auto* opt : {&s.opt_g, &s.opt_d}) {
    for (const auto& m : opt->m) w.block(m);
    for (const auto& v : opt->v) w.block(v);
  }
  w.u64(s.opt_g.step);
  w.u64(s.opt_d.step);

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

void load_checkpoint(const fs::path& path, TrainState& s) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t hash = r.u64();
  if (hash != config_hash(s.g.config, s.d.config)) {
    throw CheckpointError("checkpoint " + path.string() +
                          " was written for a different model configuration (config hash mismatch)");
  }
  TrainState t = s;  // staged copy of scalar fields; tensors are written in place below
  const std::uint32_t stage = r.u32();
  if (stage > 1) throw CheckpointError("checkpoint has an unknown stage");
  t.stage = static_cast<Stage>(stage);
  t.epoch = r.u64();
  t.stage_start = r.u64();
  t.best_psnr = r.f64();
  t.early_stop.baseline_psnr = r.f64();
  t.early_stop.best_perc = r.f64();
  t.early_stop.best_epoch = r.i64();
  if (r.u64() != block_count(s)) throw CheckpointError("checkpoint block count does not match the model");

  // Read every block into scratch storage first so a bad file leaves s untouched.
  const ParameterList gp = s.g.parameters(), dp = s.d.parameters();
  std::vector<std::vector<double>> gv, dv;
  for (const auto& p : gp) {
    gv.emplace_back(p.tensor.numel());
    r.block(gv.back(), p.name);
  }
  for (const auto& p : dp) {
    dv.emplace_back(p.tensor.numel());
    r.block(dv.back(), p.name);
  }
  AdamState og = AdamState::zeros(gp), od = AdamState::zeros(dp);
  for (std::size_t i = 0; i < gp.size(); ++i) r.block(og.m[i], gp[i].name + ".adam_m");
  for (std::size_t i = 0; i < gp.size(); ++i) r.block(og.v[i], gp[i].name + ".adam_v");
  for (std::size_t i = 0; i < dp.size(); ++i) r.block(od.m[i], dp[i].name + ".adam_m");
  for (std::size_t i = 0; i < dp.size(); ++i) r.block(od.v[i], dp[i].name + ".adam_v");
  og.step = r.u64();
  od.step = r.u64();
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");

  for (std::size_t i = 0; i < gp.size(); ++i) {
    Tensor p = gp[i].tensor;
    std::copy(gv[i].begin(), gv[i].end(), p.mutable_values().begin());
  }
  for (std::size_t i = 0; i < dp.size(); ++i) {
    Tensor p = dp[i].tensor;
    std::copy(dv[i].begin(), dv[i].end(), p.mutable_values().begin());
  }
  s.opt_g = std::move(og);
  s.opt_d = std::move(od);
  s.stage = t.stage;
  s.epoch = t.epoch;
  s.stage_start = t.stage_start;
  s.best_psnr = t.best_psnr;
  s.early_stop = t.early_stop;
  s.g.clear_weight_caches();
}

JsonlLog::JsonlLog(const fs::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw IoError("cannot open log " + path.string());
}

void JsonlLog::write(const std::string& line) {
  if (!out_.is_open()) return;
  out_ << line << '\n';
  out_.flush();
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

constexpr std::uint64_t kSampleTag = 0x53414D504C45;

struct Sample {
  Tensor hr;
  Tensor lr;
};

std::vector<Sample> sample_epoch(const TrainConfig& cfg, const Dataset& d, std::uint64_t epoch) {
  const std::size_t s = d.scale;
  const std::size_t p = cfg.patch_size;
  if (p % s != 0) throw ConfigError("train.patch_size must be a multiple of the scale");
  DegradeOptions opts;
  if (cfg.blur_sigma > 0.0) {
    opts.blur = gaussian_kernel(cfg.blur_sigma, static_cast<std::size_t>(std::ceil(3.0 * cfg.blur_sigma)));
  }
  opts.noise_sigma = cfg.noise_sigma;
  Rng rng(derive_seed(cfg.seed, kSampleTag, epoch));
  std::vector<Sample> out;
  for (std::size_t k = 0; k < cfg.patches_per_epoch; ++k) {
    const std::size_t i = rng.index(d.hr.size());
    const ImageBuffer& hr = d.hr[i];
    if (hr.width < p || hr.height < p) throw ConfigError(d.names[i] + " is smaller than the patch size");
    const std::size_t x = rng.index((hr.width - p) / s + 1) * s;
    const std::size_t y = rng.index((hr.height - p) / s + 1) * s;
    opts.noise_seed = rng.next();
    const ImageBuffer hp = hr.crop(x, y, p, p);
    const ImageBuffer lp = d.lr[i] ? d.lr[i]->crop(x / s, y / s, p / s, p / s) : degrade(hp, s, opts);
    out.push_back({hp.to_tensor(), lp.to_tensor()});
  }
  return out;
}

std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

// Names of parameter groups holding non-finite values or gradients.
std::string non_finite_groups(const ParameterList& params) {
  std::map<std::string, bool> bad;
  for (const auto& p : params) {
    bool b = false;
    for (double v : p.tensor.values()) b = b || !std::isfinite(v);
    for (double v : p.tensor.grad()) b = b || !std::isfinite(v);
    if (b) bad[group_of(p.name)] = true;
  }
  std::string out;
  for (const auto& [k, v] : bad) out += (out.empty() ? "" : ", ") + k;
  return out;
}

std::string largest_group(const ParameterList& params) {
  std::string best;
  double mx = -1.0;
  for (const auto& p : params)
    for (double v : p.tensor.values())
      if (std::abs(v) > mx) {
        mx = std::abs(v);
        best = group_of(p.name);
      }
  return best;
}

[[noreturn]] void abort_non_finite(const std::string& what, const ParameterList& params, const std::string& detail) {
  std::string groups = non_finite_groups(params);
  if (groups.empty()) groups = "none non-finite; largest magnitude in " + largest_group(params);
  throw NumericError("non-finite " + what + " (" + detail + "); parameter groups: " + groups);
}

ValidationMetrics checked_validation(const Generator& g, const Dataset& val, const PerceptualExtractor& ex,
                                     const ParameterList& params) {
  try {
    return validate_generator(g, val, ex);
  } catch (const NumericError& e) {
    abort_non_finite("value during validation", params, e.what());
  }
}

double checked(const Tensor& t, const std::string& what, const ParameterList& params) {
  const double v = t.item();
  if (!std::isfinite(v)) abort_non_finite(what, params, "value " + std::to_string(v));
  return v;
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

TrainResult train(const TrainConfig& cfg, TrainState& state, const Dataset& train_set, const Dataset& val_set,
                  JsonlLog* log) {
  cfg.validate();
  if (train_set.hr.empty()) throw ConfigError("training set is empty");
  if (train_set.scale != state.g.config.upscale) {
    throw ConfigError("training scale " + std::to_string(train_set.scale) + " differs from generator upscale " +
                      std::to_string(state.g.config.upscale));
  }
  const bool adversarial = cfg.stage == Stage::kAdversarial;
  if (adversarial && cfg.patch_size < state.d.min_input()) {
    throw ConfigError("train.patch_size must be >= " + std::to_string(state.d.min_input()) +
                      " for the discriminator");
  }
  const PerceptualExtractor ex(cfg.extractor_seed);
  TrainResult result;
  result.initial = checked_validation(state.g, val_set, ex, state.g.parameters());

  if (adversarial && state.stage == Stage::kPretrain) {
    state.stage = Stage::kAdversarial;
    state.stage_start = state.epoch;
    state.early_stop = EarlyStopState{result.initial.psnr_y, result.initial.perc_dist, -1};
  } else if (!adversarial && state.stage == Stage::kAdversarial) {
    throw ConfigError("cannot continue pretraining from an adversarial checkpoint");
  }

  const ParameterList gp = state.g.parameters();
  const ParameterList dp = state.d.parameters();
  const std::uint64_t target = state.stage_start + cfg.epochs;
  const char* stage = stage_name(cfg.stage);
  std::uint64_t step = state.opt_g.step;

  for (std::uint64_t epoch = state.epoch; epoch < target; ++epoch) {
    const std::vector<Sample> batch = sample_epoch(cfg, train_set, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    double sum_g = 0.0, sum_d = 0.0, sum_pix = 0.0, sum_perc = 0.0, sum_adv = 0.0;
    std::size_t collapsed = 0;
    for (const auto& s : batch) {
      ++step;
      std::optional<double> l_d, l_adv;
      LossBreakdown lb;
      try {
        Tensor sr = generator_forward(s.lr, state.g);
        if (adversarial) {
          zero_grads(dp);
          Tensor ld = discriminator_loss(discriminator_forward(s.hr, state.d),
                                         discriminator_forward(sr.detach(), state.d));
          l_d = checked(ld, "discriminator loss", dp);
          ld.backward();
          adam_step(dp, state.opt_d, cfg.adam_d);
          if (*l_d < 1e-4) ++collapsed;
        }
        zero_grads(gp);
        Tensor logits;
        if (adversarial && cfg.weights.lambda_adv > 0.0) logits = discriminator_forward(sr, state.d);
        lb = generator_loss(s.hr, sr, logits, cfg.weights, ex);
        checked(lb.total, "generator loss", gp);
        lb.total.backward();
        adam_step(gp, state.opt_g, cfg.adam_g);
        if (lb.adversarial.defined()) l_adv = lb.adversarial.item();
      } catch (const NumericError& e) {
        abort_non_finite("value during " + std::string(stage) + " step " + std::to_string(step), gp, e.what());
      }
      const double l_g = lb.total.item();
      sum_g += l_g;
      sum_pix += lb.pixel.item();
      sum_perc += lb.perceptual.item();
      if (l_d) sum_d += *l_d;
      if (l_adv) sum_adv += *l_adv;
      if (log) {
        nlohmann::json j = {{"stage", stage},  {"epoch", epoch},         {"step", step},
                            {"l_g", l_g},      {"l_d", opt(l_d)},        {"l_pix", lb.pixel.item()},
                            {"l_perc", lb.perceptual.item()},            {"l_adv", opt(l_adv)},
                            {"psnr_y", nullptr}, {"msssim_y", nullptr},  {"perc_dist", nullptr}};
        log->write(j.dump());
      }
    }
    zero_grads(dp);
    const double n = static_cast<double>(batch.size());
    rec.l_g = sum_g / n;
    rec.l_pix = sum_pix / n;
    rec.l_perc = sum_perc / n;
    if (adversarial) {
      rec.l_d = sum_d / n;
      if (cfg.weights.lambda_adv > 0.0) rec.l_adv = sum_adv / n;
      if (collapsed == batch.size()) {
        result.warnings.push_back("epoch " + std::to_string(epoch) +
                                  ": discriminator loss stayed below 1e-4 for the whole epoch (collapse)");
        std::cerr << "warning: " << result.warnings.back() << '\n';
      }
    }
    rec.val = checked_validation(state.g, val_set, ex, gp);
    state.epoch = epoch + 1;
    if (adversarial) {
      rec.new_best = early_stop_update(state.early_stop, rec.val, cfg.psnr_guard_delta,
                                       static_cast<std::int64_t>(epoch)) == EarlyStopDecision::kNewBest;
    } else if (rec.val.psnr_y > state.best_psnr) {
      state.best_psnr = rec.val.psnr_y;
      rec.new_best = true;
    }
    if (log) {
      nlohmann::json j = {{"stage", stage},       {"epoch", epoch},          {"step", nullptr},
                          {"l_g", rec.l_g},       {"l_d", opt(rec.l_d)},     {"l_pix", rec.l_pix},
                          {"l_perc", rec.l_perc}, {"l_adv", opt(rec.l_adv)}, {"psnr_y", rec.val.psnr_y},
                          {"msssim_y", rec.val.msssim_y},                    {"perc_dist", rec.val.perc_dist}};
      log->write(j.dump());
    }
    if (!cfg.checkpoint_dir.empty()) {
      std::error_code ec;
      fs::create_directories(cfg.checkpoint_dir, ec);
      if (ec) throw IoError("cannot create " + cfg.checkpoint_dir.string() + ": " + ec.message());
      save_checkpoint(cfg.checkpoint_dir / "last.ckpt", state);
      if (rec.new_best) save_checkpoint(cfg.checkpoint_dir / "best.ckpt", state);
    }
    result.epochs.push_back(rec);
  }
  return result;
}

TrainResult pretrain(const TrainConfig& cfg, TrainState& state, const Dataset& train_set, const Dataset& val_set,
                     JsonlLog* log) {
  if (cfg.stage != Stage::kPretrain) throw ConfigError("pretrain called with an adversarial configuration");
  return train(cfg, state, train_set, val_set, log);
}

TrainResult adversarial_train(const TrainConfig& cfg, const fs::path& pretrained, TrainState& state,
                              const Dataset& train_set, const Dataset& val_set, JsonlLog* log) {
  if (cfg.stage != Stage::kAdversarial) throw ConfigError("adversarial_train needs stage = adversarial");
  load_checkpoint(pretrained, state);
  if (state.stage != Stage::kPretrain) throw CheckpointError(pretrained.string() + " is not a pretraining checkpoint");
  return train(cfg, state, train_set, val_set, log);
}

}  // namespace ckan
