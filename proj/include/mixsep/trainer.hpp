#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixsep/errors.hpp"
#include "mixsep/model.hpp"
#include "mixsep/objectives.hpp"
#include "mixsep/rng.hpp"
#include "mixsep/synthworld.hpp"
#include "mixsep/tensor_io.hpp"

namespace mixsep::trainer {

using diffmath::Shape;
using diffmath::Tape;
using diffmath::Tensor;

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 8;
  int warmup_steps = 200;
  int total_steps = 2000;
  double lr_warmup = 1e-3;
  double lr_main = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  objectives::LossWeights<double> weights;
  double splice_prob = 0.5;
  int nonneg_samples = 64;
  int checkpoint_interval = 500;
  bool cor_only = false;
  bool dis_only = false;

  // Full-scale reference constants from the source setup; desk defaults above.
  static constexpr int kReferenceBatch = 64;
  static constexpr int kReferenceWarmupSteps = 3000;
  static constexpr int kReferenceTotalSteps = 800000;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (warmup_steps < 0 || total_steps < 1) throw ConfigError("train step counts must be positive");
    if (warmup_steps >= total_steps) throw ConfigError("train.warmup_steps must be < train.total_steps");
    if (lr_warmup <= 0 || lr_main <= 0) throw ConfigError("learning rates must be > 0");
    if (splice_prob < 0 || splice_prob > 1) throw ConfigError("train.splice_prob must be in [0,1]");
    if (nonneg_samples < 1) throw ConfigError("train.nonneg_samples must be >= 1");
    if (checkpoint_interval < 1) throw ConfigError("train.checkpoint_interval must be >= 1");
    if (cor_only && dis_only) throw ConfigError("cor_only and dis_only are mutually exclusive");
  }
};

// ---- Adam ------------------------------------------------------------------

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::string& name, Tensor& param, double lr) {
    const auto& grad = param.grad();
    State& st = states_[name];
    if (st.m.empty()) {
      st.m.assign(param.numel(), 0.0f);
      st.v.assign(param.numel(), 0.0f);
    }
    if (st.m.size() != param.numel()) {
      throw ShapeError("optimizer state size mismatch for '" + name + "'");
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
    for (std::size_t i = 0; i < param.numel(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double m = beta1_ * st.m[i] + (1.0 - beta1_) * g;
      const double v = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
      st.m[i] = static_cast<float>(m);
      st.v[i] = static_cast<float>(v);
      const double mhat = static_cast<double>(st.m[i]) / bc1;
      const double vhat = static_cast<double>(st.v[i]) / bc2;
      param[i] = static_cast<float>(static_cast<double>(param[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }

  void save(const std::filesystem::path& dir) const {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [name, st] : states_) {
      counts[name] = st.t;
      diffmath::write_tensor(dir / ("opt." + name + ".m.t32"), Tensor(Shape{st.m.size()}, st.m));
      diffmath::write_tensor(dir / ("opt." + name + ".v.t32"), Tensor(Shape{st.v.size()}, st.v));
    }
    nlohmann::json meta{{"format", 1},
                        {"beta1", beta1_},
                        {"beta2", beta2_},
                        {"eps", eps_},
                        {"steps", std::move(counts)}};
    std::ofstream out(dir / "optimizer.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "optimizer.json").string());
    out << meta.dump(2) << '\n';
  }

  void load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "optimizer.json");
    if (!in) throw IoError("cannot open " + (dir / "optimizer.json").string());
    nlohmann::json meta;
    try {
      in >> meta;
      states_.clear();
      for (const auto& [name, t] : meta.at("steps").items()) {
        State st;
        st.t = t.get<std::int64_t>();
        st.m = diffmath::read_tensor(dir / ("opt." + name + ".m.t32")).data();
        st.v = diffmath::read_tensor(dir / ("opt." + name + ".v.t32")).data();
        states_.emplace(name, std::move(st));
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed optimizer state in " + dir.string() + ": " + e.what());
    }
  }

 private:
  struct State {
    std::vector<float> m, v;
    std::int64_t t = 0;
  };

  double beta1_, beta2_, eps_;
  std::map<std::string, State> states_;
};

// ---- batch assembly ----------------------------------------------------------

struct BatchInputs {
  std::vector<Tensor> sound_grids, speech_grids, mix_grids;
  std::vector<Tensor> sound_images, speech_images;
  // feature-frame splice weights; empty tensor = sample not spliced
  std::vector<Tensor> splice_mask_sound, splice_mask_speech;
  std::vector<int> sound_idx, speech_idx;
};

// Draws B sound pairs and B speech pairs per step by consuming per-epoch
// shuffles, so every (seed, step) maps to one batch regardless of history.
class BatchAssembler {
 public:
  BatchAssembler(const synthworld::DatasetReader& data, TrainConfig cfg, int time_patch)
      : data_(&data), cfg_(std::move(cfg)), time_patch_(time_patch) {
    const auto& w = data.world();
    for (int i = 0; i < data.count(synthworld::Split::Sound); ++i) {
      sound_images_.push_back(data.image(synthworld::Split::Sound, i));
      sound_audio_.push_back(data.audio(synthworld::Split::Sound, i));
    }
    for (int i = 0; i < data.count(synthworld::Split::Speech); ++i) {
      speech_images_.push_back(data.image(synthworld::Split::Speech, i));
      speech_audio_.push_back(data.audio(synthworld::Split::Speech, i));
    }
    frames_ = w.time_frames;
    freq_ = w.freq_bins;
  }

  BatchInputs assemble(std::int64_t step, bool apply_splice) {
    BatchInputs out;
    const int B = cfg_.batch_size;
    SplitRng splice_rng = SplitRng::keyed({cfg_.seed, 0x73706c63u, static_cast<std::uint64_t>(step)});
    for (int i = 0; i < B; ++i) {
      const int si = index_for(0, sound_images_.size(), step, i);
      const int pi = index_for(1, speech_images_.size(), step, i);
      out.sound_idx.push_back(si);
      out.speech_idx.push_back(pi);
      out.sound_images.push_back(sound_images_[si]);
      out.speech_images.push_back(speech_images_[pi]);

      auto [sound_grid, sound_mask] =
          maybe_splice(sound_audio_, si, synthworld::AudioKind::Sound, splice_rng, apply_splice);
      auto [speech_grid, speech_mask] =
          maybe_splice(speech_audio_, pi, synthworld::AudioKind::Speech, splice_rng, apply_splice);

      synthworld::AudioSignal a = wrap(sound_grid, synthworld::AudioKind::Sound);
      synthworld::AudioSignal b = wrap(speech_grid, synthworld::AudioKind::Speech);
      out.mix_grids.push_back(synthworld::mix(a, b).grid);
      out.sound_grids.push_back(std::move(sound_grid));
      out.speech_grids.push_back(std::move(speech_grid));
      out.splice_mask_sound.push_back(std::move(sound_mask));
      out.splice_mask_speech.push_back(std::move(speech_mask));
    }
    return out;
  }

 private:
  synthworld::AudioSignal wrap(const Tensor& grid, synthworld::AudioKind kind) const {
    synthworld::AudioSignal s;
    s.grid = grid;
    s.kind = kind;
    s.provenance = Tensor(Shape{2, static_cast<std::size_t>(frames_)});
    return s;
  }

  // splice decision, donor, and interval are all keyed off (seed, step)
  std::pair<Tensor, Tensor> maybe_splice(const std::vector<Tensor>& pool, int idx, synthworld::AudioKind kind,
                                         SplitRng& rng, bool apply) {
    const bool spliced = rng.coin(cfg_.splice_prob);
    const std::uint64_t donor_draw = rng.below(pool.size() > 1 ? pool.size() - 1 : 1);
    SplitRng interval_rng = rng.split(0x696e74u);
    if (!apply || !spliced) return {pool[idx], Tensor()};  // rank-0 = no mask
    const int donor = static_cast<int>((idx + 1 + donor_draw) % pool.size());
    auto [signal, mask] =
        synthworld::splice_negative(wrap(pool[idx], kind), wrap(pool[donor], kind), interval_rng);
    return {signal.grid, downsample_mask(mask)};
  }

  // audio-frame mask -> feature-frame weights (mean per patch window)
  Tensor downsample_mask(const Tensor& mask) const {
    const int t_feat = frames_ / time_patch_;
    Tensor out(Shape{static_cast<std::size_t>(t_feat)});
    for (int t = 0; t < t_feat; ++t) {
      double acc = 0;
      for (int i = 0; i < time_patch_; ++i) acc += mask[t * time_patch_ + i];
      out[t] = static_cast<float>(acc / time_patch_);
    }
    return out;
  }

  int index_for(int split_tag, std::size_t count, std::int64_t step, int pos_in_batch) {
    const std::int64_t linear = step * cfg_.batch_size + pos_in_batch;
    const std::int64_t epoch = linear / static_cast<std::int64_t>(count);
    const std::int64_t pos = linear % static_cast<std::int64_t>(count);
    auto& cache = perm_cache_[split_tag];
    if (cache.epoch != epoch || cache.order.size() != count) {
      cache.epoch = epoch;
      cache.order.resize(count);
      for (std::size_t i = 0; i < count; ++i) cache.order[i] = static_cast<int>(i);
      SplitRng rng = SplitRng::keyed({cfg_.seed, 0x73687566u, static_cast<std::uint64_t>(split_tag),
                                      static_cast<std::uint64_t>(epoch)});
      for (std::size_t i = count; i-- > 1;) {
        const std::size_t j = rng.below(i + 1);
        std::swap(cache.order[i], cache.order[j]);
      }
    }
    return cache.order[pos];
  }

  struct PermCache {
    std::int64_t epoch = -1;
    std::vector<int> order;
  };

  const synthworld::DatasetReader* data_;
  TrainConfig cfg_;
  int time_patch_;
  int frames_ = 0, freq_ = 0;
  std::vector<Tensor> sound_images_, speech_images_, sound_audio_, speech_audio_;
  std::map<int, PermCache> perm_cache_;
};

// ---- training loop -------------------------------------------------------------

struct StepStats {
  std::int64_t step = 0;
  bool warmup = false;
  float total = 0, cor = 0, dis = 0, disreg = 0, splice = 0, cal = 0, nonneg = 0, tv = 0;
  float tau = 0;
};

inline std::string step_stats_json(const StepStats& s) {
  nlohmann::json j{{"step", s.step},
                   {"phase", s.warmup ? "warmup" : "main"},
                   {"loss", static_cast<double>(s.total)},
                   {"cor", static_cast<double>(s.cor)},
                   {"dis", static_cast<double>(s.dis)},
                   {"disreg", static_cast<double>(s.disreg)},
                   {"splice", static_cast<double>(s.splice)},
                   {"cal", static_cast<double>(s.cal)},
                   {"nonneg", static_cast<double>(s.nonneg)},
                   {"tv", static_cast<double>(s.tv)},
                   {"tau", static_cast<double>(s.tau)}};
  return j.dump();
}

class Trainer {
 public:
  Trainer(model::Model<float>& m, const synthworld::DatasetReader& data, TrainConfig cfg)
      : model_(&m),
        cfg_(std::move(cfg)),
        adam_(cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps),
        assembler_(data, cfg_, m.config().time_patch) {
    cfg_.validate();
  }

  std::int64_t step() const { return step_; }

  void resume(const std::filesystem::path& ckpt_dir) {
    auto loaded = model::load_checkpoint<float>(ckpt_dir);
    *model_ = std::move(loaded.model);
    adam_.load(ckpt_dir);
    step_ = loaded.step;
  }

  // One optimizer step; returns the logged terms.
  StepStats train_step(std::int64_t step) {
    const bool warmup = step < cfg_.warmup_steps;
    model_->freeze_backbones(warmup);
    for (auto& [name, p] : model_->trainable_params()) p->zero_grad();

    BatchInputs inputs = assembler_.assemble(step, /*apply_splice=*/!warmup);
    const int B = cfg_.batch_size;

    Tape<float> tape;
    auto bound = model_->bind(tape);
    objectives::BatchFeatures<float> batch;
    for (int i = 0; i < B; ++i) {
      batch.audio_sound.push_back(bound.encode_audio(inputs.sound_grids[i]));
      batch.audio_speech.push_back(bound.encode_audio(inputs.speech_grids[i]));
      batch.audio_mix.push_back(bound.encode_audio(inputs.mix_grids[i]));
      batch.visual_sound.push_back(bound.encode_image(inputs.sound_images[i]));
      batch.visual_speech.push_back(bound.encode_image(inputs.speech_images[i]));
    }

    objectives::LossOptions<float> opts;
    opts.weights = objectives::weights_cast<float>(cfg_.weights);
    if (warmup) {
      opts.include_dis = false;
      opts.weights = objectives::LossWeights<float>{0, 0, 0, 0, 0};
    } else {
      opts.include_cor = !cfg_.dis_only;
      opts.include_dis = !cfg_.cor_only;
    }

    objectives::RegContext<float> reg;
    reg.nonneg_seed = SplitRng::keyed({cfg_.seed, 0x6f6d6567u, static_cast<std::uint64_t>(step)}).next_u64();
    reg.nonneg_samples = cfg_.nonneg_samples;
    if (!warmup) {
      reg.splice_mask_sound = inputs.splice_mask_sound;
      reg.splice_mask_speech = inputs.splice_mask_speech;
    }

    auto breakdown = objectives::compute_losses(tape, batch, bound.tau(), opts, reg);

    StepStats stats;
    stats.step = step;
    stats.warmup = warmup;
    stats.total = tape.val(breakdown.total)[0];
    stats.cor = tape.val(breakdown.cor)[0];
    stats.dis = tape.val(breakdown.dis)[0];
    stats.disreg = tape.val(breakdown.disreg)[0];
    stats.splice = tape.val(breakdown.splice)[0];
    stats.cal = tape.val(breakdown.cal)[0];
    stats.nonneg = tape.val(breakdown.nonneg)[0];
    stats.tv = tape.val(breakdown.tv)[0];
    if (!std::isfinite(stats.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + ": " + step_stats_json(stats));
    }

    tape.backward(breakdown.total);
    const double lr = warmup ? cfg_.lr_warmup : cfg_.lr_main;
    for (auto& [name, p] : model_->trainable_params()) adam_.step(name, *p, lr);
    model_->clamp_tau(1e-3f);
    stats.tau = model_->tau_value();
    return stats;
  }

  // Runs from the current step to total_steps, appending one JSON line per
  // step and checkpointing at the interval and at the end.
  void run(const std::filesystem::path& out_dir, std::ostream& log,
           std::ostream* progress = nullptr) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    while (step_ < cfg_.total_steps) {
      StepStats stats = train_step(step_);
      log << step_stats_json(stats) << '\n';
      ++step_;
      if (progress != nullptr && (step_ % 100 == 0 || step_ == cfg_.total_steps)) {
        *progress << "step " << step_ << "/" << cfg_.total_steps << " loss " << stats.total << " tau " << stats.tau
                  << '\n';
      }
      if (step_ % cfg_.checkpoint_interval == 0 || step_ == cfg_.total_steps) {
        checkpoint(out_dir);
      }
    }
  }

  void checkpoint(const std::filesystem::path& out_dir) const {
    std::ostringstream name;
    name << "ckpt_" << std::setw(6) << std::setfill('0') << step_;
    const auto dir = out_dir / name.str();
    model_->save_checkpoint(dir, step_);
    adam_.save(dir);
  }

 private:
  model::Model<float>* model_;
  TrainConfig cfg_;
  Adam adam_;
  BatchAssembler assembler_;
  std::int64_t step_ = 0;
};

}  // namespace mixsep::trainer
