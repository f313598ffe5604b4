#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mixsep/autodiff.hpp"
#include "mixsep/errors.hpp"
#include "mixsep/rng.hpp"
#include "mixsep/tensor.hpp"
#include "mixsep/tensor_io.hpp"

namespace mixsep::model {

using diffmath::BasicTensor;
using diffmath::Shape;
using diffmath::Tape;
using diffmath::Tensor;

// Head axis layout: two audio-type heads, fixed.
inline constexpr int kHeads = 2;
inline constexpr int kSoundHead = 0;
inline constexpr int kSpeechHead = 1;

struct ModelConfig {
  int channels = 16;           // C, shared feature space per head
  int backbone_channels = 32;  // C_D / C_H
  int image_patch = 8;
  int freq_patch = 8;
  int time_patch = 8;
  int img_h = 32, img_w = 32;
  int freq_bins = 32, time_frames = 64;

  int vis_h() const { return img_h / image_patch; }
  int vis_w() const { return img_w / image_patch; }
  int aud_f() const { return freq_bins / freq_patch; }
  int aud_t() const { return time_frames / time_patch; }

  void validate() const {
    if (channels < 1 || backbone_channels < 1) throw ConfigError("model channel extents must be >= 1");
    if (image_patch < 1 || freq_patch < 1 || time_patch < 1) throw ConfigError("model patch extents must be >= 1");
    if (img_h % image_patch != 0 || img_w % image_patch != 0) {
      throw ConfigError("image extents not divisible by image_patch");
    }
    if (freq_bins % freq_patch != 0 || time_frames % time_patch != 0) {
      throw ConfigError("audio extents not divisible by freq/time patch");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"channels", channels},     {"backbone_channels", backbone_channels},
                          {"image_patch", image_patch}, {"freq_patch", freq_patch},
                          {"time_patch", time_patch},   {"img_h", img_h},
                          {"img_w", img_w},             {"freq_bins", freq_bins},
                          {"time_frames", time_frames}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.channels = j.at("channels").get<int>();
    c.backbone_channels = j.at("backbone_channels").get<int>();
    c.image_patch = j.at("image_patch").get<int>();
    c.freq_patch = j.at("freq_patch").get<int>();
    c.time_patch = j.at("time_patch").get<int>();
    c.img_h = j.at("img_h").get<int>();
    c.img_w = j.at("img_w").get<int>();
    c.freq_bins = j.at("freq_bins").get<int>();
    c.time_frames = j.at("time_frames").get<int>();
    return c;
  }
};

// Patch-perceptron encoders with an aligner head each. The aligner is a
// channel-wise layernorm followed by a 1x1 linear map onto C*K channels,
// reshaped so the head axis is explicit.
template <typename T>
class Model {
 public:
  using Var = typename Tape<T>::Var;

  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int D = cfg_.backbone_channels;
    const int CK = cfg_.channels * kHeads;
    add_linear("visual.backbone.w1", "visual.backbone.b1", 3 * cfg_.image_patch * cfg_.image_patch, D, seed);
    add_linear("visual.backbone.w2", "visual.backbone.b2", D, D, seed);
    add_linear("audio.backbone.w1", "audio.backbone.b1", cfg_.freq_patch * cfg_.time_patch, D, seed);
    add_linear("audio.backbone.w2", "audio.backbone.b2", D, D, seed);
    for (const char* side : {"visual", "audio"}) {
      const std::string p = std::string(side) + ".aligner.";
      params_.emplace(p + "ln_gain", BasicTensor<T>(Shape{static_cast<std::size_t>(D)}, T(1)));
      params_.emplace(p + "ln_bias", BasicTensor<T>(Shape{static_cast<std::size_t>(D)}, T(0)));
      add_linear(p + "w", p + "b", D, CK, seed);
    }
    params_.emplace("tau", BasicTensor<T>::scalar(T(1)));
    for (auto& [name, tensor] : params_) tensor.set_requires_grad(true);
  }

  const ModelConfig& config() const { return cfg_; }

  BasicTensor<T>& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const BasicTensor<T>& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, const BasicTensor<T>*>> all_params() const {
    std::vector<std::pair<std::string, const BasicTensor<T>*>> out;
    for (const auto& [name, tensor] : params_) out.emplace_back(name, &tensor);
    return out;
  }

  std::vector<std::pair<std::string, BasicTensor<T>*>> trainable_params() {
    std::vector<std::pair<std::string, BasicTensor<T>*>> out;
    for (auto& [name, tensor] : params_) {
      if (tensor.requires_grad()) out.emplace_back(name, &tensor);
    }
    return out;
  }

  // During warm-up only the aligners (and tau) receive gradients.
  void freeze_backbones(bool frozen) {
    frozen_ = frozen;
    for (auto& [name, tensor] : params_) {
      const bool backbone = name.find(".backbone.") != std::string::npos;
      tensor.set_requires_grad(!(frozen && backbone));
    }
  }
  bool backbones_frozen() const { return frozen_; }

  T tau_value() const { return param("tau")[0]; }
  void clamp_tau(T lo) {
    auto& t = param("tau");
    if (t[0] < lo) t[0] = lo;
  }

  template <typename U>
  model::Model<U> cast() const {
    model::Model<U> out(cfg_, 0);
    for (const auto& [name, tensor] : params_) {
      out.param(name) = diffmath::tensor_cast<U>(tensor).set_requires_grad(tensor.requires_grad());
    }
    out.freeze_backbones(frozen_);
    return out;
  }

  // ---- tape binding --------------------------------------------------------

  class Bound {
   public:
    Var encode_image(const BasicTensor<T>& image) {
      const auto& cfg = model_->cfg_;
      if (image.shape() != Shape{3, static_cast<std::size_t>(cfg.img_h), static_cast<std::size_t>(cfg.img_w)}) {
        throw ShapeError("encode_image expects [3," + std::to_string(cfg.img_h) + "," + std::to_string(cfg.img_w) +
                         "], got " + diffmath::shape_str(image.shape()));
      }
      auto x = tape_->input(image);
      const std::size_t P = static_cast<std::size_t>(cfg.vis_h()) * cfg.vis_w();
      const std::size_t D = 3u * cfg.image_patch * cfg.image_patch;
      auto patches = tape_->index_map(x, model_->vis_patch_map_, Shape{P, D});
      auto feat = perceptron(patches, "visual.backbone.");
      auto aligned = aligner(feat, "visual.aligner.");
      return tape_->index_map(aligned, model_->vis_head_map_,
                              Shape{static_cast<std::size_t>(cfg.channels), kHeads,
                                    static_cast<std::size_t>(cfg.vis_h()), static_cast<std::size_t>(cfg.vis_w())});
    }

    Var encode_audio(const BasicTensor<T>& grid) {
      const auto& cfg = model_->cfg_;
      if (grid.shape() != Shape{static_cast<std::size_t>(cfg.freq_bins), static_cast<std::size_t>(cfg.time_frames)}) {
        throw ShapeError("encode_audio expects [" + std::to_string(cfg.freq_bins) + "," +
                         std::to_string(cfg.time_frames) + "], got " + diffmath::shape_str(grid.shape()));
      }
      auto x = tape_->input(grid);
      const std::size_t P = static_cast<std::size_t>(cfg.aud_f()) * cfg.aud_t();
      const std::size_t D = static_cast<std::size_t>(cfg.freq_patch) * cfg.time_patch;
      auto patches = tape_->index_map(x, model_->aud_patch_map_, Shape{P, D});
      auto feat = perceptron(patches, "audio.backbone.");
      auto aligned = aligner(feat, "audio.aligner.");
      return tape_->index_map(aligned, model_->aud_head_map_,
                              Shape{static_cast<std::size_t>(cfg.channels), kHeads,
                                    static_cast<std::size_t>(cfg.aud_f()), static_cast<std::size_t>(cfg.aud_t())});
    }

    Var tau() { return vars_.at("tau"); }
    Var var(const std::string& name) { return vars_.at(name); }

   private:
    friend class Model;
    Bound(Model* m, Tape<T>* tape) : model_(m), tape_(tape) {}

    Var linear(Var x, const std::string& wname, const std::string& bname) {
      auto y = tape_->matmul(x, vars_.at(wname));
      const auto& ys = tape_->val(y).shape();
      const std::size_t rows = ys[0], cols = ys[1];
      std::vector<std::size_t> bmap(rows * cols);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) bmap[i * cols + j] = j;
      }
      auto b = tape_->index_map(vars_.at(bname), std::move(bmap), Shape{rows, cols});
      return tape_->add(y, b);
    }

    Var perceptron(Var patches, const std::string& prefix) {
      auto h = tape_->relu(linear(patches, prefix + "w1", prefix + "b1"));
      return linear(h, prefix + "w2", prefix + "b2");
    }

    Var aligner(Var feat, const std::string& prefix) {
      auto normed = tape_->channelwise_layernorm(feat, 1, vars_.at(prefix + "ln_gain"), vars_.at(prefix + "ln_bias"),
                                                 T(1e-5));
      return linear(normed, prefix + "w", prefix + "b");
    }

    Model* model_;
    Tape<T>* tape_;
    std::map<std::string, Var> vars_;
  };

  // Registers every parameter on the tape. `overrides` substitutes existing
  // tape variables for named parameters (used by gradient checks).
  Bound bind(Tape<T>& tape, const std::map<std::string, Var>* overrides = nullptr) {
    ensure_maps();
    Bound b(this, &tape);
    for (auto& [name, tensor] : params_) {
      if (overrides != nullptr) {
        auto it = overrides->find(name);
        if (it != overrides->end()) {
          b.vars_.emplace(name, it->second);
          continue;
        }
      }
      b.vars_.emplace(name, tape.param(tensor));
    }
    return b;
  }

  // ---- checkpointing -------------------------------------------------------

  void save_checkpoint(const std::filesystem::path& dir, std::int64_t step) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint dir " + dir.string() + ": " + ec.message());
    nlohmann::json names = nlohmann::json::array();
    for (const auto& [name, tensor] : params_) {
      diffmath::write_tensor(dir / (name + ".t32"), diffmath::tensor_cast<float>(tensor));
      names.push_back(nlohmann::json{{"name", name}, {"shape", tensor.shape()}});
    }
    nlohmann::json meta{{"format", 1},
                        {"step", step},
                        {"tau", static_cast<double>(tau_value())},
                        {"model", cfg_.to_json()},
                        {"params", std::move(names)}};
    std::ofstream out(dir / "params.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "params.json").string());
    out << meta.dump(2) << '\n';
  }

 private:
  void add_linear(const std::string& wname, const std::string& bname, int fan_in, int fan_out, std::uint64_t seed) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    BasicTensor<T> w(Shape{static_cast<std::size_t>(fan_in), static_cast<std::size_t>(fan_out)});
    SplitRng wrng = SplitRng::keyed({seed, 0x70617261u, hash_name(wname)});
    for (auto& v : w.data()) v = static_cast<T>(wrng.uniform(-bound, bound));
    BasicTensor<T> b(Shape{static_cast<std::size_t>(fan_out)});
    SplitRng brng = SplitRng::keyed({seed, 0x70617261u, hash_name(bname)});
    for (auto& v : b.data()) v = static_cast<T>(brng.uniform(-bound, bound));
    params_.emplace(wname, std::move(w));
    params_.emplace(bname, std::move(b));
  }

  static std::uint64_t hash_name(const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return h;
  }

  void ensure_maps() {
    if (!vis_patch_map_.empty()) return;
    const int p = cfg_.image_patch;
    const int H = cfg_.img_h, W = cfg_.img_w, Hp = cfg_.vis_h(), Wp = cfg_.vis_w();
    vis_patch_map_.resize(static_cast<std::size_t>(Hp) * Wp * 3 * p * p);
    std::size_t i = 0;
    for (int ph = 0; ph < Hp; ++ph) {
      for (int pw = 0; pw < Wp; ++pw) {
        for (int c = 0; c < 3; ++c) {
          for (int dy = 0; dy < p; ++dy) {
            for (int dx = 0; dx < p; ++dx) {
              vis_patch_map_[i++] = static_cast<std::size_t>(c) * H * W + (ph * p + dy) * W + (pw * p + dx);
            }
          }
        }
      }
    }
    const int pf = cfg_.freq_patch, pt = cfg_.time_patch;
    const int F = cfg_.freq_bins, Taxis = cfg_.time_frames, Fp = cfg_.aud_f(), Tp = cfg_.aud_t();
    aud_patch_map_.resize(static_cast<std::size_t>(Fp) * Tp * pf * pt);
    i = 0;
    for (int fi = 0; fi < Fp; ++fi) {
      for (int ti = 0; ti < Tp; ++ti) {
        for (int dy = 0; dy < pf; ++dy) {
          for (int dx = 0; dx < pt; ++dx) {
            aud_patch_map_[i++] = static_cast<std::size_t>(fi * pf + dy) * Taxis + (ti * pt + dx);
          }
        }
      }
    }
    const int C = cfg_.channels, CK = C * kHeads;
    auto head_map = [&](int positions) {
      std::vector<std::size_t> map(static_cast<std::size_t>(CK) * positions);
      std::size_t m = 0;
      for (int c = 0; c < C; ++c) {
        for (int k = 0; k < kHeads; ++k) {
          for (int s = 0; s < positions; ++s) {
            map[m++] = static_cast<std::size_t>(s) * CK + (k * C + c);
          }
        }
      }
      return map;
    };
    vis_head_map_ = head_map(Hp * Wp);
    aud_head_map_ = head_map(Fp * Tp);
  }

  ModelConfig cfg_;
  std::map<std::string, BasicTensor<T>> params_;
  bool frozen_ = false;
  std::vector<std::size_t> vis_patch_map_, aud_patch_map_, vis_head_map_, aud_head_map_;

  template <typename U>
  friend class Model;
};

template <typename T>
struct LoadedModel {
  Model<T> model;
  std::int64_t step;
};

template <typename T = float>
LoadedModel<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "params.json");
  if (!in) throw IoError("cannot open checkpoint " + (dir / "params.json").string());
  nlohmann::json meta;
  ModelConfig cfg;
  std::int64_t step = 0;
  try {
    in >> meta;
    cfg = ModelConfig::from_json(meta.at("model"));
    step = meta.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + dir.string() + ": " + e.what());
  }
  Model<T> m(cfg, 0);
  for (const auto& [name, tensor] : m.all_params()) {
    Tensor loaded = diffmath::read_tensor(dir / (name + ".t32"));
    if (loaded.shape() != tensor->shape()) {
      throw IoError("checkpoint parameter '" + name + "' has shape " + diffmath::shape_str(loaded.shape()) +
                    ", expected " + diffmath::shape_str(tensor->shape()));
    }
    m.param(name) = diffmath::tensor_cast<T>(loaded).set_requires_grad(true);
  }
  return LoadedModel<T>{std::move(m), step};
}

}  // namespace mixsep::model
