#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "mixsep/errors.hpp"
#include "mixsep/model.hpp"
#include "mixsep/objectives.hpp"
#include "mixsep/synthworld.hpp"
#include "mixsep/trainer.hpp"

namespace mixsep::cli {

struct EvalConfig {
  int gallery_size = 64;
  int retrieval_k = 10;
  int disentangle_samples = 64;

  void validate() const {
    if (gallery_size < 2) throw ConfigError("eval.gallery_size must be >= 2");
    if (retrieval_k < 1 || retrieval_k > gallery_size) throw ConfigError("eval.retrieval_k must be in [1, gallery_size]");
    if (disentangle_samples < 2) throw ConfigError("eval.disentangle_samples must be >= 2");
  }
};

// One schema for every subcommand. The top-level seed is copied into the
// world and trainer; model extents are copied from the world.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  synthworld::WorldConfig world;
  model::ModelConfig model;
  trainer::TrainConfig train;
  EvalConfig eval;

  void propagate_and_validate() {
    world.seed = seed;
    train.seed = seed;
    model.img_h = world.img_h;
    model.img_w = world.img_w;
    model.freq_bins = world.freq_bins;
    model.time_frames = world.time_frames;
    if (threads < 1) throw ConfigError("threads must be >= 1");
    world.validate();
    model.validate();
    train.validate();
    eval.validate();
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& cfg) {
  return nlohmann::json{
      {"config_version", 1},
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"world",
       {{"n_classes", cfg.world.n_classes},
        {"img_h", cfg.world.img_h},
        {"img_w", cfg.world.img_w},
        {"freq_bins", cfg.world.freq_bins},
        {"time_frames", cfg.world.time_frames},
        {"band_overlap", cfg.world.band_overlap},
        {"split_sound", cfg.world.split_sound},
        {"split_speech", cfg.world.split_speech},
        {"split_ext", cfg.world.split_ext}}},
      {"model",
       {{"channels", cfg.model.channels},
        {"backbone_channels", cfg.model.backbone_channels},
        {"image_patch", cfg.model.image_patch},
        {"freq_patch", cfg.model.freq_patch},
        {"time_patch", cfg.model.time_patch}}},
      {"train",
       {{"batch_size", cfg.train.batch_size},
        {"warmup_steps", cfg.train.warmup_steps},
        {"total_steps", cfg.train.total_steps},
        {"lr_warmup", cfg.train.lr_warmup},
        {"lr_main", cfg.train.lr_main},
        {"adam_beta1", cfg.train.adam_beta1},
        {"adam_beta2", cfg.train.adam_beta2},
        {"adam_eps", cfg.train.adam_eps},
        {"splice_prob", cfg.train.splice_prob},
        {"nonneg_samples", cfg.train.nonneg_samples},
        {"checkpoint_interval", cfg.train.checkpoint_interval},
        {"cor_only", cfg.train.cor_only},
        {"dis_only", cfg.train.dis_only}}},
      {"loss_weights",
       {{"splice", cfg.train.weights.splice},
        {"cal", cfg.train.weights.cal},
        {"nonneg", cfg.train.weights.nonneg},
        {"tv", cfg.train.weights.tv},
        {"disreg", cfg.train.weights.disreg}}},
      {"eval",
       {{"gallery_size", cfg.eval.gallery_size},
        {"retrieval_k", cfg.eval.retrieval_k},
        {"disentangle_samples", cfg.eval.disentangle_samples}}}};
}

inline RunConfig from_json(const nlohmann::json& j) {
  RunConfig cfg;
  detail::reject_unknown(j, "", {"config_version", "seed", "threads", "world", "model", "train", "loss_weights", "eval"});
  if (j.contains("config_version")) {
    const int version = j.at("config_version").get<int>();
    if (version != 1) throw ConfigError("unsupported config_version " + std::to_string(version));
  }
  detail::read_into(j, "seed", cfg.seed);
  detail::read_into(j, "threads", cfg.threads);
  if (j.contains("world")) {
    const auto& w = j.at("world");
    detail::reject_unknown(w, "world.",
                           {"n_classes", "img_h", "img_w", "freq_bins", "time_frames", "band_overlap", "split_sound",
                            "split_speech", "split_ext"});
    detail::read_into(w, "n_classes", cfg.world.n_classes);
    detail::read_into(w, "img_h", cfg.world.img_h);
    detail::read_into(w, "img_w", cfg.world.img_w);
    detail::read_into(w, "freq_bins", cfg.world.freq_bins);
    detail::read_into(w, "time_frames", cfg.world.time_frames);
    detail::read_into(w, "band_overlap", cfg.world.band_overlap);
    detail::read_into(w, "split_sound", cfg.world.split_sound);
    detail::read_into(w, "split_speech", cfg.world.split_speech);
    detail::read_into(w, "split_ext", cfg.world.split_ext);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, "model.", {"channels", "backbone_channels", "image_patch", "freq_patch", "time_patch"});
    detail::read_into(m, "channels", cfg.model.channels);
    detail::read_into(m, "backbone_channels", cfg.model.backbone_channels);
    detail::read_into(m, "image_patch", cfg.model.image_patch);
    detail::read_into(m, "freq_patch", cfg.model.freq_patch);
    detail::read_into(m, "time_patch", cfg.model.time_patch);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t, "train.",
                           {"batch_size", "warmup_steps", "total_steps", "lr_warmup", "lr_main", "adam_beta1",
                            "adam_beta2", "adam_eps", "splice_prob", "nonneg_samples", "checkpoint_interval",
                            "cor_only", "dis_only"});
    detail::read_into(t, "batch_size", cfg.train.batch_size);
    detail::read_into(t, "warmup_steps", cfg.train.warmup_steps);
    detail::read_into(t, "total_steps", cfg.train.total_steps);
    detail::read_into(t, "lr_warmup", cfg.train.lr_warmup);
    detail::read_into(t, "lr_main", cfg.train.lr_main);
    detail::read_into(t, "adam_beta1", cfg.train.adam_beta1);
    detail::read_into(t, "adam_beta2", cfg.train.adam_beta2);
    detail::read_into(t, "adam_eps", cfg.train.adam_eps);
    detail::read_into(t, "splice_prob", cfg.train.splice_prob);
    detail::read_into(t, "nonneg_samples", cfg.train.nonneg_samples);
    detail::read_into(t, "checkpoint_interval", cfg.train.checkpoint_interval);
    detail::read_into(t, "cor_only", cfg.train.cor_only);
    detail::read_into(t, "dis_only", cfg.train.dis_only);
  }
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    detail::reject_unknown(w, "loss_weights.", {"splice", "cal", "nonneg", "tv", "disreg"});
    detail::read_into(w, "splice", cfg.train.weights.splice);
    detail::read_into(w, "cal", cfg.train.weights.cal);
    detail::read_into(w, "nonneg", cfg.train.weights.nonneg);
    detail::read_into(w, "tv", cfg.train.weights.tv);
    detail::read_into(w, "disreg", cfg.train.weights.disreg);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown(e, "eval.", {"gallery_size", "retrieval_k", "disentangle_samples"});
    detail::read_into(e, "gallery_size", cfg.eval.gallery_size);
    detail::read_into(e, "retrieval_k", cfg.eval.retrieval_k);
    detail::read_into(e, "disentangle_samples", cfg.eval.disentangle_samples);
  }
  cfg.propagate_and_validate();
  return cfg;
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace mixsep::cli
