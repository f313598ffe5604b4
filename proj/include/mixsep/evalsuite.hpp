#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mixsep/errors.hpp"
#include "mixsep/model.hpp"
#include "mixsep/rng.hpp"
#include "mixsep/simvol.hpp"
#include "mixsep/synthworld.hpp"
#include "mixsep/tensor.hpp"

namespace mixsep::evalsuite {

using diffmath::Shape;
using diffmath::Tape;
using diffmath::Tensor;

enum class HeadMode { TotalMax, TotalSum, Sound, Speech };

inline const char* head_mode_name(HeadMode m) {
  switch (m) {
    case HeadMode::TotalMax: return "total-max";
    case HeadMode::TotalSum: return "total-sum";
    case HeadMode::Sound: return "sound";
    default: return "speech";
  }
}

inline HeadMode head_mode_from_name(const std::string& name) {
  if (name == "total-max") return HeadMode::TotalMax;
  if (name == "total-sum") return HeadMode::TotalSum;
  if (name == "sound") return HeadMode::Sound;
  if (name == "speech") return HeadMode::Speech;
  throw ConfigError("unknown head mode '" + name + "' (expected total-max, total-sum, sound or speech)");
}

struct MetricsReport {
  std::string task;
  std::string split;
  std::string head_mode;
  std::string audio_mode = "clean";
  std::optional<double> map, miou, r_i2a, r_a2i, pred_dis, act_dis;
  int k = 0;
  int sample_count = 0;
  int skipped = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"task", task}, {"split", split}, {"head_mode", head_mode}, {"audio_mode", audio_mode},
                     {"sample_count", sample_count}};
    if (skipped > 0) j["skipped"] = skipped;
    if (map) j["map"] = *map;
    if (miou) j["miou"] = *miou;
    if (r_i2a) {
      j["k"] = k;
      j["r_at_k_i2a"] = *r_i2a;
      j["r_at_k_a2i"] = *r_a2i;
    }
    if (pred_dis) j["pred_dis"] = *pred_dis;
    if (act_dis) j["act_dis"] = *act_dis;
    return j;
  }
};

// ---- segmentation metrics ---------------------------------------------------

// Ranking AP with pixels ordered by score descending, ties by lower index.
// Returns nullopt when the mask has no positive pixels.
inline std::optional<double> average_precision(const Tensor& heatmap, const Tensor& mask) {
  if (heatmap.shape() != mask.shape()) {
    throw ShapeError("average_precision shape mismatch: " + diffmath::shape_str(heatmap.shape()) + " vs " +
                     diffmath::shape_str(mask.shape()));
  }
  const std::size_t n = heatmap.numel();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return heatmap[a] > heatmap[b]; });
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) positives += mask[i] != 0.0f;
  if (positives == 0) return std::nullopt;
  double ap = 0;
  std::size_t hit = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (mask[order[rank]] != 0.0f) {
      ++hit;
      ap += static_cast<double>(hit) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

struct SegScores {
  double map = 0;
  double miou = 0;
  int used = 0;
  int skipped = 0;
};

// mAP: per-sample AP averaged. mIoU: one dataset-level threshold, swept over
// the 5th..95th percentile of pooled scores in 19 steps, keeping the best
// mean IoU. Thresholds are order statistics, so both metrics are invariant to
// strictly monotone transforms of the scores.
inline SegScores segmentation_metrics(const std::vector<Tensor>& heatmaps, const std::vector<Tensor>& masks) {
  if (heatmaps.size() != masks.size()) throw ShapeError("segmentation_metrics needs aligned lists");
  SegScores out;
  std::vector<std::size_t> kept;
  double ap_total = 0;
  for (std::size_t i = 0; i < heatmaps.size(); ++i) {
    auto ap = average_precision(heatmaps[i], masks[i]);
    if (!ap) {
      ++out.skipped;
      continue;
    }
    ap_total += *ap;
    kept.push_back(i);
  }
  out.used = static_cast<int>(kept.size());
  if (kept.empty()) return out;
  out.map = ap_total / static_cast<double>(kept.size());

  std::vector<float> pooled;
  for (std::size_t i : kept) pooled.insert(pooled.end(), heatmaps[i].data().begin(), heatmaps[i].data().end());
  std::sort(pooled.begin(), pooled.end());
  double best = 0;
  for (int q = 5; q <= 95; q += 5) {
    const std::size_t idx = static_cast<std::size_t>(q) * (pooled.size() - 1) / 100;
    const float threshold = pooled[idx];
    double iou_sum = 0;
    for (std::size_t i : kept) {
      double inter = 0, uni = 0;
      const auto& h = heatmaps[i];
      const auto& m = masks[i];
      for (std::size_t p = 0; p < h.numel(); ++p) {
        const bool pred = h[p] >= threshold;
        const bool pos = m[p] != 0.0f;
        inter += pred && pos;
        uni += pred || pos;
      }
      iou_sum += uni > 0 ? inter / uni : 1.0;
    }
    best = std::max(best, iou_sum / static_cast<double>(kept.size()));
  }
  out.miou = best;
  return out;
}

// ---- retrieval ----------------------------------------------------------------

// scores[i][j] = score(image_i, audio_j). Rows rank audio candidates per image
// (I->A); columns rank images per audio (A->I). A tied candidate with a lower
// index counts as retrieved earlier.
inline std::pair<double, double> retrieval_recall(const Tensor& scores, int k) {
  if (scores.rank() != 2 || scores.extent(0) != scores.extent(1)) {
    throw ShapeError("retrieval expects a square matrix, got " + diffmath::shape_str(scores.shape()));
  }
  const int n = static_cast<int>(scores.extent(0));
  if (k < 1 || k > n) throw ShapeError("retrieval k=" + std::to_string(k) + " out of range for gallery " + std::to_string(n));
  int rows_hit = 0, cols_hit = 0;
  for (int i = 0; i < n; ++i) {
    int row_rank = 0, col_rank = 0;
    const float diag = scores[i * n + i];
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const float row_rival = scores[i * n + j];
      row_rank += row_rival > diag || (row_rival == diag && j < i);
      const float col_rival = scores[j * n + i];
      col_rank += col_rival > diag || (col_rival == diag && j < i);
    }
    rows_hit += row_rank < k;
    cols_hit += col_rank < k;
  }
  return {static_cast<double>(rows_hit) / n, static_cast<double>(cols_hit) / n};
}

// ---- disentanglement scores ------------------------------------------------------

enum class SampleKind { Sound, Speech };

// Predict the audio type from the stronger head (by mean |S|) and score
// against labels.
inline double pred_dis_from_stats(const std::vector<std::array<double, 2>>& mean_abs,
                                  const std::vector<SampleKind>& kinds) {
  if (mean_abs.size() != kinds.size() || mean_abs.empty()) throw ShapeError("pred_dis needs aligned labels");
  int correct = 0;
  for (std::size_t i = 0; i < mean_abs.size(); ++i) {
    const int predicted = mean_abs[i][model::kSpeechHead] > mean_abs[i][model::kSoundHead] ? model::kSpeechHead
                                                                                           : model::kSoundHead;
    const int truth = kinds[i] == SampleKind::Sound ? model::kSoundHead : model::kSpeechHead;
    correct += predicted == truth;
  }
  return static_cast<double>(correct) / static_cast<double>(mean_abs.size());
}

// A head is "active" when its pooled score exceeds that head's median over
// the evaluation set; Act.Dis is the complement of the wrong-head activation
// rate on single-type samples.
inline double act_dis_from_scores(const std::vector<std::array<double, 2>>& pooled,
                                  const std::vector<SampleKind>& kinds) {
  if (pooled.size() != kinds.size() || pooled.empty()) throw ShapeError("act_dis needs aligned labels");
  std::array<double, 2> median{};
  for (int head = 0; head < 2; ++head) {
    std::vector<double> values;
    values.reserve(pooled.size());
    for (const auto& p : pooled) values.push_back(p[head]);
    std::sort(values.begin(), values.end());
    median[head] = values[(values.size() - 1) / 2];
  }
  int wrong_active = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const int wrong = kinds[i] == SampleKind::Sound ? model::kSpeechHead : model::kSoundHead;
    wrong_active += pooled[i][wrong] > median[wrong];
  }
  return 1.0 - static_cast<double>(wrong_active) / static_cast<double>(pooled.size());
}

// ---- model-driven protocols --------------------------------------------------------

namespace detail {

inline Tensor encode_audio_value(model::Model<float>& m, const Tensor& grid) {
  Tape<float> tape;
  auto bound = m.bind(tape);
  return tape.val(bound.encode_audio(grid));
}

inline Tensor encode_image_value(model::Model<float>& m, const Tensor& image) {
  Tape<float> tape;
  auto bound = m.bind(tape);
  return tape.val(bound.encode_image(image));
}

inline float pair_score(const Tensor& audio_feat, const Tensor& visual_feat, HeadMode mode) {
  Tape<float> tape;
  auto a = tape.input(audio_feat);
  auto v = tape.input(visual_feat);
  typename Tape<float>::Var agg;
  switch (mode) {
    case HeadMode::Sound:
      agg = simvol::head_volume(tape, a, v, model::kSoundHead);
      break;
    case HeadMode::Speech:
      agg = simvol::head_volume(tape, a, v, model::kSpeechHead);
      break;
    default: {
      auto vol = simvol::similarity_volume(tape, a, v);
      agg = simvol::aggregate(tape, vol, mode == HeadMode::TotalMax ? simvol::Aggregation::Max
                                                                    : simvol::Aggregation::Sum);
      break;
    }
  }
  return tape.val(simvol::pooled_score(tape, agg))[0];
}

inline Tensor head_heatmap(const Tensor& audio_feat, const Tensor& visual_feat, HeadMode mode, std::size_t t0,
                           std::size_t t1, int img_h, int img_w) {
  Tape<float> tape;
  auto a = tape.input(audio_feat);
  auto v = tape.input(visual_feat);
  typename Tape<float>::Var agg;
  switch (mode) {
    case HeadMode::Sound:
      agg = simvol::head_volume(tape, a, v, model::kSoundHead);
      break;
    case HeadMode::Speech:
      agg = simvol::head_volume(tape, a, v, model::kSpeechHead);
      break;
    default: {
      auto vol = simvol::similarity_volume(tape, a, v);
      agg = simvol::aggregate(tape, vol, mode == HeadMode::TotalMax ? simvol::Aggregation::Max
                                                                    : simvol::Aggregation::Sum);
      break;
    }
  }
  Tensor map = tape.val(simvol::heatmap(tape, agg, t0, t1));
  return simvol::upsample_bilinear(map, static_cast<std::size_t>(img_h), static_cast<std::size_t>(img_w));
}

// Off-screen distractor: a rendered signal of the opposite kind whose class
// does not appear in the scene.
inline Tensor with_distractor(const synthworld::DatasetReader& data, synthworld::Split split, int index,
                              const Tensor& grid, std::uint64_t eval_seed) {
  const auto& w = data.world();
  const auto& rec = data.record(split, index);
  const bool sound_split = split == synthworld::Split::Sound;
  const int present = sound_split ? rec.sound_class : rec.speech_class;
  SplitRng rng = SplitRng::keyed({eval_seed, 0x64697374u, static_cast<std::uint64_t>(split == synthworld::Split::Sound ? 1 : 2),
                                  static_cast<std::uint64_t>(index)});
  const int distractor_class = static_cast<int>((present + 1 + rng.below(w.n_classes - 1)) % w.n_classes);
  synthworld::AudioSignal base;
  base.grid = grid;
  base.kind = sound_split ? synthworld::AudioKind::Sound : synthworld::AudioKind::Speech;
  base.provenance = Tensor(Shape{2, static_cast<std::size_t>(w.time_frames)});
  synthworld::AudioSignal distractor = sound_split ? synthworld::render_speech(w, distractor_class, rng)
                                                   : synthworld::render_sound(w, distractor_class, rng);
  return synthworld::mix(base, distractor).grid;
}

// token span in audio frames -> feature frame range
inline std::pair<std::size_t, std::size_t> token_frames(const synthworld::SampleRecord& rec, int time_patch,
                                                        int t_feat) {
  if (rec.token_begin < 0) return {0, static_cast<std::size_t>(t_feat)};
  std::size_t t0 = static_cast<std::size_t>(rec.token_begin / time_patch);
  std::size_t t1 = static_cast<std::size_t>((rec.token_end + time_patch - 1) / time_patch);
  t1 = std::min<std::size_t>(t1, static_cast<std::size_t>(t_feat));
  if (t0 >= t1) t1 = t0 + 1;
  return {t0, t1};
}

}  // namespace detail

// Grounding on a pair split: heatmaps of the selected aggregation against the
// object masks. Speech heatmaps average the token frames; sound heatmaps
// average all frames. Mixed mode adds an off-screen distractor of the
// opposite kind before encoding.
inline MetricsReport eval_grounding(model::Model<float>& m, const synthworld::DatasetReader& data,
                                    synthworld::Split split, HeadMode mode, bool mixed, std::uint64_t eval_seed = 0,
                                    int max_samples = -1) {
  if (split == synthworld::Split::Ext) throw ConfigError("grounding runs on the sound or speech split");
  const auto& w = data.world();
  const int time_patch = m.config().time_patch;
  const int t_feat = m.config().aud_t();
  const int count = max_samples > 0 ? std::min(max_samples, data.count(split)) : data.count(split);

  std::vector<Tensor> heatmaps, masks;
  for (int i = 0; i < count; ++i) {
    Tensor grid = data.audio(split, i);
    if (mixed) grid = detail::with_distractor(data, split, i, grid, eval_seed);
    Tensor audio_feat = detail::encode_audio_value(m, grid);
    Tensor visual_feat = detail::encode_image_value(m, data.image(split, i));
    std::size_t t0 = 0, t1 = static_cast<std::size_t>(t_feat);
    if (split == synthworld::Split::Speech) {
      std::tie(t0, t1) = detail::token_frames(data.record(split, i), time_patch, t_feat);
    }
    heatmaps.push_back(detail::head_heatmap(audio_feat, visual_feat, mode, t0, t1, w.img_h, w.img_w));
    masks.push_back(data.mask(split, i));
  }
  SegScores seg = segmentation_metrics(heatmaps, masks);

  MetricsReport report;
  report.task = "grounding";
  report.split = synthworld::split_name(split);
  report.head_mode = head_mode_name(mode);
  report.audio_mode = mixed ? "mixed" : "clean";
  report.map = seg.map;
  report.miou = seg.miou;
  report.sample_count = seg.used;
  report.skipped = seg.skipped;
  return report;
}

// Simultaneous grounding on the extended split: one forward pass per mixture,
// sound head scored against the sounding object, speech head against the
// spoken one.
inline std::pair<MetricsReport, MetricsReport> eval_simultaneous(model::Model<float>& m,
                                                                 const synthworld::DatasetReader& data,
                                                                 int max_samples = -1) {
  const auto& w = data.world();
  const int time_patch = m.config().time_patch;
  const int t_feat = m.config().aud_t();
  const int count = max_samples > 0 ? std::min(max_samples, data.count(synthworld::Split::Ext))
                                    : data.count(synthworld::Split::Ext);

  std::vector<Tensor> sound_maps, sound_masks, speech_maps, speech_masks;
  for (int i = 0; i < count; ++i) {
    Tensor audio_feat = detail::encode_audio_value(m, data.audio(synthworld::Split::Ext, i));
    Tensor visual_feat = detail::encode_image_value(m, data.image(synthworld::Split::Ext, i));
    sound_maps.push_back(detail::head_heatmap(audio_feat, visual_feat, HeadMode::Sound, 0,
                                              static_cast<std::size_t>(t_feat), w.img_h, w.img_w));
    sound_masks.push_back(data.mask_sound(i));
    const auto [t0, t1] = detail::token_frames(data.record(synthworld::Split::Ext, i), time_patch, t_feat);
    speech_maps.push_back(detail::head_heatmap(audio_feat, visual_feat, HeadMode::Speech, t0, t1, w.img_h, w.img_w));
    speech_masks.push_back(data.mask_speech(i));
  }

  auto to_report = [&](const char* task, const SegScores& seg, HeadMode mode) {
    MetricsReport r;
    r.task = task;
    r.split = "ext";
    r.head_mode = head_mode_name(mode);
    r.audio_mode = "mixture";
    r.map = seg.map;
    r.miou = seg.miou;
    r.sample_count = seg.used;
    r.skipped = seg.skipped;
    return r;
  };
  return {to_report("simul-sound", segmentation_metrics(sound_maps, sound_masks), HeadMode::Sound),
          to_report("simul-speech", segmentation_metrics(speech_maps, speech_masks), HeadMode::Speech)};
}

// Cross-modal retrieval over the first `gallery` samples of a split.
inline MetricsReport eval_retrieval(model::Model<float>& m, const synthworld::DatasetReader& data,
                                    synthworld::Split split, HeadMode mode, bool mixed, int k = 10, int gallery = 64,
                                    std::uint64_t eval_seed = 0) {
  if (mixed && split == synthworld::Split::Ext) {
    throw ConfigError("the extended split audio is already a mixture; --mixed does not apply");
  }
  const int n = std::min(gallery, data.count(split));
  std::vector<Tensor> audio_feats, visual_feats;
  for (int i = 0; i < n; ++i) {
    Tensor grid = data.audio(split, i);
    if (mixed) grid = detail::with_distractor(data, split, i, grid, eval_seed);
    audio_feats.push_back(detail::encode_audio_value(m, grid));
    visual_feats.push_back(detail::encode_image_value(m, data.image(split, i)));
  }
  Tensor scores(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      scores[i * n + j] = detail::pair_score(audio_feats[j], visual_feats[i], mode);
    }
  }
  const auto [i2a, a2i] = retrieval_recall(scores, k);

  MetricsReport report;
  report.task = "retrieval";
  report.split = synthworld::split_name(split);
  report.head_mode = head_mode_name(mode);
  report.audio_mode = mixed ? "mixed" : "clean";
  report.k = k;
  report.r_i2a = i2a;
  report.r_a2i = a2i;
  report.sample_count = n;
  return report;
}

// Type prediction from head activation strength on clean positive pairs.
inline MetricsReport eval_pred_dis(model::Model<float>& m, const synthworld::DatasetReader& data, int per_kind = 64) {
  std::vector<std::array<double, 2>> stats;
  std::vector<SampleKind> kinds;
  for (synthworld::Split split : {synthworld::Split::Sound, synthworld::Split::Speech}) {
    const int n = std::min(per_kind, data.count(split));
    for (int i = 0; i < n; ++i) {
      Tensor a = detail::encode_audio_value(m, data.audio(split, i));
      Tensor v = detail::encode_image_value(m, data.image(split, i));
      Tensor volume = simvol::similarity_volume(a, v);
      const std::size_t half = volume.numel() / 2;
      std::array<double, 2> mean_abs{};
      for (int head = 0; head < 2; ++head) {
        for (std::size_t p = 0; p < half; ++p) mean_abs[head] += std::fabs(volume[head * half + p]);
        mean_abs[head] /= static_cast<double>(half);
      }
      stats.push_back(mean_abs);
      kinds.push_back(split == synthworld::Split::Sound ? SampleKind::Sound : SampleKind::Speech);
    }
  }
  MetricsReport report;
  report.task = "pred-dis";
  report.split = "sound+speech";
  report.head_mode = "n/a";
  report.pred_dis = pred_dis_from_stats(stats, kinds);
  report.sample_count = static_cast<int>(stats.size());
  return report;
}

// Wrong-head activation rate against per-head median thresholds.
inline MetricsReport eval_act_dis(model::Model<float>& m, const synthworld::DatasetReader& data, int per_kind = 64) {
  std::vector<std::array<double, 2>> pooled;
  std::vector<SampleKind> kinds;
  for (synthworld::Split split : {synthworld::Split::Sound, synthworld::Split::Speech}) {
    const int n = std::min(per_kind, data.count(split));
    for (int i = 0; i < n; ++i) {
      Tensor a = detail::encode_audio_value(m, data.audio(split, i));
      Tensor v = detail::encode_image_value(m, data.image(split, i));
      pooled.push_back({static_cast<double>(detail::pair_score(a, v, HeadMode::Sound)),
                        static_cast<double>(detail::pair_score(a, v, HeadMode::Speech))});
      kinds.push_back(split == synthworld::Split::Sound ? SampleKind::Sound : SampleKind::Speech);
    }
  }
  MetricsReport report;
  report.task = "act-dis";
  report.split = "sound+speech";
  report.head_mode = "n/a";
  report.act_dis = act_dis_from_scores(pooled, kinds);
  report.sample_count = static_cast<int>(pooled.size());
  return report;
}

}  // namespace mixsep::evalsuite
