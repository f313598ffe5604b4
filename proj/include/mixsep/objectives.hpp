#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mixsep/autodiff.hpp"
#include "mixsep/errors.hpp"
#include "mixsep/model.hpp"
#include "mixsep/rng.hpp"
#include "mixsep/simvol.hpp"
#include "mixsep/tensor.hpp"

namespace mixsep::objectives {

using diffmath::BasicTensor;
using diffmath::Shape;
using diffmath::Tape;
using diffmath::Tensor;
using model::kSoundHead;
using model::kSpeechHead;

template <typename T>
struct LossWeights {
  T splice = T(0.01);
  T cal = T(0.1);
  T nonneg = T(0.01);
  T tv = T(0.01);
  T disreg = T(0.05);
};

template <typename To, typename From>
LossWeights<To> weights_cast(const LossWeights<From>& w) {
  return LossWeights<To>{static_cast<To>(w.splice), static_cast<To>(w.cal), static_cast<To>(w.nonneg),
                         static_cast<To>(w.tv), static_cast<To>(w.disreg)};
}

// Per-sample aligned features on one tape: clean sound audio, clean speech
// audio, their mixture, and the two paired images.
template <typename T>
struct BatchFeatures {
  using Var = typename Tape<T>::Var;
  std::vector<Var> audio_sound;
  std::vector<Var> audio_speech;
  std::vector<Var> audio_mix;
  std::vector<Var> visual_sound;
  std::vector<Var> visual_speech;

  std::size_t size() const { return audio_sound.size(); }
  void check() const {
    const std::size_t b = size();
    if (b < 2) throw ShapeError("batch must contain at least 2 samples");
    if (audio_speech.size() != b || audio_mix.size() != b || visual_sound.size() != b || visual_speech.size() != b) {
      throw ShapeError("batch feature lists have mismatched lengths");
    }
  }
};

// ---- InfoNCE ---------------------------------------------------------------

namespace detail {

template <typename T>
typename Tape<T>::Var scores_over_tau(Tape<T>& tape, typename Tape<T>::Var scores, typename Tape<T>::Var tau) {
  const T tau_value = tape.val(tau)[0];
  if (!(tau_value > T(0))) throw ShapeError("infonce requires tau > 0, got " + std::to_string(tau_value));
  auto inv_tau = tape.exp(tape.scalar_mul(tape.log(tau), T(-1)));
  return tape.mul(scores, inv_tau);
}

}  // namespace detail

// One direction: -mean_i log softmax-row(scores/tau)[i,i].
template <typename T>
typename Tape<T>::Var infonce_direction(Tape<T>& tape, typename Tape<T>::Var scores, typename Tape<T>::Var tau) {
  const auto& sv = tape.val(scores);
  if (sv.rank() != 2 || sv.extent(0) != sv.extent(1)) {
    throw ShapeError("infonce expects a square score matrix, got " + diffmath::shape_str(sv.shape()));
  }
  if (sv.extent(0) < 2) throw ShapeError("infonce requires batch size >= 2");
  auto z = detail::scores_over_tau(tape, scores, tau);
  auto diag = diffmath::diagonal(tape, tape.log_softmax_rows(z));
  return tape.scalar_mul(tape.mean_all(diag), T(-1));
}

// Both directions, each mean-normalized, weighted 1/2.
template <typename T>
typename Tape<T>::Var infonce_symmetric(Tape<T>& tape, typename Tape<T>::Var scores, typename Tape<T>::Var tau) {
  auto fwd = infonce_direction(tape, scores, tau);
  auto bwd = infonce_direction(tape, diffmath::transpose2d(tape, scores), tau);
  return tape.scalar_mul(tape.add(fwd, bwd), T(0.5));
}

template <typename T>
T infonce_symmetric(const BasicTensor<T>& scores, T tau) {
  Tape<T> tape;
  return tape.val(infonce_symmetric(tape, tape.input(scores), tape.constant(BasicTensor<T>::scalar(tau))))[0];
}

// ---- pairwise score matrices ------------------------------------------------

// Volumes produced while filling a score matrix; positives are the diagonal
// pairs, negatives feed the non-negativity pressure term.
template <typename T>
struct PairwisePass {
  using Var = typename Tape<T>::Var;
  Var scores;                                 // [B,B], row = audio index
  std::vector<std::array<Var, 2>> positives;  // per-head diagonal volumes (Max mode)
  std::vector<Var> positives_single;          // diagonal volumes (Head mode)
  std::vector<Var> negatives;                 // all off-diagonal per-head volumes
};

// s_M over all pairs: max across heads, then spatial max / tf mean.
template <typename T>
PairwisePass<T> pairwise_scores_max(Tape<T>& tape, const std::vector<typename Tape<T>::Var>& audio,
                                    const std::vector<typename Tape<T>::Var>& visual) {
  const std::size_t B = audio.size();
  PairwisePass<T> pass;
  std::vector<typename Tape<T>::Var> cells;
  cells.reserve(B * B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      auto v0 = simvol::head_volume(tape, audio[i], visual[j], kSoundHead);
      auto v1 = simvol::head_volume(tape, audio[i], visual[j], kSpeechHead);
      auto agg = tape.reduce_max(tape.stack0({v0, v1}), {0}, false);
      cells.push_back(simvol::pooled_score(tape, agg));
      if (i == j) {
        pass.positives.push_back({v0, v1});
      } else {
        pass.negatives.push_back(v0);
        pass.negatives.push_back(v1);
      }
    }
  }
  pass.scores = tape.reshape(tape.stack0(cells), Shape{B, B});
  return pass;
}

// s_N over all pairs for one head.
template <typename T>
PairwisePass<T> pairwise_scores_head(Tape<T>& tape, const std::vector<typename Tape<T>::Var>& audio,
                                     const std::vector<typename Tape<T>::Var>& visual, int head) {
  const std::size_t B = audio.size();
  PairwisePass<T> pass;
  std::vector<typename Tape<T>::Var> cells;
  cells.reserve(B * B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      auto vol = simvol::head_volume(tape, audio[i], visual[j], head);
      cells.push_back(simvol::pooled_score(tape, vol));
      if (i == j) {
        pass.positives_single.push_back(vol);
      } else {
        pass.negatives.push_back(vol);
      }
    }
  }
  pass.scores = tape.reshape(tape.stack0(cells), Shape{B, B});
  return pass;
}

// ---- main losses -------------------------------------------------------------

template <typename T>
typename Tape<T>::Var correspondence_loss(Tape<T>& tape, const BatchFeatures<T>& batch, typename Tape<T>::Var tau) {
  batch.check();
  auto sound = pairwise_scores_max(tape, batch.audio_sound, batch.visual_sound);
  auto speech = pairwise_scores_max(tape, batch.audio_speech, batch.visual_speech);
  return tape.add(infonce_symmetric(tape, sound.scores, tau), infonce_symmetric(tape, speech.scores, tau));
}

template <typename T>
typename Tape<T>::Var disentanglement_loss(Tape<T>& tape, const BatchFeatures<T>& batch, typename Tape<T>::Var tau) {
  batch.check();
  auto mix_sound = pairwise_scores_head(tape, batch.audio_mix, batch.visual_sound, kSoundHead);
  auto mix_speech = pairwise_scores_head(tape, batch.audio_mix, batch.visual_speech, kSpeechHead);
  return tape.add(infonce_symmetric(tape, mix_sound.scores, tau), infonce_symmetric(tape, mix_speech.scores, tau));
}

// ---- regularizers -------------------------------------------------------------

template <typename T>
typename Tape<T>::Var disentanglement_regularizer_pair(Tape<T>& tape, typename Tape<T>::Var head0,
                                                       typename Tape<T>::Var head1) {
  return tape.mean_all(tape.abs(tape.mul(head0, head1)));
}

// mean(|S[0] o S[1]|); requires K = 2.
template <typename T>
typename Tape<T>::Var disentanglement_regularizer(Tape<T>& tape, typename Tape<T>::Var volume) {
  const auto& vv = tape.val(volume);
  if (vv.rank() != 5 || vv.extent(0) != 2) {
    throw ShapeError("disentanglement regularizer expects K=2 volume, got " + diffmath::shape_str(vv.shape()));
  }
  return disentanglement_regularizer_pair(tape, diffmath::select0(tape, volume, 0), diffmath::select0(tape, volume, 1));
}

// Weighted mean of S^2 with per-frame weights broadcast across f, h, w.
template <typename T>
typename Tape<T>::Var splice_regularizer(Tape<T>& tape, typename Tape<T>::Var agg, const BasicTensor<T>& frame_mask) {
  const auto& av = tape.val(agg);
  if (av.rank() != 4) throw ShapeError("splice regularizer expects [F,T,H,W], got " + diffmath::shape_str(av.shape()));
  const std::size_t F = av.extent(0), Tt = av.extent(1), H = av.extent(2), W = av.extent(3);
  if (frame_mask.shape() != Shape{Tt}) {
    throw ShapeError("splice mask must be rank-1 [" + std::to_string(Tt) + "], got " +
                     diffmath::shape_str(frame_mask.shape()));
  }
  BasicTensor<T> weights(av.shape());
  double mask_total = 0.0;
  for (std::size_t t = 0; t < Tt; ++t) mask_total += static_cast<double>(frame_mask[t]);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < Tt; ++t) {
      for (std::size_t s = 0; s < H * W; ++s) weights[(f * Tt + t) * H * W + s] = frame_mask[t];
    }
  }
  const double denom = std::max(mask_total * static_cast<double>(F * H * W), 1e-8);
  auto weighted = tape.sum_all(tape.mul(tape.square(agg), tape.constant(std::move(weights))));
  return tape.scalar_mul(weighted, static_cast<T>(1.0 / denom));
}

template <typename T>
typename Tape<T>::Var calibration_regularizer(Tape<T>& tape, typename Tape<T>::Var tau) {
  if (!(tape.val(tau)[0] > T(0))) throw ShapeError("calibration regularizer requires tau > 0");
  return tape.square(tape.clamp_min(tape.log(tau), T(0)));
}

// mean of min(value, 0)^2 over coordinates sampled uniformly across the
// provided (negative pair) volumes.
template <typename T>
typename Tape<T>::Var nonneg_regularizer(Tape<T>& tape, const std::vector<typename Tape<T>::Var>& volumes,
                                         int n_samples, SplitRng& rng) {
  if (n_samples < 1) throw ShapeError("nonneg regularizer needs at least one sampled coordinate");
  if (volumes.empty()) throw ShapeError("nonneg regularizer needs at least one volume");
  std::size_t total = 0;
  for (auto v : volumes) total += tape.val(v).numel();
  std::vector<typename Tape<T>::Var> picks;
  picks.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    std::size_t r = rng.below(total);
    for (auto v : volumes) {
      const std::size_t n = tape.val(v).numel();
      if (r < n) {
        picks.push_back(tape.index_map(v, {r}, Shape{1}));
        break;
      }
      r -= n;
    }
  }
  auto gathered = tape.stack0(picks);
  auto negative_part = tape.relu(tape.scalar_mul(gathered, T(-1)));
  return tape.mean_all(tape.square(negative_part));
}

// mean squared difference of consecutive frames along the time axis.
template <typename T>
typename Tape<T>::Var tv_regularizer(Tape<T>& tape, typename Tape<T>::Var agg) {
  const auto& av = tape.val(agg);
  if (av.rank() != 4) throw ShapeError("tv regularizer expects [F,T,H,W], got " + diffmath::shape_str(av.shape()));
  const std::size_t F = av.extent(0), Tt = av.extent(1), H = av.extent(2), W = av.extent(3);
  if (Tt < 2) throw ShapeError("tv regularizer needs T >= 2");
  std::vector<std::size_t> head_map, tail_map;
  head_map.reserve(F * (Tt - 1) * H * W);
  tail_map.reserve(F * (Tt - 1) * H * W);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t + 1 < Tt; ++t) {
      for (std::size_t s = 0; s < H * W; ++s) {
        head_map.push_back((f * Tt + t) * H * W + s);
        tail_map.push_back((f * Tt + t + 1) * H * W + s);
      }
    }
  }
  const Shape sliced{F, Tt - 1, H, W};
  auto a = tape.index_map(agg, std::move(head_map), sliced);
  auto b = tape.index_map(agg, std::move(tail_map), sliced);
  return tape.mean_all(tape.square(tape.sub(a, b)));
}

// ---- total objective -----------------------------------------------------------

template <typename T>
struct RegContext {
  // Per-sample splice masks at feature-frame resolution; empty tensor = not
  // spliced this step.
  std::vector<BasicTensor<T>> splice_mask_sound;
  std::vector<BasicTensor<T>> splice_mask_speech;
  std::uint64_t nonneg_seed = 0;
  int nonneg_samples = 64;
};

template <typename T>
struct LossOptions {
  bool include_cor = true;
  bool include_dis = true;
  LossWeights<T> weights;
};

template <typename T>
struct LossBreakdown {
  using Var = typename Tape<T>::Var;
  Var total, cor, dis, disreg, splice, cal, nonneg, tv;
};

// Evaluates Eq-style total: cor + dis + weighted regularizers. Terms with a
// zero weight (or a disabled main term) are reported but never added, so the
// all-zero-weights case is bitwise cor + dis.
template <typename T>
LossBreakdown<T> compute_losses(Tape<T>& tape, const BatchFeatures<T>& batch, typename Tape<T>::Var tau,
                                const LossOptions<T>& opts, const RegContext<T>& reg) {
  batch.check();
  const std::size_t B = batch.size();

  auto clean_sound = pairwise_scores_max(tape, batch.audio_sound, batch.visual_sound);
  auto clean_speech = pairwise_scores_max(tape, batch.audio_speech, batch.visual_speech);
  auto mix_sound = pairwise_scores_head(tape, batch.audio_mix, batch.visual_sound, kSoundHead);
  auto mix_speech = pairwise_scores_head(tape, batch.audio_mix, batch.visual_speech, kSpeechHead);

  LossBreakdown<T> out;
  out.cor = tape.add(infonce_symmetric(tape, clean_sound.scores, tau),
                     infonce_symmetric(tape, clean_speech.scores, tau));
  out.dis = tape.add(infonce_symmetric(tape, mix_sound.scores, tau),
                     infonce_symmetric(tape, mix_speech.scores, tau));

  // opposite-head volumes of the mixed positive pairs (for DisReg / TV)
  std::vector<std::array<typename Tape<T>::Var, 2>> mix_sound_pos, mix_speech_pos;
  for (std::size_t i = 0; i < B; ++i) {
    mix_sound_pos.push_back({mix_sound.positives_single[i],
                             simvol::head_volume(tape, batch.audio_mix[i], batch.visual_sound[i], kSpeechHead)});
    mix_speech_pos.push_back({simvol::head_volume(tape, batch.audio_mix[i], batch.visual_speech[i], kSoundHead),
                              mix_speech.positives_single[i]});
  }

  // DisReg and TV run over every positive-pair volume built this step.
  std::vector<typename Tape<T>::Var> disreg_terms, tv_terms;
  auto add_pos = [&](const std::array<typename Tape<T>::Var, 2>& heads) {
    disreg_terms.push_back(disentanglement_regularizer_pair(tape, heads[0], heads[1]));
    tv_terms.push_back(tv_regularizer(tape, heads[0]));
    tv_terms.push_back(tv_regularizer(tape, heads[1]));
  };
  for (std::size_t i = 0; i < B; ++i) {
    add_pos(clean_sound.positives[i]);
    add_pos(clean_speech.positives[i]);
    add_pos(mix_sound_pos[i]);
    add_pos(mix_speech_pos[i]);
  }
  out.disreg = tape.mean_all(tape.stack0(disreg_terms));
  out.tv = tape.mean_all(tape.stack0(tv_terms));

  // splice penalty on the clean positive volumes of spliced samples
  std::vector<typename Tape<T>::Var> splice_terms;
  auto add_splice = [&](const std::array<typename Tape<T>::Var, 2>& heads, const BasicTensor<T>& mask) {
    if (mask.numel() == 0 || mask.rank() == 0) return;
    auto both = tape.add(splice_regularizer(tape, heads[0], mask), splice_regularizer(tape, heads[1], mask));
    splice_terms.push_back(tape.scalar_mul(both, T(0.5)));
  };
  if (!reg.splice_mask_sound.empty()) {
    for (std::size_t i = 0; i < B; ++i) add_splice(clean_sound.positives[i], reg.splice_mask_sound[i]);
  }
  if (!reg.splice_mask_speech.empty()) {
    for (std::size_t i = 0; i < B; ++i) add_splice(clean_speech.positives[i], reg.splice_mask_speech[i]);
  }
  out.splice = splice_terms.empty() ? tape.scalar(T(0)) : tape.mean_all(tape.stack0(splice_terms));

  out.cal = calibration_regularizer(tape, tau);

  std::vector<typename Tape<T>::Var> negatives;
  negatives.insert(negatives.end(), clean_sound.negatives.begin(), clean_sound.negatives.end());
  negatives.insert(negatives.end(), clean_speech.negatives.begin(), clean_speech.negatives.end());
  negatives.insert(negatives.end(), mix_sound.negatives.begin(), mix_sound.negatives.end());
  negatives.insert(negatives.end(), mix_speech.negatives.begin(), mix_speech.negatives.end());
  SplitRng nonneg_rng = SplitRng::keyed({reg.nonneg_seed, 0x6e6e6567u});
  out.nonneg = nonneg_regularizer(tape, negatives, reg.nonneg_samples, nonneg_rng);

  typename Tape<T>::Var total;
  bool have_total = false;
  auto accumulate = [&](typename Tape<T>::Var term, T weight) {
    if (weight == T(0)) return;
    auto scaled = weight == T(1) ? term : tape.scalar_mul(term, weight);
    total = have_total ? tape.add(total, scaled) : scaled;
    have_total = true;
  };
  if (opts.include_cor) accumulate(out.cor, T(1));
  if (opts.include_dis) accumulate(out.dis, T(1));
  accumulate(out.disreg, opts.weights.disreg);
  accumulate(out.splice, opts.weights.splice);
  accumulate(out.cal, opts.weights.cal);
  accumulate(out.nonneg, opts.weights.nonneg);
  accumulate(out.tv, opts.weights.tv);
  if (!have_total) throw ShapeError("total loss has no active terms");
  out.total = total;
  return out;
}

}  // namespace mixsep::objectives
