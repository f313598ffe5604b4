#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixsep/errors.hpp"
#include "mixsep/rng.hpp"
#include "mixsep/tensor.hpp"
#include "mixsep/tensor_io.hpp"

namespace mixsep::synthworld {

using diffmath::Shape;
using diffmath::Tensor;

struct WorldConfig {
  int n_classes = 8;
  int img_h = 32;
  int img_w = 32;
  int freq_bins = 32;
  int time_frames = 64;
  double band_overlap = 0.5;
  std::uint64_t seed = 0;
  int split_sound = 512;
  int split_speech = 512;
  int split_ext = 128;

  // The axis splits at the midpoint; each band widens into the other half as
  // band_overlap grows. Shared rows: none at 0, half the axis at 0.5, all at 1.
  // Highest row (exclusive) a sound harmonic may occupy.
  int sound_row_limit() const {
    return static_cast<int>(std::lround(freq_bins * (1.0 + band_overlap) / 2.0));
  }
  // Lowest row a speech formant may occupy.
  int speech_row_base() const {
    return static_cast<int>(std::floor(freq_bins * (1.0 - band_overlap) / 2.0));
  }

  void validate() const {
    if (n_classes < 2) throw ConfigError("world.n_classes must be >= 2");
    if (img_h < 4 || img_w < 4 || freq_bins < 4 || time_frames < 4) {
      throw ConfigError("world extents must be >= 4");
    }
    if (band_overlap < 0.0 || band_overlap > 1.0) throw ConfigError("world.band_overlap must be in [0,1]");
    if (split_sound < 1 || split_speech < 1 || split_ext < 2) throw ConfigError("world split sizes too small");
    if (split_ext % 2 != 0) throw ConfigError("world.split_ext must be even (both orderings per scene)");
    if (sound_row_limit() - 2 < n_classes) {
      throw ConfigError("frequency axis too small for injective sound class rows");
    }
    const int band = freq_bins - speech_row_base();
    if (band - 8 < n_classes) {
      throw ConfigError("frequency axis too small for injective speech class rows");
    }
  }
};

enum class AudioKind { Sound, Speech, Mixture, Silence };

inline const char* kind_name(AudioKind k) {
  switch (k) {
    case AudioKind::Sound: return "sound";
    case AudioKind::Speech: return "speech";
    case AudioKind::Mixture: return "mixture";
    default: return "silence";
  }
}

struct TokenSpan {
  int class_id = 0;
  int t_begin = 0;
  int t_end = 0;  // exclusive
};

struct AudioSignal {
  Tensor grid;        // [F,T] in [0,1]
  AudioKind kind = AudioKind::Silence;
  Tensor provenance;  // [2,T], row 0 = sound frames, row 1 = speech frames
  std::vector<TokenSpan> token_spans;
};

struct SceneObject {
  int class_id = 0;
  int y = 0, x = 0, h = 0, w = 0;
};

struct SceneSample {
  Tensor image;  // [3,H,W] in [0,1]
  std::vector<SceneObject> objects;
  std::vector<Tensor> masks;  // one [H,W] binary mask per object
};

// ---- class keying ---------------------------------------------------------

inline std::array<double, 3> class_color(int class_id) {
  SplitRng rng = SplitRng::keyed({9001u, static_cast<std::uint64_t>(class_id)});
  return {0.30 + 0.65 * rng.uniform(), 0.30 + 0.65 * rng.uniform(), 0.30 + 0.65 * rng.uniform()};
}

inline int sound_base_row(const WorldConfig& cfg, int class_id) {
  const double spacing = static_cast<double>(cfg.sound_row_limit() - 2) / cfg.n_classes;
  return 1 + static_cast<int>(std::floor(class_id * spacing));
}

inline std::array<int, 3> speech_rows(const WorldConfig& cfg, int class_id) {
  const int lo = cfg.speech_row_base();
  const int band = cfg.freq_bins - lo;
  const double spacing = static_cast<double>(band - 8) / cfg.n_classes;
  const int off = static_cast<int>(std::floor(class_id * spacing));
  return {lo + 1 + off, lo + 4 + off, lo + 7 + off};
}

inline std::vector<std::string> class_names(int n) {
  static const std::array<const char*, 12> pool = {"drum",  "bell",  "horn", "chime", "siren", "pump",
                                                   "motor", "flute", "saw",  "gong",  "fan",   "whistle"};
  std::vector<std::string> names;
  names.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (i < static_cast<int>(pool.size())) {
      names.emplace_back(pool[i]);
    } else {
      names.emplace_back("class" + std::to_string(i));
    }
  }
  return names;
}

// ---- scenes ---------------------------------------------------------------

inline SceneSample gen_scene(const WorldConfig& cfg, SplitRng& rng, const std::vector<int>& classes) {
  for (int c : classes) {
    if (c < 0 || c >= cfg.n_classes) throw ShapeError("gen_scene: class id out of range");
  }
  const int H = cfg.img_h, W = cfg.img_w;
  SceneSample scene;
  scene.image = Tensor(Shape{3, static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
  // Noise background with object-like pixel statistics, so region location is
  // not recoverable from generic texture cues alone.
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        scene.image[ch * H * W + y * W + x] = static_cast<float>(0.08 + 0.80 * rng.uniform());
      }
    }
  }

  const double area_min = 0.10 * H * W;
  const double area_max = 0.25 * H * W;
  for (int c : classes) {
    SceneObject obj;
    obj.class_id = c;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int h = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                            std::min<int>(H, static_cast<int>(area_max / 4)) - 4 + 1)));
      const int w_lo = std::max(4, static_cast<int>(std::ceil(area_min / h)));
      const int w_hi = std::min(W, static_cast<int>(std::floor(area_max / h)));
      if (w_lo > w_hi) continue;
      const int w = w_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(w_hi - w_lo + 1)));
      const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(H - h + 1)));
      const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(W - w + 1)));
      bool overlaps = false;
      for (const auto& other : scene.objects) {
        const bool disjoint = x + w <= other.x || other.x + other.w <= x || y + h <= other.y || other.y + other.h <= y;
        if (!disjoint) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;
      obj.y = y;
      obj.x = x;
      obj.h = h;
      obj.w = w;
      placed = true;
    }
    if (!placed) {
      throw ConfigError("gen_scene: could not place object without overlap after 100 attempts (seed " +
                        std::to_string(cfg.seed) + ")");
    }

    const auto color = class_color(c);
    const int period = 3 + (c % 3);
    const bool vertical = (c % 2) == 1;
    Tensor mask(Shape{static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
    for (int y = obj.y; y < obj.y + obj.h; ++y) {
      for (int x = obj.x; x < obj.x + obj.w; ++x) {
        mask[y * W + x] = 1.0f;
        const int coord = vertical ? x : y;
        const double stripe = ((coord / period) % 2 == 0) ? 1.0 : 0.55;
        for (int ch = 0; ch < 3; ++ch) {
          scene.image[ch * H * W + y * W + x] = static_cast<float>(color[ch] * stripe);
        }
      }
    }
    scene.objects.push_back(obj);
    scene.masks.push_back(std::move(mask));
  }
  return scene;
}

// ---- audio ----------------------------------------------------------------

inline AudioSignal silence(const WorldConfig& cfg) {
  AudioSignal s;
  s.grid = Tensor(Shape{static_cast<std::size_t>(cfg.freq_bins), static_cast<std::size_t>(cfg.time_frames)});
  s.kind = AudioKind::Silence;
  s.provenance = Tensor(Shape{2, static_cast<std::size_t>(cfg.time_frames)});
  return s;
}

namespace detail {

inline void paint(Tensor& grid, int F, int T, int row, int t, double v) {
  if (row < 0 || row >= F) return;
  float& cell = grid[row * T + t];
  cell = std::max(cell, static_cast<float>(std::min(v, 1.0)));
}

}  // namespace detail

inline AudioSignal render_sound(const WorldConfig& cfg, int class_id, SplitRng& rng) {
  if (class_id < 0 || class_id >= cfg.n_classes) throw ShapeError("render_sound: class id out of range");
  const int F = cfg.freq_bins, T = cfg.time_frames;
  AudioSignal s = silence(cfg);
  s.kind = AudioKind::Sound;

  // random on/off envelope in segments of 3..8 frames
  std::vector<double> env(T, 0.0);
  bool on = rng.coin(0.5);
  int t = 0;
  while (t < T) {
    const int len = 3 + static_cast<int>(rng.below(6));
    const double amp = on ? 0.75 + 0.25 * rng.uniform() : 0.0;
    for (int i = t; i < std::min(t + len, T); ++i) env[i] = amp;
    t += len;
    on = !on;
  }
  if (std::all_of(env.begin(), env.end(), [](double v) { return v == 0.0; })) {
    for (int i = 0; i < std::min(8, T); ++i) env[i] = 0.9;
  }

  const int f0 = sound_base_row(cfg, class_id);
  const int limit = cfg.sound_row_limit();
  const std::array<double, 3> harmonic_amp = {1.0, 0.8, 0.6};
  for (t = 0; t < T; ++t) {
    if (env[t] == 0.0) continue;
    s.provenance[0 * T + t] = 1.0f;
    for (int h = 0; h < 3; ++h) {
      const int row = f0 * (h + 1);
      if (row >= limit) continue;
      const double v = env[t] * harmonic_amp[h];
      detail::paint(s.grid, F, T, row, t, v);
      detail::paint(s.grid, F, T, row - 1, t, 0.45 * v);
      detail::paint(s.grid, F, T, row + 1, t, 0.45 * v);
    }
  }
  return s;
}

inline AudioSignal render_speech(const WorldConfig& cfg, int class_id, SplitRng& rng) {
  if (class_id < 0 || class_id >= cfg.n_classes) throw ShapeError("render_speech: class id out of range");
  const int F = cfg.freq_bins, T = cfg.time_frames;
  AudioSignal s = silence(cfg);
  s.kind = AudioKind::Speech;

  const int blob_len = std::max(1, std::min(4, (T - 2) / 3));
  const int gap = (3 * blob_len + 2 <= T) ? 1 : 0;
  const int word_len = 3 * blob_len + 2 * gap;
  const int t0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(T - word_len + 1)));
  const auto rows = speech_rows(cfg, class_id);

  for (int blob = 0; blob < 3; ++blob) {
    const double amp = 0.8 + 0.2 * rng.uniform();
    const int start = t0 + blob * (blob_len + gap);
    for (int tt = start; tt < start + blob_len; ++tt) {
      s.provenance[1 * T + tt] = 1.0f;
      for (int i = 0; i < 3; ++i) {
        const double v = amp * (i == blob ? 1.0 : 0.5);
        detail::paint(s.grid, F, T, rows[i], tt, v);
        detail::paint(s.grid, F, T, rows[i] - 1, tt, 0.4 * v);
        detail::paint(s.grid, F, T, rows[i] + 1, tt, 0.4 * v);
      }
    }
  }
  s.token_spans.push_back(TokenSpan{class_id, t0, t0 + word_len});
  return s;
}

inline AudioSignal mix(const AudioSignal& a, const AudioSignal& b) {
  if (a.grid.shape() != b.grid.shape()) {
    throw ShapeError("mix: grid extents differ: " + diffmath::shape_str(a.grid.shape()) + " vs " +
                     diffmath::shape_str(b.grid.shape()));
  }
  if (a.kind == AudioKind::Mixture || b.kind == AudioKind::Mixture) {
    throw ShapeError("mix: mixing a mixture is not allowed");
  }
  AudioSignal m;
  m.kind = AudioKind::Mixture;
  m.grid = Tensor(a.grid.shape());
  for (std::size_t i = 0; i < m.grid.numel(); ++i) {
    m.grid[i] = std::clamp(a.grid[i] + b.grid[i], 0.0f, 1.0f);
  }
  m.provenance = Tensor(a.provenance.shape());
  for (std::size_t i = 0; i < m.provenance.numel(); ++i) {
    m.provenance[i] = std::max(a.provenance[i], b.provenance[i]);
  }
  m.token_spans = a.token_spans;
  m.token_spans.insert(m.token_spans.end(), b.token_spans.begin(), b.token_spans.end());
  return m;
}

// Replaces a random contiguous frame interval with the donor's frames,
// crossfading over a 2-frame linear ramp at each edge. The returned mask is
// the per-frame blend weight; its plateau frames equal the donor exactly.
inline std::pair<AudioSignal, Tensor> splice_negative(const AudioSignal& audio, const AudioSignal& donor,
                                                      SplitRng& rng, double rho_override = -1.0) {
  if (audio.grid.shape() != donor.grid.shape()) {
    throw ShapeError("splice_negative: grid extents differ");
  }
  const int F = static_cast<int>(audio.grid.extent(0));
  const int T = static_cast<int>(audio.grid.extent(1));
  const double rho = rho_override >= 0.0 ? rho_override : rng.uniform(0.1, 0.3);
  const int len = std::min(T, static_cast<int>(std::lround(rho * T)));
  if (len == 0) return {audio, Tensor(Shape{static_cast<std::size_t>(T)})};
  const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(T - len + 1)));

  Tensor mask(Shape{static_cast<std::size_t>(T)});
  for (int i = 0; i < len; ++i) {
    const double ramp_in = std::min(1.0, (i + 1) / 3.0);
    const double ramp_out = std::min(1.0, (len - i) / 3.0);
    mask[start + i] = static_cast<float>(std::min(ramp_in, ramp_out));
  }

  AudioSignal out = audio;
  for (int f = 0; f < F; ++f) {
    for (int i = 0; i < len; ++i) {
      const int t = start + i;
      const float m = mask[t];
      out.grid[f * T + t] = (1.0f - m) * audio.grid[f * T + t] + m * donor.grid[f * T + t];
    }
  }
  for (std::size_t i = 0; i < out.provenance.numel(); ++i) {
    out.provenance[i] = std::max(audio.provenance[i], donor.provenance[i]);
  }
  return {std::move(out), std::move(mask)};
}

// ---- datasets -------------------------------------------------------------

enum class Split { Sound, Speech, Ext };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Sound: return "sound";
    case Split::Speech: return "speech";
    default: return "ext";
  }
}

inline Split split_from_name(const std::string& name) {
  if (name == "sound") return Split::Sound;
  if (name == "speech") return Split::Speech;
  if (name == "ext") return Split::Ext;
  throw ConfigError("unknown split '" + name + "' (expected sound, speech or ext)");
}

namespace detail {

// rng stream tags per split and role
constexpr std::uint64_t kTagClass = 100, kTagScene = 101, kTagAudio = 102;
constexpr std::uint64_t kTagSound = 1, kTagSpeech = 2, kTagExt = 3;

inline std::uint64_t split_tag(Split s) {
  switch (s) {
    case Split::Sound: return kTagSound;
    case Split::Speech: return kTagSpeech;
    default: return kTagExt;
  }
}

inline nlohmann::json world_to_json(const WorldConfig& cfg) {
  return nlohmann::json{{"n_classes", cfg.n_classes},
                        {"img_h", cfg.img_h},
                        {"img_w", cfg.img_w},
                        {"freq_bins", cfg.freq_bins},
                        {"time_frames", cfg.time_frames},
                        {"band_overlap", cfg.band_overlap},
                        {"seed", cfg.seed},
                        {"split_sound", cfg.split_sound},
                        {"split_speech", cfg.split_speech},
                        {"split_ext", cfg.split_ext}};
}

inline WorldConfig world_from_json(const nlohmann::json& j) {
  WorldConfig cfg;
  cfg.n_classes = j.at("n_classes").get<int>();
  cfg.img_h = j.at("img_h").get<int>();
  cfg.img_w = j.at("img_w").get<int>();
  cfg.freq_bins = j.at("freq_bins").get<int>();
  cfg.time_frames = j.at("time_frames").get<int>();
  cfg.band_overlap = j.at("band_overlap").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.split_sound = j.at("split_sound").get<int>();
  cfg.split_speech = j.at("split_speech").get<int>();
  cfg.split_ext = j.at("split_ext").get<int>();
  return cfg;
}

}  // namespace detail

struct SampleRecord {
  int sound_class = -1;   // class of the sound constituent (or the pair class)
  int speech_class = -1;  // class of the speech constituent
  int token_begin = -1;
  int token_end = -1;
};

inline void make_datasets(const WorldConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"sound", "speech", "ext"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  nlohmann::json records = {{"sound", nlohmann::json::array()},
                            {"speech", nlohmann::json::array()},
                            {"ext", nlohmann::json::array()}};

  const auto pair_split = [&](Split split, int count, bool speech) {
    const std::uint64_t tag = detail::split_tag(split);
    for (int i = 0; i < count; ++i) {
      const std::uint64_t idx = static_cast<std::uint64_t>(i);
      SplitRng cls_rng = SplitRng::keyed({cfg.seed, tag, detail::kTagClass, idx});
      SplitRng scene_rng = SplitRng::keyed({cfg.seed, tag, detail::kTagScene, idx});
      SplitRng audio_rng = SplitRng::keyed({cfg.seed, tag, detail::kTagAudio, idx});
      const int cls = static_cast<int>(cls_rng.below(cfg.n_classes));
      SceneSample scene = gen_scene(cfg, scene_rng, {cls});
      AudioSignal audio = speech ? render_speech(cfg, cls, audio_rng) : render_sound(cfg, cls, audio_rng);
      const auto base = out_dir / split_name(split);
      diffmath::write_tensor(base / (std::to_string(i) + ".image.t32"), scene.image);
      diffmath::write_tensor(base / (std::to_string(i) + ".audio.t32"), audio.grid);
      diffmath::write_tensor(base / (std::to_string(i) + ".mask.t32"), scene.masks[0]);
      nlohmann::json rec{{"class", cls}};
      if (speech) rec["token"] = {audio.token_spans[0].t_begin, audio.token_spans[0].t_end};
      records[split_name(split)].push_back(std::move(rec));
    }
  };
  pair_split(Split::Sound, cfg.split_sound, false);
  pair_split(Split::Speech, cfg.split_speech, true);

  for (int m = 0; m < cfg.split_ext / 2; ++m) {
    SplitRng cls_rng = SplitRng::keyed({cfg.seed, detail::kTagExt, detail::kTagClass, static_cast<std::uint64_t>(m)});
    SplitRng scene_rng = SplitRng::keyed({cfg.seed, detail::kTagExt, detail::kTagScene, static_cast<std::uint64_t>(m)});
    const int c1 = static_cast<int>(cls_rng.below(cfg.n_classes));
    const int c2 = static_cast<int>((c1 + 1 + cls_rng.below(cfg.n_classes - 1)) % cfg.n_classes);
    SceneSample scene = gen_scene(cfg, scene_rng, {c1, c2});
    for (int ordering = 0; ordering < 2; ++ordering) {
      const int i = 2 * m + ordering;
      const int sound_cls = ordering == 0 ? c1 : c2;
      const int speech_cls = ordering == 0 ? c2 : c1;
      SplitRng audio_rng =
          SplitRng::keyed({cfg.seed, detail::kTagExt, detail::kTagAudio, static_cast<std::uint64_t>(i)});
      AudioSignal snd = render_sound(cfg, sound_cls, audio_rng);
      AudioSignal spc = render_speech(cfg, speech_cls, audio_rng);
      AudioSignal both = mix(snd, spc);
      const auto base = out_dir / "ext";
      diffmath::write_tensor(base / (std::to_string(i) + ".image.t32"), scene.image);
      diffmath::write_tensor(base / (std::to_string(i) + ".audio.t32"), both.grid);
      diffmath::write_tensor(base / (std::to_string(i) + ".mask_sound.t32"), scene.masks[ordering == 0 ? 0 : 1]);
      diffmath::write_tensor(base / (std::to_string(i) + ".mask_speech.t32"), scene.masks[ordering == 0 ? 1 : 0]);
      records["ext"].push_back(nlohmann::json{{"sound_class", sound_cls},
                                              {"speech_class", speech_cls},
                                              {"token", {spc.token_spans[0].t_begin, spc.token_spans[0].t_end}}});
    }
  }

  nlohmann::json manifest{
      {"format", 1},
      {"world", detail::world_to_json(cfg)},
      {"class_names", class_names(cfg.n_classes)},
      {"splits",
       {{"sound", {{"count", cfg.split_sound}}},
        {"speech", {{"count", cfg.split_speech}}},
        {"ext", {{"count", cfg.split_ext}}}}},
      {"records", std::move(records)}};
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("short write: " + (out_dir / "manifest.json").string());
}

class DatasetReader {
 public:
  static DatasetReader open(const std::filesystem::path& dir) {
    DatasetReader r;
    r.dir_ = dir;
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
      in >> manifest;
      r.world_ = detail::world_from_json(manifest.at("world"));
      r.class_names_ = manifest.at("class_names").get<std::vector<std::string>>();
      for (Split s : {Split::Sound, Split::Speech, Split::Ext}) {
        r.counts_[idx(s)] = manifest.at("splits").at(split_name(s)).at("count").get<int>();
        for (const auto& rec : manifest.at("records").at(split_name(s))) {
          SampleRecord sr;
          if (rec.contains("class")) {
            const int c = rec.at("class").get<int>();
            if (s == Split::Sound) sr.sound_class = c;
            if (s == Split::Speech) sr.speech_class = c;
          }
          if (rec.contains("sound_class")) sr.sound_class = rec.at("sound_class").get<int>();
          if (rec.contains("speech_class")) sr.speech_class = rec.at("speech_class").get<int>();
          if (rec.contains("token")) {
            sr.token_begin = rec.at("token").at(0).get<int>();
            sr.token_end = rec.at("token").at(1).get<int>();
          }
          r.records_[idx(s)].push_back(sr);
        }
        if (static_cast<int>(r.records_[idx(s)].size()) != r.counts_[idx(s)]) {
          throw IoError("manifest record count mismatch for split " + std::string(split_name(s)));
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    return r;
  }

  const WorldConfig& world() const { return world_; }
  const std::vector<std::string>& classes() const { return class_names_; }
  int count(Split s) const { return counts_[idx(s)]; }
  const SampleRecord& record(Split s, int i) const { return records_[idx(s)].at(i); }

  Tensor image(Split s, int i) const { return load(s, i, "image"); }
  Tensor audio(Split s, int i) const { return load(s, i, "audio"); }
  Tensor mask(Split s, int i) const { return load(s, i, "mask"); }
  Tensor mask_sound(int i) const { return load(Split::Ext, i, "mask_sound"); }
  Tensor mask_speech(int i) const { return load(Split::Ext, i, "mask_speech"); }

 private:
  static int idx(Split s) { return static_cast<int>(s); }

  Tensor load(Split s, int i, const char* field) const {
    if (i < 0 || i >= counts_[idx(s)]) throw IoError("sample index out of range for split " + std::string(split_name(s)));
    return diffmath::read_tensor(dir_ / split_name(s) / (std::to_string(i) + "." + field + ".t32"));
  }

  std::filesystem::path dir_;
  WorldConfig world_;
  std::vector<std::string> class_names_;
  int counts_[3] = {0, 0, 0};
  std::vector<SampleRecord> records_[3];
};

}  // namespace mixsep::synthworld
