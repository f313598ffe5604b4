#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "mixsep/trainer.hpp"

using namespace mixsep;
using namespace mixsep::diffmath;
using namespace mixsep::trainer;

namespace {

namespace fs = std::filesystem;

struct WorldFixture {
  fs::path dir;
  synthworld::WorldConfig world;

  WorldFixture() {
    world.split_sound = 16;
    world.split_speech = 16;
    world.split_ext = 4;
    world.seed = 5;
    dir = fs::temp_directory_path() / "mixsep_trainer_world";
    if (!fs::exists(dir / "manifest.json")) {
      fs::remove_all(dir);
      synthworld::make_datasets(world, dir);
    }
  }
};

model::ModelConfig small_model(const synthworld::WorldConfig& w) {
  model::ModelConfig cfg;
  cfg.img_h = w.img_h;
  cfg.img_w = w.img_w;
  cfg.freq_bins = w.freq_bins;
  cfg.time_frames = w.time_frames;
  return cfg;
}

TrainConfig small_train(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.batch_size = 4;
  cfg.warmup_steps = 2;
  cfg.total_steps = 8;
  cfg.checkpoint_interval = 4;
  cfg.nonneg_samples = 16;
  return cfg;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("adam matches a hand-rolled reference for five steps") {
  Tensor param = Tensor::of({3}, {0.5f, -1.0f, 2.0f});
  std::vector<float> ref(param.data().begin(), param.data().end());
  std::vector<float> m(3, 0.0f), v(3, 0.0f);

  Adam adam(0.9, 0.999, 1e-8);
  const double lr = 0.01;
  for (int t = 1; t <= 5; ++t) {
    std::vector<float> grad(3);
    for (int i = 0; i < 3; ++i) grad[i] = static_cast<float>(0.3 * (i + 1) * t - 0.7);

    param.zero_grad();
    param.accumulate_grad(grad);
    adam.step("p", param, lr);

    const double bc1 = 1.0 - std::pow(0.9, t);
    const double bc2 = 1.0 - std::pow(0.999, t);
    for (int i = 0; i < 3; ++i) {
      m[i] = static_cast<float>(0.9 * m[i] + 0.1 * grad[i]);
      v[i] = static_cast<float>(0.999 * v[i] + 0.001 * grad[i] * grad[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      ref[i] = static_cast<float>(ref[i] - lr * mhat / (std::sqrt(vhat) + 1e-8));
      CHECK(param[i] == Catch::Approx(ref[i]).margin(1e-6));
    }
  }
}

TEST_CASE("adam fixed point and descent direction") {
  Adam adam(0.9, 0.999, 1e-8);
  Tensor p = Tensor::of({2}, {1.5f, -0.5f});
  const auto before = p.data();
  p.zero_grad();
  adam.step("zero", p, 0.1);
  CHECK(p.data() == before);

  Tensor x = Tensor::of({1}, {1.0f});
  for (int t = 0; t < 20; ++t) {
    x.zero_grad();
    x.accumulate_grad({2.0f * x[0]});
    adam.step("x", x, 0.05);
  }
  CHECK(std::fabs(x[0]) < 1.0f);

  Tensor other = Tensor::of({3}, {0, 0, 0});
  other.zero_grad();
  CHECK_THROWS_AS(adam.step("x", other, 0.1), ShapeError);
}

TEST_CASE("batch assembly is deterministic and mixes index-wise") {
  WorldFixture w;
  auto reader = synthworld::DatasetReader::open(w.dir);
  TrainConfig cfg = small_train(11);

  BatchAssembler a(reader, cfg, 8);
  BatchAssembler b(reader, cfg, 8);
  BatchInputs ba = a.assemble(7, true);
  BatchInputs bb = b.assemble(7, true);
  REQUIRE(ba.mix_grids.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(ba.sound_idx[i] == bb.sound_idx[i]);
    CHECK(ba.mix_grids[i].data() == bb.mix_grids[i].data());
    CHECK(ba.splice_mask_sound[i].data() == bb.splice_mask_sound[i].data());

    // mixture reconstructs as clamp(sound + speech) of the grids actually used
    for (std::size_t p = 0; p < ba.mix_grids[i].numel(); ++p) {
      const float expect = std::clamp(ba.sound_grids[i][p] + ba.speech_grids[i][p], 0.0f, 1.0f);
      CHECK(ba.mix_grids[i][p] == expect);
    }
  }
}

TEST_CASE("batch assembly covers each split before reshuffling") {
  WorldFixture w;
  auto reader = synthworld::DatasetReader::open(w.dir);
  TrainConfig cfg = small_train(3);
  cfg.batch_size = 4;
  BatchAssembler a(reader, cfg, 8);
  std::set<int> seen;
  for (int step = 0; step < 4; ++step) {  // 16 draws = one epoch of split size 16
    BatchInputs b = a.assemble(step, false);
    for (int idx : b.sound_idx) seen.insert(idx);
  }
  CHECK(seen.size() == 16);
}

TEST_CASE("warmup freezes backbones and reduces the correspondence loss") {
  WorldFixture w;
  auto reader = synthworld::DatasetReader::open(w.dir);

  model::Model<float> m(small_model(w.world), 0);
  TrainConfig cfg = small_train(0);
  cfg.warmup_steps = 60;
  cfg.total_steps = 61;
  Trainer trainer(m, reader, cfg);

  const auto backbone_before = m.param("visual.backbone.w1").data();
  const auto aligner_before = m.param("visual.aligner.w").data();

  // held-out fixed batch, far beyond the trained steps
  BatchAssembler held(reader, cfg, m.config().time_patch);
  BatchInputs fixed = held.assemble(1000, false);
  auto eval_cor = [&](model::Model<float>& mm) {
    Tape<float> tape;
    auto bound = mm.bind(tape);
    objectives::BatchFeatures<float> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      batch.audio_sound.push_back(bound.encode_audio(fixed.sound_grids[i]));
      batch.audio_speech.push_back(bound.encode_audio(fixed.speech_grids[i]));
      batch.audio_mix.push_back(bound.encode_audio(fixed.mix_grids[i]));
      batch.visual_sound.push_back(bound.encode_image(fixed.sound_images[i]));
      batch.visual_speech.push_back(bound.encode_image(fixed.speech_images[i]));
    }
    return tape.val(objectives::correspondence_loss(tape, batch, bound.tau()))[0];
  };

  const float cor_at_start = eval_cor(m);
  for (int s = 0; s < cfg.warmup_steps; ++s) {
    auto stats = trainer.train_step(s);
    CHECK(stats.warmup);
    CHECK(stats.tau > 0.0f);
  }
  const float cor_after = eval_cor(m);

  CHECK(m.param("visual.backbone.w1").data() == backbone_before);
  CHECK(m.param("visual.aligner.w").data() != aligner_before);
  CHECK(cor_after < cor_at_start);
}

TEST_CASE("zero warmup goes straight to the main phase") {
  WorldFixture w;
  auto reader = synthworld::DatasetReader::open(w.dir);
  model::Model<float> m(small_model(w.world), 1);
  TrainConfig cfg = small_train(1);
  cfg.warmup_steps = 0;
  Trainer trainer(m, reader, cfg);
  auto stats = trainer.train_step(0);
  CHECK(!stats.warmup);
}

TEST_CASE("training runs deterministically and resumes bitwise from a checkpoint") {
  WorldFixture w;
  auto reader = synthworld::DatasetReader::open(w.dir);

  const auto out_a = fs::temp_directory_path() / "mixsep_train_a";
  const auto out_b = fs::temp_directory_path() / "mixsep_train_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);

  TrainConfig cfg = small_train(21);
  std::ostringstream log_a;
  {
    model::Model<float> m(small_model(w.world), cfg.seed);
    Trainer t(m, reader, cfg);
    t.run(out_a, log_a);
  }

  std::ostringstream log_b;
  {
    model::Model<float> m(small_model(w.world), 999);  // overwritten by resume
    Trainer t(m, reader, cfg);
    t.resume(out_a / "ckpt_000004");
    CHECK(t.step() == 4);
    t.run(out_b, log_b);
  }

  // resumed log lines equal the tail of the full log
  std::vector<std::string> lines_a, lines_b;
  for (std::string line; std::getline(std::istringstream(log_a.str()), line);) break;  // silence unused warning path
  {
    std::istringstream sa(log_a.str());
    for (std::string line; std::getline(sa, line);) lines_a.push_back(line);
    std::istringstream sb(log_b.str());
    for (std::string line; std::getline(sb, line);) lines_b.push_back(line);
  }
  REQUIRE(lines_a.size() == 8);
  REQUIRE(lines_b.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(lines_b[i] == lines_a[4 + i]);

  // final checkpoints agree byte for byte
  for (const auto& entry : fs::directory_iterator(out_a / "ckpt_000008")) {
    const auto rel = entry.path().filename();
    CHECK(file_bytes(entry.path()) == file_bytes(out_b / "ckpt_000008" / rel));
  }

  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  WorldFixture w;
  auto reader = synthworld::DatasetReader::open(w.dir);
  model::Model<float> m(small_model(w.world), 2);
  for (auto& v : m.param("visual.aligner.w").data()) v = 1e30f;
  TrainConfig cfg = small_train(2);
  cfg.warmup_steps = 0;
  Trainer trainer(m, reader, cfg);
  CHECK_THROWS_AS(trainer.train_step(0), NumericError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = small_train(0);
  cfg.warmup_steps = 8;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_train(0);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_train(0);
  cfg.cor_only = cfg.dis_only = true;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(TrainConfig::kReferenceBatch == 64);
  CHECK(TrainConfig::kReferenceTotalSteps == 800000);
}
