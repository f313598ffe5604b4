#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixsep/config.hpp"
#include "mixsep/evalsuite.hpp"
#include "mixsep/gradsuite.hpp"
#include "mixsep/model.hpp"
#include "mixsep/simvol.hpp"
#include "mixsep/synthworld.hpp"
#include "mixsep/trainer.hpp"

namespace fs = std::filesystem;
using namespace mixsep;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration (defaults when omitted)");
  cmd->add_option("--seed", opts.seed, "override the config seed");
  cmd->add_option("--threads", opts.threads,
                  "upper bound on worker threads (this build executes single-threaded)");
}

cli::RunConfig resolve_config(const CommonOpts& opts) {
  cli::RunConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = cli::load_config_file(opts.config_path);
  }
  if (const char* env = std::getenv("MIXSEP_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("MIXSEP_SEED is not an integer: '") + env + "'");
    }
  }
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.threads) cfg.threads = *opts.threads;
  cfg.propagate_and_validate();
  return cfg;
}

void check_world_matches(const synthworld::WorldConfig& data, const synthworld::WorldConfig& cfg) {
  const bool same = data.n_classes == cfg.n_classes && data.img_h == cfg.img_h && data.img_w == cfg.img_w &&
                    data.freq_bins == cfg.freq_bins && data.time_frames == cfg.time_frames &&
                    data.band_overlap == cfg.band_overlap && data.split_sound == cfg.split_sound &&
                    data.split_speech == cfg.split_speech && data.split_ext == cfg.split_ext;
  if (!same) throw ConfigError("dataset directory was generated with a different world configuration");
}

int cmd_gen_data(const CommonOpts& common, const std::string& out) {
  cli::RunConfig cfg = resolve_config(common);
  synthworld::make_datasets(cfg.world, out);
  std::cout << "wrote " << out << ": sound=" << cfg.world.split_sound << " speech=" << cfg.world.split_speech
            << " ext=" << cfg.world.split_ext << " classes=" << cfg.world.n_classes << " seed=" << cfg.world.seed
            << '\n';
  return kExitOk;
}

int cmd_train(const CommonOpts& common, const std::string& out, const std::string& data) {
  cli::RunConfig cfg = resolve_config(common);
  fs::path data_dir = data.empty() ? fs::path(out) / "data" : fs::path(data);
  if (!fs::exists(data_dir / "manifest.json")) {
    if (!data.empty()) throw IoError("no dataset at " + data_dir.string());
    synthworld::make_datasets(cfg.world, data_dir);
    std::cout << "generated dataset at " << data_dir.string() << '\n';
  }
  auto reader = synthworld::DatasetReader::open(data_dir);
  check_world_matches(reader.world(), cfg.world);

  model::Model<float> m(cfg.model, cfg.seed);
  trainer::Trainer t(m, reader, cfg.train);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  std::ofstream log(fs::path(out) / "train_log.ndjson", std::ios::trunc);
  if (!log) throw IoError("cannot open training log in " + out);
  t.run(out, log, &std::cout);
  std::cout << "done: " << cfg.train.total_steps << " steps, final checkpoint in " << out << '\n';
  return kExitOk;
}

struct EvalOpts {
  std::string checkpoint, data, split = "sound", task, head = "total-max", out = "metrics.json";
  bool mixed = false;
};

int cmd_eval(const CommonOpts& common, const EvalOpts& opts) {
  cli::RunConfig cfg = resolve_config(common);
  auto loaded = model::load_checkpoint<float>(opts.checkpoint);
  auto reader = synthworld::DatasetReader::open(opts.data);

  nlohmann::json result;
  if (opts.task == "grounding") {
    result = evalsuite::eval_grounding(loaded.model, reader, synthworld::split_from_name(opts.split),
                                       evalsuite::head_mode_from_name(opts.head), opts.mixed, cfg.seed)
                 .to_json();
  } else if (opts.task == "simul") {
    auto [snd, spc] = evalsuite::eval_simultaneous(loaded.model, reader);
    result = nlohmann::json{{"sound", snd.to_json()}, {"speech", spc.to_json()}};
  } else if (opts.task == "retrieval") {
    result = evalsuite::eval_retrieval(loaded.model, reader, synthworld::split_from_name(opts.split),
                                       evalsuite::head_mode_from_name(opts.head), opts.mixed, cfg.eval.retrieval_k,
                                       cfg.eval.gallery_size, cfg.seed)
                 .to_json();
  } else if (opts.task == "disentangle") {
    result = nlohmann::json{
        {"pred", evalsuite::eval_pred_dis(loaded.model, reader, cfg.eval.disentangle_samples).to_json()},
        {"act", evalsuite::eval_act_dis(loaded.model, reader, cfg.eval.disentangle_samples).to_json()}};
  } else {
    throw ConfigError("unknown task '" + opts.task + "' (expected grounding, simul, retrieval or disentangle)");
  }

  const std::string text = result.dump(2);
  std::cout << text << '\n';
  std::ofstream file(opts.out, std::ios::trunc);
  if (!file) throw IoError("cannot write report to " + opts.out);
  file << text << '\n';
  return kExitOk;
}

int cmd_grad_check() {
  const auto report = objectives::run_loss_gradient_suite();
  std::cout << "grad-check cor:   max rel err " << report.cor << '\n';
  std::cout << "grad-check dis:   max rel err " << report.dis << '\n';
  std::cout << "grad-check total: max rel err " << report.total << '\n';
  if (!report.pass()) {
    std::cout << "grad-check FAILED (tolerance 1e-3)\n";
    return kExitCheckFailure;
  }
  std::cout << "grad-check passed (tolerance 1e-3)\n";
  return kExitOk;
}

int cmd_inspect(const std::string& checkpoint, const std::string& data, const std::string& split_name, int index,
                const std::string& out_dir) {
  auto loaded = model::load_checkpoint<float>(checkpoint);
  auto reader = synthworld::DatasetReader::open(data);
  const auto split = synthworld::split_from_name(split_name);
  if (index < 0 || index >= reader.count(split)) {
    throw ConfigError("sample index " + std::to_string(index) + " out of range for split " + split_name);
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  const auto& w = reader.world();
  const int t_feat = loaded.model.config().aud_t();
  const int time_patch = loaded.model.config().time_patch;
  diffmath::Tape<float> tape;
  auto bound = loaded.model.bind(tape);
  auto audio = bound.encode_audio(reader.audio(split, index));
  auto visual = bound.encode_image(reader.image(split, index));

  const auto& rec = reader.record(split, index);
  for (int head = 0; head < model::kHeads; ++head) {
    std::size_t t0 = 0, t1 = static_cast<std::size_t>(t_feat);
    if (head == model::kSpeechHead && rec.token_begin >= 0) {
      t0 = static_cast<std::size_t>(rec.token_begin / time_patch);
      t1 = std::min<std::size_t>(static_cast<std::size_t>((rec.token_end + time_patch - 1) / time_patch),
                                 static_cast<std::size_t>(t_feat));
      if (t0 >= t1) t1 = t0 + 1;
    }
    auto vol = simvol::head_volume(tape, audio, visual, head);
    auto map = tape.val(simvol::heatmap(tape, vol, t0, t1));
    auto up = simvol::upsample_bilinear(map, static_cast<std::size_t>(w.img_h), static_cast<std::size_t>(w.img_w));
    const fs::path path = fs::path(out_dir) / (std::string(synthworld::split_name(split)) + std::to_string(index) +
                                               (head == model::kSoundHead ? ".sound.pgm" : ".speech.pgm"));
    simvol::write_pgm(path, up);
    std::cout << "wrote " << path.string() << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mix-and-separate audio-visual grounding on a deterministic synthetic world"};
  app.require_subcommand(1);

  CommonOpts gen_common, train_common, eval_common;
  std::string gen_out, train_out, train_data;
  EvalOpts eval_opts;
  std::string inspect_ckpt, inspect_data, inspect_split = "ext", inspect_out = ".";
  int inspect_index = 0;

  auto* gen = app.add_subcommand("gen-data", "generate the three dataset splits");
  add_common(gen, gen_common);
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "warm-up and end-to-end training with checkpoints");
  add_common(train, train_common);
  train->add_option("--out", train_out, "run directory for log and checkpoints")->required();
  train->add_option("--data", train_data, "existing dataset directory (generated under --out when omitted)");

  auto* eval = app.add_subcommand("eval", "run an evaluation protocol on a checkpoint");
  add_common(eval, eval_common);
  eval->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint directory")->required();
  eval->add_option("--data", eval_opts.data, "dataset directory")->required();
  eval->add_option("--task", eval_opts.task, "grounding | simul | retrieval | disentangle")->required();
  eval->add_option("--split", eval_opts.split, "sound | speech | ext");
  eval->add_option("--head", eval_opts.head, "total-max | total-sum | sound | speech");
  eval->add_flag("--mixed", eval_opts.mixed, "add an off-screen distractor of the opposite kind");
  eval->add_option("--out", eval_opts.out, "report file (default metrics.json)");

  auto* grad = app.add_subcommand("grad-check", "finite-difference audit of the training losses");
  (void)grad;

  auto* inspect = app.add_subcommand("inspect", "export per-head heatmaps of one sample as PGM");
  inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint directory")->required();
  inspect->add_option("--data", inspect_data, "dataset directory")->required();
  inspect->add_option("--split", inspect_split, "sound | speech | ext");
  inspect->add_option("--index", inspect_index, "sample index");
  inspect->add_option("--out", inspect_out, "output directory");

  auto* defaults = app.add_subcommand("print-default-config", "print the full default configuration");
  (void)defaults;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_common, gen_out);
    if (train->parsed()) return cmd_train(train_common, train_out, train_data);
    if (eval->parsed()) return cmd_eval(eval_common, eval_opts);
    if (grad->parsed()) return cmd_grad_check();
    if (inspect->parsed()) return cmd_inspect(inspect_ckpt, inspect_data, inspect_split, inspect_index, inspect_out);
    if (defaults->parsed()) {
      cli::RunConfig cfg;
      cfg.propagate_and_validate();
      std::cout << cli::to_json(cfg).dump(2) << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailure;
  }
  return kExitOk;
}
