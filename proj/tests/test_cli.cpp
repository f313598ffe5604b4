#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string output;
};

std::string cli_path() {
  const char* env = std::getenv("MIXSEP_BIN");
  REQUIRE(env != nullptr);
  return env;
}

RunResult run(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult result;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) result.output += buf.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

fs::path scratch() {
  const auto dir = fs::temp_directory_path() / "mixsep_cli_test";
  fs::create_directories(dir);
  return dir;
}

fs::path write_tiny_config(std::uint64_t seed) {
  nlohmann::json cfg{{"config_version", 1},
                     {"seed", seed},
                     {"world", {{"split_sound", 6}, {"split_speech", 6}, {"split_ext", 2}}},
                     {"train",
                      {{"batch_size", 2},
                       {"warmup_steps", 1},
                       {"total_steps", 3},
                       {"checkpoint_interval", 3},
                       {"nonneg_samples", 4}}},
                     {"eval", {{"gallery_size", 6}, {"retrieval_k", 2}, {"disentangle_samples", 4}}}};
  const auto path = scratch() / ("config_" + std::to_string(seed) + ".json");
  std::ofstream out(path, std::ios::trunc);
  out << cfg.dump(2);
  return path;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("help lists every subcommand") {
  RunResult r = run("--help");
  CHECK(r.exit_code == 0);
  for (const char* sub : {"gen-data", "train", "eval", "inspect", "grad-check", "print-default-config"}) {
    INFO(r.output);
    CHECK(r.output.find(sub) != std::string::npos);
  }
}

TEST_CASE("print-default-config emits parseable JSON with documented defaults") {
  RunResult r = run("print-default-config");
  REQUIRE(r.exit_code == 0);
  auto j = nlohmann::json::parse(r.output);
  CHECK(j.at("config_version") == 1);
  CHECK(j.at("world").at("n_classes") == 8);
  CHECK(j.at("world").at("band_overlap") == 0.5);
  CHECK(j.at("train").at("batch_size") == 8);
  CHECK(j.at("train").at("warmup_steps") == 200);
  CHECK(j.at("train").at("total_steps") == 2000);
  CHECK(j.at("loss_weights").at("cal") == 0.1);
  CHECK(j.at("eval").at("retrieval_k") == 10);
}

TEST_CASE("gen-data is idempotent under a fixed seed") {
  const auto cfg = write_tiny_config(7);
  const auto out1 = scratch() / "data1";
  const auto out2 = scratch() / "data2";
  fs::remove_all(out1);
  fs::remove_all(out2);

  RunResult r1 = run("gen-data --config " + cfg.string() + " --out " + out1.string());
  INFO(r1.output);
  REQUIRE(r1.exit_code == 0);
  CHECK(r1.output.find("sound=6") != std::string::npos);
  RunResult r2 = run("gen-data --config " + cfg.string() + " --out " + out2.string());
  REQUIRE(r2.exit_code == 0);

  for (const auto& entry : fs::recursive_directory_iterator(out1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), out1);
    CHECK(file_bytes(entry.path()) == file_bytes(out2 / rel));
  }
  CHECK(fs::exists(out1 / "sound" / "0.image.t32"));
  CHECK(fs::exists(out1 / "speech" / "5.mask.t32"));
  CHECK(fs::exists(out1 / "ext" / "1.mask_speech.t32"));
}

TEST_CASE("malformed configs exit with code 2 and a diagnostic") {
  const auto bad = scratch() / "bad.json";
  {
    std::ofstream out(bad, std::ios::trunc);
    out << R"({"world": {"n_classes": 8, "mystery_knob": 3}})";
  }
  RunResult r = run("gen-data --config " + bad.string() + " --out " + (scratch() / "never").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("mystery_knob") != std::string::npos);

  const auto invalid = scratch() / "invalid.json";
  {
    std::ofstream out(invalid, std::ios::trunc);
    out << "{not json";
  }
  RunResult r2 = run("gen-data --config " + invalid.string() + " --out " + (scratch() / "never").string());
  CHECK(r2.exit_code == 2);

  RunResult r3 = run("definitely-not-a-subcommand");
  CHECK(r3.exit_code == 2);
}

TEST_CASE("MIXSEP_SEED overrides the config seed") {
  const auto cfg = write_tiny_config(7);
  const auto out_env = scratch() / "data_env";
  const auto out_flag = scratch() / "data_flag";
  fs::remove_all(out_env);
  fs::remove_all(out_flag);

  const std::string cmd = "MIXSEP_SEED=99 " + cli_path() + " gen-data --config " + cfg.string() + " --out " +
                          out_env.string() + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string output;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) output += buf.data();
  REQUIRE(WEXITSTATUS(pclose(pipe)) == 0);
  CHECK(output.find("seed=99") != std::string::npos);

  RunResult flag = run("gen-data --config " + cfg.string() + " --seed 99 --out " + out_flag.string());
  REQUIRE(flag.exit_code == 0);
  CHECK(file_bytes(out_env / "manifest.json") == file_bytes(out_flag / "manifest.json"));
  CHECK(file_bytes(out_env / "sound" / "3.audio.t32") == file_bytes(out_flag / "sound" / "3.audio.t32"));
}

TEST_CASE("train, eval, inspect and grad-check round trip") {
  const auto cfg = write_tiny_config(13);
  const auto data = scratch() / "data_train";
  const auto run_a = scratch() / "run_a";
  const auto run_b = scratch() / "run_b";
  fs::remove_all(data);
  fs::remove_all(run_a);
  fs::remove_all(run_b);

  REQUIRE(run("gen-data --config " + cfg.string() + " --out " + data.string()).exit_code == 0);

  RunResult t1 = run("train --config " + cfg.string() + " --data " + data.string() + " --out " + run_a.string());
  INFO(t1.output);
  REQUIRE(t1.exit_code == 0);
  CHECK(fs::exists(run_a / "train_log.ndjson"));
  CHECK(fs::exists(run_a / "ckpt_000003" / "params.json"));

  // identical rerun: bitwise identical log and checkpoints
  RunResult t2 = run("train --config " + cfg.string() + " --data " + data.string() + " --out " + run_b.string());
  REQUIRE(t2.exit_code == 0);
  CHECK(file_bytes(run_a / "train_log.ndjson") == file_bytes(run_b / "train_log.ndjson"));
  for (const auto& entry : fs::directory_iterator(run_a / "ckpt_000003")) {
    const auto rel = entry.path().filename();
    CHECK(file_bytes(entry.path()) == file_bytes(run_b / "ckpt_000003" / rel));
  }

  // eval writes a report to stdout and to a file
  const auto report_path = scratch() / "metrics.json";
  RunResult ev = run("eval --checkpoint " + (run_a / "ckpt_000003").string() + " --data " + data.string() +
                     " --task retrieval --split sound --head sound --config " + cfg.string() + " --out " +
                     report_path.string());
  INFO(ev.output);
  REQUIRE(ev.exit_code == 0);
  auto report = nlohmann::json::parse(file_bytes(report_path));
  CHECK(report.at("task") == "retrieval");
  CHECK(report.at("k") == 2);
  CHECK(report.at("sample_count") == 6);
  auto echoed = nlohmann::json::parse(ev.output);
  CHECK(echoed == report);

  // simul task emits one report per audio type
  RunResult sim = run("eval --checkpoint " + (run_a / "ckpt_000003").string() + " --data " + data.string() +
                      " --task simul --config " + cfg.string() + " --out " + (scratch() / "simul.json").string());
  REQUIRE(sim.exit_code == 0);
  auto simj = nlohmann::json::parse(sim.output);
  CHECK(simj.contains("sound"));
  CHECK(simj.contains("speech"));

  // eval on a missing checkpoint is an I/O error
  RunResult missing = run("eval --checkpoint " + (scratch() / "nope").string() + " --data " + data.string() +
                          " --task retrieval --out " + (scratch() / "ignored.json").string());
  CHECK(missing.exit_code == 3);

  // inspect writes exactly two heatmaps, one per head
  const auto maps = scratch() / "maps";
  fs::remove_all(maps);
  RunResult ins = run("inspect --checkpoint " + (run_a / "ckpt_000003").string() + " --data " + data.string() +
                      " --split ext --index 1 --out " + maps.string());
  INFO(ins.output);
  REQUIRE(ins.exit_code == 0);
  int pgm_count = 0;
  for (const auto& entry : fs::directory_iterator(maps)) pgm_count += entry.path().extension() == ".pgm";
  CHECK(pgm_count == 2);
  CHECK(fs::exists(maps / "ext1.sound.pgm"));
  CHECK(fs::exists(maps / "ext1.speech.pgm"));

  RunResult gc = run("grad-check");
  INFO(gc.output);
  CHECK(gc.exit_code == 0);
  CHECK(gc.output.find("passed") != std::string::npos);
}
