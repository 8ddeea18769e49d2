#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string output;
};

// Runs the CLI with stdout and stderr captured.
Run demux_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.txt";
  const std::string cmd = std::string(DEMUX_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  Run r{WIFEXITED(status) ? WEXITSTATUS(status) : -1,
        {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}};
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Workspace {
  fs::path dir;
  Workspace() : dir(fs::temp_directory_path() / "demux_cli_test") {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "synth.json") << R"({"num_sequences": 20, "frames": 30, "feature_dim": 4,
        "pool": {"num_speakers": 6}, "split": {"train": 0.6, "dev": 0.2, "test": 0.2}})";
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("cli: synth, score, dump-config") {
  Workspace ws;
  auto r = demux_cli("synth --config " + ws.path("synth.json") + " --seed 4 --out " + ws.path("c"), ws.dir);
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(fs::exists(ws.dir / "c" / "train" / "manifest.txt"));

  const std::string ref = ws.path("c/test/labels.rttm");
  r = demux_cli("score --ref " + ref + " --hyp " + ref + " --out " + ws.path("score.json"), ws.dir);
  CHECK(r.code == 0);
  CHECK(r.output.find("DER 0.00%") != std::string::npos);
  CHECK(fs::exists(ws.dir / "score.json"));

  r = demux_cli("synth --config " + ws.path("synth.json") + " --seed 4 --out " + ws.path("d") + " --dump-config " +
                    ws.path("dumped.json"),
                ws.dir);
  REQUIRE(r.code == 0);
  CHECK_FALSE(fs::exists(ws.dir / "d"));
  r = demux_cli("synth --config " + ws.path("dumped.json"), ws.dir);
  REQUIRE_MESSAGE(r.code == 0, r.output);
  for (const char* part : {"train", "dev", "test"}) {
    CAPTURE(part);
    CHECK(slurp(ws.dir / "c" / part / "manifest.txt") == slurp(ws.dir / "d" / part / "manifest.txt"));
  }
}

TEST_CASE("cli: exit codes") {
  Workspace ws;
  REQUIRE(demux_cli("synth --config " + ws.path("synth.json") + " --out " + ws.path("c"), ws.dir).code == 0);

  CHECK(demux_cli("--help", ws.dir).code == 0);
  CHECK(demux_cli("no-such-command", ws.dir).code == 1);
  CHECK(demux_cli("score --ref /nonexistent.rttm --hyp /nonexistent.rttm", ws.dir).code == 1);
  std::ofstream(ws.dir / "broken.json") << "{ not json";
  CHECK(demux_cli("train --config " + ws.path("broken.json"), ws.dir).code == 1);

  // default model expects F=16, the corpus has F=4
  std::ofstream(ws.dir / "nodis.json") << R"({"weights": {"dis": 0}})";
  auto r = demux_cli("train --config " + ws.path("nodis.json") + " --train " + ws.path("c/train") +
                         " --max-steps 1 --out " + ws.path("run"),
                     ws.dir);
  CHECK(r.code == 2);
  CHECK(r.output.find("F=4") != std::string::npos);
  CHECK(r.output.find("F=16") != std::string::npos);

  std::ofstream(ws.dir / "bad.rttm") << "SPEAKER r 1 0.0\n";
  CHECK(demux_cli("score --ref " + ws.path("bad.rttm") + " --hyp " + ws.path("bad.rttm"), ws.dir).code == 2);

  // a NaN in the features makes the loss non-finite
  fs::path features;
  for (const auto& e : fs::directory_iterator(ws.dir / "c" / "train"))
    if (e.path().string().ends_with(".features.f64")) features = e.path();
  REQUIRE_FALSE(features.empty());
  {
    std::fstream f(features, std::ios::in | std::ios::out | std::ios::binary);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    f.write(reinterpret_cast<const char*>(&nan), sizeof nan);
  }
  std::ofstream(ws.dir / "small.json") << R"({"model": {"feature_dim": 4, "embed_dim": 8, "ffn_dim": 16},
      "weights": {"dis": 0}, "batch_size": 16})";
  r = demux_cli("train --config " + ws.path("small.json") + " --train " + ws.path("c/train") +
                    " --max-steps 1 --out " + ws.path("run"),
                ws.dir);
  CHECK_MESSAGE(r.code == 3, r.output);
}

TEST_CASE("cli: gradcheck") {
  Workspace ws;
  auto r = demux_cli("gradcheck loss_ort --seed 2", ws.dir);
  CHECK_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("PASS") != std::string::npos);
  CHECK(demux_cli("gradcheck bogus", ws.dir).code == 1);
}
