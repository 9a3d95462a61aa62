#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "protoconcepts/cli.hpp"
#include "protoconcepts/config.hpp"
#include "protoconcepts/diagnostics.hpp"
#include "protoconcepts/sidecar.hpp"
#include "protoconcepts/training.hpp"

using namespace protoconcepts;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "protoconcepts");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const auto p = fs::temp_directory_path() / "protoconcepts_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

// Small enough to train in a few seconds.
fs::path tiny_config() {
  const auto path = work_dir() / "tiny.cfg";
  if (!fs::exists(path)) {
    std::ofstream(path) << "[model]\nimage_size = 32\nlatent_dim = 4\nprototypes_per_class = 2\n"
                           "[geometry]\nradius_init = 0.3\n"
                           "[losses]\nk = 2\n"
                           "[schedule]\nbatch_size = 4\n"
                           "[schedule.warmup]\nepochs = 1\n"
                           "[schedule.joint]\nepochs = 1\n"
                           "[schedule.finetune]\nepochs = 1\n"
                           "[data]\nroot = data\nsynthetic_classes = 2\nsynthetic_train_per_class = 4\n"
                           "synthetic_test_per_class = 2\n";
  }
  return path;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = Config::parse("[losses]\nk = 5\n# comment\n[geometry]\nkind = cosine\n");
  CHECK(c.get_int("losses.k") == 5);
  CHECK(c.get_string("geometry.kind") == "cosine");
  CHECK(c.get_real("losses.w_clstk") == 0.8);
  CHECK_THROWS_AS(Config::parse("[losses]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[losses]\nk = five\n"), ConfigError);
  auto d = Config::defaults();
  d.apply_override("schedule.warmup.epochs=7");
  CHECK(d.get_int("schedule.warmup.epochs") == 7);
  CHECK_THROWS_AS(d.apply_override("nope.key=1"), ConfigError);
  CHECK_THROWS_WITH_AS(Config::load(work_dir() / "missing.cfg"), doctest::Contains("config not found"), ConfigError);
  // Canonical text parses back to the same values.
  CHECK(Config::parse(d.to_text()).to_text() == d.to_text());
}

TEST_CASE("usage errors exit with status 2") {
  auto r = run({"train", "--config", (work_dir() / "missing.cfg").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("config not found") != std::string::npos);

  r = run({"train", "--config", tiny_config().string(), "--set", "losses.bogus=1"});
  CHECK(r.code == 2);
  CHECK(r.err.find("losses.bogus") != std::string::npos);

  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);
}

TEST_CASE("help lists every config key") {
  const auto r = run({"--help"});
  CHECK(r.code == 0);
  for (const auto& k : config_schema()) {
    CHECK(r.out.find("[" + k.section + "]") != std::string::npos);
    CHECK(r.out.find("    " + k.key + " (") != std::string::npos);
  }
}

TEST_CASE("synth-data refuses a non-synthetic config") {
  const auto r = run({"synth-data", "--config", tiny_config().string(), "--set", "data.synthetic=false"});
  CHECK(r.code == 2);
}

TEST_CASE("end to end through the command line") {
  const auto cfg = tiny_config().string();
  const auto out = (work_dir() / "run").string();

  REQUIRE(run({"synth-data", "--config", cfg}).code == 0);
  CHECK(fs::exists(work_dir() / "data" / "train"));

  auto r = run({"train", "--config", cfg, "--out", out});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(fs::path(out) / "checkpoints" / "joint.ckpt"));
  CHECK_FALSE(fs::exists(fs::path(out) / "checkpoints" / "final.ckpt"));

  // Finetuning an unpruned checkpoint is allowed, with a warning.
  r = run({"finetune", "--config", cfg, "--out", (work_dir() / "unpruned").string(), "--checkpoint",
           (fs::path(out) / "checkpoints" / "joint.ckpt").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);

  REQUIRE(run({"prune", "--config", cfg, "--out", out}).code == 0);
  CHECK(fs::exists(fs::path(out) / "checkpoints" / "pruned.ckpt"));
  REQUIRE(run({"finetune", "--config", cfg, "--out", out}).code == 0);
  CHECK(fs::exists(fs::path(out) / "checkpoints" / "final.ckpt"));

  REQUIRE(run({"eval", "--config", cfg, "--out", out, "--split", "test"}).code == 0);
  const auto eval = Sidecar::read(fs::path(out) / "eval_test.txt");
  CHECK(eval.count("accuracy") == 1);

  REQUIRE(run({"scan-members", "--config", cfg, "--out", out}).code == 0);
  CHECK(fs::exists(fs::path(out) / "report" / "index.html"));
  const auto report_sidecar = read_bytes(fs::path(out) / "report" / "sidecar.txt");
  REQUIRE(run({"scan-members", "--config", cfg, "--out", out}).code == 0);
  CHECK(read_bytes(fs::path(out) / "report" / "sidecar.txt") == report_sidecar);

  REQUIRE(run({"explain", "--config", cfg, "--out", out, "--split", "test", "--limit", "2"}).code == 0);
  int sheets = 0;
  for (const auto& e : fs::directory_iterator(fs::path(out) / "scoresheets")) sheets += e.is_directory();
  CHECK(sheets == 2);

  // Scoresheet totals agree with the model's logits.
  const auto ck = load_checkpoint(fs::path(out) / "checkpoints" / "final.ckpt");
  const auto manifest = load_directory_dataset(work_dir() / "data", 32);
  const auto test = load_split(manifest, Split::Test);
  const auto rep = evaluate(ck.net, test);
  for (const auto& e : fs::directory_iterator(fs::path(out) / "scoresheets")) {
    const auto sc = Sidecar::read(e.path() / "sidecar.txt");
    size_t idx = 0;
    while (test.ids[idx] != sc.at("image")) ++idx;
    for (size_t c = 0; c < rep.logits[idx].size(); ++c)
      CHECK(std::stod(sc.at("total." + std::to_string(c))) == doctest::Approx(rep.logits[idx][c]).epsilon(1e-12).scale(1e-5));
  }
}

TEST_CASE("ablate writes a table") {
  const auto out = (work_dir() / "ablate").string();
  const auto r = run({"ablate", "--config", tiny_config().string(), "--out", out, "--axis", "k", "--values", "1", "2"});
  CHECK(r.code == 0);
  const auto sc = Sidecar::read(fs::path(out) / "ablation.txt");
  CHECK(sc.count("ablate.k.1.accuracy_after_finetune") == 1);
  CHECK(sc.count("ablate.k.2.prototypes") == 1);
  CHECK(fs::exists(fs::path(out) / "ablation_table.txt"));
}
