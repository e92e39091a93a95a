#include <gtest/gtest.h>

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "nano_cli_test";

// Small world and session so each command runs in seconds.
const std::string kSmall =
    " --set world.corpus.sentences=600 --set world.lm.d_model=32 --set world.lm.n_heads=2"
    " --set world.pretrain.train.epochs=6 --set session.iterations=2 --set session.samples_per_iteration=6"
    " --set session.eval_samples=12 --set session.generation.length=10 --set session.generation.k=2"
    " --set session.generator_train.epochs=1 --set session.critic_train.epochs=2";

int run(const std::string& args, const std::string& log = "cli.log") {
  const std::string cmd = std::string(NANO_CLI) + " " + args + " >>" + (kRoot / log).string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    ASSERT_EQ(run("lm pretrain --out " + (kRoot / "lm").string() + kSmall), 0);
  }
  static std::string lm() { return " --lm " + (kRoot / "lm" / "lm.ckpt").string(); }
};

}  // namespace

TEST_F(Cli, PretrainWritesCheckpointAndManifest) {
  const auto dir = kRoot / "lm";
  EXPECT_TRUE(fs::exists(dir / "lm.ckpt"));
  const auto p = json::parse(slurp(dir / "pretrain.json"));
  EXPECT_EQ(p.at("epoch_loss").size(), 6u);
  const auto cfg = json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(cfg.at("world").at("lm").at("d_model"), 32);
  const auto run_json = json::parse(slurp(dir / "run.json"));
  EXPECT_FALSE(run_json.at("version").get<std::string>().empty());
  EXPECT_EQ(run_json.at("command"), "lm pretrain");
}

TEST_F(Cli, CorpusMake) {
  const auto dir = kRoot / "corpus";
  ASSERT_EQ(run("corpus make --out " + dir.string() + kSmall), 0);
  std::ifstream in(dir / "corpus.tsv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) {
    ++lines;
    EXPECT_NE(l.find('\t'), std::string::npos);
  }
  EXPECT_EQ(lines, 600u);
}

TEST_F(Cli, SessionRunIsDeterministicAndResumable) {
  const auto a = kRoot / "run_a", b = kRoot / "run_b";
  ASSERT_EQ(run("session run --annotator oracle:single_topic --seed 5 --out " + a.string() + kSmall + lm()), 0);
  ASSERT_EQ(run("session run --annotator oracle --seed 5 --out " + b.string() + kSmall + lm()), 0);
  for (const char* f : {"eval_report.json", "eval_report.txt", "generator.ckpt", "critic.ckpt", "session.jsonl",
                        "config.json", "run.json", "outcome.json"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  EXPECT_EQ(slurp(a / "eval_report.json"), slurp(b / "eval_report.json"));
  EXPECT_EQ(slurp(a / "generator.ckpt"), slurp(b / "generator.ckpt"));
  EXPECT_EQ(json::parse(slurp(a / "run.json")).at("seed"), 5);

  // Re-running into the same directory replays the log instead of starting over.
  const auto report = slurp(a / "eval_report.json");
  ASSERT_EQ(run("session run --seed 5 --out " + a.string() + kSmall + lm()), 0);
  EXPECT_EQ(slurp(a / "eval_report.json"), report);

  const auto c = kRoot / "run_c";
  ASSERT_EQ(run("session run --seed 6 --out " + c.string() + kSmall + lm()), 0);
  EXPECT_NE(slurp(c / "generator.ckpt"), slurp(a / "generator.ckpt"));
}

TEST_F(Cli, EvalFromRunDirectory) {
  const auto src = kRoot / "run_eval_src";
  ASSERT_EQ(run("session run --seed 2 --out " + src.string() + kSmall + lm()), 0);
  const auto out = kRoot / "eval";
  ASSERT_EQ(run("eval --checkpoint " + src.string() + " --n 12 --seed 2 --out " + out.string() + kSmall + lm()), 0);
  const auto report = json::parse(slurp(out / "eval_report.json"));
  EXPECT_EQ(report.at("samples"), 12);
  // Same models, prompts and seed as the session's final evaluation.
  EXPECT_EQ(report, json::parse(slurp(src / "eval_report.json")));

  const auto dist = kRoot / "eval_dist";
  ASSERT_EQ(run("eval --preset distribution --checkpoint " + (src / "generator.ckpt").string() + " --n 12 --out " +
                dist.string() + kSmall + lm()),
            0);
  const auto table = slurp(dist / "eval_report.txt");
  EXPECT_NE(table.find("desired"), std::string::npos);
  EXPECT_NE(table.find("achieved"), std::string::npos);
  EXPECT_NE(table.find("50.0%"), std::string::npos);
}

TEST_F(Cli, AblateSingleVsMulti) {
  const auto out = kRoot / "ablate";
  ASSERT_EQ(run("ablate single_vs_multi --budget 24 --out " + out.string() + kSmall + lm()), 0);
  const auto r = json::parse(slurp(out / "ablation.json"));
  ASSERT_EQ(r.at("runs").size(), 1u);
  EXPECT_EQ(r.at("runs").at(0).at("arms").size(), 2u);
  EXPECT_EQ(r.at("budget"), 24);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--version"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("session run --config /nonexistent.json"), 3);
  EXPECT_EQ(run("eval --checkpoint /nonexistent.ckpt"), 3);
  EXPECT_EQ(run("session run --set novalue" + lm()), 2);
  EXPECT_EQ(run("session run --preset nonsense" + lm()), 2);
  EXPECT_EQ(run("session run --annotator oracle:distribution" + kSmall + lm()), 2);
  EXPECT_EQ(run("session run --annotator interactive" + kSmall + lm()), 2);
  EXPECT_EQ(run("session run --set session.samples_per_iteration=0" + lm()), 2);
  EXPECT_EQ(run("ablate sideways --budget 24" + lm()), 2);
  EXPECT_EQ(run("session serve --port 0 --static /nonexistent" + lm()), 3);

  // A config file merges over the preset; --set wins over the file.
  const auto cfg = kRoot / "exp.json";
  std::ofstream(cfg) << R"({"preset": "distribution", "session": {"iterations": 4, "seed": 11}})";
  const auto out = kRoot / "cfg_corpus";
  ASSERT_EQ(run("corpus make --config " + cfg.string() + " --set session.iterations=5 --out " + out.string()), 0);
  const auto eff = json::parse(slurp(out / "config.json"));
  EXPECT_EQ(eff.at("preset"), "distribution");
  EXPECT_EQ(eff.at("session").at("iterations"), 5);
  EXPECT_EQ(eff.at("session").at("seed"), 11);
  EXPECT_EQ(eff.at("session").at("critic").at("mode"), "distribution");
}
