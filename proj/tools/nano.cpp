// nano: command-line entry point for corpus synthesis, pretraining, oracle
// and interactive sessions, ablations and evaluation.

#include "nano/checkpoint.hpp"
#include "nano/config.hpp"
#include "nano/critic.hpp"
#include "nano/metrics.hpp"
#include "nano/service.hpp"
#include "nano/session.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifndef NANO_VERSION
#define NANO_VERSION "0.0.0-unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nano;

namespace {

enum Exit : int { kOk = 0, kFailed = 1, kUsage = 2, kMissingInput = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string preset = "single_topic";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string lm;  // pretrained checkpoint to reuse instead of pretraining
};

void add_common(CLI::App* app, Common& c, bool with_lm = true) {
  app->add_option("--config", c.config, "JSON experiment file (keys: preset, world, session)");
  app->add_option("--preset", c.preset, "Base experiment: single_topic or distribution");
  app->add_option("--set", c.sets, "Override a config key, e.g. session.generation.k=4 (repeatable)")
      ->allow_extra_args(false);
  app->add_option("--seed", c.seed, "Session seed");
  app->add_option("--out", c.out, "Run directory");
  if (with_lm) app->add_option("--lm", c.lm, "Pretrained LM checkpoint (skips pretraining)");
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingInput("cannot read " + p.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw UsageError(p.string() + " is not a JSON object");
  return j;
}

// Preset, then the config file, then --set, then --seed.
json effective_config(const Common& c) {
  json file = c.config.empty() ? json::object() : read_json_file(c.config);
  const auto preset = file.value("preset", c.preset);
  json j;
  try {
    j = to_json(experiment_preset(preset));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  file.erase("preset");
  j.merge_patch(file);
  j["preset"] = preset;
  try {
    for (const auto& s : c.sets) apply_override(j, s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (c.seed) j["session"]["seed"] = *c.seed;
  return j;
}

Experiment parse_experiment(const json& j) {
  try {
    auto e = experiment_from_json(j);
    e.session.validate();
    e.world.corpus.validate();
    return e;
  } catch (const std::exception& ex) {
    throw UsageError(std::string("bad config: ") + ex.what());
  }
}

fs::path run_dir(const Common& c, const std::string& fallback) {
  fs::path dir = c.out.empty() ? fs::path("runs") / fallback : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) { write_file_atomic(p, text); }

// Effective config, seed and version for every run.
void write_manifest(const fs::path& dir, const std::string& command, const json& config) {
  write_text(dir / "config.json", config.dump(2) + "\n");
  json run = {{"command", command},
              {"version", NANO_VERSION},
              {"seed", config.at("session").at("seed")}};
  write_text(dir / "run.json", run.dump(2) + "\n");
}

World load_world(const WorldSpec& spec, const std::string& lm_path) {
  if (lm_path.empty()) return build_world(spec).world;
  if (!fs::exists(lm_path)) throw MissingInput("no checkpoint at " + lm_path);
  auto corpus = make_synthetic_corpus(spec.corpus);
  auto loaded = load_lm(lm_path);
  if (!(loaded.vocab == corpus.vocab)) throw UsageError(lm_path + " was trained on a different vocabulary");
  return {corpus.vocab, corpus.labeler, std::move(loaded.lm)};
}

void write_report(const fs::path& dir, const EvalReport& r) {
  write_text(dir / "eval_report.json", to_json(r).dump(2) + "\n");
  const auto table = render_table(r);
  write_text(dir / "eval_report.txt", table);
  std::cout << table;
}

int corpus_make(const Common& c) {
  const auto cfg = effective_config(c);
  const auto exp = parse_experiment(cfg);
  const auto dir = run_dir(c, "corpus");
  write_manifest(dir, "corpus make", cfg);
  const auto corpus = make_synthetic_corpus(exp.world.corpus);
  std::string text;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    text += corpus.labeler.name(corpus.topics[i]) + "\t" + corpus.sentences[i] + "\n";
  }
  write_text(dir / "corpus.tsv", text);
  std::string vocab;
  for (std::size_t i = 0; i < corpus.vocab.size(); ++i) vocab += corpus.vocab.token(static_cast<TokenId>(i)) + "\n";
  write_text(dir / "vocab.txt", vocab);
  std::cout << corpus.sentences.size() << " sentences, " << corpus.vocab.size() << " tokens -> " << dir << "\n";
  return kOk;
}

int lm_pretrain(const Common& c) {
  const auto cfg = effective_config(c);
  const auto exp = parse_experiment(cfg);
  const auto dir = run_dir(c, "pretrain");
  write_manifest(dir, "lm pretrain", cfg);
  auto built = build_world(exp.world);
  save_lm(dir / "lm.ckpt", built.world.pretrained, built.world.vocab);
  const auto& p = built.pretraining;
  json j = {{"epoch_loss", p.epoch_loss},
            {"train_perplexity", p.train_perplexity},
            {"heldout_perplexity", p.heldout_perplexity},
            {"converged", p.converged},
            {"hash", lm_hash(built.world.pretrained, built.world.vocab)}};
  write_text(dir / "pretrain.json", j.dump(2) + "\n");
  std::cout << "held-out perplexity " << p.heldout_perplexity << (p.converged ? "" : " (above threshold)") << "\n";
  return kOk;
}

// "oracle" or "oracle:<mode>"; the mode has to match the critic's.
void check_annotator(const std::string& annotator, const SessionConfig& s) {
  if (annotator == "interactive") throw UsageError("interactive sessions run under `session serve`");
  if (annotator.rfind("oracle", 0) != 0) throw UsageError("--annotator must be oracle[:<mode>] or interactive");
  if (annotator.size() > 6) {
    if (annotator[6] != ':') throw UsageError("--annotator must be oracle[:<mode>] or interactive");
    const auto mode = annotator.substr(7);
    if (mode != to_string(s.critic.mode)) {
      throw UsageError("oracle " + mode + " does not match critic mode " + std::string(to_string(s.critic.mode)));
    }
  }
}

int session_run(const Common& c, const std::string& annotator) {
  auto cfg = effective_config(c);
  cfg["session"]["annotator"] = "oracle";
  const auto exp = parse_experiment(cfg);
  check_annotator(annotator, exp.session);
  const auto dir = run_dir(c, "session-" + std::to_string(exp.session.seed));
  write_manifest(dir, "session run", cfg);
  auto world = load_world(exp.world, c.lm);
  Session session(world, exp.session, SessionLog(dir / "session.jsonl"));
  const auto outcome = run_session(session, make_oracle(session.config(), world.labeler));
  save_lm(dir / "generator.ckpt", session.generator(), world.vocab);
  if (session.critic()) save_critic(dir / "critic.ckpt", *session.critic(), world.vocab);
  write_text(dir / "outcome.json", to_json(outcome).dump(2) + "\n");
  write_report(dir, outcome.final_report);
  return kOk;
}

int session_serve(const Common& c, std::optional<int> port, const std::string& host, const std::string& static_dir) {
  Common opts = c;
  if (opts.out.empty()) {
    if (const char* env = std::getenv("NANO_LOOP_DATA_DIR"); env && *env) opts.out = env;
  }
  auto cfg = effective_config(opts);
  cfg["session"]["annotator"] = "interactive";
  const auto exp = parse_experiment(cfg);
  if (!static_dir.empty() && !fs::is_directory(static_dir)) throw MissingInput("no directory at " + static_dir);
  int resolved;
  try {
    resolved = resolve_port(port);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto dir = run_dir(opts, "serve");
  write_manifest(dir, "session serve", cfg);
  auto world = load_world(exp.world, opts.lm);
  AnnotationService service(std::move(world), exp.session, dir);
  std::optional<fs::path> www;
  if (!static_dir.empty()) www = fs::path(static_dir);
  if (!serve(service, host, resolved, www)) {
    std::cerr << "nano: cannot listen on " << host << ":" << resolved << "\n";
    return kFailed;
  }
  return kOk;
}

int ablate(const Common& c, const std::string& preset_name, int budget, int seeds) {
  AblationPreset preset;
  try {
    preset = ablation_preset_from_string(preset_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (budget <= 0 || seeds <= 0) throw UsageError("--budget and --seeds must be positive");
  const auto cfg = effective_config(c);
  const auto exp = parse_experiment(cfg);
  const auto dir = run_dir(c, "ablate-" + preset_name);
  write_manifest(dir, "ablate " + preset_name, cfg);
  const auto world = load_world(exp.world, c.lm);
  json reports = json::array();
  for (int i = 0; i < seeds; ++i) {
    auto base = exp.session;
    base.seed = exp.session.seed + static_cast<std::uint64_t>(i);
    const auto r = run_ablation(world, base, preset, budget);
    reports.push_back(to_json(r));
    std::cout << "seed " << base.seed;
    for (std::size_t a = 0; a < r.arms.size(); ++a) {
      std::cout << "  " << r.arms[a].name << " " << r.arms[a].outcome.final_report.accuracy;
      if (a > 0) std::cout << " (" << (r.delta(a) >= 0 ? "+" : "") << r.delta(a) << ")";
    }
    std::cout << "\n";
  }
  write_text(dir / "ablation.json", json{{"preset", preset_name}, {"budget", budget}, {"runs", reports}}.dump(2) + "\n");
  return kOk;
}

int eval(const Common& c, std::string checkpoint, std::string critic_path, std::size_t n) {
  if (fs::is_directory(checkpoint)) {
    if (critic_path.empty() && fs::exists(fs::path(checkpoint) / "critic.ckpt")) {
      critic_path = (fs::path(checkpoint) / "critic.ckpt").string();
    }
    checkpoint = (fs::path(checkpoint) / "generator.ckpt").string();
  }
  if (!fs::exists(checkpoint)) throw MissingInput("no checkpoint at " + checkpoint);
  if (!critic_path.empty() && !fs::exists(critic_path)) throw MissingInput("no critic checkpoint at " + critic_path);
  if (n == 0) throw UsageError("--n must be positive");
  const auto cfg = effective_config(c);
  const auto exp = parse_experiment(cfg);
  const auto dir = run_dir(c, "eval");
  write_manifest(dir, "eval", cfg);
  const auto world = load_world(exp.world, c.lm);
  auto generator = load_lm(checkpoint);
  if (!(generator.vocab == world.vocab)) throw UsageError(checkpoint + " was trained on a different vocabulary");
  std::optional<Critic> critic;
  if (!critic_path.empty()) critic = load_critic(critic_path);
  const auto report = evaluate_generations(world, generator.lm, critic ? &*critic : nullptr, exp.session,
                                           session_targets(exp.session, world.labeler), n);
  write_report(dir, report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nano: human-in-the-loop controllable generation on a toy world"};
  app.set_version_flag("--version", std::string(NANO_VERSION));
  app.require_subcommand(1);

  Common common;
  std::string annotator = "oracle", host = "127.0.0.1", static_dir, checkpoint, critic_path, ablation;
  std::optional<int> port;
  int budget = 96, seeds = 1;
  std::size_t n = 240;

  auto* corpus = app.add_subcommand("corpus", "Synthetic corpus")->require_subcommand(1);
  auto* corpus_make_cmd = corpus->add_subcommand("make", "Write the seeded corpus and vocabulary");
  add_common(corpus_make_cmd, common, false);

  auto* lm = app.add_subcommand("lm", "Tiny language model")->require_subcommand(1);
  auto* pretrain_cmd = lm->add_subcommand("pretrain", "Pretrain the LM on the corpus");
  add_common(pretrain_cmd, common, false);

  auto* session = app.add_subcommand("session", "Annotation sessions")->require_subcommand(1);
  auto* run_cmd = session->add_subcommand("run", "Oracle-driven outer loop");
  add_common(run_cmd, common);
  run_cmd->add_option("--annotator", annotator, "oracle[:single_topic|:distribution]");
  auto* serve_cmd = session->add_subcommand("serve", "HTTP service for interactive annotation");
  add_common(serve_cmd, common);
  serve_cmd->add_option("--port", port, "Listen port (default: NANO_LOOP_PORT, then 8080)");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--static", static_dir, "Directory served at /");

  auto* ablate_cmd = app.add_subcommand("ablate", "Matched-budget ablation");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("ablation", ablation, "single_vs_multi, frozen_generator, no_critic or no_complementary")
      ->required();
  ablate_cmd->add_option("--budget", budget, "Label budget per arm");
  ablate_cmd->add_option("--seeds", seeds, "Number of consecutive seeds");

  auto* eval_cmd = app.add_subcommand("eval", "Generate and evaluate from a checkpoint");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint, "Generator checkpoint or session run directory")->required();
  eval_cmd->add_option("--critic", critic_path, "Critic checkpoint for guided decoding");
  eval_cmd->add_option("--n", n, "Number of generations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (corpus_make_cmd->parsed()) return corpus_make(common);
    if (pretrain_cmd->parsed()) return lm_pretrain(common);
    if (run_cmd->parsed()) return session_run(common, annotator);
    if (serve_cmd->parsed()) return session_serve(common, port, host, static_dir);
    if (ablate_cmd->parsed()) return ablate(common, ablation, budget, seeds);
    if (eval_cmd->parsed()) return eval(common, checkpoint, critic_path, n);
  } catch (const UsageError& e) {
    std::cerr << "nano: " << e.what() << "\n";
    return kUsage;
  } catch (const MissingInput& e) {
    std::cerr << "nano: " << e.what() << "\n";
    return kMissingInput;
  } catch (const std::exception& e) {
    std::cerr << "nano: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
