#pragma once

// The outer loop: generate a batch, collect ratings (oracle or human), retrain
// the critic and then the generator from the pretrained checkpoint on the
// cumulative dataset, repeat.
//
// Every mutation is appended to the SessionLog before it takes effect, and a
// Session rebuilt from a log ends up in the same state (models included,
// since training is a deterministic function of dataset and seed).

#include "nano/config.hpp"
#include "nano/corpus.hpp"
#include "nano/critic.hpp"
#include "nano/decoder.hpp"
#include "nano/metrics.hpp"
#include "nano/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <optional>

namespace nano {

// splitmix64 over (base, FNV-1a(purpose), index).
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0);

// Everything fixed before a session starts: vocabulary, labeler and the
// pretrained LM (embedding frozen).
struct World {
  Vocab vocab;
  Labeler labeler;
  LMParams pretrained;
};

struct WorldSpec {
  CorpusSpec corpus = CorpusSpec::two_topic(0.5);
  LMConfig lm;  // vocab_size is filled from the corpus
  PretrainConfig pretrain = PretrainConfig::defaults();

  // Small model used by the experiment presets (2 layers, d_model 64).
  static WorldSpec toy(double first_share);
};

nlohmann::json to_json(const WorldSpec& w);
WorldSpec world_spec_from_json(const nlohmann::json& j);

struct BuiltWorld {
  World world;
  SyntheticCorpus corpus;
  PretrainResult pretraining;
};
BuiltWorld build_world(const WorldSpec& spec);

struct SessionConfig {
  std::vector<std::string> prompts{"the"};
  CriticSpec critic = CriticSpec::make(CriticMode::single_topic);
  int iterations = 3;
  int samples_per_iteration = 32;
  std::string annotator = "oracle";  // or "interactive"
  std::string target_attribute = "space";  // single_topic target
  std::vector<double> target_mixture;      // distribution target, one share per attribute
  GenerationConfig generation;
  TrainConfig generator_train = TrainConfig::generator_defaults();
  TrainConfig critic_train = TrainConfig::critic_defaults();
  std::uint64_t seed = 0;
  // Stop once a labeled batch reaches this accuracy (before training on it).
  std::optional<double> stop_accuracy;
  std::size_t eval_samples = 240;
  // Ablation switches.
  bool train_generator = true;
  bool use_critic = true;
  bool complementary = true;
  // Negative positions with p(x_i) >= 1 - this are left out of the generator loss.
  double degenerate_mass = kDegenerateMass;

  void validate() const;
};

nlohmann::json to_json(const SessionConfig& c);
SessionConfig session_config_from_json(const nlohmann::json& j, SessionConfig base = {});

// Scripted rater. single_topic rates by the target pool's share of the pool
// words in a sequence; distribution rates each labeled sequence by how far its
// attribute is below (high) or above (low) the target share within the batch.
class OracleAnnotator {
 public:
  enum class Kind { single_topic, distribution };

  static OracleAnnotator single_topic(const Labeler& labeler, std::size_t target, int nu = 3);
  static OracleAnnotator distribution(const Labeler& labeler, std::vector<double> target, int nu = 3);

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  EvalTargets targets() const;

  int rate(const Sequence& seq) const;  // single_topic only
  std::vector<int> rate_batch(std::span<const Sequence> batch) const;

 private:
  Kind kind_ = Kind::single_topic;
  std::string name_;
  Labeler labeler_;
  std::size_t target_ = 0;
  std::vector<double> mixture_;
  int nu_ = 3;
};

// Targets implied by the critic mode: the target attribute or the mixture.
EvalTargets session_targets(const SessionConfig& cfg, const Labeler& labeler);
OracleAnnotator make_oracle(const SessionConfig& cfg, const Labeler& labeler);

inline constexpr int kLogSchemaVersion = 1;

// Append-only JSONL event log. Each line holds schema, seq, type, iteration,
// time plus event fields. With a path, every append is flushed before it
// returns.
class SessionLog {
 public:
  SessionLog() = default;
  // Loads existing events (if the file exists) and appends after them.
  explicit SessionLog(const std::filesystem::path& path);

  const nlohmann::json& append(std::string_view type, int iteration, nlohmann::json fields = nlohmann::json::object());
  const std::vector<nlohmann::json>& events() const { return events_; }
  const std::optional<std::filesystem::path>& path() const { return path_; }

  static std::vector<nlohmann::json> read(const std::filesystem::path& path);

 private:
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
  std::vector<nlohmann::json> events_;
};

// Session errors, mapped one-to-one onto HTTP statuses by the service.
class SessionError : public std::runtime_error {
 public:
  enum class Code { not_found, conflict, cap_exceeded, wrong_phase };
  SessionError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

enum class SampleStatus { pending, rated, skipped };
std::string_view to_string(SampleStatus s);

struct SampleRecord {
  int id = 0;
  Sequence seq;
  int iteration = 0;
  Origin origin = Origin::generated;
  SampleStatus status = SampleStatus::pending;
  std::optional<int> rating;
  bool controlled = false;
  bool fallback = false;  // decoder returned an all-gated candidate
};

struct TrainingRecord {
  int iteration = 0;
  std::size_t dataset_size = 0;
  std::string generator_hash;
  std::string critic_hash;  // empty without a critic
  std::vector<double> generator_loss;
  std::vector<double> critic_loss;
  double generator_ms = 0.0;
  double critic_ms = 0.0;
};

enum class Phase { idle, generating, awaiting_feedback, training, done };
std::string_view to_string(Phase p);

// Result of the expensive half of a step, computed without touching session
// state so a caller can run it off-lock and commit afterwards.
struct BatchDraft {
  int iteration = 0;
  std::vector<GenerationResult> generations;
};

struct TrainingDraft {
  int iteration = 0;
  std::size_t dataset_size = 0;
  std::optional<GeneratorTrainResult> generator;
  std::optional<CriticTrainResult> critic;
};

struct IterationSummary {
  int iteration = 0;
  EvalReport batch;
  bool trained = false;
  bool stopped = false;  // stop rule fired; no training this iteration
};

class Session {
 public:
  // An empty log starts a new session; a non-empty one is replayed (the
  // config stored in the log wins over `cfg`).
  Session(World world, SessionConfig cfg, SessionLog log = {});

  const SessionConfig& config() const { return cfg_; }
  const World& world() const { return world_; }
  const SessionLog& log() const { return log_; }
  int iteration() const { return iteration_; }
  Phase phase() const;
  bool finished() const { return finished_; }

  const std::vector<SampleRecord>& samples() const { return samples_; }
  const SampleRecord& sample(int id) const;
  std::vector<RatedSample> dataset() const;
  int manual_count() const { return manual_count_; }
  bool batch_open() const { return batch_open_; }
  bool all_resolved() const;
  std::size_t pending_count() const;

  const LMParams& generator() const { return generator_; }
  const Critic* critic() const { return critic_ ? &*critic_ : nullptr; }
  std::string generator_hash() const;
  std::string critic_hash() const;
  const std::vector<TrainingRecord>& trainings() const { return trainings_; }
  const std::optional<EvalReport>& latest_metrics() const { return latest_metrics_; }

  // One generation from the current models (plain sampling without critic).
  GenerationResult generate(const Sequence& prompt, Rng& rng) const;

  BatchDraft draft_batch() const;
  std::vector<int> commit_batch(BatchDraft draft);
  std::vector<int> generate_batch() { return commit_batch(draft_batch()); }

  void rate(int id, int rating);  // same rating again is a no-op
  void skip(int id);
  int add_manual(std::string_view text, int rating);

  // Labeled-batch report for the open iteration (generated samples only).
  EvalReport batch_report() const;
  // Ends the session without training on the open batch.
  void stop(const std::string& reason);

  TrainingDraft draft_training() const;
  void commit_training(TrainingDraft draft);
  void train() { commit_training(draft_training()); }

  // Oracle-driven iteration: generate, rate, stop check, train.
  IterationSummary run_iteration(const OracleAnnotator& oracle);

  // Fresh generations from the current models, evaluated against `targets`
  // with the pretrained LM as perplexity judge; logged as a final snapshot.
  EvalReport evaluate_final(const EvalTargets& targets, std::size_t n, bool log_it = true);
  void record_final(const EvalReport& report);

 private:
  void start();
  void replay(const std::vector<nlohmann::json>& events);
  void apply_training(const TrainingDraft& draft);
  TrainingRecord record_of(const TrainingDraft& draft) const;
  // Trains on the rated samples of iterations 1..iteration.
  TrainingDraft draft_training_for(int iteration) const;
  std::vector<RatedSample> dataset_upto(int iteration) const;
  Sequence prompt_for(std::size_t index) const;
  SampleRecord& find(int id);

  World world_;
  SessionConfig cfg_;
  SessionLog log_;
  Matrix embedding_snapshot_;

  int iteration_ = 1;
  bool batch_open_ = false;
  bool finished_ = false;
  int next_id_ = 1;
  int manual_count_ = 0;
  std::vector<SampleRecord> samples_;
  std::vector<TrainingRecord> trainings_;
  std::optional<EvalReport> latest_metrics_;

  LMParams generator_;
  std::optional<Critic> critic_;
};

struct SessionOutcome {
  std::vector<IterationSummary> iterations;
  EvalReport final_report;
  std::string generator_hash;
  std::string critic_hash;
  std::size_t labels = 0;
};

// n generations (critic-guided when `critic` is set) from the session's
// prompts and decoding config, seeded from cfg.seed.
std::vector<GenerationResult> generate_eval_set(const World& world, const LMParams& generator, const Critic* critic,
                                               const SessionConfig& cfg, std::size_t n);
// The same generations scored against `targets`, judged by world.pretrained.
EvalReport evaluate_generations(const World& world, const LMParams& generator, const Critic* critic,
                                const SessionConfig& cfg, const EvalTargets& targets, std::size_t n);

// Full oracle-driven loop followed by the final evaluation.
SessionOutcome run_session(Session& session, const OracleAnnotator& oracle);

enum class AblationPreset { single_vs_multi, frozen_generator, no_critic, no_complementary };
std::string_view to_string(AblationPreset p);
AblationPreset ablation_preset_from_string(std::string_view s);

struct AblationArm {
  std::string name;
  SessionConfig config;
  SessionOutcome outcome;
};

struct AblationReport {
  AblationPreset preset;
  std::vector<AblationArm> arms;  // arms[0] is the reference (full pipeline / multi-iteration)

  // accuracy(arm) - accuracy(arms[0]).
  double delta(std::size_t arm) const;
};

// Arms share seeds and the label budget. For single_vs_multi the budget is
// split into base.iterations rounds against one round of the whole budget;
// the others run base.iterations rounds of budget / iterations labels.
AblationReport run_ablation(const World& world, SessionConfig base, AblationPreset preset, int budget);

// A world plus the session run on it; what config files describe.
struct Experiment {
  WorldSpec world;
  SessionConfig session;
};

// "single_topic": 20/80 space/sports world, steer toward space.
// "distribution": 10/90 world, 50/50 target mixture.
Experiment experiment_preset(std::string_view name);
nlohmann::json to_json(const Experiment& e);
// Keys: "world", "session". Absent keys take the library defaults.
Experiment experiment_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SessionOutcome& o);
nlohmann::json to_json(const AblationReport& r);

}  // namespace nano
