#include "nano/session.hpp"

#include "nano/log.hpp"

#include <chrono>
#include <ctime>

namespace nano {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

nlohmann::json sequence_json(const Sequence& s) { return {{"ids", s.ids}, {"prompt_len", s.prompt_len}}; }

Sequence sequence_from(const nlohmann::json& j) {
  return {j.at("ids").get<std::vector<TokenId>>(), j.at("prompt_len").get<std::size_t>()};
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return splitmix64(splitmix64(base ^ h) + index);
}

WorldSpec WorldSpec::toy(double first_share) {
  WorldSpec w;
  w.corpus = CorpusSpec::two_topic(first_share);
  w.lm.d_model = 64;
  w.lm.n_layers = 2;
  w.lm.n_heads = 4;
  w.lm.context = 16;
  return w;
}

nlohmann::json to_json(const WorldSpec& w) {
  nlohmann::json lm = to_json(w.lm);
  lm.erase("vocab_size");
  return {{"corpus", to_json(w.corpus)}, {"lm", lm}, {"pretrain", to_json(w.pretrain)}};
}

WorldSpec world_spec_from_json(const nlohmann::json& j) {
  WorldSpec w;
  if (j.contains("corpus")) w.corpus = corpus_spec_from_json(j.at("corpus"));
  if (j.contains("lm")) {
    const auto& l = j.at("lm");
    w.lm.d_model = l.value("d_model", w.lm.d_model);
    w.lm.n_layers = l.value("n_layers", w.lm.n_layers);
    w.lm.n_heads = l.value("n_heads", w.lm.n_heads);
    w.lm.context = l.value("context", w.lm.context);
  }
  if (j.contains("pretrain")) w.pretrain = pretrain_config_from_json(j.at("pretrain"), w.pretrain);
  return w;
}

BuiltWorld build_world(const WorldSpec& spec) {
  auto corpus = make_synthetic_corpus(spec.corpus);
  LMConfig lm = spec.lm;
  lm.vocab_size = static_cast<int>(corpus.vocab.size());
  auto result = pretrain(corpus.sequences(), lm, spec.pretrain);
  if (!result.converged) {
    warn("pretrain: held-out perplexity " + std::to_string(result.heldout_perplexity) + " above threshold");
  }
  World world{corpus.vocab, corpus.labeler, result.lm};
  return {std::move(world), std::move(corpus), std::move(result)};
}

// ---------------------------------------------------------------------------

OracleAnnotator OracleAnnotator::single_topic(const Labeler& labeler, std::size_t target, int nu) {
  if (target >= labeler.attributes()) throw std::out_of_range("oracle: target attribute out of range");
  OracleAnnotator o;
  o.kind_ = Kind::single_topic;
  o.name_ = "oracle:" + labeler.name(target);
  o.labeler_ = labeler;
  o.target_ = target;
  o.nu_ = nu;
  return o;
}

OracleAnnotator OracleAnnotator::distribution(const Labeler& labeler, std::vector<double> target, int nu) {
  if (target.size() != labeler.attributes()) throw std::invalid_argument("oracle: mixture size mismatch");
  double total = 0.0;
  for (double t : target) {
    if (t < 0.0) throw std::invalid_argument("oracle: negative mixture share");
    total += t;
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("oracle: mixture must sum to 1");
  OracleAnnotator o;
  o.kind_ = Kind::distribution;
  o.name_ = "oracle:mixture";
  o.labeler_ = labeler;
  o.mixture_ = std::move(target);
  o.nu_ = nu;
  return o;
}

EvalTargets OracleAnnotator::targets() const {
  return kind_ == Kind::single_topic ? EvalTargets::single(target_) : EvalTargets::distribution(mixture_);
}

int OracleAnnotator::rate(const Sequence& seq) const {
  if (kind_ != Kind::single_topic) throw std::logic_error("oracle: distribution ratings need the whole batch");
  const auto f = labeler_.fraction(seq.ids, target_);
  if (!f) return nu_ - 1;  // nothing on any topic: mildly off target
  if (*f >= Labeler::kLabelShare) return max_rating(nu_);
  if (*f > 0.5) return nu_ + 1;
  if (*f > 1.0 - Labeler::kLabelShare) return nu_;
  return 1;
}

std::vector<int> OracleAnnotator::rate_batch(std::span<const Sequence> batch) const {
  std::vector<int> out;
  out.reserve(batch.size());
  if (kind_ == Kind::single_topic) {
    for (const auto& s : batch) out.push_back(rate(s));
    return out;
  }
  std::vector<std::optional<std::size_t>> labels;
  std::vector<double> share(labeler_.attributes(), 0.0);
  for (const auto& s : batch) {
    labels.push_back(labeler_.label(s.ids));
    if (labels.back()) share[*labels.back()] += 1.0 / static_cast<double>(batch.size());
  }
  for (const auto& l : labels) {
    if (!l) {
      out.push_back(nu_);
      continue;
    }
    const double gap = mixture_[*l] - share[*l];  // > 0: needs to occur more often
    if (gap > 0.15) {
      out.push_back(max_rating(nu_));
    } else if (gap > 0.05) {
      out.push_back(nu_ + 1);
    } else if (gap >= -0.05) {
      out.push_back(nu_);
    } else if (gap >= -0.15) {
      out.push_back(nu_ - 1);
    } else {
      out.push_back(1);
    }
  }
  return out;
}

EvalTargets session_targets(const SessionConfig& cfg, const Labeler& labeler) {
  if (cfg.critic.mode == CriticMode::distribution) return EvalTargets::distribution(cfg.target_mixture);
  auto a = labeler.attribute_index(cfg.target_attribute);
  if (!a) throw std::invalid_argument("session: unknown target attribute " + cfg.target_attribute);
  return EvalTargets::single(*a);
}

OracleAnnotator make_oracle(const SessionConfig& cfg, const Labeler& labeler) {
  const auto t = session_targets(cfg, labeler);
  return t.attribute ? OracleAnnotator::single_topic(labeler, *t.attribute, cfg.critic.nu)
                     : OracleAnnotator::distribution(labeler, t.mixture, cfg.critic.nu);
}

// ---------------------------------------------------------------------------

void SessionConfig::validate() const {
  if (prompts.empty()) throw std::invalid_argument("session: at least one prompt is required");
  if (iterations < 1) throw std::invalid_argument("session: iterations must be >= 1");
  if (samples_per_iteration < 1) throw std::invalid_argument("session: samples_per_iteration must be >= 1");
  if (annotator != "oracle" && annotator != "interactive") {
    throw std::invalid_argument("session: annotator must be oracle or interactive");
  }
  if (critic.mode == CriticMode::distribution && target_mixture.empty()) {
    throw std::invalid_argument("session: distribution mode needs target_mixture");
  }
  critic.validate();
  generator_train.validate();
  critic_train.validate();
  if (eval_samples < 1) throw std::invalid_argument("session: eval_samples must be >= 1");
}

nlohmann::json to_json(const SessionConfig& c) {
  return {{"prompts", c.prompts},
          {"critic", to_json(c.critic)},
          {"iterations", c.iterations},
          {"samples_per_iteration", c.samples_per_iteration},
          {"annotator", c.annotator},
          {"target_attribute", c.target_attribute},
          {"target_mixture", c.target_mixture},
          {"generation", to_json(c.generation)},
          {"generator_train", to_json(c.generator_train)},
          {"critic_train", to_json(c.critic_train)},
          {"seed", c.seed},
          {"stop_accuracy", c.stop_accuracy ? nlohmann::json(*c.stop_accuracy) : nlohmann::json(nullptr)},
          {"eval_samples", c.eval_samples},
          {"train_generator", c.train_generator},
          {"use_critic", c.use_critic},
          {"complementary", c.complementary},
          {"degenerate_mass", c.degenerate_mass}};
}

SessionConfig session_config_from_json(const nlohmann::json& j, SessionConfig c) {
  c.prompts = j.value("prompts", c.prompts);
  if (j.contains("critic")) {
    const auto& cj = j.at("critic");
    nlohmann::json merged = to_json(c.critic);
    if (cj.contains("mode") && cj.at("mode") != merged.at("mode")) merged.erase("weights");
    if (cj.contains("nu") && cj.at("nu") != merged.at("nu")) merged.erase("weights");
    merged.update(cj);
    c.critic = critic_spec_from_json(merged);
  }
  c.iterations = j.value("iterations", c.iterations);
  c.samples_per_iteration = j.value("samples_per_iteration", c.samples_per_iteration);
  c.annotator = j.value("annotator", c.annotator);
  c.target_attribute = j.value("target_attribute", c.target_attribute);
  c.target_mixture = j.value("target_mixture", c.target_mixture);
  if (j.contains("generation")) c.generation = generation_config_from_json(j.at("generation"), c.generation);
  if (j.contains("generator_train")) c.generator_train = train_config_from_json(j.at("generator_train"), c.generator_train);
  if (j.contains("critic_train")) c.critic_train = train_config_from_json(j.at("critic_train"), c.critic_train);
  c.seed = j.value("seed", c.seed);
  if (j.contains("stop_accuracy")) {
    const auto& s = j.at("stop_accuracy");
    c.stop_accuracy = s.is_null() ? std::nullopt : std::optional<double>(s.get<double>());
  }
  c.eval_samples = j.value("eval_samples", c.eval_samples);
  c.train_generator = j.value("train_generator", c.train_generator);
  c.use_critic = j.value("use_critic", c.use_critic);
  c.complementary = j.value("complementary", c.complementary);
  c.degenerate_mass = j.value("degenerate_mass", c.degenerate_mass);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

SessionLog::SessionLog(const std::filesystem::path& path) : path_(path) {
  if (std::filesystem::exists(path)) events_ = read(path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app | std::ios::binary);
  if (!out_) throw std::runtime_error("session log: cannot open " + path.string());
}

const nlohmann::json& SessionLog::append(std::string_view type, int iteration, nlohmann::json fields) {
  nlohmann::json e = {{"schema", kLogSchemaVersion},
                      {"seq", events_.size()},
                      {"type", std::string(type)},
                      {"iteration", iteration},
                      {"time", utc_now()}};
  for (auto& [k, v] : fields.items()) {
    if (e.contains(k)) throw std::logic_error("session log: field '" + k + "' is reserved");
    e[k] = std::move(v);
  }
  if (path_) {
    out_ << e.dump() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("session log: write failed");
  }
  events_.push_back(std::move(e));
  return events_.back();
}

std::vector<nlohmann::json> SessionLog::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("session log: cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  std::vector<nlohmann::json> events;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto e = nlohmann::json::parse(lines[i], nullptr, false);
    if (e.is_discarded()) {
      // A torn final line is what an interrupted append leaves behind.
      if (i + 1 == lines.size()) {
        warn("session log: ignoring truncated final line");
        break;
      }
      throw std::runtime_error("session log: malformed line " + std::to_string(i + 1));
    }
    if (e.value("schema", 0) != kLogSchemaVersion) {
      throw std::runtime_error("session log: unsupported schema at line " + std::to_string(i + 1));
    }
    if (e.value("seq", std::size_t{0}) != events.size()) {
      throw std::runtime_error("session log: out-of-order event at line " + std::to_string(i + 1));
    }
    events.push_back(std::move(e));
  }
  return events;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SampleStatus s) {
  switch (s) {
    case SampleStatus::pending: return "pending";
    case SampleStatus::rated: return "rated";
    case SampleStatus::skipped: return "skipped";
  }
  return "pending";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::idle: return "idle";
    case Phase::generating: return "generating";
    case Phase::awaiting_feedback: return "awaiting_feedback";
    case Phase::training: return "training";
    case Phase::done: return "done";
  }
  return "idle";
}

Session::Session(World world, SessionConfig cfg, SessionLog log)
    : world_(std::move(world)), cfg_(std::move(cfg)), log_(std::move(log)) {
  if (!world_.pretrained.embedding_frozen()) throw std::invalid_argument("session: pretrained embedding must be frozen");
  embedding_snapshot_ = world_.pretrained.tok_emb->value;
  generator_ = world_.pretrained;
  if (log_.events().empty()) {
    start();
  } else {
    replay(log_.events());
  }
}

void Session::start() {
  cfg_.validate();
  session_targets(cfg_, world_.labeler);
  log_.append("session_started", iteration_,
              {{"config", to_json(cfg_)}, {"pretrained_hash", lm_hash(world_.pretrained, world_.vocab)}});
}

void Session::replay(const std::vector<nlohmann::json>& events) {
  for (const auto& e : events) {
    const auto type = e.at("type").get<std::string>();
    if (type == "session_started") {
      cfg_ = session_config_from_json(e.at("config"));
      if (e.at("pretrained_hash") != lm_hash(world_.pretrained, world_.vocab)) {
        throw std::runtime_error("replay: log was written against a different pretrained model");
      }
    } else if (type == "sample_generated" || type == "manual_sample_added") {
      SampleRecord r;
      r.id = e.at("id").get<int>();
      r.seq = sequence_from(e.at("tokens"));
      r.iteration = e.at("iteration").get<int>();
      if (type == "manual_sample_added") {
        r.origin = Origin::manual;
        r.status = SampleStatus::rated;
        r.rating = e.at("rating").get<int>();
        ++manual_count_;
      } else {
        r.controlled = e.value("controlled", false);
        r.fallback = e.value("fallback", false);
        batch_open_ = true;
      }
      next_id_ = std::max(next_id_, r.id + 1);
      samples_.push_back(std::move(r));
    } else if (type == "rating_recorded") {
      auto& s = find(e.at("id").get<int>());
      s.status = SampleStatus::rated;
      s.rating = e.at("rating").get<int>();
    } else if (type == "sample_skipped") {
      find(e.at("id").get<int>()).status = SampleStatus::skipped;
    } else if (type == "metrics_snapshot") {
      latest_metrics_ = eval_report_from_json(e.at("report"));
    } else if (type == "training_completed") {
      TrainingRecord t;
      t.iteration = e.at("iteration").get<int>();
      t.dataset_size = e.at("dataset_size").get<std::size_t>();
      t.generator_hash = e.at("generator_hash").get<std::string>();
      t.critic_hash = e.at("critic_hash").get<std::string>();
      t.generator_loss = e.at("generator_loss").get<std::vector<double>>();
      t.critic_loss = e.at("critic_loss").get<std::vector<double>>();
      t.generator_ms = e.at("generator_ms").get<double>();
      t.critic_ms = e.at("critic_ms").get<double>();
      trainings_.push_back(std::move(t));
      iteration_ = trainings_.back().iteration + 1;
      batch_open_ = false;
      finished_ = iteration_ > cfg_.iterations;
    } else if (type == "session_stopped") {
      finished_ = true;
      batch_open_ = false;
    }
  }
  if (trainings_.empty()) return;

  // Models are a deterministic function of (dataset, seed): rebuild the last
  // ones and check them against the logged hashes.
  const auto& last = trainings_.back();
  auto draft = draft_training_for(last.iteration);
  const auto rebuilt = record_of(draft);
  if (rebuilt.generator_hash != last.generator_hash || rebuilt.critic_hash != last.critic_hash) {
    throw std::runtime_error("replay: rebuilt checkpoints do not match the logged hashes");
  }
  apply_training(draft);
}

Phase Session::phase() const {
  if (finished_) return Phase::done;
  return batch_open_ ? Phase::awaiting_feedback : Phase::idle;
}

SampleRecord& Session::find(int id) {
  for (auto& s : samples_) {
    if (s.id == id) return s;
  }
  throw SessionError(SessionError::Code::not_found, "no sample with id " + std::to_string(id));
}

const SampleRecord& Session::sample(int id) const { return const_cast<Session*>(this)->find(id); }

std::vector<RatedSample> Session::dataset_upto(int iteration) const {
  std::vector<RatedSample> out;
  for (const auto& s : samples_) {
    if (s.status == SampleStatus::rated && s.iteration <= iteration) {
      out.push_back({s.seq, *s.rating, s.origin, s.iteration});
    }
  }
  return out;
}

std::vector<RatedSample> Session::dataset() const { return dataset_upto(iteration_); }

bool Session::all_resolved() const { return pending_count() == 0; }

std::size_t Session::pending_count() const {
  std::size_t n = 0;
  for (const auto& s : samples_) n += s.status == SampleStatus::pending;
  return n;
}

std::string Session::generator_hash() const { return lm_hash(generator_, world_.vocab); }

std::string Session::critic_hash() const { return critic_ ? nano::critic_hash(*critic_, world_.vocab) : ""; }

Sequence Session::prompt_for(std::size_t index) const {
  return world_.vocab.prompt(cfg_.prompts[index % cfg_.prompts.size()]);
}

GenerationResult Session::generate(const Sequence& prompt, Rng& rng) const {
  return generate_controlled(prompt, generator_, cfg_.use_critic ? critic() : nullptr, cfg_.generation, rng);
}

BatchDraft Session::draft_batch() const {
  if (finished_) throw SessionError(SessionError::Code::wrong_phase, "session is finished");
  if (batch_open_) throw SessionError(SessionError::Code::wrong_phase, "a batch is already open");
  BatchDraft d;
  d.iteration = iteration_;
  const auto base = derive_seed(cfg_.seed, "generate", static_cast<std::uint64_t>(iteration_));
  for (int i = 0; i < cfg_.samples_per_iteration; ++i) {
    Rng rng(derive_seed(base, "sample", static_cast<std::uint64_t>(i)));
    d.generations.push_back(generate(prompt_for(static_cast<std::size_t>(i)), rng));
  }
  return d;
}

std::vector<int> Session::commit_batch(BatchDraft draft) {
  if (finished_ || batch_open_ || draft.iteration != iteration_) {
    throw SessionError(SessionError::Code::wrong_phase, "batch does not belong to the current iteration");
  }
  std::vector<int> ids;
  for (auto& g : draft.generations) {
    SampleRecord r;
    r.id = next_id_++;
    r.seq = std::move(g.seq);
    r.iteration = iteration_;
    r.controlled = g.controlled;
    r.fallback = g.returned_fallback;
    log_.append("sample_generated", iteration_,
                {{"id", r.id},
                 {"tokens", sequence_json(r.seq)},
                 {"text", world_.vocab.decode(r.seq.ids)},
                 {"controlled", r.controlled},
                 {"fallback", r.fallback},
                 {"position_fallbacks", g.position_fallbacks}});
    ids.push_back(r.id);
    samples_.push_back(std::move(r));
  }
  batch_open_ = true;
  return ids;
}

void Session::rate(int id, int rating) {
  check_rating(rating, cfg_.critic.nu);
  auto& s = find(id);
  if (s.status == SampleStatus::rated) {
    if (s.rating == rating) return;
    throw SessionError(SessionError::Code::conflict, "sample " + std::to_string(id) + " is already rated");
  }
  if (s.status == SampleStatus::skipped) {
    throw SessionError(SessionError::Code::conflict, "sample " + std::to_string(id) + " was skipped");
  }
  log_.append("rating_recorded", iteration_, {{"id", id}, {"rating", rating}});
  s.status = SampleStatus::rated;
  s.rating = rating;
}

void Session::skip(int id) {
  auto& s = find(id);
  if (s.status == SampleStatus::skipped) return;
  if (s.status == SampleStatus::rated) {
    throw SessionError(SessionError::Code::conflict, "sample " + std::to_string(id) + " is already rated");
  }
  log_.append("sample_skipped", iteration_, {{"id", id}});
  s.status = SampleStatus::skipped;
}

int Session::add_manual(std::string_view text, int rating) {
  if (finished_) throw SessionError(SessionError::Code::wrong_phase, "session is finished");
  check_rating(rating, cfg_.critic.nu);
  if (manual_count_ >= kMaxManualSamples) {
    throw SessionError(SessionError::Code::cap_exceeded,
                       "at most " + std::to_string(kMaxManualSamples) + " manual samples per session");
  }
  const auto words = split_words(text);
  if (words.empty()) throw std::invalid_argument("text: must contain at least one word");
  const auto prompt_words = split_words(cfg_.prompts.front());
  std::size_t shared = 0;
  if (words.size() > prompt_words.size() && std::equal(prompt_words.begin(), prompt_words.end(), words.begin())) {
    shared = prompt_words.size();
  }
  Sequence seq = world_.vocab.sentence(text, shared);
  if (seq.size() > static_cast<std::size_t>(world_.pretrained.config.context)) {
    throw std::invalid_argument("text: longer than the model context");
  }
  SampleRecord r;
  r.id = next_id_++;
  r.seq = std::move(seq);
  r.iteration = iteration_;
  r.origin = Origin::manual;
  r.status = SampleStatus::rated;
  r.rating = rating;
  log_.append("manual_sample_added", iteration_,
              {{"id", r.id}, {"tokens", sequence_json(r.seq)}, {"text", std::string(text)}, {"rating", rating}});
  ++manual_count_;
  samples_.push_back(std::move(r));
  return samples_.back().id;
}

EvalReport Session::batch_report() const {
  std::vector<Sequence> seqs;
  int fallbacks = 0;
  for (const auto& s : samples_) {
    if (s.iteration == iteration_ && s.origin == Origin::generated) {
      seqs.push_back(s.seq);
      fallbacks += s.fallback;
    }
  }
  if (seqs.empty()) throw SessionError(SessionError::Code::wrong_phase, "no generated samples in this iteration");
  return evaluate(seqs, world_.labeler, session_targets(cfg_, world_.labeler), &world_.pretrained, fallbacks);
}

void Session::stop(const std::string& reason) {
  if (finished_) return;
  if (batch_open_) {
    latest_metrics_ = batch_report();
    log_.append("metrics_snapshot", iteration_, {{"final", false}, {"report", to_json(*latest_metrics_)}});
  }
  log_.append("session_stopped", iteration_, {{"reason", reason}});
  finished_ = true;
  batch_open_ = false;
}

TrainingDraft Session::draft_training_for(int iteration) const {
  auto data = dataset_upto(iteration);
  if (data.empty()) throw SessionError(SessionError::Code::conflict, "no rated samples to train on");
  TrainingDraft d;
  d.iteration = iteration;
  d.dataset_size = data.size();
  const auto it = static_cast<std::uint64_t>(iteration);
  if (cfg_.use_critic) {
    TrainConfig tc = cfg_.critic_train;
    tc.seed = derive_seed(cfg_.seed, "critic", it);
    d.critic = train_critic(data, cfg_.critic, tc, world_.pretrained);
  }
  if (cfg_.train_generator) {
    TrainConfig tc = cfg_.generator_train;
    tc.seed = derive_seed(cfg_.seed, "generator", it);
    d.generator = train_generator(data, tc, world_.pretrained, cfg_.critic.nu, cfg_.complementary, cfg_.degenerate_mass);
  }
  return d;
}

TrainingDraft Session::draft_training() const {
  if (finished_) throw SessionError(SessionError::Code::wrong_phase, "session is finished");
  if (!batch_open_) throw SessionError(SessionError::Code::wrong_phase, "no batch to train on");
  if (!all_resolved()) {
    throw SessionError(SessionError::Code::conflict,
                       std::to_string(pending_count()) + " sample(s) still need a rating or a skip");
  }
  return draft_training_for(iteration_);
}

TrainingRecord Session::record_of(const TrainingDraft& d) const {
  TrainingRecord t;
  t.iteration = d.iteration;
  t.dataset_size = d.dataset_size;
  t.generator_hash = lm_hash(d.generator ? d.generator->lm : world_.pretrained, world_.vocab);
  if (d.critic) {
    t.critic_hash = nano::critic_hash(d.critic->critic, world_.vocab);
    t.critic_loss = d.critic->epoch_loss;
    t.critic_ms = d.critic->duration_ms;
  }
  if (d.generator) {
    t.generator_loss = d.generator->epoch_loss;
    t.generator_ms = d.generator->duration_ms;
  }
  return t;
}

void Session::apply_training(const TrainingDraft& d) {
  generator_ = d.generator ? d.generator->lm : world_.pretrained;
  if (d.critic) {
    critic_ = d.critic->critic;
  } else {
    critic_.reset();
  }
  if (generator_.tok_emb->value != embedding_snapshot_ ||
      (critic_ && critic_->backbone.tok_emb->value != embedding_snapshot_)) {
    throw std::logic_error("session: frozen embedding table changed during training");
  }
}

void Session::commit_training(TrainingDraft draft) {
  if (finished_ || !batch_open_ || draft.iteration != iteration_ || !all_resolved()) {
    throw SessionError(SessionError::Code::wrong_phase, "training does not match the open iteration");
  }
  latest_metrics_ = batch_report();
  log_.append("metrics_snapshot", iteration_, {{"final", false}, {"report", to_json(*latest_metrics_)}});
  const auto t = record_of(draft);
  log_.append("training_completed", iteration_,
              {{"dataset_size", t.dataset_size},
               {"generator_hash", t.generator_hash},
               {"critic_hash", t.critic_hash},
               {"generator_loss", t.generator_loss},
               {"critic_loss", t.critic_loss},
               {"generator_ms", t.generator_ms},
               {"critic_ms", t.critic_ms}});
  apply_training(draft);
  trainings_.push_back(t);
  ++iteration_;
  batch_open_ = false;
  finished_ = iteration_ > cfg_.iterations;
}

IterationSummary Session::run_iteration(const OracleAnnotator& oracle) {
  IterationSummary out;
  out.iteration = iteration_;
  if (!batch_open_) generate_batch();
  std::vector<int> ids;
  std::vector<Sequence> seqs;
  for (const auto& s : samples_) {
    if (s.iteration == iteration_ && s.origin == Origin::generated && s.status == SampleStatus::pending) {
      ids.push_back(s.id);
      seqs.push_back(s.seq);
    }
  }
  const auto ratings = oracle.rate_batch(seqs);
  for (std::size_t i = 0; i < ids.size(); ++i) rate(ids[i], ratings[i]);
  out.batch = batch_report();
  if (cfg_.stop_accuracy && out.batch.accuracy >= *cfg_.stop_accuracy) {
    stop("batch accuracy reached the stop threshold");
    out.stopped = true;
    return out;
  }
  train();
  out.trained = true;
  return out;
}

EvalReport Session::evaluate_final(const EvalTargets& targets, std::size_t n, bool log_it) {
  auto report = evaluate_generations(world_, generator_, cfg_.use_critic ? critic() : nullptr, cfg_, targets, n);
  if (log_it) record_final(report);
  return report;
}

void Session::record_final(const EvalReport& report) {
  log_.append("metrics_snapshot", iteration_, {{"final", true}, {"report", to_json(report)}});
  latest_metrics_ = report;
}

// ---------------------------------------------------------------------------

std::vector<GenerationResult> generate_eval_set(const World& world, const LMParams& generator, const Critic* critic,
                                               const SessionConfig& cfg, std::size_t n) {
  std::vector<GenerationResult> out;
  const auto base = derive_seed(cfg.seed, "eval");
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(base, "sample", i));
    out.push_back(generate_controlled(world.vocab.prompt(cfg.prompts[i % cfg.prompts.size()]), generator, critic,
                                      cfg.generation, rng));
  }
  return out;
}

EvalReport evaluate_generations(const World& world, const LMParams& generator, const Critic* critic,
                                const SessionConfig& cfg, const EvalTargets& targets, std::size_t n) {
  std::vector<Sequence> seqs;
  int fallbacks = 0;
  for (auto& g : generate_eval_set(world, generator, critic, cfg, n)) {
    fallbacks += g.returned_fallback;
    seqs.push_back(std::move(g.seq));
  }
  return evaluate(seqs, world.labeler, targets, &world.pretrained, fallbacks);
}

SessionOutcome run_session(Session& session, const OracleAnnotator& oracle) {
  SessionOutcome out;
  while (!session.finished()) out.iterations.push_back(session.run_iteration(oracle));
  out.final_report = session.evaluate_final(oracle.targets(), session.config().eval_samples);
  out.generator_hash = session.generator_hash();
  out.critic_hash = session.critic_hash();
  out.labels = session.dataset().size();
  return out;
}

std::string_view to_string(AblationPreset p) {
  switch (p) {
    case AblationPreset::single_vs_multi: return "single_vs_multi";
    case AblationPreset::frozen_generator: return "frozen_generator";
    case AblationPreset::no_critic: return "no_critic";
    case AblationPreset::no_complementary: return "no_complementary";
  }
  return "single_vs_multi";
}

AblationPreset ablation_preset_from_string(std::string_view s) {
  for (auto p : {AblationPreset::single_vs_multi, AblationPreset::frozen_generator, AblationPreset::no_critic,
                 AblationPreset::no_complementary}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("unknown ablation preset: " + std::string(s));
}

double AblationReport::delta(std::size_t arm) const {
  return arms.at(arm).outcome.final_report.accuracy - arms.at(0).outcome.final_report.accuracy;
}

AblationReport run_ablation(const World& world, SessionConfig base, AblationPreset preset, int budget) {
  if (budget < base.iterations) throw std::invalid_argument("ablation: budget smaller than the iteration count");
  base.annotator = "oracle";
  base.stop_accuracy.reset();  // matched budgets: every arm labels exactly `budget` samples
  base.samples_per_iteration = budget / base.iterations;

  AblationReport report{preset, {}};
  auto arm = [&](std::string name, SessionConfig cfg) {
    report.arms.push_back({std::move(name), cfg, {}});
  };
  if (preset == AblationPreset::single_vs_multi) {
    arm("multi_iteration", base);
    SessionConfig single = base;
    single.iterations = 1;
    single.samples_per_iteration = budget;
    arm("single_iteration", single);
  } else {
    arm("full", base);
    SessionConfig v = base;
    if (preset == AblationPreset::frozen_generator) v.train_generator = false;
    if (preset == AblationPreset::no_critic) v.use_critic = false;
    if (preset == AblationPreset::no_complementary) v.complementary = false;
    arm(std::string(to_string(preset)), v);
  }
  for (auto& a : report.arms) {
    Session s(world, a.config);
    a.outcome = run_session(s, make_oracle(a.config, world.labeler));
  }
  return report;
}

Experiment experiment_preset(std::string_view name) {
  Experiment e;
  auto& s = e.session;
  s.generation.length = 14;
  s.generation.k = 4;
  s.generator_train.lr = 1.5e-4;
  s.critic_train.lr = 1e-3;
  s.degenerate_mass = 0.05;
  if (name == "single_topic") {
    e.world = WorldSpec::toy(0.2);
    s.target_attribute = "space";
  } else if (name == "distribution") {
    e.world = WorldSpec::toy(0.1);
    s.critic = CriticSpec::make(CriticMode::distribution);
    s.target_mixture = {0.5, 0.5};
    s.iterations = 7;
    s.samples_per_iteration = 40;
    s.stop_accuracy = 0.9;
  } else {
    throw std::invalid_argument("unknown experiment preset: " + std::string(name));
  }
  s.validate();
  return e;
}

nlohmann::json to_json(const Experiment& e) { return {{"world", to_json(e.world)}, {"session", to_json(e.session)}}; }

Experiment experiment_from_json(const nlohmann::json& j) {
  Experiment e;
  if (j.contains("world")) e.world = world_spec_from_json(j.at("world"));
  if (j.contains("session")) e.session = session_config_from_json(j.at("session"));
  return e;
}

nlohmann::json to_json(const SessionOutcome& o) {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& i : o.iterations) {
    its.push_back({{"iteration", i.iteration}, {"batch", to_json(i.batch)}, {"trained", i.trained}, {"stopped", i.stopped}});
  }
  return {{"iterations", its},
          {"final", to_json(o.final_report)},
          {"generator_hash", o.generator_hash},
          {"critic_hash", o.critic_hash},
          {"labels", o.labels}};
}

nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json arms = nlohmann::json::array();
  for (std::size_t i = 0; i < r.arms.size(); ++i) {
    const auto& a = r.arms[i];
    arms.push_back({{"name", a.name},
                    {"accuracy", a.outcome.final_report.accuracy},
                    {"delta", r.delta(i)},
                    {"labels", a.outcome.labels},
                    {"generator_hash", a.outcome.generator_hash},
                    {"outcome", to_json(a.outcome)}});
  }
  return {{"preset", std::string(to_string(r.preset))}, {"arms", arms}};
}

}  // namespace nano
