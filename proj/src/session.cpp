#include "pruneforge/session.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "pruneforge/checkpoint.hpp"
#include "pruneforge/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pruneforge {

// ---- enums -----------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::oPPR: return "oPPR";
    case Method::sPPR: return "sPPR";
    case Method::oPCR: return "oPCR";
    case Method::sPCR: return "sPCR";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  std::string lower;
  for (char ch : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (lower == "oppr") return Method::oPPR;
  if (lower == "sppr") return Method::sPPR;
  if (lower == "opcr") return Method::oPCR;
  if (lower == "spcr") return Method::sPCR;
  throw Error("unknown method '" + name + "' (expected oPPR, sPPR, oPCR or sPCR)");
}

bool is_subjective(Method m) { return m == Method::sPPR || m == Method::sPCR; }
bool is_progressive(Method m) { return m == Method::oPPR || m == Method::sPPR; }

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::idle: return "idle";
    case SessionStatus::scoring: return "scoring";
    case SessionStatus::projecting: return "projecting";
    case SessionStatus::awaiting_decisions: return "awaiting_decisions";
    case SessionStatus::retraining: return "retraining";
    case SessionStatus::finalizing: return "finalizing";
    case SessionStatus::done: return "done";
    case SessionStatus::failed: return "failed";
  }
  return "unknown";
}

SessionStatus status_from_string(const std::string& name) {
  for (auto s : {SessionStatus::idle, SessionStatus::scoring, SessionStatus::projecting,
                 SessionStatus::awaiting_decisions, SessionStatus::retraining, SessionStatus::finalizing,
                 SessionStatus::done, SessionStatus::failed}) {
    if (to_string(s) == name) return s;
  }
  throw Error("unknown session status '" + name + "'");
}

std::string to_string(JobKind k) { return k == JobKind::commit ? "commit" : "finalize"; }

std::string to_string(JobOutcome o) {
  switch (o) {
    case JobOutcome::running: return "running";
    case JobOutcome::succeeded: return "succeeded";
    case JobOutcome::failed: return "failed";
    case JobOutcome::interrupted: return "interrupted";
  }
  return "unknown";
}

namespace {

JobOutcome outcome_from_string(const std::string& name) {
  for (auto o : {JobOutcome::running, JobOutcome::succeeded, JobOutcome::failed, JobOutcome::interrupted}) {
    if (to_string(o) == name) return o;
  }
  throw Error("unknown job outcome '" + name + "'");
}

// Seed tags for the per-session random streams.
constexpr std::uint64_t kTagBaseline = 0x42;
constexpr std::uint64_t kTagProjection = 0x5052;
constexpr std::uint64_t kTagWeights = 0x5757;
constexpr std::uint64_t kTagComplete = 0x4352;

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 64 || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

RetrainConfig retrain_from_partial(const json& j) {
  RetrainConfig c;
  c.progressive_epochs = j.value("progressive_epochs", c.progressive_epochs);
  c.final_epochs = j.value("final_epochs", c.final_epochs);
  c.final_learning_rate = j.value("final_learning_rate", c.final_learning_rate);
  c.complete_learning_rate = j.value("complete_learning_rate", c.complete_learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("per_layer_learning_rates")) {
    for (const auto& [key, value] : j.at("per_layer_learning_rates").items()) {
      c.per_layer_learning_rates[std::stoul(key)] = value.get<double>();
    }
  }
  return c;
}

std::string read_text(const fs::path& path) { return io::read_file(path); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

std::optional<std::string> read_if_exists(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  return read_text(path);
}

}  // namespace

// ---- JSON ------------------------------------------------------------------

void SessionConfig::validate() const {
  if (dataset.empty()) throw Error("session config: dataset reference is required");
  if (split.count < 1) throw Error("session config: split count must be at least 1");
  if (split.index >= split.count) throw Error("session config: split index out of range");
  if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
    throw Error("session config: train_fraction must lie in (0,1)");
  }
  if (!id.empty() && !valid_id(id)) throw Error("session config: invalid session id '" + id + "'");
  if (!(progressive_base_rate > 0.0)) throw Error("session config: progressive_base_rate must be positive");
  if (!(tsne.perplexity > 0.0) || tsne.iterations == 0) throw Error("session config: invalid t-SNE settings");
  if (model.checkpoint.empty() && model.preset.empty()) {
    throw Error("session config: a model checkpoint or preset is required");
  }
  if (!is_subjective(method) && policy.mode == SelectionPolicy::Mode::fixed_fraction &&
      !(policy.fraction > 0.0 && policy.fraction < 1.0)) {
    throw Error("session config: fixed fraction must lie in (0,1)");
  }
  if (model.checkpoint.empty() && model.epochs > 0 && !(model.learning_rate > 0.0)) {
    throw Error("session config: baseline learning rate must be positive");
  }
  RetrainConfig probe = retrain;
  if (probe.per_layer_learning_rates.empty()) probe.per_layer_learning_rates[1] = progressive_base_rate;
  probe.validate();
}

void to_json(json& j, const SessionConfig& c) {
  j = {{"id", c.id},
       {"dataset", c.dataset},
       {"split",
        {{"count", c.split.count},
         {"index", c.split.index},
         {"train_fraction", c.split.train_fraction},
         {"seed", c.split.seed}}},
       {"method", to_string(c.method)},
       {"criterion", to_string(c.criterion)},
       {"policy", c.policy},
       {"retrain", c.retrain},
       {"progressive_base_rate", c.progressive_base_rate},
       {"tsne", {{"perplexity", c.tsne.perplexity}, {"iterations", c.tsne.iterations}}},
       {"model",
        {{"checkpoint", c.model.checkpoint},
         {"preset", c.model.preset},
         {"seed", c.model.seed},
         {"epochs", c.model.epochs},
         {"learning_rate", c.model.learning_rate},
         {"batch_size", c.model.batch_size}}}};
}

void from_json(const json& j, SessionConfig& c) {
  c = SessionConfig{};
  c.id = j.value("id", std::string{});
  c.dataset = j.at("dataset").get<std::string>();
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split.count = s.value("count", c.split.count);
    c.split.index = s.value("index", c.split.index);
    c.split.train_fraction = s.value("train_fraction", c.split.train_fraction);
    c.split.seed = s.value("seed", c.split.seed);
  }
  c.method = method_from_string(j.value("method", std::string("oPPR")));
  if (j.contains("criterion")) c.criterion = criterion_from_string(j.at("criterion").get<std::string>());
  if (j.contains("policy")) c.policy = j.at("policy").get<SelectionPolicy>();
  if (j.contains("retrain")) c.retrain = retrain_from_partial(j.at("retrain"));
  c.progressive_base_rate = j.value("progressive_base_rate", c.progressive_base_rate);
  if (j.contains("tsne")) {
    c.tsne.perplexity = j.at("tsne").value("perplexity", c.tsne.perplexity);
    c.tsne.iterations = j.at("tsne").value("iterations", c.tsne.iterations);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.checkpoint = m.value("checkpoint", std::string{});
    c.model.preset = m.value("preset", c.model.preset);
    c.model.seed = m.value("seed", c.model.seed);
    c.model.epochs = m.value("epochs", c.model.epochs);
    c.model.learning_rate = m.value("learning_rate", c.model.learning_rate);
    c.model.batch_size = m.value("batch_size", c.model.batch_size);
  }
}

void to_json(json& j, const Job& job) {
  j = {{"id", job.id},
       {"kind", to_string(job.kind)},
       {"layer", job.layer},
       {"progress", job.progress},
       {"epoch", job.epoch},
       {"total_epochs", job.total_epochs},
       {"outcome", to_string(job.outcome)},
       {"message", job.message},
       {"initial_loss", job.initial_loss ? json(*job.initial_loss) : json(nullptr)},
       {"loss_trace", job.loss_trace}};
}

void from_json(const json& j, Job& job) {
  job.id = j.at("id").get<std::string>();
  job.kind = j.at("kind").get<std::string>() == "commit" ? JobKind::commit : JobKind::finalize;
  job.layer = j.at("layer").get<std::size_t>();
  job.progress = j.at("progress").get<double>();
  job.epoch = j.at("epoch").get<std::size_t>();
  job.total_epochs = j.at("total_epochs").get<std::size_t>();
  job.outcome = outcome_from_string(j.at("outcome").get<std::string>());
  job.message = j.value("message", std::string{});
  if (j.contains("initial_loss") && !j.at("initial_loss").is_null()) {
    job.initial_loss = j.at("initial_loss").get<double>();
  } else {
    job.initial_loss.reset();
  }
  job.loss_trace = j.at("loss_trace").get<std::vector<double>>();
}

void to_json(json& j, const MetricsPoint& m) {
  j = {{"layer", m.layer},
       {"kernels", m.kernels},
       {"kernel_reduction", m.kernel_reduction},
       {"gflops_reduction", m.gflops_reduction},
       {"test_accuracy", m.test_accuracy},
       {"test_kappa", m.test_kappa}};
}

void from_json(const json& j, MetricsPoint& m) {
  m.layer = j.at("layer").get<std::size_t>();
  m.kernels = j.at("kernels").get<std::size_t>();
  m.kernel_reduction = j.at("kernel_reduction").get<double>();
  m.gflops_reduction = j.at("gflops_reduction").get<double>();
  m.test_accuracy = j.at("test_accuracy").get<double>();
  m.test_kappa = j.at("test_kappa").get<double>();
}

void to_json(json& j, const SessionState& s) {
  j = {{"format", "pruneforge-session"},
       {"version", 1},
       {"config", s.config},
       {"original_spec", s.original_spec},
       {"current_layer", s.current_layer},
       {"status", to_string(s.status)},
       {"diagnostic", s.diagnostic},
       {"active_job", s.active_job},
       {"next_job", s.next_job},
       {"history", s.history},
       {"normalization", s.normalization}};
}

void from_json(const json& j, SessionState& s) {
  if (j.value("format", std::string{}) != "pruneforge-session") throw Error("not a session file");
  s.config = j.at("config").get<SessionConfig>();
  s.original_spec = j.at("original_spec").get<ArchitectureSpec>();
  s.current_layer = j.at("current_layer").get<std::size_t>();
  s.status = status_from_string(j.at("status").get<std::string>());
  s.diagnostic = j.value("diagnostic", std::string{});
  s.active_job = j.value("active_job", std::string{});
  s.next_job = j.at("next_job").get<std::size_t>();
  s.history = j.at("history").get<std::vector<MetricsPoint>>();
  const auto& n = j.at("normalization");
  s.normalization.mean = n.at("mean").get<std::vector<double>>();
  s.normalization.stddev = n.at("std").get<std::vector<double>>();
  s.normalization.warnings = n.value("warnings", std::vector<std::string>{});
}

fs::path session_directory(const fs::path& root, const std::string& id) {
  if (!valid_id(id)) throw NotFoundError("invalid session id '" + id + "'");
  return root / id;
}

// ---- manager -----------------------------------------------------------------

struct SessionManager::Handle {
  std::string id;
  fs::path dir;
  // Serializes mutating operations (prepare, decisions, commit, finalize).
  std::mutex op_mutex;
  // Guards `state`, `job_running` and `last_job`; held only briefly.
  std::mutex state_mutex;
  std::condition_variable job_done;
  SessionState state;
  bool job_running = false;
  std::optional<Job> last_job;
  std::thread worker;

  LabeledBatch train;
  LabeledBatch test;
  std::vector<std::string> class_names;

  fs::path layer_dir(std::size_t layer) const { return dir / "layers" / std::to_string(layer); }
  fs::path job_path(const std::string& jid) const { return dir / "jobs" / (jid + ".json"); }

  // Model entering layer `layer`: the baseline or the checkpoint of layer-1.
  ModelState model_before(std::size_t layer) const {
    if (layer <= 1) return load_checkpoint(dir / "base.ckpt");
    return load_checkpoint(layer_dir(layer - 1) / "model.ckpt");
  }
};

namespace {

struct LoadedData {
  LabeledBatch train;
  LabeledBatch test;
  std::vector<std::string> class_names;
  NormalizationRecord normalization;
};

LoadedData load_data(const SessionConfig& config) {
  const Dataset raw = resolve_dataset(config.dataset);
  const SplitPlan plan = make_splits(raw, config.split.count, config.split.train_fraction, config.split.seed);
  const Split& split = plan.splits.at(config.split.index);
  NormalizedDataset norm = normalize(raw, split.train);
  LoadedData d;
  d.train = norm.dataset.batch(split.train);
  d.test = norm.dataset.batch(split.test);
  d.class_names = raw.class_names;
  d.normalization = norm.record;
  return d;
}

// Status a session rests in when no transition is in progress.
SessionStatus resting_status(const SessionManager&, const SessionState& state, const fs::path& layer_dir) {
  if (state.current_layer > state.layer_count()) return SessionStatus::idle;
  if (is_subjective(state.config.method) &&
      (fs::exists(layer_dir / "projection.json") || fs::exists(layer_dir / "decisions.json"))) {
    return SessionStatus::awaiting_decisions;
  }
  return SessionStatus::idle;
}

bool busy(SessionStatus s) {
  return s == SessionStatus::scoring || s == SessionStatus::projecting || s == SessionStatus::retraining ||
         s == SessionStatus::finalizing;
}

void require_usable(const SessionState& state, const std::string& id) {
  if (state.status == SessionStatus::failed) {
    throw ConflictError("session '" + id + "' has failed: " + state.diagnostic);
  }
  if (state.status == SessionStatus::done) throw ConflictError("session '" + id + "' is already finalized");
  if (!state.active_job.empty()) throw ConflictError("session '" + id + "' has a running job " + state.active_job);
}

void require_current_layer(const SessionState& state, std::size_t layer) {
  if (layer < 1 || layer > state.layer_count()) {
    throw Error("layer " + std::to_string(layer) + " is not a conv layer (1.." +
                std::to_string(state.layer_count()) + ")");
  }
  if (layer != state.current_layer) {
    throw ConflictError("layer " + std::to_string(layer) + " is out of order; the current layer is " +
                std::to_string(state.current_layer));
  }
}

}  // namespace

SessionManager::SessionManager(ManagerOptions options) : options_(std::move(options)) {
  if (options_.root.empty()) throw Error("session root directory is required");
  fs::create_directories(options_.root);
}

SessionManager::~SessionManager() {
  std::map<std::string, std::shared_ptr<Handle>> sessions;
  {
    std::lock_guard lock(mutex_);
    sessions = sessions_;
  }
  for (auto& [id, h] : sessions) {
    if (h->worker.joinable()) h->worker.join();
  }
}

void SessionManager::fault(std::string_view point) const {
  if (options_.fault_hook) options_.fault_hook(point);
}

void SessionManager::persist(Handle& h) {
  io::write_file_atomic(h.dir / "session.json", json(h.state).dump(2));
}

void SessionManager::write_job(Handle& h, const Job& job) {
  io::write_file_atomic(h.job_path(job.id), json(job).dump(2));
}

MetricsPoint SessionManager::measure(const Handle& h, const ModelState& model, std::size_t layer) const {
  const ConfusionMatrix cm = evaluate(model, h.test);
  const ReductionPercentages r = reduction_percentages(h.state.original_spec, model.spec);
  return {layer, model.spec.total_kernels(), r.kernel_reduction, r.gflops_reduction, accuracy(cm), cohen_kappa(cm)};
}

std::string SessionManager::start_session(SessionConfig config) {
  config.validate();
  {
    std::lock_guard lock(mutex_);
    if (config.id.empty()) {
      for (std::size_t n = 1;; ++n) {
        const std::string candidate = "session-" + std::to_string(n);
        if (!fs::exists(options_.root / candidate) && !sessions_.count(candidate)) {
          config.id = candidate;
          break;
        }
      }
    }
    if (fs::exists(session_directory(options_.root, config.id)) || sessions_.count(config.id)) {
      throw ConflictError("session '" + config.id + "' already exists");
    }
  }

  LoadedData data = load_data(config);
  const std::size_t classes = data.class_names.size();
  const Shape sample = {data.train.images.dim(1), data.train.images.dim(2), data.train.images.dim(3)};
  ModelState base;
  if (!config.model.checkpoint.empty()) {
    base = load_checkpoint(config.model.checkpoint);
    const auto& in = base.spec.input;
    if (in.channels != sample[0] || in.height != sample[1] || in.width != sample[2]) {
      throw Error("checkpoint input " + std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" +
                  std::to_string(in.width) + " does not match dataset samples " + shape_to_string(sample));
    }
    if (base.spec.classifier.class_count != classes) {
      throw Error("checkpoint has " + std::to_string(base.spec.classifier.class_count) +
                  " classes but the dataset has " + std::to_string(classes));
    }
  } else {
    base = build_preset(config.model.preset, {sample[0], sample[1], sample[2]}, classes, config.model.seed);
    if (config.model.epochs > 0) {
      train_cross_entropy(base, data.train, config.model.epochs, config.model.learning_rate,
                          config.model.batch_size, derive_seed(config.model.seed, kTagBaseline));
    }
  }
  if (config.retrain.per_layer_learning_rates.empty()) {
    config.retrain.per_layer_learning_rates = progressive_rate_table(base.spec, config.progressive_base_rate);
  }
  for (std::size_t l = 1; l <= base.spec.conv_count(); ++l) config.retrain.progressive_rate(l);

  auto h = std::make_shared<Handle>();
  h->id = config.id;
  h->dir = session_directory(options_.root, config.id);
  h->train = std::move(data.train);
  h->test = std::move(data.test);
  h->class_names = std::move(data.class_names);
  h->state.config = config;
  h->state.original_spec = base.spec;
  h->state.normalization = data.normalization;
  h->state.history.push_back(measure(*h, base, 0));

  // Built in a scratch directory and renamed into place, so a crash never
  // leaves a half-created session behind.
  const fs::path scratch = options_.root / ("." + config.id + ".creating");
  fs::remove_all(scratch);
  fs::create_directories(scratch / "layers");
  fs::create_directories(scratch / "jobs");
  save_checkpoint(base, scratch / "base.ckpt");
  io::write_file_atomic(scratch / "session.json", json(h->state).dump(2));
  fault("create:staged");
  fs::rename(scratch, h->dir);

  std::lock_guard lock(mutex_);
  sessions_[config.id] = h;
  return config.id;
}

std::vector<std::string> SessionManager::list_sessions() const {
  std::vector<std::string> ids;
  if (!fs::exists(options_.root)) return ids;
  for (const auto& entry : fs::directory_iterator(options_.root)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && valid_id(name) && fs::exists(entry.path() / "session.json")) ids.push_back(name);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::shared_ptr<SessionManager::Handle> SessionManager::handle(const std::string& id) {
  {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it != sessions_.end()) return it->second;
  }
  auto h = load(id);
  std::lock_guard lock(mutex_);
  auto [it, inserted] = sessions_.emplace(id, h);
  return it->second;
}

std::shared_ptr<SessionManager::Handle> SessionManager::load(const std::string& id) {
  const fs::path dir = session_directory(options_.root, id);
  if (!fs::exists(dir / "session.json")) throw NotFoundError("no session '" + id + "'");
  auto h = std::make_shared<Handle>();
  h->id = id;
  h->dir = dir;
  h->state = read_json(dir / "session.json").get<SessionState>();
  LoadedData data = load_data(h->state.config);
  h->train = std::move(data.train);
  h->test = std::move(data.test);
  h->class_names = std::move(data.class_names);

  // Reconcile with the durable records: a commit whose record exists has
  // happened even if session.json was not rewritten afterwards.
  SessionState& s = h->state;
  bool changed = false;
  while (s.current_layer <= s.layer_count() && fs::exists(h->layer_dir(s.current_layer) / "record.json")) {
    const json record = read_json(h->layer_dir(s.current_layer) / "record.json");
    if (s.history.empty() || s.history.back().layer != s.current_layer) {
      s.history.push_back(record.at("metrics").get<MetricsPoint>());
    }
    ++s.current_layer;
    if (s.status == SessionStatus::retraining) s.status = SessionStatus::idle;
    changed = true;
  }
  if (s.status == SessionStatus::finalizing && fs::exists(dir / "report.json")) {
    s.status = SessionStatus::done;
    changed = true;
  }
  if (busy(s.status)) {
    s.status = resting_status(*this, s, h->layer_dir(s.current_layer));
    changed = true;
  }
  if (!s.active_job.empty()) {
    const fs::path jp = h->job_path(s.active_job);
    if (fs::exists(jp)) {
      Job job = read_json(jp).get<Job>();
      if (job.outcome == JobOutcome::running) {
        const bool landed = job.kind == JobKind::commit
                                ? fs::exists(h->layer_dir(job.layer) / "record.json")
                                : fs::exists(dir / "report.json");
        job.outcome = landed ? JobOutcome::succeeded : JobOutcome::interrupted;
        if (landed) job.progress = 1.0;
        job.message = landed ? job.message : "process stopped before the job completed";
        write_job(*h, job);
      }
      h->last_job = job;
    }
    s.active_job.clear();
    changed = true;
  }
  if (s.status == SessionStatus::idle || s.status == SessionStatus::awaiting_decisions) {
    const SessionStatus rest = resting_status(*this, s, h->layer_dir(s.current_layer));
    if (rest != s.status) {
      s.status = rest;
      changed = true;
    }
  }
  if (changed) persist(*h);
  return h;
}

SessionState SessionManager::state(const std::string& id) {
  auto h = handle(id);
  std::lock_guard lock(h->state_mutex);
  return h->state;
}

json SessionManager::describe(const std::string& id) {
  auto h = handle(id);
  SessionState s;
  std::optional<Job> last;
  {
    std::lock_guard lock(h->state_mutex);
    s = h->state;
    last = h->last_job;
  }
  json layers = json::array();
  for (std::size_t l = 1; l <= s.layer_count(); ++l) {
    const fs::path ld = h->layer_dir(l);
    std::string phase = l < s.current_layer ? "committed" : (l == s.current_layer ? "current" : "pending");
    json entry = {{"layer", l},
                  {"name", layer_name(s.original_spec, l)},
                  {"original_kernels", s.original_spec.conv_layers[l - 1].out_channels},
                  {"phase", phase},
                  {"prepared", fs::exists(ld / "scores.json") || fs::exists(ld / "projection.json")},
                  {"has_decisions", fs::exists(ld / "decisions.json")}};
    if (l < s.current_layer) {
      const json record = read_json(ld / "record.json");
      entry["removed"] = record.at("removed");
      entry["kept_kernels"] = record.at("kept_kernels");
    }
    layers.push_back(std::move(entry));
  }
  json out = {{"id", h->id},
              {"dataset", s.config.dataset},
              {"split", json(s.config).at("split")},
              {"method", to_string(s.config.method)},
              {"criterion", to_string(s.config.criterion)},
              {"policy", s.config.policy},
              {"status", to_string(s.status)},
              {"diagnostic", s.diagnostic},
              {"current_layer", s.current_layer},
              {"layer_count", s.layer_count()},
              {"ready_to_finalize", s.current_layer > s.layer_count() && s.status == SessionStatus::idle},
              {"active_job", s.active_job.empty() ? json(nullptr) : json(s.active_job)},
              {"last_job", last ? json(last->id) : json(nullptr)},
              {"class_names", h->class_names},
              {"architecture", s.original_spec},
              {"config", s.config},
              {"layers", std::move(layers)}};
  return out;
}

std::string SessionManager::prepare_layer(const std::string& id, std::size_t layer) {
  auto h = handle(id);
  std::lock_guard op(h->op_mutex);
  const bool subjective = is_subjective(h->state.config.method);
  const fs::path ld = h->layer_dir(layer);
  const fs::path cache = ld / (subjective ? "projection.json" : "scores.json");
  SessionConfig config;
  {
    std::lock_guard lock(h->state_mutex);
    require_usable(h->state, id);
    require_current_layer(h->state, layer);
    if (fs::exists(cache)) return read_text(cache);
    h->state.status = subjective ? SessionStatus::projecting : SessionStatus::scoring;
    persist(*h);
    config = h->state.config;
  }
  fault("prepare:started");

  std::string payload;
  try {
    const ModelState model = h->model_before(layer);
    if (subjective) {
      const TsneParams params{config.tsne.perplexity, config.tsne.iterations,
                              derive_seed(config.retrain.seed, kTagProjection + layer)};
      const Projection2D projection = project_layer(model, layer, h->train, params, h->class_names);
      json j = projection;
      json hints = json::array();
      for (std::size_t k = 0; k < model.spec.conv_layers[layer - 1].out_channels; ++k) {
        hints.push_back({{"kernel", k}, {"hint", separation_hint(projection, k)}});
      }
      j["hints"] = std::move(hints);
      j["class_names"] = h->class_names;
      payload = j.dump();
    } else {
      const auto scores = score_layer(config.criterion, model, layer, h->train);
      json list = json::array();
      for (const auto& s : scores) {
        list.push_back({{"kernel", s.kernel}, {"value", s.value}, {"relevance", s.relevance()}});
      }
      payload = json{{"layer", layer}, {"criterion", to_string(config.criterion)}, {"scores", std::move(list)}}.dump();
    }
    fs::create_directories(ld);
    io::write_file_atomic(cache, payload);
    fault("prepare:cached");
  } catch (...) {
    std::lock_guard lock(h->state_mutex);
    h->state.status = resting_status(*this, h->state, ld);
    persist(*h);
    throw;
  }
  std::lock_guard lock(h->state_mutex);
  h->state.status = resting_status(*this, h->state, ld);
  persist(*h);
  return payload;
}

std::optional<std::string> SessionManager::layer_scores(const std::string& id, std::size_t layer) {
  auto h = handle(id);
  return read_if_exists(h->layer_dir(layer) / "scores.json");
}

std::optional<std::string> SessionManager::layer_projection(const std::string& id, std::size_t layer) {
  auto h = handle(id);
  return read_if_exists(h->layer_dir(layer) / "projection.json");
}

std::optional<std::string> SessionManager::layer_record(const std::string& id, std::size_t layer) {
  auto h = handle(id);
  return read_if_exists(h->layer_dir(layer) / "record.json");
}

std::string SessionManager::weight_projection(const std::string& id, std::size_t layer) {
  auto h = handle(id);
  std::lock_guard op(h->op_mutex);
  SessionConfig config;
  {
    std::lock_guard lock(h->state_mutex);
    if (layer < 1 || layer > h->state.layer_count()) throw Error("layer " + std::to_string(layer) + " is not a conv layer");
    if (layer > h->state.current_layer) {
      throw ConflictError("layer " + std::to_string(layer) + " has not been reached yet");
    }
    config = h->state.config;
  }
  const fs::path cache = h->layer_dir(layer) / "weight_projection.json";
  if (fs::exists(cache)) return read_text(cache);
  const ModelState model = h->model_before(layer);
  const auto projection = project_kernel_weights(model, layer, config.tsne.perplexity,
                                                 derive_seed(config.retrain.seed, kTagWeights + layer),
                                                 config.tsne.iterations);
  const std::string payload = json(projection).dump();
  fs::create_directories(h->layer_dir(layer));
  io::write_file_atomic(cache, payload);
  return payload;
}

json SessionManager::submit_decisions(const std::string& id, std::size_t layer, std::vector<std::size_t> remove) {
  auto h = handle(id);
  std::lock_guard op(h->op_mutex);
  std::lock_guard lock(h->state_mutex);
  if (!is_subjective(h->state.config.method)) {
    throw ConflictError("session '" + id + "' uses the objective method " + to_string(h->state.config.method) +
                "; decisions are only accepted for sPPR and sPCR");
  }
  require_usable(h->state, id);
  require_current_layer(h->state, layer);
  const ModelState model = h->model_before(layer);
  const std::size_t kernels = model.spec.conv_layers[layer - 1].out_channels;
  std::sort(remove.begin(), remove.end());
  remove.erase(std::unique(remove.begin(), remove.end()), remove.end());
  for (auto k : remove) {
    if (k >= kernels) {
      throw Error("kernel " + std::to_string(k) + " is out of range for layer " + std::to_string(layer) + " (" +
                  std::to_string(kernels) + " kernels)");
    }
  }
  if (remove.size() >= kernels) {
    throw Error("removing all " + std::to_string(kernels) + " kernels of layer " + std::to_string(layer) +
                " is not allowed");
  }
  const json decisions = {{"layer", layer}, {"remove", remove}, {"kernels", kernels}};
  fs::create_directories(h->layer_dir(layer));
  io::write_file_atomic(h->layer_dir(layer) / "decisions.json", decisions.dump());
  h->state.status = SessionStatus::awaiting_decisions;
  persist(*h);
  return decisions;
}

std::optional<json> SessionManager::decisions(const std::string& id, std::size_t layer) {
  auto h = handle(id);
  const auto text = read_if_exists(h->layer_dir(layer) / "decisions.json");
  if (!text) return std::nullopt;
  return json::parse(*text);
}

Job SessionManager::launch(const std::shared_ptr<Handle>& h, JobKind kind, std::size_t layer) {
  Job job;
  {
    std::lock_guard lock(h->state_mutex);
    job.id = "j" + std::to_string(h->state.next_job);
    job.kind = kind;
    job.layer = layer;
    job.total_epochs = kind == JobKind::finalize
                           ? h->state.config.retrain.final_epochs
                           : (is_progressive(h->state.config.method) ? h->state.config.retrain.progressive_epochs : 1);
    ++h->state.next_job;
    h->state.active_job = job.id;
    h->state.status = kind == JobKind::commit ? SessionStatus::retraining : SessionStatus::finalizing;
    persist(*h);
    fault(kind == JobKind::commit ? "commit:session-marked" : "finalize:session-marked");
    write_job(*h, job);
    h->job_running = true;
    h->last_job = job;
  }
  if (h->worker.joinable()) h->worker.join();
  if (kind == JobKind::commit) {
    h->worker = std::thread([this, h, job] { run_commit(h, job); });
  } else {
    h->worker = std::thread([this, h, job] { run_finalize(h, job); });
  }
  return job;
}

Job SessionManager::commit_layer(const std::string& id, std::size_t layer) {
  auto h = handle(id);
  std::lock_guard op(h->op_mutex);
  {
    std::lock_guard lock(h->state_mutex);
    require_usable(h->state, id);
    require_current_layer(h->state, layer);
    if (is_subjective(h->state.config.method) && !fs::exists(h->layer_dir(layer) / "decisions.json")) {
      throw ConflictError("decisions for layer " + std::to_string(layer) + " have not been submitted");
    }
  }
  return launch(h, JobKind::commit, layer);
}

Job SessionManager::finalize(const std::string& id) {
  auto h = handle(id);
  std::lock_guard op(h->op_mutex);
  {
    std::lock_guard lock(h->state_mutex);
    require_usable(h->state, id);
    if (h->state.current_layer <= h->state.layer_count()) {
      throw ConflictError("cannot finalize: layers " + std::to_string(h->state.current_layer) + ".." +
                  std::to_string(h->state.layer_count()) + " are not committed");
    }
  }
  return launch(h, JobKind::finalize, 0);
}

void SessionManager::run_commit(const std::shared_ptr<Handle>& h, Job job) {
  const std::size_t layer = job.layer;
  SessionConfig config;
  {
    std::lock_guard lock(h->state_mutex);
    config = h->state.config;
  }
  auto publish = [&](const Job& j) {
    std::lock_guard lock(h->state_mutex);
    write_job(*h, j);
    h->last_job = j;
  };
  try {
    const fs::path ld = h->layer_dir(layer);
    fs::create_directories(ld);
    const ModelState model = h->model_before(layer);

    std::vector<std::size_t> removed;
    json selection;
    if (is_subjective(config.method)) {
      const json d = read_json(ld / "decisions.json");
      removed = d.at("remove").get<std::vector<std::size_t>>();
      selection = {{"source", "decisions"}};
    } else {
      std::vector<KernelScore> scores;
      if (fs::exists(ld / "scores.json")) {
        const json cached = read_json(ld / "scores.json");
        for (const auto& s : cached.at("scores")) {
          scores.push_back({layer, s.at("kernel").get<std::size_t>(), s.at("value").get<double>(), config.criterion});
        }
      } else {
        scores = score_layer(config.criterion, model, layer, h->train);
      }
      removed = select(scores, config.policy).kernels;
      selection = {{"source", "policy"}, {"criterion", to_string(config.criterion)}, {"policy", config.policy}};
    }
    const KernelSet removal = KernelSet::make(layer, removed);

    ModelState committed = prune_layer(model, removal);
    std::optional<ProgressiveLossReport> loss;
    if (!removal.kernels.empty()) {
      if (is_progressive(config.method)) {
        auto progress = [&](const EpochProgress& p) {
          job.epoch = p.epoch;
          job.total_epochs = p.total;
          job.progress = static_cast<double>(p.epoch) / static_cast<double>(p.total);
          job.loss_trace.push_back(p.loss);
          publish(job);
          if (options_.epoch_observer) options_.epoch_observer(h->id, p);
        };
        job.initial_loss = reconstruction_distance(model, committed, layer, h->train);
        publish(job);
        ProgressiveResult result = progressive_retrain(model, committed, layer, h->train, config.retrain, progress);
        committed = std::move(result.model);
        loss = result.report;
      } else {
        committed = complete_retrain_epoch(committed, h->train, config.retrain.complete_learning_rate,
                                           config.retrain.batch_size,
                                           derive_seed(config.retrain.seed, kTagComplete + layer));
        committed.validate();
        job.epoch = 1;
        job.progress = 1.0;
        publish(job);
        if (options_.epoch_observer) options_.epoch_observer(h->id, {1, 1, 0.0});
      }
    }
    for (const auto& c : committed.conv) c.kernels.require_finite("committed conv weights");
    for (const auto& d : committed.classifier) d.weights.require_finite("committed classifier weights");

    save_checkpoint(committed, ld / "model.ckpt");
    fault("commit:checkpoint-written");
    const MetricsPoint point = measure(*h, committed, layer);
    json record = {{"layer", layer},
                   {"method", to_string(config.method)},
                   {"selection", selection},
                   {"removed", removal.kernels},
                   {"original_kernels", model.spec.conv_layers[layer - 1].out_channels},
                   {"kept_kernels", committed.spec.conv_layers[layer - 1].out_channels},
                   {"retraining", is_progressive(config.method) ? "progressive" : "complete"},
                   {"loss", loss ? json(*loss) : json(nullptr)},
                   {"metrics", point},
                   {"checkpoint", "model.ckpt"},
                   {"job", job.id}};
    io::write_file_atomic(ld / "record.json", record.dump(2));
    fault("commit:record-written");

    std::lock_guard lock(h->state_mutex);
    h->state.current_layer = layer + 1;
    h->state.history.push_back(point);
    h->state.active_job.clear();
    h->state.status = resting_status(*this, h->state, h->layer_dir(layer + 1));
    persist(*h);
    fault("commit:session-written");
    job.outcome = JobOutcome::succeeded;
    job.progress = 1.0;
    write_job(*h, job);
    h->last_job = job;
    h->job_running = false;
    h->job_done.notify_all();
  } catch (const std::exception& e) {
    std::lock_guard lock(h->state_mutex);
    job.outcome = JobOutcome::failed;
    job.message = e.what();
    h->state.status = SessionStatus::failed;
    h->state.diagnostic = std::string("commit of layer ") + std::to_string(layer) + " failed: " + e.what();
    h->state.active_job.clear();
    persist(*h);
    write_job(*h, job);
    h->last_job = job;
    h->job_running = false;
    h->job_done.notify_all();
  }
}

void SessionManager::run_finalize(const std::shared_ptr<Handle>& h, Job job) {
  SessionConfig config;
  {
    std::lock_guard lock(h->state_mutex);
    config = h->state.config;
  }
  try {
    const ModelState model = h->model_before(h->state.layer_count() + 1);
    auto progress = [&](const EpochProgress& p) {
      job.epoch = p.epoch;
      job.total_epochs = p.total;
      job.progress = static_cast<double>(p.epoch) / static_cast<double>(p.total);
      job.loss_trace.push_back(p.loss);
      {
        std::lock_guard lock(h->state_mutex);
        write_job(*h, job);
        h->last_job = job;
      }
      if (options_.epoch_observer) options_.epoch_observer(h->id, p);
    };
    const ModelState final_model = final_retrain(model, h->train, config.retrain, progress);
    save_checkpoint(final_model, h->dir / "final.ckpt");
    fault("finalize:checkpoint-written");
    const ConfusionMatrix cm = evaluate(final_model, h->test);
    const ReductionPercentages r = reduction_percentages(h->state.original_spec, final_model.spec);
    const SplitMetrics split{accuracy(cm), cohen_kappa(cm), r.gflops_reduction, r.kernel_reduction};
    const std::vector<SplitMetrics> splits{split};
    json confusion = json::array();
    for (std::size_t t = 0; t < cm.classes(); ++t) {
      json row = json::array();
      for (std::size_t p = 0; p < cm.classes(); ++p) row.push_back(cm.at(t, p));
      confusion.push_back(std::move(row));
    }
    const json report = {{"split", split},
                         {"summary", aggregate_splits(splits)},
                         {"confusion", confusion},
                         {"job", job.id}};
    io::write_file_atomic(h->dir / "report.json", report.dump(2));
    fault("finalize:report-written");

    std::lock_guard lock(h->state_mutex);
    h->state.status = SessionStatus::done;
    h->state.active_job.clear();
    persist(*h);
    job.outcome = JobOutcome::succeeded;
    job.progress = 1.0;
    write_job(*h, job);
    h->last_job = job;
    h->job_running = false;
    h->job_done.notify_all();
  } catch (const std::exception& e) {
    std::lock_guard lock(h->state_mutex);
    job.outcome = JobOutcome::failed;
    job.message = e.what();
    h->state.status = SessionStatus::failed;
    h->state.diagnostic = std::string("final retraining failed: ") + e.what();
    h->state.active_job.clear();
    persist(*h);
    write_job(*h, job);
    h->last_job = job;
    h->job_running = false;
    h->job_done.notify_all();
  }
}

Job SessionManager::job(const std::string& id, const std::string& job_id) {
  auto h = handle(id);
  if (!valid_id(job_id)) throw Error("invalid job id '" + job_id + "'");
  std::lock_guard lock(h->state_mutex);
  if (h->last_job && h->last_job->id == job_id) return *h->last_job;
  const fs::path path = h->job_path(job_id);
  if (!fs::exists(path)) throw NotFoundError("no job '" + job_id + "' in session '" + id + "'");
  return read_json(path).get<Job>();
}

std::optional<Job> SessionManager::wait(const std::string& id) {
  auto h = handle(id);
  {
    std::unique_lock lock(h->state_mutex);
    h->job_done.wait(lock, [&] { return !h->job_running; });
  }
  std::lock_guard op(h->op_mutex);
  if (h->worker.joinable()) h->worker.join();
  std::lock_guard lock(h->state_mutex);
  return h->last_job;
}

std::optional<EvaluationReport> SessionManager::report(const std::string& id) {
  auto h = handle(id);
  const auto text = read_if_exists(h->dir / "report.json");
  if (!text) return std::nullopt;
  const std::vector<SplitMetrics> splits{json::parse(*text).at("split").get<SplitMetrics>()};
  return aggregate_splits(splits);
}

json SessionManager::metrics(const std::string& id) {
  auto h = handle(id);
  SessionState s;
  {
    std::lock_guard lock(h->state_mutex);
    s = h->state;
  }
  const auto text = read_if_exists(h->dir / "report.json");
  const FlopsReport original = flops(s.original_spec);
  return {{"session", h->id},
          {"method", to_string(s.config.method)},
          {"status", to_string(s.status)},
          {"baseline", s.history.empty() ? json(nullptr) : json(s.history.front())},
          {"history", s.history},
          {"original_gflops", static_cast<double>(original.total) / 1e9},
          {"flops_convention", FlopsReport::convention},
          {"report", text ? json::parse(*text) : json(nullptr)}};
}

ModelState SessionManager::current_model(const std::string& id) {
  auto h = handle(id);
  std::size_t layer;
  {
    std::lock_guard lock(h->state_mutex);
    layer = h->state.current_layer;
  }
  return h->model_before(layer);
}

ModelState SessionManager::base_model(const std::string& id) {
  return load_checkpoint(handle(id)->dir / "base.ckpt");
}

std::optional<ModelState> SessionManager::final_model(const std::string& id) {
  auto h = handle(id);
  if (!fs::exists(h->dir / "report.json")) return std::nullopt;
  return load_checkpoint(h->dir / "final.ckpt");
}

EvaluationReport SessionManager::run_automated(const std::string& id) {
  auto h = handle(id);
  if (is_subjective(state(id).config.method)) {
    throw Error("session '" + id + "' uses a subjective method; it needs expert decisions per layer");
  }
  for (;;) {
    const SessionState s = state(id);
    if (s.status == SessionStatus::failed) throw Error(s.diagnostic);
    if (s.status == SessionStatus::done) break;
    if (s.current_layer <= s.layer_count()) {
      prepare_layer(id, s.current_layer);
      commit_layer(id, s.current_layer);
    } else {
      finalize(id);
    }
    const auto job = wait(id);
    if (job && job->outcome == JobOutcome::failed) throw Error(job->message);
  }
  return *report(id);
}

}  // namespace pruneforge
