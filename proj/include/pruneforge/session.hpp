#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pruneforge/analysis.hpp"
#include "pruneforge/dataio.hpp"
#include "pruneforge/metrics.hpp"
#include "pruneforge/model.hpp"
#include "pruneforge/relevance.hpp"
#include "pruneforge/retraining.hpp"

namespace pruneforge {

/// A session, layer record or job that does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// A request that is valid in form but not in the session's current state.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// The four campaign variants: {objective, subjective} selection crossed
/// with {progressive, complete} retraining.
enum class Method { oPPR, sPPR, oPCR, sPCR };

std::string to_string(Method m);
Method method_from_string(const std::string& name);
bool is_subjective(Method m);
bool is_progressive(Method m);

enum class SessionStatus { idle, scoring, projecting, awaiting_decisions, retraining, finalizing, done, failed };

std::string to_string(SessionStatus s);
SessionStatus status_from_string(const std::string& name);

struct SplitRef {
  std::size_t count = 1;
  std::size_t index = 0;
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
};

/// Baseline model: either an existing checkpoint or a preset trained (for
/// `epochs` > 0) when the session is created.
struct ModelSource {
  std::string checkpoint;
  std::string preset = "tinyvgg";
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double learning_rate = 0.03;
  std::size_t batch_size = 16;
};

struct TsneSettings {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
};

struct SessionConfig {
  std::string id;  // generated when empty
  std::string dataset;
  SplitRef split;
  Method method = Method::oPPR;
  Criterion criterion = Criterion::objective_loss_delta;
  SelectionPolicy policy = SelectionPolicy::fixed(0.5);
  /// An empty per-layer table is filled from
  /// progressive_rate_table(architecture, progressive_base_rate).
  RetrainConfig retrain;
  double progressive_base_rate = 1e-5;
  TsneSettings tsne;
  ModelSource model;

  void validate() const;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

enum class JobKind { commit, finalize };
enum class JobOutcome { running, succeeded, failed, interrupted };

std::string to_string(JobKind k);
std::string to_string(JobOutcome o);

struct Job {
  std::string id;
  JobKind kind = JobKind::commit;
  std::size_t layer = 0;  // committed layer; 0 for finalize
  double progress = 0.0;
  std::size_t epoch = 0;
  std::size_t total_epochs = 0;
  JobOutcome outcome = JobOutcome::running;
  std::string message;
  std::optional<double> initial_loss;  // progressive retraining only
  std::vector<double> loss_trace;
};

void to_json(nlohmann::json& j, const Job& job);
void from_json(const nlohmann::json& j, Job& job);

/// One row of the campaign's metrics history, recorded after each commit.
struct MetricsPoint {
  std::size_t layer = 0;  // 0 = baseline
  std::size_t kernels = 0;
  double kernel_reduction = 0.0;  // percent
  double gflops_reduction = 0.0;  // percent
  double test_accuracy = 0.0;     // fraction
  double test_kappa = 0.0;
};

void to_json(nlohmann::json& j, const MetricsPoint& m);
void from_json(const nlohmann::json& j, MetricsPoint& m);

/// Mutable part of a session, persisted as session.json.
struct SessionState {
  SessionConfig config;
  ArchitectureSpec original_spec;
  std::size_t current_layer = 1;
  SessionStatus status = SessionStatus::idle;
  std::string diagnostic;
  std::string active_job;
  std::size_t next_job = 1;
  std::vector<MetricsPoint> history;
  NormalizationRecord normalization;

  std::size_t layer_count() const { return original_spec.conv_count(); }
};

void to_json(nlohmann::json& j, const SessionState& s);
void from_json(const nlohmann::json& j, SessionState& s);

/// Named persistence points inside state transitions. Tests use the hook to
/// kill the process at each one.
using FaultHook = std::function<void(std::string_view point)>;
using EpochObserver = std::function<void(const std::string& session, const EpochProgress&)>;

struct ManagerOptions {
  std::filesystem::path root;
  FaultHook fault_hook;
  EpochObserver epoch_observer;
};

/// Owns every session under a root directory.
///
/// Layout of one session directory:
///   session.json                 mutable state (atomic rewrites)
///   base.ckpt                    baseline model
///   layers/<l>/scores.json       cached objective scores
///   layers/<l>/projection.json   cached joint projection with hints
///   layers/<l>/weight_projection.json
///   layers/<l>/decisions.json    expert decisions (until commit)
///   layers/<l>/model.ckpt        model after committing layer l
///   layers/<l>/record.json       immutable commit record
///   final.ckpt, report.json      after finalize
///   jobs/<jid>.json              job status and loss trace
///
/// A commit becomes durable when layers/<l>/record.json exists; reloading a
/// session reconciles session.json with the records, so a crash at any point
/// leaves either the pre-transition or the post-transition state.
class SessionManager {
 public:
  explicit SessionManager(ManagerOptions options);
  ~SessionManager();

  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  const std::filesystem::path& root() const { return options_.root; }

  /// Creates and persists a new session (status idle, layer 1). Returns its id.
  std::string start_session(SessionConfig config);
  std::vector<std::string> list_sessions() const;

  /// Session summary as served by the API.
  nlohmann::json describe(const std::string& id);
  SessionState state(const std::string& id);

  /// Scores (objective) or projection with separation hints (subjective) for
  /// the current layer; cached, so re-invocation returns identical bytes.
  std::string prepare_layer(const std::string& id, std::size_t layer);
  std::optional<std::string> layer_scores(const std::string& id, std::size_t layer);
  std::optional<std::string> layer_projection(const std::string& id, std::size_t layer);
  std::string weight_projection(const std::string& id, std::size_t layer);
  std::optional<std::string> layer_record(const std::string& id, std::size_t layer);

  nlohmann::json submit_decisions(const std::string& id, std::size_t layer, std::vector<std::size_t> remove);
  std::optional<nlohmann::json> decisions(const std::string& id, std::size_t layer);

  /// Starts the asynchronous commit of `layer`; returns the job.
  Job commit_layer(const std::string& id, std::size_t layer);
  /// Starts the asynchronous final retraining and evaluation.
  Job finalize(const std::string& id);

  Job job(const std::string& id, const std::string& job_id);
  /// Blocks until the session has no running job; returns the last job.
  std::optional<Job> wait(const std::string& id);

  nlohmann::json metrics(const std::string& id);
  std::optional<EvaluationReport> report(const std::string& id);

  ModelState current_model(const std::string& id);
  ModelState base_model(const std::string& id);
  std::optional<ModelState> final_model(const std::string& id);

  /// Runs every remaining step of an objective campaign (prepare, commit,
  /// finalize) synchronously.
  EvaluationReport run_automated(const std::string& id);

 private:
  struct Handle;

  std::shared_ptr<Handle> handle(const std::string& id);
  std::shared_ptr<Handle> load(const std::string& id);
  void persist(Handle& h);
  void fault(std::string_view point) const;
  Job launch(const std::shared_ptr<Handle>& h, JobKind kind, std::size_t layer);
  void run_commit(const std::shared_ptr<Handle>& h, Job job);
  void run_finalize(const std::shared_ptr<Handle>& h, Job job);
  void write_job(Handle& h, const Job& job);
  MetricsPoint measure(const Handle& h, const ModelState& model, std::size_t layer) const;

  ManagerOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Handle>> sessions_;
};

/// Directory of one session under the manager root; validates the id.
std::filesystem::path session_directory(const std::filesystem::path& root, const std::string& id);

}  // namespace pruneforge
