#pragma once
// Brute-force reference checks shared by the unit tests and the acceptance
// binary. Each returns raw measurements; callers apply their own tolerances.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pruneforge/dataio.hpp"
#include "pruneforge/model.hpp"
#include "pruneforge/retraining.hpp"
#include "pruneforge/session.hpp"

namespace oracle {

// ---- finite differences -------------------------------------------------

struct GradientCheck {
  std::string op;
  std::size_t instances = 0;
  double worst_relative_error = 0.0;
};

/// Central-difference check, in double precision, of every differentiable
/// op (and two tape compositions) on `instances` random inputs each.
std::vector<GradientCheck> gradient_suite(std::size_t instances, std::uint64_t seed);

/// ||a - b|| / max(||a||, ||b||), 0 when both are zero.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

// ---- structural surgery -------------------------------------------------

struct SurgeryResult {
  std::size_t cases = 0;
  std::size_t last_layer_cases = 0;
  double worst_logit_difference = 0.0;
};

/// Zero-masked forward vs structurally pruned forward on random tinyvgg
/// models, layers and removal sets.
SurgeryResult surgery_oracle(std::size_t cases, std::uint64_t seed);

// ---- objective scores ---------------------------------------------------

struct ScoreOracleResult {
  std::size_t kernels = 0;
  double worst_difference = 0.0;
};

/// Masked-forward objective scores vs loss deltas of the structurally
/// pruned model, for every kernel of every conv layer of a trained tinyvgg.
ScoreOracleResult objective_score_oracle(std::uint64_t seed, std::size_t samples_per_class);

// ---- the acceptance dataset and calibrated settings ----------------------

/// "synthetic:classes=3,per_class=200,size=16,channels=1,noise=0.15,seed=<seed>"
std::string acceptance_dataset(std::uint64_t seed);

/// Desk-scale campaign settings for tinyvgg on the acceptance dataset.
pruneforge::SessionConfig acceptance_session(pruneforge::Method method, std::uint64_t seed);

/// Normalized train/test batches of split 0 of the acceptance dataset.
struct SplitData {
  pruneforge::LabeledBatch train;
  pruneforge::LabeledBatch test;
};
SplitData acceptance_split(std::uint64_t seed);

/// Baseline tinyvgg trained exactly as acceptance_session() trains it.
pruneforge::ModelState acceptance_baseline(const SplitData& data, std::uint64_t seed);

// ---- progressive-retraining contract --------------------------------------

struct ProgressiveContract {
  double initial = 0.0;
  double final = 0.0;
  std::size_t epochs = 0;
  bool deeper_layers_bit_identical = false;
};

/// Prunes half of layer 1 of a trained tinyvgg by objective score and runs
/// progressive retraining with the acceptance settings.
ProgressiveContract progressive_contract(std::uint64_t seed, std::size_t epochs);

// ---- end-to-end campaigns -------------------------------------------------

struct CampaignComparison {
  std::uint64_t seed = 0;
  double baseline_accuracy = 0.0;
  double progressive_accuracy = 0.0;  // oPPR, after final retraining
  double complete_accuracy = 0.0;     // oPCR, after final retraining
  double kernel_reduction = 0.0;
};

/// Full oPPR and oPCR campaigns through the session service under one seed.
CampaignComparison compare_campaigns(const std::string& sessions_root, std::uint64_t seed);

// ---- crash safety ----------------------------------------------------------

/// Small, fast campaign settings (10 images per class, 2-epoch phases).
pruneforge::SessionConfig tiny_session_config(pruneforge::Method method, const std::string& id = "s");

/// Runs `body` in a forked child whose session manager SIGKILLs itself the
/// `nth` time `point` is reached; epoch e of any job reports as "epoch:<e>".
/// Returns true if the child died by SIGKILL.
bool crash_child(const std::filesystem::path& root, const std::string& point, int nth,
                 const std::function<void(pruneforge::SessionManager&)>& body);

struct CrashSweep {
  std::size_t transitions = 0;  // (point, occurrence) pairs in a clean campaign
  std::size_t killed = 0;       // children that died at the requested transition
  std::size_t recovered = 0;    // restarts whose completed outputs match the clean run
  std::size_t records_stable = 0;  // restarts that left pre-crash records byte-identical
  std::vector<std::string> failures;
};

/// Kills an automated oPPR campaign at every transition it passes through,
/// restarts it in a fresh manager and compares the finished artifacts with
/// an uninterrupted run. Records differ only in their "job" field.
CrashSweep crash_sweep(const std::filesystem::path& root);

}  // namespace oracle
