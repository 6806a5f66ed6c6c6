#pragma once

// End-to-end operations behind the command-line tool: offline
// initialization, online adaptation, assessment, monitored runs and
// evaluation.

#include <cstdint>
#include <optional>
#include <vector>

#include "saveri/bundle.hpp"

namespace saveri {

struct InitSummary {
  long n_t = 0;
  double kl = 0.0;
  double kl_exaggeration_end = 0.0;
  double fit_rmse = 0.0;
  double embedding_diagonal = 0.0;
  int populated_cells = 0;  // cells with a non-empty prior
};

/// Training set -> distance matrix -> t-SNE -> mapping network -> grid
/// priors. Throws InsufficientDataError when n_t < 3 * perplexity + 1.
ModelBundle initialize_model(const EpisodeBatch& data, const Config& cfg,
                             InitSummary* summary = nullptr);

Json to_json(const InitSummary& s);

struct AdaptSummary {
  long episodes = 0;
  long feedback = 0;
  long steps = 0;
  std::vector<Json> log;
};

/// Rolls out `episodes` real-system episodes, turns them into feedback data
/// against the bundle's nominal system and adapts the bundle every k_u data.
/// With zero episodes the bundle is left as is.
AdaptSummary adapt_model(ModelBundle& bundle, const ClosedLoopSystem& real, int episodes,
                         std::uint64_t seed);

/// Same, from already built feedback data.
AdaptSummary adapt_with_feedback(ModelBundle& bundle, const std::vector<FeedbackDatum>& feedback);

/// Feedback data of `episodes` real rollouts, in episode order.
std::vector<FeedbackDatum> collect_feedback(const ModelBundle& bundle, const ClosedLoopSystem& real,
                                            int episodes, std::uint64_t seed);

/// Parses {"state": [...], "desired": [[...], ...]}; the desired sequence
/// is cut or padded to the bundle's horizon.
AssessmentInput assessment_input_from_json(const Json& j, const ModelBundle& bundle);
Assessment assess_input(const ModelBundle& bundle, const AssessmentInput& x);
Json to_json(const Assessment& a);

struct RunOptions {
  double threshold = 0.6;
  /// Switch to the hold-position reference once triggered. When false the
  /// trigger is only recorded and the rollout matches rollout_episode().
  bool recovery = true;
  bool disturbances = true;
  std::optional<ForcedPulse> pulse;
};

struct RunTrace {
  int episode = 0;
  std::uint64_t seed = 0;
  std::vector<double> gamma;  // Gamma at every assessed step
  int trigger_step = -1;
  int termination = 0;
  bool safe = true;
  bool diverged = false;
};

/// Receding-horizon monitoring of one episode on `system`.
RunTrace run_episode(const ModelBundle& bundle, const ClosedLoopSystem& system, int horizon,
                     std::uint64_t seed, const RunOptions& options);
std::vector<RunTrace> run_episodes(const ModelBundle& bundle, const ClosedLoopSystem& system,
                                   int count, std::uint64_t seed, const RunOptions& options);
Json to_json(const RunTrace& t);

struct EvalReport {
  long episodes = 0;
  double threshold = 0.0;
  long safe_predicted_safe = 0;
  long safe_predicted_unsafe = 0;
  long unsafe_predicted_unsafe = 0;
  long unsafe_predicted_safe = 0;
  double safe_accuracy = 0.0;
  double unsafe_accuracy = 0.0;
  double brier = 0.0;
  long no_estimate = 0;
  // Receding-horizon trigger statistics without recovery.
  long unsafe_triggered_in_time = 0;
  double lead_median = 0.0;
  double lead_mean = 0.0;
  long safe_false_triggers = 0;
  Json config;
};

/// Rolls out fresh episodes, assesses each at k = 0 and compares the
/// prediction Gamma >= threshold with the realized outcome.
EvalReport evaluate(const ModelBundle& bundle, const ClosedLoopSystem& system, int episodes,
                    double threshold, std::uint64_t seed);
Json to_json(const EvalReport& r);

/// Rows: index, episode, start, lambda, t-SNE coordinates, mapped coordinates.
std::string embedding_csv(const ModelBundle& bundle);
DistanceMatrix bundle_distances(const ModelBundle& bundle);

}  // namespace saveri
