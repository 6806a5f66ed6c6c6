#pragma once

// Segmentation of episodes into safety-assessment data and unsafety scoring.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "saveri/common.hpp"
#include "saveri/dynamics.hpp"

namespace saveri {

/// Current state followed by the next H desired output points.
struct AssessmentInput {
  Vec state;
  Sequence desired;

  Vec flatten() const;
  int dim() const;
};

/// Builds x_k from a state and a desired trajectory, padding past its end
/// with the last point.
AssessmentInput make_assessment_input(const Vec& state, const Sequence& desired, int start,
                                      int horizon);

struct Segment {
  AssessmentInput input;
  Sequence realized;  // H realized outputs aligned with input.desired
  int episode = 0;
  int start = 0;
  bool terminal = false;  // realized window reached the episode's failure

  /// desired - realized, elementwise.
  Sequence error() const;
};

struct TrainingDatum {
  Segment segment;
  double lambda = 0.0;
};

struct FeedbackDatum {
  Segment segment;
  double lambda_real = 0.0;     // from the real rollout
  double lambda_nominal = 0.0;  // from the nominal replay
};

/// gamma^(T' - start) for unsafe episodes, 0 for safe ones.
double unsafety_score(const Episode& episode, int segment_start, double gamma);

/// Segment start indices: 0, stride, ... up to T' for unsafe episodes and
/// below T for safe ones.
std::vector<int> segment_starts(const Episode& episode, int stride);
std::vector<Segment> segment_episode(const Episode& episode, int horizon, int stride);

std::vector<TrainingDatum> build_training_set(const std::vector<Episode>& episodes, int horizon,
                                              double gamma, int stride);

/// Replays `nominal` from the real episode's initial state along its desired
/// trajectory without disturbances and scores both rollouts per segment.
std::vector<FeedbackDatum> build_feedback_set(const Episode& real_episode,
                                              const ClosedLoopSystem& nominal, int horizon,
                                              double gamma, int stride);

struct DatasetMeta {
  std::string system;
  int horizon = 10;
  double gamma = 0.99;
  int stride = 1;
};

void save_dataset(const std::filesystem::path& path, const DatasetMeta& meta,
                  const std::vector<TrainingDatum>& data);
void save_dataset(const std::filesystem::path& path, const DatasetMeta& meta,
                  const std::vector<FeedbackDatum>& data);
Json dataset_to_json(const DatasetMeta& meta, const std::vector<TrainingDatum>& data);
Json dataset_to_json(const DatasetMeta& meta, const std::vector<FeedbackDatum>& data);

struct TrainingSetFile {
  DatasetMeta meta;
  std::vector<TrainingDatum> data;
};
struct FeedbackSetFile {
  DatasetMeta meta;
  std::vector<FeedbackDatum> data;
};

TrainingSetFile load_training_set(const std::filesystem::path& path);
FeedbackSetFile load_feedback_set(const std::filesystem::path& path);
TrainingSetFile training_set_from_json(const Json& j, const std::string& source);
FeedbackSetFile feedback_set_from_json(const Json& j, const std::string& source);

}  // namespace saveri
