#include "saveri/dataset.hpp"

#include <cmath>

namespace saveri {

Vec AssessmentInput::flatten() const {
  std::vector<Vec> parts;
  parts.reserve(desired.size() + 1);
  parts.push_back(state);
  parts.insert(parts.end(), desired.begin(), desired.end());
  return concat(parts);
}

int AssessmentInput::dim() const {
  int d = static_cast<int>(state.size());
  for (const auto& p : desired) d += static_cast<int>(p.size());
  return d;
}

AssessmentInput make_assessment_input(const Vec& state, const Sequence& desired, int start,
                                      int horizon) {
  if (desired.empty()) throw std::invalid_argument("assessment input: empty desired trajectory");
  AssessmentInput x;
  x.state = state;
  x.desired.reserve(static_cast<std::size_t>(horizon));
  const int last = static_cast<int>(desired.size()) - 1;
  for (int h = 0; h < horizon; ++h) {
    x.desired.push_back(desired[static_cast<std::size_t>(std::min(start + h, last))]);
  }
  return x;
}

Sequence Segment::error() const {
  Sequence e;
  e.reserve(realized.size());
  for (std::size_t h = 0; h < realized.size(); ++h) e.push_back(input.desired[h] - realized[h]);
  return e;
}

double unsafety_score(const Episode& episode, int segment_start, double gamma) {
  if (segment_start < 0 || segment_start > episode.termination) {
    throw std::invalid_argument("unsafety_score: segment start " + std::to_string(segment_start) +
                                " outside [0, " + std::to_string(episode.termination) + "]");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("unsafety_score: gamma must lie in [0, 1]");
  }
  if (episode.safe) return 0.0;
  return std::pow(gamma, episode.termination - segment_start);
}

std::vector<int> segment_starts(const Episode& episode, int stride) {
  if (stride < 1) throw std::invalid_argument("segment stride must be >= 1");
  // A safe episode has no desired point at index T, so its last start is T-1.
  const int last = episode.safe ? episode.horizon() - 1 : episode.termination;
  std::vector<int> starts;
  for (int k = 0; k <= last; k += stride) starts.push_back(k);
  return starts;
}

std::vector<Segment> segment_episode(const Episode& episode, int horizon, int stride) {
  if (horizon < 1) throw std::invalid_argument("segment_episode: horizon must be >= 1");
  std::vector<Segment> segments;
  const int last_output = static_cast<int>(episode.outputs.size()) - 1;
  for (int k : segment_starts(episode, stride)) {
    Segment s;
    s.input = make_assessment_input(episode.states[static_cast<std::size_t>(k)], episode.desired,
                                    k, horizon);
    s.realized.reserve(static_cast<std::size_t>(horizon));
    for (int h = 0; h < horizon; ++h) {
      s.realized.push_back(episode.outputs[static_cast<std::size_t>(std::min(k + h, last_output))]);
    }
    s.episode = episode.id;
    s.start = k;
    s.terminal = !episode.safe && k + horizon - 1 >= episode.termination;
    segments.push_back(std::move(s));
  }
  return segments;
}

std::vector<TrainingDatum> build_training_set(const std::vector<Episode>& episodes, int horizon,
                                              double gamma, int stride) {
  if (episodes.empty()) throw InsufficientDataError("build_training_set: no episodes");
  std::vector<std::vector<TrainingDatum>> per_episode(episodes.size());
  parallel_for(episodes.size(), [&](std::size_t i) {
    for (auto& s : segment_episode(episodes[i], horizon, stride)) {
      const double lambda = unsafety_score(episodes[i], s.start, gamma);
      per_episode[i].push_back({std::move(s), lambda});
    }
  });
  std::vector<TrainingDatum> out;
  for (auto& v : per_episode) {
    for (auto& d : v) out.push_back(std::move(d));
  }
  return out;
}

std::vector<FeedbackDatum> build_feedback_set(const Episode& real_episode,
                                              const ClosedLoopSystem& nominal, int horizon,
                                              double gamma, int stride) {
  if (real_episode.initial_state().size() != nominal.state_dim() ||
      real_episode.desired.front().size() != nominal.output_dim()) {
    throw IncompatibleError("build_feedback_set: episode dimensions do not match system " +
                            nominal.name());
  }
  const Disturbance none = nominal.zero_disturbance();
  const Episode replay =
      simulate(nominal, nominal.default_safe_set(), real_episode.initial_state(),
               real_episode.desired, [&](int) { return none; });
  std::vector<FeedbackDatum> out;
  for (auto& s : segment_episode(real_episode, horizon, stride)) {
    FeedbackDatum d;
    d.lambda_real = unsafety_score(real_episode, s.start, gamma);
    // The replay may fail earlier than the real rollout; from there on it is
    // already unsafe.
    d.lambda_nominal = s.start <= replay.termination ? unsafety_score(replay, s.start, gamma) : 1.0;
    d.segment = std::move(s);
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Json segment_row(const Segment& s, double lambda) {
  Json row{{"state", to_json(s.input.state)},
           {"desired", to_json(s.input.desired)},
           {"realized", to_json(s.realized)},
           {"lambda", lambda},
           {"episode", s.episode},
           {"start", s.start}};
  if (s.terminal) row["terminal"] = true;
  return row;
}

Json meta_json(const DatasetMeta& m, std::size_t n) {
  return Json{{"system", m.system},
              {"H", m.horizon},
              {"gamma", m.gamma},
              {"stride", m.stride},
              {"n_t", n}};
}

DatasetMeta meta_from_json(const Json& j, const std::string& source) {
  const Json& m = require(j, "meta", source);
  DatasetMeta meta;
  try {
    meta.system = require(m, "system", source + ": meta").get<std::string>();
    meta.horizon = require(m, "H", source + ": meta").get<int>();
    meta.gamma = require(m, "gamma", source + ": meta").get<double>();
    meta.stride = require(m, "stride", source + ": meta").get<int>();
  } catch (const Json::exception& e) {
    throw InputError(source + ": meta: " + e.what());
  }
  return meta;
}

double score_field(const Json& row, const char* field, const std::string& ctx) {
  const Json& v = require(row, field, ctx);
  if (!v.is_number()) throw InputError(ctx + ": field '" + field + "' must be a number");
  const double x = v.get<double>();
  if (!(x >= 0.0 && x <= 1.0)) throw InputError(ctx + ": field '" + field + "' outside [0, 1]");
  return x;
}

Segment segment_from_row(const Json& row, const std::string& ctx) {
  Segment s;
  s.input.state = vec_from_json(require(row, "state", ctx), ctx + ".state");
  s.input.desired = sequence_from_json(require(row, "desired", ctx), ctx + ".desired");
  s.realized = sequence_from_json(require(row, "realized", ctx), ctx + ".realized");
  try {
    s.episode = require(row, "episode", ctx).get<int>();
    s.start = require(row, "start", ctx).get<int>();
  } catch (const Json::exception& e) {
    throw InputError(ctx + ": " + e.what());
  }
  s.terminal = row.value("terminal", false);
  if (s.realized.size() != s.input.desired.size()) {
    throw InputError(ctx + ": 'realized' and 'desired' lengths differ");
  }
  return s;
}

const Json& data_array(const Json& j, const std::string& source) {
  const Json& data = require(j, "data", source);
  if (!data.is_array()) throw InputError(source + ": 'data' must be an array");
  if (data.empty()) throw InputError(source + ": empty dataset");
  return data;
}

std::string row_context(const std::string& source, std::size_t i) {
  return source + ": data[" + std::to_string(i) + "]";
}

}  // namespace

Json dataset_to_json(const DatasetMeta& meta, const std::vector<TrainingDatum>& data) {
  Json rows = Json::array();
  for (const auto& d : data) rows.push_back(segment_row(d.segment, d.lambda));
  return Json{{"meta", meta_json(meta, data.size())}, {"data", std::move(rows)}};
}

Json dataset_to_json(const DatasetMeta& meta, const std::vector<FeedbackDatum>& data) {
  Json rows = Json::array();
  for (const auto& d : data) {
    Json row = segment_row(d.segment, d.lambda_real);
    row["lambda_hat"] = d.lambda_nominal;
    rows.push_back(std::move(row));
  }
  return Json{{"meta", meta_json(meta, data.size())}, {"data", std::move(rows)}};
}

void save_dataset(const std::filesystem::path& path, const DatasetMeta& meta,
                  const std::vector<TrainingDatum>& data) {
  write_text_file(path, dump_json(dataset_to_json(meta, data)));
}

void save_dataset(const std::filesystem::path& path, const DatasetMeta& meta,
                  const std::vector<FeedbackDatum>& data) {
  write_text_file(path, dump_json(dataset_to_json(meta, data)));
}

TrainingSetFile training_set_from_json(const Json& j, const std::string& source) {
  TrainingSetFile f;
  f.meta = meta_from_json(j, source);
  const Json& data = data_array(j, source);
  f.data.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ctx = row_context(source, i);
    TrainingDatum d;
    d.lambda = score_field(data[i], "lambda", ctx);
    d.segment = segment_from_row(data[i], ctx);
    f.data.push_back(std::move(d));
  }
  return f;
}

FeedbackSetFile feedback_set_from_json(const Json& j, const std::string& source) {
  FeedbackSetFile f;
  f.meta = meta_from_json(j, source);
  const Json& data = data_array(j, source);
  f.data.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ctx = row_context(source, i);
    FeedbackDatum d;
    d.lambda_real = score_field(data[i], "lambda", ctx);
    d.lambda_nominal = score_field(data[i], "lambda_hat", ctx);
    d.segment = segment_from_row(data[i], ctx);
    f.data.push_back(std::move(d));
  }
  return f;
}

TrainingSetFile load_training_set(const std::filesystem::path& path) {
  return training_set_from_json(read_json_file(path), path.string());
}

FeedbackSetFile load_feedback_set(const std::filesystem::path& path) {
  return feedback_set_from_json(read_json_file(path), path.string());
}

}  // namespace saveri
