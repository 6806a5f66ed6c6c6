#include "saveri/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "saveri/metric.hpp"

namespace saveri {

namespace {

constexpr int kBundleFormat = 1;
constexpr const char* kVersion = "0.1.0";

Mat input_matrix(const std::vector<TrainingDatum>& data) {
  const Eigen::Index dim = data.front().segment.input.dim();
  Mat x(static_cast<Eigen::Index>(data.size()), dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = data[i].segment.input.flatten().transpose();
  }
  return x;
}

ClosedLoopSystem nominal_system(const ModelBundle& b) {
  SystemConfig c = b.config.system;
  c.variant = Variant::nominal;
  return make_system(c);
}

}  // namespace

ModelBundle initialize_model(const EpisodeBatch& batch, const Config& cfg, InitSummary* summary) {
  ModelBundle b;
  b.config = cfg;
  b.config.system = batch.system;
  b.config.episode_horizon = batch.horizon;

  b.training = build_training_set(batch.episodes, cfg.horizon, cfg.gamma, cfg.stride);
  b.training_meta = {batch.system.name, cfg.horizon, cfg.gamma, cfg.stride};
  const long n_t = static_cast<long>(b.training.size());
  const long needed = static_cast<long>(std::ceil(3.0 * cfg.tsne.perplexity)) + 1;
  if (n_t < needed) {
    std::ostringstream msg;
    msg << "only " << n_t << " training data; perplexity " << cfg.tsne.perplexity
        << " needs at least " << needed << " (generate more episodes or lower the stride)";
    throw InsufficientDataError(msg.str());
  }

  const DistanceMatrix dist = distance_matrix(b.training, cfg.delta_lambda);
  const EmbeddedSet emb = tsne_embed(dist, cfg.tsne);
  b.tsne_coords = emb.coords;

  const Mat inputs = input_matrix(b.training);
  b.net = train_mapping(inputs, emb.coords, cfg.network);
  const Mat mapped = b.net.predict_batch(inputs);

  const GridSpec spec = cfg.grid.fixed_length
                            ? grid_fixed_length(mapped, cfg.grid.cells, cfg.grid.cell_length)
                            : grid_from_extent(mapped, cfg.grid.cells, cfg.grid.margin);
  b.grid = GridModel(spec);
  for (std::size_t i = 0; i < b.training.size(); ++i) {
    b.grid.add_training(mapped.row(static_cast<Eigen::Index>(i)).transpose(), b.training[i].lambda,
                        cfg.belief.mu_initial);
  }
  b.grid.recompute_all(cfg.belief);
  b.gp = make_discrepancy_gp(mapped, cfg.adapt);

  const double diag = (emb.coords.colwise().maxCoeff() - emb.coords.colwise().minCoeff()).norm();
  int populated = 0;
  for (const auto& c : b.grid.cells()) populated += c.prior.is_empty() ? 0 : 1;

  b.meta = Json{{"format", kBundleFormat},
                {"version", kVersion},
                {"system", batch.system.name},
                {"input_dim", b.net.input_dim()},
                {"output_dim", b.net.output_dim()},
                {"n_t", n_t},
                {"seeds",
                 {{"data", batch.seed}, {"tsne", cfg.tsne.seed}, {"network", cfg.network.seed}}},
                {"dataset_digest", hex64(fnv1a(dump_json(to_json(batch))))},
                {"kl", emb.kl},
                {"kl_exaggeration_end", emb.kl_exaggeration_end},
                {"fit_rmse", b.net.training_rmse},
                {"embedding_diagonal", diag},
                {"n_f", 0},
                {"adaptations", Json::array()}};

  if (summary) {
    summary->n_t = n_t;
    summary->kl = emb.kl;
    summary->kl_exaggeration_end = emb.kl_exaggeration_end;
    summary->fit_rmse = b.net.training_rmse;
    summary->embedding_diagonal = diag;
    summary->populated_cells = populated;
  }
  return b;
}

Json to_json(const InitSummary& s) {
  return Json{{"n_t", s.n_t},
              {"kl", s.kl},
              {"kl_exaggeration_end", s.kl_exaggeration_end},
              {"fit_rmse", s.fit_rmse},
              {"embedding_diagonal", s.embedding_diagonal},
              {"populated_cells", s.populated_cells}};
}

std::vector<FeedbackDatum> collect_feedback(const ModelBundle& bundle, const ClosedLoopSystem& real,
                                            int episodes, std::uint64_t seed) {
  check_compatible(bundle, real);
  if (episodes <= 0) return {};
  const ClosedLoopSystem nominal = nominal_system(bundle);
  const Config& cfg = bundle.config;
  const EpisodeBatch batch = generate_episodes(real, episodes, cfg.episode_horizon, seed, true);
  std::vector<std::vector<FeedbackDatum>> per(batch.episodes.size());
  parallel_for(per.size(), [&](std::size_t i) {
    per[i] = build_feedback_set(batch.episodes[i], nominal, cfg.horizon, cfg.gamma, cfg.stride);
  });
  std::vector<FeedbackDatum> out;
  for (auto& p : per) out.insert(out.end(), p.begin(), p.end());
  return out;
}

AdaptSummary adapt_with_feedback(ModelBundle& bundle, const std::vector<FeedbackDatum>& feedback) {
  AdaptSummary s;
  if (feedback.empty()) return s;
  OnlineAdapter adapter(bundle.grid, bundle.gp, bundle.net, bundle.config.adapt,
                        bundle.config.belief);
  for (const auto& d : feedback) adapter.push(d);
  adapter.flush();
  bundle.grid = *adapter.grid();
  bundle.gp = adapter.gp();
  s.feedback = static_cast<long>(feedback.size());
  s.steps = adapter.steps();
  s.log = adapter.log();
  bundle.meta["n_f"] = bundle.grid.feedback_count();
  return s;
}

AdaptSummary adapt_model(ModelBundle& bundle, const ClosedLoopSystem& real, int episodes,
                         std::uint64_t seed) {
  const auto feedback = collect_feedback(bundle, real, episodes, seed);
  AdaptSummary s = adapt_with_feedback(bundle, feedback);
  s.episodes = std::max(episodes, 0);
  if (s.feedback > 0) {
    bundle.meta["adaptations"].push_back(Json{{"seed", seed},
                                              {"episodes", s.episodes},
                                              {"system", to_json(real.config())},
                                              {"feedback", s.feedback},
                                              {"steps", s.steps}});
  }
  return s;
}

AssessmentInput assessment_input_from_json(const Json& j, const ModelBundle& bundle) {
  if (!j.is_object()) throw InputError("assessment input: expected an object");
  const ClosedLoopSystem sys = nominal_system(bundle);
  const Vec state = vec_from_json(require(j, "state", "assessment input"), "assessment input.state");
  const Sequence desired =
      sequence_from_json(require(j, "desired", "assessment input"), "assessment input.desired");
  if (state.size() != sys.state_dim()) {
    throw InputError("assessment input: state has " + std::to_string(state.size()) +
                     " entries, system '" + sys.name() + "' has " +
                     std::to_string(sys.state_dim()));
  }
  if (desired.empty()) throw InputError("assessment input: desired trajectory is empty");
  for (const auto& p : desired) {
    if (p.size() != sys.output_dim()) {
      throw InputError("assessment input: desired points must have " +
                       std::to_string(sys.output_dim()) + " entries");
    }
  }
  if (!all_finite(state) || !all_finite(desired)) {
    throw InputError("assessment input: values must be finite");
  }
  return make_assessment_input(state, desired, 0, bundle.config.horizon);
}

Assessment assess_input(const ModelBundle& bundle, const AssessmentInput& x) {
  return assess(bundle.grid, bundle.net, x);
}

Json to_json(const Assessment& a) {
  return Json{{"gamma", a.gamma},
              {"b_safe", a.bba.safe},
              {"b_unsafe", a.bba.unsafe},
              {"mu", a.bba.mu},
              {"cell", Json::array({a.cell.ix, a.cell.iy})},
              {"out_of_grid", a.cell.out_of_grid},
              {"no_estimate", a.no_estimate},
              {"embedding", to_json(a.embedding)}};
}

RunTrace run_episode(const ModelBundle& bundle, const ClosedLoopSystem& system, int horizon,
                     std::uint64_t seed, const RunOptions& options) {
  if (horizon < 1) throw std::invalid_argument("run: horizon must be >= 1");
  const int h = bundle.config.horizon;
  const SafeSet& safe_set = system.default_safe_set();
  Rng rng(seed);
  const Task task = system.sample_task(rng);
  Sequence reference = plan_trajectory(system.output(task.initial_state), task.goal, horizon);

  RunTrace t;
  t.seed = seed;
  t.termination = horizon;
  Vec state = task.initial_state;
  for (int k = 0; k < horizon; ++k) {
    const Assessment a =
        assess(bundle.grid, bundle.net, make_assessment_input(state, reference, k, h));
    t.gamma.push_back(a.gamma);
    if (t.trigger_step < 0 && a.gamma < options.threshold) {
      t.trigger_step = k;
      if (options.recovery) {
        // Hold the current output for the rest of the episode.
        const Vec hold = system.output(state);
        for (int r = k; r < horizon; ++r) reference[static_cast<std::size_t>(r)] = hold;
      }
    }
    Disturbance w = system.sample_disturbance(rng, options.disturbances);
    if (options.pulse && options.pulse->step == k) w.impulse += options.pulse->impulse;
    state = system.step(state, reference[static_cast<std::size_t>(k)], w);
    const bool finite = state.allFinite();
    if (!finite || !is_safe(state, safe_set)) {
      t.safe = false;
      t.diverged = !finite;
      t.termination = k + 1;
      break;
    }
  }
  return t;
}

std::vector<RunTrace> run_episodes(const ModelBundle& bundle, const ClosedLoopSystem& system,
                                   int count, std::uint64_t seed, const RunOptions& options) {
  check_compatible(bundle, system);
  std::vector<RunTrace> traces(static_cast<std::size_t>(std::max(count, 0)));
  parallel_for(traces.size(), [&](std::size_t i) {
    traces[i] = run_episode(bundle, system, bundle.config.episode_horizon, derive_seed(seed, i),
                            options);
    traces[i].episode = static_cast<int>(i);
  });
  return traces;
}

Json to_json(const RunTrace& t) {
  Json gamma = Json::array();
  for (double g : t.gamma) gamma.push_back(g);
  return Json{{"episode", t.episode},
              {"seed", t.seed},
              {"trigger_step", t.trigger_step < 0 ? Json() : Json(t.trigger_step)},
              {"termination", t.termination},
              {"safe", t.safe},
              {"diverged", t.diverged},
              {"gamma", std::move(gamma)}};
}

EvalReport evaluate(const ModelBundle& bundle, const ClosedLoopSystem& system, int episodes,
                    double threshold, std::uint64_t seed) {
  check_compatible(bundle, system);
  const int h = bundle.config.horizon;
  struct Outcome {
    double gamma0 = 0.0;
    bool no_estimate = false;
    bool safe = true;
    int trigger = -1;
    int termination = 0;
  };
  std::vector<Outcome> out(static_cast<std::size_t>(std::max(episodes, 0)));
  parallel_for(out.size(), [&](std::size_t i) {
    const Episode e = rollout_episode(system, system.default_safe_set(),
                                      bundle.config.episode_horizon, derive_seed(seed, i));
    Outcome& o = out[i];
    o.safe = e.safe;
    o.termination = e.termination;
    for (int k = 0; k < e.termination; ++k) {
      const Assessment a = assess(
          bundle.grid, bundle.net,
          make_assessment_input(e.states[static_cast<std::size_t>(k)], e.desired, k, h));
      if (k == 0) {
        o.gamma0 = a.gamma;
        o.no_estimate = a.no_estimate;
      }
      if (a.gamma < threshold) {
        o.trigger = k;
        break;
      }
    }
  });

  EvalReport r;
  r.episodes = static_cast<long>(out.size());
  r.threshold = threshold;
  std::vector<double> leads;
  double brier = 0.0;
  for (const auto& o : out) {
    const bool predicted_safe = o.gamma0 >= threshold;
    if (o.safe) {
      (predicted_safe ? r.safe_predicted_safe : r.safe_predicted_unsafe)++;
      if (o.trigger >= 0) ++r.safe_false_triggers;
    } else {
      (predicted_safe ? r.unsafe_predicted_safe : r.unsafe_predicted_unsafe)++;
      if (o.trigger >= 0 && o.trigger < o.termination) {
        ++r.unsafe_triggered_in_time;
        leads.push_back(static_cast<double>(o.termination - o.trigger));
      }
    }
    r.no_estimate += o.no_estimate ? 1 : 0;
    const double label = o.safe ? 1.0 : 0.0;
    brier += (o.gamma0 - label) * (o.gamma0 - label);
  }
  const long safe = r.safe_predicted_safe + r.safe_predicted_unsafe;
  const long unsafe = r.unsafe_predicted_unsafe + r.unsafe_predicted_safe;
  r.safe_accuracy = safe > 0 ? static_cast<double>(r.safe_predicted_safe) / safe : 0.0;
  r.unsafe_accuracy = unsafe > 0 ? static_cast<double>(r.unsafe_predicted_unsafe) / unsafe : 0.0;
  r.brier = out.empty() ? 0.0 : brier / static_cast<double>(out.size());
  if (!leads.empty()) {
    std::sort(leads.begin(), leads.end());
    const std::size_t m = leads.size();
    r.lead_median = m % 2 ? leads[m / 2] : 0.5 * (leads[m / 2 - 1] + leads[m / 2]);
    double sum = 0.0;
    for (double l : leads) sum += l;
    r.lead_mean = sum / static_cast<double>(m);
  }
  r.config = to_json(bundle.config);
  return r;
}

Json to_json(const EvalReport& r) {
  return Json{{"episodes", r.episodes},
              {"threshold", r.threshold},
              {"confusion",
               {{"safe_predicted_safe", r.safe_predicted_safe},
                {"safe_predicted_unsafe", r.safe_predicted_unsafe},
                {"unsafe_predicted_unsafe", r.unsafe_predicted_unsafe},
                {"unsafe_predicted_safe", r.unsafe_predicted_safe}}},
              {"safe_accuracy", r.safe_accuracy},
              {"unsafe_accuracy", r.unsafe_accuracy},
              {"brier", r.brier},
              {"no_estimate", r.no_estimate},
              {"trigger",
               {{"unsafe_triggered_in_time", r.unsafe_triggered_in_time},
                {"lead_median", r.lead_median},
                {"lead_mean", r.lead_mean},
                {"safe_false_triggers", r.safe_false_triggers}}},
              {"config", r.config}};
}

std::string embedding_csv(const ModelBundle& bundle) {
  std::ostringstream out;
  out.precision(17);
  const Eigen::Index dims = bundle.tsne_coords.cols();
  out << "index,episode,start,lambda";
  for (Eigen::Index d = 0; d < dims; ++d) out << ",tsne_" << d;
  for (Eigen::Index d = 0; d < dims; ++d) out << ",y_" << d;
  out << '\n';
  const auto& members = bundle.grid.training();
  for (std::size_t i = 0; i < bundle.training.size(); ++i) {
    const auto& t = bundle.training[i];
    out << i << ',' << t.segment.episode << ',' << t.segment.start << ',' << t.lambda;
    for (Eigen::Index d = 0; d < dims; ++d) out << ',' << bundle.tsne_coords(static_cast<Eigen::Index>(i), d);
    for (Eigen::Index d = 0; d < dims; ++d) out << ',' << members[i].y[d];
    out << '\n';
  }
  return out.str();
}

DistanceMatrix bundle_distances(const ModelBundle& bundle) {
  return distance_matrix(bundle.training, bundle.config.delta_lambda);
}

}  // namespace saveri
