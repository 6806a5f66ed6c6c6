#include "saveri/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace saveri {

DiscrepancyGp::DiscrepancyGp(GpHyper hyper, std::size_t capacity)
    : hyper_(hyper), capacity_(capacity) {
  if (!(hyper_.length_scale > 0.0) || !(hyper_.signal_variance > 0.0) ||
      !(hyper_.noise_variance >= 0.0)) {
    throw std::invalid_argument("GP hyperparameters must be positive");
  }
  if (capacity_ < 1) throw std::invalid_argument("GP capacity must be >= 1");
}

double DiscrepancyGp::kernel(const Vec& a, const Vec& b) const {
  const double r2 = (a - b).squaredNorm();
  return hyper_.signal_variance * std::exp(-0.5 * r2 / (hyper_.length_scale * hyper_.length_scale));
}

void DiscrepancyGp::add(const Vec& y, double target) {
  if (!all_finite(y)) throw std::invalid_argument("GP input must be finite");
  if (!(target >= 0.0 && target <= 1.0)) throw std::invalid_argument("GP target must lie in [0, 1]");
  if (!inputs_.empty() && inputs_.front().size() != y.size()) {
    throw std::invalid_argument("GP input dimension changed");
  }
  inputs_.push_back(y);
  targets_.push_back(target);
  while (targets_.size() > capacity_) {
    inputs_.pop_front();
    targets_.pop_front();
    ++dropped_;
  }
  fitted_ = false;
}

void DiscrepancyGp::fit() {
  fitted_ = false;
  jitter_ = 0.0;
  const Eigen::Index n = static_cast<Eigen::Index>(targets_.size());
  if (n == 0) return;
  Mat k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = hyper_.signal_variance + hyper_.noise_variance;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = kernel(inputs_[static_cast<std::size_t>(i)], inputs_[static_cast<std::size_t>(j)]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = targets_[static_cast<std::size_t>(i)];

  const double ladder[] = {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
  for (double jitter : ladder) {
    Mat kj = k;
    kj.diagonal().array() += jitter;
    llt_.compute(kj);
    if (llt_.info() == Eigen::Success) {
      jitter_ = jitter;
      alpha_ = llt_.solve(y);
      fitted_ = true;
      return;
    }
  }
  std::ostringstream msg;
  msg << "GP kernel matrix is not positive definite with jitter 1e-6 (" << n << " points)";
  throw NumericalError(msg.str());
}

double DiscrepancyGp::log_marginal_likelihood() const {
  if (!fitted_) return 0.0;
  const Eigen::Index n = alpha_.size();
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = targets_[static_cast<std::size_t>(i)];
  const Mat& l = llt_.matrixLLT();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * y.dot(alpha_) - 0.5 * log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

void DiscrepancyGp::fit_grid_search(double reference_length) {
  if (targets_.empty()) return;
  const GpHyper base = hyper_;
  GpHyper best = base;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (double lf : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    for (double sv : {0.0625, 0.25, 1.0}) {
      hyper_ = {reference_length * lf, sv, base.noise_variance};
      try {
        fit();
      } catch (const NumericalError&) {
        continue;
      }
      const double lml = log_marginal_likelihood();
      if (lml > best_lml) {
        best_lml = lml;
        best = hyper_;
      }
    }
  }
  hyper_ = best;
  fit();
}

GpPrediction DiscrepancyGp::predict(const Vec& y) const {
  Mat row(1, y.size());
  row.row(0) = y.transpose();
  return predict_batch(row).front();
}

std::vector<GpPrediction> DiscrepancyGp::predict_batch(const Mat& ys) const {
  const Eigen::Index m = ys.rows();
  std::vector<GpPrediction> out(static_cast<std::size_t>(m));
  const double prior_var = hyper_.signal_variance;
  if (!fitted_ || targets_.empty()) {
    for (auto& p : out) p.sd = std::sqrt(prior_var);
    return out;
  }
  const Eigen::Index n = alpha_.size();
  Mat ks(n, m);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t q) {
    const Vec yq = ys.row(static_cast<Eigen::Index>(q)).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      ks(i, static_cast<Eigen::Index>(q)) = kernel(inputs_[static_cast<std::size_t>(i)], yq);
    }
  });
  const Vec mean = ks.transpose() * alpha_;
  const Mat v = llt_.matrixL().solve(ks);
  for (Eigen::Index q = 0; q < m; ++q) {
    const double var = std::max(prior_var - v.col(q).squaredNorm(), 0.0);
    auto& p = out[static_cast<std::size_t>(q)];
    p.raw_mean = mean[q];
    p.mean = std::clamp(mean[q], 0.0, 1.0);
    p.sd = std::sqrt(var);
  }
  return out;
}

Json DiscrepancyGp::to_json() const {
  Json inputs = Json::array();
  for (const auto& y : inputs_) inputs.push_back(saveri::to_json(y));
  Json targets = Json::array();
  for (double t : targets_) targets.push_back(t);
  return Json{{"kernel", "squared_exponential"},
              {"length_scale", hyper_.length_scale},
              {"signal_variance", hyper_.signal_variance},
              {"noise_variance", hyper_.noise_variance},
              {"capacity", capacity_},
              {"dropped", dropped_},
              {"inputs", std::move(inputs)},
              {"targets", std::move(targets)}};
}

DiscrepancyGp DiscrepancyGp::from_json(const Json& j) {
  const std::string ctx = "gpr";
  GpHyper h;
  h.length_scale = require(j, "length_scale", ctx).get<double>();
  h.signal_variance = require(j, "signal_variance", ctx).get<double>();
  h.noise_variance = require(j, "noise_variance", ctx).get<double>();
  DiscrepancyGp gp(h, require(j, "capacity", ctx).get<std::size_t>());
  const Json& inputs = require(j, "inputs", ctx);
  const Json& targets = require(j, "targets", ctx);
  if (!inputs.is_array() || !targets.is_array() || inputs.size() != targets.size()) {
    throw InputError(ctx + ": inputs and targets must be arrays of equal length");
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    gp.add(vec_from_json(inputs[i], ctx + ".inputs[" + std::to_string(i) + "]"),
           targets[i].get<double>());
  }
  gp.dropped_ = j.value("dropped", 0L);
  gp.fit();
  return gp;
}

Json to_json(const AdaptConfig& c) {
  return Json{{"sigma_threshold", c.sigma_threshold},
              {"mu_min", c.mu_min},
              {"k_u", c.k_u},
              {"gp_capacity", c.gp_capacity},
              {"gp_length_fraction", c.gp_length_fraction},
              {"gp_signal_variance", c.gp_signal_variance},
              {"gp_noise_variance", c.gp_noise_variance},
              {"gp_grid_search", c.gp_grid_search}};
}

AdaptConfig adapt_config_from_json(const Json& j) {
  AdaptConfig c;
  c.sigma_threshold = j.value("sigma_threshold", c.sigma_threshold);
  c.mu_min = j.value("mu_min", c.mu_min);
  c.k_u = j.value("k_u", c.k_u);
  c.gp_capacity = j.value("gp_capacity", c.gp_capacity);
  c.gp_length_fraction = j.value("gp_length_fraction", c.gp_length_fraction);
  c.gp_signal_variance = j.value("gp_signal_variance", c.gp_signal_variance);
  c.gp_noise_variance = j.value("gp_noise_variance", c.gp_noise_variance);
  c.gp_grid_search = j.value("gp_grid_search", c.gp_grid_search);
  return c;
}

void validate(const AdaptConfig& adapt, const BeliefConfig& belief) {
  const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(adapt.mu_min) || !unit(belief.mu_initial) || !(adapt.mu_min < belief.mu_initial)) {
    throw InputError("config: need 0 <= mu_min < mu_initial <= 1");
  }
  if (!(adapt.sigma_threshold >= 0.0)) throw InputError("config: sigma_threshold must be >= 0");
  if (adapt.k_u < 1) throw InputError("config: k_u must be >= 1");
  if (adapt.gp_capacity < 1) throw InputError("config: gp_capacity must be >= 1");
  if (!(belief.alpha >= 0.0) || !(belief.beta > 0.0 && belief.beta <= 1.0)) {
    throw InputError("config: need alpha >= 0 and 0 < beta <= 1");
  }
}

DiscrepancyGp make_discrepancy_gp(const Mat& embedding, const AdaptConfig& cfg) {
  double diag = 1.0;
  if (embedding.rows() > 0) {
    diag = (embedding.colwise().maxCoeff() - embedding.colwise().minCoeff()).norm();
    if (!(diag > 0.0)) diag = 1.0;
  }
  return DiscrepancyGp({cfg.gp_length_fraction * diag, cfg.gp_signal_variance, cfg.gp_noise_variance},
                       cfg.gp_capacity);
}

double updated_uncertainty(const GpPrediction& p, const AdaptConfig& adapt, double mu_initial) {
  if (p.sd <= adapt.sigma_threshold) return adapt.mu_min + p.mean * (1.0 - adapt.mu_min);
  return mu_initial;
}

long update_training_uncertainty(GridModel& grid, const DiscrepancyGp& gp,
                                 const AdaptConfig& adapt, const BeliefConfig& belief) {
  auto& members = grid.training();
  if (members.empty()) return 0;
  Mat ys(static_cast<Eigen::Index>(members.size()), members.front().y.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    ys.row(static_cast<Eigen::Index>(i)) = members[i].y.transpose();
  }
  const auto pred = gp.predict_batch(ys);
  long gated = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    members[i].mu = updated_uncertainty(pred[i], adapt, belief.mu_initial);
    if (pred[i].sd <= adapt.sigma_threshold) ++gated;
  }
  return gated;
}

Json adaptation_step(GridModel& grid, DiscrepancyGp& gp, const MappingNetwork& net,
                     std::span<const FeedbackDatum> batch, const AdaptConfig& adapt,
                     const BeliefConfig& belief, long step_index) {
  if (batch.empty()) return Json();
  const std::vector<CellState> before = grid.cells();

  long used = 0, skipped = 0;
  for (const auto& d : batch) {
    const Vec x = d.segment.input.flatten();
    Vec y;
    if (all_finite(x)) y = net.predict(x);
    if (y.size() == 0 || !all_finite(y)) {
      warn("adaptation: skipping feedback datum (episode " + std::to_string(d.segment.episode) +
           ", start " + std::to_string(d.segment.start) + ") with non-finite embedding");
      ++skipped;
      continue;
    }
    gp.add(y, std::abs(d.lambda_real - d.lambda_nominal));
    grid.add_feedback(y, d.lambda_real, d.lambda_nominal);
    ++used;
  }
  if (adapt.gp_grid_search) {
    gp.fit_grid_search(gp.hyper().length_scale);
  } else {
    gp.fit();
  }
  const long reweighted = update_training_uncertainty(grid, gp, adapt, belief);
  grid.recompute_all(belief);

  Json deltas = Json::array();
  const auto& after = grid.cells();
  const int nx = grid.spec().nx;
  for (std::size_t c = 0; c < after.size(); ++c) {
    const double delta = after[c].combined.safe - before[c].combined.safe;
    if (std::abs(delta) > 0.05) {
      deltas.push_back(Json{{"ix", static_cast<int>(c) % nx},
                            {"iy", static_cast<int>(c) / nx},
                            {"b_safe_before", before[c].combined.safe},
                            {"b_safe_after", after[c].combined.safe}});
    }
  }
  return Json{{"step", step_index},
              {"n_f", grid.feedback_count()},
              {"batch", static_cast<long>(batch.size())},
              {"skipped", skipped},
              {"gp",
               {{"length_scale", gp.hyper().length_scale},
                {"signal_variance", gp.hyper().signal_variance},
                {"noise_variance", gp.hyper().noise_variance},
                {"jitter", gp.jitter()},
                {"size", gp.size()},
                {"dropped", gp.dropped()}}},
              {"reweighted", reweighted},
              {"cell_deltas", std::move(deltas)}};
}

OnlineAdapter::OnlineAdapter(GridModel grid, DiscrepancyGp gp, const MappingNetwork& net,
                             AdaptConfig adapt, BeliefConfig belief)
    : working_(grid),
      gp_(std::move(gp)),
      net_(net),
      adapt_(adapt),
      belief_(belief),
      published_(std::move(grid)) {
  validate(adapt_, belief_);
}

void OnlineAdapter::push(const FeedbackDatum& d) {
  pending_.push_back(d);
  if (static_cast<int>(pending_.size()) >= adapt_.k_u) run_step();
}

void OnlineAdapter::flush() {
  if (!pending_.empty()) run_step();
}

void OnlineAdapter::run_step() {
  Json record = adaptation_step(working_, gp_, net_, pending_, adapt_, belief_, steps_ + 1);
  pending_.clear();
  if (record.is_null()) return;
  ++steps_;
  published_.publish(working_);
  log_.push_back(std::move(record));
}

}  // namespace saveri
