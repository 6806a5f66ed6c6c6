#pragma once

// Online adaptation: a Gaussian-process model of the nominal/real label
// discrepancy over the embedding, and the grid update it drives.

#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saveri/belief.hpp"
#include "saveri/common.hpp"
#include "saveri/dataset.hpp"
#include "saveri/json_io.hpp"
#include "saveri/mapping_network.hpp"

namespace saveri {

struct GpHyper {
  double length_scale = 1.0;
  double signal_variance = 0.25;
  double noise_variance = 1e-4;
};

struct GpPrediction {
  double mean = 0.0;      // clamped to [0, 1]
  double raw_mean = 0.0;  // unclamped posterior mean
  double sd = 0.0;
};

/// Exact GP regression with a squared-exponential kernel and zero prior mean.
class DiscrepancyGp {
 public:
  DiscrepancyGp() = default;
  DiscrepancyGp(GpHyper hyper, std::size_t capacity);

  const GpHyper& hyper() const { return hyper_; }
  void set_hyper(const GpHyper& h) { hyper_ = h; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return targets_.size(); }
  const std::deque<Vec>& inputs() const { return inputs_; }
  const std::deque<double>& targets() const { return targets_; }
  /// Jitter that had to be added on the diagonal in the last fit.
  double jitter() const { return jitter_; }
  /// Points discarded so far because the capacity was reached.
  long dropped() const { return dropped_; }

  /// Appends a pair; beyond capacity the oldest pair is discarded. Call fit()
  /// afterwards.
  void add(const Vec& y, double target);

  /// Factorizes K + noise I from scratch, adding up to 1e-6 of jitter if the
  /// factorization fails. Throws NumericalError when that is not enough.
  void fit();

  /// Picks length scale and signal variance from a fixed grid around
  /// `reference_length` by log marginal likelihood, then refits.
  void fit_grid_search(double reference_length);

  double log_marginal_likelihood() const;

  GpPrediction predict(const Vec& y) const;
  /// Predictions for every row of `ys`, sharing one triangular solve.
  std::vector<GpPrediction> predict_batch(const Mat& ys) const;
  double prior_sd() const { return std::sqrt(hyper_.signal_variance); }

  Json to_json() const;
  /// Restores data and hyperparameters and refits.
  static DiscrepancyGp from_json(const Json& j);

 private:
  double kernel(const Vec& a, const Vec& b) const;

  GpHyper hyper_;
  std::size_t capacity_ = 2000;
  std::deque<Vec> inputs_;
  std::deque<double> targets_;
  long dropped_ = 0;
  double jitter_ = 0.0;

  bool fitted_ = false;
  Eigen::LLT<Mat> llt_;
  Vec alpha_;
};

struct AdaptConfig {
  double sigma_threshold = 0.3;
  double mu_min = 0.1;
  int k_u = 40;
  std::size_t gp_capacity = 2000;
  double gp_length_fraction = 0.1;  // of the embedding bounding-box diagonal
  double gp_signal_variance = 0.25;
  double gp_noise_variance = 1e-4;
  bool gp_grid_search = false;
};

Json to_json(const AdaptConfig& c);
AdaptConfig adapt_config_from_json(const Json& j);

/// Throws InputError unless mu_min < mu_initial and all values are in range.
void validate(const AdaptConfig& adapt, const BeliefConfig& belief);

/// GP with the default hyperparameters scaled to the training embedding.
DiscrepancyGp make_discrepancy_gp(const Mat& embedding, const AdaptConfig& cfg);

/// mu_min + m (1 - mu_min) when sd <= sigma_threshold, else mu_initial.
double updated_uncertainty(const GpPrediction& p, const AdaptConfig& adapt, double mu_initial);

/// Re-weights every training member's uncertainty from the GP. Returns the
/// number of members that passed the sd gate.
long update_training_uncertainty(GridModel& grid, const DiscrepancyGp& gp,
                                 const AdaptConfig& adapt, const BeliefConfig& belief);

/// One adaptation step on `grid` in place: add the batch to the GP and the
/// grid, refit, re-weight training uncertainties, recompute all cell
/// estimates. Returns the JSON log record. An empty batch leaves everything
/// untouched and returns a null record.
Json adaptation_step(GridModel& grid, DiscrepancyGp& gp, const MappingNetwork& net,
                     std::span<const FeedbackDatum> batch, const AdaptConfig& adapt,
                     const BeliefConfig& belief, long step_index);

/// Buffers feedback data and runs an adaptation step every k_u of them,
/// publishing each new grid in one swap.
class OnlineAdapter {
 public:
  OnlineAdapter(GridModel grid, DiscrepancyGp gp, const MappingNetwork& net, AdaptConfig adapt,
                BeliefConfig belief);

  void push(const FeedbackDatum& d);
  /// Runs a step on a partial batch, if any is pending.
  void flush();

  const PublishedGrid& published() const { return published_; }
  std::shared_ptr<const GridModel> grid() const { return published_.snapshot(); }
  const DiscrepancyGp& gp() const { return gp_; }
  const std::vector<Json>& log() const { return log_; }
  long steps() const { return steps_; }

 private:
  void run_step();

  GridModel working_;
  DiscrepancyGp gp_;
  const MappingNetwork& net_;
  AdaptConfig adapt_;
  BeliefConfig belief_;
  PublishedGrid published_;
  std::vector<FeedbackDatum> pending_;
  std::vector<Json> log_;
  long steps_ = 0;
};

}  // namespace saveri
