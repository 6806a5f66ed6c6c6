#pragma once

// Belief-mass algebra over {safe, unsafe} and the grid model that turns an
// embedding into a piecewise-constant safety assessment.

#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "saveri/common.hpp"
#include "saveri/dataset.hpp"
#include "saveri/json_io.hpp"
#include "saveri/mapping_network.hpp"

namespace saveri {

/// Basic belief assignment: mass on "stays safe", "becomes unsafe" and the
/// residual uncertainty. The three entries sum to one.
struct Bba {
  double safe = 0.0;
  double unsafe = 0.0;
  double mu = 1.0;

  static constexpr Bba empty() { return {0.0, 0.0, 1.0}; }
  bool is_empty() const { return safe == 0.0 && unsafe == 0.0 && mu == 1.0; }
  double sum() const { return safe + unsafe + mu; }
  bool operator==(const Bba&) const = default;
};

/// Uncertainties below this are raised to it before fusion.
inline constexpr double kFusionFloor = 1e-6;

/// ((1-mu)(1-lambda), (1-mu) lambda, mu) for a nominal training datum.
Bba bba_from_training(double lambda, double mu);

/// (1-lambda, lambda, 0) for a real-system feedback datum.
Bba bba_from_feedback(double lambda);

/// Uncertainty-weighted fusion of a set of BBAs. With every member's
/// uncertainty equal this is the plain average; members with lower
/// uncertainty dominate. The empty BBA is the identity element. Result does
/// not depend on member order.
Bba fuse_beliefs(std::span<const Bba> members);

/// Averages zero-uncertainty feedback masses and assigns the cell an
/// uncertainty beta * exp(-alpha (count - 1)). Empty input gives the empty
/// BBA.
Bba fuse_feedback(std::span<const Bba> members, long count_for_decay, double alpha, double beta);

/// Fuses prior and feedback estimates; the prior alone while no feedback
/// exists.
Bba combine_estimates(const Bba& prior, const Bba& feedback);

Json to_json(const Bba& b);
Bba bba_from_json(const Json& j, const std::string& context);

struct GridSpec {
  Eigen::Vector2d origin{0.0, 0.0};
  double cell_length = 1.0;
  int nx = 14;
  int ny = 14;

  int cell_count() const { return nx * ny; }
};

struct CellIndex {
  int ix = 0;
  int iy = 0;
  bool out_of_grid = false;

  bool operator==(const CellIndex&) const = default;
};

/// floor((y - origin) / cell_length), clamped into the grid with a flag.
CellIndex locate(const GridSpec& spec, const Vec& y);

/// Square cells covering the bounding box of `points` (rows) enlarged by
/// `margin` of its extent on every side.
GridSpec grid_from_extent(const Mat& points, int cells_per_axis, double margin);
/// Fixed cell length, grid centred on the bounding-box centre of `points`.
GridSpec grid_fixed_length(const Mat& points, int cells_per_axis, double cell_length);

struct TrainingMember {
  Vec y;              // embedding coordinate
  double lambda = 0;  // unsafety score
  double mu = 0.3;    // current uncertainty, re-weighted online
  CellIndex cell;
};

struct FeedbackMember {
  Vec y;
  double lambda_real = 0;
  double lambda_nominal = 0;
  CellIndex cell;
};

struct CellState {
  Bba prior = Bba::empty();
  Bba feedback = Bba::empty();
  Bba combined = Bba::empty();
  int k_tilde = 0;  // training members
  int k_bar = 0;    // feedback members
};

enum class FeedbackDecay {
  global,    // uncertainty decays with the total feedback count n_f
  per_cell,  // uncertainty decays with the cell's own feedback count
};

struct BeliefConfig {
  double mu_initial = 0.3;
  int k_min = 5;
  double alpha = 0.4;
  double beta = 0.3;
  FeedbackDecay decay = FeedbackDecay::global;
};

/// Per-cell prior, feedback and combined estimates plus the data behind them.
class GridModel {
 public:
  GridModel() = default;
  explicit GridModel(GridSpec spec);

  const GridSpec& spec() const { return spec_; }
  const CellState& cell(int ix, int iy) const;
  const CellState& cell(const CellIndex& c) const { return cell(c.ix, c.iy); }
  const std::vector<CellState>& cells() const { return cells_; }

  std::vector<TrainingMember>& training() { return training_; }
  const std::vector<TrainingMember>& training() const { return training_; }
  const std::vector<FeedbackMember>& feedback() const { return feedback_; }
  long feedback_count() const { return static_cast<long>(feedback_.size()); }

  void add_training(Vec y, double lambda, double mu);
  void add_feedback(Vec y, double lambda_real, double lambda_nominal);

  /// Prior per cell: fusion of member BBAs when the cell holds at least
  /// k_min of them, else empty.
  void recompute_prior(const BeliefConfig& cfg);
  void recompute_feedback(const BeliefConfig& cfg);
  void recompute_combined();
  void recompute_all(const BeliefConfig& cfg);

  Json to_json() const;
  static GridModel from_json(const Json& j);
  /// One row per cell: ix, iy, b_safe, b_unsafe, mu, k_tilde, k_bar.
  std::string to_csv() const;

 private:
  std::size_t flat(int ix, int iy) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(spec_.nx) +
           static_cast<std::size_t>(ix);
  }

  GridSpec spec_;
  std::vector<CellState> cells_;
  std::vector<TrainingMember> training_;
  std::vector<FeedbackMember> feedback_;
};

struct Assessment {
  double gamma = 0.0;  // predicted probability of staying safe
  Bba bba = Bba::empty();
  CellIndex cell;
  Vec embedding;
  bool no_estimate = true;
};

/// Gamma(x): b_safe of the cell that x embeds into. Cells without an estimate
/// report gamma = 0 and no_estimate.
Assessment assess(const GridModel& grid, const MappingNetwork& net, const AssessmentInput& x);
Assessment assess_flat(const GridModel& grid, const MappingNetwork& net, const Vec& x);

/// Holder for the grid currently served to readers. A writer builds a new
/// grid off to the side and publishes it in one swap.
class PublishedGrid {
 public:
  explicit PublishedGrid(GridModel initial)
      : current_(std::make_shared<const GridModel>(std::move(initial))) {}

  std::shared_ptr<const GridModel> snapshot() const {
    std::lock_guard lock(mutex_);
    return current_;
  }
  void publish(GridModel next) {
    auto ptr = std::make_shared<const GridModel>(std::move(next));
    std::lock_guard lock(mutex_);
    current_ = std::move(ptr);
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const GridModel> current_;
};

}  // namespace saveri
