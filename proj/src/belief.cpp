#include "saveri/belief.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

namespace saveri {

namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
  }
}

}  // namespace

Bba bba_from_training(double lambda, double mu) {
  check_unit(lambda, "unsafety score");
  check_unit(mu, "uncertainty");
  return {(1.0 - mu) * (1.0 - lambda), (1.0 - mu) * lambda, mu};
}

Bba bba_from_feedback(double lambda) {
  check_unit(lambda, "unsafety score");
  return {1.0 - lambda, lambda, 0.0};
}

Bba fuse_beliefs(std::span<const Bba> members) {
  if (members.empty()) return Bba::empty();
  std::vector<Bba> sorted;
  sorted.reserve(members.size());
  for (Bba b : members) {
    if (b.mu < kFusionFloor) {
      const double mass = b.safe + b.unsafe;
      const double rescale = mass > 0.0 ? (1.0 - kFusionFloor) / mass : 0.0;
      b = {b.safe * rescale, b.unsafe * rescale, kFusionFloor};
    }
    sorted.push_back(b);
  }
  // A canonical order makes the floating-point sums order independent.
  std::sort(sorted.begin(), sorted.end(), [](const Bba& a, const Bba& b) {
    return std::tie(a.mu, a.safe, a.unsafe) < std::tie(b.mu, b.safe, b.unsafe);
  });

  // The fusion rule divided through by the product of all uncertainties:
  // each member is weighted by (1 - mu_i) / mu_i.
  double weight_sum = 0.0, safe_sum = 0.0, unsafe_sum = 0.0, certainty_sum = 0.0;
  for (const Bba& b : sorted) {
    const double w = (1.0 - b.mu) / b.mu;
    weight_sum += w;
    safe_sum += b.safe * w;
    unsafe_sum += b.unsafe * w;
    certainty_sum += 1.0 - b.mu;
  }
  if (weight_sum <= 0.0) return Bba::empty();
  return {safe_sum / weight_sum, unsafe_sum / weight_sum, certainty_sum / weight_sum};
}

Bba fuse_feedback(std::span<const Bba> members, long count_for_decay, double alpha, double beta) {
  if (members.empty()) return Bba::empty();
  if (count_for_decay < 1) throw std::invalid_argument("feedback decay count must be >= 1");
  const double mu = beta * std::exp(-alpha * static_cast<double>(count_for_decay - 1));
  double safe = 0.0, unsafe = 0.0;
  for (const Bba& b : members) {
    safe += b.safe;
    unsafe += b.unsafe;
  }
  const double k = static_cast<double>(members.size());
  return {(1.0 - mu) * safe / k, (1.0 - mu) * unsafe / k, mu};
}

Bba combine_estimates(const Bba& prior, const Bba& feedback) {
  if (feedback.is_empty()) return prior;
  const Bba pair[2] = {prior, feedback};
  return fuse_beliefs(pair);
}

Json to_json(const Bba& b) { return Json::array({b.safe, b.unsafe, b.mu}); }

Bba bba_from_json(const Json& j, const std::string& context) {
  const Vec v = vec_from_json(j, context);
  if (v.size() != 3) throw InputError(context + ": a BBA has three entries");
  return {v[0], v[1], v[2]};
}

// ---------------------------------------------------------------------------
// Grid

CellIndex locate(const GridSpec& spec, const Vec& y) {
  if (y.size() < 2) throw std::invalid_argument("locate: embedding must be two-dimensional");
  CellIndex c;
  const auto axis = [&](double value, double origin, int count, int& out) {
    const double f = std::floor((value - origin) / spec.cell_length);
    if (!std::isfinite(f) || f < 0.0) {
      out = 0;
      c.out_of_grid = true;
    } else if (f >= count) {
      out = count - 1;
      c.out_of_grid = true;
    } else {
      out = static_cast<int>(f);
    }
  };
  axis(y[0], spec.origin[0], spec.nx, c.ix);
  axis(y[1], spec.origin[1], spec.ny, c.iy);
  return c;
}

namespace {

void bounding_box(const Mat& points, Eigen::Vector2d& lo, Eigen::Vector2d& hi) {
  if (points.rows() == 0 || points.cols() != 2) {
    throw std::invalid_argument("grid: need a non-empty set of 2-D points");
  }
  lo = points.colwise().minCoeff().transpose();
  hi = points.colwise().maxCoeff().transpose();
}

}  // namespace

GridSpec grid_from_extent(const Mat& points, int cells_per_axis, double margin) {
  Eigen::Vector2d lo, hi;
  bounding_box(points, lo, hi);
  double side = (hi - lo).maxCoeff();
  if (!(side > 0.0)) side = 1.0;
  side *= 1.0 + 2.0 * margin;
  GridSpec g;
  g.nx = g.ny = cells_per_axis;
  g.cell_length = side / cells_per_axis;
  g.origin = 0.5 * (lo + hi) - Eigen::Vector2d::Constant(0.5 * side);
  return g;
}

GridSpec grid_fixed_length(const Mat& points, int cells_per_axis, double cell_length) {
  Eigen::Vector2d lo, hi;
  bounding_box(points, lo, hi);
  GridSpec g;
  g.nx = g.ny = cells_per_axis;
  g.cell_length = cell_length;
  g.origin = 0.5 * (lo + hi) - Eigen::Vector2d::Constant(0.5 * cell_length * cells_per_axis);
  return g;
}

GridModel::GridModel(GridSpec spec) : spec_(spec) {
  if (!(spec_.cell_length > 0.0) || spec_.nx < 1 || spec_.ny < 1) {
    throw std::invalid_argument("grid: cell length must be positive and counts >= 1");
  }
  cells_.assign(static_cast<std::size_t>(spec_.cell_count()), CellState{});
}

const CellState& GridModel::cell(int ix, int iy) const {
  if (ix < 0 || iy < 0 || ix >= spec_.nx || iy >= spec_.ny) {
    throw std::out_of_range("grid cell index out of range");
  }
  return cells_[flat(ix, iy)];
}

void GridModel::add_training(Vec y, double lambda, double mu) {
  TrainingMember m;
  m.cell = locate(spec_, y);
  m.y = std::move(y);
  m.lambda = lambda;
  m.mu = mu;
  training_.push_back(std::move(m));
}

void GridModel::add_feedback(Vec y, double lambda_real, double lambda_nominal) {
  FeedbackMember m;
  m.cell = locate(spec_, y);
  m.y = std::move(y);
  m.lambda_real = lambda_real;
  m.lambda_nominal = lambda_nominal;
  feedback_.push_back(std::move(m));
}

void GridModel::recompute_prior(const BeliefConfig& cfg) {
  std::vector<std::vector<Bba>> members(cells_.size());
  for (const auto& t : training_) {
    members[flat(t.cell.ix, t.cell.iy)].push_back(bba_from_training(t.lambda, t.mu));
  }
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    cells_[c].k_tilde = static_cast<int>(members[c].size());
    cells_[c].prior =
        cells_[c].k_tilde >= cfg.k_min && !members[c].empty() ? fuse_beliefs(members[c]) : Bba::empty();
  }
}

void GridModel::recompute_feedback(const BeliefConfig& cfg) {
  std::vector<std::vector<Bba>> members(cells_.size());
  for (const auto& f : feedback_) {
    members[flat(f.cell.ix, f.cell.iy)].push_back(bba_from_feedback(f.lambda_real));
  }
  const long n_f = feedback_count();
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    cells_[c].k_bar = static_cast<int>(members[c].size());
    const long count = cfg.decay == FeedbackDecay::global ? n_f : cells_[c].k_bar;
    cells_[c].feedback = members[c].empty()
                             ? Bba::empty()
                             : fuse_feedback(members[c], count, cfg.alpha, cfg.beta);
  }
}

void GridModel::recompute_combined() {
  for (auto& c : cells_) c.combined = combine_estimates(c.prior, c.feedback);
}

void GridModel::recompute_all(const BeliefConfig& cfg) {
  recompute_prior(cfg);
  recompute_feedback(cfg);
  recompute_combined();
}

namespace {

Json cell_json(const CellIndex& c) { return Json::array({c.ix, c.iy, c.out_of_grid}); }

CellIndex cell_from_json(const Json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 3) throw InputError(ctx + ": cell must be [ix, iy, out_of_grid]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<bool>()};
}

}  // namespace

Json GridModel::to_json() const {
  Json cells = Json::array();
  for (int iy = 0; iy < spec_.ny; ++iy) {
    for (int ix = 0; ix < spec_.nx; ++ix) {
      const auto& c = cells_[flat(ix, iy)];
      cells.push_back(Json{{"ix", ix},
                           {"iy", iy},
                           {"prior", saveri::to_json(c.prior)},
                           {"feedback", saveri::to_json(c.feedback)},
                           {"combined", saveri::to_json(c.combined)},
                           {"k_tilde", c.k_tilde},
                           {"k_bar", c.k_bar}});
    }
  }
  Json training = Json::array();
  for (const auto& t : training_) {
    training.push_back(Json{{"y", saveri::to_json(t.y)},
                            {"lambda", t.lambda},
                            {"mu", t.mu},
                            {"cell", cell_json(t.cell)}});
  }
  Json feedback = Json::array();
  for (const auto& f : feedback_) {
    feedback.push_back(Json{{"y", saveri::to_json(f.y)},
                            {"lambda", f.lambda_real},
                            {"lambda_hat", f.lambda_nominal},
                            {"cell", cell_json(f.cell)}});
  }
  return Json{{"spec",
               {{"origin", Json::array({spec_.origin[0], spec_.origin[1]})},
                {"cell_length", spec_.cell_length},
                {"nx", spec_.nx},
                {"ny", spec_.ny}}},
              {"cells", std::move(cells)},
              {"training", std::move(training)},
              {"feedback", std::move(feedback)}};
}

GridModel GridModel::from_json(const Json& j) {
  const std::string ctx = "grid";
  const Json& s = require(j, "spec", ctx);
  GridSpec spec;
  const Vec origin = vec_from_json(require(s, "origin", ctx + ".spec"), ctx + ".spec.origin");
  if (origin.size() != 2) throw InputError(ctx + ".spec.origin must have two entries");
  spec.origin = origin;
  spec.cell_length = require(s, "cell_length", ctx + ".spec").get<double>();
  spec.nx = require(s, "nx", ctx + ".spec").get<int>();
  spec.ny = require(s, "ny", ctx + ".spec").get<int>();
  GridModel g(spec);

  const Json& cells = require(j, "cells", ctx);
  if (!cells.is_array() || cells.size() != g.cells_.size()) {
    throw InputError(ctx + ": cell count does not match spec");
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string c = ctx + ".cells[" + std::to_string(i) + "]";
    const int ix = require(cells[i], "ix", c).get<int>();
    const int iy = require(cells[i], "iy", c).get<int>();
    if (ix < 0 || iy < 0 || ix >= spec.nx || iy >= spec.ny) throw InputError(c + ": bad index");
    auto& cell = g.cells_[g.flat(ix, iy)];
    cell.prior = bba_from_json(require(cells[i], "prior", c), c + ".prior");
    cell.feedback = bba_from_json(require(cells[i], "feedback", c), c + ".feedback");
    cell.combined = bba_from_json(require(cells[i], "combined", c), c + ".combined");
    cell.k_tilde = require(cells[i], "k_tilde", c).get<int>();
    cell.k_bar = require(cells[i], "k_bar", c).get<int>();
  }
  for (const auto& t : require(j, "training", ctx)) {
    TrainingMember m;
    m.y = vec_from_json(require(t, "y", ctx + ".training"), ctx + ".training.y");
    m.lambda = require(t, "lambda", ctx + ".training").get<double>();
    m.mu = require(t, "mu", ctx + ".training").get<double>();
    m.cell = cell_from_json(require(t, "cell", ctx + ".training"), ctx + ".training.cell");
    g.training_.push_back(std::move(m));
  }
  for (const auto& f : require(j, "feedback", ctx)) {
    FeedbackMember m;
    m.y = vec_from_json(require(f, "y", ctx + ".feedback"), ctx + ".feedback.y");
    m.lambda_real = require(f, "lambda", ctx + ".feedback").get<double>();
    m.lambda_nominal = require(f, "lambda_hat", ctx + ".feedback").get<double>();
    m.cell = cell_from_json(require(f, "cell", ctx + ".feedback"), ctx + ".feedback.cell");
    g.feedback_.push_back(std::move(m));
  }
  return g;
}

std::string GridModel::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "ix,iy,b_safe,b_unsafe,mu,k_tilde,k_bar\n";
  for (int iy = 0; iy < spec_.ny; ++iy) {
    for (int ix = 0; ix < spec_.nx; ++ix) {
      const auto& c = cells_[flat(ix, iy)];
      out << ix << ',' << iy << ',' << c.combined.safe << ',' << c.combined.unsafe << ','
          << c.combined.mu << ',' << c.k_tilde << ',' << c.k_bar << '\n';
    }
  }
  return out.str();
}

Assessment assess_flat(const GridModel& grid, const MappingNetwork& net, const Vec& x) {
  if (x.size() != net.input_dim()) {
    throw std::invalid_argument("assess: input has dimension " + std::to_string(x.size()) +
                                ", model expects " + std::to_string(net.input_dim()));
  }
  if (!x.allFinite()) throw std::invalid_argument("assess: input is not finite");
  Assessment a;
  a.embedding = net.predict(x);
  a.cell = locate(grid.spec(), a.embedding);
  a.bba = grid.cell(a.cell).combined;
  a.no_estimate = a.bba.is_empty();
  a.gamma = a.no_estimate ? 0.0 : a.bba.safe;
  return a;
}

Assessment assess(const GridModel& grid, const MappingNetwork& net, const AssessmentInput& x) {
  return assess_flat(grid, net, x.flatten());
}

}  // namespace saveri
