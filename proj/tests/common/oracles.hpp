#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "saveri/belief.hpp"
#include "saveri/common.hpp"
#include "saveri/metric.hpp"
#include "saveri/mapping_network.hpp"

namespace oracle {

/// Minimum over every monotone warping path, enumerated one by one. Costs
/// are accumulated from (0, 0) forward.
inline double dtw_brute_force(const saveri::Sequence& a, const saveri::Sequence& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) cost[i * m + j] = (a[i] - b[j]).norm();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j,
                                                                   double acc) {
    acc += cost[i * m + j];
    if (i == n - 1 && j == m - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

/// Cell fusion evaluated term by term from products of the members'
/// uncertainties, without the weight rewriting used in the library.
inline saveri::Bba fuse_direct(const std::vector<saveri::Bba>& members) {
  const double k = static_cast<double>(members.size());
  double all = 1.0, mu_sum = 0.0;
  for (const auto& b : members) {
    all *= b.mu;
    mu_sum += b.mu;
  }
  double ns = 0.0, nu = 0.0, den = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    double others = 1.0;
    for (std::size_t j = 0; j < members.size(); ++j)
      if (j != i) others *= members[j].mu;
    ns += members[i].safe * (1.0 - members[i].mu) * others;
    nu += members[i].unsafe * (1.0 - members[i].mu) * others;
    den += others;
  }
  den -= k * all;
  return {ns / den, nu / den, (k - mu_sum) * all / den};
}

/// 2 x per_cluster points, `within` apart inside a cluster and `across`
/// between clusters. Labels are 0 for the first half, 1 for the second.
inline saveri::DistanceMatrix two_clusters(int per_cluster, double within, double across) {
  saveri::DistanceMatrix d;
  d.n = 2 * per_cluster;
  d.values.assign(static_cast<std::size_t>(d.n) * static_cast<std::size_t>(d.n), 0.0);
  for (int i = 0; i < d.n; ++i)
    for (int j = 0; j < d.n; ++j)
      if (i != j)
        d.values[static_cast<std::size_t>(i * d.n + j)] =
            (i < per_cluster) == (j < per_cluster) ? within : across;
  d.w_max = across;
  return d;
}

/// Share of points whose nearest other point in `coords` has the same label.
inline double nn_agreement(const saveri::Mat& coords, int per_cluster) {
  int agree = 0;
  const auto n = coords.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (coords.row(i) - coords.row(j)).squaredNorm();
      if (d < best) best = d, arg = j;
    }
    agree += (i < per_cluster) == (arg < per_cluster) ? 1 : 0;
  }
  return static_cast<double>(agree) / static_cast<double>(n);
}

/// Worst relative error between the analytic loss gradient and central
/// differences with step h, over components whose magnitude exceeds `floor`.
inline double gradient_check(const saveri::MappingNetwork& net, const saveri::Mat& x,
                             const saveri::Mat& y, double h, double floor) {
  saveri::Vec g;
  net.loss(x, y, &g);
  saveri::MappingNetwork probe = net;
  double worst = 0.0;
  for (Eigen::Index p = 0; p < g.size(); ++p) {
    const double keep = probe.params()[p];
    probe.params()[p] = keep + h;
    const double up = probe.loss(x, y, nullptr);
    probe.params()[p] = keep - h;
    const double down = probe.loss(x, y, nullptr);
    probe.params()[p] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(g[p]), std::abs(fd));
    if (scale < floor) continue;
    worst = std::max(worst, std::abs(g[p] - fd) / scale);
  }
  return worst;
}

}  // namespace oracle
