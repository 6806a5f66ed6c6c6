#include "saveri/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace saveri {

Json to_json(const TsneConfig& c) {
  return Json{{"dims", c.dims},
              {"perplexity", c.perplexity},
              {"iterations", c.iterations},
              {"learning_rate", c.learning_rate},
              {"exaggeration", c.exaggeration},
              {"exaggeration_iterations", c.exaggeration_iterations},
              {"momentum_initial", c.momentum_initial},
              {"momentum_final", c.momentum_final},
              {"momentum_switch", c.momentum_switch},
              {"init_scale", c.init_scale},
              {"seed", c.seed}};
}

TsneConfig tsne_config_from_json(const Json& j) {
  TsneConfig c;
  c.dims = j.value("dims", c.dims);
  c.perplexity = j.value("perplexity", c.perplexity);
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.exaggeration = j.value("exaggeration", c.exaggeration);
  c.exaggeration_iterations = j.value("exaggeration_iterations", c.exaggeration_iterations);
  c.momentum_initial = j.value("momentum_initial", c.momentum_initial);
  c.momentum_final = j.value("momentum_final", c.momentum_final);
  c.momentum_switch = j.value("momentum_switch", c.momentum_switch);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.seed = j.value("seed", c.seed);
  return c;
}

Affinities tsne_affinities(const DistanceMatrix& dist, double perplexity) {
  const int n = dist.n;
  if (n < 2) throw InsufficientDataError("t-SNE needs at least two points");
  if (!(perplexity > 0.0)) throw std::invalid_argument("t-SNE perplexity must be positive");
  const double target = std::log(perplexity);
  const std::size_t un = static_cast<std::size_t>(n);
  std::vector<double> cond(un * un, 0.0);
  std::vector<double> achieved(un, 0.0);

  parallel_for(un, [&](std::size_t i) {
    std::vector<double> d2(un, 0.0);
    double d2_min = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < un; ++j) {
      if (j == i) continue;
      const double d = dist(static_cast<int>(i), static_cast<int>(j));
      d2[j] = d * d;
      d2_min = std::min(d2_min, d2[j]);
    }
    double* row = &cond[i * un];
    // Shifted by the nearest distance so exp() cannot underflow to all-zero.
    const auto entropy_at = [&](double beta) {
      double sum = 0.0;
      for (std::size_t j = 0; j < un; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * (d2[j] - d2_min));
        sum += row[j];
      }
      double weighted = 0.0;
      for (std::size_t j = 0; j < un; ++j) {
        row[j] /= sum;
        weighted += row[j] * (d2[j] - d2_min);
      }
      return std::log(sum) + beta * weighted;
    };
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double h = entropy_at(beta);
    for (int it = 0; it < 64 && std::abs(h - target) > 1e-5; ++it) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      h = entropy_at(beta);
    }
    achieved[i] = std::exp(h);
  });

  Affinities a;
  a.n = n;
  a.row_perplexity = std::move(achieved);
  a.p.assign(un * un, 0.0);
  const double norm = 1.0 / (2.0 * n);
  for (std::size_t i = 0; i < un; ++i) {
    for (std::size_t j = i + 1; j < un; ++j) {
      const double v = (cond[i * un + j] + cond[j * un + i]) * norm;
      a.p[i * un + j] = v;
      a.p[j * un + i] = v;
    }
  }
  return a;
}

namespace {

/// Student-t kernel matrix (both halves filled) and its total.
double student_kernel(const Mat& y, std::vector<double>& num) {
  const std::size_t n = static_cast<std::size_t>(y.rows());
  const std::size_t dims = static_cast<std::size_t>(y.cols());
  std::vector<double> flat(n * dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      flat[i * dims + d] = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
    }
  }
  num.assign(n * n, 0.0);
  std::vector<double> row_sum(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    const double* yi = &flat[i * dims];
    double acc = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* yj = &flat[j * dims];
      double d2 = 0.0;
      for (std::size_t d = 0; d < dims; ++d) d2 += (yi[d] - yj[d]) * (yi[d] - yj[d]);
      const double v = 1.0 / (1.0 + d2);
      num[i * n + j] = v;
      num[j * n + i] = v;
      acc += v;
    }
    row_sum[i] = acc;
  });
  double z = 0.0;
  for (double s : row_sum) z += s;
  return 2.0 * z;
}

double kl_from_kernel(const Affinities& p, const std::vector<double>& num, double z) {
  const std::size_t n = static_cast<std::size_t>(p.n);
  std::vector<double> row_kl(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double pij = p.p[i * n + j];
      if (j == i || pij <= 0.0) continue;
      const double qij = std::max(num[i * n + j] / z, std::numeric_limits<double>::min());
      s += pij * std::log(pij / qij);
    }
    row_kl[i] = s;
  });
  double kl = 0.0;
  for (double v : row_kl) kl += v;
  return std::max(kl, 0.0);
}

}  // namespace

double tsne_kl(const Affinities& p, const Mat& coords) {
  std::vector<double> num;
  const double z = student_kernel(coords, num);
  return kl_from_kernel(p, num, z);
}

EmbeddedSet tsne_embed(const DistanceMatrix& dist, const TsneConfig& cfg) {
  const int n = dist.n;
  if (cfg.dims < 1) throw std::invalid_argument("t-SNE output dimension must be >= 1");
  if (cfg.perplexity < 5.0 || 3.0 * cfg.perplexity > n - 1) {
    std::ostringstream msg;
    msg << "t-SNE needs 5 <= perplexity <= (n-1)/3; got perplexity " << cfg.perplexity
        << " with n = " << n << " (need at least " << static_cast<int>(3 * cfg.perplexity + 1)
        << " points)";
    throw InsufficientDataError(msg.str());
  }
  const Affinities aff = tsne_affinities(dist, cfg.perplexity);
  const std::size_t un = static_cast<std::size_t>(n);
  const Eigen::Index dims = cfg.dims;

  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, cfg.init_scale);
  Mat y(n, dims);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index d = 0; d < dims; ++d) y(i, d) = gauss(rng);
  }
  Mat update = Mat::Zero(n, dims);
  Mat gains = Mat::Ones(n, dims);
  Mat grad(n, dims);
  std::vector<double> num;

  EmbeddedSet best;
  best.kl = std::numeric_limits<double>::infinity();
  const int checkpoint_every = 25;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
    const double momentum = iter < cfg.momentum_switch ? cfg.momentum_initial : cfg.momentum_final;

    const double z = student_kernel(y, num);
    if (iter == cfg.exaggeration_iterations || (iter > cfg.exaggeration_iterations &&
                                                (iter - cfg.exaggeration_iterations) %
                                                        checkpoint_every == 0)) {
      const double kl = kl_from_kernel(aff, num, z);
      if (iter == cfg.exaggeration_iterations) best.kl_exaggeration_end = kl;
      if (kl < best.kl) {
        best.kl = kl;
        best.coords = y;
      }
    }

    const double inv_z = 1.0 / z;
    const std::size_t ud = static_cast<std::size_t>(dims);
    std::vector<double> flat(un * ud);
    for (std::size_t i = 0; i < un; ++i) {
      for (std::size_t d = 0; d < ud; ++d) {
        flat[i * ud + d] = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
      }
    }
    parallel_for(un, [&](std::size_t i) {
      std::vector<double> g(ud, 0.0);
      const double* prow = &aff.p[i * un];
      const double* qrow = &num[i * un];
      const double* yi = &flat[i * ud];
      for (std::size_t j = 0; j < un; ++j) {
        if (j == i) continue;
        const double coeff = (exaggeration * prow[j] - qrow[j] * inv_z) * qrow[j];
        const double* yj = &flat[j * ud];
        for (std::size_t d = 0; d < ud; ++d) g[d] += coeff * (yi[d] - yj[d]);
      }
      for (std::size_t d = 0; d < ud; ++d) {
        grad(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 4.0 * g[d];
      }
    });
    if (!grad.allFinite()) {
      std::ostringstream msg;
      msg << "t-SNE gradient became non-finite at iteration " << iter
          << " (max |grad| among finite entries: "
          << grad.unaryExpr([](double v) { return std::isfinite(v) ? std::abs(v) : 0.0; })
                 .maxCoeff()
          << ")";
      throw NumericalError(msg.str());
    }

    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (Eigen::Index d = 0; d < dims; ++d) {
        const bool same_sign = (grad(i, d) > 0.0) == (update(i, d) > 0.0);
        gains(i, d) = same_sign ? std::max(gains(i, d) * 0.8, 0.01) : gains(i, d) + 0.2;
        update(i, d) = momentum * update(i, d) - cfg.learning_rate * gains(i, d) * grad(i, d);
        y(i, d) += update(i, d);
      }
    }
    y.rowwise() -= y.colwise().mean();
  }

  const double z = student_kernel(y, num);
  const double final_kl = kl_from_kernel(aff, num, z);
  if (cfg.iterations <= cfg.exaggeration_iterations) best.kl_exaggeration_end = final_kl;
  if (final_kl < best.kl || best.coords.size() == 0) {
    best.kl = final_kl;
    best.coords = y;
  }
  return best;
}

}  // namespace saveri
