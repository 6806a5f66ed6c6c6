#pragma once

// Exact t-SNE over a precomputed distance matrix.

#include <cstdint>
#include <vector>

#include "saveri/common.hpp"
#include "saveri/json_io.hpp"
#include "saveri/metric.hpp"

namespace saveri {

struct TsneConfig {
  int dims = 2;
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  int momentum_switch = 250;
  double init_scale = 1e-4;
  std::uint64_t seed = 1;
};

Json to_json(const TsneConfig& c);
TsneConfig tsne_config_from_json(const Json& j);

/// Symmetrized joint probabilities P (n x n, zero diagonal, sums to 1) and
/// the perplexity achieved by each conditional row.
struct Affinities {
  int n = 0;
  std::vector<double> p;
  std::vector<double> row_perplexity;
};

/// Per-row Gaussian kernels on squared distances, with bandwidths set by
/// bisection to hit `perplexity` (1e-5 tolerance on log-perplexity, at most
/// 64 steps).
Affinities tsne_affinities(const DistanceMatrix& dist, double perplexity);

struct EmbeddedSet {
  Mat coords;  // n x dims
  double kl = 0.0;
  /// KL divergence (against the un-exaggerated P) when exaggeration ended.
  double kl_exaggeration_end = 0.0;
};

/// Gradient descent with momentum, per-parameter gains and early
/// exaggeration. Deterministic in cfg.seed. Returns the lowest-KL iterate
/// among checkpoints taken after exaggeration ends.
EmbeddedSet tsne_embed(const DistanceMatrix& dist, const TsneConfig& cfg);

/// KL(P || Q) for an embedding.
double tsne_kl(const Affinities& p, const Mat& coords);

}  // namespace saveri
