#pragma once

// Dynamic time warping over error signals and the safety-aware distance
// matrix used for the embedding.

#include <filesystem>
#include <span>
#include <vector>

#include "saveri/common.hpp"
#include "saveri/dataset.hpp"

namespace saveri {

/// Classic DTW: Euclidean local cost, symmetric1 step pattern
/// (match / insertion / deletion, each with weight 1), no window.
double dtw(const Sequence& a, const Sequence& b);

/// Same as dtw() on row-major flattened sequences of `dim`-vectors.
double dtw_flat(std::span<const double> a, std::span<const double> b, int dim);

/// Dense symmetric n x n matrix, row-major.
struct DistanceMatrix {
  int n = 0;
  std::vector<double> values;
  double w_max = 0.0;

  double operator()(int i, int j) const {
    return values[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                  static_cast<std::size_t>(j)];
  }
};

/// Omega_ij = dtw(e_i, e_j) / w_max + delta_lambda * |lambda_i - lambda_j|.
/// When every pair has zero DTW the first term is dropped (with a warning).
DistanceMatrix distance_matrix(std::span<const Sequence> errors, std::span<const double> lambdas,
                               double delta_lambda);
DistanceMatrix distance_matrix(const std::vector<TrainingDatum>& data, double delta_lambda);

/// Binary export: "SAFDIST1", u32 n, u32 reserved, then n*n little-endian
/// doubles, row-major.
void write_distance_matrix(const std::filesystem::path& path, const DistanceMatrix& m);
DistanceMatrix read_distance_matrix(const std::filesystem::path& path);

}  // namespace saveri
