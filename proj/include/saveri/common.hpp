#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace saveri {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
/// Ordered sequence of equally sized vectors (trajectories, error signals).
using Sequence = std::vector<Vec>;
using Rng = std::mt19937_64;

/// Malformed user input or files. Maps to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Not enough data to run a stage. Maps to exit code 3.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model bundle and system disagree on dimensions. Maps to exit code 4.
class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine diverged (non-finite loss or gradient).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for item `index` of a batch started from `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Worker count: SAVERI_THREADS if set and positive, else hardware concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n) over contiguous chunks. fn must only write to
/// per-index state so that results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

bool all_finite(const Vec& v);
bool all_finite(const Sequence& s);

/// Concatenates vectors end to end.
Vec concat(std::span<const Vec> parts);

/// 64-bit FNV-1a digest, used for config and dataset fingerprints.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

void warn(const std::string& message);

}  // namespace saveri
