#include "saveri/metric.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace saveri {

double dtw_flat(std::span<const double> a, std::span<const double> b, int dim) {
  if (dim < 1) throw std::invalid_argument("dtw: vector dimension must be >= 1");
  const std::size_t d = static_cast<std::size_t>(dim);
  if (a.empty() || b.empty()) throw std::invalid_argument("dtw: empty sequence");
  if (a.size() % d != 0 || b.size() % d != 0) {
    throw std::invalid_argument("dtw: sequence length is not a multiple of the dimension");
  }
  const std::size_t n = a.size() / d;
  const std::size_t m = b.size() / d;
  const auto cost = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = a[i * d + k] - b[j * d + k];
      s += diff * diff;
    }
    return std::sqrt(s);
  };
  // Two rolling rows of the accumulated-cost table.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m, inf), cur(m, inf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0) best = std::min(best, prev[j]);
        if (j > 0) best = std::min(best, cur[j - 1]);
        if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
      }
      cur[j] = best + cost(i, j);
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

namespace {

std::vector<double> flatten(const Sequence& s, int& dim) {
  if (s.empty()) throw std::invalid_argument("dtw: empty sequence");
  dim = static_cast<int>(s.front().size());
  std::vector<double> out;
  out.reserve(s.size() * static_cast<std::size_t>(dim));
  for (const auto& v : s) {
    if (v.size() != dim) throw std::invalid_argument("dtw: inconsistent vector dimension");
    out.insert(out.end(), v.data(), v.data() + v.size());
  }
  return out;
}

}  // namespace

double dtw(const Sequence& a, const Sequence& b) {
  int da = 0, db = 0;
  const auto fa = flatten(a, da);
  const auto fb = flatten(b, db);
  if (da != db) throw std::invalid_argument("dtw: sequences have different vector dimensions");
  return dtw_flat(fa, fb, da);
}

DistanceMatrix distance_matrix(std::span<const Sequence> errors, std::span<const double> lambdas,
                               double delta_lambda) {
  const std::size_t n = errors.size();
  if (n < 2) throw InsufficientDataError("distance_matrix: need at least two data");
  if (lambdas.size() != n) throw std::invalid_argument("distance_matrix: size mismatch");
  int dim = 0;
  std::vector<std::vector<double>> flat(n);
  for (std::size_t i = 0; i < n; ++i) {
    int d = 0;
    flat[i] = flatten(errors[i], d);
    if (i == 0) dim = d;
    if (d != dim) throw std::invalid_argument("distance_matrix: inconsistent error dimension");
  }

  DistanceMatrix m;
  m.n = static_cast<int>(n);
  m.values.assign(n * n, 0.0);
  // Raw DTW once per unordered pair; row i owns entries (i, j > i).
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) m.values[i * n + j] = dtw_flat(flat[i], flat[j], dim);
  });
  double w_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) w_max = std::max(w_max, m.values[i * n + j]);
  }
  m.w_max = w_max;
  if (w_max <= 0.0) warn("all error sequences are identical; DTW term of the distance is zero");
  const double scale = w_max > 0.0 ? 1.0 / w_max : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v =
          m.values[i * n + j] * scale + delta_lambda * std::abs(lambdas[i] - lambdas[j]);
      m.values[i * n + j] = v;
      m.values[j * n + i] = v;
    }
  }
  return m;
}

DistanceMatrix distance_matrix(const std::vector<TrainingDatum>& data, double delta_lambda) {
  std::vector<Sequence> errors;
  std::vector<double> lambdas;
  errors.reserve(data.size());
  lambdas.reserve(data.size());
  for (const auto& d : data) {
    errors.push_back(d.segment.error());
    lambdas.push_back(d.lambda);
  }
  return distance_matrix(errors, lambdas, delta_lambda);
}

namespace {

constexpr char kMagic[8] = {'S', 'A', 'F', 'D', 'I', 'S', 'T', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  return value;
}

}  // namespace

void write_distance_matrix(const std::filesystem::path& path, const DistanceMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.n));
  put_le<std::uint32_t>(out, 0);
  for (double v : m.values) put_le<double>(out, v);
  if (!out) throw InputError("write failed for " + path.string());
}

DistanceMatrix read_distance_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw InputError(path.string() + ": bad magic, expected SAFDIST1");
  }
  DistanceMatrix m;
  m.n = static_cast<int>(get_le<std::uint32_t>(in));
  (void)get_le<std::uint32_t>(in);
  const std::size_t count = static_cast<std::size_t>(m.n) * static_cast<std::size_t>(m.n);
  m.values.resize(count);
  for (auto& v : m.values) v = get_le<double>(in);
  if (!in) throw InputError(path.string() + ": truncated matrix");
  // The raw DTW maximum is not part of the file format; w_max stays 0.
  return m;
}

}  // namespace saveri
