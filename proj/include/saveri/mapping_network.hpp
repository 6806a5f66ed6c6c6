#pragma once

// Feed-forward regression network that reproduces the t-SNE embedding for
// unseen assessment inputs.

#include <cstdint>
#include <string>
#include <vector>

#include "saveri/common.hpp"
#include "saveri/dataset.hpp"
#include "saveri/json_io.hpp"

namespace saveri {

struct NetworkConfig {
  std::vector<int> hidden{64, 64};
  std::string activation = "tanh";
  double learning_rate = 1e-3;  // Adam step size
  int batch_size = 64;
  int epochs = 300;
  std::uint64_t seed = 1;
};

Json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const Json& j);

/// Fully connected network with tanh hidden layers and a linear output.
/// Parameters live in one flat vector: for each layer, the row-major weight
/// matrix (outputs x inputs) followed by the bias.
class MappingNetwork {
 public:
  MappingNetwork() = default;
  MappingNetwork(std::vector<int> layer_sizes, std::string activation);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::string& activation() const { return activation_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  // Standardization of inputs and targets; the network itself works on
  // standardized values.
  Vec input_mean, input_scale, output_mean, output_scale;
  double training_rmse = 0.0;

  /// Forward pass in standardized space. Columns of `x` are samples.
  Mat forward_standardized(const Mat& x) const;
  /// Raw input -> embedding coordinates.
  Vec predict(const Vec& x) const;
  Mat predict_batch(const Mat& x_rows) const;  // rows are samples
  /// d(prediction)/d(raw input), output_dim x input_dim.
  Mat input_jacobian(const Vec& x) const;

  /// Mean over samples of the squared output error in standardized space,
  /// and its gradient with respect to params() when `grad` is non-null.
  double loss(const Mat& x_std, const Mat& y_std, Vec* grad) const;

  Json to_json() const;
  static MappingNetwork from_json(const Json& j);

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  double activate(double z) const;
  double activate_derivative_from_output(double a) const;

  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  std::string activation_ = "tanh";
  Vec params_;
};

/// Standardizes inputs and targets, then trains with mini-batch Adam on mean
/// squared error. Throws NumericalError if the loss stops being finite.
MappingNetwork train_mapping(const Mat& inputs, const Mat& targets, const NetworkConfig& cfg);

/// Embedding of a single assessment input.
Vec map_input(const MappingNetwork& net, const AssessmentInput& x);

}  // namespace saveri
