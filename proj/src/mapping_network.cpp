#include "saveri/mapping_network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saveri {

Json to_json(const NetworkConfig& c) {
  return Json{{"hidden", c.hidden},
              {"activation", c.activation},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed}};
}

NetworkConfig network_config_from_json(const Json& j) {
  NetworkConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.activation = j.value("activation", c.activation);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

MappingNetwork::MappingNetwork(std::vector<int> layer_sizes, std::string activation)
    : sizes_(std::move(layer_sizes)), activation_(std::move(activation)) {
  if (sizes_.size() < 2) throw std::invalid_argument("network needs input and output layers");
  if (activation_ != "tanh") {
    throw std::invalid_argument("unsupported activation '" + activation_ + "' (only tanh)");
  }
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw std::invalid_argument("empty network layer");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l + 1]) * static_cast<std::size_t>(sizes_[l] + 1);
  }
  params_ = Vec::Zero(static_cast<Eigen::Index>(total));
  input_mean = Vec::Zero(sizes_.front());
  input_scale = Vec::Ones(sizes_.front());
  output_mean = Vec::Zero(sizes_.back());
  output_scale = Vec::Ones(sizes_.back());
}

double MappingNetwork::activate(double z) const { return std::tanh(z); }
double MappingNetwork::activate_derivative_from_output(double a) const { return 1.0 - a * a; }

Mat MappingNetwork::forward_standardized(const Mat& x) const {
  Mat a = x;
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const RowMajor> w(params_.data() + offsets_[l], out, in);
    Eigen::Map<const Vec> b(params_.data() + offsets_[l] + out * in, out);
    Mat z = w * a;
    z.colwise() += b;
    if (l + 1 < layers) z = z.unaryExpr([this](double v) { return activate(v); });
    a = std::move(z);
  }
  return a;
}

Mat MappingNetwork::predict_batch(const Mat& x_rows) const {
  if (x_rows.cols() != input_dim()) throw std::invalid_argument("network input width mismatch");
  Mat x = x_rows.transpose();
  x.colwise() -= input_mean;
  x = x.array().colwise() / input_scale.array();
  Mat y = forward_standardized(x);
  y = y.array().colwise() * output_scale.array();
  y.colwise() += output_mean;
  return y.transpose();
}

Vec MappingNetwork::predict(const Vec& x) const {
  if (x.size() != input_dim()) throw std::invalid_argument("network input width mismatch");
  if (!x.allFinite()) throw std::invalid_argument("network input is not finite");
  const Vec xs = (x - input_mean).cwiseQuotient(input_scale);
  const Vec y = forward_standardized(xs);
  return y.cwiseProduct(output_scale) + output_mean;
}

Mat MappingNetwork::input_jacobian(const Vec& x) const {
  if (x.size() != input_dim()) throw std::invalid_argument("network input width mismatch");
  Vec a = (x - input_mean).cwiseQuotient(input_scale);
  // Jacobian of the current activation with respect to the raw input.
  Mat jac = input_scale.cwiseInverse().asDiagonal();
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const RowMajor> w(params_.data() + offsets_[l], out, in);
    Eigen::Map<const Vec> b(params_.data() + offsets_[l] + out * in, out);
    Vec z = w * a + b;
    jac = w * jac;
    if (l + 1 < layers) {
      a = z.unaryExpr([this](double v) { return activate(v); });
      for (int r = 0; r < out; ++r) jac.row(r) *= activate_derivative_from_output(a[r]);
    } else {
      a = z;
    }
  }
  return output_scale.asDiagonal() * jac;
}

double MappingNetwork::loss(const Mat& x_std, const Mat& y_std, Vec* grad) const {
  const std::size_t layers = sizes_.size() - 1;
  const double batch = static_cast<double>(x_std.cols());
  std::vector<Mat> acts;
  acts.reserve(layers + 1);
  acts.push_back(x_std);
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const RowMajor> w(params_.data() + offsets_[l], out, in);
    Eigen::Map<const Vec> b(params_.data() + offsets_[l] + out * in, out);
    Mat z = w * acts.back();
    z.colwise() += b;
    if (l + 1 < layers) z = z.unaryExpr([this](double v) { return activate(v); });
    acts.push_back(std::move(z));
  }
  const Mat diff = acts.back() - y_std;
  const double value = diff.squaredNorm() / batch;
  if (grad == nullptr) return value;

  grad->setZero(params_.size());
  Mat delta = (2.0 / batch) * diff;
  for (std::size_t l = layers; l-- > 0;) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Eigen::Map<const RowMajor> w(params_.data() + offsets_[l], out, in);
    Eigen::Map<RowMajor> gw(grad->data() + offsets_[l], out, in);
    Eigen::Map<Vec> gb(grad->data() + offsets_[l] + out * in, out);
    gw.noalias() = delta * acts[l].transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Mat back = w.transpose() * delta;
      delta = back.array() * (1.0 - acts[l].array().square());
    }
  }
  return value;
}

Json MappingNetwork::to_json() const {
  Json weights = Json::array(), biases = Json::array();
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    Json w = Json::array(), b = Json::array();
    for (int i = 0; i < out * in; ++i) w.push_back(params_[static_cast<Eigen::Index>(offsets_[l]) + i]);
    for (int i = 0; i < out; ++i) {
      b.push_back(params_[static_cast<Eigen::Index>(offsets_[l]) + out * in + i]);
    }
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  return Json{{"layer_sizes", sizes_},
              {"activation", activation_},
              {"weights", std::move(weights)},
              {"biases", std::move(biases)},
              {"input_mean", saveri::to_json(input_mean)},
              {"input_scale", saveri::to_json(input_scale)},
              {"output_mean", saveri::to_json(output_mean)},
              {"output_scale", saveri::to_json(output_scale)},
              {"training_rmse", training_rmse}};
}

MappingNetwork MappingNetwork::from_json(const Json& j) {
  const std::string ctx = "mapping network";
  MappingNetwork net(require(j, "layer_sizes", ctx).get<std::vector<int>>(),
                     require(j, "activation", ctx).get<std::string>());
  const Json& weights = require(j, "weights", ctx);
  const Json& biases = require(j, "biases", ctx);
  if (weights.size() + 1 != net.sizes_.size() || biases.size() + 1 != net.sizes_.size()) {
    throw InputError(ctx + ": layer count does not match layer_sizes");
  }
  for (std::size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
    const int in = net.sizes_[l], out = net.sizes_[l + 1];
    const Vec w = vec_from_json(weights[l], ctx + ".weights");
    const Vec b = vec_from_json(biases[l], ctx + ".biases");
    if (w.size() != out * in || b.size() != out) {
      throw InputError(ctx + ": layer " + std::to_string(l) + " has wrong parameter count");
    }
    net.params_.segment(static_cast<Eigen::Index>(net.offsets_[l]), out * in) = w;
    net.params_.segment(static_cast<Eigen::Index>(net.offsets_[l]) + out * in, out) = b;
  }
  net.input_mean = vec_from_json(require(j, "input_mean", ctx), ctx + ".input_mean");
  net.input_scale = vec_from_json(require(j, "input_scale", ctx), ctx + ".input_scale");
  net.output_mean = vec_from_json(require(j, "output_mean", ctx), ctx + ".output_mean");
  net.output_scale = vec_from_json(require(j, "output_scale", ctx), ctx + ".output_scale");
  net.training_rmse = j.value("training_rmse", 0.0);
  if (net.input_mean.size() != net.input_dim() || net.input_scale.size() != net.input_dim() ||
      net.output_mean.size() != net.output_dim() || net.output_scale.size() != net.output_dim()) {
    throw InputError(ctx + ": standardization vectors have the wrong length");
  }
  if ((net.input_scale.array() <= 0.0).any() || (net.output_scale.array() <= 0.0).any()) {
    throw InputError(ctx + ": scale entries must be positive");
  }
  return net;
}

namespace {

void standardize_columns(const Mat& rows, Vec& mean, Vec& scale) {
  const double n = static_cast<double>(rows.rows());
  mean = rows.colwise().mean().transpose();
  scale = Vec(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double var = (rows.col(c).array() - mean[c]).square().sum() / n;
    const double sd = std::sqrt(var);
    scale[c] = sd > 1e-12 ? sd : 1.0;
  }
}

}  // namespace

MappingNetwork train_mapping(const Mat& inputs, const Mat& targets, const NetworkConfig& cfg) {
  if (inputs.rows() != targets.rows()) {
    throw std::invalid_argument("train_mapping: input and target counts differ");
  }
  if (inputs.rows() == 0) throw InsufficientDataError("train_mapping: no training data");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw std::invalid_argument("bad network config");

  std::vector<int> sizes{static_cast<int>(inputs.cols())};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(static_cast<int>(targets.cols()));
  MappingNetwork net(sizes, cfg.activation);
  standardize_columns(inputs, net.input_mean, net.input_scale);
  standardize_columns(targets, net.output_mean, net.output_scale);

  Mat x = inputs.transpose();
  x.colwise() -= net.input_mean;
  x = x.array().colwise() / net.input_scale.array();
  Mat y = targets.transpose();
  y.colwise() -= net.output_mean;
  y = y.array().colwise() / net.output_scale.array();
  // A constant target column is reproduced exactly, whatever the weights.
  for (Eigen::Index c = 0; c < targets.cols(); ++c) {
    if ((targets.col(c).array() == targets(0, c)).all()) net.output_scale[c] = 0.0;
  }

  Rng rng(cfg.seed);
  Vec& params = net.params();
  // Glorot-uniform weights, zero biases.
  {
    std::size_t at = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const int in = sizes[l], out = sizes[l + 1];
      const double limit = std::sqrt(6.0 / (in + out));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (int i = 0; i < out * in; ++i) params[static_cast<Eigen::Index>(at) + i] = u(rng);
      at += static_cast<std::size_t>(out) * static_cast<std::size_t>(in + 1);
    }
  }

  const Eigen::Index n = x.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Vec m1 = Vec::Zero(params.size()), m2 = Vec::Zero(params.size()), grad;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, n);
  Mat xb(x.rows(), batch), yb(y.rows(), batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index count = std::min(batch, n - start);
      xb.resize(x.rows(), count);
      yb.resize(y.rows(), count);
      for (Eigen::Index c = 0; c < count; ++c) {
        xb.col(c) = x.col(order[static_cast<std::size_t>(start + c)]);
        yb.col(c) = y.col(order[static_cast<std::size_t>(start + c)]);
      }
      const double value = net.loss(xb, yb, &grad);
      if (!std::isfinite(value) || !grad.allFinite()) {
        throw NumericalError("mapping network training diverged at epoch " +
                             std::to_string(epoch) + "; try a lower learning rate");
      }
      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      params.array() -= cfg.learning_rate * (m1.array() / c1) /
                        ((m2.array() / c2).sqrt() + eps);
    }
  }

  const Mat pred = net.predict_batch(inputs);
  net.training_rmse = std::sqrt((pred - targets).rowwise().squaredNorm().mean());
  if (!std::isfinite(net.training_rmse)) {
    throw NumericalError("mapping network produced non-finite outputs; try a lower learning rate");
  }
  return net;
}

Vec map_input(const MappingNetwork& net, const AssessmentInput& x) {
  return net.predict(x.flatten());
}

}  // namespace saveri
