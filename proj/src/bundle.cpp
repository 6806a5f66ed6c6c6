#include "saveri/bundle.hpp"

namespace saveri {

namespace {

std::string decay_name(FeedbackDecay d) { return d == FeedbackDecay::global ? "global" : "per_cell"; }

FeedbackDecay decay_from_string(const std::string& s) {
  if (s == "global") return FeedbackDecay::global;
  if (s == "per_cell") return FeedbackDecay::per_cell;
  throw InputError("config: belief.decay must be 'global' or 'per_cell', got '" + s + "'");
}

}  // namespace

Json to_json(const Config& c) {
  return Json{
      {"system", to_json(c.system)},
      {"episode_horizon", c.episode_horizon},
      {"dataset", {{"horizon", c.horizon}, {"gamma", c.gamma}, {"stride", c.stride}}},
      {"metric",
       {{"delta_lambda", c.delta_lambda},
        {"local_cost", "euclidean"},
        {"step_pattern", "symmetric1"}}},
      {"tsne", to_json(c.tsne)},
      {"network", to_json(c.network)},
      {"grid",
       {{"cells", c.grid.cells},
        {"margin", c.grid.margin},
        {"mode", c.grid.fixed_length ? "fixed" : "extent"},
        {"cell_length", c.grid.cell_length}}},
      {"belief",
       {{"mu_initial", c.belief.mu_initial},
        {"k_min", c.belief.k_min},
        {"alpha", c.belief.alpha},
        {"beta", c.belief.beta},
        {"decay", decay_name(c.belief.decay)},
        {"fusion_floor", kFusionFloor}}},
      {"adapt", to_json(c.adapt)},
      {"threshold", c.threshold},
      {"seed", c.seed}};
}

Config config_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("config: expected a JSON object");
  Config c;
  try {
    if (j.contains("system")) c.system = system_config_from_json(j["system"]);
    c.episode_horizon = j.value("episode_horizon", c.episode_horizon);
    if (j.contains("dataset")) {
      const Json& d = j["dataset"];
      c.horizon = d.value("horizon", c.horizon);
      c.gamma = d.value("gamma", c.gamma);
      c.stride = d.value("stride", c.stride);
    }
    if (j.contains("metric")) c.delta_lambda = j["metric"].value("delta_lambda", c.delta_lambda);
    if (j.contains("tsne")) c.tsne = tsne_config_from_json(j["tsne"]);
    if (j.contains("network")) c.network = network_config_from_json(j["network"]);
    if (j.contains("grid")) {
      const Json& g = j["grid"];
      c.grid.cells = g.value("cells", c.grid.cells);
      c.grid.margin = g.value("margin", c.grid.margin);
      const std::string mode = g.value("mode", std::string("extent"));
      if (mode != "extent" && mode != "fixed") {
        throw InputError("config: grid.mode must be 'extent' or 'fixed'");
      }
      c.grid.fixed_length = mode == "fixed";
      c.grid.cell_length = g.value("cell_length", c.grid.cell_length);
    }
    if (j.contains("belief")) {
      const Json& b = j["belief"];
      c.belief.mu_initial = b.value("mu_initial", c.belief.mu_initial);
      c.belief.k_min = b.value("k_min", c.belief.k_min);
      c.belief.alpha = b.value("alpha", c.belief.alpha);
      c.belief.beta = b.value("beta", c.belief.beta);
      c.belief.decay = decay_from_string(b.value("decay", decay_name(c.belief.decay)));
    }
    if (j.contains("adapt")) c.adapt = adapt_config_from_json(j["adapt"]);
    c.threshold = j.value("threshold", c.threshold);
    c.seed = j.value("seed", c.seed);
  } catch (const Json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }

  if (c.episode_horizon < 1) throw InputError("config: episode_horizon must be >= 1");
  if (c.horizon < 1) throw InputError("config: dataset.horizon must be >= 1");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw InputError("config: dataset.gamma must lie in [0, 1]");
  if (c.stride < 1) throw InputError("config: dataset.stride must be >= 1");
  if (!(c.delta_lambda >= 0.0)) throw InputError("config: metric.delta_lambda must be >= 0");
  if (c.grid.cells < 1) throw InputError("config: grid.cells must be >= 1");
  if (!(c.grid.margin >= 0.0)) throw InputError("config: grid.margin must be >= 0");
  if (c.grid.fixed_length && !(c.grid.cell_length > 0.0)) {
    throw InputError("config: grid.cell_length must be positive");
  }
  if (c.belief.k_min < 0) throw InputError("config: belief.k_min must be >= 0");
  validate(c.adapt, c.belief);
  return c;
}

Config load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

std::string config_hash(const Config& c) { return hex64(fnv1a(dump_json(to_json(c)))); }

namespace {

Json training_json(const ModelBundle& b) {
  Json j = dataset_to_json(b.training_meta, b.training);
  Json coords = Json::array();
  for (Eigen::Index i = 0; i < b.tsne_coords.rows(); ++i) {
    coords.push_back(to_json(Vec(b.tsne_coords.row(i).transpose())));
  }
  j["embedding"] = std::move(coords);
  return j;
}

}  // namespace

void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create bundle directory " + dir.string() + ": " + ec.message());
  Json meta = bundle.meta.is_object() ? bundle.meta : Json::object();
  meta["config_hash"] = config_hash(bundle.config);
  write_text_file(dir / "config.json", dump_json(to_json(bundle.config)));
  write_text_file(dir / "mlp.json", dump_json(bundle.net.to_json()));
  write_text_file(dir / "grid.json", dump_json(bundle.grid.to_json()));
  write_text_file(dir / "gpr.json", dump_json(bundle.gp.to_json()));
  write_text_file(dir / "training.json", dump_json(training_json(bundle)));
  write_text_file(dir / "meta.json", dump_json(meta));
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw InputError("model bundle " + dir.string() + " does not exist");
  }
  ModelBundle b;
  b.meta = read_json_file(dir / "meta.json");
  b.config = load_config(dir / "config.json");
  const std::string expected = b.meta.value("config_hash", std::string());
  const std::string actual = config_hash(b.config);
  if (expected != actual) {
    throw IncompatibleError("config.json does not match the hash recorded in meta.json (" +
                            expected + " vs " + actual + ")");
  }
  try {
    b.net = MappingNetwork::from_json(read_json_file(dir / "mlp.json"));
    b.grid = GridModel::from_json(read_json_file(dir / "grid.json"));
    b.gp = DiscrepancyGp::from_json(read_json_file(dir / "gpr.json"));
  } catch (const Json::exception& e) {
    throw InputError("model bundle " + dir.string() + ": " + e.what());
  }
  const Json training = read_json_file(dir / "training.json");
  auto set = training_set_from_json(training, (dir / "training.json").string());
  b.training_meta = set.meta;
  b.training = std::move(set.data);
  const Json& coords = require(training, "embedding", "training.json");
  if (!coords.is_array() || coords.size() != b.training.size()) {
    throw InputError("training.json: embedding must have one row per datum");
  }
  b.tsne_coords.resize(static_cast<Eigen::Index>(coords.size()), b.net.output_dim());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Vec row = vec_from_json(coords[i], "training.json embedding");
    if (row.size() != b.net.output_dim()) throw InputError("training.json: embedding row size");
    b.tsne_coords.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return b;
}

void check_compatible(const ModelBundle& bundle, const ClosedLoopSystem& system) {
  const int dim = system.state_dim() + bundle.config.horizon * system.output_dim();
  if (dim != bundle.input_dim()) {
    throw IncompatibleError("system '" + system.name() + "' produces assessment inputs of dimension " +
                            std::to_string(dim) + " but the model expects " +
                            std::to_string(bundle.input_dim()));
  }
  const std::string trained = bundle.meta.value("system", std::string());
  if (!trained.empty() && trained != system.name()) {
    throw IncompatibleError("model was built for system '" + trained + "', got '" + system.name() +
                            "'");
  }
}

}  // namespace saveri
