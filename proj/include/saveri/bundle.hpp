#pragma once

// Run configuration and the on-disk model bundle.

#include <cstdint>
#include <filesystem>
#include <string>

#include "saveri/adapt.hpp"
#include "saveri/belief.hpp"
#include "saveri/dataset.hpp"
#include "saveri/dynamics.hpp"
#include "saveri/mapping_network.hpp"
#include "saveri/tsne.hpp"

namespace saveri {

struct GridConfig {
  int cells = 14;
  double margin = 0.05;       // per side, fraction of the embedding extent
  bool fixed_length = false;  // use cell_length instead of the extent
  double cell_length = 10.0;
};

struct Config {
  SystemConfig system;     // nominal parameters; the real variant adds the gap
  int episode_horizon = 60;  // T for rollouts made by adapt, run and eval
  int horizon = 10;          // H
  double gamma = 0.99;
  int stride = 1;
  double delta_lambda = 0.01;
  TsneConfig tsne;
  NetworkConfig network;
  GridConfig grid;
  BeliefConfig belief;
  AdaptConfig adapt;
  double threshold = 0.6;
  std::uint64_t seed = 1;
};

Json to_json(const Config& c);
/// Missing keys keep their defaults; invalid values raise InputError.
Config config_from_json(const Json& j);
Config load_config(const std::filesystem::path& path);
std::string config_hash(const Config& c);

struct ModelBundle {
  Config config;
  MappingNetwork net;
  GridModel grid;
  DiscrepancyGp gp;
  Json meta;
  /// Training data and its t-SNE coordinates; kept so exports can be
  /// regenerated from the bundle alone.
  DatasetMeta training_meta;
  std::vector<TrainingDatum> training;
  Mat tsne_coords;

  int input_dim() const { return net.input_dim(); }
};

/// Writes config.json, mlp.json, grid.json, gpr.json, training.json and
/// meta.json into `dir`, creating it if needed.
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
/// Loads a bundle and checks the config hash recorded in meta.json.
ModelBundle load_bundle(const std::filesystem::path& dir);

/// Throws IncompatibleError if `system` cannot feed inputs of the bundle's
/// dimension.
void check_compatible(const ModelBundle& bundle, const ClosedLoopSystem& system);

}  // namespace saveri
