// Command-line front end: gen, init, adapt, assess, run, eval, export.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "saveri/metric.hpp"
#include "saveri/pipeline.hpp"

using namespace saveri;

namespace {

void print_json(const Json& j) { std::cout << dump_json(j) << '\n'; }

/// The system the bundle was built on, switched to `variant`, with the name
/// given on the command line (a different name is an incompatibility).
ClosedLoopSystem bundle_system(const ModelBundle& b, const std::string& name, Variant variant,
                               std::optional<double> gap) {
  SystemConfig c = b.config.system;
  if (!name.empty() && name != c.name) {
    // Build it anyway so unknown names still report the available systems.
    SystemConfig other;
    other.name = name;
    other.variant = variant;
    const ClosedLoopSystem sys = make_system(other);
    check_compatible(b, sys);
  }
  c.variant = variant;
  if (gap) c.gap = *gap;
  return make_system(c);
}

int cmd_gen(const std::string& system, const std::string& variant, int episodes, int horizon,
            std::uint64_t seed, const std::string& out, const std::string& config_path,
            std::optional<double> gap, bool no_disturbances) {
  SystemConfig sc;
  if (!config_path.empty()) sc = load_config(config_path).system;
  sc.name = system;
  sc.variant = variant_from_string(variant);
  if (gap) sc.gap = *gap;
  const ClosedLoopSystem sys = make_system(sc);
  if (episodes < 1) throw InputError("--episodes must be >= 1");
  const EpisodeBatch batch = generate_episodes(sys, episodes, horizon, seed, !no_disturbances);
  write_text_file(out, dump_json(to_json(batch)));
  long safe = 0;
  for (const auto& e : batch.episodes) safe += e.safe ? 1 : 0;
  print_json(Json{{"episodes", episodes}, {"safe", safe}, {"unsafe", episodes - safe}, {"out", out}});
  return 0;
}

int cmd_init(const std::string& data, const std::string& config_path, const std::string& out) {
  const Config cfg = config_path.empty() ? Config{} : load_config(config_path);
  const EpisodeBatch batch = episode_batch_from_json(read_json_file(data));
  InitSummary summary;
  const ModelBundle bundle = initialize_model(batch, cfg, &summary);
  save_bundle(out, bundle);
  print_json(to_json(summary));
  return 0;
}

int cmd_adapt(const std::string& model, const std::string& system, int episodes,
              std::optional<int> k_u, std::uint64_t seed, const std::string& log_path,
              std::optional<double> gap) {
  ModelBundle bundle = load_bundle(model);
  if (k_u) {
    if (*k_u < 1) throw InputError("--k-u must be >= 1");
    bundle.config.adapt.k_u = *k_u;
  }
  const ClosedLoopSystem real = bundle_system(bundle, system, Variant::real, gap);
  const AdaptSummary s = adapt_model(bundle, real, episodes, seed);
  save_bundle(model, bundle);
  const std::string path = log_path.empty() ? model + "/adapt_log.jsonl" : log_path;
  std::string lines;
  for (const auto& record : s.log) lines += record.dump() + "\n";
  if (!s.log.empty() || !log_path.empty()) write_text_file(path, lines);
  print_json(Json{{"episodes", s.episodes},
                  {"feedback", s.feedback},
                  {"steps", s.steps},
                  {"n_f", bundle.grid.feedback_count()}});
  return 0;
}

int cmd_assess(const std::string& model, const std::string& input) {
  const ModelBundle bundle = load_bundle(model);
  const AssessmentInput x = assessment_input_from_json(read_json_file(input), bundle);
  print_json(to_json(assess_input(bundle, x)));
  return 0;
}

int cmd_run(const std::string& model, const std::string& system, const std::string& variant,
            std::optional<double> threshold, int episodes, std::uint64_t seed,
            const std::string& log_path, bool no_recovery) {
  const ModelBundle bundle = load_bundle(model);
  const ClosedLoopSystem sys = bundle_system(bundle, system, variant_from_string(variant), {});
  RunOptions opts;
  opts.threshold = threshold.value_or(bundle.config.threshold);
  opts.recovery = !no_recovery;
  const auto traces = run_episodes(bundle, sys, episodes, seed, opts);
  std::string lines;
  long triggers = 0, safe = 0;
  for (const auto& t : traces) {
    lines += to_json(t).dump() + "\n";
    triggers += t.trigger_step >= 0 ? 1 : 0;
    safe += t.safe ? 1 : 0;
  }
  if (!log_path.empty()) write_text_file(log_path, lines);
  print_json(Json{{"episodes", static_cast<long>(traces.size())},
                  {"threshold", opts.threshold},
                  {"triggered", triggers},
                  {"safe", safe}});
  return 0;
}

int cmd_eval(const std::string& model, const std::string& system, const std::string& variant,
             int episodes, std::optional<double> threshold, std::uint64_t seed,
             const std::string& report) {
  const ModelBundle bundle = load_bundle(model);
  const ClosedLoopSystem sys = bundle_system(bundle, system, variant_from_string(variant), {});
  const EvalReport r =
      evaluate(bundle, sys, episodes, threshold.value_or(bundle.config.threshold), seed);
  const Json j = to_json(r);
  if (!report.empty()) write_text_file(report, dump_json(j));
  Json brief = j;
  brief.erase("config");
  print_json(brief);
  return 0;
}

int cmd_export(const std::string& model, const std::string& what, const std::string& format,
               const std::string& out) {
  if (what != "grid" && what != "embedding" && what != "distances") {
    throw InputError("--what must be one of grid, embedding, distances; got '" + what + "'");
  }
  const std::string fmt = format.empty() ? (what == "distances" ? "bin" : "csv") : format;
  if ((what == "distances") != (fmt == "bin") || (fmt != "bin" && fmt != "csv")) {
    throw InputError("--format " + fmt + " is not available for --what " + what);
  }
  const ModelBundle bundle = load_bundle(model);
  if (what == "grid") {
    write_text_file(out, bundle.grid.to_csv());
  } else if (what == "embedding") {
    write_text_file(out, embedding_csv(bundle));
  } else {
    write_distance_matrix(out, bundle_distances(bundle));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned safety assessment for closed-loop tracking systems"};
  app.require_subcommand(1);

  std::string system = "point-mass", variant = "nominal", out, config_path, data, model, input,
              log_path, report, what, format;
  std::string run_variant = "real";
  int episodes = 0, horizon = 60;
  std::uint64_t seed = 1;
  std::optional<double> gap, threshold;
  std::optional<int> k_u;
  bool no_disturbances = false, no_recovery = false;

  auto* gen = app.add_subcommand("gen", "Roll out episodes and write an episode batch");
  gen->add_option("--system", system, "point-mass or cart-pole")->required();
  gen->add_option("--variant", variant, "nominal or real")->capture_default_str();
  gen->add_option("--episodes", episodes)->required();
  gen->add_option("--horizon", horizon, "Planning horizon T (steps)")->capture_default_str();
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("--out", out)->required();
  gen->add_option("--config", config_path, "Config file with system parameters");
  gen->add_option("--gap", gap, "Scale of the real-variant parameter offsets");
  gen->add_flag("--no-disturbances", no_disturbances);

  auto* init = app.add_subcommand("init", "Build a model bundle from nominal episodes");
  init->add_option("--data", data)->required();
  init->add_option("--config", config_path);
  init->add_option("--out", out)->required();

  auto* adapt = app.add_subcommand("adapt", "Adapt a bundle with real-system feedback");
  adapt->add_option("--model", model)->required();
  adapt->add_option("--system", system);
  adapt->add_option("--episodes", episodes)->required();
  adapt->add_option("--k-u", k_u, "Feedback data per adaptation step");
  adapt->add_option("--seed", seed)->capture_default_str();
  adapt->add_option("--log", log_path, "JSON-lines adaptation log");
  adapt->add_option("--gap", gap);

  auto* assess_cmd = app.add_subcommand("assess", "Assess one input");
  assess_cmd->add_option("--model", model)->required();
  assess_cmd->add_option("--input", input)->required();

  auto* run = app.add_subcommand("run", "Monitored rollouts with a recovery trigger");
  run->add_option("--model", model)->required();
  run->add_option("--system", system);
  run->add_option("--variant", run_variant)->capture_default_str();
  run->add_option("--threshold", threshold);
  run->add_option("--episodes", episodes)->required();
  run->add_option("--seed", seed)->capture_default_str();
  run->add_option("--log", log_path);
  run->add_flag("--no-recovery", no_recovery);

  auto* eval = app.add_subcommand("eval", "Planning-phase prediction accuracy on fresh episodes");
  eval->add_option("--model", model)->required();
  eval->add_option("--system", system);
  eval->add_option("--variant", run_variant)->capture_default_str();
  eval->add_option("--episodes", episodes)->required();
  eval->add_option("--threshold", threshold);
  eval->add_option("--seed", seed)->capture_default_str();
  eval->add_option("--report", report);

  auto* exp = app.add_subcommand("export", "Export grid, embedding or distances");
  exp->add_option("--model", model)->required();
  exp->add_option("--what", what)->required();
  exp->add_option("--format", format);
  exp->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  // The bundle's own system is the default for commands that take a model.
  const auto model_system = [&](CLI::App* cmd) {
    return cmd->count("--system") ? system : std::string();
  };

  try {
    if (*gen) {
      return cmd_gen(system, variant, episodes, horizon, seed, out, config_path, gap,
                     no_disturbances);
    }
    if (*init) return cmd_init(data, config_path, out);
    if (*adapt) return cmd_adapt(model, model_system(adapt), episodes, k_u, seed, log_path, gap);
    if (*assess_cmd) return cmd_assess(model, input);
    if (*run) {
      return cmd_run(model, model_system(run), run_variant, threshold, episodes, seed, log_path,
                     no_recovery);
    }
    if (*eval) {
      return cmd_eval(model, model_system(eval), run_variant, episodes, threshold, seed, report);
    }
    if (*exp) return cmd_export(model, what, format, out);
  } catch (const InsufficientDataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const IncompatibleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
