// Acceptance checks. One verdict line per criterion:
//   [PASS] criterion N: ...   or   [FAIL] criterion N: ...
// Exit status is 0 only if every requested criterion passed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "saveri/pipeline.hpp"

using namespace saveri;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Config benchmark(const std::string& name) {
  return load_config(fs::path(SAVERI_BENCHMARKS) / name);
}

ClosedLoopSystem variant_of(const Config& c, Variant v) {
  SystemConfig s = c.system;
  s.variant = v;
  return make_system(s);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------

void criterion_1(Verdict& v) {
  const auto t0 = Clock::now();
  const Config cfg = benchmark("cartpole_accuracy.json");
  const EpisodeBatch batch =
      generate_episodes(variant_of(cfg, Variant::nominal), 512, cfg.episode_horizon, 1);
  long unsafe = 0;
  for (const auto& e : batch.episodes) unsafe += e.safe ? 0 : 1;
  ModelBundle bundle = initialize_model(batch, cfg);
  const ClosedLoopSystem real = variant_of(cfg, Variant::real);
  adapt_model(bundle, real, 200, 2);
  const EvalReport r = evaluate(bundle, real, 500, 0.5, 3);
  const double elapsed = seconds_since(t0);

  v.detail << "cart-pole, 512 nominal episodes (" << unsafe << " unsafe), n_t "
           << bundle.training.size() << " (mapping fit RMSE "
           << bundle.meta["fit_rmse"].get<double>() / bundle.meta["embedding_diagonal"].get<double>()
           << " of the embedding diagonal), 200 adaptation episodes; 500 real episodes at 0.5: "
           << "safe-class " << r.safe_accuracy << " ("
           << r.safe_predicted_safe + r.safe_predicted_unsafe << " safe), unsafe-class "
           << r.unsafe_accuracy << " (" << r.unsafe_predicted_unsafe + r.unsafe_predicted_safe
           << " unsafe), " << elapsed << " s on " << thread_count() << " thread(s)";
  v.require(r.safe_accuracy >= 0.85, "safe-class accuracy >= 0.85");
  v.require(r.unsafe_accuracy >= 0.85, "unsafe-class accuracy >= 0.85");
  v.require(elapsed <= 600.0, "runtime <= 10 minutes");
}

void criterion_2(Verdict& v) {
  const Config cfg = benchmark("pointmass_gap.json");
  const ClosedLoopSystem nominal = variant_of(cfg, Variant::nominal);
  const ClosedLoopSystem real = variant_of(cfg, Variant::real);
  double pre_sum = 0.0, post_sum = 0.0;
  v.detail << "point-mass, per seed Brier pre -> post:";
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Config c = cfg;
    c.seed = seed;
    c.tsne.seed = seed;
    c.network.seed = seed;
    const EpisodeBatch batch = generate_episodes(nominal, 200, c.episode_horizon, 100 + seed);
    ModelBundle bundle = initialize_model(batch, c);
    // The probe set is the same 300 real episodes for every seed.
    const double pre = evaluate(bundle, real, 300, c.threshold, 999).brier;
    adapt_model(bundle, real, 200, 200 + seed);
    const double post = evaluate(bundle, real, 300, c.threshold, 999).brier;
    v.detail << ' ' << pre << "->" << post;
    pre_sum += pre;
    post_sum += post;
  }
  const double pre = pre_sum / 5.0, post = post_sum / 5.0;
  const double drop = (pre - post) / pre;
  v.detail << "; mean " << pre << " -> " << post << ", relative decrease " << drop;
  v.require(drop >= 0.10, "relative Brier decrease >= 10%");
}

void criterion_3(Verdict& v) {
  const BeliefConfig belief;  // alpha 0.4, beta 0.3
  GridSpec spec;
  spec.nx = spec.ny = 1;
  GridModel grid(spec);
  Vec y = Vec::Constant(2, 0.5);
  for (int i = 0; i < 10; ++i) grid.add_training(y, 0.0, belief.mu_initial);
  double worst_excess = -1.0;
  int first_violation = 0;
  std::ostringstream trace;
  for (int n = 1; n <= 50; ++n) {
    grid.add_feedback(y, 1.0, 0.0);
    grid.recompute_all(belief);
    const CellState& c = grid.cell(0, 0);
    const double dist = std::max({std::abs(c.combined.safe - c.feedback.safe),
                                  std::abs(c.combined.unsafe - c.feedback.unsafe),
                                  std::abs(c.combined.mu - c.feedback.mu)});
    const double bound = belief.beta * std::exp(-belief.alpha * (n - 1)) + 1e-9;
    if (dist - bound > worst_excess) worst_excess = dist - bound;
    if (dist > bound && first_violation == 0) first_violation = n;
    if (n <= 3 || n == 50) trace << " n=" << n << ": " << dist << " vs " << bound << ";";
  }
  v.detail << "prior (0.7, 0, 0.3) against all-unsafe feedback, distance vs bound:" << trace.str()
           << " largest excess " << worst_excess;
  if (first_violation) v.detail << ", first exceeded at n=" << first_violation;
  v.require(first_violation == 0, "distance within the decay bound at every step");
}

void criterion_4(Verdict& v) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto random_bba = [&] {
    const double mu = u(rng);
    const double split = u(rng);
    return Bba{(1.0 - mu) * split, (1.0 - mu) * (1.0 - split), mu};
  };

  double worst_norm = 0.0, worst_idem = 0.0, worst_identity = 0.0, worst_single = 0.0,
         worst_perm = 0.0, worst_g_norm = 0.0;
  const auto sup = [](const Bba& a, const Bba& b) {
    return std::max({std::abs(a.safe - b.safe), std::abs(a.unsafe - b.unsafe), std::abs(a.mu - b.mu)});
  };
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<Bba> set(static_cast<std::size_t>(1 + trial % 20));
    for (auto& b : set) b = random_bba();
    const Bba f = fuse_beliefs(set);
    worst_norm = std::max(worst_norm, std::abs(f.sum() - 1.0));

    std::vector<Bba> shuffled = set;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    worst_perm = std::max(worst_perm, sup(fuse_beliefs(shuffled), f));

    const Bba b = set.front();
    if (b.mu > 1e-6) {
      const std::vector<Bba> copies(set.size(), b);
      worst_idem = std::max(worst_idem, sup(fuse_beliefs(copies), b));
      const std::vector<Bba> with_empty{b, Bba::empty()};
      worst_identity = std::max(worst_identity, sup(fuse_beliefs(with_empty), b));
      const std::vector<Bba> single{b};
      worst_single = std::max(worst_single, sup(fuse_beliefs(single), b));
    }

    std::vector<Bba> feedback(set.size());
    for (auto& m : feedback) m = bba_from_feedback(u(rng));
    const Bba g = fuse_feedback(feedback, 1 + trial % 30, 0.4, 0.3);
    worst_g_norm = std::max(worst_g_norm, std::abs(g.sum() - 1.0));
  }

  const double alpha = 0.4, beta = 0.3;
  const std::vector<Bba> member{{1.0, 0.0, 0.0}};
  const double mu_first = fuse_feedback(member, 1, alpha, beta).mu;
  const long late = 1 + static_cast<long>(std::ceil(std::log(1000.0 * beta) / alpha));
  const double mu_late = fuse_feedback(member, late, alpha, beta).mu;

  v.detail << "10^4 random sets: |sum-1| " << worst_norm << ", idempotence " << worst_idem
           << ", empty identity " << worst_identity << ", singleton " << worst_single
           << ", permutation " << worst_perm << "; feedback fusion |sum-1| " << worst_g_norm
           << ", mu(1) = " << mu_first << ", mu(" << late << ") = " << mu_late;
  v.require(worst_norm <= 1e-9, "normalization");
  v.require(worst_idem <= 1e-12, "idempotence");
  v.require(worst_identity <= 1e-12, "empty identity");
  v.require(worst_single <= 1e-12, "singleton identity");
  v.require(worst_perm <= 1e-12, "permutation invariance");
  v.require(worst_g_norm <= 1e-9, "feedback fusion normalization");
  v.require(mu_first == beta, "feedback uncertainty at count 1");
  v.require(mu_late <= 1e-3, "feedback uncertainty decay");
}

void criterion_5(Verdict& v) {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);

  int score_mismatch = 0;
  for (int i = 0; i < 1000; ++i) {
    Episode e;
    const int horizon = 1 + static_cast<int>(u(rng) * 80);
    e.desired.assign(static_cast<std::size_t>(horizon), Vec::Zero(1));
    e.termination = static_cast<int>(u(rng) * horizon);
    e.safe = false;
    const int start = static_cast<int>(u(rng) * (e.termination + 1));
    const double gamma = u(rng);
    if (unsafety_score(e, start, gamma) != std::pow(gamma, e.termination - start)) ++score_mismatch;
  }

  const auto random_sequence = [&](int length, int dim) {
    Sequence s(static_cast<std::size_t>(length), Vec(dim));
    for (auto& x : s)
      for (int d = 0; d < dim; ++d) x[d] = n(rng);
    return s;
  };
  // One random pair for every combination of lengths up to 12.
  int pairs = 0, dtw_mismatch = 0;
  for (int la = 1; la <= 12; ++la) {
    for (int lb = 1; lb <= 12; ++lb) {
      const int dim = 1 + (la + lb) % 3;
      const Sequence a = random_sequence(la, dim), b = random_sequence(lb, dim);
      ++pairs;
      if (dtw(a, b) != oracle::dtw_brute_force(a, b)) ++dtw_mismatch;
    }
  }

  std::vector<Sequence> errors;
  std::vector<double> lambdas;
  for (int i = 0; i < 60; ++i) {
    errors.push_back(random_sequence(10, 2));
    lambdas.push_back(u(rng) < 0.5 ? 0.0 : u(rng));
  }
  const DistanceMatrix d = distance_matrix(errors, lambdas, 0.01);
  int asym = 0, diag = 0;
  for (int i = 0; i < d.n; ++i) {
    diag += d(i, i) != 0.0;
    for (int j = 0; j < d.n; ++j) asym += d(i, j) != d(j, i);
  }

  v.detail << "unsafety score vs pow: " << score_mismatch << "/1000 mismatches; DTW vs path "
           << "enumeration: " << dtw_mismatch << "/" << pairs << " mismatches (lengths 1..12); "
           << "60x60 matrix: " << asym << " asymmetric entries, " << diag << " nonzero diagonal";
  v.require(score_mismatch == 0, "unsafety score exact");
  v.require(dtw_mismatch == 0, "DTW exact");
  v.require(asym == 0 && diag == 0, "symmetric with zero diagonal");
}

void criterion_6(Verdict& v) {
  Rng rng(6);
  std::normal_distribution<double> n(0.0, 0.5);
  MappingNetwork net({24, 64, 64, 2}, "tanh");
  for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] = n(rng);
  Mat x(24, 16), y(2, 16);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = n(rng);
  const double grad_err = oracle::gradient_check(net, x, y, 1e-5, 1e-6);

  const DistanceMatrix d = oracle::two_clusters(50, 0.1, 10.0);
  TsneConfig tc;
  tc.perplexity = 20.0;
  const EmbeddedSet e = tsne_embed(d, tc);
  const double agreement = oracle::nn_agreement(e.coords, 50);
  const Affinities a = tsne_affinities(d, tc.perplexity);
  const double p_sum = std::accumulate(a.p.begin(), a.p.end(), 0.0);

  v.detail << "network gradient max relative error " << grad_err << "; two-cluster 1-NN agreement "
           << agreement << "; KL " << e.kl << " vs " << e.kl_exaggeration_end
           << " after exaggeration; |sum P - 1| " << std::abs(p_sum - 1.0);
  v.require(grad_err <= 1e-4, "finite-difference gradient");
  v.require(agreement >= 0.95, "1-NN agreement");
  v.require(e.kl <= e.kl_exaggeration_end, "KL decreases after exaggeration");
  v.require(std::abs(p_sum - 1.0) <= 1e-9, "P sums to one");
}

void criterion_7(Verdict& v) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  DiscrepancyGp gp({1.0, 0.25, 1e-8}, 2000);
  for (int i = 0; i < 40; ++i) {
    Vec p(2);
    p << u(rng), u(rng);
    gp.add(p, 0.5 + 0.3 * std::sin(p[0]) * std::cos(p[1]));
  }
  gp.fit();
  double interp = 0.0;
  for (std::size_t i = 0; i < gp.size(); ++i) {
    interp = std::max(interp, std::abs(gp.predict(gp.inputs()[i]).raw_mean - gp.targets()[i]));
  }
  int above_prior = 0;
  for (int q = 0; q < 1000; ++q) {
    Vec p(2);
    p << 2.0 * u(rng), 2.0 * u(rng);
    above_prior += gp.predict(p).sd > gp.prior_sd();
  }

  const AdaptConfig adapt;  // sigma 0.3, mu_min 0.1
  const double mu_initial = 0.3;
  int branch_errors = 0;
  for (int i = 0; i <= 100; ++i) {
    const double m = i / 100.0;
    if (updated_uncertainty({m, m, 0.31}, adapt, mu_initial) != 0.3) ++branch_errors;
    if (updated_uncertainty({m, m, 0.5}, adapt, mu_initial) != 0.3) ++branch_errors;
    if (updated_uncertainty({m, m, 0.3}, adapt, mu_initial) != 0.1 + 0.9 * m) ++branch_errors;
    if (updated_uncertainty({m, m, 0.0}, adapt, mu_initial) != 0.1 + 0.9 * m) ++branch_errors;
  }
  v.detail << "interpolation error at noise 1e-8: " << interp << "; queries with sd above prior: "
           << above_prior << "/1000; uncertainty-update branch mismatches: " << branch_errors;
  v.require(interp <= 1e-3, "interpolation");
  v.require(above_prior == 0, "posterior variance bounded by prior");
  v.require(branch_errors == 0, "uncertainty update branches");
}

void criterion_8(Verdict& v) {
  const Config cfg = benchmark("cartpole_trigger.json");
  const EpisodeBatch batch =
      generate_episodes(variant_of(cfg, Variant::nominal), 300, cfg.episode_horizon, 1);
  ModelBundle bundle = initialize_model(batch, cfg);
  const ClosedLoopSystem real = variant_of(cfg, Variant::real);
  adapt_model(bundle, real, 200, 2);

  RunOptions disturbed;
  disturbed.threshold = 0.6;
  disturbed.recovery = false;
  int found = 0, fired = 0, scanned = 0;
  std::vector<double> leads;
  for (; found < 100 && scanned < 20000; ++scanned) {
    const RunTrace t = run_episode(bundle, real, cfg.episode_horizon, derive_seed(77, scanned), disturbed);
    if (t.safe) continue;
    ++found;
    if (t.trigger_step >= 0 && t.trigger_step < t.termination) {
      ++fired;
      leads.push_back(t.termination - t.trigger_step);
    }
  }

  RunOptions calm = disturbed;
  calm.disturbances = false;
  int false_triggers = 0, calm_unsafe = 0;
  for (int i = 0; i < 100; ++i) {
    const RunTrace t = run_episode(bundle, real, cfg.episode_horizon, derive_seed(88, i), calm);
    if (!t.safe) {
      ++calm_unsafe;
      continue;
    }
    false_triggers += t.trigger_step >= 0;
  }
  const double lead = median(leads);
  v.detail << "cart-pole, n_t " << bundle.training.size() << "; " << fired << "/" << found
           << " unsafe disturbed episodes triggered in time (scanned " << scanned
           << "), median lead " << lead << " steps; false triggers " << false_triggers
           << "/100 undisturbed episodes (" << calm_unsafe << " of them unsafe)";
  v.require(found == 100, "100 unsafe disturbed episodes");
  v.require(fired >= 80, "trigger before violation in >= 80%");
  v.require(lead >= 3.0, "median lead >= 3 steps");
  v.require(false_triggers <= 10, "false-trigger rate <= 10%");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SAVERI_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_9(Verdict& v) {
  const fs::path work = fs::temp_directory_path() / "saveri_acceptance_determinism";
  fs::remove_all(work);
  fs::create_directories(work);
  write_text_file(work / "cfg.json", R"({
  "system": {"disturbance": {"probability": 0.05, "magnitude": 4.0}},
  "dataset": {"stride": 10},
  "tsne": {"perplexity": 15, "iterations": 500},
  "network": {"epochs": 60}
})");
  const std::string w = work.string() + "/";
  int failures = 0;
  for (const char* run : {"1", "2"}) {
    const std::string r = run;
    failures += run_cli("gen --system point-mass --episodes 60 --seed 4 --config " + w +
                        "cfg.json --out " + w + "data" + r + ".json") != 0;
    failures += run_cli("init --data " + w + "data1.json --config " + w + "cfg.json --out " + w +
                        "model" + r) != 0;
    failures += run_cli("adapt --model " + w + "model" + r + " --episodes 10 --seed 5") != 0;
  }
  std::vector<std::string> differing;
  if (read_text_file(work / "data1.json") != read_text_file(work / "data2.json")) {
    differing.push_back("episode batch");
  }
  int compared = 1;
  for (const auto& entry : fs::directory_iterator(work / "model1")) {
    ++compared;
    const fs::path other = work / "model2" / entry.path().filename();
    if (!fs::exists(other) || read_text_file(entry.path()) != read_text_file(other)) {
      differing.push_back(entry.path().filename().string());
    }
  }
  v.detail << "gen/init/adapt run twice with fixed seeds: " << failures << " command failures, "
           << compared << " artifacts compared, " << differing.size() << " differ";
  for (const auto& d : differing) v.detail << " " << d;
  v.require(failures == 0, "commands succeed");
  v.require(differing.empty(), "byte-identical artifacts");
  fs::remove_all(work);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-9)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<void (*)(Verdict&)> criteria{criterion_1, criterion_2, criterion_3,
                                                 criterion_4, criterion_5, criterion_6,
                                                 criterion_7, criterion_8, criterion_9};
  bool all = true;
  for (int i = 1; i <= 9; ++i) {
    if (only && i != only) continue;
    Verdict v;
    const auto t0 = Clock::now();
    try {
      criteria[static_cast<std::size_t>(i - 1)](v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " error: " << e.what();
    }
    std::cout << (v.pass ? "[PASS]" : "[FAIL]") << " criterion " << i << ": " << v.detail.str()
              << " (" << std::round(seconds_since(t0) * 10) / 10 << " s)" << std::endl;
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
