// Command-line front end: data generation, fitting, loss evaluation, rate
// sweeps and identifiability diagnostics.

#include <omp.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "smoe/harness.hpp"
#include "smoe/identifiability.hpp"
#include "smoe/voronoi.hpp"

using namespace smoe;

namespace {

struct Global {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 0;
};

// Writes to --out when given, stdout otherwise.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write(os);
}

SweepConfig base_config(const Global& g) {
  return g.config.empty() ? SweepConfig{} : load_sweep_config(g.config);
}

// Flags shared by every subcommand that builds a ground truth.
struct TruthFlags {
  std::optional<std::size_t> d, k_star, degree;
  std::optional<std::string> regime, activation, gating;
  std::optional<double> nu;

  void add(CLI::App* cmd) {
    cmd->add_option("--d", d, "Input dimension");
    cmd->add_option("--k-star", k_star, "Number of true atoms");
    cmd->add_option("--regime", regime, "1 or 2");
    cmd->add_option("--activation", activation, "relu, gelu, identity or polynomial");
    cmd->add_option("--degree", degree, "Polynomial degree");
    cmd->add_option("--gating", gating, "sigmoid or softmax");
    cmd->add_option("--nu", nu, "Noise variance");
  }

  void apply(GroundTruthConfig& gt) const {
    if (d) gt.set_dimension(*d);
    if (k_star) gt.k_star = *k_star;
    if (regime) gt.regime = parse_regime(*regime);
    if (activation || degree) gt.activation = Activation::parse(activation.value_or(gt.activation.name()), degree.value_or(gt.activation.degree));
    if (gating) gt.gating = parse_gating(*gating);
    if (nu) gt.nu = *nu;
  }
};

struct TrainFlags {
  std::optional<std::size_t> k, epochs, batch_size, batches_per_epoch;
  std::optional<double> lr, init_perturb;

  void add(CLI::App* cmd) {
    cmd->add_option("--k", k, "Fitted atoms");
    cmd->add_option("--epochs", epochs, "SGD epochs");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--batch-size", batch_size, "Fixed batch size (used when --batches-per-epoch is 0)");
    cmd->add_option("--batches-per-epoch", batches_per_epoch, "Batch size becomes ceil(n / this); 0 disables");
    cmd->add_option("--init-perturb", init_perturb, "Std of the initial perturbation");
  }

  void apply(TrainConfig& tr) const {
    if (k) tr.k = *k;
    if (epochs) tr.epochs = *epochs;
    if (lr) tr.lr = *lr;
    if (batch_size) tr.batch_size = *batch_size;
    if (batches_per_epoch) tr.batches_per_epoch = *batches_per_epoch;
    if (init_perturb) tr.init_perturb = *init_perturb;
  }
};

struct SweepFlags {
  std::optional<std::string> n_grid, losses;
  std::optional<std::size_t> replicates, mc_samples;

  void add(CLI::App* cmd) {
    cmd->add_option("--n-grid", n_grid, "Comma-separated sample sizes");
    cmd->add_option("--replicates", replicates, "Replicates per sample size");
    cmd->add_option("--losses", losses, "e.g. D1,D2(2),D3,L2");
    cmd->add_option("--mc-samples", mc_samples, "Monte Carlo points for L2");
  }

  void apply(SweepConfig& cfg) const {
    if (n_grid) {
      cfg.n_grid.clear();
      std::string item;
      std::istringstream is(*n_grid);
      while (std::getline(is, item, ',')) cfg.n_grid.push_back(std::stoull(item));
    }
    if (replicates) cfg.replicates = *replicates;
    if (losses) cfg.losses = parse_loss_list(*losses);
    if (mc_samples) cfg.mc_samples = *mc_samples;
  }
};

SweepConfig sweep_config(const Global& g, const TruthFlags& t, const TrainFlags& tr, const SweepFlags& s) {
  SweepConfig cfg = base_config(g);
  const std::size_t old_k_star = cfg.ground_truth.k_star;
  t.apply(cfg.ground_truth);
  // Keep k = k* + 1 unless the fitted size was set explicitly.
  if (!tr.k && cfg.train.k == old_k_star + 1) cfg.train.k = cfg.ground_truth.k_star + 1;
  tr.apply(cfg.train);
  s.apply(cfg);
  if (g.seed) cfg.base_seed = *g.seed;
  if (!g.out.empty()) cfg.output_path = g.out;
  if (g.threads > 0) cfg.threads = g.threads;
  cfg.validate();
  return cfg;
}

void setup(const Global& g) {
  if (g.threads > 0) omp_set_num_threads(g.threads);
}

void print_rates(const std::vector<RateFitResult>& rates) { write_rate_report(std::cout, rates); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sigmoid-gated mixture of experts: estimation and convergence-rate tools"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config, "INI config with [ground_truth], [train], [sweep]");
  app.add_option("--seed", g.seed, "Seed for the subcommand's random stream");
  app.add_option("--out", g.out, "Output path or prefix");
  app.add_option("--threads", g.threads, "OpenMP threads (0: default)");

  // gen-truth
  auto* gen_truth = app.add_subcommand("gen-truth", "Sample a ground-truth mixing measure");
  TruthFlags gt_flags;
  gt_flags.add(gen_truth);
  gen_truth->callback([&] {
    setup(g);
    GroundTruthConfig gt = base_config(g).ground_truth;
    gt_flags.apply(gt);
    if (g.seed) gt.seed = *g.seed;
    gt.validate();
    Rng rng(gt.seed);
    const auto truth = sample_ground_truth(gt, rng);
    emit(g.out, [&](std::ostream& os) { write_measure(os, truth); });
  });

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "Draw a dataset from a measure");
  std::string truth_path;
  std::size_t n = 1000;
  std::optional<double> data_nu;
  gen_data->add_option("--truth", truth_path, "Measure file")->required();
  gen_data->add_option("--n", n, "Sample size");
  gen_data->add_option("--nu", data_nu, "Noise variance");
  gen_data->callback([&] {
    setup(g);
    if (g.out.empty()) throw CLI::ValidationError("--out", "gen-data needs --out <stem>");
    const double nu = data_nu.value_or(base_config(g).ground_truth.nu);
    const std::uint64_t seed = g.seed.value_or(0);
    Rng rng(seed);
    Dataset data = generate_dataset(load_measure(truth_path), n, nu, rng);
    data.data_seed = seed;
    save_dataset(g.out, data);
  });

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Least-squares SGD fit initialised near the truth");
  std::string data_stem, init_path;
  TrainFlags fit_flags;
  fit_cmd->add_option("--data", data_stem, "Dataset stem")->required();
  fit_cmd->add_option("--init", init_path, "Initial measure (default: perturbed copy of the data's truth)");
  fit_flags.add(fit_cmd);
  fit_cmd->callback([&] {
    setup(g);
    TrainConfig tr = base_config(g).train;
    fit_flags.apply(tr);
    if (g.seed) tr.seed = *g.seed;
    const Dataset data = load_dataset(data_stem);
    if (!fit_flags.k && g.config.empty()) tr.k = data.truth.size() + 1;
    Rng init_rng(child_seed(tr.seed, 1)), fit_rng(child_seed(tr.seed, 2));
    const MixingMeasure init =
        init_path.empty() ? init_near_truth(data.truth, tr.k, tr.init_perturb, init_rng) : load_measure(init_path);
    tr.k = init.size();
    tr.validate();
    const FitResult res = fit(data, init, tr, fit_rng);
    const std::string prefix = g.out.empty() ? "fit" : g.out;
    save_measure(prefix + ".measure", res.fitted);
    write_loss_trace(prefix + "_trace.csv", res);
    std::cout << "final loss " << res.final_loss << "\n";
  });

  // eval-loss
  auto* eval_cmd = app.add_subcommand("eval-loss", "Voronoi losses and L2 distance between two measures");
  std::string fitted_path, reference_path, eval_losses = "D1,D2,D3,L2";
  std::size_t eval_mc = 100000;
  eval_cmd->add_option("--fitted", fitted_path, "Fitted measure")->required();
  eval_cmd->add_option("--reference", reference_path, "Reference measure")->required();
  eval_cmd->add_option("--losses", eval_losses, "e.g. D1,D2(2),D3,L2");
  eval_cmd->add_option("--mc-samples", eval_mc, "Monte Carlo points for L2");
  eval_cmd->callback([&] {
    setup(g);
    const auto fitted = load_measure(fitted_path), ref = load_measure(reference_path);
    emit(g.out, [&](std::ostream& os) {
      write_loss_csv_header(os);
      for (const LossSpec& spec : parse_loss_list(eval_losses)) {
        switch (spec.kind) {
          case LossSpec::Kind::D1: write_loss_csv_row(os, loss_d1(fitted, ref)); break;
          case LossSpec::Kind::D2: write_loss_csv_row(os, loss_d2(fitted, ref, spec.r)); break;
          case LossSpec::Kind::D3:
            // Same convention as the sweeps: the reference is rewritten with
            // the fitted number of atoms before matching.
            write_loss_csv_row(os, loss_d3(fitted, fitted.size() > ref.size() ? split_anchor(ref, fitted.size()) : ref));
            break;
          case LossSpec::Kind::L2: {
            Rng rng(g.seed.value_or(0));
            LossBreakdown l2;
            l2.name = "L2";
            l2.total = l2_distance(fitted, ref, eval_mc, rng);
            write_loss_csv_row(os, l2);
            break;
          }
        }
      }
    });
  });

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Replicated fits over a sample-size grid");
  TruthFlags sw_truth;
  TrainFlags sw_train;
  SweepFlags sw_flags;
  sw_truth.add(sweep_cmd);
  sw_train.add(sweep_cmd);
  sw_flags.add(sweep_cmd);
  sweep_cmd->callback([&] {
    setup(g);
    const SweepConfig cfg = sweep_config(g, sw_truth, sw_train, sw_flags);
    print_rates(write_sweep_outputs(cfg.output_path, run_sweep(cfg)));
  });

  // rate
  auto* rate_cmd = app.add_subcommand("rate", "Aggregate a raw CSV and fit log-log slopes");
  std::string raw_path;
  rate_cmd->add_option("--raw", raw_path, "Raw results CSV")->required();
  rate_cmd->callback([&] {
    setup(g);
    std::ifstream is(raw_path);
    if (!is) throw std::runtime_error("cannot open " + raw_path);
    const auto agg = aggregate(read_raw_csv(is));
    const auto rates = fit_rates(agg);
    if (!g.out.empty()) {
      std::ofstream a(g.out + "_aggregate.csv"), r(g.out + "_rates.csv"), p(g.out + "_plot.dat");
      write_aggregate_csv(a, agg);
      write_rate_report(r, rates);
      write_plot_data(p, rates);
    }
    print_rates(rates);
  });

  // compare-gates
  auto* cmp_cmd = app.add_subcommand("compare-gates", "Same sweep with sigmoid and softmax gating");
  TruthFlags cmp_truth;
  TrainFlags cmp_train;
  SweepFlags cmp_flags;
  cmp_truth.add(cmp_cmd);
  cmp_train.add(cmp_cmd);
  cmp_flags.add(cmp_cmd);
  cmp_cmd->callback([&] {
    setup(g);
    const SweepConfig cfg = sweep_config(g, cmp_truth, cmp_train, cmp_flags);
    const GateComparison cmp = compare_gates(cfg);
    if (!g.out.empty()) {
      write_sweep_outputs(g.out + "_sigmoid", cmp.sigmoid);
      write_sweep_outputs(g.out + "_softmax", cmp.softmax);
    }
    write_gate_comparison(std::cout, cmp);
  });

  // ident-check
  auto* ident_cmd = app.add_subcommand("ident-check", "Linear independence of a derivative class");
  std::string mode = "weak", ident_act = "gelu", atoms_path;
  int ident_degree = 1;
  std::size_t samples = 0;
  double tol = 1e-6;
  ident_cmd->add_option("--mode", mode, "strong or weak")->check(CLI::IsMember({"strong", "weak"}));
  ident_cmd->add_option("--activation", ident_act, "relu, gelu, identity or polynomial");
  ident_cmd->add_option("--degree", ident_degree, "Polynomial degree");
  ident_cmd->add_option("--atoms", atoms_path, "Measure file holding the atoms")->required();
  ident_cmd->add_option("--samples", samples, "Sample points (default max(2000, 10 * functions))");
  ident_cmd->add_option("--tol", tol, "Singular value ratio threshold");
  ident_cmd->callback([&] {
    setup(g);
    const auto atoms = load_measure(atoms_path).atoms;
    const auto cls = build_derivative_class(Activation::parse(ident_act, ident_degree), atoms,
                                            mode == "strong" ? IdentifiabilityMode::Strong : IdentifiabilityMode::Weak);
    Rng rng(g.seed.value_or(0));
    const auto rep = independence_test(cls, samples ? samples : default_sample_count(cls.entries.size()), tol, rng);
    write_independence_report(std::cout, cls, rep);
    if (!g.out.empty()) {
      std::ofstream os(g.out + "_report.txt"), sv(g.out + "_singular_values.csv");
      write_independence_report(os, cls, rep);
      write_singular_values_csv(sv, rep);
    }
  });

  // slow-seq
  auto* slow_cmd = app.add_subcommand("slow-seq", "Slow-converging sequence G_n for a flat first atom");
  std::string slow_truth, kind = "linear";
  std::size_t slow_n = 100;
  double slow_r = 1.0, slow_c = 1.0;
  slow_cmd->add_option("--truth", slow_truth, "Measure whose first atom has zero gating slope and a = 0")->required();
  slow_cmd->add_option("--kind", kind, "linear or activation")->check(CLI::IsMember({"linear", "activation"}));
  slow_cmd->add_option("--n", slow_n, "Sequence index");
  slow_cmd->add_option("--r", slow_r, "Exponent (linear)");
  slow_cmd->add_option("--c", slow_c, "Bias step (activation)");
  slow_cmd->callback([&] {
    setup(g);
    const auto truth = load_measure(slow_truth);
    const auto gn = kind == "linear" ? slow_sequence_linear(truth, slow_n, slow_r)
                                     : slow_sequence_activation(truth, slow_n, slow_c);
    emit(g.out, [&](std::ostream& os) { write_measure(os, gn); });
    std::cerr << "D2(" << slow_r << ") = " << loss_d2(gn, truth, slow_r).total << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
