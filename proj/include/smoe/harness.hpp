#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoe/synth.hpp"
#include "smoe/trainer.hpp"
#include "smoe/voronoi.hpp"

namespace smoe {

/// One loss evaluated per fitted replicate.
struct LossSpec {
  enum class Kind { D1, D2, D3, L2 };
  Kind kind = Kind::D1;
  double r = 1.0;  // exponent, D2 only

  std::string name() const;
  /// Accepts D1, D2 (r = 1), D2:<r>, D2(<r>), D3, L2.
  static LossSpec parse(const std::string& text);

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

std::vector<LossSpec> parse_loss_list(const std::string& text);

struct SweepConfig {
  GroundTruthConfig ground_truth;
  TrainConfig train;
  std::vector<std::size_t> n_grid = geometric_grid(1000, 100000, 10);
  std::size_t replicates = 20;
  std::vector<LossSpec> losses{LossSpec{}};
  std::size_t mc_samples = 100000;
  std::uint64_t base_seed = 0;
  std::string output_path = "sweep";
  int threads = 0;  // 0: OpenMP default

  void validate() const;

  /// count points from lo to hi, geometrically spaced and rounded.
  static std::vector<std::size_t> geometric_grid(std::size_t lo, std::size_t hi, std::size_t count);
};

struct RawRow {
  Regime regime = Regime::Regime1;
  Gating gating = Gating::Sigmoid;
  std::string activation;
  std::size_t n = 0;
  std::size_t replicate = 0;
  std::string loss_name;
  double r = 1.0;
  double value = 0.0;
  bool diverged = false;
  std::uint64_t seed = 0;
};

struct SweepResult {
  MixingMeasure truth;
  std::vector<RawRow> rows;  // sorted by (n, replicate, loss order)
};

/// Thrown when more than 20% of the replicates at some n diverged.
class SweepError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-(n, replicate) seed; stable under changes to the rest of the grid.
std::uint64_t replicate_seed(std::uint64_t base_seed, std::size_t n, std::size_t replicate);

/// G* is sampled once from ground_truth.seed and shared by every cell.
/// Cells are independent jobs on an OpenMP pool; each writes its own slot so
/// the output order is fixed. D3 is evaluated against G* rewritten with the
/// fitted number of atoms (split_anchor), which is the same mixing measure
/// but gives every fitted atom a reference atom of matching gate mass.
SweepResult run_sweep(const SweepConfig& cfg);

struct AggregateRow {
  std::size_t n = 0;
  std::string loss_name;
  double r = 1.0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  double two_sigma = 0.0;
  std::size_t count = 0;
};

/// Mean and sample std per (loss, n) over non-diverged rows.
std::vector<AggregateRow> aggregate(const std::vector<RawRow>& rows);

struct RatePoint {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  double two_sigma = 0.0;
};

struct RateFitResult {
  std::string loss_name;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<RatePoint> per_n;
};

/// Unweighted OLS of log(mean) on log(n). Needs >= 3 points with positive
/// means.
RateFitResult fit_rate(const std::vector<RatePoint>& per_n);

/// One fit per loss present in the aggregate table.
std::vector<RateFitResult> fit_rates(const std::vector<AggregateRow>& agg);

struct GateComparison {
  SweepResult sigmoid;
  SweepResult softmax;
  std::vector<RateFitResult> sigmoid_rates;
  std::vector<RateFitResult> softmax_rates;
};

/// Runs the same sweep (same seeds) with sigmoid and with softmax gating in
/// both the ground truth and the fitted model.
GateComparison compare_gates(const SweepConfig& cfg);

void write_raw_csv(std::ostream& os, const std::vector<RawRow>& rows);
std::vector<RawRow> read_raw_csv(std::istream& is);
void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& agg);
void write_rate_report(std::ostream& os, const std::vector<RateFitResult>& rates);
/// log10 n, log10 mean, two-sigma band and fitted line, one row per point.
void write_plot_data(std::ostream& os, const std::vector<RateFitResult>& rates);
void write_gate_comparison(std::ostream& os, const GateComparison& cmp);

/// Writes <prefix>_raw.csv, _aggregate.csv, _rates.csv, _plot.dat.
std::vector<RateFitResult> write_sweep_outputs(const std::string& prefix, const SweepResult& result);

/// INI-style config with [ground_truth], [train] and [sweep] sections.
SweepConfig load_sweep_config(const std::string& path);
SweepConfig parse_sweep_config(std::istream& is);

}  // namespace smoe
