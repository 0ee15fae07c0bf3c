#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "smoe/harness.hpp"

using namespace smoe;

namespace {

SweepConfig small_config() {
  SweepConfig cfg;
  cfg.ground_truth.set_dimension(4);
  cfg.ground_truth.k_star = 3;
  cfg.train.k = 4;
  cfg.train.epochs = 2;
  cfg.n_grid = {200, 400, 800};
  cfg.replicates = 3;
  cfg.losses = {LossSpec::parse("D1"), LossSpec::parse("D2(2)"), LossSpec::parse("D3"), LossSpec::parse("L2")};
  cfg.mc_samples = 2000;
  cfg.base_seed = 17;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(LossSpec, Parse) {
  EXPECT_EQ(LossSpec::parse("D1").kind, LossSpec::Kind::D1);
  EXPECT_EQ(LossSpec::parse("D2").r, 1.0);
  EXPECT_EQ(LossSpec::parse("D2:2").r, 2.0);
  EXPECT_EQ(LossSpec::parse("D2(1.5)").r, 1.5);
  EXPECT_EQ(LossSpec::parse("L2").kind, LossSpec::Kind::L2);
  EXPECT_THROW(LossSpec::parse("D4"), std::invalid_argument);
  EXPECT_THROW(LossSpec::parse("D2(0.5)"), std::invalid_argument);
  EXPECT_EQ(parse_loss_list("D1, D3,L2").size(), 3u);
}

TEST(SweepConfig, DefaultGrid) {
  const SweepConfig cfg;
  ASSERT_EQ(cfg.n_grid.size(), 10u);
  EXPECT_EQ(cfg.n_grid.front(), 1000u);
  EXPECT_EQ(cfg.n_grid.back(), 100000u);
  EXPECT_EQ(cfg.replicates, 20u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(SweepConfig, ValidateRejects) {
  SweepConfig cfg = small_config();
  cfg.n_grid = {400, 200};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.replicates = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.train.k = 2;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(SweepConfig, ParseIni) {
  std::istringstream is(R"([ground_truth]
d = 8
k_star = 4
regime = 2
activation = gelu
gating = softmax
seed = 5

[train]
epochs = 3
lr = 0.05
batches_per_epoch = 0
batch_size = 16

[sweep]
n_min = 100
n_max = 10000
n_points = 3
replicates = 4
losses = D1,D2(2),L2
base_seed = 99
)");
  const SweepConfig cfg = parse_sweep_config(is);
  EXPECT_EQ(cfg.ground_truth.d, 8u);
  EXPECT_DOUBLE_EQ(cfg.ground_truth.nu_e, 1.0 / 8.0);
  EXPECT_EQ(cfg.ground_truth.regime, Regime::Regime2);
  EXPECT_EQ(cfg.ground_truth.activation, Activation::gelu());
  EXPECT_EQ(cfg.ground_truth.gating, Gating::Softmax);
  EXPECT_EQ(cfg.train.k, 5u);
  EXPECT_EQ(cfg.train.batch_size, 16u);
  EXPECT_EQ(cfg.train.batches_per_epoch, 0u);
  EXPECT_EQ(cfg.n_grid, (std::vector<std::size_t>{100, 1000, 10000}));
  EXPECT_EQ(cfg.replicates, 4u);
  EXPECT_EQ(cfg.losses.size(), 3u);
  EXPECT_EQ(cfg.base_seed, 99u);
}

TEST(ReplicateSeed, StableAndDistinct) {
  EXPECT_EQ(replicate_seed(1, 1000, 3), replicate_seed(1, 1000, 3));
  EXPECT_NE(replicate_seed(1, 1000, 3), replicate_seed(1, 1000, 4));
  EXPECT_NE(replicate_seed(1, 1000, 3), replicate_seed(1, 2000, 3));
}

TEST(Sweep, SingleCellSingleRow) {
  SweepConfig cfg = small_config();
  cfg.n_grid = {1000};
  cfg.replicates = 1;
  cfg.losses = {LossSpec::parse("D1")};
  const auto res = run_sweep(cfg);
  ASSERT_EQ(res.rows.size(), 1u);
  std::ostringstream os;
  write_raw_csv(os, res.rows);
  std::istringstream lines(os.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  EXPECT_EQ(count, 2);
  EXPECT_EQ(os.str().rfind("regime,gating,activation,n,replicate,loss_name,r,value,diverged,seed\n", 0), 0u);
}

TEST(Sweep, OutputsAreReproducibleAcrossThreadCounts) {
  SweepConfig cfg = small_config();
  const auto dir = std::filesystem::temp_directory_path() / "smoe_sweep_test";
  std::filesystem::create_directories(dir);
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  const int saved = omp_get_max_threads();
  cfg.threads = 1;
  write_sweep_outputs(a, run_sweep(cfg));
  cfg.threads = 3;
  write_sweep_outputs(b, run_sweep(cfg));
  omp_set_num_threads(saved);
  for (const char* suffix : {"_raw.csv", "_aggregate.csv", "_rates.csv", "_plot.dat"})
    EXPECT_EQ(slurp(a + suffix), slurp(b + suffix)) << suffix;
  std::filesystem::remove_all(dir);
}

TEST(Sweep, RawCsvRoundTripAndAggregation) {
  const auto res = run_sweep(small_config());
  std::stringstream ss;
  write_raw_csv(ss, res.rows);
  const auto back = read_raw_csv(ss);
  ASSERT_EQ(back.size(), res.rows.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].value, res.rows[i].value);
    EXPECT_EQ(back[i].loss_name, res.rows[i].loss_name);
    EXPECT_EQ(back[i].seed, res.rows[i].seed);
  }
  // Independent pass: two-pass mean/variance per (loss, n).
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> groups;
  for (const RawRow& r : back)
    if (!r.diverged) groups[{r.loss_name, r.n}].push_back(r.value);
  const auto agg = aggregate(res.rows);
  EXPECT_EQ(agg.size(), groups.size());
  for (const AggregateRow& row : agg) {
    const auto& v = groups.at({row.loss_name, row.n});
    double mean = 0.0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean) / static_cast<double>(v.size() - 1);
    EXPECT_NEAR(row.mean, mean, 1e-12 * std::abs(mean));
    EXPECT_NEAR(row.std, std::sqrt(var), 1e-12 * (1.0 + std::sqrt(var)));
    EXPECT_DOUBLE_EQ(row.two_sigma, 2.0 * row.std);
    EXPECT_EQ(row.count, v.size());
  }
}

TEST(Sweep, DivergedCellsFailTheSweep) {
  SweepConfig cfg = small_config();
  cfg.train.lr = 1e8;
  cfg.train.init_perturb = 1.0;
  EXPECT_THROW(run_sweep(cfg), SweepError);
}

TEST(Sweep, DivergedRowsAreExcludedFromAggregation) {
  std::vector<RawRow> rows(3);
  for (std::size_t i = 0; i < 3; ++i) {
    rows[i].n = 100;
    rows[i].loss_name = "D1";
    rows[i].replicate = i;
    rows[i].value = static_cast<double>(i + 1);
  }
  rows[2].diverged = true;
  rows[2].value = std::nan("");
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_EQ(agg[0].count, 2u);
  EXPECT_DOUBLE_EQ(agg[0].mean, 1.5);
}

TEST(Sweep, D1ShrinksWithSampleSize) {
  SweepConfig cfg;
  cfg.ground_truth.set_dimension(8);
  cfg.ground_truth.k_star = 4;
  cfg.train.k = 5;
  cfg.n_grid = {1000, 100000};
  cfg.replicates = 3;
  const auto agg = aggregate(run_sweep(cfg).rows);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_LT(agg[1].mean, agg[0].mean);
}

TEST(FitRate, ExactPowerLaw) {
  std::vector<RatePoint> pts;
  for (std::size_t n : {1000u, 10000u, 100000u}) pts.push_back({n, 7.0 / std::sqrt(static_cast<double>(n))});
  const auto r = fit_rate(pts);
  EXPECT_NEAR(r.slope, -0.5, 1e-12);
  EXPECT_NEAR(r.intercept, std::log(7.0), 1e-10);
  EXPECT_NEAR(r.r_squared, 1.0, 1e-12);
}

TEST(FitRate, ConstantLosses) {
  std::vector<RatePoint> pts;
  for (std::size_t n : {1000u, 10000u, 100000u}) pts.push_back({n, 0.3});
  EXPECT_NEAR(fit_rate(pts).slope, 0.0, 1e-14);
}

TEST(FitRate, Preconditions) {
  EXPECT_THROW(fit_rate({{10, 1.0}, {100, 0.5}}), std::invalid_argument);
  EXPECT_THROW(fit_rate({{10, 1.0}, {100, 0.0}, {1000, 0.2}}), std::invalid_argument);
}

TEST(FitRate, NoisyPowerLawCoverage) {
  // 10-point default grid with multiplicative noise exp(N(0, 0.01)).
  const auto grid = SweepConfig::geometric_grid(1000, 100000, 10);
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    std::vector<RatePoint> pts;
    for (std::size_t n : grid)
      pts.push_back({n, std::pow(static_cast<double>(n), -0.46) * std::exp(rng.normal(0.0, 0.1))});
    const double s = fit_rate(pts).slope;
    inside += (s > -0.56 && s < -0.36) ? 1 : 0;
  }
  EXPECT_GE(inside, 990);
}

TEST(FitRate, RatesLabelD2WithExponent) {
  std::vector<AggregateRow> agg;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    AggregateRow row;
    row.n = n;
    row.loss_name = "D2";
    row.r = 2.0;
    row.mean = 1.0 / static_cast<double>(n);
    row.count = 5;
    agg.push_back(row);
  }
  const auto rates = fit_rates(agg);
  ASSERT_EQ(rates.size(), 1u);
  EXPECT_EQ(rates[0].loss_name, "D2(2)");
  EXPECT_NEAR(rates[0].slope, -1.0, 1e-12);
}

TEST(CompareGates, TwoLabelledBlocks) {
  SweepConfig cfg = small_config();
  cfg.losses = {LossSpec::parse("D1")};
  const auto cmp = compare_gates(cfg);
  EXPECT_EQ(cmp.sigmoid.truth.gating, Gating::Sigmoid);
  EXPECT_EQ(cmp.softmax.truth.gating, Gating::Softmax);
  std::ostringstream os;
  write_gate_comparison(os, cmp);
  const std::string text = os.str();
  EXPECT_NE(text.find("[sigmoid]"), std::string::npos);
  EXPECT_NE(text.find("[softmax]"), std::string::npos);
  EXPECT_EQ(cmp.sigmoid_rates.size(), 1u);
  EXPECT_EQ(cmp.softmax_rates.size(), 1u);
}
