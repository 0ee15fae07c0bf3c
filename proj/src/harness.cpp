#include "smoe/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace smoe {

namespace {

std::string trim(const std::string& s) {
  const auto lo = s.find_first_not_of(" \t");
  if (lo == std::string::npos) return {};
  const auto hi = s.find_last_not_of(" \t");
  return s.substr(lo, hi - lo + 1);
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double evaluate_loss(const LossSpec& spec, const MixingMeasure& fitted, const MixingMeasure& truth,
                     std::size_t mc_samples, std::uint64_t mc_seed) {
  switch (spec.kind) {
    case LossSpec::Kind::D1:
      return loss_d1(fitted, truth).total;
    case LossSpec::Kind::D2:
      return loss_d2(fitted, truth, spec.r).total;
    case LossSpec::Kind::D3:
      return loss_d3(fitted, split_anchor(truth, fitted.size())).total;
    case LossSpec::Kind::L2: {
      Rng rng(mc_seed);
      return l2_distance(fitted, truth, mc_samples, rng);
    }
  }
  return 0.0;
}

struct CellOutcome {
  std::vector<double> values;
  bool diverged = false;
};

}  // namespace

std::string LossSpec::name() const {
  switch (kind) {
    case Kind::D1:
      return "D1";
    case Kind::D2:
      return "D2";
    case Kind::D3:
      return "D3";
    case Kind::L2:
      return "L2";
  }
  return "?";
}

LossSpec LossSpec::parse(const std::string& text) {
  const std::string t = trim(text);
  if (t == "D1") return {Kind::D1, 1.0};
  if (t == "D3") return {Kind::D3, 1.0};
  if (t == "L2") return {Kind::L2, 1.0};
  if (t == "D2") return {Kind::D2, 1.0};
  if (t.rfind("D2", 0) == 0 && t.size() > 3) {
    std::string arg = t.substr(3);
    if (t[2] == '(' && arg.back() == ')') arg.pop_back();
    else if (t[2] != ':') throw std::invalid_argument("bad loss spec '" + text + "'");
    const double r = std::stod(arg);
    if (!(r >= 1.0)) throw std::invalid_argument("D2 exponent must be >= 1");
    return {Kind::D2, r};
  }
  throw std::invalid_argument("unknown loss '" + text + "'");
}

std::vector<LossSpec> parse_loss_list(const std::string& text) {
  std::vector<LossSpec> out;
  // Commas inside D2(r) never occur, so a plain split is enough.
  for (const std::string& item : split(text, ',')) out.push_back(LossSpec::parse(item));
  if (out.empty()) throw std::invalid_argument("empty loss list");
  return out;
}

std::vector<std::size_t> SweepConfig::geometric_grid(std::size_t lo, std::size_t hi,
                                                     std::size_t count) {
  if (count == 0 || lo == 0 || hi < lo) throw std::invalid_argument("bad geometric grid");
  if (count == 1) return {lo};
  std::vector<std::size_t> out;
  const double ratio = std::log(static_cast<double>(hi) / static_cast<double>(lo));
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(count - 1);
    const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(lo) * std::exp(ratio * t)));
    if (out.empty() || n > out.back()) out.push_back(n);
  }
  return out;
}

void SweepConfig::validate() const {
  ground_truth.validate();
  train.validate();
  if (n_grid.empty()) throw std::invalid_argument("sweep: n_grid is empty");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 1) throw std::invalid_argument("sweep: n_grid entries must be >= 1");
    if (i > 0 && n_grid[i] <= n_grid[i - 1])
      throw std::invalid_argument("sweep: n_grid must be strictly increasing");
  }
  if (replicates < 1) throw std::invalid_argument("sweep: replicates must be >= 1");
  if (losses.empty()) throw std::invalid_argument("sweep: no losses configured");
  if (mc_samples < 1) throw std::invalid_argument("sweep: mc_samples must be >= 1");
  if (train.k < ground_truth.k_star)
    throw std::invalid_argument("sweep: fitted k must be >= k_star");
}

std::uint64_t replicate_seed(std::uint64_t base_seed, std::size_t n, std::size_t replicate) {
  return child_seed(child_seed(base_seed, n), replicate);
}

SweepResult run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  SweepResult out;
  {
    Rng truth_rng(cfg.ground_truth.seed);
    out.truth = sample_ground_truth(cfg.ground_truth, truth_rng);
  }

  const std::size_t jobs = cfg.n_grid.size() * cfg.replicates;
  std::vector<CellOutcome> cells(jobs);

#ifdef _OPENMP
  const int threads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
#endif
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::ptrdiff_t job = 0; job < static_cast<std::ptrdiff_t>(jobs); ++job) {
    const std::size_t ni = static_cast<std::size_t>(job) / cfg.replicates;
    const std::size_t rep = static_cast<std::size_t>(job) % cfg.replicates;
    const std::uint64_t seed = replicate_seed(cfg.base_seed, cfg.n_grid[ni], rep);

    Rng data_rng(child_seed(seed, 0));
    Rng init_rng(child_seed(seed, 1));
    Rng fit_rng(child_seed(seed, 2));
    CellOutcome& cell = cells[static_cast<std::size_t>(job)];
    try {
      const Dataset data = generate_dataset(out.truth, cfg.n_grid[ni], cfg.ground_truth.nu, data_rng);
      const MixingMeasure init = init_near_truth(out.truth, cfg.train.k, cfg.train.init_perturb, init_rng);
      const FitResult result = fit(data, init, cfg.train, fit_rng);
      for (const LossSpec& spec : cfg.losses)
        cell.values.push_back(evaluate_loss(spec, result.fitted, out.truth, cfg.mc_samples, child_seed(seed, 3)));
    } catch (const DivergedError&) {
      cell.diverged = true;
      cell.values.assign(cfg.losses.size(), std::nan(""));
    }
  }

  std::vector<std::string> failures;
  for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
    std::size_t diverged = 0;
    for (std::size_t rep = 0; rep < cfg.replicates; ++rep) {
      const std::size_t job = ni * cfg.replicates + rep;
      const CellOutcome& cell = cells[job];
      diverged += cell.diverged ? 1 : 0;
      for (std::size_t l = 0; l < cfg.losses.size(); ++l) {
        RawRow row;
        row.regime = cfg.ground_truth.regime;
        row.gating = cfg.ground_truth.gating;
        row.activation = cfg.ground_truth.activation.name();
        row.n = cfg.n_grid[ni];
        row.replicate = rep;
        row.loss_name = cfg.losses[l].name();
        row.r = cfg.losses[l].r;
        row.value = cell.values[l];
        row.diverged = cell.diverged;
        row.seed = replicate_seed(cfg.base_seed, cfg.n_grid[ni], rep);
        out.rows.push_back(std::move(row));
      }
    }
    if (5 * diverged > cfg.replicates) {
      std::ostringstream msg;
      msg << "n=" << cfg.n_grid[ni] << ": " << diverged << "/" << cfg.replicates << " fits diverged";
      failures.push_back(msg.str());
    }
  }
  if (!failures.empty()) {
    std::ostringstream msg;
    msg << "sweep failed, too many diverged fits:";
    for (const auto& f : failures) msg << "\n  " << f;
    throw SweepError(msg.str());
  }
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<RawRow>& rows) {
  // Keyed by first appearance of the loss so output follows config order.
  std::vector<std::pair<std::string, double>> loss_order;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> groups;
  for (const RawRow& row : rows) {
    const auto key = std::make_pair(row.loss_name, row.r);
    auto it = std::find(loss_order.begin(), loss_order.end(), key);
    const std::size_t li = static_cast<std::size_t>(it - loss_order.begin());
    if (it == loss_order.end()) loss_order.push_back(key);
    auto& bucket = groups[{li, row.n}];
    if (!row.diverged) bucket.push_back(row.value);
  }

  std::vector<AggregateRow> out;
  for (const auto& [key, values] : groups) {
    AggregateRow agg;
    agg.loss_name = loss_order[key.first].first;
    agg.r = loss_order[key.first].second;
    agg.n = key.second;
    agg.count = values.size();
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      agg.mean = sum / static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
      agg.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
      agg.two_sigma = 2.0 * agg.std;
    }
    out.push_back(agg);
  }
  return out;
}

RateFitResult fit_rate(const std::vector<RatePoint>& per_n) {
  if (per_n.size() < 3) throw std::invalid_argument("fit_rate: need at least 3 points");
  for (const RatePoint& p : per_n)
    if (!(p.mean > 0.0) || p.n == 0) throw std::invalid_argument("fit_rate: means must be positive");

  const double m = static_cast<double>(per_n.size());
  double sx = 0.0;
  double sy = 0.0;
  for (const RatePoint& p : per_n) {
    sx += std::log(static_cast<double>(p.n));
    sy += std::log(p.mean);
  }
  const double mx = sx / m;
  const double my = sy / m;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const RatePoint& p : per_n) {
    const double dx = std::log(static_cast<double>(p.n)) - mx;
    const double dy = std::log(p.mean) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_rate: all n are equal");

  RateFitResult out;
  out.per_n = per_n;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  // Zero variance in y means a perfect (flat) fit.
  out.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return out;
}

std::vector<RateFitResult> fit_rates(const std::vector<AggregateRow>& agg) {
  std::vector<std::string> names;
  std::map<std::string, std::vector<RatePoint>> points;
  for (const AggregateRow& row : agg) {
    std::ostringstream label;
    label << row.loss_name;
    if (row.loss_name == "D2") label << '(' << row.r << ')';
    const std::string key = label.str();
    if (std::find(names.begin(), names.end(), key) == names.end()) names.push_back(key);
    if (row.count > 0) points[key].push_back({row.n, row.mean, row.std, row.two_sigma});
  }
  std::vector<RateFitResult> out;
  for (const std::string& name : names) {
    RateFitResult fitres = fit_rate(points[name]);
    fitres.loss_name = name;
    out.push_back(std::move(fitres));
  }
  return out;
}

GateComparison compare_gates(const SweepConfig& cfg) {
  GateComparison out;
  SweepConfig sig = cfg;
  sig.ground_truth.gating = Gating::Sigmoid;
  SweepConfig soft = cfg;
  soft.ground_truth.gating = Gating::Softmax;
  out.sigmoid = run_sweep(sig);
  out.softmax = run_sweep(soft);
  out.sigmoid_rates = fit_rates(aggregate(out.sigmoid.rows));
  out.softmax_rates = fit_rates(aggregate(out.softmax.rows));
  return out;
}

void write_raw_csv(std::ostream& os, const std::vector<RawRow>& rows) {
  os << "regime,gating,activation,n,replicate,loss_name,r,value,diverged,seed\n";
  os << std::setprecision(17);
  for (const RawRow& row : rows) {
    os << to_string(row.regime) << ',' << to_string(row.gating) << ',' << row.activation << ','
       << row.n << ',' << row.replicate << ',' << row.loss_name << ',' << row.r << ',' << row.value
       << ',' << (row.diverged ? 1 : 0) << ',' << row.seed << "\n";
  }
}

std::vector<RawRow> read_raw_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("raw csv: missing header");
  std::vector<RawRow> out;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw std::runtime_error("raw csv: expected 10 columns: " + line);
    RawRow row;
    row.regime = parse_regime(f[0]);
    row.gating = parse_gating(f[1]);
    row.activation = f[2];
    row.n = std::stoull(f[3]);
    row.replicate = std::stoull(f[4]);
    row.loss_name = f[5];
    row.r = std::stod(f[6]);
    row.diverged = f[8] == "1";
    row.value = row.diverged ? std::nan("") : std::stod(f[7]);
    row.seed = std::stoull(f[9]);
    out.push_back(std::move(row));
  }
  return out;
}

void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& agg) {
  os << "n,loss_name,mean,std,two_sigma,count\n";
  os << std::setprecision(17);
  for (const AggregateRow& row : agg) {
    os << row.n << ',' << row.loss_name;
    if (row.loss_name == "D2") os << '(' << row.r << ')';
    os << ',' << row.mean << ',' << row.std << ',' << row.two_sigma << ',' << row.count << "\n";
  }
}

void write_rate_report(std::ostream& os, const std::vector<RateFitResult>& rates) {
  os << "loss_name,slope,intercept,r_squared\n";
  os << std::setprecision(17);
  for (const RateFitResult& r : rates)
    os << r.loss_name << ',' << r.slope << ',' << r.intercept << ',' << r.r_squared << "\n";
}

void write_plot_data(std::ostream& os, const std::vector<RateFitResult>& rates) {
  os << "# loss_name log10_n log10_mean log10_lower log10_upper log10_fit\n";
  os << std::setprecision(10);
  for (const RateFitResult& r : rates) {
    for (const RatePoint& p : r.per_n) {
      const double ln = std::log(static_cast<double>(p.n));
      const double lower = p.mean - p.two_sigma;
      os << r.loss_name << ' ' << std::log10(static_cast<double>(p.n)) << ' ' << std::log10(p.mean)
         << ' ' << (lower > 0.0 ? std::log10(lower) : std::nan("")) << ' '
         << std::log10(p.mean + p.two_sigma) << ' '
         << (r.intercept + r.slope * ln) / std::log(10.0) << "\n";
    }
    os << "\n";
  }
}

void write_gate_comparison(std::ostream& os, const GateComparison& cmp) {
  auto block = [&os](const char* label, const std::vector<RateFitResult>& rates) {
    os << "[" << label << "]\n";
    write_rate_report(os, rates);
    os << std::setprecision(17);
    for (const RateFitResult& r : rates) {
      os << "# per_n " << r.loss_name << "\n";
      os << "n,mean,std,two_sigma\n";
      for (const RatePoint& p : r.per_n)
        os << p.n << ',' << p.mean << ',' << p.std << ',' << p.two_sigma << "\n";
    }
    os << "\n";
  };
  block("sigmoid", cmp.sigmoid_rates);
  block("softmax", cmp.softmax_rates);
}

std::vector<RateFitResult> write_sweep_outputs(const std::string& prefix, const SweepResult& result) {
  const auto agg = aggregate(result.rows);
  const auto rates = fit_rates(agg);
  auto open = [](const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    return os;
  };
  {
    auto os = open(prefix + "_raw.csv");
    write_raw_csv(os, result.rows);
  }
  {
    auto os = open(prefix + "_aggregate.csv");
    write_aggregate_csv(os, agg);
  }
  {
    auto os = open(prefix + "_rates.csv");
    write_rate_report(os, rates);
    // D3 has no computable projection reference; it is measured against G*.
    for (const auto& r : rates)
      if (r.loss_name == "D3") os << "# D3 reference: ground truth G* (not the L2 projection)\n";
  }
  {
    auto os = open(prefix + "_plot.dat");
    write_plot_data(os, rates);
  }
  return rates;
}

SweepConfig parse_sweep_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  pt::read_ini(is, tree);

  SweepConfig cfg;
  GroundTruthConfig& gt = cfg.ground_truth;
  if (auto d = tree.get_optional<std::size_t>("ground_truth.d")) gt.set_dimension(*d);
  gt.k_star = tree.get("ground_truth.k_star", gt.k_star);
  gt.regime = parse_regime(tree.get("ground_truth.regime", to_string(gt.regime)));
  gt.activation = Activation::parse(tree.get("ground_truth.activation", gt.activation.name()),
                                    tree.get("ground_truth.degree", 1));
  gt.gating = parse_gating(tree.get("ground_truth.gating", to_string(gt.gating)));
  gt.nu = tree.get("ground_truth.nu", gt.nu);
  gt.nu_g = tree.get("ground_truth.nu_g", gt.nu_g);
  gt.nu_e = tree.get("ground_truth.nu_e", gt.nu_e);
  gt.seed = tree.get("ground_truth.seed", gt.seed);

  TrainConfig& tr = cfg.train;
  tr.k = tree.get("train.k", gt.k_star + 1);
  tr.epochs = tree.get("train.epochs", tr.epochs);
  tr.lr = tree.get("train.lr", tr.lr);
  tr.batch_size = tree.get("train.batch_size", tr.batch_size);
  tr.batches_per_epoch = tree.get("train.batches_per_epoch", tr.batches_per_epoch);
  tr.init_perturb = tree.get("train.init_perturb", tr.init_perturb);
  tr.seed = tree.get("train.seed", tr.seed);

  if (auto grid = tree.get_optional<std::string>("sweep.n_grid")) {
    cfg.n_grid.clear();
    for (const auto& item : split(*grid, ',')) cfg.n_grid.push_back(std::stoull(item));
  } else {
    cfg.n_grid = SweepConfig::geometric_grid(tree.get("sweep.n_min", std::size_t{1000}),
                                             tree.get("sweep.n_max", std::size_t{100000}),
                                             tree.get("sweep.n_points", std::size_t{10}));
  }
  cfg.replicates = tree.get("sweep.replicates", cfg.replicates);
  if (auto losses = tree.get_optional<std::string>("sweep.losses"))
    cfg.losses = parse_loss_list(*losses);
  cfg.mc_samples = tree.get("sweep.mc_samples", cfg.mc_samples);
  cfg.base_seed = tree.get("sweep.base_seed", cfg.base_seed);
  cfg.output_path = tree.get("sweep.output_path", cfg.output_path);
  cfg.threads = tree.get("sweep.threads", cfg.threads);
  cfg.validate();
  return cfg;
}

SweepConfig load_sweep_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  return parse_sweep_config(is);
}

}  // namespace smoe
