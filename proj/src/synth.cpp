#include "smoe/synth.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace smoe {

std::string to_string(Regime r) { return r == Regime::Regime1 ? "1" : "2"; }

Regime parse_regime(const std::string& s) {
  if (s == "1" || s == "regime1") return Regime::Regime1;
  if (s == "2" || s == "regime2") return Regime::Regime2;
  throw std::invalid_argument("unknown regime '" + s + "'");
}

void GroundTruthConfig::set_dimension(std::size_t dim) {
  d = dim;
  nu_g = 0.01 / static_cast<double>(dim);
  nu_e = 1.0 / static_cast<double>(dim);
}

void GroundTruthConfig::validate() const {
  if (d < 1) throw std::invalid_argument("ground truth: d must be >= 1");
  if (k_star < 1) throw std::invalid_argument("ground truth: k_star must be >= 1");
  if (!(nu > 0.0) || !(nu_g > 0.0) || !(nu_e > 0.0))
    throw std::invalid_argument("ground truth: variances must be positive");
}

MixingMeasure sample_ground_truth(const GroundTruthConfig& config, Rng& rng) {
  config.validate();
  const double sd_g = std::sqrt(config.nu_g);
  const double sd_e = std::sqrt(config.nu_e);
  std::vector<Atom> atoms;
  atoms.reserve(config.k_star);
  for (std::size_t i = 0; i < config.k_star; ++i) {
    Atom atom(config.d);
    atom.beta0 = rng.normal(0.0, sd_g);
    const bool sloped = config.regime == Regime::Regime2 && i + 1 < config.k_star;
    if (sloped)
      for (double& v : atom.beta1) v = rng.normal(0.0, sd_g);
    for (double& v : atom.a) v = rng.normal(0.0, sd_e);
    atom.b = rng.normal(0.0, sd_e);
    atoms.push_back(std::move(atom));
  }
  return MixingMeasure(std::move(atoms), config.gating, config.activation);
}

Dataset generate_dataset(const MixingMeasure& truth, std::size_t n, double nu, Rng& rng) {
  if (n == 0) throw std::invalid_argument("generate_dataset: n must be >= 1");
  if (!(nu >= 0.0)) throw std::invalid_argument("generate_dataset: nu must be >= 0");
  truth.validate();
  const std::size_t d = truth.dim();
  const double sd = std::sqrt(nu);

  Dataset out;
  out.x = Matrix(n, d);
  out.y.resize(n);
  out.truth = truth;
  out.config.set_dimension(d);
  out.config.k_star = truth.size();
  out.config.activation = truth.activation;
  out.config.gating = truth.gating;
  out.config.nu = nu;
  for (std::size_t j = 0; j < n; ++j) {
    auto row = out.x.row(j);
    for (double& v : row) v = rng.uniform(-1.0, 1.0);
    const double noise = rng.normal();
    out.y[j] = regression_eval(truth, row) + sd * noise;
  }
  return out;
}

void save_dataset(const std::string& stem, const Dataset& data) {
  {
    std::ofstream h(stem + ".header");
    if (!h) throw std::runtime_error("cannot write " + stem + ".header");
    const GroundTruthConfig& c = data.config;
    h << std::setprecision(17);
    h << "smoe-dataset 1\n";
    h << "n " << data.n() << "\n";
    h << "d " << c.d << "\n";
    h << "k_star " << c.k_star << "\n";
    h << "regime " << to_string(c.regime) << "\n";
    h << "nu " << c.nu << "\n";
    h << "nu_g " << c.nu_g << "\n";
    h << "nu_e " << c.nu_e << "\n";
    h << "truth_seed " << c.seed << "\n";
    h << "data_seed " << data.data_seed << "\n";
    h << "truth\n";
    write_measure(h, data.truth);
  }
  std::ofstream csv(stem + ".csv");
  if (!csv) throw std::runtime_error("cannot write " + stem + ".csv");
  csv << std::setprecision(17);
  for (std::size_t u = 0; u < data.x.cols; ++u) csv << "x_" << u << ',';
  csv << "y\n";
  for (std::size_t j = 0; j < data.n(); ++j) {
    for (double v : data.x.row(j)) csv << v << ',';
    csv << data.y[j] << "\n";
  }
}

Dataset load_dataset(const std::string& stem) {
  std::ifstream h(stem + ".header");
  if (!h) throw std::runtime_error("cannot open " + stem + ".header");
  std::string tag;
  int version = 0;
  if (!(h >> tag >> version) || tag != "smoe-dataset" || version != 1)
    throw std::runtime_error(stem + ".header: not a smoe-dataset header");

  Dataset out;
  std::size_t n = 0;
  std::string key;
  while (h >> key && key != "truth") {
    GroundTruthConfig& c = out.config;
    if (key == "n") h >> n;
    else if (key == "d") h >> c.d;
    else if (key == "k_star") h >> c.k_star;
    else if (key == "regime") {
      std::string r;
      h >> r;
      c.regime = parse_regime(r);
    } else if (key == "nu") h >> c.nu;
    else if (key == "nu_g") h >> c.nu_g;
    else if (key == "nu_e") h >> c.nu_e;
    else if (key == "truth_seed") h >> c.seed;
    else if (key == "data_seed") h >> out.data_seed;
    else throw std::runtime_error(stem + ".header: unknown key '" + key + "'");
  }
  if (key != "truth") throw std::runtime_error(stem + ".header: missing truth record");
  out.truth = read_measure(h);
  out.config.activation = out.truth.activation;
  out.config.gating = out.truth.gating;
  const std::size_t d = out.truth.dim();
  if (d != out.config.d) throw std::runtime_error(stem + ".header: dimension mismatch");

  std::ifstream csv(stem + ".csv");
  if (!csv) throw std::runtime_error("cannot open " + stem + ".csv");
  std::string line;
  std::getline(csv, line);  // column names
  out.x = Matrix(n, d);
  out.y.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::getline(csv, line)) throw std::runtime_error(stem + ".csv: fewer rows than header n");
    std::istringstream fields(line);
    std::string cell;
    for (std::size_t u = 0; u <= d; ++u) {
      if (!std::getline(fields, cell, ','))
        throw std::runtime_error(stem + ".csv: short row " + std::to_string(j));
      const double v = std::stod(cell);
      if (u < d) out.x(j, u) = v;
      else out.y[j] = v;
    }
  }
  return out;
}

}  // namespace smoe
