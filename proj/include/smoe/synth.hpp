#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smoe/model.hpp"
#include "smoe/rng.hpp"

namespace smoe {

/// Regime 1: every true gating slope is zero. Regime 2: all but the last
/// true atom have a random gating slope.
enum class Regime { Regime1 = 1, Regime2 = 2 };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct GroundTruthConfig {
  std::size_t d = 32;
  std::size_t k_star = 8;
  Regime regime = Regime::Regime1;
  Activation activation = Activation::relu();
  Gating gating = Gating::Sigmoid;
  double nu = 0.01;           // noise variance
  double nu_g = 0.01 / 32.0;  // gating parameter variance
  double nu_e = 1.0 / 32.0;   // expert parameter variance
  std::uint64_t seed = 0;

  /// Sets d and resets nu_g = 0.01/d, nu_e = 1/d.
  void set_dimension(std::size_t dim);
  void validate() const;
};

struct Dataset {
  Matrix x;
  std::vector<double> y;
  MixingMeasure truth;
  GroundTruthConfig config;
  std::uint64_t data_seed = 0;

  std::size_t n() const { return y.size(); }
};

/// Draw order: atoms in index order; within an atom beta0, beta1[0..d),
/// a[0..d), b. Under Regime 1 (and for the last atom under Regime 2) the
/// zero slope is assigned without consuming draws.
MixingMeasure sample_ground_truth(const GroundTruthConfig& config, Rng& rng);

/// Rows are drawn one at a time: d uniforms on [-1, 1], then one N(0, nu)
/// noise draw. nu is a variance; nu = 0 gives noiseless responses.
Dataset generate_dataset(const MixingMeasure& truth, std::size_t n, double nu, Rng& rng);

/// Writes <stem>.header and <stem>.csv.
void save_dataset(const std::string& stem, const Dataset& data);
Dataset load_dataset(const std::string& stem);

}  // namespace smoe
