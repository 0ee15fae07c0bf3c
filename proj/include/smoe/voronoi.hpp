#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "smoe/model.hpp"
#include "smoe/rng.hpp"

namespace smoe {

/// Fitted atoms grouped by nearest reference atom in (beta1, a, b).
struct VoronoiAssignment {
  std::vector<std::vector<std::size_t>> cells;  // per reference atom
  std::vector<std::size_t> cardinalities;
};

/// Parts of a Voronoi loss. For D3 the gating-bias terms |dbeta0| are
/// reported as weight_term and the slope/expert terms as exact_term.
struct LossBreakdown {
  std::string name;
  double r = 1.0;
  double total = 0.0;
  double weight_term = 0.0;
  double over_specified_term = 0.0;
  double exact_specified_term = 0.0;
  std::size_t k_bar = 0;  // cells with two or more fitted atoms
};

/// Ties go to the lowest reference index.
VoronoiAssignment assign_cells(const MixingMeasure& fitted, const MixingMeasure& reference);

/// Gate-mass mismatch over all cells, squared parameter gaps in cells of
/// cardinality >= 2, unsquared gaps in singleton cells.
LossBreakdown loss_d1(const MixingMeasure& fitted, const MixingMeasure& truth);

/// r-th power variant: gate-mass mismatch only on cells of cardinality
/// >= 2; singleton cells pay |dbeta0|^r instead. Requires r >= 1.
LossBreakdown loss_d2(const MixingMeasure& fitted, const MixingMeasure& truth, double r);

/// First-order gaps in beta0, beta1 and eta = (a, b) for every assigned
/// atom regardless of cell cardinality.
LossBreakdown loss_d3(const MixingMeasure& fitted, const MixingMeasure& reference);

/// Monte Carlo estimate of ||f_a - f_b|| in L2(Uniform[-1,1]^d). Sample
/// points come from rng in order; the per-sample evaluation runs under
/// OpenMP and is summed serially, so the value is thread-count invariant.
double l2_distance(const MixingMeasure& ga, const MixingMeasure& gb, std::size_t mc_samples,
                   Rng& rng);

/// Serial reference for l2_distance (identical draw order).
double l2_distance_reference(const MixingMeasure& ga, const MixingMeasure& gb,
                             std::size_t mc_samples, Rng& rng);

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, const LossBreakdown& loss);

}  // namespace smoe
