#include "smoe/voronoi.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace smoe {

namespace {

void require_same_dim(const MixingMeasure& a, const MixingMeasure& b) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) throw std::invalid_argument("Voronoi loss: dimension mismatch");
}

double squared_gap(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double t = u[i] - v[i];
    s += t * t;
  }
  return s;
}

// Squared distance between omega = (beta1, a, b) of two atoms.
double omega_distance2(const Atom& p, const Atom& q) {
  const double db = p.b - q.b;
  return squared_gap(p.beta1, q.beta1) + squared_gap(p.a, q.a) + db * db;
}

struct Gaps {
  double beta0;  // |dbeta0|
  double beta1;  // ||dbeta1||
  double a;      // ||da||
  double b;      // |db|
  double eta;    // ||(da, db)||
};

Gaps gaps(const Atom& p, const Atom& q) {
  const double sa = squared_gap(p.a, q.a);
  const double db = p.b - q.b;
  return {std::abs(p.beta0 - q.beta0), std::sqrt(squared_gap(p.beta1, q.beta1)), std::sqrt(sa),
          std::abs(db), std::sqrt(sa + db * db)};
}

// Mass an atom carries in the mixing measure: sigma(beta0) under sigmoid
// gating, exp(beta0) under softmax gating.
double gate_mass(Gating gating, double beta0) {
  return gating == Gating::Sigmoid ? sigmoid(beta0) : std::exp(beta0);
}

double gate_mass_gap(const MixingMeasure& fitted, const std::vector<std::size_t>& cell,
                     const Atom& target) {
  double mass = 0.0;
  for (std::size_t i : cell) mass += gate_mass(fitted.gating, fitted.atoms[i].beta0);
  return std::abs(mass - gate_mass(fitted.gating, target.beta0));
}

}  // namespace

VoronoiAssignment assign_cells(const MixingMeasure& fitted, const MixingMeasure& reference) {
  require_same_dim(fitted, reference);
  VoronoiAssignment out;
  out.cells.resize(reference.size());
  out.cardinalities.assign(reference.size(), 0);
  for (std::size_t i = 0; i < fitted.size(); ++i) {
    std::size_t best = 0;
    double best_d = omega_distance2(fitted.atoms[i], reference.atoms[0]);
    for (std::size_t j = 1; j < reference.size(); ++j) {
      const double dj = omega_distance2(fitted.atoms[i], reference.atoms[j]);
      if (dj < best_d) {
        best_d = dj;
        best = j;
      }
    }
    out.cells[best].push_back(i);
    ++out.cardinalities[best];
  }
  return out;
}

LossBreakdown loss_d1(const MixingMeasure& fitted, const MixingMeasure& truth) {
  const VoronoiAssignment cells = assign_cells(fitted, truth);
  LossBreakdown out;
  out.name = "D1";
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const auto& cell = cells.cells[j];
    const Atom& target = truth.atoms[j];
    out.weight_term += gate_mass_gap(fitted, cell, target);
    if (cell.size() >= 2) {
      ++out.k_bar;
      for (std::size_t i : cell) {
        const Gaps g = gaps(fitted.atoms[i], target);
        out.over_specified_term += g.beta1 * g.beta1 + g.eta * g.eta;
      }
    } else {
      for (std::size_t i : cell) {
        const Gaps g = gaps(fitted.atoms[i], target);
        out.exact_specified_term += g.beta1 + g.eta;
      }
    }
  }
  out.total = out.weight_term + out.over_specified_term + out.exact_specified_term;
  return out;
}

LossBreakdown loss_d2(const MixingMeasure& fitted, const MixingMeasure& truth, double r) {
  if (!(r >= 1.0)) throw std::invalid_argument("loss_d2: r must be >= 1");
  const VoronoiAssignment cells = assign_cells(fitted, truth);
  LossBreakdown out;
  out.name = "D2";
  out.r = r;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const auto& cell = cells.cells[j];
    const Atom& target = truth.atoms[j];
    if (cell.size() >= 2) {
      ++out.k_bar;
      out.weight_term += gate_mass_gap(fitted, cell, target);
      for (std::size_t i : cell) {
        const Gaps g = gaps(fitted.atoms[i], target);
        out.over_specified_term += std::pow(g.beta1, r) + std::pow(g.a, r) + std::pow(g.b, r);
      }
    } else {
      for (std::size_t i : cell) {
        const Gaps g = gaps(fitted.atoms[i], target);
        out.exact_specified_term +=
            std::pow(g.beta0, r) + std::pow(g.beta1, r) + std::pow(g.a, r) + std::pow(g.b, r);
      }
    }
  }
  out.total = out.weight_term + out.over_specified_term + out.exact_specified_term;
  return out;
}

LossBreakdown loss_d3(const MixingMeasure& fitted, const MixingMeasure& reference) {
  const VoronoiAssignment cells = assign_cells(fitted, reference);
  LossBreakdown out;
  out.name = "D3";
  for (std::size_t j = 0; j < reference.size(); ++j) {
    if (cells.cells[j].size() >= 2) ++out.k_bar;
    for (std::size_t i : cells.cells[j]) {
      const Gaps g = gaps(fitted.atoms[i], reference.atoms[j]);
      out.weight_term += g.beta0;
      out.exact_specified_term += g.beta1 + g.eta;
    }
  }
  out.total = out.weight_term + out.exact_specified_term;
  return out;
}

double l2_distance(const MixingMeasure& ga, const MixingMeasure& gb, std::size_t mc_samples,
                   Rng& rng) {
  require_same_dim(ga, gb);
  if (mc_samples < 1) throw std::invalid_argument("l2_distance: mc_samples must be >= 1");
  const std::size_t d = ga.dim();
  Matrix pts(mc_samples, d);
  for (double& v : pts.data) v = rng.uniform(-1.0, 1.0);

  std::vector<double> sq(mc_samples);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t m = 0; m < static_cast<std::ptrdiff_t>(mc_samples); ++m) {
    const auto x = pts.row(static_cast<std::size_t>(m));
    const double diff = regression_eval(ga, x) - regression_eval(gb, x);
    sq[static_cast<std::size_t>(m)] = diff * diff;
  }
  double total = 0.0;
  for (double v : sq) total += v;
  return std::sqrt(total / static_cast<double>(mc_samples));
}

double l2_distance_reference(const MixingMeasure& ga, const MixingMeasure& gb,
                             std::size_t mc_samples, Rng& rng) {
  require_same_dim(ga, gb);
  if (mc_samples < 1) throw std::invalid_argument("l2_distance: mc_samples must be >= 1");
  std::vector<double> x(ga.dim());
  double total = 0.0;
  for (std::size_t m = 0; m < mc_samples; ++m) {
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const double diff = regression_eval(ga, x) - regression_eval(gb, x);
    total += diff * diff;
  }
  return std::sqrt(total / static_cast<double>(mc_samples));
}

void write_loss_csv_header(std::ostream& os) {
  os << "loss_name,r,total,weight_term,over_term,exact_term,k_bar\n";
}

void write_loss_csv_row(std::ostream& os, const LossBreakdown& loss) {
  os << std::setprecision(17) << loss.name << ',' << loss.r << ',' << loss.total << ','
     << loss.weight_term << ',' << loss.over_specified_term << ',' << loss.exact_specified_term
     << ',' << loss.k_bar << "\n";
}

}  // namespace smoe
