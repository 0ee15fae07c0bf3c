#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "smoe/model.hpp"
#include "smoe/rng.hpp"

namespace smoe::testing {

inline MixingMeasure random_measure(Rng& rng, std::size_t k, std::size_t d, Activation act,
                                    Gating gating = Gating::Sigmoid, double scale = 0.5) {
  MixingMeasure g;
  g.gating = gating;
  g.activation = act;
  for (std::size_t i = 0; i < k; ++i) {
    Atom a(d);
    a.beta0 = rng.normal(0.0, scale);
    for (double& v : a.beta1) v = rng.normal(0.0, scale);
    for (double& v : a.a) v = rng.normal(0.0, scale);
    a.b = rng.normal(0.0, scale);
    g.atoms.push_back(std::move(a));
  }
  return g;
}

inline Matrix random_points(Rng& rng, std::size_t m, std::size_t d) {
  Matrix x(m, d);
  for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
  return x;
}

inline std::vector<double> random_targets(Rng& rng, std::size_t m) {
  std::vector<double> y(m);
  for (double& v : y) v = rng.normal();
  return y;
}

// Straight-line f_G(x), written without any library evaluation helper.
inline double oracle_eval(const MixingMeasure& g, std::span<const double> x) {
  const std::size_t k = g.size();
  std::vector<double> logits(k), experts(k);
  for (std::size_t i = 0; i < k; ++i) {
    const Atom& at = g.atoms[i];
    double s = at.beta0, z = at.b;
    for (std::size_t u = 0; u < x.size(); ++u) {
      s += at.beta1[u] * x[u];
      z += at.a[u] * x[u];
    }
    logits[i] = s;
    switch (g.activation.kind) {
      case Activation::Kind::ReLU: experts[i] = z > 0.0 ? z : 0.0; break;
      case Activation::Kind::GELU: experts[i] = 0.5 * z * std::erfc(-z / std::sqrt(2.0)); break;
      case Activation::Kind::Identity: experts[i] = z; break;
      case Activation::Kind::Polynomial: experts[i] = std::pow(z, g.activation.degree); break;
    }
  }
  double out = 0.0;
  if (g.gating == Gating::Sigmoid) {
    for (std::size_t i = 0; i < k; ++i) out += experts[i] / (1.0 + std::exp(-logits[i]));
  } else {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double den = 0.0;
    for (double l : logits) den += std::exp(l - mx);
    for (std::size_t i = 0; i < k; ++i) out += std::exp(logits[i] - mx) / den * experts[i];
  }
  return out;
}

inline double oracle_batch_loss(const MixingMeasure& g, const Matrix& x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.rows; ++j) {
    const double r = oracle_eval(g, x.row(j)) - y[j];
    s += r * r;
  }
  return s / static_cast<double>(x.rows);
}

// Central differences of the batch loss over the flattened parameters.
inline std::vector<double> fd_gradient(const MixingMeasure& g, const Matrix& x, std::span<const double> y,
                                       double h = 1e-5) {
  std::vector<double> p = g.flatten();
  std::vector<double> out(p.size());
  MixingMeasure work = g;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    work.unflatten(p);
    const double up = oracle_batch_loss(work, x, y);
    p[i] = keep - h;
    work.unflatten(p);
    const double down = oracle_batch_loss(work, x, y);
    p[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

// Relative error with a floor on the denominator so coordinates whose
// gradient is essentially zero are judged on absolute error instead.
constexpr double kRelFloor = 1e-4;

inline double max_rel_error(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), kRelFloor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

inline bool near_kink(const MixingMeasure& g, std::span<const double> x, double margin) {
  for (const Atom& at : g.atoms) {
    double z = at.b;
    for (std::size_t u = 0; u < x.size(); ++u) z += at.a[u] * x[u];
    if (std::abs(z) <= margin) return true;
  }
  return false;
}

// Rows of Uniform[-1,1]^d kept only when every expert pre-activation is
// farther than margin from zero.
inline Matrix points_away_from_kinks(Rng& rng, const MixingMeasure& g, std::size_t m, double margin) {
  const std::size_t d = g.dim();
  Matrix x(m, d);
  std::vector<double> row(d);
  for (std::size_t j = 0; j < m;) {
    for (double& v : row) v = rng.uniform(-1.0, 1.0);
    if (near_kink(g, row, margin)) continue;
    std::copy(row.begin(), row.end(), x.row(j).begin());
    ++j;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Brute-force Voronoi losses. These loop over (reference, fitted) pairs on the
// flattened parameter vectors and share no code with the library.

struct BruteLosses {
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
};

inline double block_dist2(const std::vector<double>& p, std::size_t pi, const std::vector<double>& q,
                          std::size_t qi, std::size_t from, std::size_t len) {
  double s = 0.0;
  for (std::size_t t = from; t < from + len; ++t) {
    const double diff = p[pi + t] - q[qi + t];
    s += diff * diff;
  }
  return s;
}

inline BruteLosses brute_losses(const MixingMeasure& fitted, const MixingMeasure& ref, double r) {
  const std::size_t d = fitted.dim();
  const std::size_t blk = 2 * d + 2;
  const std::vector<double> p = fitted.flatten();
  const std::vector<double> q = ref.flatten();
  const std::size_t kf = fitted.size(), kr = ref.size();

  auto mass = [&](double b0) {
    return fitted.gating == Gating::Sigmoid ? 1.0 / (1.0 + std::exp(-b0)) : std::exp(b0);
  };
  // Nearest reference in (beta1, a, b), which are offsets 1..blk-1.
  std::vector<std::size_t> owner(kf);
  for (std::size_t i = 0; i < kf; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < kr; ++j) {
      const double dist = block_dist2(p, i * blk, q, j * blk, 1, blk - 1);
      if (dist < best) {
        best = dist;
        owner[i] = j;
      }
    }
  }
  BruteLosses out;
  for (std::size_t j = 0; j < kr; ++j) {
    std::size_t count = 0;
    double m = 0.0;
    for (std::size_t i = 0; i < kf; ++i)
      if (owner[i] == j) {
        ++count;
        m += mass(p[i * blk]);
      }
    const double wgap = std::abs(m - mass(q[j * blk]));
    out.d1 += wgap;
    if (count >= 2) out.d2 += wgap;
    for (std::size_t i = 0; i < kf; ++i) {
      if (owner[i] != j) continue;
      const double db0 = std::abs(p[i * blk] - q[j * blk]);
      const double g1 = std::sqrt(block_dist2(p, i * blk, q, j * blk, 1, d));
      const double ga = std::sqrt(block_dist2(p, i * blk, q, j * blk, 1 + d, d));
      const double gb = std::abs(p[i * blk + blk - 1] - q[j * blk + blk - 1]);
      const double eta2 = ga * ga + gb * gb;
      if (count >= 2) {
        out.d1 += g1 * g1 + eta2;
        out.d2 += std::pow(g1, r) + std::pow(ga, r) + std::pow(gb, r);
      } else {
        out.d1 += g1 + std::sqrt(eta2);
        out.d2 += std::pow(db0, r) + std::pow(g1, r) + std::pow(ga, r) + std::pow(gb, r);
      }
      out.d3 += db0 + g1 + std::sqrt(eta2);
    }
  }
  return out;
}

inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

// ---------------------------------------------------------------------------
// Identifiability draws: slopes bounded away from zero, pairs well separated.

inline double signed_magnitude(Rng& rng) {
  const double m = rng.uniform(0.5, 1.5);
  return rng.uniform() < 0.5 ? -m : m;
}

inline Atom random_atom(Rng& rng, std::size_t d) {
  Atom a(d);
  a.beta0 = rng.uniform(-1.0, 1.0);
  for (double& v : a.beta1) v = signed_magnitude(rng);
  for (double& v : a.a) v = signed_magnitude(rng);
  a.b = rng.uniform(-0.5, 0.5);
  return a;
}

inline double gap2(const Atom& p, const Atom& q, bool gate) {
  double s = gate ? std::pow(p.beta0 - q.beta0, 2) : std::pow(p.b - q.b, 2);
  for (std::size_t u = 0; u < p.a.size(); ++u)
    s += gate ? std::pow(p.beta1[u] - q.beta1[u], 2) : std::pow(p.a[u] - q.a[u], 2);
  return s;
}

// Two atoms whose gates and experts are both at least 1.5 apart.
inline std::vector<Atom> separated_pair(Rng& rng, std::size_t d) {
  while (true) {
    std::vector<Atom> ps{random_atom(rng, d), random_atom(rng, d)};
    if (gap2(ps[0], ps[1], true) >= 2.25 && gap2(ps[0], ps[1], false) >= 2.25) return ps;
  }
}

inline MixingMeasure flat_first_truth(Activation act) {
  MixingMeasure t;
  t.gating = Gating::Sigmoid;
  t.activation = act;
  Atom first(3);
  first.beta0 = 0.4;
  first.b = 0.7;
  Atom second(0.2, {0.1, 0.2, 0.3}, {0.5, -0.5, 0.2}, -0.3);
  t.atoms = {first, second};
  return t;
}

inline std::vector<std::vector<double>> probes(Rng& rng, std::size_t count, std::size_t d) {
  std::vector<std::vector<double>> out(count, std::vector<double>(d));
  for (auto& x : out)
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
  return out;
}

}  // namespace smoe::testing
