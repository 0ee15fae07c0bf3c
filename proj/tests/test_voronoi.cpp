#include <gtest/gtest.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "smoe/harness.hpp"
#include "smoe/voronoi.hpp"
#include "test_util.hpp"

using namespace smoe;
using smoe::testing::random_measure;

namespace {

MixingMeasure single(double beta0, std::vector<double> beta1, std::vector<double> a, double b,
                     Activation act = Activation::relu()) {
  return MixingMeasure({Atom(beta0, std::move(beta1), std::move(a), b)}, Gating::Sigmoid, act);
}

}  // namespace

TEST(Assign, SelfAssignment) {
  Rng rng(1);
  auto g = random_measure(rng, 6, 3, Activation::relu());
  const auto cells = assign_cells(g, g);
  for (std::size_t j = 0; j < 6; ++j) {
    ASSERT_EQ(cells.cells[j].size(), 1u);
    EXPECT_EQ(cells.cells[j][0], j);
  }
}

TEST(Assign, SharedCell) {
  Rng rng(2);
  auto ref = random_measure(rng, 3, 2, Activation::relu(), Gating::Sigmoid, 2.0);
  MixingMeasure fit = ref;
  fit.atoms = {ref.atoms[0], ref.atoms[0], ref.atoms[0]};
  fit.atoms[1].b += 1e-3;
  fit.atoms[2].a[0] -= 1e-3;
  const auto cells = assign_cells(fit, ref);
  EXPECT_EQ(cells.cells[0], (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(cells.cells[1].empty());
  EXPECT_EQ(cells.cardinalities[0], 3u);
}

TEST(Assign, TieGoesToLowestIndex) {
  MixingMeasure ref = single(0.0, {0.0}, {1.0}, 0.0);
  ref.atoms.push_back(Atom(0.0, {0.0}, {-1.0}, 0.0));
  const MixingMeasure fit = single(0.0, {0.0}, {0.0}, 0.0);
  EXPECT_EQ(assign_cells(fit, ref).cells[0], (std::vector<std::size_t>{0}));
}

TEST(Assign, MatchesBruteForceScan) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    auto fit = random_measure(rng, 9, 32, Activation::relu());
    auto ref = random_measure(rng, 8, 32, Activation::relu());
    const auto cells = assign_cells(fit, ref);
    for (std::size_t j = 0; j < ref.size(); ++j)
      for (std::size_t i : cells.cells[j]) {
        const auto pi = fit.atoms[i];
        double best = 1e300;
        std::size_t arg = 0;
        for (std::size_t q = 0; q < ref.size(); ++q) {
          double s = (pi.b - ref.atoms[q].b) * (pi.b - ref.atoms[q].b);
          for (std::size_t u = 0; u < 32; ++u)
            s += std::pow(pi.beta1[u] - ref.atoms[q].beta1[u], 2) + std::pow(pi.a[u] - ref.atoms[q].a[u], 2);
          if (s < best) {
            best = s;
            arg = q;
          }
        }
        EXPECT_EQ(arg, j);
      }
  }
}

TEST(D1, ExactSpecifiedHandValue) {
  const auto truth = single(0.0, {0.0, 0.0}, {1.0, 0.0}, 0.0);
  const auto fit = single(0.0, {0.1, 0.0}, {1.2, 0.0}, 0.1);
  const auto loss = loss_d1(fit, truth);
  EXPECT_NEAR(loss.total, 0.1 + std::sqrt(0.05), 1e-15);  // 0.3236...
  EXPECT_EQ(loss.weight_term, 0.0);
  EXPECT_EQ(loss.k_bar, 0u);
}

TEST(D1, OverSpecifiedHandValue) {
  const auto truth = single(0.0, {0.0, 0.0}, {1.0, 0.0}, 0.0);
  MixingMeasure fit = single(logit(0.25), {0.1, 0.0}, {1.1, 0.0}, 0.0);
  fit.atoms.push_back(fit.atoms[0]);
  const auto loss = loss_d1(fit, truth);
  EXPECT_NEAR(loss.weight_term, 0.0, 1e-15);
  EXPECT_NEAR(loss.over_specified_term, 0.04, 1e-15);
  EXPECT_NEAR(loss.total, 0.04, 1e-15);
  EXPECT_EQ(loss.k_bar, 1u);
}

TEST(D2, FirstOrderSingleCell) {
  const auto truth = single(0.3, {0.0, 0.0}, {0.5, 0.5}, 0.2);
  const auto fit = single(0.3, {0.2, 0.0}, {0.6, 0.5}, 0.5);
  EXPECT_NEAR(loss_d2(fit, truth, 1.0).total, 0.6, 1e-15);
  EXPECT_THROW(loss_d2(fit, truth, 0.5), std::invalid_argument);
}

TEST(D3, BiasOnly) {
  const auto ref = single(0.3, {0.1}, {0.5}, 0.2);
  const auto fit = single(-0.45, {0.1}, {0.5}, 0.2);
  EXPECT_DOUBLE_EQ(loss_d3(fit, ref).total, 0.75);
}

TEST(VoronoiLosses, MatchBruteForce) {
  Rng rng(4);
  for (int t = 0; t < 300; ++t) {
    const std::size_t d = 1 + rng.below(6);
    const std::size_t kr = 1 + rng.below(5);
    const std::size_t kf = kr + rng.below(3);
    const Gating gating = t % 2 ? Gating::Sigmoid : Gating::Softmax;
    auto ref = random_measure(rng, kr, d, Activation::relu(), gating);
    auto fit = random_measure(rng, kf, d, Activation::relu(), gating);
    const double r = 1.0 + 2.0 * rng.uniform();
    const auto brute = smoe::testing::brute_losses(fit, ref, r);
    EXPECT_TRUE(smoe::testing::close_rel(loss_d1(fit, ref).total, brute.d1, 1e-12));
    EXPECT_TRUE(smoe::testing::close_rel(loss_d2(fit, ref, r).total, brute.d2, 1e-12));
    EXPECT_TRUE(smoe::testing::close_rel(loss_d3(fit, ref).total, brute.d3, 1e-12));
  }
}

TEST(VoronoiLosses, ZeroIffEqual) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    auto g = random_measure(rng, 4, 3, Activation::gelu());
    EXPECT_EQ(loss_d1(g, g).total, 0.0);
    EXPECT_EQ(loss_d2(g, g, 2.0).total, 0.0);
    EXPECT_EQ(loss_d3(g, g).total, 0.0);
    auto h = g;
    h.atoms[rng.below(4)].b += 1e-6;
    EXPECT_GT(loss_d1(h, g).total, 0.0);
    EXPECT_GT(loss_d2(h, g, 2.0).total, 0.0);
    EXPECT_GT(loss_d3(h, g).total, 0.0);
  }
}

TEST(VoronoiLosses, PermutationInvariant) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    auto ref = random_measure(rng, 4, 3, Activation::relu());
    auto fit = random_measure(rng, 6, 3, Activation::relu());
    auto perm = fit;
    std::reverse(perm.atoms.begin(), perm.atoms.end());
    std::swap(perm.atoms[0], perm.atoms[3]);
    EXPECT_TRUE(smoe::testing::close_rel(loss_d1(fit, ref).total, loss_d1(perm, ref).total, 1e-13));
    EXPECT_TRUE(smoe::testing::close_rel(loss_d2(fit, ref, 1.5).total, loss_d2(perm, ref, 1.5).total, 1e-13));
    EXPECT_TRUE(smoe::testing::close_rel(loss_d3(fit, ref).total, loss_d3(perm, ref).total, 1e-13));
  }
}

TEST(VoronoiLosses, D2NonIncreasingInR) {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    auto ref = random_measure(rng, 3, 2, Activation::relu(), Gating::Sigmoid, 1.0);
    auto fit = ref;
    fit.atoms.push_back(ref.atoms[0]);
    for (Atom& a : fit.atoms) {
      a.b += rng.uniform(-0.3, 0.3);
      for (double& v : a.a) v += rng.uniform(-0.3, 0.3);
      for (double& v : a.beta1) v += rng.uniform(-0.3, 0.3);
      a.beta0 += rng.uniform(-0.3, 0.3);
    }
    double prev = 1e300;
    for (double r : {1.0, 1.5, 2.0, 3.0}) {
      const double v = loss_d2(fit, ref, r).total;
      EXPECT_LE(v, prev * (1 + 1e-15));
      prev = v;
    }
  }
}

TEST(L2, ConstantFunctions) {
  const auto ga = single(0.0, {0.0}, {0.0}, 2.0, Activation::identity());
  const auto gb = single(0.0, {0.0}, {0.0}, 0.0, Activation::identity());
  Rng rng(1);
  EXPECT_EQ(l2_distance(ga, gb, 1000, rng), 1.0);
  EXPECT_EQ(l2_distance(ga, ga, 1000, rng), 0.0);
}

TEST(L2, ClosedFormLinear) {
  const auto ga = single(0.0, {0.0}, {1.0}, 0.0, Activation::identity());
  const auto gb = single(0.0, {0.0}, {0.0}, 0.0, Activation::identity());
  Rng rng(2);
  EXPECT_NEAR(l2_distance(ga, gb, 1000000, rng), 1.0 / (2.0 * std::sqrt(3.0)), 0.003);
}

TEST(L2, ParallelMatchesReferenceAndThreads) {
  Rng g(3);
  auto ga = random_measure(g, 4, 5, Activation::gelu());
  auto gb = random_measure(g, 5, 5, Activation::gelu());
  Rng r1(9), r2(9);
  const double ref = l2_distance_reference(ga, gb, 50000, r1);
  const double par = l2_distance(ga, gb, 50000, r2);
  EXPECT_EQ(ref, par);
  const int saved = omp_get_max_threads();
  for (int threads : {1, 3}) {
    omp_set_num_threads(threads);
    Rng r3(9);
    EXPECT_EQ(l2_distance(ga, gb, 50000, r3), par);
  }
  omp_set_num_threads(saved);
}

TEST(L2, MonteCarloErrorScalesAsInverseRootM) {
  Rng g(4);
  auto ga = random_measure(g, 3, 2, Activation::relu());
  auto gb = random_measure(g, 3, 2, Activation::relu());
  std::vector<RatePoint> pts;
  for (std::size_t m : {1000u, 10000u, 100000u, 1000000u}) {
    const int reps = 24;
    std::vector<double> vals;
    for (int s = 0; s < reps; ++s) {
      Rng rng(child_seed(77, m * 100 + s));
      vals.push_back(l2_distance(ga, gb, m, rng));
    }
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / reps;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    pts.push_back({m, std::sqrt(ss / (reps - 1)), 0.0, 0.0});
  }
  const auto fitres = fit_rate(pts);
  EXPECT_NEAR(fitres.slope, -0.5, 0.1);
}
