#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoe/model.hpp"
#include "smoe/rng.hpp"

namespace smoe {

/// A scalar parameter of F(x; beta1, beta0, a, b) = sigma(beta1.x + beta0) * phi(a.x + b).
struct ParamVar {
  enum class Kind { Beta1, Beta0, A, B };
  Kind kind = Kind::B;
  std::size_t index = 0;  // coordinate for Beta1 and A

  bool is_gate() const { return kind == Kind::Beta1 || kind == Kind::Beta0; }
  std::string name() const;

  friend bool operator==(const ParamVar&, const ParamVar&) = default;
};

/// One member of a derivative class: a first or second partial derivative
/// of F for one atom, evaluated either at the atom's own gating slope or
/// at beta1 = 0.
struct DerivativeEntry {
  std::size_t atom = 0;
  std::vector<ParamVar> vars;  // one or two, in canonical order
  bool at_zero_slope = false;
  std::string label;

  std::size_t order() const { return vars.size(); }
};

enum class IdentifiabilityMode { Strong, Weak };

struct DerivativeClass {
  IdentifiabilityMode mode = IdentifiabilityMode::Weak;
  Activation activation;
  std::vector<Atom> params;
  std::vector<DerivativeEntry> entries;

  double evaluate(std::size_t entry, std::span<const double> x) const;
  std::size_t dim() const { return params.empty() ? 0 : params.front().a.size(); }
};

/// Analytic partial derivative of F with respect to one or two variables.
double partial_f(const Activation& act, const Atom& p, std::span<const ParamVar> vars,
                 std::span<const double> x);

/// Weak mode: per atom, the d + 1 + q first derivatives in (beta1, beta0,
/// eta) at the atom's parameters (q = d + 1). Strong mode adds, per atom and
/// at beta1 = 0, the d + q first derivatives and the (d+q)(d+q+1)/2 distinct
/// second derivatives in (beta1, eta). Derivatives of phi come from the
/// analytic formulas; ReLU uses phi'' = 0.
DerivativeClass build_derivative_class(const Activation& act, const std::vector<Atom>& params,
                                       IdentifiabilityMode mode);

enum class Verdict { Independent, Dependent };

struct IndependenceReport {
  std::size_t num_functions = 0;
  std::size_t num_samples = 0;
  std::vector<double> singular_values;  // descending
  double min_sv_ratio = 0.0;
  Verdict verdict = Verdict::Independent;
  std::vector<std::vector<std::size_t>> dependent_subsets;  // entry indices
  std::vector<std::size_t> dropped_zero_columns;            // entry indices
  std::vector<std::size_t> kept_columns;                    // entry indices, column order
};

class DegenerateClassError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t default_sample_count(std::size_t num_functions);

/// Samples every entry at m points of Uniform[-1,1]^d, drops columns with
/// RMS < 1e-10 (reported, not counted against the class), rescales the
/// rest to unit RMS and inspects the singular values. Near-null right singular vectors (ratio < tol) are reduced to
/// echelon form and each row's entries with |component| > 0.1 form a
/// dependent subset. Requires m >= 3 * num_functions.
IndependenceReport independence_test(const DerivativeClass& cls, std::size_t m, double tol, Rng& rng);

void write_independence_report(std::ostream& os, const DerivativeClass& cls,
                               const IndependenceReport& report);
void write_singular_values_csv(std::ostream& os, const IndependenceReport& report);

/// phi'(b) == 0 makes the proportionality constant undefined.
class SingularConstantError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// At beta1 = 0, a = 0: dF/dbeta1 = C * dF/da with
/// C = (1 - sigma(beta0)) phi(b) / phi'(b). Returns the max over probes of
/// ||dF/dbeta1 - C dF/da|| / (1 + ||dF/dbeta1||).
double pde_residual_input_independent(const Activation& act, double beta0, double b,
                                      const std::vector<std::vector<double>>& probe_xs);

/// Linear experts: d2F/(dbeta1 db) = d2F/(da dbeta0) at any parameters.
/// Returns the max normalized residual over probes.
double pde_residual_polynomial(std::span<const double> beta1, double beta0, std::span<const double> a,
                               double b, const std::vector<std::vector<double>>& probe_xs);

/// Slow sequence for linear experts with a*_1 = 0, beta*_11 = 0: the first
/// true atom is replaced by two copies with b*_1 +/- 1/n whose gate masses
/// add up to sigma(beta*_01) + n^-(r+1). f_{G_n} - f_{G*} = n^-(r+1) b*_1.
MixingMeasure slow_sequence_linear(const MixingMeasure& truth, std::size_t n, double r);

/// Slow sequence for input-independent first expert (a*_1 = 0,
/// beta*_11 = 0): two copies with exp(-beta0) = 1 + 2 exp(-beta*_01), so
/// each carries half the gate mass, and b*_1 + c/n, b*_1 + 2c/n.
MixingMeasure slow_sequence_activation(const MixingMeasure& truth, std::size_t n, double c);

}  // namespace smoe
