#include "smoe/identifiability.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace smoe {

std::string ParamVar::name() const {
  switch (kind) {
    case Kind::Beta1: return "beta1[" + std::to_string(index) + "]";
    case Kind::Beta0: return "beta0";
    case Kind::A: return "a[" + std::to_string(index) + "]";
    case Kind::B: return "b";
  }
  return "?";
}

namespace {

double multiplier(const ParamVar& v, std::span<const double> x) {
  return (v.kind == ParamVar::Kind::Beta1 || v.kind == ParamVar::Kind::A) ? x[v.index] : 1.0;
}

std::string make_label(std::size_t atom, const std::vector<ParamVar>& vars, bool at_zero) {
  std::ostringstream os;
  os << "atom" << atom << ' ';
  if (vars.size() == 1) {
    os << "dF/d" << vars[0].name();
  } else {
    os << "d2F/d" << vars[0].name();
    if (vars[1] == vars[0])
      os << "^2";
    else
      os << " d" << vars[1].name();
  }
  if (at_zero) os << " @beta1=0";
  return os.str();
}

void validate_params(const std::vector<Atom>& params) {
  if (params.empty()) throw std::invalid_argument("derivative class: no atoms");
  const std::size_t d = params.front().beta1.size();
  if (d == 0) throw std::invalid_argument("derivative class: dimension must be >= 1");
  for (const Atom& p : params) {
    if (p.beta1.size() != d || p.a.size() != d)
      throw std::invalid_argument("derivative class: ragged atom dimensions");
    bool finite = std::isfinite(p.beta0) && std::isfinite(p.b);
    for (double v : p.beta1) finite = finite && std::isfinite(v);
    for (double v : p.a) finite = finite && std::isfinite(v);
    if (!finite) throw std::invalid_argument("derivative class: non-finite parameter");
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = i + 1; j < params.size(); ++j)
      if (params[i] == params[j])
        throw std::invalid_argument("derivative class: atoms " + std::to_string(i) + " and " +
                                    std::to_string(j) + " are identical");
}

bool is_linear(const Activation& act) {
  return act.kind == Activation::Kind::Identity ||
         (act.kind == Activation::Kind::Polynomial && act.degree == 1);
}

// Rows of the reduced echelon form of the near-null basis (one row per
// null vector), each scaled to unit norm.
std::vector<std::vector<double>> echelon_rows(Eigen::MatrixXd rows) {
  const Eigen::Index r = rows.rows();
  const Eigen::Index k = rows.cols();
  Eigen::Index lead = 0;
  for (Eigen::Index i = 0; i < r && lead < k; ++lead) {
    Eigen::Index piv = i;
    for (Eigen::Index t = i + 1; t < r; ++t)
      if (std::abs(rows(t, lead)) > std::abs(rows(piv, lead))) piv = t;
    if (std::abs(rows(piv, lead)) < 1e-8) continue;
    rows.row(i).swap(rows.row(piv));
    rows.row(i) /= rows(i, lead);
    for (Eigen::Index t = 0; t < r; ++t)
      if (t != i) rows.row(t) -= rows(t, lead) * rows.row(i);
    ++i;
  }
  std::vector<std::vector<double>> out;
  for (Eigen::Index i = 0; i < r; ++i) {
    const double norm = rows.row(i).norm();
    if (norm == 0.0) continue;
    std::vector<double> v(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) v[static_cast<std::size_t>(j)] = rows(i, j) / norm;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

double partial_f(const Activation& act, const Atom& p, std::span<const ParamVar> vars,
                 std::span<const double> x) {
  const double s = dot(p.beta1, x) + p.beta0;
  const double z = dot(p.a, x) + p.b;
  const double sig = sigmoid(s);
  if (vars.size() == 1) {
    const double m = multiplier(vars[0], x);
    return vars[0].is_gate() ? sig * (1.0 - sig) * act.value(z) * m : sig * act.derivative(z) * m;
  }
  if (vars.size() != 2) throw std::invalid_argument("partial_f: expected one or two variables");
  const double m = multiplier(vars[0], x) * multiplier(vars[1], x);
  const bool g0 = vars[0].is_gate();
  const bool g1 = vars[1].is_gate();
  const double ds = sig * (1.0 - sig);
  if (g0 && g1) return ds * (1.0 - 2.0 * sig) * act.value(z) * m;
  if (!g0 && !g1) return sig * act.second_derivative(z) * m;
  return ds * act.derivative(z) * m;
}

double DerivativeClass::evaluate(std::size_t entry, std::span<const double> x) const {
  const DerivativeEntry& e = entries.at(entry);
  if (!e.at_zero_slope) return partial_f(activation, params[e.atom], e.vars, x);
  Atom zeroed = params[e.atom];
  std::fill(zeroed.beta1.begin(), zeroed.beta1.end(), 0.0);
  return partial_f(activation, zeroed, e.vars, x);
}

DerivativeClass build_derivative_class(const Activation& act, const std::vector<Atom>& params,
                                       IdentifiabilityMode mode) {
  validate_params(params);
  const std::size_t d = params.front().beta1.size();
  DerivativeClass cls;
  cls.mode = mode;
  cls.activation = act;
  cls.params = params;

  using K = ParamVar::Kind;
  std::vector<ParamVar> strong_vars;  // (beta1, eta)
  for (std::size_t u = 0; u < d; ++u) strong_vars.push_back({K::Beta1, u});
  for (std::size_t u = 0; u < d; ++u) strong_vars.push_back({K::A, u});
  strong_vars.push_back({K::B, 0});

  std::vector<ParamVar> weak_vars;  // (beta1, beta0, eta)
  for (std::size_t u = 0; u < d; ++u) weak_vars.push_back({K::Beta1, u});
  weak_vars.push_back({K::Beta0, 0});
  for (std::size_t u = 0; u < d; ++u) weak_vars.push_back({K::A, u});
  weak_vars.push_back({K::B, 0});

  auto add = [&](std::size_t atom, std::vector<ParamVar> vars, bool at_zero) {
    DerivativeEntry e;
    e.atom = atom;
    e.label = make_label(atom, vars, at_zero);
    e.vars = std::move(vars);
    e.at_zero_slope = at_zero;
    cls.entries.push_back(std::move(e));
  };

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mode == IdentifiabilityMode::Strong) {
      for (const ParamVar& v : strong_vars) add(i, {v}, true);
      for (std::size_t p = 0; p < strong_vars.size(); ++p)
        for (std::size_t q = p; q < strong_vars.size(); ++q) add(i, {strong_vars[p], strong_vars[q]}, true);
    }
    for (const ParamVar& v : weak_vars) add(i, {v}, false);
  }
  return cls;
}

std::size_t default_sample_count(std::size_t num_functions) {
  return std::max<std::size_t>(2000, 10 * num_functions);
}

IndependenceReport independence_test(const DerivativeClass& cls, std::size_t m, double tol, Rng& rng) {
  const std::size_t kfun = cls.entries.size();
  if (kfun == 0) throw DegenerateClassError("independence test: empty derivative class");
  if (m < 3 * kfun) throw std::invalid_argument("independence test: need at least 3 samples per function");
  if (!(tol > 0.0)) throw std::invalid_argument("independence test: tol must be > 0");
  const std::size_t d = cls.dim();

  Matrix pts(m, d);
  for (double& v : pts.data) v = rng.uniform(-1.0, 1.0);

  Eigen::MatrixXd full(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(kfun));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < static_cast<std::ptrdiff_t>(m); ++row) {
    const auto x = pts.row(static_cast<std::size_t>(row));
    for (std::size_t j = 0; j < kfun; ++j) full(row, static_cast<Eigen::Index>(j)) = cls.evaluate(j, x);
  }

  IndependenceReport rep;
  rep.num_functions = kfun;
  rep.num_samples = m;
  for (std::size_t j = 0; j < kfun; ++j) {
    const double rms = full.col(static_cast<Eigen::Index>(j)).norm() / std::sqrt(static_cast<double>(m));
    if (rms < 1e-10)
      rep.dropped_zero_columns.push_back(j);
    else
      rep.kept_columns.push_back(j);
  }
  if (rep.kept_columns.empty())
    throw DegenerateClassError("independence test: every function in the class vanishes on the samples");

  const auto kept = static_cast<Eigen::Index>(rep.kept_columns.size());
  Eigen::MatrixXd mat(static_cast<Eigen::Index>(m), kept);
  for (Eigen::Index c = 0; c < kept; ++c) {
    const auto src = full.col(static_cast<Eigen::Index>(rep.kept_columns[static_cast<std::size_t>(c)]));
    mat.col(c) = src * (std::sqrt(static_cast<double>(m)) / src.norm());
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  rep.singular_values.assign(sv.data(), sv.data() + sv.size());
  const double smax = sv(0);
  rep.min_sv_ratio = smax > 0.0 ? sv(sv.size() - 1) / smax : 0.0;

  std::vector<Eigen::Index> null_idx;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (!(sv(i) > tol * smax)) null_idx.push_back(i);

  if (!null_idx.empty()) {
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(null_idx.size()), kept);
    for (std::size_t t = 0; t < null_idx.size(); ++t)
      rows.row(static_cast<Eigen::Index>(t)) = svd.matrixV().col(null_idx[t]).transpose();
    for (const auto& v : echelon_rows(rows)) {
      std::vector<std::size_t> subset;
      for (std::size_t c = 0; c < v.size(); ++c)
        if (std::abs(v[c]) > 0.1) subset.push_back(rep.kept_columns[c]);
      if (!subset.empty()) rep.dependent_subsets.push_back(std::move(subset));
    }
  }
  rep.verdict = rep.min_sv_ratio < tol ? Verdict::Dependent : Verdict::Independent;
  return rep;
}

void write_independence_report(std::ostream& os, const DerivativeClass& cls,
                               const IndependenceReport& report) {
  os << std::setprecision(6);
  os << "mode: " << (cls.mode == IdentifiabilityMode::Strong ? "strong" : "weak") << "\n";
  os << "activation: " << cls.activation.name() << "\n";
  os << "atoms: " << cls.params.size() << "\n";
  os << "functions: " << report.num_functions << "\n";
  os << "samples: " << report.num_samples << "\n";
  os << "zero functions dropped: " << report.dropped_zero_columns.size() << "\n";
  os << "min singular value ratio: " << report.min_sv_ratio << "\n";
  os << "verdict: " << (report.verdict == Verdict::Independent ? "independent" : "dependent") << "\n";
  if (report.dependent_subsets.empty()) return;
  os << "dependent subsets: " << report.dependent_subsets.size() << "\n";
  for (std::size_t s = 0; s < report.dependent_subsets.size(); ++s) {
    os << "  [" << s << "]";
    for (std::size_t j : report.dependent_subsets[s]) os << "  {" << cls.entries[j].label << "}";
    os << "\n";
  }
}

void write_singular_values_csv(std::ostream& os, const IndependenceReport& report) {
  os << std::setprecision(17) << "index,singular_value,ratio\n";
  const double smax = report.singular_values.empty() ? 0.0 : report.singular_values.front();
  for (std::size_t i = 0; i < report.singular_values.size(); ++i)
    os << i << ',' << report.singular_values[i] << ','
       << (smax > 0.0 ? report.singular_values[i] / smax : 0.0) << "\n";
}

double pde_residual_input_independent(const Activation& act, double beta0, double b,
                                      const std::vector<std::vector<double>>& probe_xs) {
  if (probe_xs.empty()) throw std::invalid_argument("pde residual: no probe points");
  const double dphi = act.derivative(b);
  if (dphi == 0.0 || !std::isfinite(dphi))
    throw SingularConstantError("pde residual: phi'(b) = 0, proportionality constant undefined");
  const double c = (1.0 - sigmoid(beta0)) * act.value(b) / dphi;

  const std::size_t d = probe_xs.front().size();
  Atom atom(d);
  atom.beta0 = beta0;
  atom.b = b;
  double worst = 0.0;
  for (const auto& x : probe_xs) {
    if (x.size() != d) throw std::invalid_argument("pde residual: ragged probe points");
    double diff2 = 0.0, lhs2 = 0.0;
    for (std::size_t u = 0; u < d; ++u) {
      const ParamVar gv{ParamVar::Kind::Beta1, u};
      const ParamVar ev{ParamVar::Kind::A, u};
      const double lhs = partial_f(act, atom, std::span(&gv, 1), x);
      const double rhs = partial_f(act, atom, std::span(&ev, 1), x);
      diff2 += (lhs - c * rhs) * (lhs - c * rhs);
      lhs2 += lhs * lhs;
    }
    worst = std::max(worst, std::sqrt(diff2) / (1.0 + std::sqrt(lhs2)));
  }
  return worst;
}

double pde_residual_polynomial(std::span<const double> beta1, double beta0, std::span<const double> a,
                               double b, const std::vector<std::vector<double>>& probe_xs) {
  if (probe_xs.empty()) throw std::invalid_argument("pde residual: no probe points");
  if (beta1.size() != a.size()) throw std::invalid_argument("pde residual: dimension mismatch");
  const std::size_t d = a.size();
  const Atom atom(beta0, {beta1.begin(), beta1.end()}, {a.begin(), a.end()}, b);
  const Activation act = Activation::identity();
  double worst = 0.0;
  for (const auto& x : probe_xs) {
    if (x.size() != d) throw std::invalid_argument("pde residual: probe dimension mismatch");
    double diff2 = 0.0, lhs2 = 0.0;
    for (std::size_t u = 0; u < d; ++u) {
      const ParamVar left[2] = {{ParamVar::Kind::Beta1, u}, {ParamVar::Kind::B, 0}};
      const ParamVar right[2] = {{ParamVar::Kind::A, u}, {ParamVar::Kind::Beta0, 0}};
      const double lhs = partial_f(act, atom, left, x);
      const double rhs = partial_f(act, atom, right, x);
      diff2 += (lhs - rhs) * (lhs - rhs);
      lhs2 += lhs * lhs;
    }
    worst = std::max(worst, std::sqrt(diff2) / (1.0 + std::sqrt(lhs2)));
  }
  return worst;
}

namespace {

void require_flat_first_atom(const MixingMeasure& truth, const char* who) {
  truth.validate();
  if (truth.gating != Gating::Sigmoid)
    throw std::invalid_argument(std::string(who) + ": requires sigmoid gating");
  const Atom& first = truth.atoms.front();
  for (double v : first.beta1)
    if (v != 0.0) throw std::invalid_argument(std::string(who) + ": first atom must have beta1 = 0");
  for (double v : first.a)
    if (v != 0.0) throw std::invalid_argument(std::string(who) + ": first atom must have a = 0");
}

MixingMeasure with_split_first(const MixingMeasure& truth, Atom c1, Atom c2) {
  MixingMeasure out = truth;
  out.atoms.clear();
  out.atoms.push_back(std::move(c1));
  out.atoms.push_back(std::move(c2));
  out.atoms.insert(out.atoms.end(), truth.atoms.begin() + 1, truth.atoms.end());
  return out;
}

}  // namespace

MixingMeasure slow_sequence_linear(const MixingMeasure& truth, std::size_t n, double r) {
  require_flat_first_atom(truth, "slow_sequence_linear");
  if (!is_linear(truth.activation))
    throw std::invalid_argument("slow_sequence_linear: requires a linear expert activation");
  if (n < 1) throw std::invalid_argument("slow_sequence_linear: n must be >= 1");
  if (!(r >= 1.0)) throw std::invalid_argument("slow_sequence_linear: r must be >= 1");

  const double nn = static_cast<double>(n);
  const Atom& first = truth.atoms.front();
  const double mass = (sigmoid(first.beta0) + std::pow(nn, -(r + 1.0))) / 2.0;
  Atom c1 = first, c2 = first;
  c1.beta0 = c2.beta0 = logit(mass);
  c1.b = first.b + 1.0 / nn;
  c2.b = first.b - 1.0 / nn;
  return with_split_first(truth, std::move(c1), std::move(c2));
}

MixingMeasure slow_sequence_activation(const MixingMeasure& truth, std::size_t n, double c) {
  require_flat_first_atom(truth, "slow_sequence_activation");
  if (n < 1) throw std::invalid_argument("slow_sequence_activation: n must be >= 1");
  if (!std::isfinite(c)) throw std::invalid_argument("slow_sequence_activation: c must be finite");

  const double nn = static_cast<double>(n);
  const Atom& first = truth.atoms.front();
  Atom c1 = first, c2 = first;
  c1.beta0 = c2.beta0 = -std::log1p(2.0 * std::exp(-first.beta0));
  c1.b = first.b + c / nn;
  c2.b = first.b + 2.0 * c / nn;
  return with_split_first(truth, std::move(c1), std::move(c2));
}

}  // namespace smoe
