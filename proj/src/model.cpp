#include "smoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace smoe {

namespace {

constexpr std::size_t kReduceBlock = 256;

void require_dim(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got) {
    std::ostringstream msg;
    msg << what << ": dimension mismatch (expected " << expected << ", got " << got << ")";
    throw std::invalid_argument(msg.str());
  }
}

double int_power(double z, int p) {
  double out = z;
  for (int i = 1; i < p; ++i) out *= z;
  return out;
}

// Gate weights and the derivative of f with respect to each gating logit.
// For sigmoid gating dlogit[i] = w_i (1 - w_i) phi_i, for softmax
// dlogit[i] = w_i (phi_i - f).
struct RowEval {
  std::vector<double> weight;
  std::vector<double> phi;
  std::vector<double> dphi;
  std::vector<double> dlogit;
  double f = 0.0;
};

void eval_row(const MixingMeasure& g, std::span<const double> x, RowEval& out) {
  const std::size_t k = g.size();
  out.weight.resize(k);
  out.phi.resize(k);
  out.dphi.resize(k);
  out.dlogit.resize(k);

  for (std::size_t i = 0; i < k; ++i) {
    const Atom& atom = g.atoms[i];
    const double z = dot(atom.a, x) + atom.b;
    out.phi[i] = g.activation.value(z);
    out.dphi[i] = g.activation.derivative(z);
    out.weight[i] = dot(atom.beta1, x) + atom.beta0;  // logit for now
  }

  double f = 0.0;
  if (g.gating == Gating::Sigmoid) {
    for (std::size_t i = 0; i < k; ++i) {
      const double s = out.weight[i];
      const double w = sigmoid(s);
      out.weight[i] = w;
      out.dlogit[i] = w * sigmoid(-s) * out.phi[i];
      f += w * out.phi[i];
    }
  } else {
    const double top = *std::max_element(out.weight.begin(), out.weight.end());
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      out.weight[i] = std::exp(out.weight[i] - top);
      total += out.weight[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
      out.weight[i] /= total;
      f += out.weight[i] * out.phi[i];
    }
    for (std::size_t i = 0; i < k; ++i) out.dlogit[i] = out.weight[i] * (out.phi[i] - f);
  }
  out.f = f;
}

// Adds coeff * df/dtheta for one row into grad (flattened layout).
void add_row_gradient(const MixingMeasure& g, std::span<const double> x, const RowEval& row,
                      double coeff, std::span<double> grad) {
  const std::size_t d = g.dim();
  const std::size_t block = 2 * d + 2;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double* p = grad.data() + i * block;
    const double gs = coeff * row.dlogit[i];
    const double ge = coeff * row.weight[i] * row.dphi[i];
    p[0] += gs;
    for (std::size_t u = 0; u < d; ++u) p[1 + u] += gs * x[u];
    for (std::size_t u = 0; u < d; ++u) p[1 + d + u] += ge * x[u];
    p[1 + 2 * d] += ge;
  }
}

void check_batch(const MixingMeasure& g, const Matrix& x, std::span<const double> y) {
  if (x.rows == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  require_dim(x.rows, y.size(), "batch rows vs responses");
  require_dim(g.dim(), x.cols, "batch columns vs measure");
}

}  // namespace

Activation Activation::polynomial(int p) {
  if (p < 1) throw std::invalid_argument("polynomial degree must be >= 1");
  return {Kind::Polynomial, p};
}

double Activation::value(double z) const {
  switch (kind) {
    case Kind::ReLU:
      return z > 0.0 ? z : 0.0;
    case Kind::GELU:
      return z * normal_cdf(z);
    case Kind::Identity:
      return z;
    case Kind::Polynomial:
      return int_power(z, degree);
  }
  return 0.0;
}

double Activation::derivative(double z) const {
  switch (kind) {
    case Kind::ReLU:
      return z > 0.0 ? 1.0 : 0.0;
    case Kind::GELU:
      return normal_cdf(z) + z * normal_pdf(z);
    case Kind::Identity:
      return 1.0;
    case Kind::Polynomial:
      return degree == 1 ? 1.0 : degree * int_power(z, degree - 1);
  }
  return 0.0;
}

double Activation::second_derivative(double z) const {
  switch (kind) {
    case Kind::ReLU:
    case Kind::Identity:
      return 0.0;
    case Kind::GELU:
      return (2.0 - z * z) * normal_pdf(z);
    case Kind::Polynomial:
      if (degree == 1) return 0.0;
      if (degree == 2) return 2.0;
      return degree * (degree - 1) * int_power(z, degree - 2);
  }
  return 0.0;
}

std::string Activation::name() const {
  switch (kind) {
    case Kind::ReLU:
      return "relu";
    case Kind::GELU:
      return "gelu";
    case Kind::Identity:
      return "identity";
    case Kind::Polynomial:
      return "polynomial";
  }
  return "unknown";
}

Activation Activation::parse(const std::string& name, int degree) {
  if (name == "relu") return relu();
  if (name == "gelu") return gelu();
  if (name == "identity" || name == "linear") return identity();
  if (name == "polynomial" || name == "poly") return polynomial(degree);
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Gating g) { return g == Gating::Sigmoid ? "sigmoid" : "softmax"; }

Gating parse_gating(const std::string& name) {
  if (name == "sigmoid") return Gating::Sigmoid;
  if (name == "softmax") return Gating::Softmax;
  throw std::invalid_argument("unknown gating '" + name + "'");
}

Atom::Atom(double beta0_, std::vector<double> beta1_, std::vector<double> a_, double b_)
    : beta0(beta0_), beta1(std::move(beta1_)), a(std::move(a_)), b(b_) {
  require_dim(beta1.size(), a.size(), "atom beta1 vs a");
}

MixingMeasure::MixingMeasure(std::vector<Atom> atoms_, Gating gating_, Activation activation_)
    : atoms(std::move(atoms_)), gating(gating_), activation(activation_) {
  validate();
}

void MixingMeasure::validate() const {
  if (atoms.empty()) throw std::invalid_argument("mixing measure needs at least one atom");
  if (activation.kind == Activation::Kind::Polynomial && activation.degree < 1)
    throw std::invalid_argument("polynomial degree must be >= 1");
  const std::size_t d = dim();
  if (d == 0) throw std::invalid_argument("mixing measure dimension must be >= 1");
  for (const Atom& atom : atoms) {
    require_dim(d, atom.beta1.size(), "atom beta1");
    require_dim(d, atom.a.size(), "atom a");
    bool finite = std::isfinite(atom.beta0) && std::isfinite(atom.b);
    for (double v : atom.beta1) finite = finite && std::isfinite(v);
    for (double v : atom.a) finite = finite && std::isfinite(v);
    if (!finite) throw std::invalid_argument("mixing measure has non-finite parameters");
  }
}

std::vector<double> MixingMeasure::flatten() const {
  std::vector<double> out;
  out.reserve(num_params());
  for (const Atom& atom : atoms) {
    out.push_back(atom.beta0);
    out.insert(out.end(), atom.beta1.begin(), atom.beta1.end());
    out.insert(out.end(), atom.a.begin(), atom.a.end());
    out.push_back(atom.b);
  }
  return out;
}

void MixingMeasure::unflatten(std::span<const double> params) {
  require_dim(num_params(), params.size(), "flattened parameters");
  const std::size_t d = dim();
  auto it = params.begin();
  for (Atom& atom : atoms) {
    atom.beta0 = *it++;
    std::copy(it, it + d, atom.beta1.begin());
    it += d;
    std::copy(it, it + d, atom.a.begin());
    it += d;
    atom.b = *it++;
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

std::vector<double> gate_weights(const MixingMeasure& g, std::span<const double> x) {
  require_dim(g.dim(), x.size(), "gate_weights");
  std::vector<double> w(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) w[i] = dot(g.atoms[i].beta1, x) + g.atoms[i].beta0;
  if (g.gating == Gating::Sigmoid) {
    for (double& v : w) v = sigmoid(v);
    return w;
  }
  const double top = *std::max_element(w.begin(), w.end());
  double total = 0.0;
  for (double& v : w) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : w) v /= total;
  return w;
}

double expert_eval(const Activation& act, std::span<const double> a, double b,
                   std::span<const double> x) {
  require_dim(a.size(), x.size(), "expert_eval");
  return act.value(dot(a, x) + b);
}

double regression_eval(const MixingMeasure& g, std::span<const double> x) {
  const std::vector<double> w = gate_weights(g, x);
  double f = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    f += w[i] * expert_eval(g.activation, g.atoms[i].a, g.atoms[i].b, x);
  return f;
}

LossGrad loss_and_grad(const MixingMeasure& g, const Matrix& x, std::span<const double> y) {
  check_batch(g, x, y);
  const std::size_t m = x.rows;
  const std::size_t np = g.num_params();
  const std::size_t nblocks = (m + kReduceBlock - 1) / kReduceBlock;

  std::vector<double> block_loss(nblocks, 0.0);
  std::vector<double> block_grad(nblocks * np, 0.0);

#pragma omp parallel for schedule(static) if (nblocks > 1)
  for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(nblocks); ++blk) {
    RowEval row;
    const std::size_t lo = static_cast<std::size_t>(blk) * kReduceBlock;
    const std::size_t hi = std::min(m, lo + kReduceBlock);
    std::span<double> grad(block_grad.data() + static_cast<std::size_t>(blk) * np, np);
    double sq = 0.0;
    for (std::size_t j = lo; j < hi; ++j) {
      const auto xj = x.row(j);
      eval_row(g, xj, row);
      const double r = y[j] - row.f;
      sq += r * r;
      add_row_gradient(g, xj, row, r, grad);
    }
    block_loss[static_cast<std::size_t>(blk)] = sq;
  }

  LossGrad out{0.0, ParamGradient(g.size(), g.dim())};
  const double scale = -2.0 / static_cast<double>(m);
  for (std::size_t blk = 0; blk < nblocks; ++blk) {
    out.loss += block_loss[blk];
    const double* src = block_grad.data() + blk * np;
    for (std::size_t p = 0; p < np; ++p) out.grad.values[p] += src[p];
  }
  out.loss /= static_cast<double>(m);
  for (double& v : out.grad.values) v *= scale;
  return out;
}

LossGrad loss_and_grad_reference(const MixingMeasure& g, const Matrix& x,
                                 std::span<const double> y) {
  check_batch(g, x, y);
  const std::size_t m = x.rows;
  const std::size_t d = g.dim();
  LossGrad out{0.0, ParamGradient(g.size(), d)};
  for (std::size_t j = 0; j < m; ++j) {
    const auto xj = x.row(j);
    double f = 0.0;
    std::vector<double> w = gate_weights(g, xj);
    std::vector<double> phi(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      phi[i] = expert_eval(g.activation, g.atoms[i].a, g.atoms[i].b, xj);
      f += w[i] * phi[i];
    }
    const double r = y[j] - f;
    out.loss += r * r / static_cast<double>(m);
    const double c = -2.0 * r / static_cast<double>(m);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Atom& atom = g.atoms[i];
      const double ds = g.gating == Gating::Sigmoid ? w[i] * (1.0 - w[i]) * phi[i]
                                                    : w[i] * (phi[i] - f);
      const double de = w[i] * g.activation.derivative(dot(atom.a, xj) + atom.b);
      out.grad.d_beta0(i) += c * ds;
      for (std::size_t u = 0; u < d; ++u) {
        out.grad.d_beta1(i)[u] += c * ds * xj[u];
        out.grad.d_a(i)[u] += c * de * xj[u];
      }
      out.grad.d_b(i) += c * de;
    }
  }
  return out;
}

double mean_squared_error(const MixingMeasure& g, const Matrix& x, std::span<const double> y) {
  check_batch(g, x, y);
  const std::size_t m = x.rows;
  const std::size_t nblocks = (m + kReduceBlock - 1) / kReduceBlock;
  std::vector<double> block_loss(nblocks, 0.0);

#pragma omp parallel for schedule(static) if (nblocks > 1)
  for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(nblocks); ++blk) {
    RowEval row;
    const std::size_t lo = static_cast<std::size_t>(blk) * kReduceBlock;
    const std::size_t hi = std::min(m, lo + kReduceBlock);
    double sq = 0.0;
    for (std::size_t j = lo; j < hi; ++j) {
      eval_row(g, x.row(j), row);
      const double r = y[j] - row.f;
      sq += r * r;
    }
    block_loss[static_cast<std::size_t>(blk)] = sq;
  }
  double total = 0.0;
  for (double v : block_loss) total += v;
  return total / static_cast<double>(m);
}

double mean_squared_error_reference(const MixingMeasure& g, const Matrix& x,
                                    std::span<const double> y) {
  check_batch(g, x, y);
  double total = 0.0;
  for (std::size_t j = 0; j < x.rows; ++j) {
    const double r = y[j] - regression_eval(g, x.row(j));
    total += r * r;
  }
  return total / static_cast<double>(x.rows);
}

void write_measure(std::ostream& os, const MixingMeasure& g) {
  g.validate();
  os << "smoe-measure 1\n";
  os << "d " << g.dim() << "\n";
  os << "k " << g.size() << "\n";
  os << "gating " << to_string(g.gating) << "\n";
  os << "activation " << g.activation.name() << "\n";
  os << "degree " << g.activation.degree << "\n";
  os << std::setprecision(17);
  for (const Atom& atom : g.atoms) {
    os << "atom " << atom.beta0;
    for (double v : atom.beta1) os << ' ' << v;
    for (double v : atom.a) os << ' ' << v;
    os << ' ' << atom.b << "\n";
  }
}

MixingMeasure read_measure(std::istream& is) {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "smoe-measure" || version != 1)
    throw std::runtime_error("not a smoe-measure record");

  std::size_t d = 0;
  std::size_t k = 0;
  std::string gating = "sigmoid";
  std::string activation = "identity";
  int degree = 1;
  std::vector<Atom> atoms;

  std::string key;
  while (atoms.size() < k || k == 0) {
    if (!(is >> key)) break;
    if (key == "d") {
      is >> d;
    } else if (key == "k") {
      is >> k;
    } else if (key == "gating") {
      is >> gating;
    } else if (key == "activation") {
      is >> activation;
    } else if (key == "degree") {
      is >> degree;
    } else if (key == "atom") {
      if (d == 0) throw std::runtime_error("measure record: atom before dimension");
      Atom atom(d);
      is >> atom.beta0;
      for (double& v : atom.beta1) is >> v;
      for (double& v : atom.a) is >> v;
      is >> atom.b;
      if (!is) throw std::runtime_error("measure record: truncated atom line");
      atoms.push_back(std::move(atom));
    } else {
      throw std::runtime_error("measure record: unknown key '" + key + "'");
    }
    if (!is) throw std::runtime_error("measure record: malformed value for '" + key + "'");
  }
  if (atoms.size() != k) throw std::runtime_error("measure record: atom count mismatch");
  return MixingMeasure(std::move(atoms), parse_gating(gating), Activation::parse(activation, degree));
}

void save_measure(const std::string& path, const MixingMeasure& g) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_measure(os, g);
}

MixingMeasure load_measure(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_measure(is);
}

}  // namespace smoe
