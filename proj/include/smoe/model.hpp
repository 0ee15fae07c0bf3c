#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace smoe {

/// Expert nonlinearity applied to the ridge projection a.x + b.
struct Activation {
  enum class Kind { ReLU, GELU, Identity, Polynomial };

  Kind kind = Kind::Identity;
  int degree = 1;  // only meaningful for Polynomial

  static Activation relu() { return {Kind::ReLU, 1}; }
  static Activation gelu() { return {Kind::GELU, 1}; }
  static Activation identity() { return {Kind::Identity, 1}; }
  static Activation polynomial(int p);

  double value(double z) const;
  double derivative(double z) const;
  double second_derivative(double z) const;

  /// Twice differentiable everywhere (ReLU is not).
  bool smooth() const { return kind != Kind::ReLU; }

  std::string name() const;
  static Activation parse(const std::string& name, int degree = 1);

  friend bool operator==(const Activation&, const Activation&) = default;
};

enum class Gating { Sigmoid, Softmax };

std::string to_string(Gating g);
Gating parse_gating(const std::string& name);

/// One mixture component: gating bias/slope and ridge-expert parameters.
struct Atom {
  double beta0 = 0.0;
  std::vector<double> beta1;
  std::vector<double> a;
  double b = 0.0;

  Atom() = default;
  explicit Atom(std::size_t d) : beta1(d, 0.0), a(d, 0.0) {}
  Atom(double beta0_, std::vector<double> beta1_, std::vector<double> a_, double b_);

  std::size_t dim() const { return beta1.size(); }

  friend bool operator==(const Atom&, const Atom&) = default;
};

/// Ordered atoms plus gating and activation; determines f_G.
struct MixingMeasure {
  std::vector<Atom> atoms;
  Gating gating = Gating::Sigmoid;
  Activation activation;

  MixingMeasure() = default;
  MixingMeasure(std::vector<Atom> atoms_, Gating gating_, Activation activation_);

  std::size_t dim() const { return atoms.empty() ? 0 : atoms.front().dim(); }
  std::size_t size() const { return atoms.size(); }

  /// Number of scalar parameters, size() * (2d + 2).
  std::size_t num_params() const { return size() * (2 * dim() + 2); }

  /// Throws std::invalid_argument on empty atoms, ragged dimensions or
  /// non-finite entries.
  void validate() const;

  /// Atom-major flattening with field order (beta0, beta1, a, b).
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> params);

  friend bool operator==(const MixingMeasure&, const MixingMeasure&) = default;
};

/// Gradient with the same block layout as MixingMeasure::flatten().
struct ParamGradient {
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<double> values;

  ParamGradient() = default;
  ParamGradient(std::size_t k_, std::size_t d_) : d(d_), k(k_), values(k_ * (2 * d_ + 2), 0.0) {}

  std::size_t block() const { return 2 * d + 2; }
  double& d_beta0(std::size_t i) { return values[i * block()]; }
  std::span<double> d_beta1(std::size_t i) { return {values.data() + i * block() + 1, d}; }
  std::span<double> d_a(std::size_t i) { return {values.data() + i * block() + 1 + d, d}; }
  double& d_b(std::size_t i) { return values[i * block() + 1 + 2 * d]; }
};

/// Dense row-major matrix of samples.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

double sigmoid(double z);
double logit(double p);
/// Standard normal CDF and density.
double normal_cdf(double z);
double normal_pdf(double z);

double dot(std::span<const double> u, std::span<const double> v);

std::vector<double> gate_weights(const MixingMeasure& g, std::span<const double> x);

double expert_eval(const Activation& act, std::span<const double> a, double b,
                   std::span<const double> x);

double regression_eval(const MixingMeasure& g, std::span<const double> x);

struct LossGrad {
  double loss = 0.0;
  ParamGradient grad;
};

/// Mean squared residual over the batch and its exact gradient. Rows are
/// reduced in fixed-size blocks; with OpenMP the blocks run in parallel but
/// are combined in block order, so the result does not depend on the
/// thread count.
LossGrad loss_and_grad(const MixingMeasure& g, const Matrix& x, std::span<const double> y);

/// Straight-line serial version of loss_and_grad, kept as the reference for
/// the parallel kernel.
LossGrad loss_and_grad_reference(const MixingMeasure& g, const Matrix& x,
                                 std::span<const double> y);

/// Mean squared residual only (same blocked reduction as loss_and_grad).
double mean_squared_error(const MixingMeasure& g, const Matrix& x, std::span<const double> y);
double mean_squared_error_reference(const MixingMeasure& g, const Matrix& x,
                                    std::span<const double> y);

/// Text record: header lines then one "atom" line per component, 17
/// significant digits.
void write_measure(std::ostream& os, const MixingMeasure& g);
MixingMeasure read_measure(std::istream& is);
void save_measure(const std::string& path, const MixingMeasure& g);
MixingMeasure load_measure(const std::string& path);

}  // namespace smoe
