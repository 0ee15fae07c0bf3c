#include "smoe/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace smoe {

namespace {

std::string diverged_message(std::size_t epoch, std::size_t batch) {
  std::ostringstream msg;
  msg << "SGD diverged at epoch " << epoch << ", batch " << batch;
  return msg.str();
}

}  // namespace

DivergedError::DivergedError(std::size_t epoch, std::size_t batch)
    : std::runtime_error(diverged_message(epoch, batch)), epoch_(epoch), batch_(batch) {}

void TrainConfig::validate() const {
  if (k < 1) throw std::invalid_argument("train: k must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(init_perturb >= 0.0)) throw std::invalid_argument("train: init_perturb must be >= 0");
}

std::size_t TrainConfig::effective_batch_size(std::size_t n) const {
  const std::size_t bs = batches_per_epoch > 0 ? (n + batches_per_epoch - 1) / batches_per_epoch : batch_size;
  return std::max<std::size_t>(1, std::min(bs, n));
}

MixingMeasure split_anchor(const MixingMeasure& truth, std::size_t k) {
  truth.validate();
  const std::size_t k_star = truth.size();
  if (k < k_star) throw std::invalid_argument("split_anchor: k must be >= number of true atoms");

  MixingMeasure out = truth;
  const std::size_t anchor = k_star - 1;
  const std::size_t copies = k - k_star + 1;
  if (copies > 1) {
    const double c = static_cast<double>(copies);
    Atom& a0 = out.atoms[anchor];
    if (truth.gating == Gating::Sigmoid)
      a0.beta0 = logit(sigmoid(truth.atoms[anchor].beta0) / c);
    else
      a0.beta0 = truth.atoms[anchor].beta0 - std::log(c);
    for (std::size_t s = 1; s < copies; ++s) out.atoms.push_back(a0);
  }
  return out;
}

MixingMeasure init_near_truth(const MixingMeasure& truth, std::size_t k, double init_perturb,
                              Rng& rng) {
  if (k < truth.size()) throw std::invalid_argument("init_near_truth: k must be >= number of true atoms");
  MixingMeasure init = split_anchor(truth, k);

  if (init_perturb > 0.0) {
    for (Atom& atom : init.atoms) {
      atom.beta0 += rng.normal(0.0, init_perturb);
      for (double& v : atom.beta1) v += rng.normal(0.0, init_perturb);
      for (double& v : atom.a) v += rng.normal(0.0, init_perturb);
      atom.b += rng.normal(0.0, init_perturb);
    }
  }
  return init;
}

FitResult fit(const Dataset& data, const MixingMeasure& init, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  init.validate();
  if (init.dim() != data.x.cols) throw std::invalid_argument("fit: init dimension does not match data");
  const std::size_t n = data.n();
  if (n == 0) throw std::invalid_argument("fit: empty dataset");

  FitResult out;
  out.fitted = init;
  std::vector<double> params = init.flatten();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t bs = cfg.effective_batch_size(n);
  Matrix xb(bs, data.x.cols);
  std::vector<double> yb(bs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    std::size_t batch = 0;
    for (std::size_t start = 0; start < n; start += bs, ++batch) {
      const std::size_t m = std::min(bs, n - start);
      if (xb.rows != m) {
        xb = Matrix(m, data.x.cols);
        yb.resize(m);
      }
      for (std::size_t j = 0; j < m; ++j) {
        const auto src = data.x.row(order[start + j]);
        std::copy(src.begin(), src.end(), xb.row(j).begin());
        yb[j] = data.y[order[start + j]];
      }
      const LossGrad lg = loss_and_grad(out.fitted, xb, yb);
      if (!std::isfinite(lg.loss)) throw DivergedError(epoch, batch);
      for (std::size_t p = 0; p < params.size(); ++p) params[p] -= cfg.lr * lg.grad.values[p];
      for (double v : params)
        if (!std::isfinite(v)) throw DivergedError(epoch, batch);
      out.fitted.unflatten(params);
    }
    const double epoch_loss = mean_squared_error(out.fitted, data.x, data.y);
    if (!std::isfinite(epoch_loss)) throw DivergedError(epoch, batch);
    out.loss_trace.push_back(epoch_loss);
  }
  out.final_loss = out.loss_trace.back();
  return out;
}

void write_loss_trace(const std::string& path, const FitResult& result) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << std::setprecision(17) << "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_trace.size(); ++e)
    os << e + 1 << ',' << result.loss_trace[e] << "\n";
}

}  // namespace smoe
