#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoe/model.hpp"
#include "smoe/rng.hpp"
#include "smoe/synth.hpp"

namespace smoe {

struct TrainConfig {
  std::size_t k = 9;
  std::size_t epochs = 10;
  double lr = 0.1;
  std::size_t batch_size = 32;
  /// When nonzero, overrides batch_size with ceil(n / batches_per_epoch),
  /// so the SGD noise floor shrinks with n. Set to 0 for a fixed batch size.
  std::size_t batches_per_epoch = 300;
  double init_perturb = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t effective_batch_size(std::size_t n) const;
};

struct FitResult {
  MixingMeasure fitted;
  std::vector<double> loss_trace;  // full-data MSE after each epoch
  double final_loss = 0.0;
};

/// Raised when SGD produces a non-finite loss or parameter.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(std::size_t epoch, std::size_t batch);
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

/// Rewrites truth with k atoms: the last true atom is split into
/// k - k* + 1 identical copies that share its gate mass (sigmoid:
/// beta0 = logit(sigma(beta0*) / c); softmax: beta0 = beta0* - log c). As a
/// weighted set of (beta1, eta) points this is the same mixing measure and
/// f is unchanged.
MixingMeasure split_anchor(const MixingMeasure& truth, std::size_t k);

/// Copies the true atoms and gives each of the k - k* surplus atoms to the
/// last true atom. The c copies of that atom share its gate mass (sigmoid:
/// beta0 = logit(sigma(beta0*) / c); softmax: beta0 = beta0* - log c), so
/// f_init matches f_truth before noise. Every coordinate then gets
/// N(0, init_perturb^2) noise, atoms in index order.
MixingMeasure init_near_truth(const MixingMeasure& truth, std::size_t k, double init_perturb,
                              Rng& rng);

/// Plain mini-batch SGD on the batch-mean squared loss. Each epoch draws a
/// Fisher-Yates permutation from rng; the last batch of an epoch may be
/// short.
FitResult fit(const Dataset& data, const MixingMeasure& init, const TrainConfig& cfg, Rng& rng);

void write_loss_trace(const std::string& path, const FitResult& result);

}  // namespace smoe
