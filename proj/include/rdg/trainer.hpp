#pragma once

// Batched gradients and the supervised (NLL) training loop.
//
// Batch gradients split the items into kGradientGroups contiguous groups,
// accumulate each group in item order, then add the group partials in group
// order. The serial and OpenMP versions share that summation order, so they
// agree bit for bit and the result does not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rdg/optim.hpp"
#include "rdg/seq_net.hpp"

namespace rdg {

inline constexpr std::size_t kGradientGroups = 8;

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One term of a weighted log-likelihood gradient: weight * grad log P(sequence | condition).
struct WeightedSequence {
  std::span<const TokenId> condition;
  std::span<const TokenId> sequence;
  double weight;
};

struct BatchLoss {
  GradientSet gradient;
  double loss = 0.0;  // mean over items of the per-token NLL
};

namespace serial {
BatchLoss nll_gradient(const Seq2SeqParams& params, std::span<const DialoguePair> batch,
                       double dropout_rate, std::uint64_t seed);
GradientSet weighted_log_prob_gradient(const Seq2SeqParams& params,
                                       std::span<const WeightedSequence> items,
                                       double dropout_rate, std::uint64_t seed);
}  // namespace serial

namespace omp {
BatchLoss nll_gradient(const Seq2SeqParams& params, std::span<const DialoguePair> batch,
                       double dropout_rate, std::uint64_t seed);
GradientSet weighted_log_prob_gradient(const Seq2SeqParams& params,
                                       std::span<const WeightedSequence> items,
                                       double dropout_rate, std::uint64_t seed);
}  // namespace omp

/// Token-weighted mean NLL (EOS included) without dropout.
double corpus_nll(const Seq2SeqParams& params, std::span<const DialoguePair> pairs);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained model
  double train_nll = 0.0;
  double val_nll = 0.0;
  double learning_rate = 0.0;
};

struct SupervisedConfig {
  OptimizerConfig optimizer;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
};

/// Minibatch training on the mean-per-token NLL. At the end of each epoch the
/// learning rate is multiplied by lr_decay unless the validation NLL reached a
/// new minimum. Throws TrainingDiverged on a non-finite loss or gradient.
std::vector<EpochRecord> fit_supervised(Seq2SeqParams& params,
                                        std::span<const DialoguePair> train,
                                        std::span<const DialoguePair> val,
                                        const SupervisedConfig& cfg,
                                        const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Deterministic split: `val_fraction` of the items (at least one when there
/// are two or more) go to validation.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_train_val(std::span<const T> items,
                                                          double val_fraction,
                                                          std::uint64_t seed);

}  // namespace rdg

#include "rdg/random.hpp"

namespace rdg {

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_train_val(std::span<const T> items,
                                                          double val_fraction,
                                                          std::uint64_t seed) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(items.size()));
  if (n_val == 0 && items.size() >= 2 && val_fraction > 0.0) n_val = 1;
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t k = 0; k < order.size(); ++k)
    (k < n_val ? out.second : out.first).push_back(items[order[k]]);
  return out;
}

}  // namespace rdg
