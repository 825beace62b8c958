#include "rdg/trainer.hpp"

#include <cmath>
#include <string>

namespace rdg {

namespace {

struct GroupRange {
  std::size_t begin, end;
};

GroupRange group_range(std::size_t n, std::size_t g) {
  const std::size_t base = n / kGradientGroups, extra = n % kGradientGroups;
  const std::size_t begin = g * base + std::min(g, extra);
  return {begin, begin + base + (g < extra ? 1 : 0)};
}

std::uint64_t item_seed(std::uint64_t seed, std::size_t i) { return derive_seed(seed, i); }

// Per-group work shared by both execution paths.
void nll_group(const Seq2SeqParams& params, std::span<const DialoguePair> batch, GroupRange r,
               double dropout, std::uint64_t seed, GradientSet& grad, double& loss) {
  const double w = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = r.begin; i < r.end; ++i) {
    auto res = forward_nll(params, batch[i], {dropout, item_seed(seed, i)});
    loss += res.loss;
    accumulate_gradient(params, res.cache, w, grad);
  }
}

void weighted_group(const Seq2SeqParams& params, std::span<const WeightedSequence> items,
                    GroupRange r, double dropout, std::uint64_t seed, GradientSet& grad) {
  for (std::size_t i = r.begin; i < r.end; ++i) {
    if (items[i].weight == 0.0) continue;
    auto res = forward(params, items[i].condition, items[i].sequence, {dropout, item_seed(seed, i)});
    accumulate_gradient(params, res.cache, items[i].weight, grad);
  }
}

BatchLoss reduce(const Seq2SeqParams& params, std::vector<GradientSet>& parts,
                 const std::vector<double>& losses, std::size_t n) {
  BatchLoss out{GradientSet::zeros_like(params), 0.0};
  double loss = 0.0;
  for (std::size_t g = 0; g < parts.size(); ++g) {
    out.gradient.add(parts[g]);
    loss += losses[g];
  }
  out.loss = n ? loss / static_cast<double>(n) : 0.0;
  return out;
}

}  // namespace

namespace serial {

BatchLoss nll_gradient(const Seq2SeqParams& params, std::span<const DialoguePair> batch,
                       double dropout_rate, std::uint64_t seed) {
  std::vector<GradientSet> parts(kGradientGroups, GradientSet::zeros_like(params));
  std::vector<double> losses(kGradientGroups, 0.0);
  for (std::size_t g = 0; g < kGradientGroups; ++g)
    nll_group(params, batch, group_range(batch.size(), g), dropout_rate, seed, parts[g], losses[g]);
  return reduce(params, parts, losses, batch.size());
}

GradientSet weighted_log_prob_gradient(const Seq2SeqParams& params,
                                       std::span<const WeightedSequence> items,
                                       double dropout_rate, std::uint64_t seed) {
  std::vector<GradientSet> parts(kGradientGroups, GradientSet::zeros_like(params));
  for (std::size_t g = 0; g < kGradientGroups; ++g)
    weighted_group(params, items, group_range(items.size(), g), dropout_rate, seed, parts[g]);
  return reduce(params, parts, std::vector<double>(kGradientGroups, 0.0), 0).gradient;
}

}  // namespace serial

namespace omp {

BatchLoss nll_gradient(const Seq2SeqParams& params, std::span<const DialoguePair> batch,
                       double dropout_rate, std::uint64_t seed) {
  std::vector<GradientSet> parts(kGradientGroups, GradientSet::zeros_like(params));
  std::vector<double> losses(kGradientGroups, 0.0);
  const auto n = static_cast<std::int64_t>(kGradientGroups);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t g = 0; g < n; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    nll_group(params, batch, group_range(batch.size(), gi), dropout_rate, seed, parts[gi],
              losses[gi]);
  }
  return reduce(params, parts, losses, batch.size());
}

GradientSet weighted_log_prob_gradient(const Seq2SeqParams& params,
                                       std::span<const WeightedSequence> items,
                                       double dropout_rate, std::uint64_t seed) {
  std::vector<GradientSet> parts(kGradientGroups, GradientSet::zeros_like(params));
  const auto n = static_cast<std::int64_t>(kGradientGroups);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t g = 0; g < n; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    weighted_group(params, items, group_range(items.size(), gi), dropout_rate, seed, parts[gi]);
  }
  return reduce(params, parts, std::vector<double>(kGradientGroups, 0.0), 0).gradient;
}

}  // namespace omp

double corpus_nll(const Seq2SeqParams& params, std::span<const DialoguePair> pairs) {
  if (pairs.empty()) return 0.0;
  std::vector<double> lp(pairs.size());
  const auto n = static_cast<std::int64_t>(pairs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    lp[static_cast<std::size_t>(i)] = forward(params, p.input, p.output).log_prob;
  }
  double total = 0.0, tokens = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    total -= lp[i];
    tokens += static_cast<double>(pairs[i].output.size() + 1);
  }
  return total / tokens;
}

std::vector<EpochRecord> fit_supervised(Seq2SeqParams& params,
                                        std::span<const DialoguePair> train,
                                        std::span<const DialoguePair> val,
                                        const SupervisedConfig& cfg,
                                        const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("empty training set");
  const auto& opt_cfg = cfg.optimizer;
  Optimizer opt(opt_cfg);
  const auto val_set = val.empty() ? train : val;

  std::vector<EpochRecord> log;
  auto emit = [&](EpochRecord rec) {
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  };
  double best_val = corpus_nll(params, val_set);
  emit({0, corpus_nll(params, train), best_val, opt.learning_rate()});

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<DialoguePair> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt_cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + opt_cfg.batch_size); ++k)
        batch.push_back(train[order[k]]);
      auto res = omp::nll_gradient(params, batch, opt_cfg.dropout_rate,
                                   derive_seed(cfg.seed, (epoch << 32) + n_batches));
      if (!std::isfinite(res.loss) || !res.gradient.all_finite())
        throw TrainingDiverged("non-finite loss in epoch " + std::to_string(epoch) + " batch " +
                               std::to_string(n_batches) + " (lr " +
                               std::to_string(opt.learning_rate()) + ")");
      opt.apply(params, clip_gradients(std::move(res.gradient), opt_cfg.clip_value),
                Direction::descent);
      loss_sum += res.loss;
      ++n_batches;
    }
    const double val_nll = corpus_nll(params, val_set);
    if (!std::isfinite(val_nll))
      throw TrainingDiverged("non-finite validation loss after epoch " + std::to_string(epoch));
    emit({epoch, loss_sum / static_cast<double>(n_batches), val_nll, opt.learning_rate()});
    if (val_nll < best_val)
      best_val = val_nll;
    else
      opt.decay();
  }
  return log;
}

}  // namespace rdg
