#pragma once

// The dialogue environment: a seq2seq model trained on a corpus, then sealed
// behind the BlackBox interface with greedy decoding.

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rdg/black_box.hpp"
#include "rdg/seq_net.hpp"
#include "rdg/text.hpp"
#include "rdg/trainer.hpp"

namespace rdg {

class Environment final : public BlackBox {
 public:
  Environment(Seq2SeqParams params, Vocabulary vocab);

  static Environment load(const std::filesystem::path& checkpoint,
                          const std::filesystem::path& vocab);

  std::string query(std::string_view input) override;
  std::uint64_t query_count() const override { return counter_.load(); }
  void reset_counter() override { counter_.store(0); }

 private:
  const Seq2SeqParams params_;
  const Vocabulary vocab_;
  std::atomic<std::uint64_t> counter_{0};
};

struct EnvTrainConfig {
  Seq2SeqHyper hyper;  // vocab_size is taken from the built vocabulary
  std::size_t max_vocab = 30000;
  OptimizerConfig optimizer;
  std::size_t epochs = 20;
  double val_fraction = 0.05;
  std::uint64_t seed = 1;
  /// Optional word-vector file copied into the embedding rows of known words.
  std::optional<std::filesystem::path> embedding_init;
};

struct TrainedModel {
  Seq2SeqParams params;
  Vocabulary vocab;
  std::vector<EpochRecord> log;
};

/// Supervised NLL training on input -> output. Throws TrainingDiverged on a
/// non-finite loss.
TrainedModel train_environment(std::span<const TextPair> corpus, const EnvTrainConfig& cfg,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

/// `epoch<TAB>train_nll<TAB>val_nll` per line.
void write_training_log(std::span<const EpochRecord> log, const std::filesystem::path& path);

}  // namespace rdg
