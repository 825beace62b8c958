#pragma once

// The reverse dialogue generator: a seq2seq model from a target response to a
// candidate input, trained first on (response, post) pairs collected from the
// environment and then with REINFORCE against the similarity reward.
//
// Everything here reaches the environment through BlackBox only.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdg/black_box.hpp"
#include "rdg/optim.hpp"
#include "rdg/reward.hpp"
#include "rdg/seq_net.hpp"
#include "rdg/text.hpp"
#include "rdg/trainer.hpp"

namespace rdg {

struct Agent {
  Seq2SeqParams params;
  Vocabulary vocab;

  /// Encodes a target as the decoder condition. nullopt when the target has
  /// no tokens or more than max_len of them.
  std::optional<Utterance> condition(std::string_view target) const;
  std::string text(std::span<const TokenId> utterance) const { return decode(utterance, vocab); }

  void save(const std::filesystem::path& checkpoint, const std::filesystem::path& vocab_file) const;
  static Agent load(const std::filesystem::path& checkpoint,
                    const std::filesystem::path& vocab_file);
};

/// Pairs (response, post): `input` holds the environment's response to the
/// post, `output` the post itself. Empty posts are skipped with a warning and
/// exact duplicate pairs are kept once, in first-seen order.
std::vector<TextPair> build_reference_corpus(std::span<const std::string> posts, BlackBox& env);

/// Fresh agent whose vocabulary is built from both sides of the reference
/// corpus. hyper.vocab_size is replaced by the vocabulary size.
Agent make_agent(std::span<const TextPair> reference, Seq2SeqHyper hyper, std::size_t max_vocab,
                 std::uint64_t seed);

struct PretrainConfig {
  OptimizerConfig optimizer;
  std::size_t epochs = 10;
  double val_fraction = 0.05;
  std::uint64_t seed = 1;
};

/// Supervised response -> post training. Pairs longer than max_len on either
/// side are dropped with a warning.
std::vector<EpochRecord> pretrain(Agent& agent, std::span<const TextPair> reference,
                                  const PretrainConfig& cfg,
                                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Policy-gradient fine-tuning

enum class Baseline { none, batch_mean };
enum class Estimator { reinforce, pi_weighted };

Baseline parse_baseline(std::string_view name);
Estimator parse_estimator(std::string_view name);
std::string_view to_string(Baseline b);
std::string_view to_string(Estimator e);

struct RLConfig {
  std::size_t samples = 8;      // N sampled inputs per target
  std::size_t batch_size = 16;  // targets per update
  std::size_t epochs = 1;
  RewardConfig reward;
  OptimizerConfig optimizer = default_optimizer();
  Baseline baseline = Baseline::none;
  Estimator estimator = Estimator::reinforce;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  static OptimizerConfig default_optimizer();
  void validate() const;
};

/// Per-sample coefficients c_k of one target's estimate
///   g = (1/N) sum_k c_k grad log pi(I_k | O*).
/// reinforce: c_k = R_k - b. pi_weighted: c_k = (R_k - b) pi(I_k | O*).
/// b is 0 for Baseline::none and the mean of `rewards` for batch_mean.
std::vector<double> sample_coefficients(std::span<const double> rewards,
                                        std::span<const double> log_probs, Baseline baseline,
                                        Estimator estimator);

struct RLStepStats {
  std::size_t step = 0;
  double mean_reward = 0.0;
  std::size_t queries = 0;
  bool updated = false;
};

/// Holds the optimizer state across updates of one agent.
class ReinforceTrainer {
 public:
  ReinforceTrainer(Agent& agent, RLConfig cfg);

  /// Samples N inputs per target, scores each with one query, and takes one
  /// clipped ascent step. Targets the agent cannot condition on are skipped
  /// with a warning. The update is skipped when every coefficient is zero or
  /// the gradient is not finite.
  RLStepStats step(std::span<const std::string> targets, BlackBox& env);

  std::size_t steps() const { return step_; }

 private:
  Agent& agent_;
  RLConfig cfg_;
  Optimizer optimizer_;
  std::size_t step_ = 0;
};

/// `cfg.epochs` passes over shuffled targets in batches of cfg.batch_size.
std::vector<RLStepStats> rl_train(Agent& agent, std::span<const std::string> targets,
                                  BlackBox& env, const RLConfig& cfg,
                                  const std::function<void(const RLStepStats&)>& on_step = {});

/// `step<TAB>mean_reward` per line.
void write_rl_log(std::span<const RLStepStats> log, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Crafting

struct AttackResult {
  std::string target;
  std::string crafted_input;
  std::string env_output;
  std::optional<double> similarity;  // raw, unclamped
  std::size_t queries_used = 0;
  std::string strategy;
  bool failed = false;
};

/// Greedy decode of the agent, scored with one query.
AttackResult craft_greedy(const Agent& agent, std::string_view target, BlackBox& env,
                          const RewardConfig& cfg);

/// The greedy decode plus the best `n_candidates` hypotheses of one beam run.
struct CandidatePool {
  Hypothesis greedy;
  std::vector<Hypothesis> beam;  // best first
};

/// nullopt when the target cannot be used as a condition.
std::optional<CandidatePool> candidate_pool(const Agent& agent, std::string_view target,
                                            std::size_t beam_width, std::size_t n_candidates);

/// Queries the greedy candidate and the first `n` beam candidates (each
/// distinct text once) and keeps the most similar. Ties go to the higher
/// log-probability, then to the smaller text.
AttackResult rerank_pool(const CandidatePool& pool, std::size_t n, const Agent& agent,
                         std::string_view target, BlackBox& env, const RewardConfig& cfg);

/// candidate_pool + rerank_pool with beam width max(n, beam_width).
AttackResult craft_beam(const Agent& agent, std::string_view target, std::size_t n, BlackBox& env,
                        const RewardConfig& cfg, std::size_t beam_width = 0);

/// `budget` uniformly random utterances (length uniform in 1..max_len, tokens
/// uniform over the non-reserved vocabulary); keeps the most similar, first
/// drawn on ties.
AttackResult craft_random_baseline(const Vocabulary& vocab, std::size_t max_len,
                                   std::string_view target, std::size_t budget, BlackBox& env,
                                   const RewardConfig& cfg, std::uint64_t seed);

}  // namespace rdg
