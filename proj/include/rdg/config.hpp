#pragma once

// Experiment configuration: a sectioned key=value file
//
//   # comment
//   [section]
//   key = value          # strings may be "quoted"
//
// Every key has a default; unknown sections or keys and out-of-range values
// are rejected by parse/validate before any work starts.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rdg/agent.hpp"
#include "rdg/eval.hpp"
#include "rdg/optim.hpp"
#include "rdg/seq_net.hpp"

namespace rdg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;

  struct Corpus {
    std::size_t pairs = 2000;
    std::size_t posts = 2000;   // reference-corpus posts
    std::size_t probes = 1000;  // generated-target probes
    double noise_rate = 0.0;
    std::uint64_t grammar_seed = 7;
  } corpus;

  struct Model {
    Seq2SeqHyper hyper;
    std::size_t max_vocab = 30000;
    OptimizerConfig optimizer;
    std::size_t epochs = 15;
    double val_fraction = 0.05;
  };
  Model env = default_env();
  Model agent = default_agent();
  std::string env_embedding_init;  // empty: random initialization

  struct Reward {
    std::string embeddings;  // empty: built-in toy-grammar vectors
    std::string stopwords;   // empty: built-in list
    double clamp = 0.5;
    std::size_t toy_dim = 32;
  } reward;

  struct RL {
    std::size_t samples = 8;
    std::size_t batch_size = 16;
    std::size_t epochs = 2;
    std::size_t max_targets = 0;  // 0: every distinct reference response
    OptimizerConfig optimizer = RLConfig::default_optimizer();
    Baseline baseline = Baseline::none;
    Estimator estimator = Estimator::reinforce;
    double dropout = 0.0;
  } rl;

  struct Decode {
    std::size_t beam_width = 0;  // 0: the largest candidate count
    std::vector<std::size_t> candidates{50, 200};
  } decode;

  struct Eval {
    BucketSpec buckets;
    double grid_step = 0.05;
    std::vector<std::string> strategies{"pretrained_greedy", "rl_greedy", "rl_beam", "random"};
    std::size_t random_budget = 0;  // 0: largest candidate count + 1
    bool real_targets = true;
    std::size_t jobs = 0;
  } eval;

  static Model default_env();
  static Model default_agent();

  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Sets one key from its textual value; throws ConfigError for unknown keys
  /// or malformed values.
  void set(std::string_view section, std::string_view key, std::string_view value);

  /// Range checks plus existence of referenced files.
  void validate() const;

  /// Every key with its effective value, in a fixed order; parse(dump())
  /// reproduces the configuration.
  std::string dump() const;

  /// Expanded strategy list ("rl_beam" and "random" take their parameters
  /// from the decode and eval sections).
  std::vector<Strategy> strategies() const;
  std::vector<double> grid() const;
};

}  // namespace rdg
