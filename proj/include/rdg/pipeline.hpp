#pragma once

// The seven pipeline stages behind the command-line tool. Every stage reads
// and writes fixed file names inside one working directory and returns the
// number of environment queries it spent.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "rdg/agent.hpp"
#include "rdg/config.hpp"
#include "rdg/eval.hpp"

namespace rdg::pipeline {

namespace files {
inline constexpr const char* corpus = "corpus.tsv";
inline constexpr const char* posts = "posts.txt";
inline constexpr const char* probes = "probes.txt";
inline constexpr const char* env_checkpoint = "env.ckpt";
inline constexpr const char* env_vocab = "env.vocab";
inline constexpr const char* env_log = "env_log.tsv";
inline constexpr const char* reference = "refcorpus.tsv";
inline constexpr const char* pretrained_checkpoint = "agent_pretrained.ckpt";
inline constexpr const char* pretrained_vocab = "agent_pretrained.vocab";
inline constexpr const char* pretrain_log = "pretrain_log.tsv";
inline constexpr const char* rl_checkpoint = "agent_rl.ckpt";
inline constexpr const char* rl_vocab = "agent_rl.vocab";
inline constexpr const char* rl_log = "rl_log.tsv";
}  // namespace files

struct Context {
  ExperimentConfig config;
  std::filesystem::path workdir;
  std::string config_file_text;  // verbatim, for the report
  std::ostream* log = nullptr;   // progress lines; null for silence
};

ToyGrammarSpec grammar_spec(const ExperimentConfig& cfg);
RewardConfig reward_config(const ExperimentConfig& cfg);

std::uint64_t gen_corpus(const Context& ctx);
std::uint64_t train_env(const Context& ctx);
std::uint64_t build_refcorpus(const Context& ctx);
std::uint64_t pretrain(const Context& ctx);
std::uint64_t rl_train(const Context& ctx);

struct AttackOutcome {
  AttackResult result;
  std::uint64_t queries = 0;
};
/// `strategy` as in the eval section ("rl_greedy", "rl_beam(50)", ...).
AttackOutcome attack(const Context& ctx, std::string_view target, std::string_view strategy);

/// Everything an evaluation sweep runs on. Building the generated target list
/// queries the environment once per probe; the counter is not reset.
struct EvalSetup {
  std::unique_ptr<BlackBox> env;
  Agent pretrained;
  Agent rl;
  RewardConfig reward;
  std::vector<Strategy> strategies;
  TargetList generated;
  std::optional<TargetList> real;
  EvalOptions options;
};
EvalSetup prepare_evaluation(const Context& ctx);

/// Writes report.json and curves.csv into the working directory.
std::uint64_t evaluate(const Context& ctx);

/// All stages in order.
std::uint64_t run_all(const Context& ctx);

}  // namespace rdg::pipeline
