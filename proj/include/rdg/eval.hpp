#pragma once

// Target lists, attack sweeps and the success-rate / similarity report.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdg/agent.hpp"
#include "rdg/black_box.hpp"
#include "rdg/reward.hpp"
#include "rdg/text.hpp"

namespace rdg {

struct LengthRange {
  std::size_t lo = 1, hi = 3;  // inclusive token counts
  std::string label() const { return std::to_string(lo) + "-" + std::to_string(hi); }
  bool contains(std::size_t n) const { return n >= lo && n <= hi; }
};

struct BucketSpec {
  std::vector<LengthRange> ranges{{1, 3}, {4, 6}, {7, 10}};
  std::size_t per_bucket = 50;
  void validate() const;
};

enum class TargetKind { generated, real };
std::string_view to_string(TargetKind kind);

struct Target {
  std::string text;
  std::size_t bucket = 0;
  /// Generated: the probe that produced the target. Real: every corpus input
  /// paired with it.
  std::vector<std::string> inputs;
};

struct TargetList {
  TargetKind kind = TargetKind::generated;
  std::vector<LengthRange> buckets;
  std::vector<Target> targets;  // grouped by bucket, sampled order within

  std::string bucket_label(std::size_t b) const {
    return std::string(to_string(kind)) + ":" + buckets.at(b).label();
  }
};

/// Queries every probe once, keeps each distinct response with the first probe
/// that produced it, buckets by token count and samples up to per_bucket
/// targets per bucket without replacement. Underfilled buckets are kept
/// smaller with a warning.
TargetList build_generated_targets(BlackBox& env, std::span<const std::string> probes,
                                   const BucketSpec& spec, std::uint64_t seed);

/// Distinct corpus outputs with all of their corpus inputs attached.
TargetList build_real_targets(std::span<const TextPair> corpus, const BucketSpec& spec,
                              std::uint64_t seed);

// ---------------------------------------------------------------------------

struct Strategy {
  enum class Kind { pretrained_greedy, rl_greedy, rl_beam, random } kind = Kind::rl_greedy;
  std::size_t param = 0;  // N for rl_beam, budget for random

  /// "pretrained_greedy", "rl_greedy", "rl_beam(N)" or "random(B)".
  static Strategy parse(std::string_view text);
  std::string name() const;
  bool operator==(const Strategy&) const = default;
};

struct EvalAgents {
  const Agent* pretrained = nullptr;
  const Agent* rl = nullptr;
};

struct EvalOptions {
  std::size_t jobs = 0;        // 0: OpenMP default
  std::size_t beam_width = 0;  // 0: the largest rl_beam N of the sweep
  std::uint64_t seed = 1;      // random baseline
};

struct StrategyRun {
  std::string name;
  std::vector<AttackResult> results;  // aligned with TargetList::targets
};

/// Runs every strategy on every target. All rl_beam strategies rerank prefixes
/// of one beam run per target, so their candidate pools are nested. A failure
/// on one target is recorded in its result and does not stop the sweep. The
/// environment counter moves by the sum of queries_used over all results.
std::vector<StrategyRun> evaluate(std::span<const Strategy> strategies, const TargetList& targets,
                                  const EvalAgents& agents, BlackBox& env,
                                  const RewardConfig& reward_cfg, const EvalOptions& options = {});

/// One result per target that carries inputs: the mean similarity over its
/// real inputs (undefined ones count as 0; undefined only when all are),
/// with the first input and its response as the record. Targets without
/// inputs are skipped with a warning.
StrategyRun real_input_baseline(const TargetList& targets, BlackBox& env,
                                const RewardConfig& reward_cfg);

// ---------------------------------------------------------------------------

/// Fraction of results whose similarity is defined and >= threshold.
double success_rate(std::span<const AttackResult> results, double threshold);

struct SuccessCurve {
  std::vector<double> thresholds;
  std::vector<double> rates;
  bool non_increasing() const;
};

SuccessCurve success_curve(std::span<const AttackResult> results, std::span<const double> grid);

/// Mean similarity with undefined similarities counted as 0.
double avg_similarity(std::span<const AttackResult> results);

/// 0, 0.05, ..., 1.
std::vector<double> default_grid();

// ---------------------------------------------------------------------------

struct ReportSection {
  const TargetList* targets = nullptr;
  std::vector<StrategyRun> runs;
};

struct ReportInput {
  std::string config_text;       // effective configuration, embedded verbatim
  std::string config_file_text;  // the configuration file as given; may be empty
  std::vector<double> grid;
  std::vector<ReportSection> sections;
};

/// Writes `report.json` and `curves.csv` into `dir` (created if missing).
/// Output bytes depend only on the input.
void emit_report(const ReportInput& input, const std::filesystem::path& dir);

}  // namespace rdg
