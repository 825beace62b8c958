#include "rdg/eval.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include <omp.h>

#include "json.hpp"
#include "rdg/log.hpp"
#include "rdg/random.hpp"

namespace rdg {

void BucketSpec::validate() const {
  if (ranges.empty()) throw std::invalid_argument("no length buckets");
  if (per_bucket < 1) throw std::invalid_argument("per_bucket must be at least 1");
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i].lo < 1 || ranges[i].lo > ranges[i].hi)
      throw std::invalid_argument("bad bucket range " + ranges[i].label());
    if (i && ranges[i].lo <= ranges[i - 1].hi)
      throw std::invalid_argument("bucket ranges must be ascending and disjoint");
  }
}

std::string_view to_string(TargetKind kind) {
  return kind == TargetKind::generated ? "generated" : "real";
}

namespace {

// Candidates are (text, inputs) in first-seen order.
TargetList bucket_and_sample(TargetKind kind,
                             std::vector<std::pair<std::string, std::vector<std::string>>> items,
                             const BucketSpec& spec, std::uint64_t seed) {
  spec.validate();
  TargetList list;
  list.kind = kind;
  list.buckets = spec.ranges;
  std::vector<std::vector<std::size_t>> members(spec.ranges.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::size_t n = tokenize(items[i].first).size();
    for (std::size_t b = 0; b < spec.ranges.size(); ++b)
      if (spec.ranges[b].contains(n)) members[b].push_back(i);
  }
  for (std::size_t b = 0; b < members.size(); ++b) {
    Rng rng(derive_seed(seed, b));
    rng.shuffle(std::span<std::size_t>(members[b]));
    const std::size_t take = std::min(spec.per_bucket, members[b].size());
    if (take < spec.per_bucket)
      warn(std::string(to_string(kind)) + " bucket " + spec.ranges[b].label() + " has only " +
           std::to_string(take) + " of " + std::to_string(spec.per_bucket) + " targets");
    for (std::size_t k = 0; k < take; ++k) {
      auto& item = items[members[b][k]];
      list.targets.push_back({item.first, b, std::move(item.second)});
    }
  }
  return list;
}

}  // namespace

TargetList build_generated_targets(BlackBox& env, std::span<const std::string> probes,
                                   const BucketSpec& spec, std::uint64_t seed) {
  std::vector<std::pair<std::string, std::vector<std::string>>> items;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& probe : probes) {
    const std::string input = normalize_text(probe);
    if (input.empty()) {
      warn("skipping empty probe");
      continue;
    }
    std::string response = env.query(input);
    if (seen.emplace(response, items.size()).second)
      items.push_back({std::move(response), {input}});
  }
  return bucket_and_sample(TargetKind::generated, std::move(items), spec, seed);
}

TargetList build_real_targets(std::span<const TextPair> corpus, const BucketSpec& spec,
                              std::uint64_t seed) {
  std::vector<std::pair<std::string, std::vector<std::string>>> items;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& pair : corpus) {
    const std::string out = normalize_text(pair.output);
    const auto [it, fresh] = index.emplace(out, items.size());
    if (fresh) items.push_back({out, {}});
    auto& inputs = items[it->second].second;
    const std::string in = normalize_text(pair.input);
    if (std::find(inputs.begin(), inputs.end(), in) == inputs.end()) inputs.push_back(in);
  }
  return bucket_and_sample(TargetKind::real, std::move(items), spec, seed);
}

// ---------------------------------------------------------------------------

Strategy Strategy::parse(std::string_view text) {
  auto with_param = [&](std::string_view prefix, Kind kind) -> std::optional<Strategy> {
    if (text.size() < prefix.size() + 3 || text.substr(0, prefix.size()) != prefix ||
        text[prefix.size()] != '(' || text.back() != ')')
      return std::nullopt;
    const auto digits = text.substr(prefix.size() + 1, text.size() - prefix.size() - 2);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || value < 1)
      throw std::invalid_argument("bad strategy parameter in '" + std::string(text) + "'");
    return Strategy{kind, value};
  };
  if (text == "pretrained_greedy") return {Kind::pretrained_greedy, 0};
  if (text == "rl_greedy") return {Kind::rl_greedy, 0};
  if (auto s = with_param("rl_beam", Kind::rl_beam)) return *s;
  if (auto s = with_param("random", Kind::random)) return *s;
  throw std::invalid_argument("unknown strategy '" + std::string(text) + "'");
}

std::string Strategy::name() const {
  switch (kind) {
    case Kind::pretrained_greedy: return "pretrained_greedy";
    case Kind::rl_greedy: return "rl_greedy";
    case Kind::rl_beam: return "rl_beam(" + std::to_string(param) + ")";
    case Kind::random: return "random(" + std::to_string(param) + ")";
  }
  return {};
}

std::vector<StrategyRun> evaluate(std::span<const Strategy> strategies, const TargetList& targets,
                                  const EvalAgents& agents, BlackBox& env,
                                  const RewardConfig& reward_cfg, const EvalOptions& options) {
  if (strategies.empty()) throw std::invalid_argument("no strategies to evaluate");
  reward_cfg.validate();
  std::size_t max_n = 0;
  for (const auto& s : strategies) {
    const bool needs_rl = s.kind != Strategy::Kind::pretrained_greedy;
    if (needs_rl && !agents.rl) throw std::invalid_argument(s.name() + " needs the RL agent");
    if (!needs_rl && !agents.pretrained)
      throw std::invalid_argument(s.name() + " needs the pretrained agent");
    if (s.kind == Strategy::Kind::rl_beam) max_n = std::max(max_n, s.param);
  }
  const std::size_t width = std::max(options.beam_width, max_n);

  std::vector<StrategyRun> runs;
  for (const auto& s : strategies)
    runs.push_back({s.name(), std::vector<AttackResult>(targets.targets.size())});

  const auto n = static_cast<std::int64_t>(targets.targets.size());
  const int threads = options.jobs ? static_cast<int>(options.jobs) : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::int64_t ti = 0; ti < n; ++ti) {
    const auto t = static_cast<std::size_t>(ti);
    const std::string& text = targets.targets[t].text;
    std::optional<CandidatePool> pool;
    bool pool_built = false;
    for (std::size_t si = 0; si < strategies.size(); ++si) {
      const Strategy& s = strategies[si];
      AttackResult r;
      try {
        switch (s.kind) {
          case Strategy::Kind::pretrained_greedy:
            r = craft_greedy(*agents.pretrained, text, env, reward_cfg);
            break;
          case Strategy::Kind::rl_greedy:
            r = craft_greedy(*agents.rl, text, env, reward_cfg);
            break;
          case Strategy::Kind::rl_beam:
            if (!pool_built) {
              pool = candidate_pool(*agents.rl, text, width, max_n);
              pool_built = true;
            }
            if (pool) {
              r = rerank_pool(*pool, s.param, *agents.rl, text, env, reward_cfg);
            } else {
              r.target = text;
              r.failed = true;
            }
            break;
          case Strategy::Kind::random:
            r = craft_random_baseline(agents.rl->vocab, agents.rl->params.hyper().max_len, text,
                                      s.param, env, reward_cfg, derive_seed(options.seed, t));
            break;
        }
      } catch (const std::exception& e) {
        warn("target " + std::to_string(t) + " (" + s.name() + "): " + e.what());
        r = AttackResult{};
        r.target = text;
        r.failed = true;
      }
      r.strategy = s.name();
      runs[si].results[t] = std::move(r);
    }
  }
  return runs;
}

StrategyRun real_input_baseline(const TargetList& targets, BlackBox& env,
                                const RewardConfig& reward_cfg) {
  StrategyRun run{"real_input", {}};
  for (const auto& target : targets.targets) {
    if (target.inputs.empty()) {
      warn("target '" + target.text + "' has no real input; skipped");
      continue;
    }
    AttackResult r;
    r.target = target.text;
    r.strategy = "real_input";
    double sum = 0.0;
    bool any = false;
    for (std::size_t k = 0; k < target.inputs.size(); ++k) {
      const std::string out = env.query(target.inputs[k]);
      ++r.queries_used;
      const auto sim = similarity(target.text, out, reward_cfg);
      if (k == 0) {
        r.crafted_input = target.inputs[k];
        r.env_output = out;
      }
      if (sim) {
        sum += *sim;
        any = true;
      }
    }
    if (any) r.similarity = sum / static_cast<double>(target.inputs.size());
    run.results.push_back(std::move(r));
  }
  return run;
}

// ---------------------------------------------------------------------------

double success_rate(std::span<const AttackResult> results, double threshold) {
  if (results.empty()) throw std::invalid_argument("no results");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("threshold outside [0, 1]");
  std::size_t hits = 0;
  for (const auto& r : results)
    if (r.similarity && *r.similarity >= threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

bool SuccessCurve::non_increasing() const {
  for (std::size_t i = 1; i < rates.size(); ++i)
    if (rates[i] > rates[i - 1]) return false;
  return true;
}

SuccessCurve success_curve(std::span<const AttackResult> results, std::span<const double> grid) {
  if (!std::is_sorted(grid.begin(), grid.end()))
    throw std::invalid_argument("threshold grid must be ascending");
  SuccessCurve curve;
  curve.thresholds.assign(grid.begin(), grid.end());
  for (double t : grid) curve.rates.push_back(success_rate(results, t));
  return curve;
}

double avg_similarity(std::span<const AttackResult> results) {
  if (results.empty()) throw std::invalid_argument("no results");
  double sum = 0.0;
  for (const auto& r : results) sum += r.similarity.value_or(0.0);
  return sum / static_cast<double>(results.size());
}

std::vector<double> default_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 20; ++k) grid.push_back(k / 20.0);
  return grid;
}

// ---------------------------------------------------------------------------

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void emit_report(const ReportInput& input, const std::filesystem::path& dir) {
  bool any_run = false;
  for (const auto& section : input.sections) any_run = any_run || !section.runs.empty();
  if (!any_run) throw std::invalid_argument("report has no strategies");
  if (input.grid.empty()) throw std::invalid_argument("report has an empty threshold grid");

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  using nlohmann::json;
  json report;
  report["config"] = input.config_text;
  report["config_file"] = input.config_file_text;
  report["grid"] = input.grid;
  json curves = json::object(), avg = json::object(), queries = json::object(),
       counts = json::object(), records = json::array();
  std::string csv = "threshold,strategy,bucket,success_rate\n";

  for (const auto& section : input.sections) {
    const TargetList& list = *section.targets;
    for (const auto& run : section.runs) {
      const std::string& name = run.name;
      // Results of one run are aligned with list.targets unless some targets
      // were skipped; match them by target text in order.
      std::vector<std::vector<AttackResult>> by_bucket(list.buckets.size());
      std::size_t cursor = 0;
      for (const auto& r : run.results) {
        while (cursor < list.targets.size() && list.targets[cursor].text != r.target) ++cursor;
        if (cursor == list.targets.size())
          throw std::invalid_argument("result target not in its target list");
        const std::size_t b = list.targets[cursor].bucket;
        by_bucket[b].push_back(r);
        json rec;
        rec["strategy"] = name;
        rec["bucket"] = list.bucket_label(b);
        rec["target"] = r.target;
        rec["crafted_input"] = r.crafted_input;
        rec["env_output"] = r.env_output;
        rec["similarity"] = r.similarity ? json(*r.similarity) : json(nullptr);
        rec["queries_used"] = r.queries_used;
        rec["failed"] = r.failed;
        records.push_back(std::move(rec));
        queries[name] = queries.value(name, std::size_t{0}) + r.queries_used;
        ++cursor;
      }
      for (std::size_t b = 0; b < list.buckets.size(); ++b) {
        const std::string label = list.bucket_label(b);
        counts[name][label] = by_bucket[b].size();
        if (by_bucket[b].empty()) {
          curves[name][label] = json(nullptr);
          avg[name][label] = json(nullptr);
          for (double t : input.grid) csv += shortest(t) + "," + name + "," + label + ",\n";
          continue;
        }
        const auto curve = success_curve(by_bucket[b], input.grid);
        curves[name][label] = curve.rates;
        avg[name][label] = avg_similarity(by_bucket[b]);
        for (std::size_t i = 0; i < input.grid.size(); ++i)
          csv += shortest(input.grid[i]) + "," + name + "," + label + "," +
                 shortest(curve.rates[i]) + "\n";
      }
    }
  }
  report["curves"] = std::move(curves);
  report["tables"]["avg_similarity"] = std::move(avg);
  report["tables"]["target_count"] = std::move(counts);
  report["tables"]["queries"] = std::move(queries);
  report["records"] = std::move(records);

  auto write = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
  };
  write(dir / "report.json", report.dump(2) + "\n");
  write(dir / "curves.csv", csv);
}

}  // namespace rdg
