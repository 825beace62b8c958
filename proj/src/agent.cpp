#include "rdg/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "rdg/checkpoint.hpp"
#include "rdg/log.hpp"
#include "rdg/random.hpp"

namespace rdg {

std::optional<Utterance> Agent::condition(std::string_view target) const {
  const auto tokens = tokenize(target);
  if (tokens.empty() || tokens.size() > params.hyper().max_len) return std::nullopt;
  Utterance ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

void Agent::save(const std::filesystem::path& checkpoint,
                 const std::filesystem::path& vocab_file) const {
  save_checkpoint(params, checkpoint);
  vocab.save(vocab_file);
}

Agent Agent::load(const std::filesystem::path& checkpoint, const std::filesystem::path& vocab_file) {
  Agent agent{load_checkpoint(checkpoint), Vocabulary::load(vocab_file)};
  if (agent.params.hyper().vocab_size != agent.vocab.size())
    throw std::invalid_argument("agent checkpoint does not match its vocabulary");
  return agent;
}

std::vector<TextPair> build_reference_corpus(std::span<const std::string> posts, BlackBox& env) {
  if (posts.empty()) throw std::invalid_argument("no posts");
  std::vector<TextPair> pairs;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    const std::string post = normalize_text(posts[i]);
    if (post.empty()) {
      warn("skipping empty post at index " + std::to_string(i));
      continue;
    }
    std::string response = env.query(post);
    if (seen.emplace(response, post).second) pairs.push_back({std::move(response), post});
  }
  return pairs;
}

Agent make_agent(std::span<const TextPair> reference, Seq2SeqHyper hyper, std::size_t max_vocab,
                 std::uint64_t seed) {
  Vocabulary vocab = Vocabulary::build(reference, max_vocab);
  hyper.vocab_size = vocab.size();
  return Agent{init_params(hyper, seed), std::move(vocab)};
}

std::vector<EpochRecord> pretrain(Agent& agent, std::span<const TextPair> reference,
                                  const PretrainConfig& cfg,
                                  const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<DialoguePair> pairs;
  std::size_t dropped = 0;
  for (const auto& p : reference) {
    const auto src = agent.condition(p.input);
    const auto tgt = agent.condition(p.output);
    if (!src || !tgt) {
      ++dropped;
      continue;
    }
    pairs.push_back({*src, *tgt});
  }
  if (dropped) warn("pretrain: dropped " + std::to_string(dropped) + " over-long or empty pairs");
  if (pairs.empty()) throw std::invalid_argument("no usable reference pairs");
  auto [train, val] =
      split_train_val<DialoguePair>(pairs, cfg.val_fraction, derive_seed(cfg.seed, 0x5a11));
  SupervisedConfig sup{cfg.optimizer, cfg.epochs, derive_seed(cfg.seed, 0x9e7a)};
  return fit_supervised(agent.params, train, val, sup, on_epoch);
}

// ---------------------------------------------------------------------------

Baseline parse_baseline(std::string_view name) {
  if (name == "none") return Baseline::none;
  if (name == "batch_mean") return Baseline::batch_mean;
  throw std::invalid_argument("unknown baseline '" + std::string(name) + "'");
}

Estimator parse_estimator(std::string_view name) {
  if (name == "reinforce") return Estimator::reinforce;
  if (name == "pi_weighted") return Estimator::pi_weighted;
  throw std::invalid_argument("unknown estimator '" + std::string(name) + "'");
}

std::string_view to_string(Baseline b) { return b == Baseline::none ? "none" : "batch_mean"; }

std::string_view to_string(Estimator e) {
  return e == Estimator::reinforce ? "reinforce" : "pi_weighted";
}

OptimizerConfig RLConfig::default_optimizer() {
  OptimizerConfig o;
  o.algorithm = OptimizerAlgorithm::adam;
  o.learning_rate = 1e-3;
  o.clip_value = 5.0;
  o.dropout_rate = 0.0;
  return o;
}

void RLConfig::validate() const {
  if (samples < 1) throw std::invalid_argument("rl samples must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("rl batch_size must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("rl dropout outside [0, 1)");
  optimizer.validate();
  reward.validate();
}

std::vector<double> sample_coefficients(std::span<const double> rewards,
                                        std::span<const double> log_probs, Baseline baseline,
                                        Estimator estimator) {
  if (rewards.size() != log_probs.size())
    throw std::invalid_argument("rewards and log_probs differ in length");
  double b = 0.0;
  if (baseline == Baseline::batch_mean && !rewards.empty()) {
    // Equal rewards must cancel exactly, which the rounded mean does not guarantee.
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) {
      b = rewards[0];
    } else {
      for (double r : rewards) b += r;
      b /= static_cast<double>(rewards.size());
    }
  }
  std::vector<double> c(rewards.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    c[k] = rewards[k] - b;
    if (estimator == Estimator::pi_weighted) c[k] *= std::exp(log_probs[k]);
  }
  return c;
}

ReinforceTrainer::ReinforceTrainer(Agent& agent, RLConfig cfg)
    : agent_(agent), cfg_(std::move(cfg)), optimizer_((cfg_.validate(), cfg_.optimizer)) {}

RLStepStats ReinforceTrainer::step(std::span<const std::string> targets, BlackBox& env) {
  const std::size_t step_index = step_++;
  const std::size_t N = cfg_.samples;
  const std::uint64_t step_seed = derive_seed(cfg_.seed, step_index);

  std::vector<std::size_t> usable;
  std::vector<Utterance> conditions;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (auto c = agent_.condition(targets[j])) {
      usable.push_back(j);
      conditions.push_back(std::move(*c));
    } else {
      warn("rl: skipping unusable target '" + targets[j] + "'");
    }
  }
  RLStepStats stats;
  stats.step = step_index;
  if (usable.empty()) return stats;

  const std::size_t B = usable.size();
  std::vector<Hypothesis> samples(B * N);
  std::vector<double> rewards(B * N, 0.0);
  std::vector<char> answered(B * N, 0);
  const auto total = static_cast<std::int64_t>(B * N);
  const DecodeConfig sampling{DecodeMode::sample};
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t s = 0; s < total; ++s) {
    const auto i = static_cast<std::size_t>(s);
    const std::size_t b = i / N;
    samples[i] = generate(agent_.params, conditions[b], sampling,
                          derive_seed(step_seed, usable[b] * N + i % N))
                     .front();
    try {
      rewards[i] = reward(agent_.text(samples[i].tokens), targets[usable[b]], env, cfg_.reward);
      answered[i] = 1;
    } catch (const std::exception& e) {
      warn(std::string("rl: query failed: ") + e.what());
    }
  }

  double reward_sum = 0.0;
  std::vector<WeightedSequence> items;
  items.reserve(B * N);
  bool all_zero = true;
  const double scale = 1.0 / static_cast<double>(B * N);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> r(rewards.begin() + static_cast<std::ptrdiff_t>(b * N),
                          rewards.begin() + static_cast<std::ptrdiff_t>((b + 1) * N));
    std::vector<double> lp(N);
    for (std::size_t k = 0; k < N; ++k) lp[k] = samples[b * N + k].log_prob;
    const auto coef = sample_coefficients(r, lp, cfg_.baseline, cfg_.estimator);
    for (std::size_t k = 0; k < N; ++k) {
      reward_sum += r[k];
      if (coef[k] != 0.0) all_zero = false;
      items.push_back({conditions[b], samples[b * N + k].tokens, coef[k] * scale});
    }
  }
  for (char a : answered) stats.queries += static_cast<std::size_t>(a);
  stats.mean_reward = reward_sum / static_cast<double>(B * N);
  if (all_zero) return stats;

  auto grad = omp::weighted_log_prob_gradient(agent_.params, items, cfg_.dropout,
                                              derive_seed(step_seed, 0xd509));
  if (!grad.all_finite()) {
    warn("rl: non-finite gradient at step " + std::to_string(step_index) + ", update skipped");
    return stats;
  }
  optimizer_.apply(agent_.params, clip_gradients(std::move(grad), cfg_.optimizer.clip_value),
                   Direction::ascent);
  stats.updated = true;
  return stats;
}

std::vector<RLStepStats> rl_train(Agent& agent, std::span<const std::string> targets,
                                  BlackBox& env, const RLConfig& cfg,
                                  const std::function<void(const RLStepStats&)>& on_step) {
  if (targets.empty()) throw std::invalid_argument("no rl targets");
  ReinforceTrainer trainer(agent, cfg);
  std::vector<std::size_t> order(targets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<RLStepStats> log;
  std::vector<std::string> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0xe90c0000 + epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(targets[order[k]]);
      log.push_back(trainer.step(batch, env));
      if (on_step) on_step(log.back());
    }
  }
  return log;
}

void write_rl_log(std::span<const RLStepStats> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[96];
  for (const auto& s : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", s.step, s.mean_reward);
    out << buf;
  }
}

// ---------------------------------------------------------------------------

namespace {

AttackResult failed_result(std::string_view target, std::string_view strategy) {
  AttackResult r;
  r.target = std::string(target);
  r.strategy = std::string(strategy);
  r.failed = true;
  return r;
}

bool better(const std::optional<double>& a, const std::optional<double>& b) {
  if (!a) return false;
  if (!b) return true;
  return *a > *b;
}

}  // namespace

AttackResult craft_greedy(const Agent& agent, std::string_view target, BlackBox& env,
                          const RewardConfig& cfg) {
  const auto cond = agent.condition(target);
  if (!cond) return failed_result(target, "greedy");
  const auto best = generate(agent.params, *cond, DecodeConfig{}).front();
  AttackResult r;
  r.target = std::string(target);
  r.strategy = "greedy";
  r.crafted_input = agent.text(best.tokens);
  if (best.tokens.empty()) {
    r.failed = true;
    return r;
  }
  try {
    r.env_output = env.query(r.crafted_input);
    r.queries_used = 1;
    r.similarity = similarity(target, r.env_output, cfg);
  } catch (const std::invalid_argument& e) {
    warn(std::string("greedy: query rejected: ") + e.what());
    r.failed = true;
  }
  return r;
}

std::optional<CandidatePool> candidate_pool(const Agent& agent, std::string_view target,
                                            std::size_t beam_width, std::size_t n_candidates) {
  const auto cond = agent.condition(target);
  if (!cond) return std::nullopt;
  CandidatePool pool;
  pool.greedy = generate(agent.params, *cond, DecodeConfig{}).front();
  pool.beam = generate(agent.params, *cond,
                       DecodeConfig{DecodeMode::beam, std::max(beam_width, n_candidates),
                                    n_candidates});
  return pool;
}

AttackResult rerank_pool(const CandidatePool& pool, std::size_t n, const Agent& agent,
                         std::string_view target, BlackBox& env, const RewardConfig& cfg) {
  if (n < 1) throw std::invalid_argument("beam candidate count must be at least 1");
  AttackResult best;
  best.target = std::string(target);
  best.strategy = "beam" + std::to_string(n);
  best.failed = true;

  std::map<std::string, std::pair<std::string, std::optional<double>>> memo;
  double best_lp = -INFINITY;
  auto consider = [&](const Hypothesis& h) {
    if (h.tokens.empty()) return;
    const std::string text = agent.text(h.tokens);
    auto it = memo.find(text);
    if (it == memo.end()) {
      try {
        std::string out = env.query(text);
        auto sim = similarity(target, out, cfg);
        it = memo.emplace(text, std::make_pair(std::move(out), sim)).first;
        ++best.queries_used;
      } catch (const std::invalid_argument& e) {
        warn(std::string("beam: query rejected: ") + e.what());
        return;
      }
    }
    const auto& [out, sim] = it->second;
    bool take = best.failed || better(sim, best.similarity);
    if (!take && sim == best.similarity) {
      take = h.log_prob > best_lp || (h.log_prob == best_lp && text < best.crafted_input);
    }
    if (take) {
      best.failed = false;
      best.crafted_input = text;
      best.env_output = out;
      best.similarity = sim;
      best_lp = h.log_prob;
    }
  };
  consider(pool.greedy);
  for (std::size_t k = 0; k < std::min(n, pool.beam.size()); ++k) consider(pool.beam[k]);
  return best;
}

AttackResult craft_beam(const Agent& agent, std::string_view target, std::size_t n, BlackBox& env,
                        const RewardConfig& cfg, std::size_t beam_width) {
  if (n < 1) throw std::invalid_argument("beam candidate count must be at least 1");
  const auto pool = candidate_pool(agent, target, std::max(n, beam_width), n);
  if (!pool) return failed_result(target, "beam" + std::to_string(n));
  return rerank_pool(*pool, n, agent, target, env, cfg);
}

AttackResult craft_random_baseline(const Vocabulary& vocab, std::size_t max_len,
                                   std::string_view target, std::size_t budget, BlackBox& env,
                                   const RewardConfig& cfg, std::uint64_t seed) {
  if (budget < 1) throw std::invalid_argument("random budget must be at least 1");
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  if (vocab.size() <= ids::reserved) throw std::invalid_argument("vocabulary has no tokens");
  Rng rng(seed);
  const std::size_t n_tokens = vocab.size() - ids::reserved;
  AttackResult best;
  best.target = std::string(target);
  best.strategy = "random" + std::to_string(budget);
  best.failed = true;
  for (std::size_t q = 0; q < budget; ++q) {
    Utterance u(1 + rng.index(max_len));
    for (auto& t : u) t = static_cast<TokenId>(ids::reserved + rng.index(n_tokens));
    const std::string text = decode(u, vocab);
    std::string out = env.query(text);
    ++best.queries_used;
    auto sim = similarity(target, out, cfg);
    if (best.failed || better(sim, best.similarity)) {
      best.failed = false;
      best.crafted_input = text;
      best.env_output = std::move(out);
      best.similarity = sim;
    }
  }
  return best;
}

}  // namespace rdg
