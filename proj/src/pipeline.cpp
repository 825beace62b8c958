#include "rdg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <memory>
#include <ostream>
#include <unordered_set>

#include "rdg/checkpoint.hpp"
#include "rdg/environment.hpp"
#include "rdg/eval.hpp"
#include "rdg/random.hpp"

namespace rdg::pipeline {

namespace {

// Seed streams per stage.
enum Stream : std::uint64_t {
  kPosts = 1,
  kProbes = 2,
  kEnvTrain = 3,
  kAgentInit = 4,
  kPretrain = 5,
  kRl = 6,
  kTargets = 7,
  kRandomBaseline = 8,
  kRlTargets = 9,
  kToyEmbeddings = 10,
  kRealTargets = 11,
};

std::filesystem::path at(const Context& ctx, const char* name) { return ctx.workdir / name; }

void say(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << std::endl;
}

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

PretrainConfig pretrain_config(const ExperimentConfig& cfg) {
  return {cfg.agent.optimizer, cfg.agent.epochs, cfg.agent.val_fraction,
          derive_seed(cfg.seed, kPretrain)};
}

}  // namespace

ToyGrammarSpec grammar_spec(const ExperimentConfig& cfg) {
  auto spec = ToyGrammarSpec::default_spec();
  spec.seed = cfg.corpus.grammar_seed;
  spec.noise_rate = cfg.corpus.noise_rate;
  return spec;
}

RewardConfig reward_config(const ExperimentConfig& cfg) {
  RewardConfig r;
  if (cfg.reward.embeddings.empty()) {
    auto spec = ToyGrammarSpec::default_spec();
    spec.seed = cfg.corpus.grammar_seed;
    r.embeddings = std::make_shared<EmbeddingTable>(
        make_toy_embeddings(spec, cfg.reward.toy_dim, derive_seed(cfg.seed, kToyEmbeddings)));
  } else {
    r.embeddings = std::make_shared<EmbeddingTable>(load_embeddings(cfg.reward.embeddings));
  }
  r.stopwords = std::make_shared<StopwordList>(cfg.reward.stopwords.empty()
                                                   ? StopwordList::default_list()
                                                   : StopwordList::load(cfg.reward.stopwords));
  r.clamp_threshold = cfg.reward.clamp;
  r.validate();
  return r;
}

std::uint64_t gen_corpus(const Context& ctx) {
  const auto& cfg = ctx.config;
  std::filesystem::create_directories(ctx.workdir);
  const auto spec = grammar_spec(cfg);
  const auto corpus = generate_toy_corpus(spec, cfg.corpus.pairs);
  save_corpus(corpus, at(ctx, files::corpus));

  // Probes are disjoint from the reference posts; both may overlap the
  // environment's training inputs.
  const auto posts = generate_posts(spec, cfg.corpus.posts, kPosts);
  const std::unordered_set<std::string> used(posts.begin(), posts.end());
  const auto probes = generate_posts(spec, cfg.corpus.probes, kProbes, used);
  save_lines(posts, at(ctx, files::posts));
  save_lines(probes, at(ctx, files::probes));
  say(ctx, "pairs: " + std::to_string(corpus.size()) + "  posts: " + std::to_string(posts.size()) +
               "  probes: " + std::to_string(probes.size()));
  return 0;
}

std::uint64_t train_env(const Context& ctx) {
  const auto& cfg = ctx.config;
  const auto corpus = load_corpus(at(ctx, files::corpus));
  EnvTrainConfig ecfg;
  ecfg.hyper = cfg.env.hyper;
  ecfg.max_vocab = cfg.env.max_vocab;
  ecfg.optimizer = cfg.env.optimizer;
  ecfg.epochs = cfg.env.epochs;
  ecfg.val_fraction = cfg.env.val_fraction;
  ecfg.seed = derive_seed(cfg.seed, kEnvTrain);
  if (!cfg.env_embedding_init.empty()) ecfg.embedding_init = cfg.env_embedding_init;
  auto model = train_environment(corpus, ecfg, [&](const EpochRecord& r) {
    say(ctx, "env epoch " + std::to_string(r.epoch) + "  train " + fixed(r.train_nll) + "  val " +
                 fixed(r.val_nll) + "  lr " + fixed(r.learning_rate, 6));
  });
  save_checkpoint(model.params, at(ctx, files::env_checkpoint));
  model.vocab.save(at(ctx, files::env_vocab));
  write_training_log(model.log, at(ctx, files::env_log));
  return 0;
}

std::uint64_t build_refcorpus(const Context& ctx) {
  auto env = Environment::load(at(ctx, files::env_checkpoint), at(ctx, files::env_vocab));
  const auto posts = load_lines(at(ctx, files::posts));
  const auto before = env.query_count();
  const auto ref = build_reference_corpus(posts, env);
  save_corpus(ref, at(ctx, files::reference), "direction=output,input");
  say(ctx, "reference pairs: " + std::to_string(ref.size()));
  return env.query_count() - before;
}

std::uint64_t pretrain(const Context& ctx) {
  const auto& cfg = ctx.config;
  const auto ref = load_corpus(at(ctx, files::reference));
  auto agent = make_agent(ref, cfg.agent.hyper, cfg.agent.max_vocab, derive_seed(cfg.seed, kAgentInit));
  const auto log = rdg::pretrain(agent, ref, pretrain_config(cfg), [&](const EpochRecord& r) {
    say(ctx, "pretrain epoch " + std::to_string(r.epoch) + "  train " + fixed(r.train_nll) +
                 "  val " + fixed(r.val_nll) + "  lr " + fixed(r.learning_rate, 6));
  });
  agent.save(at(ctx, files::pretrained_checkpoint), at(ctx, files::pretrained_vocab));
  write_training_log(log, at(ctx, files::pretrain_log));
  return 0;
}

std::uint64_t rl_train(const Context& ctx) {
  const auto& cfg = ctx.config;
  auto env = Environment::load(at(ctx, files::env_checkpoint), at(ctx, files::env_vocab));
  auto agent = Agent::load(at(ctx, files::pretrained_checkpoint), at(ctx, files::pretrained_vocab));
  const auto ref = load_corpus(at(ctx, files::reference));

  std::vector<std::string> targets;
  std::unordered_set<std::string> seen;
  for (const auto& p : ref)
    if (seen.insert(p.input).second) targets.push_back(p.input);
  if (cfg.rl.max_targets && targets.size() > cfg.rl.max_targets) {
    Rng rng(derive_seed(cfg.seed, kRlTargets));
    rng.shuffle(std::span<std::string>(targets));
    targets.resize(cfg.rl.max_targets);
  }

  RLConfig rcfg;
  rcfg.samples = cfg.rl.samples;
  rcfg.batch_size = cfg.rl.batch_size;
  rcfg.epochs = cfg.rl.epochs;
  rcfg.reward = reward_config(cfg);
  rcfg.optimizer = cfg.rl.optimizer;
  rcfg.baseline = cfg.rl.baseline;
  rcfg.estimator = cfg.rl.estimator;
  rcfg.dropout = cfg.rl.dropout;
  rcfg.seed = derive_seed(cfg.seed, kRl);

  const auto before = env.query_count();
  double window = 0.0;
  std::size_t in_window = 0;
  const auto log = rdg::rl_train(agent, targets, env, rcfg, [&](const RLStepStats& s) {
    window += s.mean_reward;
    if (++in_window == 10) {
      say(ctx, "rl step " + std::to_string(s.step + 1) + "  mean reward (last 10) " +
                   fixed(window / 10.0));
      window = 0.0;
      in_window = 0;
    }
  });
  agent.save(at(ctx, files::rl_checkpoint), at(ctx, files::rl_vocab));
  write_rl_log(log, at(ctx, files::rl_log));
  return env.query_count() - before;
}

AttackOutcome attack(const Context& ctx, std::string_view target, std::string_view strategy_text) {
  const auto& cfg = ctx.config;
  // Bare "rl_beam" and "random" take the largest candidate count and the
  // configured budget.
  Strategy strategy;
  std::size_t max_n = 0;
  for (auto n : cfg.decode.candidates) max_n = std::max(max_n, n);
  if (strategy_text == "rl_beam")
    strategy = {Strategy::Kind::rl_beam, max_n};
  else if (strategy_text == "random")
    strategy = {Strategy::Kind::random, cfg.eval.random_budget ? cfg.eval.random_budget : max_n + 1};
  else
    strategy = Strategy::parse(strategy_text);
  auto env = Environment::load(at(ctx, files::env_checkpoint), at(ctx, files::env_vocab));
  const auto reward_cfg = reward_config(cfg);
  std::unique_ptr<Agent> agent;
  if (strategy.kind == Strategy::Kind::pretrained_greedy)
    agent = std::make_unique<Agent>(
        Agent::load(at(ctx, files::pretrained_checkpoint), at(ctx, files::pretrained_vocab)));
  else
    agent = std::make_unique<Agent>(Agent::load(at(ctx, files::rl_checkpoint), at(ctx, files::rl_vocab)));

  const auto before = env.query_count();
  AttackResult r;
  switch (strategy.kind) {
    case Strategy::Kind::pretrained_greedy:
    case Strategy::Kind::rl_greedy:
      r = craft_greedy(*agent, target, env, reward_cfg);
      break;
    case Strategy::Kind::rl_beam:
      r = craft_beam(*agent, target, strategy.param, env, reward_cfg, cfg.decode.beam_width);
      break;
    case Strategy::Kind::random:
      r = craft_random_baseline(agent->vocab, agent->params.hyper().max_len, target,
                                strategy.param, env, reward_cfg,
                                derive_seed(cfg.seed, kRandomBaseline));
      break;
  }
  r.strategy = strategy.name();
  return {std::move(r), env.query_count() - before};
}

EvalSetup prepare_evaluation(const Context& ctx) {
  const auto& cfg = ctx.config;
  EvalSetup setup{
      std::make_unique<Environment>(load_checkpoint(at(ctx, files::env_checkpoint)),
                                    Vocabulary::load(at(ctx, files::env_vocab))),
      Agent::load(at(ctx, files::pretrained_checkpoint), at(ctx, files::pretrained_vocab)),
      Agent::load(at(ctx, files::rl_checkpoint), at(ctx, files::rl_vocab)),
      reward_config(cfg),
      cfg.strategies(),
      {},
      std::nullopt,
      {}};
  const auto probes = load_lines(at(ctx, files::probes));
  setup.generated =
      build_generated_targets(*setup.env, probes, cfg.eval.buckets, derive_seed(cfg.seed, kTargets));
  if (cfg.eval.real_targets) {
    const auto corpus = load_corpus(at(ctx, files::corpus));
    setup.real = build_real_targets(corpus, cfg.eval.buckets, derive_seed(cfg.seed, kRealTargets));
  }
  setup.options.jobs = cfg.eval.jobs;
  setup.options.beam_width = cfg.decode.beam_width;
  setup.options.seed = derive_seed(cfg.seed, kRandomBaseline);
  return setup;
}

std::uint64_t evaluate(const Context& ctx) {
  const auto& cfg = ctx.config;
  auto setup = prepare_evaluation(ctx);
  BlackBox& env = *setup.env;
  const EvalAgents agents{&setup.pretrained, &setup.rl};

  ReportInput report;
  report.config_text = cfg.dump();
  report.config_file_text = ctx.config_file_text;
  report.grid = cfg.grid();
  auto run_list = [&](const TargetList& list) {
    const auto t0 = std::chrono::steady_clock::now();
    ReportSection section{
        &list, rdg::evaluate(setup.strategies, list, agents, env, setup.reward, setup.options)};
    if (list.kind == TargetKind::real)
      section.runs.push_back(real_input_baseline(list, env, setup.reward));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& run : section.runs)
      say(ctx, std::string(to_string(list.kind)) + "  " + run.name + "  avg similarity " +
                   fixed(avg_similarity(run.results)) + "  success@0.5 " +
                   fixed(success_rate(run.results, 0.5)));
    say(ctx, std::string(to_string(list.kind)) + " targets: " + std::to_string(list.targets.size()) +
                 "  (" + fixed(secs, 1) + " s)");
    report.sections.push_back(std::move(section));
  };
  run_list(setup.generated);
  if (setup.real) run_list(*setup.real);
  emit_report(report, ctx.workdir);
  return env.query_count();
}

std::uint64_t run_all(const Context& ctx) {
  std::uint64_t q = 0;
  q += gen_corpus(ctx);
  q += train_env(ctx);
  q += build_refcorpus(ctx);
  q += pretrain(ctx);
  q += rl_train(ctx);
  q += evaluate(ctx);
  return q;
}

}  // namespace rdg::pipeline
