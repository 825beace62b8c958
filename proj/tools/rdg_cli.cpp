// rdg: command-line driver for the reverse dialogue generator pipeline.
//
//   rdg gen-corpus --out work
//   rdg train-env --out work
//   rdg build-refcorpus --out work
//   rdg pretrain --out work
//   rdg rl-train --out work
//   rdg attack --out work --target "..." --strategy rl_beam(50)
//   rdg evaluate --out work --jobs 4
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "rdg/config.hpp"
#include "rdg/pipeline.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "rdg_work";
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "experiment configuration file");
  sub->add_option("--seed", c.seed, "global seed (overrides the config)");
  sub->add_option("--out", c.out, "working directory for all pipeline files")->capture_default_str();
  sub->add_option("--jobs", c.jobs, "evaluation threads (overrides the config)");
}

rdg::pipeline::Context make_context(const Common& c) {
  rdg::pipeline::Context ctx;
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path, std::ios::binary);
    if (!in) throw rdg::ConfigError("cannot read config file '" + c.config_path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    ctx.config_file_text = text.str();
    ctx.config = rdg::ExperimentConfig::parse(ctx.config_file_text);
  }
  if (c.seed) ctx.config.seed = *c.seed;
  if (c.jobs) ctx.config.eval.jobs = *c.jobs;
  ctx.config.validate();
  ctx.workdir = c.out;
  ctx.log = &std::cerr;
  return ctx;
}

void check_strategy(const std::string& s) {
  if (s == "rl_beam" || s == "random") return;
  try {
    (void)rdg::Strategy::parse(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void print_attack(const rdg::AttackResult& r) {
  std::cout << "strategy: " << r.strategy << '\n'
            << "target: " << r.target << '\n'
            << "crafted_input: " << r.crafted_input << '\n'
            << "env_output: " << r.env_output << '\n';
  if (r.similarity) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *r.similarity);
    std::cout << "similarity: " << buf << '\n';
  } else {
    std::cout << "similarity: undefined\n";
  }
  std::cout << "queries_used: " << r.queries_used << '\n';
  if (r.failed) std::cout << "failed: yes\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reverse dialogue generator: craft inputs that steer a black-box dialogue model"};
  app.require_subcommand(1);

  Common common;
  std::string target, strategy = "rl_greedy";
  std::function<std::uint64_t(const rdg::pipeline::Context&)> run;

  auto stage = [&](const char* name, const char* help,
                   std::uint64_t (*fn)(const rdg::pipeline::Context&)) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, common);
    sub->callback([&run, fn] { run = fn; });
    return sub;
  };
  stage("gen-corpus", "generate the toy corpus, reference posts and probes", rdg::pipeline::gen_corpus);
  stage("train-env", "train the dialogue environment", rdg::pipeline::train_env);
  stage("build-refcorpus", "query the environment with the posts", rdg::pipeline::build_refcorpus);
  stage("pretrain", "supervised pretraining of the agent", rdg::pipeline::pretrain);
  stage("rl-train", "policy-gradient fine-tuning of the agent", rdg::pipeline::rl_train);
  stage("evaluate", "full sweep; writes report.json and curves.csv", rdg::pipeline::evaluate);

  auto* attack = app.add_subcommand("attack", "craft an input for one target response");
  add_common(attack, common);
  attack->add_option("--target", target, "target response text")->required();
  attack->add_option("--strategy", strategy,
                     "pretrained_greedy, rl_greedy, rl_beam[(N)] or random[(B)]")
      ->capture_default_str();
  attack->callback([&] {
    run = [&](const rdg::pipeline::Context& ctx) {
      auto outcome = rdg::pipeline::attack(ctx, target, strategy);
      print_attack(outcome.result);
      return outcome.queries;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  rdg::pipeline::Context ctx;
  try {
    if (attack->parsed()) check_strategy(strategy);
    ctx = make_context(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    const auto queries = run(ctx);
    std::cout << "env_queries: " << queries << std::endl;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
