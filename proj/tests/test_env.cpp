#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "rdg/agent.hpp"
#include "rdg/checkpoint.hpp"
#include "rdg/environment.hpp"

using namespace rdg;

namespace {

EnvTrainConfig small_config() {
  EnvTrainConfig cfg;
  cfg.hyper.emb_size = 8;
  cfg.hyper.hidden_size = 16;
  cfg.hyper.max_len = 12;
  cfg.optimizer.algorithm = OptimizerAlgorithm::adam;
  cfg.optimizer.learning_rate = 0.02;
  cfg.optimizer.clip_value = 5.0;
  cfg.epochs = 4;
  cfg.val_fraction = 0.1;
  cfg.seed = 3;
  return cfg;
}

const std::vector<TextPair>& corpus() {
  static const auto c = generate_toy_corpus(ToyGrammarSpec::default_spec(), 300);
  return c;
}

const TrainedModel& trained() {
  static const auto m = train_environment(corpus(), small_config());
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("training lowers validation loss and is seed-deterministic") {
  const auto& m = trained();
  REQUIRE(m.log.size() == 5);
  CHECK(m.log.front().epoch == 0);
  CHECK(m.log.back().val_nll < m.log.front().val_nll);
  CHECK(m.params.hyper().vocab_size == m.vocab.size());

  const auto again = train_environment(corpus(), small_config());
  CHECK(again.params.same_values(m.params));

  const auto dir = std::filesystem::temp_directory_path();
  save_checkpoint(m.params, dir / "rdg_env_a.ckpt");
  save_checkpoint(again.params, dir / "rdg_env_b.ckpt");
  CHECK(slurp(dir / "rdg_env_a.ckpt") == slurp(dir / "rdg_env_b.ckpt"));

  auto other = small_config();
  other.seed = 4;
  CHECK_FALSE(train_environment(corpus(), other).params.same_values(m.params));

  write_training_log(m.log, dir / "rdg_env_log.tsv");
  std::istringstream log(slurp(dir / "rdg_env_log.tsv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    CHECK(std::count(line.begin(), line.end(), '\t') == 2);
    ++lines;
  }
  CHECK(lines == m.log.size());
}

TEST_CASE("queries decode greedily and are counted") {
  const auto& m = trained();
  Environment env(m.params, m.vocab);
  CHECK(env.query_count() == 0);
  const std::string input = corpus()[0].input;
  const std::string a = env.query(input);
  const std::string b = env.query("  " + input + "  ");
  CHECK(a == b);
  CHECK(env.query_count() == 2);

  Utterance ids;
  for (const auto& t : tokenize(input)) ids.push_back(m.vocab.id(t));
  CHECK(a == decode(generate(m.params, ids, DecodeConfig{}).front().tokens, m.vocab));

  // Unknown words map to UNK rather than failing.
  CHECK_NOTHROW(env.query("zebra quokka"));
  CHECK(env.query_count() == 3);

  CHECK_THROWS_AS(env.query(""), std::invalid_argument);
  CHECK_THROWS_AS(env.query(" \t "), std::invalid_argument);
  std::string too_long;
  for (int i = 0; i < 13; ++i) too_long += "hi ";
  CHECK_THROWS_AS(env.query(too_long), std::invalid_argument);
  CHECK(env.query_count() == 3);  // failed queries are not counted

  env.reset_counter();
  CHECK(env.query_count() == 0);
}

TEST_CASE("the counter is exact under concurrent queries") {
  const auto& m = trained();
  Environment env(m.params, m.vocab);
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t)
    pool.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) env.query(corpus()[(t * 25 + i) % corpus().size()].input);
    });
  for (auto& th : pool) th.join();
  CHECK(env.query_count() == 100);
}

TEST_CASE("save and load reproduce responses") {
  const auto& m = trained();
  const auto dir = std::filesystem::temp_directory_path();
  save_checkpoint(m.params, dir / "rdg_env.ckpt");
  m.vocab.save(dir / "rdg_env.vocab");
  Environment a(m.params, m.vocab);
  auto b = Environment::load(dir / "rdg_env.ckpt", dir / "rdg_env.vocab");
  for (std::size_t i = 0; i < 20; ++i) CHECK(a.query(corpus()[i].input) == b.query(corpus()[i].input));

  Vocabulary smaller;
  CHECK_THROWS_AS(Environment(m.params, smaller), std::invalid_argument);
}

TEST_CASE("reference pairs re-query to the same response") {
  const auto& m = trained();
  Environment env(m.params, m.vocab);
  const auto posts = generate_posts(ToyGrammarSpec::default_spec(), 40, 11);
  const auto ref = build_reference_corpus(posts, env);
  CHECK(env.query_count() == posts.size());
  for (const auto& p : ref) CHECK(env.query(p.output) == p.input);
}

TEST_CASE("embedding initialization copies known rows") {
  const auto dir = std::filesystem::temp_directory_path();
  auto cfg = small_config();
  cfg.epochs = 0;
  {
    std::ofstream out(dir / "rdg_init.txt");
    out << "2 8\nalice 1 2 3 4 5 6 7 8\nnotinvocab 1 1 1 1 1 1 1 1\n";
  }
  cfg.embedding_init = dir / "rdg_init.txt";
  const auto m = train_environment(corpus(), cfg);
  const auto& emb = m.params.tensor(m.params.embedding());
  const auto row = emb.row(m.vocab.id("alice"));
  CHECK(row[0] == 1.0);
  CHECK(row[7] == 8.0);

  {
    std::ofstream out(dir / "rdg_init_bad.txt");
    out << "alice 1 2 3\n";
  }
  cfg.embedding_init = dir / "rdg_init_bad.txt";
  CHECK_THROWS_AS(train_environment(corpus(), cfg), std::invalid_argument);
}

TEST_CASE("corpora that do not fit are rejected") {
  auto cfg = small_config();
  cfg.hyper.max_len = 4;
  CHECK_THROWS_AS(train_environment(corpus(), cfg), std::invalid_argument);
  CHECK_THROWS_AS(train_environment({}, small_config()), std::invalid_argument);
}
