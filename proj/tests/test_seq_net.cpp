#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "oracles.hpp"
#include "rdg/checkpoint.hpp"
#include "rdg/kernels.hpp"
#include "rdg/optim.hpp"
#include "rdg/random.hpp"
#include "rdg/seq_net.hpp"
#include "rdg/trainer.hpp"

using namespace rdg;

namespace {

Seq2SeqHyper small_hyper(std::size_t layers = 2) {
  Seq2SeqHyper h;
  h.vocab_size = 16;
  h.emb_size = 6;
  h.hidden_size = 8;
  h.n_layers = layers;
  h.max_len = 6;
  return h;
}

Utterance random_utterance(Rng& rng, std::size_t vocab, std::size_t max_len) {
  Utterance u(1 + rng.index(max_len));
  for (auto& t : u) t = static_cast<TokenId>(ids::reserved + rng.index(vocab - ids::reserved));
  return u;
}

// V = 7: ids 4, 5, 6 are the content tokens a, b, c.
Seq2SeqParams hand_set_model() {
  Seq2SeqHyper h;
  h.vocab_size = 7;
  h.emb_size = 2;
  h.hidden_size = 2;
  h.n_layers = 1;
  h.max_len = 2;
  Seq2SeqParams p(h);
  auto& b = p.mutable_tensor(p.out_bias()).values;
  b[ids::eos] = std::log(5.0);
  b[ids::unk] = 0.0;
  b[4] = std::log(2.0);
  b[5] = std::log(3.0);
  b[6] = std::log(4.0);
  return p;
}

}  // namespace

TEST_CASE("init_params is seeded and has the documented shapes") {
  const auto h = small_hyper();
  const auto a = init_params(h, 1);
  const auto b = init_params(h, 1);
  const auto c = init_params(h, 2);
  CHECK(a.same_values(b));
  CHECK_FALSE(a.same_values(c));

  // V=16, E=6, H=8, two layers.
  const std::map<std::string, std::pair<std::size_t, std::size_t>> shapes{
      {"embedding", {16, 6}},   {"enc.0.weight", {32, 14}}, {"enc.0.bias", {32, 1}},
      {"enc.1.weight", {32, 16}}, {"enc.1.bias", {32, 1}},  {"dec.0.weight", {32, 14}},
      {"dec.0.bias", {32, 1}},  {"dec.1.weight", {32, 16}}, {"dec.1.bias", {32, 1}},
      {"out.weight", {16, 8}},  {"out.bias", {16, 1}}};
  REQUIRE(a.tensor_count() == shapes.size());
  for (std::size_t i = 0; i < a.tensor_count(); ++i) {
    const auto& [r, c2] = shapes.at(a.name(i));
    CHECK(a.tensor(i).rows == r);
    CHECK(a.tensor(i).cols == c2);
  }
  const double bound = 1.0 / std::sqrt(8.0);
  for (const auto& t : a.tensors())
    for (double v : t.values) CHECK(std::abs(v) <= bound);

  auto bad = h;
  bad.vocab_size = 4;
  CHECK_THROWS_AS(init_params(bad, 1), std::invalid_argument);
}

TEST_CASE("untrained loss is close to log V") {
  Seq2SeqHyper h;
  h.vocab_size = 300;
  h.emb_size = 32;
  h.hidden_size = 64;
  h.max_len = 20;
  const auto p = init_params(h, 3);
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    DialoguePair pair{random_utterance(rng, 300, 10), random_utterance(rng, 300, 10)};
    const double loss = forward_nll(p, pair).loss;
    CHECK(loss == doctest::Approx(std::log(300.0)).epsilon(0.10));
  }
}

TEST_CASE("forward is deterministic without dropout and rejects bad input") {
  const auto p = init_params(small_hyper(), 4);
  DialoguePair pair{{4, 5, 6}, {7, 8}};
  CHECK(forward_nll(p, pair).loss == forward_nll(p, pair).loss);
  CHECK(forward_nll(p, pair, {0.3, 9}).loss == forward_nll(p, pair, {0.3, 9}).loss);
  CHECK(forward_nll(p, pair, {0.3, 9}).loss != forward_nll(p, pair).loss);
  CHECK_THROWS_AS(forward_nll(p, {{4}, {4, 4, 4, 4, 4, 4, 4}}), std::invalid_argument);
  CHECK_THROWS_AS(forward_nll(p, {{}, {4}}), std::invalid_argument);
  CHECK_THROWS_AS(forward_nll(p, {{4}, {ids::sos}}), std::invalid_argument);
}

TEST_CASE("backward matches central finite differences") {
  for (std::size_t layers : {1u, 2u}) {
    for (double dropout : {0.0, 0.3}) {
      CAPTURE(layers);
      CAPTURE(dropout);
      auto p = init_params(small_hyper(layers), 10 + layers);
      // Larger weights give the gradient some curvature to get wrong.
      for (std::size_t i = 0; i < p.tensor_count(); ++i)
        for (auto& v : p.mutable_tensor(i).values) v *= 3.0;
      const DialoguePair pair{{4, 9, 5, 12}, {6, 15, 7}};
      const DropoutSpec drop{dropout, 77};
      const auto grad = backward(p, forward_nll(p, pair, drop).cache);
      Rng rng(99);
      double worst = 0.0;
      for (std::size_t t = 0; t < p.tensor_count(); ++t) {
        for (int k = 0; k < 12; ++k) {
          std::size_t idx = rng.index(p.tensor(t).size());
          if (t == p.embedding()) {
            const TokenId rows[] = {4, 9, 5, 12, 6, 15, 7, ids::sos};
            idx = rows[rng.index(8)] * p.tensor(t).cols + rng.index(p.tensor(t).cols);
          }
          const double numeric = oracle::finite_difference(
              p, t, idx, 1e-4, [&] { return forward_nll(p, pair, drop).loss; });
          worst = std::max(worst, oracle::relative_error(grad.tensors[t].values[idx], numeric));
        }
      }
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("backward is repeatable and rejects stale caches") {
  auto p = init_params(small_hyper(), 4);
  const auto res = forward_nll(p, {{4, 5}, {6}});
  const auto g1 = backward(p, res.cache);
  const auto g2 = backward(p, res.cache);
  CHECK(g1.congruent_with(p));
  for (std::size_t i = 0; i < g1.tensors.size(); ++i) CHECK(g1.tensors[i] == g2.tensors[i]);

  p.mutable_tensor(0).values[0] += 1.0;
  CHECK_THROWS_WITH(backward(p, res.cache), "stale cache");
  const auto copy = p;
  const auto res2 = forward_nll(p, {{4, 5}, {6}});
  CHECK_THROWS_WITH(backward(copy, res2.cache), "stale cache");
}

TEST_CASE("memorizing a single pair drives the loss towards zero") {
  auto p = init_params(small_hyper(1), 21);
  const DialoguePair pair{{4, 5, 6}, {7, 8, 9}};
  OptimizerConfig cfg;
  cfg.algorithm = OptimizerAlgorithm::adam;
  cfg.learning_rate = 0.05;
  cfg.clip_value = 5.0;
  Optimizer opt(cfg);
  for (int step = 0; step < 300; ++step) {
    auto res = forward_nll(p, pair);
    opt.apply(p, clip_gradients(backward(p, res.cache), cfg.clip_value), Direction::descent);
  }
  CHECK(forward_nll(p, pair).loss < 0.05);
  const auto greedy = generate(p, pair.input, {});
  CHECK(greedy.front().tokens == pair.output);
}

TEST_CASE("global-norm clipping") {
  const auto p = init_params(small_hyper(1), 1);
  auto g = GradientSet::zeros_like(p);
  g.tensors[0].values[0] = 0.3;
  g.tensors[1].values[0] = 0.4;  // norm 0.5
  const auto clipped = clip_gradients(g, 0.25);
  CHECK(clipped.tensors[0].values[0] == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(clipped.tensors[1].values[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(clipped.global_norm() == doctest::Approx(0.25));

  const auto same = clip_gradients(g, 0.5);
  CHECK(same.tensors[0] == g.tensors[0]);
  CHECK(same.tensors[1] == g.tensors[1]);
  const auto zero = clip_gradients(GradientSet::zeros_like(p), 0.25);
  CHECK(zero.global_norm() == 0.0);
}

TEST_CASE("optimizer updates") {
  auto p = init_params(small_hyper(1), 1);
  p.mutable_tensor(0).values[0] = 2.0;
  auto g = GradientSet::zeros_like(p);
  g.tensors[0].values[0] = 0.5;

  SUBCASE("sgd descent") {
    OptimizerConfig cfg;
    cfg.learning_rate = 1.0;
    Optimizer opt(cfg);
    const auto before = p;
    opt.apply(p, g, Direction::descent);
    CHECK(p.tensor(0).values[0] == 1.5);
    for (std::size_t i = 1; i < p.tensor_count(); ++i) CHECK(p.tensor(i) == before.tensor(i));
    opt.apply(p, GradientSet::zeros_like(p), Direction::descent);
    CHECK(p.tensor(0).values[0] == 1.5);
  }
  SUBCASE("adam first step moves by the learning rate along the gradient sign") {
    OptimizerConfig cfg;
    cfg.algorithm = OptimizerAlgorithm::adam;
    cfg.learning_rate = 0.001;
    Optimizer opt(cfg);
    g.tensors[0].values[1] = -3.0;
    const double v1 = p.tensor(0).values[1];
    opt.apply(p, g, Direction::ascent);
    CHECK(p.tensor(0).values[0] - 2.0 == doctest::Approx(0.001).epsilon(1e-6));
    CHECK(p.tensor(0).values[1] - v1 == doctest::Approx(-0.001).epsilon(1e-6));
  }
  SUBCASE("non-finite gradient is rejected before any change") {
    Optimizer opt(OptimizerConfig{});
    g.tensors[0].values[1] = std::nan("");
    const auto before = p;
    CHECK_THROWS_WITH(opt.apply(p, g, Direction::descent), "non-finite gradient");
    CHECK(p.same_values(before));
  }
  SUBCASE("config validation") {
    OptimizerConfig cfg;
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.clip_value = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("decode_step distribution") {
  const auto p = init_params(small_hyper(), 8);
  const Utterance cond{4, 5, 6};
  auto state = encode_condition(p, cond);
  TokenId prev = ids::sos;
  for (int step = 0; step < 4; ++step) {
    const auto a = decode_step(p, state, prev);
    const auto b = decode_step(p, state, prev);
    CHECK(a.distribution == b.distribution);
    double sum = 0.0;
    for (std::size_t v = 0; v < a.distribution.size(); ++v) {
      sum += a.distribution[v];
      if (in_support(static_cast<TokenId>(v), state.position, p.hyper().max_len))
        CHECK(a.distribution[v] > 0.0);
      else
        CHECK(a.distribution[v] == 0.0);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    state = a.next;
    prev = 7;
  }
}

TEST_CASE("masked softmax is shift invariant") {
  Rng rng(3);
  std::vector<double> logits(12);
  for (auto& l : logits) l = rng.normal();
  auto shifted = logits;
  for (auto& l : shifted) l += 17.25;
  const auto a = masked_softmax(logits, 2, 5);
  const auto b = masked_softmax(shifted, 2, 5);
  for (std::size_t v = 0; v < a.size(); ++v) CHECK(a[v] == doctest::Approx(b[v]).epsilon(1e-12));
  const auto last = masked_softmax(logits, 6, 5);
  CHECK(last[ids::eos] == 1.0);
}

TEST_CASE("generate: greedy, sampling and log-probability consistency") {
  const auto p = init_params(small_hyper(), 12);
  const Utterance cond{4, 7};
  const auto g1 = generate(p, cond, {});
  const auto g2 = generate(p, cond, {});
  CHECK(g1.front().tokens == g2.front().tokens);
  CHECK(g1.front().log_prob == doctest::Approx(sequence_log_prob(p, cond, g1.front().tokens)).epsilon(1e-12));

  DecodeConfig sample{DecodeMode::sample};
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s1 = generate(p, cond, sample, seed);
    const auto s2 = generate(p, cond, sample, seed);
    REQUIRE(s1.size() == 1);
    CHECK(s1.front().tokens == s2.front().tokens);
    CHECK(!s1.front().tokens.empty());
    CHECK(s1.front().tokens.size() <= p.hyper().max_len);
    const double lp = sequence_log_prob(p, cond, s1.front().tokens);
    CHECK(std::abs(lp - s1.front().log_prob) < 1e-9);
    CHECK(lp <= 0.0);
  }
}

TEST_CASE("hand-set model probabilities") {
  const auto p = hand_set_model();
  const Utterance cond{4};
  // Step 1 support {unk, a, b, c} with weights 1:2:3:4; later steps add EOS (5).
  CHECK(std::exp(sequence_log_prob(p, cond, Utterance{4})) ==
        doctest::Approx(2.0 / 10.0 * 5.0 / 15.0).epsilon(1e-12));
  CHECK(std::exp(sequence_log_prob(p, cond, Utterance{5, 6})) ==
        doctest::Approx(3.0 / 10.0 * 4.0 / 15.0).epsilon(1e-12));
  CHECK(std::exp(sequence_log_prob(p, cond, Utterance{ids::unk})) ==
        doctest::Approx(1.0 / 10.0 * 5.0 / 15.0).epsilon(1e-12));

  double total = 0.0;
  for (const auto& u : oracle::enumerate_support(7, 2)) total += std::exp(sequence_log_prob(p, cond, u));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("beam search agrees with exhaustive enumeration") {
  auto rank_all = [](const Seq2SeqParams& p, const Utterance& cond) {
    std::vector<Hypothesis> all;
    for (const auto& u : oracle::enumerate_support(p.hyper().vocab_size, p.hyper().max_len))
      all.push_back({u, sequence_log_prob(p, cond, u)});
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.tokens < b.tokens;
    });
    return all;
  };

  SUBCASE("hand-set model, width 4") {
    const auto p = hand_set_model();
    const Utterance cond{5};
    const auto expected = rank_all(p, cond);
    const auto beam = generate(p, cond, {DecodeMode::beam, 4, 4});
    REQUIRE(beam.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(beam[k].tokens == expected[k].tokens);
      CHECK(beam[k].log_prob == doctest::Approx(expected[k].log_prob).epsilon(1e-12));
    }
  }
  SUBCASE("random model, width covering every sequence") {
    Seq2SeqHyper h;
    h.vocab_size = 7;
    h.emb_size = 3;
    h.hidden_size = 4;
    h.max_len = 2;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto p = init_params(h, seed);
      for (std::size_t i = 0; i < p.tensor_count(); ++i)
        for (auto& v : p.mutable_tensor(i).values) v *= 4.0;
      const Utterance cond{4, 6};
      const auto expected = rank_all(p, cond);
      REQUIRE(expected.size() == 20);
      const auto beam = generate(p, cond, {DecodeMode::beam, 20, 20});
      REQUIRE(beam.size() == 20);
      for (std::size_t k = 0; k < 20; ++k) {
        CHECK(beam[k].tokens == expected[k].tokens);
        CHECK(std::abs(beam[k].log_prob - expected[k].log_prob) < 1e-9);
      }
    }
  }
}

TEST_CASE("beam candidates form nested prefixes") {
  Seq2SeqHyper h;
  h.vocab_size = 30;
  h.max_len = 8;
  h.hidden_size = 16;
  h.emb_size = 8;
  const auto p = init_params(h, 5);
  const Utterance cond{4, 5, 6, 7};
  const auto small = generate(p, cond, {DecodeMode::beam, 40, 10});
  const auto large = generate(p, cond, {DecodeMode::beam, 40, 40});
  REQUIRE(small.size() == 10);
  REQUIRE(large.size() == 40);
  for (std::size_t k = 0; k < small.size(); ++k) CHECK(small[k].tokens == large[k].tokens);
  for (std::size_t k = 1; k < large.size(); ++k) CHECK(large[k - 1].log_prob >= large[k].log_prob);
  for (const auto& hyp : large)
    CHECK(std::abs(hyp.log_prob - sequence_log_prob(p, cond, hyp.tokens)) < 1e-9);
  CHECK_THROWS_AS(generate(p, cond, {DecodeMode::beam, 5, 10}), std::invalid_argument);

  const auto normalized = generate(p, cond, {DecodeMode::beam, 40, 40, true});
  CHECK(normalized.size() == 40);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto p = init_params(small_hyper(), 31);
  const auto path = std::filesystem::temp_directory_path() / "rdg_ckpt_test.bin";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  CHECK(q.same_values(p));
  {
    std::ofstream bad(path, std::ios::binary);
    bad << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}

TEST_CASE("serial and OpenMP kernels agree bitwise") {
  Rng rng(17);
  const std::size_t rows = 300, cols = 200;  // above the parallel threshold
  std::vector<double> W(rows * cols), x(cols), xr(rows), y1(rows), y2(rows), z1(cols), z2(cols);
  for (auto* v : {&W, &x, &xr, &y1}) for (auto& e : *v) e = rng.normal();
  y2 = y1;
  kernels::serial::gemv(W, rows, cols, x, y1);
  kernels::omp::gemv(W, rows, cols, x, y2);
  CHECK(y1 == y2);
  kernels::serial::gemv_transposed(W, rows, cols, xr, z1);
  kernels::omp::gemv_transposed(W, rows, cols, xr, z2);
  CHECK(z1 == z2);
  auto W2 = W;
  kernels::serial::rank1_update(W, rows, cols, xr, x, 0.5);
  kernels::omp::rank1_update(W2, rows, cols, xr, x, 0.5);
  CHECK(W == W2);
}

TEST_CASE("serial and OpenMP batch gradients agree bitwise") {
  const auto p = init_params(small_hyper(), 3);
  Rng rng(2);
  std::vector<DialoguePair> batch;
  for (int i = 0; i < 13; ++i) batch.push_back({random_utterance(rng, 16, 6), random_utterance(rng, 16, 6)});
  const auto a = serial::nll_gradient(p, batch, 0.2, 5);
  const auto b = omp::nll_gradient(p, batch, 0.2, 5);
  CHECK(a.loss == b.loss);
  for (std::size_t i = 0; i < a.gradient.tensors.size(); ++i)
    CHECK(a.gradient.tensors[i] == b.gradient.tensors[i]);

  // Batch loss/gradient is the mean of the per-example ones.
  double mean = 0.0;
  auto manual = GradientSet::zeros_like(p);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto r = forward_nll(p, batch[i], {0.2, derive_seed(5, i)});
    mean += r.loss / 13.0;
    manual.add(backward(p, r.cache), 1.0 / 13.0);
  }
  CHECK(a.loss == doctest::Approx(mean).epsilon(1e-12));
  for (std::size_t i = 0; i < manual.tensors.size(); ++i)
    for (std::size_t k = 0; k < manual.tensors[i].size(); ++k)
      CHECK(a.gradient.tensors[i].values[k] ==
            doctest::Approx(manual.tensors[i].values[k]).epsilon(1e-9));
}
