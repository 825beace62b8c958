// Acceptance run: checks the ten acceptance criteria end to end and prints one
// PASS/FAIL line per criterion. Exit status is 0 only when all of them pass.
//
//   acceptance [--work DIR] [--only 1,4,7] [--keep]
//
// Criteria 5, 8, 9 and 10 share one run of the clean desk-scale pipeline
// (configs/desk.cfg); criterion 6 runs the noisy variant (configs/noisy.cfg).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "boundary_checks.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "rdg/config.hpp"
#include "rdg/log.hpp"
#include "rdg/pipeline.hpp"
#include "rdg/random.hpp"
#include "rl_oracles.hpp"

using namespace rdg;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kRoot = RDG_SOURCE_DIR;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Finite differences on V=16, H=8.

Verdict gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Seq2SeqHyper h;
  h.vocab_size = 16;
  h.emb_size = 8;
  h.hidden_size = 8;
  h.n_layers = 2;
  h.max_len = 6;
  auto p = init_params(h, 31);
  for (std::size_t i = 0; i < p.tensor_count(); ++i)
    for (auto& v : p.mutable_tensor(i).values) v *= 3.0;

  const std::vector<DialoguePair> pairs{{{4, 9, 5, 12}, {6, 15, 7}},
                                        {{3, 11}, {13, 4, 8, 10, 14}},
                                        {{7, 7, 15, 6, 5, 9}, {12}},
                                        {{14, 10, 3}, {5, 11, 9, 3}}};
  const std::vector<DropoutSpec> drops{{0.0, 1}, {0.2, 2}, {0.0, 3}, {0.2, 4}};

  // Families: embedding, encoder weights, encoder biases, decoder weights,
  // decoder biases, output weight, output bias.
  std::map<std::string, std::vector<std::size_t>> families;
  for (std::size_t t = 0; t < p.tensor_count(); ++t) {
    const std::string& name = p.name(t);
    std::string family = name.substr(0, name.find('.'));
    if (family == "enc" || family == "dec" || family == "out")
      family += name.ends_with("bias") ? ".bias" : ".weight";
    families[family].push_back(t);
  }

  std::vector<GradientSet> grads;
  for (std::size_t k = 0; k < pairs.size(); ++k)
    grads.push_back(backward(p, forward_nll(p, pairs[k], drops[k]).cache));

  constexpr std::size_t kPerFamily = 50;
  Rng rng(5);
  double worst = 0.0;
  std::size_t checked = 0, min_family = SIZE_MAX;
  for (const auto& [family, tensors] : families) {
    std::vector<std::pair<std::size_t, std::size_t>> coords;  // (tensor, index)
    for (auto t : tensors)
      for (std::size_t i = 0; i < p.tensor(t).size(); ++i) coords.push_back({t, i});
    std::size_t n = 0;
    for (std::size_t round = 0; n < kPerFamily; ++round) {
      rng.shuffle(std::span(coords));
      for (std::size_t c = 0; c < coords.size() && n < kPerFamily; ++c) {
        const std::size_t k = (round + c) % pairs.size();
        auto [t, idx] = coords[c];
        if (t == p.embedding()) {
          // Rows of tokens in the pair, where the gradient is non-zero.
          std::vector<TokenId> rows(pairs[k].input);
          rows.insert(rows.end(), pairs[k].output.begin(), pairs[k].output.end());
          rows.push_back(ids::sos);
          idx = rows[rng.index(rows.size())] * p.tensor(t).cols + rng.index(p.tensor(t).cols);
        }
        const double numeric = oracle::finite_difference(
            p, t, idx, 1e-4, [&] { return forward_nll(p, pairs[k], drops[k]).loss; });
        worst = std::max(worst, oracle::relative_error(grads[k].tensors[t].values[idx], numeric));
        ++n;
      }
    }
    checked += n;
    min_family = std::min(min_family, n);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && min_family >= kPerFamily && secs < 60.0,
          "worst relative error " + fmt("%.2e", worst) + " over " + std::to_string(checked) +
              " coordinates in " + std::to_string(families.size()) + " tensor families (>= " +
              std::to_string(min_family) + " each), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Unbiasedness of the REINFORCE estimate; the literal variant is biased.

Verdict unbiasedness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto plain = oracle::check_estimator(Estimator::reinforce, 100000, 4);
  const auto literal = oracle::check_estimator(Estimator::pi_weighted, 100000, 4);
  const double secs = seconds_since(t0);
  const bool ok = plain.within_three_se == plain.coordinates && literal.max_abs_z > 3.0 &&
                  secs < 120.0;
  return {ok, "reinforce " + std::to_string(plain.within_three_se) + "/" +
                  std::to_string(plain.coordinates) + " coordinates within 3 SE (max |z| " +
                  fmt("%.2f", plain.max_abs_z) + "); pi-weighted variant " +
                  std::to_string(literal.within_three_se) + "/" +
                  std::to_string(literal.coordinates) + " within 3 SE (max |z| " +
                  fmt("%.1f", literal.max_abs_z) + "), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Two-token bandit.

Verdict bandit() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string steps;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto run = oracle::run_bandit(seed, 500, 8, 0.01, 0.95);
    ok = ok && run.steps_to_threshold > 0;
    steps += (seed > 1 ? ", " : "") +
             (run.steps_to_threshold ? std::to_string(run.steps_to_threshold)
                                     : "never (p=" + fmt("%.3f", run.final_probability) + ")");
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 120.0,
          "steps to pi(x) > 0.95 for seeds 1-5: " + steps + "; " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 4. Metric identities.

Verdict metric_identities() {
  const auto spec = ToyGrammarSpec::default_spec();
  RewardConfig cfg;
  cfg.embeddings = std::make_shared<EmbeddingTable>(make_toy_embeddings(spec, 32, 3));
  cfg.stopwords = std::make_shared<StopwordList>(StopwordList::default_list());
  const ToyGrammar grammar(spec);
  const auto words = grammar.surface_words();

  Rng rng(12);
  auto sentence = [&] {
    std::string s;
    const std::size_t n = 1 + rng.index(8);
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[rng.index(words.size())];
    if (rng.bernoulli(0.3)) s += " ?";
    return s;
  };
  std::size_t self_fail = 0, norm_fail = 0, sym_fail = 0, clamp_fail = 0, undefined = 0;
  for (int i = 0; i < 500; ++i) {
    const auto a = sentence(), b = sentence();
    const auto ea = sentence_embedding(a, cfg);
    if (!ea) {  // only stopwords drawn
      if (similarity(a, a, cfg).has_value()) ++self_fail;
      ++undefined;
      continue;
    }
    if (similarity(a, a, cfg) != std::optional<double>(1.0)) ++self_fail;
    double norm = 0.0;
    for (double v : *ea) norm += v * v;
    if (std::abs(std::sqrt(norm) - 1.0) > 1e-12) ++norm_fail;
    const auto ab = similarity(a, b, cfg), ba = similarity(b, a, cfg);
    if (ab != ba) ++sym_fail;
    const double r = clamp_reward(ab, 0.5);
    if (!(r == 0.0 || (r >= 0.5 && r <= 1.0))) ++clamp_fail;
  }
  for (double raw = -1.0; raw <= 1.0; raw += 0.01) {
    const double r = clamp_reward(raw, 0.5);
    if (!(r == 0.0 || (r >= 0.5 && r <= 1.0))) ++clamp_fail;
  }
  if (clamp_reward(std::nullopt, 0.5) != 0.0) ++clamp_fail;

  RewardConfig toy;
  auto table = std::make_shared<EmbeddingTable>(2);
  table->add("a", {1.0, 0.0});
  table->add("b", {0.0, 1.0});
  toy.embeddings = table;
  toy.stopwords = cfg.stopwords;
  const double half_root = *similarity("a", "a b", toy);
  const double err = std::abs(half_root - 1.0 / std::sqrt(2.0));

  const bool ok = !self_fail && !norm_fail && !sym_fail && !clamp_fail && err < 1e-12;
  return {ok, "500 random sentence pairs (" + std::to_string(undefined) +
                  " with no scored token): self-similarity failures " + std::to_string(self_fail) +
                  ", norm failures " + std::to_string(norm_fail) + ", asymmetries " +
                  std::to_string(sym_fail) + ", clamp violations " + std::to_string(clamp_fail) +
                  "; sim(a, a b) - 1/sqrt(2) = " + fmt("%.1e", err)};
}

// ---------------------------------------------------------------------------
// Pipelines

pipeline::Context load_context(const fs::path& config, const fs::path& workdir) {
  pipeline::Context ctx;
  ctx.config_file_text = boundary::slurp(config);
  ctx.config = ExperimentConfig::parse(ctx.config_file_text);
  ctx.config.validate();
  ctx.workdir = workdir;
  ctx.log = &std::cerr;
  return ctx;
}

struct Records {
  // (list kind, strategy) -> similarities in target order; undefined is NaN.
  std::map<std::pair<std::string, std::string>, std::vector<double>> sims;
  std::map<std::string, std::uint64_t> queries;  // per strategy, both lists
};

Records read_records(const json& report) {
  Records r;
  for (const auto& rec : report["records"]) {
    const std::string bucket = rec["bucket"];
    const std::string kind = bucket.substr(0, bucket.find(':'));
    const std::string strategy = rec["strategy"];
    r.sims[{kind, strategy}].push_back(rec["similarity"].is_null() ? std::nan("")
                                                                     : rec["similarity"].get<double>());
    r.queries[strategy] += rec["queries_used"].get<std::uint64_t>();
  }
  return r;
}

double mean_or_zero(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::isnan(x) ? 0.0 : x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

json load_json(const fs::path& p) { return json::parse(boundary::slurp(p)); }

struct CleanRun {
  bool ok = false;
  std::string error;
  double pipeline_seconds = 0.0;
  std::uint64_t evaluate_queries = 0;
  std::size_t probe_queries = 0;
  fs::path dir;
  std::string first_json, first_csv;
};

CleanRun run_clean(const fs::path& work) {
  CleanRun run;
  run.dir = work / "clean";
  try {
    fs::remove_all(run.dir);
    const auto ctx = load_context(kRoot / "configs" / "desk.cfg", run.dir);
    const auto t0 = std::chrono::steady_clock::now();
    pipeline::gen_corpus(ctx);
    pipeline::train_env(ctx);
    pipeline::build_refcorpus(ctx);
    pipeline::pretrain(ctx);
    pipeline::rl_train(ctx);
    run.evaluate_queries = pipeline::evaluate(ctx);
    run.pipeline_seconds = seconds_since(t0);
    run.first_json = boundary::slurp(run.dir / "report.json");
    run.first_csv = boundary::slurp(run.dir / "curves.csv");
    for (const auto& p : load_lines(run.dir / pipeline::files::probes))
      if (!normalize_text(p).empty()) ++run.probe_queries;
    run.ok = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

Verdict ordering(const CleanRun& run) {
  if (!run.ok) return {false, "clean pipeline failed: " + run.error};
  const auto rec = read_records(load_json(run.dir / "report.json"));
  bool ok = run.pipeline_seconds < 1800.0;
  std::string detail;
  for (const char* kind : {"generated", "real"}) {
    const auto& pre = rec.sims.at({kind, "pretrained_greedy"});
    const auto& greedy = rec.sims.at({kind, "rl_greedy"});
    const auto& b50 = rec.sims.at({kind, "rl_beam(50)"});
    const auto& b200 = rec.sims.at({kind, "rl_beam(200)"});
    auto val = [](double x) { return std::isnan(x) ? -2.0 : x; };
    std::size_t beam_vs_greedy = 0, wide_vs_narrow = 0;
    for (std::size_t t = 0; t < greedy.size(); ++t) {
      if (val(b50[t]) < val(greedy[t])) ++beam_vs_greedy;
      if (val(b200[t]) < val(b50[t])) ++wide_vs_narrow;
    }
    const double m_pre = mean_or_zero(pre), m_rl = mean_or_zero(greedy);
    ok = ok && m_rl >= m_pre && beam_vs_greedy == 0 && wide_vs_narrow == 0;
    detail += std::string(kind) + ": mean rl_greedy " + fmt("%.4f", m_rl) + " vs pretrained_greedy " +
              fmt("%.4f", m_pre) + ", rl_beam(50) " + fmt("%.4f", mean_or_zero(b50)) +
              ", rl_beam(200) " + fmt("%.4f", mean_or_zero(b200)) + ", per-target violations " +
              std::to_string(beam_vs_greedy) + "+" + std::to_string(wide_vs_narrow) + " over " +
              std::to_string(greedy.size()) + " targets; ";
  }
  detail += "pipeline " + fmt("%.0f", run.pipeline_seconds) + " s";
  return {ok, detail};
}

Verdict table_claim(const fs::path& work) {
  const auto dir = work / "noisy";
  try {
    fs::remove_all(dir);
    const auto ctx = load_context(kRoot / "configs" / "noisy.cfg", dir);
    pipeline::run_all(ctx);
  } catch (const std::exception& e) {
    return {false, std::string("noisy pipeline failed: ") + e.what()};
  }
  const auto rec = read_records(load_json(dir / "report.json"));
  const double beam = mean_or_zero(rec.sims.at({"real", "rl_beam(50)"}));
  const double real = mean_or_zero(rec.sims.at({"real", "real_input"}));
  return {beam >= real, "noisy grammar (10% randomized responses), real targets: rl_beam(50) " +
                            fmt("%.4f", beam) + " vs real input " + fmt("%.4f", real) + " over " +
                            std::to_string(rec.sims.at({"real", "real_input"}).size()) + " targets"};
}

Verdict boundary_check() {
  const auto r = boundary::check(kRoot);
  std::string detail = std::to_string(r.files_scanned) + " files scanned; attack library links no environment code";
  if (!r.ok()) {
    detail = "";
    for (const auto& v : r.violations) detail += v + "; ";
  }
  return {r.ok(), detail};
}

Verdict accounting(const CleanRun& run) {
  if (!run.ok) return {false, "clean pipeline failed: " + run.error};
  const auto ctx = load_context(kRoot / "configs" / "desk.cfg", run.dir);
  auto setup = pipeline::prepare_evaluation(ctx);
  BlackBox& env = *setup.env;
  const EvalAgents agents{&setup.pretrained, &setup.rl};

  bool ok = true;
  std::size_t checks = 0;
  std::uint64_t total = 0;
  for (const TargetList* list : {&setup.generated, setup.real ? &*setup.real : nullptr}) {
    if (!list) continue;
    for (const auto& s : setup.strategies) {
      const auto before = env.query_count();
      const auto runs = rdg::evaluate(std::span(&s, 1), *list, agents, env, setup.reward, setup.options);
      std::uint64_t used = 0;
      for (const auto& r : runs[0].results) used += r.queries_used;
      ok = ok && env.query_count() - before == used;
      total += used;
      ++checks;
    }
    if (list->kind == TargetKind::real) {
      const auto before = env.query_count();
      const auto base = real_input_baseline(*list, env, setup.reward);
      std::uint64_t used = 0;
      for (const auto& r : base.results) used += r.queries_used;
      ok = ok && env.query_count() - before == used;
      ++checks;
    }
  }

  // The full sweep behind report.json: probe queries plus every record.
  const auto rec = read_records(load_json(run.dir / "report.json"));
  std::uint64_t reported = 0;
  for (const auto& [name, q] : rec.queries) reported += q;
  const bool sweep_ok = run.evaluate_queries == run.probe_queries + reported;
  return {ok && sweep_ok, std::to_string(checks) + " single-strategy sweeps matched the counter delta (" +
                              std::to_string(total) + " queries); full sweep counter " +
                              std::to_string(run.evaluate_queries) + " = " +
                              std::to_string(run.probe_queries) + " probes + " +
                              std::to_string(reported) + " reported"};
}

Verdict monotonicity(const fs::path& work) {
  Rng rng(77);
  const auto grid = default_grid();
  std::size_t random_curves = 0, bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<AttackResult> results(1 + rng.index(60));
    for (auto& r : results)
      if (!rng.bernoulli(0.1)) r.similarity = rng.bernoulli(0.2) ? std::round(rng.uniform() * 20) / 20
                                                                 : rng.uniform(-1.0, 1.0);
    if (!success_curve(results, grid).non_increasing()) ++bad;
    ++random_curves;
  }
  std::size_t emitted = 0;
  for (const char* sub : {"clean", "noisy"}) {
    const auto path = work / sub / "report.json";
    if (!fs::exists(path)) continue;
    const auto report = load_json(path);
    for (const auto& [strategy, buckets] : report["curves"].items())
      for (const auto& [label, curve] : buckets.items()) {
        if (curve.is_null()) continue;
        for (std::size_t i = 1; i < curve.size(); ++i)
          if (curve[i].get<double>() > curve[i - 1].get<double>()) {
            ++bad;
            break;
          }
        ++emitted;
      }
  }
  return {bad == 0 && emitted > 0, std::to_string(random_curves) + " randomized and " +
                                       std::to_string(emitted) + " emitted curves, " +
                                       std::to_string(bad) + " increasing"};
}

Verdict reproducibility(const CleanRun& run) {
  if (!run.ok) return {false, "clean pipeline failed: " + run.error};
  const auto ctx = load_context(kRoot / "configs" / "desk.cfg", run.dir);
  pipeline::evaluate(ctx);
  const bool same_json = boundary::slurp(run.dir / "report.json") == run.first_json;
  const bool same_csv = boundary::slurp(run.dir / "curves.csv") == run.first_csv;
  return {same_json && same_csv, std::string("second evaluate: report.json ") +
                                     (same_json ? "identical" : "DIFFERS") + " (" +
                                     std::to_string(run.first_json.size()) + " bytes), curves.csv " +
                                     (same_csv ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the reverse dialogue generator"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool keep = false;
  app.add_option("--work", work, "scratch directory for the pipeline runs")->capture_default_str();
  app.add_option("--only", only, "run only these criteria")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> wanted(only.begin(), only.end());
  auto want = [&](int n) { return wanted.empty() || wanted.contains(n); };
  const fs::path work_dir = fs::absolute(work);
  fs::create_directories(work_dir);

  // Underfilled buckets and skipped targets are expected at desk scale.
  std::size_t warnings = 0;
  set_warning_sink([&](std::string_view m) {
    ++warnings;
    std::cerr << "warning: " << m << '\n';
  });

  const char* titles[] = {"",
                          "gradient correctness",
                          "REINFORCE unbiasedness",
                          "bandit convergence",
                          "metric identities",
                          "decoding and RL ordering",
                          "crafted inputs beat real inputs",
                          "black-box discipline",
                          "query accounting",
                          "curve monotonicity",
                          "reproducibility"};
  int failures = 0;
  auto report = [&](int n, const std::function<Verdict()>& fn) {
    if (!want(n)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << n << " (" << titles[n]
              << "): " << v.detail << std::endl;
  };

  report(1, gradient_check);
  report(2, unbiasedness);
  report(3, bandit);
  report(4, metric_identities);

  CleanRun clean;
  if (want(5) || want(8) || want(9) || want(10)) clean = run_clean(work_dir);
  report(5, [&] { return ordering(clean); });
  report(6, [&] { return table_claim(work_dir); });
  report(7, boundary_check);
  report(8, [&] { return accounting(clean); });
  report(9, [&] { return monotonicity(work_dir); });
  report(10, [&] { return reproducibility(clean); });

  std::cout << (failures ? "FAILED: " + std::to_string(failures) + " criteria" : "ALL PASSED")
            << " (" << warnings << " warnings)" << std::endl;
  if (!keep) fs::remove_all(work_dir);
  return failures ? 1 : 0;
}
