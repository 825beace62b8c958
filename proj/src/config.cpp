#include "rdg/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace rdg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double to_double(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (item.empty()) throw ConfigError("empty list element");
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream out;
  for (std::size_t i = 0; i < items.size(); ++i) out << (i ? "," : "") << items[i];
  return out.str();
}

struct Field {
  std::string section, key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Member>
void add_size(std::vector<Field>& f, std::string section, std::string key, Member member) {
  f.push_back({std::move(section), std::move(key),
               [member](ExperimentConfig& c, std::string_view v) {
                 member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_u64(v));
               },
               [member](const ExperimentConfig& c) {
                 return std::to_string(member(const_cast<ExperimentConfig&>(c)));
               }});
}

template <typename Member>
void add_real(std::vector<Field>& f, std::string section, std::string key, Member member) {
  f.push_back({std::move(section), std::move(key),
               [member](ExperimentConfig& c, std::string_view v) { member(c) = to_double(v); },
               [member](const ExperimentConfig& c) {
                 return fmt(member(const_cast<ExperimentConfig&>(c)));
               }});
}

template <typename Member>
void add_text(std::vector<Field>& f, std::string section, std::string key, Member member) {
  f.push_back({std::move(section), std::move(key),
               [member](ExperimentConfig& c, std::string_view v) { member(c) = std::string(v); },
               [member](const ExperimentConfig& c) {
                 return quote(member(const_cast<ExperimentConfig&>(c)));
               }});
}

void add_model(std::vector<Field>& f, const std::string& s,
               ExperimentConfig::Model& (*model)(ExperimentConfig&)) {
  add_size(f, s, "emb_size", [model](ExperimentConfig& c) -> auto& { return model(c).hyper.emb_size; });
  add_size(f, s, "hidden_size",
           [model](ExperimentConfig& c) -> auto& { return model(c).hyper.hidden_size; });
  add_size(f, s, "n_layers", [model](ExperimentConfig& c) -> auto& { return model(c).hyper.n_layers; });
  add_size(f, s, "max_len", [model](ExperimentConfig& c) -> auto& { return model(c).hyper.max_len; });
  add_size(f, s, "max_vocab", [model](ExperimentConfig& c) -> auto& { return model(c).max_vocab; });
  add_size(f, s, "epochs", [model](ExperimentConfig& c) -> auto& { return model(c).epochs; });
  add_real(f, s, "val_fraction",
           [model](ExperimentConfig& c) -> auto& { return model(c).val_fraction; });
  f.push_back({s, "optimizer",
               [model](ExperimentConfig& c, std::string_view v) {
                 try {
                   model(c).optimizer.algorithm = parse_optimizer(v);
                 } catch (const std::invalid_argument& e) {
                   throw ConfigError(e.what());
                 }
               },
               [model](const ExperimentConfig& c) {
                 return quote(std::string(
                     to_string(model(const_cast<ExperimentConfig&>(c)).optimizer.algorithm)));
               }});
  add_real(f, s, "learning_rate",
           [model](ExperimentConfig& c) -> auto& { return model(c).optimizer.learning_rate; });
  add_real(f, s, "lr_decay",
           [model](ExperimentConfig& c) -> auto& { return model(c).optimizer.lr_decay; });
  add_real(f, s, "clip", [model](ExperimentConfig& c) -> auto& { return model(c).optimizer.clip_value; });
  add_real(f, s, "dropout",
           [model](ExperimentConfig& c) -> auto& { return model(c).optimizer.dropout_rate; });
  add_size(f, s, "batch_size",
           [model](ExperimentConfig& c) -> auto& { return model(c).optimizer.batch_size; });
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using C = ExperimentConfig;
    add_size(f, "global", "seed", [](C& c) -> auto& { return c.seed; });

    add_size(f, "corpus", "pairs", [](C& c) -> auto& { return c.corpus.pairs; });
    add_size(f, "corpus", "posts", [](C& c) -> auto& { return c.corpus.posts; });
    add_size(f, "corpus", "probes", [](C& c) -> auto& { return c.corpus.probes; });
    add_real(f, "corpus", "noise_rate", [](C& c) -> auto& { return c.corpus.noise_rate; });
    add_size(f, "corpus", "grammar_seed", [](C& c) -> auto& { return c.corpus.grammar_seed; });

    add_model(f, "env", [](C& c) -> C::Model& { return c.env; });
    add_text(f, "env", "embedding_init", [](C& c) -> auto& { return c.env_embedding_init; });
    add_model(f, "agent", [](C& c) -> C::Model& { return c.agent; });

    add_text(f, "reward", "embeddings", [](C& c) -> auto& { return c.reward.embeddings; });
    add_text(f, "reward", "stopwords", [](C& c) -> auto& { return c.reward.stopwords; });
    add_real(f, "reward", "clamp", [](C& c) -> auto& { return c.reward.clamp; });
    add_size(f, "reward", "toy_dim", [](C& c) -> auto& { return c.reward.toy_dim; });

    add_size(f, "rl", "samples", [](C& c) -> auto& { return c.rl.samples; });
    add_size(f, "rl", "batch_size", [](C& c) -> auto& { return c.rl.batch_size; });
    add_size(f, "rl", "epochs", [](C& c) -> auto& { return c.rl.epochs; });
    add_size(f, "rl", "max_targets", [](C& c) -> auto& { return c.rl.max_targets; });
    add_real(f, "rl", "learning_rate", [](C& c) -> auto& { return c.rl.optimizer.learning_rate; });
    add_real(f, "rl", "clip", [](C& c) -> auto& { return c.rl.optimizer.clip_value; });
    add_real(f, "rl", "dropout", [](C& c) -> auto& { return c.rl.dropout; });
    f.push_back({"rl", "optimizer",
                 [](C& c, std::string_view v) {
                   try {
                     c.rl.optimizer.algorithm = parse_optimizer(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const C& c) { return quote(std::string(to_string(c.rl.optimizer.algorithm))); }});
    f.push_back({"rl", "baseline",
                 [](C& c, std::string_view v) {
                   try {
                     c.rl.baseline = parse_baseline(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const C& c) { return quote(std::string(to_string(c.rl.baseline))); }});
    f.push_back({"rl", "estimator",
                 [](C& c, std::string_view v) {
                   try {
                     c.rl.estimator = parse_estimator(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const C& c) { return quote(std::string(to_string(c.rl.estimator))); }});

    add_size(f, "decode", "beam_width", [](C& c) -> auto& { return c.decode.beam_width; });
    f.push_back({"decode", "candidates",
                 [](C& c, std::string_view v) {
                   c.decode.candidates.clear();
                   for (const auto& item : split_list(v)) c.decode.candidates.push_back(to_u64(item));
                 },
                 [](const C& c) { return quote(join(c.decode.candidates)); }});

    f.push_back({"eval", "buckets",
                 [](C& c, std::string_view v) {
                   c.eval.buckets.ranges.clear();
                   for (const auto& item : split_list(v)) {
                     const auto dash = item.find('-');
                     if (dash == std::string::npos)
                       throw ConfigError("bucket '" + item + "' is not of the form lo-hi");
                     c.eval.buckets.ranges.push_back(
                         {to_u64(trim(std::string_view(item).substr(0, dash))),
                          to_u64(trim(std::string_view(item).substr(dash + 1)))});
                   }
                 },
                 [](const C& c) {
                   std::vector<std::string> labels;
                   for (const auto& r : c.eval.buckets.ranges) labels.push_back(r.label());
                   return quote(join(labels));
                 }});
    add_size(f, "eval", "per_bucket", [](C& c) -> auto& { return c.eval.buckets.per_bucket; });
    add_real(f, "eval", "grid_step", [](C& c) -> auto& { return c.eval.grid_step; });
    f.push_back({"eval", "strategies",
                 [](C& c, std::string_view v) { c.eval.strategies = split_list(v); },
                 [](const C& c) { return quote(join(c.eval.strategies)); }});
    add_size(f, "eval", "random_budget", [](C& c) -> auto& { return c.eval.random_budget; });
    f.push_back({"eval", "real_targets",
                 [](C& c, std::string_view v) { c.eval.real_targets = to_bool(v); },
                 [](const C& c) { return std::string(c.eval.real_targets ? "true" : "false"); }});
    add_size(f, "eval", "jobs", [](C& c) -> auto& { return c.eval.jobs; });
    return f;
  }();
  return table;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void check_model(const ExperimentConfig::Model& m, const std::string& s) {
  check(m.hyper.emb_size >= 1, s + ".emb_size must be at least 1");
  check(m.hyper.hidden_size >= 1, s + ".hidden_size must be at least 1");
  check(m.hyper.n_layers >= 1, s + ".n_layers must be at least 1");
  check(m.hyper.max_len >= 1, s + ".max_len must be at least 1");
  check(m.max_vocab >= 5, s + ".max_vocab must be at least 5");
  check(m.val_fraction >= 0.0 && m.val_fraction < 1.0, s + ".val_fraction outside [0, 1)");
  try {
    m.optimizer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(s + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig::Model ExperimentConfig::default_env() {
  Model m;
  m.hyper.emb_size = 32;
  m.hyper.hidden_size = 64;
  m.hyper.max_len = 20;
  m.optimizer.algorithm = OptimizerAlgorithm::adam;
  m.optimizer.learning_rate = 0.01;
  m.optimizer.clip_value = 5.0;
  m.optimizer.dropout_rate = 0.1;
  m.optimizer.batch_size = 16;
  m.epochs = 15;
  return m;
}

ExperimentConfig::Model ExperimentConfig::default_agent() {
  Model m = default_env();
  m.max_vocab = 60000;
  m.epochs = 10;
  return m;
}

void ExperimentConfig::set(std::string_view section, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) {
      try {
        f.set(*this, value);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(section) + "." + std::string(key) + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown key '" + std::string(key) + "' in section [" + std::string(section) +
                    "]");
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string> known_sections;
  for (const auto& f : fields()) known_sections.insert(f.section);
  std::set<std::pair<std::string, std::string>> seen;
  std::string section = "global";
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto where = " (line " + std::to_string(line_no) + ")";
    std::string_view line = raw;
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header" + where);
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!known_sections.contains(section))
        throw ConfigError("unknown section [" + section + "]" + where);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key = value" + where);
    const std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (!seen.emplace(section, key).second)
      throw ConfigError("duplicate key " + section + "." + key + where);
    try {
      cfg.set(section, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what() + where);
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void ExperimentConfig::validate() const {
  check(corpus.pairs >= 100, "corpus.pairs must be at least 100");
  check(corpus.posts >= 50, "corpus.posts must be at least 50");
  check(corpus.probes >= 1, "corpus.probes must be at least 1");
  check(corpus.noise_rate >= 0.0 && corpus.noise_rate <= 1.0, "corpus.noise_rate outside [0, 1]");
  check_model(env, "env");
  check_model(agent, "agent");
  check(agent.hyper.max_len <= env.hyper.max_len,
        "agent.max_len must not exceed env.max_len (crafted inputs are env queries)");
  check(reward.clamp >= 0.0 && reward.clamp <= 1.0, "reward.clamp outside [0, 1]");
  check(reward.toy_dim >= 1, "reward.toy_dim must be at least 1");
  check(rl.samples >= 1, "rl.samples must be at least 1");
  check(rl.batch_size >= 1, "rl.batch_size must be at least 1");
  check(rl.dropout >= 0.0 && rl.dropout < 1.0, "rl.dropout outside [0, 1)");
  check(rl.optimizer.learning_rate > 0.0, "rl.learning_rate must be positive");
  check(rl.optimizer.clip_value > 0.0, "rl.clip must be positive");
  check(!decode.candidates.empty(), "decode.candidates is empty");
  for (auto n : decode.candidates) check(n >= 1, "decode.candidates must be at least 1");
  try {
    eval.buckets.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("eval.buckets: ") + e.what());
  }
  check(eval.grid_step > 0.0 && eval.grid_step <= 1.0, "eval.grid_step outside (0, 1]");
  check(!eval.strategies.empty(), "eval.strategies is empty");
  try {
    strategies();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("eval.strategies: ") + e.what());
  }
  for (const auto* p : {&env_embedding_init, &reward.embeddings, &reward.stopwords})
    check(p->empty() || std::filesystem::exists(*p), "file not found: " + *p);
}

std::string ExperimentConfig::dump() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      section = f.section;
      if (section != "global") out += (out.empty() ? "" : "\n") + ("[" + section + "]\n");
    }
    out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::vector<Strategy> ExperimentConfig::strategies() const {
  std::size_t max_n = 0;
  for (auto n : decode.candidates) max_n = std::max(max_n, n);
  std::vector<Strategy> out;
  for (const auto& s : eval.strategies) {
    if (s == "rl_beam") {
      for (auto n : decode.candidates) out.push_back({Strategy::Kind::rl_beam, n});
    } else if (s == "random") {
      out.push_back({Strategy::Kind::random, eval.random_budget ? eval.random_budget : max_n + 1});
    } else {
      out.push_back(Strategy::parse(s));
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (out[i] == out[j]) throw std::invalid_argument("duplicate strategy " + out[i].name());
  return out;
}

std::vector<double> ExperimentConfig::grid() const {
  std::vector<double> g;
  const double inverse = 1.0 / eval.grid_step;
  const double rounded = std::round(inverse);
  if (std::abs(inverse - rounded) < 1e-9) {
    // k / m rather than k * step keeps grid points such as 0.15 exact decimals.
    for (double k = 0.0; k <= rounded; k += 1.0) g.push_back(k / rounded);
    return g;
  }
  for (double t = 0.0; t < 1.0; t += eval.grid_step) g.push_back(t);
  g.push_back(1.0);
  return g;
}

}  // namespace rdg
