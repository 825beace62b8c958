#include "rdg/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rdg/random.hpp"

namespace rdg {

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<double> vec;
    std::string field;
    while (fields >> field) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') throw ParseError("malformed number '" + field + "'", line_no);
      vec.push_back(v);
    }
    if (first) {
      first = false;
      // `count dim` header: two integers and nothing else.
      char* end = nullptr;
      std::strtoull(word.c_str(), &end, 10);
      if (*end == '\0' && vec.size() == 1 && vec[0] == std::floor(vec[0]) && vec[0] > 0) {
        table.dim_ = static_cast<std::size_t>(vec[0]);
        continue;
      }
    }
    if (table.dim_ == 0) table.dim_ = vec.size();
    if (vec.empty() || vec.size() != table.dim_)
      throw ParseError("expected " + std::to_string(table.dim_) + " values, found " +
                           std::to_string(vec.size()),
                       line_no);
    table.add(std::move(word), std::move(vec));
  }
  if (table.size() == 0) throw std::runtime_error("empty embedding file " + path.string());
  return table;
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << words_.size() << ' ' << dim_ << '\n';
  out.precision(17);
  for (const auto& w : words_) {
    out << w;
    for (double v : vectors_.at(w)) out << ' ' << v;
    out << '\n';
  }
}

bool EmbeddingTable::add(std::string word, std::vector<double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_ || dim_ == 0) throw std::invalid_argument("embedding dimension mismatch");
  if (vectors_.contains(word)) return false;
  words_.push_back(word);
  vectors_.emplace(std::move(word), std::move(vec));
  return true;
}

const std::vector<double>* EmbeddingTable::find(std::string_view word) const {
  auto it = vectors_.find(std::string(word));
  return it == vectors_.end() ? nullptr : &it->second;
}

EmbeddingTable make_toy_embeddings(const ToyGrammarSpec& spec, std::size_t dim,
                                   std::uint64_t seed) {
  const ToyGrammar grammar(spec);
  Rng rng(seed);
  auto gaussian = [&] {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    return v;
  };
  std::unordered_map<std::string, std::vector<double>> centroids;
  for (const auto& [cls, words] : spec.slots) centroids.emplace(cls, gaussian());

  EmbeddingTable table(dim);
  for (const auto& word : grammar.surface_words()) {
    auto v = gaussian();
    const auto it = grammar.word_classes().find(word);
    if (it != grammar.word_classes().end()) {
      const auto& c = centroids.at(it->second);
      for (std::size_t k = 0; k < dim; ++k) v[k] = 0.55 * c[k] + 0.835 * v[k];
    }
    table.add(word, std::move(v));
  }
  return table;
}

void RewardConfig::validate() const {
  if (!embeddings || embeddings->size() == 0)
    throw std::invalid_argument("reward config needs a non-empty embedding table");
  if (!stopwords) throw std::invalid_argument("reward config needs a stopword list");
  if (!(clamp_threshold >= 0.0 && clamp_threshold <= 1.0))
    throw std::invalid_argument("clamp_threshold outside [0, 1]");
}

SentenceEmbedding sentence_embedding(std::span<const std::string> tokens, const RewardConfig& cfg) {
  std::vector<const std::string*> kept;
  for (const auto& t : tokens)
    if (!cfg.stopwords->contains(t) && cfg.embeddings->find(t)) kept.push_back(&t);
  if (kept.empty()) return std::nullopt;
  std::sort(kept.begin(), kept.end(), [](auto* a, auto* b) { return *a < *b; });

  std::vector<double> sum(cfg.embeddings->dim(), 0.0);
  for (const auto* t : kept) {
    const auto& v = *cfg.embeddings->find(*t);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[k];
  }
  double sq = 0.0;
  for (double x : sum) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0)) return std::nullopt;
  for (auto& x : sum) x /= norm;
  return sum;
}

SentenceEmbedding sentence_embedding(std::string_view text, const RewardConfig& cfg) {
  const auto tokens = tokenize(text);
  return sentence_embedding(std::span<const std::string>(tokens), cfg);
}

std::optional<double> cosine(const SentenceEmbedding& a, const SentenceEmbedding& b) {
  if (!a || !b) return std::nullopt;
  if (*a == *b) return 1.0;
  double dot = 0.0;
  for (std::size_t k = 0; k < a->size(); ++k) dot += (*a)[k] * (*b)[k];
  return std::clamp(dot, -1.0, 1.0);
}

std::optional<double> similarity(std::string_view a, std::string_view b, const RewardConfig& cfg) {
  return cosine(sentence_embedding(a, cfg), sentence_embedding(b, cfg));
}

double clamp_reward(std::optional<double> raw, double threshold) {
  if (!raw || *raw < threshold) return 0.0;
  return *raw;
}

double reward(std::string_view input, std::string_view target, BlackBox& env,
              const RewardConfig& cfg) {
  const std::string output = env.query(input);
  return clamp_reward(similarity(target, output, cfg), cfg.clamp_threshold);
}

}  // namespace rdg
