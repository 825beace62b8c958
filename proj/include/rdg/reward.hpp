#pragma once

// Embedding-average sentence similarity and the clamped training reward.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rdg/black_box.hpp"
#include "rdg/text.hpp"

namespace rdg {

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  /// Whitespace-delimited text: optional `count dim` header, then
  /// `word v_1 .. v_d` per line. Duplicate words keep their first vector.
  static EmbeddingTable load(const std::filesystem::path& path);
  /// Writes a header line and entries in insertion order.
  void save(const std::filesystem::path& path) const;

  /// Returns false (and keeps the old vector) when the word already exists.
  bool add(std::string word, std::vector<double> vec);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<double>* find(std::string_view word) const;
  std::span<const std::string> words() const { return words_; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

inline EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  return EmbeddingTable::load(path);
}

/// Word vectors for every surface word of a toy grammar: words of one slot
/// class share a class direction plus individual noise; template words are
/// independent.
EmbeddingTable make_toy_embeddings(const ToyGrammarSpec& spec, std::size_t dim,
                                   std::uint64_t seed);

struct RewardConfig {
  std::shared_ptr<const EmbeddingTable> embeddings;
  std::shared_ptr<const StopwordList> stopwords;
  double clamp_threshold = 0.5;

  void validate() const;
};

using SentenceEmbedding = std::optional<std::vector<double>>;

/// Unit-normalized sum of the vectors of tokens that are neither stopwords
/// nor out of vocabulary; nullopt when nothing contributes or the sum is zero.
/// Vectors are summed in sorted token order, so the result is exactly
/// invariant to token order.
SentenceEmbedding sentence_embedding(std::span<const std::string> tokens, const RewardConfig& cfg);
SentenceEmbedding sentence_embedding(std::string_view text, const RewardConfig& cfg);

/// Cosine of two sentence embeddings in [-1, 1]; nullopt when either is
/// undefined. Identical embeddings give exactly 1.
std::optional<double> similarity(std::string_view a, std::string_view b, const RewardConfig& cfg);
std::optional<double> cosine(const SentenceEmbedding& a, const SentenceEmbedding& b);

/// Undefined or below-threshold similarities become 0.
double clamp_reward(std::optional<double> raw, double threshold);

/// Clamped similarity between `target` and the environment's response to
/// `input`. Uses exactly one query.
double reward(std::string_view input, std::string_view target, BlackBox& env,
              const RewardConfig& cfg);

}  // namespace rdg
