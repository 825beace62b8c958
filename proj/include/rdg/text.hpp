#pragma once

// Text ingestion: tokenization, vocabularies, corpus files, stopwords and the
// synthetic toy dialogue grammar.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace rdg {

using TokenId = std::uint32_t;

namespace ids {
inline constexpr TokenId pad = 0;
inline constexpr TokenId sos = 1;
inline constexpr TokenId eos = 2;
inline constexpr TokenId unk = 3;
inline constexpr std::size_t reserved = 4;
}  // namespace ids

/// Token ids of one sentence, without framing tokens.
using Utterance = std::vector<TokenId>;

struct TextPair {
  std::string input;
  std::string output;
  bool operator==(const TextPair&) const = default;
};

struct DialoguePair {
  Utterance input;
  Utterance output;
};

/// Error raised while parsing a line-oriented file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " at line " + std::to_string(line)), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Lowercases ASCII, splits on whitespace and isolates every ASCII punctuation
/// character as its own token ("I'm" -> "i" "'" "m"). The reserved surfaces
/// "<pad>", "<sos>", "<eos>" and "<unk>" stay single tokens.
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

/// Re-tokenizes and joins with single spaces.
std::string normalize_text(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::string_view kReservedSurfaces[ids::reserved] = {"<pad>", "<sos>", "<eos>",
                                                                        "<unk>"};

  Vocabulary();

  /// Keeps the most frequent tokens of `texts` up to max_size - 4 entries;
  /// frequency ties go to the token seen first.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_size);
  static Vocabulary build(std::span<const TextPair> corpus, std::size_t max_size);

  /// Corpus tokens in id order (reserved entries excluded).
  static Vocabulary from_tokens(std::span<const std::string> corpus_tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::span<const std::string> tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Throws std::invalid_argument("empty utterance") when `text` has no tokens.
Utterance encode(std::string_view text, const Vocabulary& vocab);
std::string decode(std::span<const TokenId> utterance, const Vocabulary& vocab);

class StopwordList {
 public:
  StopwordList() = default;
  explicit StopwordList(std::unordered_set<std::string> tokens) : tokens_(std::move(tokens)) {}

  /// ASCII punctuation plus the reserved token surfaces.
  static StopwordList default_list();
  static StopwordList load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool contains(std::string_view token) const { return tokens_.contains(std::string(token)); }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::unordered_set<std::string> tokens_;
};

// ---------------------------------------------------------------------------
// Corpus files: one `input<TAB>output` pair per line, LF or CRLF. Lines that
// start with '#' are comments.

std::vector<TextPair> load_corpus(const std::filesystem::path& path);
void save_corpus(std::span<const TextPair> pairs, const std::filesystem::path& path,
                 std::string_view header_comment = {});

std::vector<std::string> load_lines(const std::filesystem::path& path);
void save_lines(std::span<const std::string> lines, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Toy grammar
//
// A template pairs an input pattern with an output pattern. `{class}` in the
// input binds a slot; in the output `{class}` copies the bound word and
// `{out<in}` maps the word bound to `in` onto the `out` vocabulary through a
// fixed seeded function.

struct TemplateSpec {
  std::string input;
  std::string output;
};

struct ToyGrammarSpec {
  std::vector<TemplateSpec> templates;
  std::map<std::string, std::vector<std::string>> slots;
  /// Fraction of generated pairs whose output is replaced by the response to
  /// a different random input.
  double noise_rate = 0.0;
  std::uint64_t seed = 7;

  static ToyGrammarSpec default_spec();
};

class ToyGrammar {
 public:
  explicit ToyGrammar(ToyGrammarSpec spec);

  const ToyGrammarSpec& spec() const { return spec_; }

  /// Distinct inputs the grammar can produce.
  std::size_t combinations() const;

  /// Applies the response rule to an input. Returns nullopt when the input
  /// matches no template.
  std::optional<std::string> respond(std::string_view input) const;

  /// Every surface word the grammar can emit, in first-seen order.
  std::vector<std::string> surface_words() const;

  /// Slot class of each slot word; template words are absent.
  const std::unordered_map<std::string, std::string>& word_classes() const { return word_class_; }

  struct Draw {
    std::size_t template_index;
    std::vector<std::size_t> slot_values;
  };
  std::string render_input(const Draw& draw) const;
  std::string render_output(const Draw& draw) const;
  Draw draw(std::uint64_t seed) const;
  Draw nth(std::size_t index) const;

 private:
  struct Piece {
    enum class Kind { literal, slot, mapped } kind;
    std::string literal;
    std::string slot_class;
    std::string source_class;
  };
  struct Template {
    std::vector<Piece> input;
    std::vector<Piece> output;
    std::vector<std::string> input_slots;
  };

  const std::string& mapped_word(const std::string& out_class, const std::string& in_class,
                                 std::size_t in_value) const;

  ToyGrammarSpec spec_;
  std::vector<Template> templates_;
  std::unordered_map<std::string, std::string> word_class_;
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> maps_;
};

/// Deterministic under spec.seed. Draws distinct inputs while n_pairs fits in
/// the grammar's combinations, with replacement beyond that.
std::vector<TextPair> generate_toy_corpus(const ToyGrammarSpec& spec, std::size_t n_pairs);

/// Distinct grammar inputs drawn from an independent stream, skipping any in
/// `exclude`.
std::vector<std::string> generate_posts(const ToyGrammarSpec& spec, std::size_t n,
                                        std::uint64_t stream,
                                        const std::unordered_set<std::string>& exclude = {});

}  // namespace rdg
