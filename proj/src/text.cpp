#include "rdg/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "rdg/random.hpp"

namespace rdg {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    const auto c = static_cast<unsigned char>(ch);
    if (ch == '<') {
      const auto* reserved =
          std::find_if(std::begin(Vocabulary::kReservedSurfaces), std::end(Vocabulary::kReservedSurfaces),
                       [&](std::string_view s) { return text.substr(i, s.size()) == s; });
      if (reserved != std::end(Vocabulary::kReservedSurfaces)) {
        flush();
        tokens.emplace_back(*reserved);
        i += reserved->size() - 1;
        continue;
      }
    }
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string normalize_text(std::string_view text) { return join_tokens(tokenize(text)); }

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (auto s : kReservedSurfaces) {
    index_.emplace(std::string(s), static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(s);
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size) {
  if (max_size < ids::reserved) throw std::invalid_argument("vocabulary max_size below 4");
  if (texts.empty()) throw std::invalid_argument("empty corpus");

  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats;  // count, first
  std::size_t order = 0;
  for (const auto& text : texts) {
    for (auto& tok : tokenize(text)) {
      auto [it, fresh] = stats.try_emplace(std::move(tok), 0, order);
      if (fresh) ++order;
      ++it->second.first;
    }
  }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(stats.begin(),
                                                                                  stats.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  Vocabulary vocab;
  for (const auto& [tok, stat] : ranked) {
    if (vocab.size() >= max_size) break;
    if (vocab.contains(tok)) continue;  // a corpus token spelled like a reserved surface
    vocab.index_.emplace(tok, static_cast<TokenId>(vocab.tokens_.size()));
    vocab.tokens_.push_back(tok);
  }
  return vocab;
}

Vocabulary Vocabulary::build(std::span<const TextPair> corpus, std::size_t max_size) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size() * 2);
  for (const auto& p : corpus) {
    texts.push_back(p.input);
    texts.push_back(p.output);
  }
  return build(texts, max_size);
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> corpus_tokens) {
  Vocabulary vocab;
  for (const auto& tok : corpus_tokens) {
    if (tok.empty() || std::any_of(tok.begin(), tok.end(),
                                   [](char c) { return is_space(static_cast<unsigned char>(c)); }))
      throw std::invalid_argument("invalid token '" + tok + "'");
    if (!vocab.index_.emplace(tok, static_cast<TokenId>(vocab.tokens_.size())).second)
      throw std::invalid_argument("duplicate token '" + tok + "'");
    vocab.tokens_.push_back(tok);
  }
  return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? ids::unk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw std::out_of_range("token id out of range");
  return tokens_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  auto out = open_output(path);
  for (std::size_t i = ids::reserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  return from_tokens(load_lines(path));
}

Utterance encode(std::string_view text, const Vocabulary& vocab) {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw std::invalid_argument("empty utterance");
  Utterance ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

std::string decode(std::span<const TokenId> utterance, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < utterance.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(utterance[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

StopwordList StopwordList::default_list() {
  std::unordered_set<std::string> tokens;
  for (int c = 0; c < 0x80; ++c)
    if (is_punct(static_cast<unsigned char>(c))) tokens.emplace(1, static_cast<char>(c));
  for (auto s : Vocabulary::kReservedSurfaces) tokens.emplace(s);
  return StopwordList(std::move(tokens));
}

StopwordList StopwordList::load(const std::filesystem::path& path) {
  std::unordered_set<std::string> tokens;
  for (auto& line : load_lines(path)) tokens.insert(std::move(line));
  return StopwordList(std::move(tokens));
}

void StopwordList::save(const std::filesystem::path& path) const {
  std::vector<std::string> sorted(tokens_.begin(), tokens_.end());
  std::sort(sorted.begin(), sorted.end());
  save_lines(sorted, path);
}

// ---------------------------------------------------------------------------

std::vector<TextPair> load_corpus(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<TextPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("missing TAB separator", line_no);
    if (line.find('\t', tab + 1) != std::string::npos)
      throw ParseError("more than one TAB separator", line_no);
    TextPair pair{line.substr(0, tab), line.substr(tab + 1)};
    if (tokenize(pair.input).empty() || tokenize(pair.output).empty())
      throw ParseError("empty side", line_no);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_corpus(std::span<const TextPair> pairs, const std::filesystem::path& path,
                 std::string_view header_comment) {
  auto out = open_output(path);
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  for (const auto& p : pairs) {
    if (p.input.find_first_of("\t\n") != std::string::npos ||
        p.output.find_first_of("\t\n") != std::string::npos)
      throw std::invalid_argument("corpus text contains TAB or newline");
    out << p.input << '\t' << p.output << '\n';
  }
}

std::vector<std::string> load_lines(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

void save_lines(std::span<const std::string> lines, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& l : lines) out << l << '\n';
}

// ---------------------------------------------------------------------------

ToyGrammarSpec ToyGrammarSpec::default_spec() {
  ToyGrammarSpec spec;
  spec.slots = {
      {"person",
       {"alice", "bob", "carol", "dave", "emma", "frank", "grace", "henry", "iris", "jack", "kate",
        "liam", "mia", "noah", "olive", "paul"}},
      {"thing", {"car",   "dog",  "cat",  "book",   "phone", "house", "job",
                 "game",  "movie", "song", "team",  "city",  "coffee", "pizza",
                 "bike",  "plan", "party", "class", "trip",  "show"}},
      {"adj",
       {"good", "bad", "great", "fine", "nice", "cool", "awful", "weird", "fun", "boring", "busy",
        "quiet", "loud", "cheap", "new", "old"}},
      {"place",
       {"school", "work", "home", "park", "beach", "mall", "gym", "office", "church", "store",
        "library", "station"}},
      {"verb",
       {"like", "love", "hate", "miss", "need", "want", "see", "call", "visit", "watch", "read",
        "play"}},
      {"time", {"today", "tonight", "tomorrow", "monday", "friday", "later", "soon", "now"}},
      {"feel", {"happy", "sad", "tired", "excited", "angry", "bored", "ready", "nervous"}},
  };
  spec.templates = {
      {"how is your {thing} ?", "{adj<thing}"},
      {"what do you think about {person} ?", "{feel<person}"},
      {"do you {verb} the {thing} ?", "{feel<verb} about {thing}"},
      {"where is {person} going {time} ?", "to the {place<person}"},
      {"hi {person}", "hey {person}"},
      {"when is the {thing} ?", "{time<thing}"},
      {"how was the {thing} at the {place} ?", "the {thing} was {adj<place}"},
      {"is {person} at the {place} {time} ?", "{person} is at the {place<person} {time}"},
      {"can we {verb} something {time} ?", "i want to {verb} {time}"},
      {"tell me about your {thing} at {place}", "i ' m {feel<place} about my {adj<thing} {thing}"},
      {"why did {person} {verb} the {thing} ?",
       "because {person} is {feel<verb} and the {thing} is {adj<thing}"},
      {"what are you doing {time} ?", "i ' m going to the {place<time} {time}"},
      {"did {person} {verb} the {thing} {time} ?", "{feel<verb} {time}"},
      {"who is at the {place} with {person} ?", "{person<place}"},
      {"what should i get {person} for the {thing} ?", "a {thing<person}"},
  };
  return spec;
}

ToyGrammar::ToyGrammar(ToyGrammarSpec spec) : spec_(std::move(spec)) {
  if (spec_.templates.empty()) throw std::invalid_argument("toy grammar has no templates");
  if (spec_.noise_rate < 0.0 || spec_.noise_rate > 1.0)
    throw std::invalid_argument("noise_rate outside [0, 1]");
  for (const auto& [cls, words] : spec_.slots) {
    if (words.empty()) throw std::invalid_argument("slot class '" + cls + "' is empty");
    for (const auto& w : words)
      if (!word_class_.emplace(w, cls).second)
        throw std::invalid_argument("slot word '" + w + "' appears in two classes");
  }

  auto parse = [&](const std::string& pattern, bool output,
                   const std::vector<std::string>& bound) {
    std::vector<Piece> pieces;
    std::istringstream in(pattern);
    std::string word;
    while (in >> word) {
      if (word.size() > 2 && word.front() == '{' && word.back() == '}') {
        const std::string body = word.substr(1, word.size() - 2);
        const auto lt = body.find('<');
        Piece p{lt == std::string::npos ? Piece::Kind::slot : Piece::Kind::mapped, {},
                body.substr(0, lt), lt == std::string::npos ? "" : body.substr(lt + 1)};
        if (!spec_.slots.contains(p.slot_class) ||
            (p.kind == Piece::Kind::mapped && !spec_.slots.contains(p.source_class)))
          throw std::invalid_argument("unknown slot class in '" + pattern + "'");
        if (output) {
          const auto& src = p.kind == Piece::Kind::slot ? p.slot_class : p.source_class;
          if (std::find(bound.begin(), bound.end(), src) == bound.end())
            throw std::invalid_argument("output references unbound slot in '" + pattern + "'");
        } else if (p.kind == Piece::Kind::mapped) {
          throw std::invalid_argument("mapped slot in input pattern '" + pattern + "'");
        }
        pieces.push_back(std::move(p));
      } else {
        pieces.push_back({Piece::Kind::literal, word, {}, {}});
      }
    }
    if (pieces.empty()) throw std::invalid_argument("empty template pattern");
    return pieces;
  };

  for (const auto& t : spec_.templates) {
    Template tpl;
    tpl.input = parse(t.input, false, {});
    for (const auto& p : tpl.input) {
      if (p.kind != Piece::Kind::slot) continue;
      if (std::find(tpl.input_slots.begin(), tpl.input_slots.end(), p.slot_class) !=
          tpl.input_slots.end())
        throw std::invalid_argument("slot class bound twice in '" + t.input + "'");
      tpl.input_slots.push_back(p.slot_class);
    }
    tpl.output = parse(t.output, true, tpl.input_slots);
    for (const auto& p : tpl.output) {
      if (p.kind != Piece::Kind::mapped) continue;
      auto key = std::make_pair(p.slot_class, p.source_class);
      if (maps_.contains(key)) continue;
      const std::size_t n_in = spec_.slots.at(p.source_class).size();
      const std::size_t n_out = spec_.slots.at(p.slot_class).size();
      std::vector<std::size_t> perm(n_in);
      for (std::size_t i = 0; i < n_in; ++i) perm[i] = i;
      Rng rng(derive_seed(spec_.seed, fnv1a(p.slot_class + "<" + p.source_class)));
      rng.shuffle(std::span<std::size_t>(perm));
      for (auto& v : perm) v %= n_out;
      maps_.emplace(std::move(key), std::move(perm));
    }
    templates_.push_back(std::move(tpl));
  }
}

std::size_t ToyGrammar::combinations() const {
  std::size_t total = 0;
  for (const auto& t : templates_) {
    std::size_t n = 1;
    for (const auto& cls : t.input_slots) n *= spec_.slots.at(cls).size();
    total += n;
  }
  return total;
}

const std::string& ToyGrammar::mapped_word(const std::string& out_class,
                                           const std::string& in_class,
                                           std::size_t in_value) const {
  const auto& map = maps_.at({out_class, in_class});
  return spec_.slots.at(out_class)[map[in_value]];
}

std::string ToyGrammar::render_input(const Draw& draw) const {
  const auto& t = templates_.at(draw.template_index);
  std::vector<std::string> words;
  std::size_t slot = 0;
  for (const auto& p : t.input) {
    if (p.kind == Piece::Kind::literal)
      words.push_back(p.literal);
    else
      words.push_back(spec_.slots.at(p.slot_class)[draw.slot_values.at(slot++)]);
  }
  return join_tokens(words);
}

std::string ToyGrammar::render_output(const Draw& draw) const {
  const auto& t = templates_.at(draw.template_index);
  auto value_of = [&](const std::string& cls) {
    const auto pos = std::find(t.input_slots.begin(), t.input_slots.end(), cls);
    return draw.slot_values.at(static_cast<std::size_t>(pos - t.input_slots.begin()));
  };
  std::vector<std::string> words;
  for (const auto& p : t.output) {
    switch (p.kind) {
      case Piece::Kind::literal:
        words.push_back(p.literal);
        break;
      case Piece::Kind::slot:
        words.push_back(spec_.slots.at(p.slot_class)[value_of(p.slot_class)]);
        break;
      case Piece::Kind::mapped:
        words.push_back(mapped_word(p.slot_class, p.source_class, value_of(p.source_class)));
        break;
    }
  }
  return join_tokens(words);
}

ToyGrammar::Draw ToyGrammar::draw(std::uint64_t seed) const {
  Rng rng(seed);
  Draw d{rng.index(templates_.size()), {}};
  for (const auto& cls : templates_[d.template_index].input_slots)
    d.slot_values.push_back(rng.index(spec_.slots.at(cls).size()));
  return d;
}

ToyGrammar::Draw ToyGrammar::nth(std::size_t index) const {
  for (std::size_t ti = 0; ti < templates_.size(); ++ti) {
    std::size_t n = 1;
    for (const auto& cls : templates_[ti].input_slots) n *= spec_.slots.at(cls).size();
    if (index < n) {
      Draw d{ti, {}};
      for (const auto& cls : templates_[ti].input_slots) {
        const std::size_t radix = spec_.slots.at(cls).size();
        d.slot_values.push_back(index % radix);
        index /= radix;
      }
      return d;
    }
    index -= n;
  }
  throw std::out_of_range("grammar combination index out of range");
}

std::optional<std::string> ToyGrammar::respond(std::string_view input) const {
  const auto tokens = tokenize(input);
  for (std::size_t ti = 0; ti < templates_.size(); ++ti) {
    const auto& t = templates_[ti];
    if (t.input.size() != tokens.size()) continue;
    Draw d{ti, {}};
    bool ok = true;
    for (std::size_t i = 0; i < tokens.size() && ok; ++i) {
      const auto& p = t.input[i];
      if (p.kind == Piece::Kind::literal) {
        ok = p.literal == tokens[i];
        continue;
      }
      const auto& words = spec_.slots.at(p.slot_class);
      const auto it = std::find(words.begin(), words.end(), tokens[i]);
      ok = it != words.end();
      if (ok) d.slot_values.push_back(static_cast<std::size_t>(it - words.begin()));
    }
    if (ok) return render_output(d);
  }
  return std::nullopt;
}

std::vector<std::string> ToyGrammar::surface_words() const {
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& w) {
    if (seen.insert(w).second) words.push_back(w);
  };
  for (const auto& t : templates_) {
    for (const auto* side : {&t.input, &t.output})
      for (const auto& p : *side)
        if (p.kind == Piece::Kind::literal) add(p.literal);
  }
  for (const auto& [cls, ws] : spec_.slots)
    for (const auto& w : ws) add(w);
  return words;
}

std::vector<TextPair> generate_toy_corpus(const ToyGrammarSpec& spec, std::size_t n_pairs) {
  if (n_pairs == 0) throw std::invalid_argument("n_pairs must be at least 1");
  const ToyGrammar grammar(spec);
  const std::size_t combos = grammar.combinations();

  std::vector<ToyGrammar::Draw> draws;
  draws.reserve(n_pairs);
  if (n_pairs > combos) {
    for (std::size_t i = 0; i < n_pairs; ++i) draws.push_back(grammar.draw(derive_seed(spec.seed, i)));
  } else if (2 * n_pairs > combos) {
    std::vector<std::size_t> order(combos);
    for (std::size_t i = 0; i < combos; ++i) order[i] = i;
    Rng rng(derive_seed(spec.seed, 0xc0ffee));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < n_pairs; ++i) draws.push_back(grammar.nth(order[i]));
  } else {
    std::unordered_set<std::string> seen;
    for (std::uint64_t k = 0; draws.size() < n_pairs; ++k) {
      auto d = grammar.draw(derive_seed(spec.seed, k));
      if (seen.insert(grammar.render_input(d)).second) draws.push_back(std::move(d));
    }
  }

  Rng noise(derive_seed(spec.seed, 0x6e6f697365ULL));
  std::vector<TextPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    TextPair pair{grammar.render_input(draws[i]), grammar.render_output(draws[i])};
    if (spec.noise_rate > 0.0 && noise.bernoulli(spec.noise_rate)) {
      for (int attempt = 0; attempt < 16; ++attempt) {
        auto other = grammar.render_output(grammar.draw(noise.next()));
        if (other != pair.output) {
          pair.output = std::move(other);
          break;
        }
      }
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<std::string> generate_posts(const ToyGrammarSpec& spec, std::size_t n,
                                        std::uint64_t stream,
                                        const std::unordered_set<std::string>& exclude) {
  const ToyGrammar grammar(spec);
  std::vector<std::string> posts;
  std::unordered_set<std::string> seen;
  const std::uint64_t base = derive_seed(spec.seed, stream);
  const std::size_t max_attempts = 64 * n + 1024;
  for (std::uint64_t k = 0; posts.size() < n && k < max_attempts; ++k) {
    auto text = grammar.render_input(grammar.draw(derive_seed(base, k)));
    if (exclude.contains(text) || !seen.insert(text).second) continue;
    posts.push_back(std::move(text));
  }
  return posts;
}

}  // namespace rdg
