#pragma once

// Multi-layer LSTM encoder-decoder shared by the dialogue environment and the
// reverse generator. The decoder starts from the encoder's final (h, c) state
// layer by layer; there is no attention.
//
// Output support. The decoder's distribution at output position t (1-based)
// never includes PAD or SOS, excludes EOS at t = 1 and is restricted to EOS at
// t = max_len + 1. Every sequence with positive probability is therefore a
// valid utterance of 1..max_len tokens, and the probabilities of all such
// sequences sum to one.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdg/text.hpp"

namespace rdg {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  std::size_t size() const { return values.size(); }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  bool operator==(const Tensor&) const = default;
};

struct Seq2SeqHyper {
  std::size_t vocab_size = 0;
  std::size_t emb_size = 32;
  std::size_t hidden_size = 64;
  std::size_t n_layers = 1;
  std::size_t max_len = 20;

  void validate() const;
  bool operator==(const Seq2SeqHyper&) const = default;
};

/// All trainable tensors, in a fixed order:
///   embedding            V x E      shared by encoder and decoder inputs
///   enc.{l}.weight       4H x (in + H), gate rows ordered i, f, g, o
///   enc.{l}.bias         4H x 1
///   dec.{l}.weight / dec.{l}.bias   as above
///   out.weight           V x H
///   out.bias             V x 1
/// where in = E for layer 0 and H above it.
class Seq2SeqParams {
 public:
  Seq2SeqParams() = default;
  /// Zero-filled tensors of the documented shapes.
  explicit Seq2SeqParams(const Seq2SeqHyper& hyper);

  // Copies get a fresh identity so caches from one copy are rejected by another.
  Seq2SeqParams(const Seq2SeqParams& other);
  Seq2SeqParams& operator=(const Seq2SeqParams& other);
  Seq2SeqParams(Seq2SeqParams&&) noexcept = default;
  Seq2SeqParams& operator=(Seq2SeqParams&&) noexcept = default;

  const Seq2SeqHyper& hyper() const { return hyper_; }
  std::size_t tensor_count() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }
  std::span<const Tensor> tensors() const { return tensors_; }
  std::optional<std::size_t> find(std::string_view name) const;

  /// Mutable access invalidates caches built from earlier values.
  Tensor& mutable_tensor(std::size_t i) {
    ++version_;
    return tensors_.at(i);
  }

  std::size_t embedding() const { return 0; }
  std::size_t enc_weight(std::size_t layer) const { return 1 + 2 * layer; }
  std::size_t enc_bias(std::size_t layer) const { return 2 + 2 * layer; }
  std::size_t dec_weight(std::size_t layer) const { return 1 + 2 * (hyper_.n_layers + layer); }
  std::size_t dec_bias(std::size_t layer) const { return 2 + 2 * (hyper_.n_layers + layer); }
  std::size_t out_weight() const { return 1 + 4 * hyper_.n_layers; }
  std::size_t out_bias() const { return 2 + 4 * hyper_.n_layers; }

  std::size_t parameter_count() const;
  bool all_finite() const;

  struct Identity {
    std::uint64_t id = 0;
    std::uint64_t version = 0;
    bool operator==(const Identity&) const = default;
  };
  Identity identity() const { return {id_, version_}; }

  /// Tensor-wise equality; identity is ignored.
  bool same_values(const Seq2SeqParams& other) const {
    return hyper_ == other.hyper_ && tensors_ == other.tensors_;
  }

 private:
  Seq2SeqHyper hyper_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

/// Uniform(-1/sqrt(H), 1/sqrt(H)) for every tensor; deterministic under seed.
Seq2SeqParams init_params(const Seq2SeqHyper& hyper, std::uint64_t seed);

/// One gradient tensor per parameter tensor.
struct GradientSet {
  std::vector<Tensor> tensors;

  static GradientSet zeros_like(const Seq2SeqParams& params);
  void add(const GradientSet& other, double scale = 1.0);
  void scale(double factor);
  void set_zero();
  double global_norm() const;
  bool all_finite() const;
  bool congruent_with(const Seq2SeqParams& params) const;
};

// ---------------------------------------------------------------------------
// Teacher-forced forward / backward

struct DropoutSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
  bool active() const { return rate > 0.0; }
};

/// Activations recorded by a forward pass. Only meaningful together with the
/// parameter object (and version) that produced it.
struct SequenceCache {
  struct LayerStep {
    std::vector<double> xh;     // [input ; h_prev]
    std::vector<double> c_prev;
    std::vector<double> gates;  // post-activation i, f, g, o
    std::vector<double> c;
    std::vector<double> tanh_c;
    std::vector<double> h;
  };
  struct Stack {
    std::vector<std::vector<LayerStep>> steps;         // [layer][t]
    std::vector<std::vector<std::vector<double>>> masks;  // [layer][t], layers >= 1
  };

  Seq2SeqParams::Identity owner;
  std::vector<TokenId> source;
  std::vector<TokenId> decoder_inputs;   // SOS, w_1 .. w_T
  std::vector<TokenId> decoder_targets;  // w_1 .. w_T, EOS
  Stack encoder;
  Stack decoder;
  std::vector<std::vector<double>> top;        // projection inputs (after dropout)
  std::vector<std::vector<double>> top_masks;  // empty without dropout
  std::vector<std::vector<double>> probs;      // step distributions
  double log_prob = 0.0;
  /// d(objective)/d(log_prob): 1 for forward(), -1/(T+1) for forward_nll().
  double objective_scale = 1.0;
};

struct ForwardResult {
  double log_prob;
  SequenceCache cache;
};

/// log P(target | source) including the EOS factor. Throws on empty or
/// over-long sequences.
ForwardResult forward(const Seq2SeqParams& params, std::span<const TokenId> source,
                      std::span<const TokenId> target, const DropoutSpec& dropout = {});

struct NllResult {
  double loss;  // mean per target token, EOS included
  SequenceCache cache;
};
NllResult forward_nll(const Seq2SeqParams& params, const DialoguePair& pair,
                      const DropoutSpec& dropout = {});

/// out += weight * d(objective)/d(theta) for the objective recorded in the
/// cache. Throws std::invalid_argument("stale cache") if `params` changed.
void accumulate_gradient(const Seq2SeqParams& params, const SequenceCache& cache, double weight,
                         GradientSet& out);

/// Gradient of the cache's objective (the NLL for forward_nll caches).
GradientSet backward(const Seq2SeqParams& params, const SequenceCache& cache);

double sequence_log_prob(const Seq2SeqParams& params, std::span<const TokenId> condition,
                         std::span<const TokenId> utterance);

// ---------------------------------------------------------------------------
// Incremental decoding

struct DecoderState {
  std::vector<std::vector<double>> h;  // per layer
  std::vector<std::vector<double>> c;
  std::size_t position = 1;            // output position predicted next
};

DecoderState encode_condition(const Seq2SeqParams& params, std::span<const TokenId> condition);

/// True when `token` has non-zero probability at output `position`.
bool in_support(TokenId token, std::size_t position, std::size_t max_len);

struct StepOutput {
  std::vector<double> distribution;
  DecoderState next;
};
/// One factor of the sequence product: the masked softmax over the vocabulary
/// after feeding `prev` in `state`.
StepOutput decode_step(const Seq2SeqParams& params, const DecoderState& state, TokenId prev);

/// Masked softmax of raw logits at output `position`.
std::vector<double> masked_softmax(std::span<const double> logits, std::size_t position,
                                   std::size_t max_len);

enum class DecodeMode { greedy, sample, beam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  std::size_t beam_width = 1;
  std::size_t n_candidates = 1;
  bool length_normalization = false;
};

struct Hypothesis {
  Utterance tokens;
  double log_prob = 0.0;
};

/// greedy / sample return one hypothesis; beam returns up to n_candidates,
/// best first. Ties in greedy go to the lowest id; ties in beam ranking go to
/// the lexicographically smaller token sequence.
std::vector<Hypothesis> generate(const Seq2SeqParams& params, std::span<const TokenId> condition,
                                 const DecodeConfig& cfg, std::uint64_t seed = 0);

}  // namespace rdg
