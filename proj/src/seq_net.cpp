#include "rdg/seq_net.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rdg/kernels.hpp"
#include "rdg/random.hpp"

namespace rdg {

namespace {

std::atomic<std::uint64_t> g_next_param_id{1};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using LayerStep = SequenceCache::LayerStep;
using Stack = SequenceCache::Stack;
using Vec = std::vector<double>;

void lstm_forward(const Tensor& W, const Tensor& b, std::span<const double> x,
                  std::span<const double> h_prev, std::span<const double> c_prev, LayerStep& s) {
  const std::size_t H = h_prev.size();
  s.xh.assign(x.begin(), x.end());
  s.xh.insert(s.xh.end(), h_prev.begin(), h_prev.end());
  Vec z(b.values);
  kernels::gemv(W.values, W.rows, W.cols, s.xh, z);
  s.c_prev.assign(c_prev.begin(), c_prev.end());
  s.gates.resize(4 * H);
  s.c.resize(H);
  s.tanh_c.resize(H);
  s.h.resize(H);
  for (std::size_t k = 0; k < H; ++k) {
    const double i = sigmoid(z[k]);
    const double f = sigmoid(z[H + k]);
    const double g = std::tanh(z[2 * H + k]);
    const double o = sigmoid(z[3 * H + k]);
    s.gates[k] = i;
    s.gates[H + k] = f;
    s.gates[2 * H + k] = g;
    s.gates[3 * H + k] = o;
    s.c[k] = f * c_prev[k] + i * g;
    s.tanh_c[k] = std::tanh(s.c[k]);
    s.h[k] = o * s.tanh_c[k];
  }
}

Vec dropout_mask(Rng& rng, std::size_t n, double rate) {
  Vec mask(n);
  const double keep = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

Vec masked(std::span<const double> v, const Vec& mask) {
  Vec out(v.begin(), v.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= mask[k];
  return out;
}

struct StackWeights {
  std::size_t (Seq2SeqParams::*weight)(std::size_t) const;
  std::size_t (Seq2SeqParams::*bias)(std::size_t) const;
};
constexpr StackWeights kEncoder{&Seq2SeqParams::enc_weight, &Seq2SeqParams::enc_bias};
constexpr StackWeights kDecoder{&Seq2SeqParams::dec_weight, &Seq2SeqParams::dec_bias};

// Runs a layer stack over `tokens` starting from (h, c); leaves the final
// states in (h, c).
void run_stack(const Seq2SeqParams& p, const StackWeights& w, std::span<const TokenId> tokens,
               std::vector<Vec>& h, std::vector<Vec>& c, double dropout, Rng* rng, Stack& out) {
  const std::size_t L = p.hyper().n_layers;
  const Tensor& emb = p.tensor(p.embedding());
  out.steps.assign(L, std::vector<LayerStep>(tokens.size()));
  out.masks.assign(L, {});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Vec input(emb.row(tokens[t]).begin(), emb.row(tokens[t]).end());
    for (std::size_t l = 0; l < L; ++l) {
      if (l > 0 && rng) {
        out.masks[l].push_back(dropout_mask(*rng, input.size(), dropout));
        input = masked(input, out.masks[l].back());
      }
      LayerStep& s = out.steps[l][t];
      lstm_forward(p.tensor((p.*w.weight)(l)), p.tensor((p.*w.bias)(l)), input, h[l], c[l], s);
      h[l] = s.h;
      c[l] = s.c;
      input = s.h;
    }
  }
}

// Backpropagates through a stack. d_top[t] is the gradient reaching the top
// layer's output at t; (dh, dc) carry the gradient reaching the final states
// and return the gradient reaching the initial states.
void backprop_stack(const Seq2SeqParams& p, const StackWeights& w, const Stack& s,
                    std::span<const TokenId> tokens, const std::vector<Vec>* d_top,
                    std::vector<Vec>& dh, std::vector<Vec>& dc, GradientSet& g) {
  const std::size_t L = p.hyper().n_layers;
  const std::size_t H = p.hyper().hidden_size;
  Tensor& g_emb = g.tensors[p.embedding()];
  Vec above(H), dz(4 * H);
  for (std::size_t t = tokens.size(); t-- > 0;) {
    if (d_top)
      above = (*d_top)[t];
    else
      std::fill(above.begin(), above.end(), 0.0);
    for (std::size_t l = L; l-- > 0;) {
      const LayerStep& st = s.steps[l][t];
      const std::size_t wi = (p.*w.weight)(l);
      const Tensor& W = p.tensor(wi);
      Vec& dhl = dh[l];
      Vec& dcl = dc[l];
      for (std::size_t k = 0; k < H; ++k) {
        const double i = st.gates[k], f = st.gates[H + k], gg = st.gates[2 * H + k],
                     o = st.gates[3 * H + k];
        const double dh_k = above[k] + dhl[k];
        const double tc = st.tanh_c[k];
        const double d_o = dh_k * tc;
        const double dcell = dcl[k] + dh_k * o * (1.0 - tc * tc);
        dz[k] = dcell * gg * i * (1.0 - i);
        dz[H + k] = dcell * st.c_prev[k] * f * (1.0 - f);
        dz[2 * H + k] = dcell * i * (1.0 - gg * gg);
        dz[3 * H + k] = d_o * o * (1.0 - o);
        dcl[k] = dcell * f;
      }
      kernels::rank1_update(g.tensors[wi].values, W.rows, W.cols, dz, st.xh);
      auto& gb = g.tensors[(p.*w.bias)(l)].values;
      for (std::size_t k = 0; k < 4 * H; ++k) gb[k] += dz[k];
      Vec dxh(W.cols, 0.0);
      kernels::gemv_transposed(W.values, W.rows, W.cols, dz, dxh);
      const std::size_t in = W.cols - H;
      std::copy(dxh.begin() + static_cast<std::ptrdiff_t>(in), dxh.end(), dhl.begin());
      if (l > 0) {
        above.assign(dxh.begin(), dxh.begin() + static_cast<std::ptrdiff_t>(in));
        if (!s.masks[l].empty())
          for (std::size_t k = 0; k < in; ++k) above[k] *= s.masks[l][t][k];
      } else {
        auto row = g_emb.row(tokens[t]);
        for (std::size_t k = 0; k < in; ++k) row[k] += dxh[k];
      }
    }
  }
}

void check_sequence(const Seq2SeqParams& p, std::span<const TokenId> seq, const char* what) {
  if (seq.empty()) throw std::invalid_argument(std::string("empty ") + what);
  if (seq.size() > p.hyper().max_len)
    throw std::invalid_argument(std::string(what) + " longer than max_len");
  for (TokenId t : seq)
    if (t >= p.hyper().vocab_size) throw std::invalid_argument("token id outside vocabulary");
}

Vec project(const Seq2SeqParams& p, std::span<const double> top) {
  const Tensor& W = p.tensor(p.out_weight());
  Vec logits(p.tensor(p.out_bias()).values);
  kernels::gemv(W.values, W.rows, W.cols, top, logits);
  return logits;
}

}  // namespace

// ---------------------------------------------------------------------------

void Seq2SeqHyper::validate() const {
  if (vocab_size < 5) throw std::invalid_argument("vocab_size must be at least 5");
  if (emb_size == 0 || hidden_size == 0 || n_layers == 0)
    throw std::invalid_argument("emb_size, hidden_size and n_layers must be positive");
  if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");
}

Seq2SeqParams::Seq2SeqParams(const Seq2SeqHyper& hyper)
    : hyper_(hyper), id_(g_next_param_id.fetch_add(1)) {
  hyper_.validate();
  const std::size_t V = hyper.vocab_size, E = hyper.emb_size, H = hyper.hidden_size;
  auto add = [&](std::string name, std::size_t r, std::size_t c) {
    names_.push_back(std::move(name));
    tensors_.emplace_back(r, c);
  };
  add("embedding", V, E);
  for (const char* side : {"enc", "dec"}) {
    for (std::size_t l = 0; l < hyper.n_layers; ++l) {
      const std::string prefix = std::string(side) + "." + std::to_string(l);
      add(prefix + ".weight", 4 * H, (l == 0 ? E : H) + H);
      add(prefix + ".bias", 4 * H, 1);
    }
  }
  add("out.weight", V, H);
  add("out.bias", V, 1);
}

Seq2SeqParams::Seq2SeqParams(const Seq2SeqParams& other)
    : hyper_(other.hyper_),
      names_(other.names_),
      tensors_(other.tensors_),
      id_(g_next_param_id.fetch_add(1)) {}

Seq2SeqParams& Seq2SeqParams::operator=(const Seq2SeqParams& other) {
  if (this != &other) {
    hyper_ = other.hyper_;
    names_ = other.names_;
    tensors_ = other.tensors_;
    id_ = g_next_param_id.fetch_add(1);
    version_ = 0;
  }
  return *this;
}

std::optional<std::size_t> Seq2SeqParams::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

std::size_t Seq2SeqParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool Seq2SeqParams::all_finite() const {
  for (const auto& t : tensors_)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

Seq2SeqParams init_params(const Seq2SeqHyper& hyper, std::uint64_t seed) {
  Seq2SeqParams params(hyper);
  const double r = 1.0 / std::sqrt(static_cast<double>(hyper.hidden_size));
  Rng rng(seed);
  for (std::size_t i = 0; i < params.tensor_count(); ++i)
    for (auto& v : params.mutable_tensor(i).values) v = rng.uniform(-r, r);
  return params;
}

// ---------------------------------------------------------------------------

GradientSet GradientSet::zeros_like(const Seq2SeqParams& params) {
  GradientSet g;
  g.tensors.reserve(params.tensor_count());
  for (const auto& t : params.tensors()) g.tensors.emplace_back(t.rows, t.cols);
  return g;
}

void GradientSet::add(const GradientSet& other, double scale) {
  if (other.tensors.size() != tensors.size()) throw std::invalid_argument("gradient shape mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& a = tensors[i].values;
    const auto& b = other.tensors[i].values;
    if (a.size() != b.size()) throw std::invalid_argument("gradient shape mismatch");
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += scale * b[k];
  }
}

void GradientSet::scale(double factor) {
  for (auto& t : tensors)
    for (auto& v : t.values) v *= factor;
}

void GradientSet::set_zero() {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
}

double GradientSet::global_norm() const {
  double sq = 0.0;
  for (const auto& t : tensors)
    for (double v : t.values) sq += v * v;
  return std::sqrt(sq);
}

bool GradientSet::all_finite() const {
  for (const auto& t : tensors)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

bool GradientSet::congruent_with(const Seq2SeqParams& params) const {
  if (tensors.size() != params.tensor_count()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].rows != params.tensor(i).rows || tensors[i].cols != params.tensor(i).cols)
      return false;
  return true;
}

// ---------------------------------------------------------------------------

bool in_support(TokenId token, std::size_t position, std::size_t max_len) {
  if (token == ids::pad || token == ids::sos) return false;
  if (position > max_len) return token == ids::eos;
  if (token == ids::eos) return position >= 2;
  return true;
}

std::vector<double> masked_softmax(std::span<const double> logits, std::size_t position,
                                   std::size_t max_len) {
  const std::size_t V = logits.size();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < V; ++v)
    if (in_support(static_cast<TokenId>(v), position, max_len)) hi = std::max(hi, logits[v]);
  Vec p(V, 0.0);
  double sum = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    if (!in_support(static_cast<TokenId>(v), position, max_len)) continue;
    p[v] = std::exp(logits[v] - hi);
    sum += p[v];
  }
  for (auto& x : p) x /= sum;
  return p;
}

ForwardResult forward(const Seq2SeqParams& params, std::span<const TokenId> source,
                      std::span<const TokenId> target, const DropoutSpec& dropout) {
  check_sequence(params, source, "source");
  check_sequence(params, target, "target");
  if (dropout.rate < 0.0 || dropout.rate >= 1.0)
    throw std::invalid_argument("dropout rate outside [0, 1)");
  const auto& hp = params.hyper();
  const std::size_t L = hp.n_layers, H = hp.hidden_size;

  SequenceCache cache;
  cache.owner = params.identity();
  cache.source.assign(source.begin(), source.end());
  cache.decoder_inputs.push_back(ids::sos);
  cache.decoder_inputs.insert(cache.decoder_inputs.end(), target.begin(), target.end());
  cache.decoder_targets.assign(target.begin(), target.end());
  cache.decoder_targets.push_back(ids::eos);

  std::optional<Rng> rng;
  if (dropout.active()) rng.emplace(dropout.seed);
  Rng* rp = rng ? &*rng : nullptr;

  std::vector<Vec> h(L, Vec(H, 0.0)), c(L, Vec(H, 0.0));
  run_stack(params, kEncoder, cache.source, h, c, dropout.rate, rp, cache.encoder);
  run_stack(params, kDecoder, cache.decoder_inputs, h, c, dropout.rate, rp, cache.decoder);

  const std::size_t steps = cache.decoder_inputs.size();
  cache.top.resize(steps);
  cache.probs.resize(steps);
  double lp = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Vec& top = cache.decoder.steps[L - 1][t].h;
    if (rp) {
      cache.top_masks.push_back(dropout_mask(*rp, H, dropout.rate));
      cache.top[t] = masked(top, cache.top_masks.back());
    } else {
      cache.top[t] = top;
    }
    cache.probs[t] = masked_softmax(project(params, cache.top[t]), t + 1, hp.max_len);
    const double p = cache.probs[t][cache.decoder_targets[t]];
    if (p <= 0.0) throw std::invalid_argument("target token outside decoder support");
    lp += std::log(p);
  }
  cache.log_prob = lp;
  return {lp, std::move(cache)};
}

NllResult forward_nll(const Seq2SeqParams& params, const DialoguePair& pair,
                      const DropoutSpec& dropout) {
  auto [lp, cache] = forward(params, pair.input, pair.output, dropout);
  const double n = static_cast<double>(pair.output.size() + 1);
  cache.objective_scale = -1.0 / n;
  return {-lp / n, std::move(cache)};
}

void accumulate_gradient(const Seq2SeqParams& params, const SequenceCache& cache, double weight,
                         GradientSet& g) {
  if (!(cache.owner == params.identity())) throw std::invalid_argument("stale cache");
  if (!g.congruent_with(params)) throw std::invalid_argument("gradient shape mismatch");
  const auto& hp = params.hyper();
  const std::size_t L = hp.n_layers, H = hp.hidden_size, V = hp.vocab_size;
  const double w = weight * cache.objective_scale;
  const std::size_t steps = cache.decoder_inputs.size();

  const Tensor& Wout = params.tensor(params.out_weight());
  Tensor& gW = g.tensors[params.out_weight()];
  auto& gb = g.tensors[params.out_bias()].values;
  std::vector<Vec> d_top(steps, Vec(H, 0.0));
  Vec dlogit(V);
  for (std::size_t t = 0; t < steps; ++t) {
    const Vec& p = cache.probs[t];
    for (std::size_t v = 0; v < V; ++v) dlogit[v] = -w * p[v];
    dlogit[cache.decoder_targets[t]] += w;
    kernels::rank1_update(gW.values, V, H, dlogit, cache.top[t]);
    for (std::size_t v = 0; v < V; ++v) gb[v] += dlogit[v];
    kernels::gemv_transposed(Wout.values, V, H, dlogit, d_top[t]);
    if (!cache.top_masks.empty())
      for (std::size_t k = 0; k < H; ++k) d_top[t][k] *= cache.top_masks[t][k];
  }

  std::vector<Vec> dh(L, Vec(H, 0.0)), dc(L, Vec(H, 0.0));
  backprop_stack(params, kDecoder, cache.decoder, cache.decoder_inputs, &d_top, dh, dc, g);
  backprop_stack(params, kEncoder, cache.encoder, cache.source, nullptr, dh, dc, g);
}

GradientSet backward(const Seq2SeqParams& params, const SequenceCache& cache) {
  auto g = GradientSet::zeros_like(params);
  accumulate_gradient(params, cache, 1.0, g);
  return g;
}

double sequence_log_prob(const Seq2SeqParams& params, std::span<const TokenId> condition,
                         std::span<const TokenId> utterance) {
  return forward(params, condition, utterance).log_prob;
}

// ---------------------------------------------------------------------------

DecoderState encode_condition(const Seq2SeqParams& params, std::span<const TokenId> condition) {
  check_sequence(params, condition, "source");
  const std::size_t L = params.hyper().n_layers, H = params.hyper().hidden_size;
  DecoderState state{std::vector<Vec>(L, Vec(H, 0.0)), std::vector<Vec>(L, Vec(H, 0.0)), 1};
  Stack scratch;
  run_stack(params, kEncoder, condition, state.h, state.c, 0.0, nullptr, scratch);
  return state;
}

StepOutput decode_step(const Seq2SeqParams& params, const DecoderState& state, TokenId prev) {
  if (prev >= params.hyper().vocab_size) throw std::invalid_argument("token id outside vocabulary");
  StepOutput out{{}, state};
  const TokenId tok[1] = {prev};
  Stack scratch;
  run_stack(params, kDecoder, tok, out.next.h, out.next.c, 0.0, nullptr, scratch);
  out.distribution = masked_softmax(project(params, out.next.h.back()), state.position,
                                    params.hyper().max_len);
  out.next.position = state.position + 1;
  return out;
}

namespace {

std::vector<Hypothesis> beam_search(const Seq2SeqParams& params,
                                    std::span<const TokenId> condition, const DecodeConfig& cfg) {
  struct Live {
    Hypothesis hyp;
    DecoderState state;
    TokenId last;
  };
  struct Candidate {
    double score;
    std::size_t parent;
    TokenId token;
  };
  const std::size_t V = params.hyper().vocab_size;
  const std::size_t width = cfg.beam_width;

  std::vector<Live> live{{Hypothesis{}, encode_condition(params, condition), ids::sos}};
  std::vector<Hypothesis> finished;
  std::vector<Candidate> candidates;
  std::vector<DecoderState> next_states;
  while (!live.empty()) {
    candidates.clear();
    next_states.clear();
    for (std::size_t i = 0; i < live.size(); ++i) {
      auto step = decode_step(params, live[i].state, live[i].last);
      for (std::size_t v = 0; v < V; ++v) {
        const double p = step.distribution[v];
        if (p <= 0.0) continue;
        const double score = live[i].hyp.log_prob + std::log(p);
        if (v == ids::eos)
          finished.push_back({live[i].hyp.tokens, score});
        else
          candidates.push_back({score, i, static_cast<TokenId>(v)});
      }
      next_states.push_back(std::move(step.next));
    }
    const std::size_t keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    next.reserve(keep);
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& cand = candidates[k];
      Hypothesis h = live[cand.parent].hyp;
      h.tokens.push_back(cand.token);
      h.log_prob = cand.score;
      next.push_back({std::move(h), next_states[cand.parent], cand.token});
    }
    live = std::move(next);
  }

  auto key = [&](const Hypothesis& h) {
    return cfg.length_normalization ? h.log_prob / static_cast<double>(h.tokens.size() + 1)
                                    : h.log_prob;
  };
  std::sort(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return ka > kb;
    return a.tokens < b.tokens;
  });
  if (finished.size() > cfg.n_candidates) finished.resize(cfg.n_candidates);
  return finished;
}

}  // namespace

std::vector<Hypothesis> generate(const Seq2SeqParams& params, std::span<const TokenId> condition,
                                 const DecodeConfig& cfg, std::uint64_t seed) {
  if (cfg.mode == DecodeMode::beam) {
    if (cfg.n_candidates == 0) throw std::invalid_argument("n_candidates must be at least 1");
    if (cfg.beam_width < cfg.n_candidates)
      throw std::invalid_argument("beam_width smaller than n_candidates");
    return beam_search(params, condition, cfg);
  }

  Rng rng(seed);
  Hypothesis hyp;
  DecoderState state = encode_condition(params, condition);
  TokenId prev = ids::sos;
  for (;;) {
    auto step = decode_step(params, state, prev);
    const auto& dist = step.distribution;
    TokenId pick = 0;
    if (cfg.mode == DecodeMode::greedy) {
      double best = -1.0;
      for (std::size_t v = 0; v < dist.size(); ++v)
        if (dist[v] > best) {
          best = dist[v];
          pick = static_cast<TokenId>(v);
        }
    } else {
      // A rounding shortfall in the cumulative sum falls through to the last
      // supported id.
      const double u = rng.uniform();
      double cum = 0.0;
      for (std::size_t v = 0; v < dist.size(); ++v) {
        if (dist[v] <= 0.0) continue;
        pick = static_cast<TokenId>(v);
        cum += dist[v];
        if (u < cum) break;
      }
    }
    hyp.log_prob += std::log(dist[pick]);
    if (pick == ids::eos) break;
    hyp.tokens.push_back(pick);
    state = std::move(step.next);
    prev = pick;
  }
  return {hyp};
}

}  // namespace rdg
