#include "rdg/environment.hpp"

#include <cstdio>
#include <fstream>

#include "rdg/checkpoint.hpp"
#include "rdg/reward.hpp"

namespace rdg {

Environment::Environment(Seq2SeqParams params, Vocabulary vocab)
    : params_(std::move(params)), vocab_(std::move(vocab)) {
  if (params_.hyper().vocab_size != vocab_.size())
    throw std::invalid_argument("checkpoint vocabulary size does not match vocabulary");
}

Environment Environment::load(const std::filesystem::path& checkpoint,
                              const std::filesystem::path& vocab) {
  return Environment(load_checkpoint(checkpoint), Vocabulary::load(vocab));
}

std::string Environment::query(std::string_view input) {
  const auto tokens = tokenize(input);
  if (tokens.empty()) throw std::invalid_argument("empty query");
  if (tokens.size() > params_.hyper().max_len)
    throw std::invalid_argument("query longer than max_len");
  Utterance ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab_.id(t));
  const auto best = generate(params_, ids, DecodeConfig{});
  std::string out = decode(best.front().tokens, vocab_);
  counter_.fetch_add(1);
  return out;
}

TrainedModel train_environment(std::span<const TextPair> corpus, const EnvTrainConfig& cfg,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  Vocabulary vocab = Vocabulary::build(corpus, cfg.max_vocab);

  std::vector<DialoguePair> pairs;
  pairs.reserve(corpus.size());
  for (const auto& p : corpus) {
    DialoguePair d{encode(p.input, vocab), encode(p.output, vocab)};
    if (d.input.size() > cfg.hyper.max_len || d.output.size() > cfg.hyper.max_len)
      throw std::invalid_argument("corpus utterance longer than max_len: '" + p.input + "'");
    pairs.push_back(std::move(d));
  }
  auto [train, val] =
      split_train_val<DialoguePair>(pairs, cfg.val_fraction, derive_seed(cfg.seed, 0x5a11));

  Seq2SeqHyper hyper = cfg.hyper;
  hyper.vocab_size = vocab.size();
  Seq2SeqParams params = init_params(hyper, derive_seed(cfg.seed, 0x1417));
  if (cfg.embedding_init) {
    const auto table = EmbeddingTable::load(*cfg.embedding_init);
    if (table.dim() != hyper.emb_size)
      throw std::invalid_argument("embedding_init dimension differs from emb_size");
    Tensor& emb = params.mutable_tensor(params.embedding());
    for (std::size_t id = ids::reserved; id < vocab.size(); ++id)
      if (const auto* v = table.find(vocab.token(static_cast<TokenId>(id))))
        std::copy(v->begin(), v->end(), emb.row(id).begin());
  }

  SupervisedConfig sup{cfg.optimizer, cfg.epochs, derive_seed(cfg.seed, 0x7a1e)};
  auto log = fit_supervised(params, train, val, sup, on_epoch);
  return {std::move(params), std::move(vocab), std::move(log)};
}

void write_training_log(std::span<const EpochRecord> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\n", r.epoch, r.train_nll, r.val_nll);
    out << buf;
  }
}

}  // namespace rdg
