#include "rdg/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rdg {

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  auto bits = std::bit_cast<U>(value);
  std::array<unsigned char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    throw std::runtime_error("truncated checkpoint");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_checkpoint(const Seq2SeqParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto& h = params.hyper();
  for (std::uint64_t v : {h.vocab_size, h.emb_size, h.hidden_size, h.n_layers, h.max_len})
    put<std::uint64_t>(out, v);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensor_count()));
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    const auto& name = params.name(i);
    const auto& t = params.tensor(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, t.rows);
    put<std::uint64_t>(out, t.cols);
    for (double v : t.values) put<double>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Seq2SeqParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  Seq2SeqHyper h;
  h.vocab_size = get<std::uint64_t>(in);
  h.emb_size = get<std::uint64_t>(in);
  h.hidden_size = get<std::uint64_t>(in);
  h.n_layers = get<std::uint64_t>(in);
  h.max_len = get<std::uint64_t>(in);
  Seq2SeqParams params(h);

  const auto count = get<std::uint32_t>(in);
  if (count != params.tensor_count()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw std::runtime_error("truncated checkpoint");
    if (name != params.name(i)) throw std::runtime_error("unexpected tensor '" + name + "'");
    if (get<std::uint32_t>(in) != 2) throw std::runtime_error("unsupported tensor rank");
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    Tensor& t = params.mutable_tensor(i);
    if (rows != t.rows || cols != t.cols)
      throw std::runtime_error("shape mismatch for tensor '" + name + "'");
    for (auto& v : t.values) v = get<double>(in);
  }
  return params;
}

}  // namespace rdg
