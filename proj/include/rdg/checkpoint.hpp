#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   char[8]   magic "RDGSEQ2S"
//   u32       format version (1)
//   u64 x 5   vocab_size, emb_size, hidden_size, n_layers, max_len
//   u32       tensor count
//   per tensor:
//     u32 name length, name bytes
//     u32 rank (always 2), u64 rows, u64 cols
//     f64 x rows*cols, row-major

#include <cstdint>
#include <filesystem>

#include "rdg/seq_net.hpp"

namespace rdg {

inline constexpr char kCheckpointMagic[8] = {'R', 'D', 'G', 'S', 'E', 'Q', '2', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Seq2SeqParams& params, const std::filesystem::path& path);
Seq2SeqParams load_checkpoint(const std::filesystem::path& path);

}  // namespace rdg
