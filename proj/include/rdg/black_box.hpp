#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace rdg {

/// Text-in / text-out view of a dialogue model. This is the only surface the
/// reverse generator and the evaluation harness see.
class BlackBox {
 public:
  virtual ~BlackBox() = default;

  /// Response to `input`. Throws std::invalid_argument("empty query") when the
  /// input has no tokens; the counter moves only on success.
  virtual std::string query(std::string_view input) = 0;
  virtual std::uint64_t query_count() const = 0;
  virtual void reset_counter() = 0;
};

}  // namespace rdg
