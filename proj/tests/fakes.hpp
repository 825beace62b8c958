#pragma once

// Black boxes with scripted behaviour for agent and evaluation tests. All are
// safe to query concurrently.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

#include "rdg/black_box.hpp"
#include "rdg/reward.hpp"
#include "rdg/text.hpp"

namespace rdg::fake {

class FunctionEnv : public BlackBox {
 public:
  explicit FunctionEnv(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}

  std::string query(std::string_view input) override {
    const std::string text = normalize_text(input);
    if (text.empty()) throw std::invalid_argument("empty query");
    std::string out = fn_(text);
    counter_.fetch_add(1);
    return out;
  }
  std::uint64_t query_count() const override { return counter_.load(); }
  void reset_counter() override { counter_.store(0); }

 private:
  std::function<std::string(const std::string&)> fn_;
  std::atomic<std::uint64_t> counter_{0};
};

inline std::unique_ptr<FunctionEnv> echo_env() {
  return std::make_unique<FunctionEnv>([](const std::string& s) { return s; });
}

/// Table lookup; unknown inputs get `fallback`.
inline std::unique_ptr<FunctionEnv> table_env(std::map<std::string, std::string> table,
                                              std::string fallback) {
  return std::make_unique<FunctionEnv>(
      [table = std::move(table), fallback = std::move(fallback)](const std::string& s) {
        const auto it = table.find(s);
        return it == table.end() ? fallback : it->second;
      });
}

/// Reward configuration over explicit word vectors.
inline RewardConfig reward_config(std::map<std::string, std::vector<double>> vectors,
                                  double clamp = 0.5) {
  auto table = std::make_shared<EmbeddingTable>(vectors.begin()->second.size());
  for (auto& [w, v] : vectors) table->add(w, v);
  RewardConfig cfg;
  cfg.embeddings = table;
  cfg.stopwords = std::make_shared<StopwordList>(StopwordList::default_list());
  cfg.clamp_threshold = clamp;
  return cfg;
}

}  // namespace rdg::fake
