#pragma once

#include <cstddef>
#include <string_view>

#include "rdg/seq_net.hpp"

namespace rdg {

enum class OptimizerAlgorithm { sgd, adam };

OptimizerAlgorithm parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerAlgorithm algo);

struct OptimizerConfig {
  OptimizerAlgorithm algorithm = OptimizerAlgorithm::sgd;
  double learning_rate = 1.0;
  /// Multiplier applied to the learning rate on a validation plateau.
  double lr_decay = 0.25;
  double clip_value = 0.25;
  double dropout_rate = 0.1;
  std::size_t batch_size = 16;

  void validate() const;
};

/// Global-norm clipping: if ||g||_2 > clip_value every tensor is scaled by
/// clip_value / ||g||_2.
GradientSet clip_gradients(GradientSet grads, double clip_value);

enum class Direction { descent, ascent };

/// SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8) with its moment state.
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit Optimizer(OptimizerConfig cfg);

  /// Throws std::invalid_argument("non-finite gradient") before touching
  /// parameters.
  void apply(Seq2SeqParams& params, const GradientSet& grads, Direction direction);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  void decay() { lr_ *= cfg_.lr_decay; }
  std::size_t steps() const { return step_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  double lr_;
  std::size_t step_ = 0;
  GradientSet m_, v_;
};

}  // namespace rdg
