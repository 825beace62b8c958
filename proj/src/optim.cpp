#include "rdg/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rdg {

OptimizerAlgorithm parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerAlgorithm::sgd;
  if (name == "adam") return OptimizerAlgorithm::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerAlgorithm algo) {
  return algo == OptimizerAlgorithm::sgd ? "sgd" : "adam";
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay outside (0, 1]");
  if (!(clip_value > 0.0)) throw std::invalid_argument("clip_value must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw std::invalid_argument("dropout_rate outside [0, 1)");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
}

GradientSet clip_gradients(GradientSet grads, double clip_value) {
  if (!(clip_value > 0.0)) throw std::invalid_argument("clip_value must be positive");
  const double norm = grads.global_norm();
  if (norm > clip_value) grads.scale(clip_value / norm);
  return grads;
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg), lr_(cfg.learning_rate) { cfg_.validate(); }

void Optimizer::apply(Seq2SeqParams& params, const GradientSet& grads, Direction direction) {
  if (!grads.congruent_with(params)) throw std::invalid_argument("gradient shape mismatch");
  if (!grads.all_finite()) throw std::invalid_argument("non-finite gradient");
  const double sign = direction == Direction::ascent ? 1.0 : -1.0;
  ++step_;

  if (cfg_.algorithm == OptimizerAlgorithm::sgd) {
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
      auto& p = params.mutable_tensor(i).values;
      const auto& g = grads.tensors[i].values;
      for (std::size_t k = 0; k < p.size(); ++k) p[k] += sign * lr_ * g[k];
    }
    return;
  }

  if (m_.tensors.empty()) {
    m_ = GradientSet::zeros_like(params);
    v_ = GradientSet::zeros_like(params);
  }
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    auto& p = params.mutable_tensor(i).values;
    const auto& g = grads.tensors[i].values;
    auto& m = m_.tensors[i].values;
    auto& v = v_.tensors[i].values;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] += sign * lr_ * m_hat / (std::sqrt(v_hat) + kEpsilon);
    }
  }
}

}  // namespace rdg
