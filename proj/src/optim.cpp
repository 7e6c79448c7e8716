#include "concner/optim.hpp"

#include <cmath>
#include <string>

#include "concner/error.hpp"

namespace concner {

void AdamWConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::ConfigError, "learning_rate: must be finite and >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error(ErrorCode::ConfigError, "adam_beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorCode::ConfigError, "adam_beta2: must lie in [0, 1)");
  if (!(eps > 0.0)) throw Error(ErrorCode::ConfigError, "adam_eps: must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::ConfigError, "weight_decay: must be >= 0");
}

AdamW::AdamW(const ModelParams& params, AdamWConfig config) : config_(config) {
  config_.validate();
  for (const auto& t : params.tensors) {
    m_.emplace_back(t.shape(), 0.0);
    v_.emplace_back(t.shape(), 0.0);
  }
}

void AdamW::step(ModelParams& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.tensors.size() || m_.size() != grads.size()) {
    throw Error(ErrorCode::ShapeMismatch, "AdamW::step: " + std::to_string(grads.size()) +
                                              " gradients for " +
                                              std::to_string(params.tensors.size()) + " tensors");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.tensors[i];
    if (grads[i].shape() != p.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "AdamW::step: gradient for " + params.names[i] +
                                                " has shape " + shape_string(grads[i].shape()));
    }
    auto g = grads[i].values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    auto w = p.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
      w[k] -= lr * (update + config_.weight_decay * w[k]);
    }
  }
}

}  // namespace concner
