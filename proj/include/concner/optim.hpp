#pragma once

#include <cstddef>
#include <vector>

#include "concner/encoder.hpp"
#include "concner/tensor.hpp"

namespace concner {

struct AdamWConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
  bool operator==(const AdamWConfig&) const = default;
};

// Adam with decoupled weight decay:
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
class AdamW {
 public:
  AdamW(const ModelParams& params, AdamWConfig config);

  // grads[i] matches params.tensors[i] in shape.
  void step(ModelParams& params, const std::vector<Tensor>& grads);

  std::size_t steps() const noexcept { return t_; }

 private:
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

}  // namespace concner
