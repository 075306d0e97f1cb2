#pragma once

#include <cstddef>
#include <vector>

#include "uat/tensor.hpp"

namespace uat {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global L2 gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
};

// Settings used for the large-model fine-tuning runs this toolkit mirrors.
// They stall at desk scale, so AdamWOptions defaults to lr 1e-3 instead.
inline constexpr double kReferenceLearningRate = 1e-5;
inline constexpr double kReferenceWeightDecay = 1e-2;

// Adaptive moment estimation with decoupled weight decay. Decay applies to
// tensors with two or more dimensions only (not biases or norm scales).
class AdamW {
 public:
  AdamW(std::vector<Tensor<float>> params, AdamWOptions options);

  // Applies one update from the accumulated grads; returns the pre-clip
  // gradient norm.
  double step();
  void zero_grad();

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor<float>> params_;
  AdamWOptions opt_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::size_t t_ = 0;
};

}  // namespace uat
