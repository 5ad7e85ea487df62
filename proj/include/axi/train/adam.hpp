#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "axi/nn/tensor.hpp"

namespace axi::train {

struct AdamConfig {
  double learning_rate = 1e-5;
  double decay = 1e-6;  // inverse-time: lr_t = lr / (1 + decay * t)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// learning_rate >= 0 (0 freezes training), decay >= 0, betas in [0, 1).
  void validate() const;
  double rate_at(std::size_t step) const { return learning_rate / (1.0 + decay * static_cast<double>(step)); }
};

template <typename T>
struct AdamState {
  std::vector<nn::Tensor<T>> m;
  std::vector<nn::Tensor<T>> v;
  std::size_t step = 0;  // updates applied so far
};

/// One bias-corrected Adam update at step t = state.step + 1. Moments are
/// created on the first call.
template <typename T>
void adam_step(std::span<nn::Tensor<T>* const> params, std::span<const nn::Tensor<T>* const> grads,
               AdamState<T>& state, const AdamConfig& config);

}  // namespace axi::train
