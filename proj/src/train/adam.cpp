#include "axi/train/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace axi::train {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(decay >= 0.0)) throw std::invalid_argument("decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
}

template <typename T>
void adam_step(std::span<nn::Tensor<T>* const> params, std::span<const nn::Tensor<T>* const> grads,
               AdamState<T>& state, const AdamConfig& config) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape()) {
      throw nn::ShapeError("adam: gradient " + nn::shape_str(grads[i]->shape()) + " does not match parameter " +
                           nn::shape_str(params[i]->shape()));
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  } else if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam: state was built for a different parameter list");
  }

  const std::size_t t = ++state.step;
  const double lr = config.rate_at(t);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
      const double vk = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + config.epsilon);
      p[k] = static_cast<T>(p[k] - update);
    }
  }
}

template void adam_step<float>(std::span<nn::Tensor<float>* const>, std::span<const nn::Tensor<float>* const>,
                               AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<nn::Tensor<double>* const>, std::span<const nn::Tensor<double>* const>,
                                AdamState<double>&, const AdamConfig&);

}  // namespace axi::train
