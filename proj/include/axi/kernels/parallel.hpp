#pragma once

#include <cstddef>
#include <span>

#include "axi/kernels/geometry.hpp"

// OpenMP kernels used by the autodiff ops. Every output element is reduced by
// exactly one thread in a fixed order, so results are bitwise identical for
// any thread count. Backward kernels accumulate into their outputs.
// Instantiated for float and double.

namespace axi::kernels {

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> input,
                  std::span<const T> kernel, std::span<const T> bias,
                  std::span<T> output);

template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> kernel,
                         std::span<const T> grad_output, std::span<T> grad_input);

template <typename T>
void conv_backward_kernel(const ConvGeometry& g, std::span<const T> input,
                          std::span<const T> grad_output, std::span<T> grad_kernel,
                          std::span<T> grad_bias);

/// Writes the pooled maxima and the flat input index each one came from.
/// Ties resolve to the first cell in row-major window order.
template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input,
                     std::span<T> output, std::span<std::size_t> argmax);

template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const std::size_t> argmax,
                      std::span<const T> grad_output, std::span<T> grad_input);

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> input,
                   std::span<const T> weight, std::span<const T> bias,
                   std::span<T> output);

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> weight,
                          std::span<const T> grad_output, std::span<T> grad_input);

template <typename T>
void dense_backward_weight(const DenseGeometry& g, std::span<const T> input,
                           std::span<const T> grad_output, std::span<T> grad_weight,
                           std::span<T> grad_bias);

}  // namespace axi::kernels
