#pragma once

#include <cstddef>
#include <span>

#include "axi/kernels/geometry.hpp"

// Serial, loop-per-definition versions of the parallel kernels. Kept for the
// equivalence tests and the benchmark baseline; not used by the library.

namespace axi::kernels::reference {

namespace detail {
inline std::size_t idx5(std::size_t a, std::size_t b, std::size_t c, std::size_t d,
                        std::size_t e, std::size_t B, std::size_t C, std::size_t D,
                        std::size_t E) {
  return (((a * B + b) * C + c) * D + d) * E + e;
}
}  // namespace detail

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> input,
                  std::span<const T> kernel, std::span<const T> bias,
                  std::span<T> output) {
  using detail::idx5;
  const std::size_t oh = g.oh(), ow = g.ow(), od = g.od();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t x = 0; x < oh; ++x)
      for (std::size_t y = 0; y < ow; ++y)
        for (std::size_t z = 0; z < od; ++z)
          for (std::size_t co = 0; co < g.cout; ++co) {
            T acc = bias[co];
            for (std::size_t i = 0; i < g.kh; ++i)
              for (std::size_t j = 0; j < g.kw; ++j)
                for (std::size_t k = 0; k < g.kd; ++k)
                  for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    const std::size_t ii = idx5(n, x + i, y + j, z + k, ci, g.h, g.w, g.d, g.cin);
                    const std::size_t kk =
                        (((i * g.kw + j) * g.kd + k) * g.cin + ci) * g.cout + co;
                    acc += input[ii] * kernel[kk];
                  }
            output[idx5(n, x, y, z, co, oh, ow, od, g.cout)] = acc;
          }
}

template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> kernel,
                         std::span<const T> grad_output, std::span<T> grad_input) {
  using detail::idx5;
  const std::size_t oh = g.oh(), ow = g.ow(), od = g.od();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t x = 0; x < oh; ++x)
      for (std::size_t y = 0; y < ow; ++y)
        for (std::size_t z = 0; z < od; ++z)
          for (std::size_t co = 0; co < g.cout; ++co) {
            const T go = grad_output[idx5(n, x, y, z, co, oh, ow, od, g.cout)];
            for (std::size_t i = 0; i < g.kh; ++i)
              for (std::size_t j = 0; j < g.kw; ++j)
                for (std::size_t k = 0; k < g.kd; ++k)
                  for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    const std::size_t kk =
                        (((i * g.kw + j) * g.kd + k) * g.cin + ci) * g.cout + co;
                    grad_input[idx5(n, x + i, y + j, z + k, ci, g.h, g.w, g.d, g.cin)] +=
                        go * kernel[kk];
                  }
          }
}

template <typename T>
void conv_backward_kernel(const ConvGeometry& g, std::span<const T> input,
                          std::span<const T> grad_output, std::span<T> grad_kernel,
                          std::span<T> grad_bias) {
  using detail::idx5;
  const std::size_t oh = g.oh(), ow = g.ow(), od = g.od();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t x = 0; x < oh; ++x)
      for (std::size_t y = 0; y < ow; ++y)
        for (std::size_t z = 0; z < od; ++z)
          for (std::size_t co = 0; co < g.cout; ++co) {
            const T go = grad_output[idx5(n, x, y, z, co, oh, ow, od, g.cout)];
            grad_bias[co] += go;
            for (std::size_t i = 0; i < g.kh; ++i)
              for (std::size_t j = 0; j < g.kw; ++j)
                for (std::size_t k = 0; k < g.kd; ++k)
                  for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    const std::size_t kk =
                        (((i * g.kw + j) * g.kd + k) * g.cin + ci) * g.cout + co;
                    grad_kernel[kk] +=
                        go * input[idx5(n, x + i, y + j, z + k, ci, g.h, g.w, g.d, g.cin)];
                  }
          }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input,
                     std::span<T> output, std::span<std::size_t> argmax) {
  using detail::idx5;
  const std::size_t oh = g.oh(), ow = g.ow(), od = g.od();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t x = 0; x < oh; ++x)
      for (std::size_t y = 0; y < ow; ++y)
        for (std::size_t z = 0; z < od; ++z)
          for (std::size_t c = 0; c < g.c; ++c) {
            std::size_t best = idx5(n, x * g.wh, y * g.ww, z * g.wd, c, g.h, g.w, g.d, g.c);
            for (std::size_t i = 0; i < g.wh; ++i)
              for (std::size_t j = 0; j < g.ww; ++j)
                for (std::size_t k = 0; k < g.wd; ++k) {
                  const std::size_t ii = idx5(n, x * g.wh + i, y * g.ww + j, z * g.wd + k, c,
                                              g.h, g.w, g.d, g.c);
                  if (input[ii] > input[best]) best = ii;
                }
            const std::size_t oi = idx5(n, x, y, z, c, oh, ow, od, g.c);
            output[oi] = input[best];
            argmax[oi] = best;
          }
}

template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const std::size_t> argmax,
                      std::span<const T> grad_output, std::span<T> grad_input) {
  for (std::size_t o = 0; o < g.output_size(); ++o) grad_input[argmax[o]] += grad_output[o];
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> input,
                   std::span<const T> weight, std::span<const T> bias,
                   std::span<T> output) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t j = 0; j < g.out; ++j) {
      T acc = bias[j];
      for (std::size_t i = 0; i < g.in; ++i) acc += input[b * g.in + i] * weight[i * g.out + j];
      output[b * g.out + j] = acc;
    }
}

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> weight,
                          std::span<const T> grad_output, std::span<T> grad_input) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t i = 0; i < g.in; ++i)
      for (std::size_t j = 0; j < g.out; ++j)
        grad_input[b * g.in + i] += weight[i * g.out + j] * grad_output[b * g.out + j];
}

template <typename T>
void dense_backward_weight(const DenseGeometry& g, std::span<const T> input,
                           std::span<const T> grad_output, std::span<T> grad_weight,
                           std::span<T> grad_bias) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t j = 0; j < g.out; ++j) {
      grad_bias[j] += grad_output[b * g.out + j];
      for (std::size_t i = 0; i < g.in; ++i)
        grad_weight[i * g.out + j] += input[b * g.in + i] * grad_output[b * g.out + j];
    }
}

}  // namespace axi::kernels::reference
