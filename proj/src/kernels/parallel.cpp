#include "axi/kernels/parallel.hpp"

#include <algorithm>
#include <cstdint>

namespace axi::kernels {

namespace {

inline std::size_t in_index(const ConvGeometry& g, std::size_t n, std::size_t x,
                            std::size_t y, std::size_t z) {
  return (((n * g.h + x) * g.w + y) * g.d + z) * g.cin;
}

inline std::size_t out_index(const ConvGeometry& g, std::size_t n, std::size_t x,
                             std::size_t y, std::size_t z) {
  return (((n * g.oh() + x) * g.ow() + y) * g.od() + z) * g.cout;
}

inline std::size_t kernel_index(const ConvGeometry& g, std::size_t i, std::size_t j,
                                std::size_t k) {
  return ((i * g.kw + j) * g.kd + k) * g.cin * g.cout;
}

constexpr std::size_t kDenseBlock = 64;

}  // namespace

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> input,
                  std::span<const T> kernel, std::span<const T> bias,
                  std::span<T> output) {
  const auto rows = static_cast<std::int64_t>(g.n * g.oh());
  const T* in = input.data();
  const T* ker = kernel.data();
  T* out = output.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / g.oh();
    const std::size_t x = static_cast<std::size_t>(row) % g.oh();
    for (std::size_t y = 0; y < g.ow(); ++y) {
      for (std::size_t z = 0; z < g.od(); ++z) {
        T* o = out + out_index(g, n, x, y, z);
        std::copy(bias.begin(), bias.end(), o);
        for (std::size_t i = 0; i < g.kh; ++i)
          for (std::size_t j = 0; j < g.kw; ++j)
            for (std::size_t k = 0; k < g.kd; ++k) {
              const T* a = in + in_index(g, n, x + i, y + j, z + k);
              const T* kr = ker + kernel_index(g, i, j, k);
              for (std::size_t ci = 0; ci < g.cin; ++ci) {
                const T av = a[ci];
                const T* kc = kr + ci * g.cout;
                for (std::size_t co = 0; co < g.cout; ++co) o[co] += av * kc[co];
              }
            }
      }
    }
  }
}

template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> kernel,
                         std::span<const T> grad_output, std::span<T> grad_input) {
  const auto rows = static_cast<std::int64_t>(g.n * g.h);
  const T* ker = kernel.data();
  const T* gout = grad_output.data();
  T* gin = grad_input.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / g.h;
    const std::size_t p = static_cast<std::size_t>(row) % g.h;
    // Kernel offsets i with 0 <= p - i < oh.
    const std::size_t i_lo = p >= g.oh() ? p - g.oh() + 1 : 0;
    const std::size_t i_hi = std::min(g.kh, p + 1);
    for (std::size_t q = 0; q < g.w; ++q) {
      const std::size_t j_lo = q >= g.ow() ? q - g.ow() + 1 : 0;
      const std::size_t j_hi = std::min(g.kw, q + 1);
      for (std::size_t r = 0; r < g.d; ++r) {
        const std::size_t k_lo = r >= g.od() ? r - g.od() + 1 : 0;
        const std::size_t k_hi = std::min(g.kd, r + 1);
        T* gi = gin + in_index(g, n, p, q, r);
        for (std::size_t i = i_lo; i < i_hi; ++i)
          for (std::size_t j = j_lo; j < j_hi; ++j)
            for (std::size_t k = k_lo; k < k_hi; ++k) {
              const T* go = gout + out_index(g, n, p - i, q - j, r - k);
              const T* kr = ker + kernel_index(g, i, j, k);
              for (std::size_t ci = 0; ci < g.cin; ++ci) {
                const T* kc = kr + ci * g.cout;
                T acc = T{0};
                for (std::size_t co = 0; co < g.cout; ++co) acc += go[co] * kc[co];
                gi[ci] += acc;
              }
            }
      }
    }
  }
}

template <typename T>
void conv_backward_kernel(const ConvGeometry& g, std::span<const T> input,
                          std::span<const T> grad_output, std::span<T> grad_kernel,
                          std::span<T> grad_bias) {
  const auto taps = static_cast<std::int64_t>(g.kh * g.kw * g.kd);
  const T* in = input.data();
  const T* gout = grad_output.data();
  T* gk = grad_kernel.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t tap = 0; tap < taps; ++tap) {
    const std::size_t t = static_cast<std::size_t>(tap);
    const std::size_t i = t / (g.kw * g.kd);
    const std::size_t j = (t / g.kd) % g.kw;
    const std::size_t k = t % g.kd;
    T* slab = gk + kernel_index(g, i, j, k);
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t x = 0; x < g.oh(); ++x)
        for (std::size_t y = 0; y < g.ow(); ++y)
          for (std::size_t z = 0; z < g.od(); ++z) {
            const T* a = in + in_index(g, n, x + i, y + j, z + k);
            const T* go = gout + out_index(g, n, x, y, z);
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
              const T av = a[ci];
              T* sc = slab + ci * g.cout;
              for (std::size_t co = 0; co < g.cout; ++co) sc[co] += av * go[co];
            }
          }
  }
  const std::size_t positions = g.n * g.oh() * g.ow() * g.od();
  for (std::size_t pos = 0; pos < positions; ++pos) {
    const T* go = gout + pos * g.cout;
    for (std::size_t co = 0; co < g.cout; ++co) grad_bias[co] += go[co];
  }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input,
                     std::span<T> output, std::span<std::size_t> argmax) {
  const auto rows = static_cast<std::int64_t>(g.n * g.oh());
  const std::size_t oh = g.oh(), ow = g.ow(), od = g.od(), C = g.c;
  const std::size_t sj = g.d * C, si = g.w * sj;  // input strides along w and h
  const T* in = input.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / oh;
    const std::size_t x = static_cast<std::size_t>(row) % oh;
    for (std::size_t y = 0; y < ow; ++y)
      for (std::size_t z = 0; z < od; ++z) {
        const std::size_t obase = (((n * oh + x) * ow + y) * od + z) * C;
        const std::size_t ibase = ((n * g.h + x * g.wh) * g.w + y * g.ww) * sj + z * g.wd * C;
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = ibase + c;
          for (std::size_t i = 0; i < g.wh; ++i)
            for (std::size_t j = 0; j < g.ww; ++j)
              for (std::size_t k = 0; k < g.wd; ++k) {
                const std::size_t ii = ibase + i * si + j * sj + k * C + c;
                if (in[ii] > in[best]) best = ii;
              }
          output[obase + c] = in[best];
          argmax[obase + c] = best;
        }
      }
  }
}

template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const std::size_t> argmax,
                      std::span<const T> grad_output, std::span<T> grad_input) {
  // Windows are disjoint, so each input cell has at most one writer.
  const auto count = static_cast<std::int64_t>(g.output_size());
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < count; ++o) {
    grad_input[argmax[static_cast<std::size_t>(o)]] += grad_output[static_cast<std::size_t>(o)];
  }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> input,
                   std::span<const T> weight, std::span<const T> bias,
                   std::span<T> output) {
  const std::size_t blocks = (g.out + kDenseBlock - 1) / kDenseBlock;
  const auto tasks = static_cast<std::int64_t>(g.batch * blocks);
  const T* x = input.data();
  const T* w = weight.data();
  T* out = output.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t task = 0; task < tasks; ++task) {
    const std::size_t b = static_cast<std::size_t>(task) / blocks;
    const std::size_t j0 = (static_cast<std::size_t>(task) % blocks) * kDenseBlock;
    const std::size_t j1 = std::min(g.out, j0 + kDenseBlock);
    T* o = out + b * g.out;
    for (std::size_t j = j0; j < j1; ++j) o[j] = bias[j];
    const T* xb = x + b * g.in;
    for (std::size_t i = 0; i < g.in; ++i) {
      const T xv = xb[i];
      const T* wr = w + i * g.out;
      for (std::size_t j = j0; j < j1; ++j) o[j] += xv * wr[j];
    }
  }
}

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> weight,
                          std::span<const T> grad_output, std::span<T> grad_input) {
  const auto tasks = static_cast<std::int64_t>(g.batch * g.in);
  const T* w = weight.data();
  const T* go = grad_output.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t task = 0; task < tasks; ++task) {
    const std::size_t b = static_cast<std::size_t>(task) / g.in;
    const std::size_t i = static_cast<std::size_t>(task) % g.in;
    const T* wr = w + i * g.out;
    const T* gr = go + b * g.out;
    T acc = T{0};
    for (std::size_t j = 0; j < g.out; ++j) acc += wr[j] * gr[j];
    grad_input[b * g.in + i] += acc;
  }
}

template <typename T>
void dense_backward_weight(const DenseGeometry& g, std::span<const T> input,
                           std::span<const T> grad_output, std::span<T> grad_weight,
                           std::span<T> grad_bias) {
  const auto rows = static_cast<std::int64_t>(g.in);
  const T* x = input.data();
  const T* go = grad_output.data();
  T* gw = grad_weight.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t row = 0; row < rows; ++row) {
    const std::size_t i = static_cast<std::size_t>(row);
    T* wr = gw + i * g.out;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T xv = x[b * g.in + i];
      if (xv == T{0}) continue;
      const T* gr = go + b * g.out;
      for (std::size_t j = 0; j < g.out; ++j) wr[j] += xv * gr[j];
    }
  }
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t j = 0; j < g.out; ++j) grad_bias[j] += go[b * g.out + j];
}

#define AXI_INSTANTIATE_KERNELS(T)                                                        \
  template void conv_forward<T>(const ConvGeometry&, std::span<const T>,                   \
                                std::span<const T>, std::span<const T>, std::span<T>);     \
  template void conv_backward_input<T>(const ConvGeometry&, std::span<const T>,            \
                                       std::span<const T>, std::span<T>);                  \
  template void conv_backward_kernel<T>(const ConvGeometry&, std::span<const T>,           \
                                        std::span<const T>, std::span<T>, std::span<T>);   \
  template void maxpool_forward<T>(const PoolGeometry&, std::span<const T>, std::span<T>,  \
                                   std::span<std::size_t>);                                \
  template void maxpool_backward<T>(const PoolGeometry&, std::span<const std::size_t>,     \
                                    std::span<const T>, std::span<T>);                     \
  template void dense_forward<T>(const DenseGeometry&, std::span<const T>,                 \
                                 std::span<const T>, std::span<const T>, std::span<T>);    \
  template void dense_backward_input<T>(const DenseGeometry&, std::span<const T>,          \
                                        std::span<const T>, std::span<T>);                 \
  template void dense_backward_weight<T>(const DenseGeometry&, std::span<const T>,         \
                                         std::span<const T>, std::span<T>, std::span<T>);

AXI_INSTANTIATE_KERNELS(float)
AXI_INSTANTIATE_KERNELS(double)

#undef AXI_INSTANTIATE_KERNELS

}  // namespace axi::kernels
