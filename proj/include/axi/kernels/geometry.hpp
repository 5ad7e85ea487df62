#pragma once

#include <cstddef>

namespace axi::kernels {

// All kernels use channel-last layout [n, h, w, d, c]. 2D callers pass d = 1
// and kd = 1.

struct ConvGeometry {
  std::size_t n = 1, h = 1, w = 1, d = 1, cin = 1;
  std::size_t kh = 1, kw = 1, kd = 1, cout = 1;

  std::size_t oh() const { return h - kh + 1; }
  std::size_t ow() const { return w - kw + 1; }
  std::size_t od() const { return d - kd + 1; }

  std::size_t input_size() const { return n * h * w * d * cin; }
  std::size_t kernel_size() const { return kh * kw * kd * cin * cout; }
  std::size_t output_size() const { return n * oh() * ow() * od() * cout; }
};

struct PoolGeometry {
  std::size_t n = 1, h = 1, w = 1, d = 1, c = 1;
  std::size_t wh = 1, ww = 1, wd = 1;

  std::size_t oh() const { return h / wh; }
  std::size_t ow() const { return w / ww; }
  std::size_t od() const { return d / wd; }

  std::size_t input_size() const { return n * h * w * d * c; }
  std::size_t output_size() const { return n * oh() * ow() * od() * c; }
};

struct DenseGeometry {
  std::size_t batch = 1, in = 1, out = 1;
};

}  // namespace axi::kernels
