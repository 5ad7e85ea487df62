#include "axi/nn/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "axi/kernels/parallel.hpp"

namespace axi::nn {

namespace {

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const char* op, Var<T> a, Fwd fwd, Deriv deriv) {
  auto in = a.tape().value_ptr(a);
  Tensor<T> out(in->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd((*in)[i]);
  auto out_ptr = std::make_shared<Tensor<T>>(out);
  return a.tape().record(op, std::move(out), {a},
                         [in, out_ptr, deriv](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           Tensor<T>& dx = *gi[0];
                           for (std::size_t i = 0; i < g.size(); ++i)
                             dx[i] += g[i] * deriv((*in)[i], (*out_ptr)[i]);
                         });
}

struct ConvShapes {
  kernels::ConvGeometry geometry;
  Shape output;
};

ConvShapes conv_shapes(const char* op, const Shape& in, const Shape& k, const Shape& b,
                       std::size_t spatial) {
  const bool batched = in.size() == spatial + 2;
  if (in.size() != spatial + 1 && !batched) {
    throw ShapeError(std::string(op) + ": input must have rank " + std::to_string(spatial + 1) +
                     " or " + std::to_string(spatial + 2) + ", got " + shape_str(in));
  }
  if (k.size() != spatial + 2) {
    throw ShapeError(std::string(op) + ": kernel must have rank " + std::to_string(spatial + 2) +
                     ", got " + shape_str(k));
  }
  const std::size_t off = batched ? 1 : 0;
  kernels::ConvGeometry g;
  g.n = batched ? in[0] : 1;
  g.h = in[off];
  g.w = in[off + 1];
  g.d = spatial == 3 ? in[off + 2] : 1;
  g.cin = in.back();
  g.kh = k[0];
  g.kw = k[1];
  g.kd = spatial == 3 ? k[2] : 1;
  g.cout = k.back();
  if (k[spatial] != g.cin) {
    throw ShapeError(std::string(op) + ": kernel " + shape_str(k) + " expects " +
                     std::to_string(k[spatial]) + " input channels, input " + shape_str(in) +
                     " has " + std::to_string(g.cin));
  }
  if (b.size() != 1 || b[0] != g.cout) {
    throw ShapeError(std::string(op) + ": bias " + shape_str(b) + " must be [" +
                     std::to_string(g.cout) + "]");
  }
  if (g.kh > g.h || g.kw > g.w || g.kd > g.d) {
    throw ShapeError(std::string(op) + ": kernel " + shape_str(k) + " larger than input " +
                     shape_str(in));
  }
  Shape out;
  if (batched) out.push_back(g.n);
  out.push_back(g.oh());
  out.push_back(g.ow());
  if (spatial == 3) out.push_back(g.od());
  out.push_back(g.cout);
  return {g, out};
}

template <typename T>
Var<T> conv_impl(const char* op, Var<T> input, Var<T> kernel, Var<T> bias, std::size_t spatial) {
  Tape<T>& tape = input.tape();
  auto in = tape.value_ptr(input);
  auto ker = tape.value_ptr(kernel);
  const ConvShapes s = conv_shapes(op, in->shape(), ker->shape(), bias.shape(), spatial);
  Tensor<T> out(s.output);
  kernels::conv_forward<T>(s.geometry, in->data(), ker->data(), bias.value().data(), out.data());
  const kernels::ConvGeometry g = s.geometry;
  return tape.record(op, std::move(out), {input, kernel, bias},
                     [in, ker, g](const Tensor<T>& grad, std::span<Tensor<T>* const> gi) {
                       if (gi[0]) kernels::conv_backward_input<T>(g, ker->data(), grad.data(), gi[0]->data());
                       if (gi[1] || gi[2]) {
                         Tensor<T> dk_scratch;
                         Tensor<T> db_scratch;
                         std::span<T> dk, db;
                         if (gi[1]) {
                           dk = gi[1]->data();
                         } else {
                           dk_scratch = Tensor<T>(ker->shape());
                           dk = dk_scratch.data();
                         }
                         if (gi[2]) {
                           db = gi[2]->data();
                         } else {
                           db_scratch = Tensor<T>(Shape{g.cout});
                           db = db_scratch.data();
                         }
                         kernels::conv_backward_kernel<T>(g, in->data(), grad.data(), dk, db);
                       }
                     });
}

template <typename T, std::size_t Spatial>
Var<T> maxpool_impl(Var<T> input, std::array<std::size_t, Spatial> window) {
  static constexpr const char* kAxis[] = {"h", "w", "d"};
  const Shape& shape = input.shape();
  const bool batched = shape.size() == Spatial + 2;
  if (shape.size() != Spatial + 1 && !batched) {
    throw ShapeError("maxpool: input rank " + std::to_string(shape.size()) +
                     " does not fit a " + std::to_string(Spatial) + "-axis window");
  }
  const std::size_t off = batched ? 1 : 0;
  kernels::PoolGeometry g;
  g.n = batched ? shape[0] : 1;
  g.c = shape.back();
  std::array<std::size_t, 3> ext{1, 1, 1};
  std::array<std::size_t, 3> win{1, 1, 1};
  for (std::size_t a = 0; a < Spatial; ++a) {
    ext[a] = shape[off + a];
    if (window[a] == 0) throw ShapeError("maxpool: window on axis " + std::string(kAxis[a]) + " is zero");
    win[a] = ext[a] == 1 ? 1 : window[a];
    if (ext[a] % win[a] != 0) {
      throw ShapeError("maxpool: extent " + std::to_string(ext[a]) + " on axis " + kAxis[a] +
                       " is not divisible by window " + std::to_string(win[a]));
    }
  }
  g.h = ext[0];
  g.w = ext[1];
  g.d = ext[2];
  g.wh = win[0];
  g.ww = win[1];
  g.wd = win[2];
  Shape out_shape;
  if (batched) out_shape.push_back(g.n);
  out_shape.push_back(g.oh());
  out_shape.push_back(g.ow());
  if (Spatial == 3) out_shape.push_back(g.od());
  out_shape.push_back(g.c);

  Tensor<T> out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  kernels::maxpool_forward<T>(g, input.value().data(), out.data(), *argmax);
  return input.tape().record("maxpool", std::move(out), {input},
                             [g, argmax](const Tensor<T>& grad, std::span<Tensor<T>* const> gi) {
                               kernels::maxpool_backward<T>(g, *argmax, grad.data(), gi[0]->data());
                             });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record("add", std::move(out), {a, b},
                         [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           for (Tensor<T>* d : gi) {
                             if (!d) continue;
                             for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
                           }
                         });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  auto av = a.tape().value_ptr(a);
  auto bv = b.tape().value_ptr(b);
  Tensor<T> out(av->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] * (*bv)[i];
  return a.tape().record("mul", std::move(out), {a, b},
                         [av, bv](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           if (gi[0])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (*bv)[i];
                           if (gi[1])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * (*av)[i];
                         });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return unary<T>("scale", a, [factor](T x) { return x * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Var<T> one_minus(Var<T> a) {
  return unary<T>("one_minus", a, [](T x) { return T{1} - x; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc{0};
  for (T v : a.value().data()) acc += v;
  return a.tape().record("sum", Tensor<T>::scalar(acc), {a},
                         [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           for (std::size_t i = 0; i < gi[0]->size(); ++i) (*gi[0])[i] += g[0];
                         });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary<T>("relu", a, [](T x) { return x < T{0} ? T{0} : x; },  // NaN passes through
                  [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary<T>("sigmoid", a,
                  [](T x) {
                    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
                    const T e = std::exp(x);
                    return e / (T{1} + e);
                  },
                  [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary<T>("tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a},
                         [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                         });
}

template <typename T>
Var<T> flatten(Var<T> a) {
  const Shape& s = a.shape();
  if (s.size() < 2) return a;
  return reshape(a, Shape{s[0], a.value().size() / s[0]});
}

template <typename T>
Var<T> concat_last(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_last: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t ca = sa.back(), cb = sb.back();
  const std::size_t rows = a.value().size() / ca;
  Shape so = sa;
  so.back() = ca + cb;
  Tensor<T> out(so);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.raw() + r * ca, ca, out.raw() + r * (ca + cb));
    std::copy_n(bv.raw() + r * cb, cb, out.raw() + r * (ca + cb) + ca);
  }
  return a.tape().record("concat", std::move(out), {a, b},
                         [rows, ca, cb](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           for (std::size_t r = 0; r < rows; ++r) {
                             const T* gr = g.raw() + r * (ca + cb);
                             if (gi[0])
                               for (std::size_t j = 0; j < ca; ++j) (*gi[0])[r * ca + j] += gr[j];
                             if (gi[1])
                               for (std::size_t j = 0; j < cb; ++j) (*gi[1])[r * cb + j] += gr[ca + j];
                           }
                         });
}

template <typename T>
Var<T> slice_last(Var<T> a, std::size_t begin, std::size_t count) {
  const Shape& s = a.shape();
  const std::size_t c = s.back();
  if (count == 0 || begin + count > c) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside last axis of " + shape_str(s));
  }
  const std::size_t rows = a.value().size() / c;
  Shape so = s;
  so.back() = count;
  Tensor<T> out(so);
  const auto& av = a.value();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.raw() + r * c + begin, count, out.raw() + r * count);
  return a.tape().record("slice", std::move(out), {a},
                         [rows, c, begin, count](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < count; ++j)
                               (*gi[0])[r * c + begin + j] += g[r * count + j];
                         });
}

template <typename T>
Var<T> select_step(Var<T> a, std::size_t step) {
  const Shape& s = a.shape();
  if (s.size() != 3 || step >= s[1]) {
    throw ShapeError("select_step: step " + std::to_string(step) + " invalid for " + shape_str(s));
  }
  const std::size_t n = s[0], steps = s[1], f = s[2];
  Tensor<T> out(Shape{n, f});
  for (std::size_t b = 0; b < n; ++b)
    std::copy_n(a.value().raw() + (b * steps + step) * f, f, out.raw() + b * f);
  return a.tape().record("select_step", std::move(out), {a},
                         [n, steps, f, step](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t j = 0; j < f; ++j)
                               (*gi[0])[(b * steps + step) * f + j] += g[b * f + j];
                         });
}

template <typename T>
Var<T> depth_to_batch(Var<T> a) {
  const Shape& s = a.shape();
  if (s.size() != 5) throw ShapeError("depth_to_batch: expected [N,H,W,D,C], got " + shape_str(s));
  const std::size_t n = s[0], h = s[1], w = s[2], d = s[3], c = s[4];
  Tensor<T> out(Shape{n * d, h, w, c});
  const auto& in = a.value();
  auto src = [=](std::size_t b, std::size_t x, std::size_t y, std::size_t z) {
    return (((b * h + x) * w + y) * d + z) * c;
  };
  auto dst = [=](std::size_t b, std::size_t z, std::size_t x, std::size_t y) {
    return (((b * d + z) * h + x) * w + y) * c;
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t x = 0; x < h; ++x)
      for (std::size_t y = 0; y < w; ++y)
        for (std::size_t z = 0; z < d; ++z)
          std::copy_n(in.raw() + src(b, x, y, z), c, out.raw() + dst(b, z, x, y));
  return a.tape().record("depth_to_batch", std::move(out), {a},
                         [=](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                           Tensor<T>& dx = *gi[0];
                           for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t x = 0; x < h; ++x)
                               for (std::size_t y = 0; y < w; ++y)
                                 for (std::size_t z = 0; z < d; ++z)
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                     dx[src(b, x, y, z) + ch] += g[dst(b, z, x, y) + ch];
                         });
}

template <typename T>
Var<T> conv3d(Var<T> input, Var<T> kernel, Var<T> bias) {
  return conv_impl<T>("conv3d", input, kernel, bias, 3);
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Var<T> bias) {
  return conv_impl<T>("conv2d", input, kernel, bias, 2);
}

template <typename T>
Var<T> maxpool3d(Var<T> input, std::array<std::size_t, 3> window) {
  return maxpool_impl<T, 3>(input, window);
}

template <typename T>
Var<T> maxpool2d(Var<T> input, std::array<std::size_t, 2> window) {
  return maxpool_impl<T, 2>(input, window);
}

template <typename T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormState<T> state, Mode mode,
                 const BatchNormConfig& config) {
  const Shape& s = input.shape();
  const std::size_t c = s.back();
  const std::size_t m = input.value().size() / c;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batchnorm: scale/shift must be [" + std::to_string(c) + "]");
  }
  if (!state.running_mean || !state.running_var || state.running_mean->shape() != Shape{c} ||
      state.running_var->shape() != Shape{c}) {
    throw ShapeError("batchnorm: running statistics must be [" + std::to_string(c) + "]");
  }
  if (mode == Mode::kTrain && m < 2) {
    throw std::invalid_argument("batchnorm: train mode needs a batch with at least two values per channel");
  }
  Tape<T>& tape = input.tape();
  auto xv = tape.value_ptr(input);
  auto gv = tape.value_ptr(gamma);

  auto mean_c = std::make_shared<std::vector<T>>(c);
  auto inv_std = std::make_shared<std::vector<T>>(c);
  if (mode == Mode::kTrain) {
    std::vector<double> mu(c, 0.0), var(c, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) mu[ch] += (*xv)[r * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) mu[ch] /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double dv = (*xv)[r * c + ch] - mu[ch];
        var[ch] += dv * dv;
      }
    for (std::size_t ch = 0; ch < c; ++ch) {
      var[ch] /= static_cast<double>(m);
      (*mean_c)[ch] = static_cast<T>(mu[ch]);
      (*inv_std)[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + config.epsilon));
      T& rm = (*state.running_mean)[ch];
      T& rv = (*state.running_var)[ch];
      rm = static_cast<T>(config.momentum * rm + (1.0 - config.momentum) * mu[ch]);
      rv = static_cast<T>(config.momentum * rv + (1.0 - config.momentum) * var[ch]);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      (*mean_c)[ch] = (*state.running_mean)[ch];
      (*inv_std)[ch] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>((*state.running_var)[ch]) + config.epsilon));
    }
  }

  auto xhat = std::make_shared<Tensor<T>>(s);
  Tensor<T> out(s);
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      (*xhat)[i] = ((*xv)[i] - (*mean_c)[ch]) * (*inv_std)[ch];
      out[i] = (*gv)[ch] * (*xhat)[i] + bv[ch];
    }
  const bool train = mode == Mode::kTrain;
  return tape.record(
      "batchnorm", std::move(out), {input, gamma, beta},
      [=](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        std::vector<T> sum_g(c, T{0}), sum_gx(c, T{0});
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t ch = 0; ch < c; ++ch) {
            sum_g[ch] += g[r * c + ch];
            sum_gx[ch] += g[r * c + ch] * (*xhat)[r * c + ch];
          }
        if (gi[1])
          for (std::size_t ch = 0; ch < c; ++ch) (*gi[1])[ch] += sum_gx[ch];
        if (gi[2])
          for (std::size_t ch = 0; ch < c; ++ch) (*gi[2])[ch] += sum_g[ch];
        if (!gi[0]) return;
        Tensor<T>& dx = *gi[0];
        const T inv_m = T{1} / static_cast<T>(m);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = r * c + ch;
            const T scale_c = (*gv)[ch] * (*inv_std)[ch];
            if (train) {
              dx[i] += scale_c * (g[i] - inv_m * sum_g[ch] - (*xhat)[i] * inv_m * sum_gx[ch]);
            } else {
              dx[i] += scale_c * g[i];
            }
          }
      });
}

template <typename T>
Var<T> dense(Var<T> input, Var<T> weight, Var<T> bias) {
  const Shape& si = input.shape();
  const Shape& sw = weight.shape();
  if (si.size() != 1 && si.size() != 2) throw ShapeError("dense: input must be [n] or [N,n], got " + shape_str(si));
  if (sw.size() != 2) throw ShapeError("dense: weight must be [n,m], got " + shape_str(sw));
  kernels::DenseGeometry g;
  g.batch = si.size() == 2 ? si[0] : 1;
  g.in = si.back();
  g.out = sw[1];
  if (sw[0] != g.in) {
    throw ShapeError("dense: input " + shape_str(si) + " does not match weight " + shape_str(sw));
  }
  if (bias.shape() != Shape{g.out}) throw ShapeError("dense: bias must be [" + std::to_string(g.out) + "]");
  Tape<T>& tape = input.tape();
  auto xv = tape.value_ptr(input);
  auto wv = tape.value_ptr(weight);
  Shape so = si;
  so.back() = g.out;
  Tensor<T> out(so);
  kernels::dense_forward<T>(g, xv->data(), wv->data(), bias.value().data(), out.data());
  return tape.record("dense", std::move(out), {input, weight, bias},
                     [g, xv, wv](const Tensor<T>& grad, std::span<Tensor<T>* const> gi) {
                       if (gi[0]) kernels::dense_backward_input<T>(g, wv->data(), grad.data(), gi[0]->data());
                       if (gi[1]) {
                         Tensor<T> db_scratch;
                         std::span<T> db;
                         if (gi[2]) {
                           db = gi[2]->data();
                         } else {
                           db_scratch = Tensor<T>(Shape{g.out});
                           db = db_scratch.data();
                         }
                         kernels::dense_backward_weight<T>(g, xv->data(), grad.data(), gi[1]->data(), db);
                       } else if (gi[2]) {
                         for (std::size_t b = 0; b < g.batch; ++b)
                           for (std::size_t j = 0; j < g.out; ++j) (*gi[2])[j] += grad[b * g.out + j];
                       }
                     });
}

template <typename T>
Var<T> dropout(Var<T> input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kInfer || rate == 0.0) return input;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Tensor<T>>(input.shape());
  for (std::size_t i = 0; i < mask->size(); ++i) (*mask)[i] = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> out(input.shape());
  const auto& xv = input.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return input.tape().record("dropout", std::move(out), {input},
                             [mask](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (*mask)[i];
                             });
}

template <typename T>
LstmState<T> lstm_cell(Var<T> x, LstmState<T> state, Var<T> weight, Var<T> bias) {
  const Shape& sx = x.shape();
  const Shape& sh = state.h.shape();
  if (sh != state.c.shape()) {
    throw ShapeError("lstm_cell: hidden " + shape_str(sh) + " and cell " +
                     shape_str(state.c.shape()) + " differ");
  }
  if (sx.size() != sh.size() || (sx.size() == 2 && sx[0] != sh[0])) {
    throw ShapeError("lstm_cell: input " + shape_str(sx) + " and state " + shape_str(sh) + " disagree");
  }
  const std::size_t f = sx.back();
  const std::size_t u = sh.back();
  if (weight.shape() != Shape{f + u, 4 * u} || bias.shape() != Shape{4 * u}) {
    throw ShapeError("lstm_cell: gate parameters must be " + shape_str(Shape{f + u, 4 * u}) + " and [" +
                     std::to_string(4 * u) + "], got " + shape_str(weight.shape()) + " and " +
                     shape_str(bias.shape()));
  }
  Var<T> z = dense(concat_last(x, state.h), weight, bias);
  Var<T> in_gate = sigmoid(slice_last(z, 0, u));
  Var<T> forget_gate = sigmoid(slice_last(z, u, u));
  Var<T> cell_in = tanh(slice_last(z, 2 * u, u));
  Var<T> out_gate = sigmoid(slice_last(z, 3 * u, u));
  Var<T> c_next = add(mul(forget_gate, state.c), mul(in_gate, cell_in));
  Var<T> h_next = mul(out_gate, tanh(c_next));
  return {h_next, c_next};
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.size() / c;
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.raw() + r * c;
    T* p = out.raw() + r * c;
    T mx = *std::max_element(z, z + c);
    T total{0};
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - mx);
      total += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= total;
  }
  return out;
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 1 && s.size() != 2) throw ShapeError("softmax_cross_entropy: logits must be [C] or [N,C]");
  const std::size_t c = s.back();
  const std::size_t n = s.size() == 2 ? s[0] : 1;
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
    }
  }
  auto probs = std::make_shared<Tensor<T>>(softmax(logits.value()));
  const auto& z = logits.value();
  T loss{0};
  for (std::size_t r = 0; r < n; ++r) {
    const T* zr = z.raw() + r * c;
    const T mx = *std::max_element(zr, zr + c);
    T total{0};
    for (std::size_t j = 0; j < c; ++j) total += std::exp(zr[j] - mx);
    loss += mx + std::log(total) - zr[labels[r]];
  }
  loss /= static_cast<T>(n);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return logits.tape().record("softmax_cross_entropy", Tensor<T>::scalar(loss), {logits},
                              [probs, label_copy, n, c](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                                const T w = g[0] / static_cast<T>(n);
                                for (std::size_t r = 0; r < n; ++r)
                                  for (std::size_t j = 0; j < c; ++j) {
                                    const T onehot = static_cast<int>(j) == label_copy[r] ? T{1} : T{0};
                                    (*gi[0])[r * c + j] += w * ((*probs)[r * c + j] - onehot);
                                  }
                              });
}

#define AXI_INSTANTIATE_OPS(T)                                                                 \
  template Var<T> add<T>(Var<T>, Var<T>);                                                      \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                      \
  template Var<T> scale<T>(Var<T>, T);                                                         \
  template Var<T> one_minus<T>(Var<T>);                                                        \
  template Var<T> sum<T>(Var<T>);                                                              \
  template Var<T> mean<T>(Var<T>);                                                             \
  template Var<T> relu<T>(Var<T>);                                                             \
  template Var<T> sigmoid<T>(Var<T>);                                                          \
  template Var<T> tanh<T>(Var<T>);                                                             \
  template Var<T> reshape<T>(Var<T>, Shape);                                                   \
  template Var<T> flatten<T>(Var<T>);                                                          \
  template Var<T> concat_last<T>(Var<T>, Var<T>);                                              \
  template Var<T> slice_last<T>(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> select_step<T>(Var<T>, std::size_t);                                         \
  template Var<T> depth_to_batch<T>(Var<T>);                                                   \
  template Var<T> conv3d<T>(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> maxpool3d<T>(Var<T>, std::array<std::size_t, 3>);                            \
  template Var<T> maxpool2d<T>(Var<T>, std::array<std::size_t, 2>);                            \
  template Var<T> batchnorm<T>(Var<T>, Var<T>, Var<T>, BatchNormState<T>, Mode,                \
                               const BatchNormConfig&);                                        \
  template Var<T> dense<T>(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> dropout<T>(Var<T>, double, Mode, Rng&);                                      \
  template LstmState<T> lstm_cell<T>(Var<T>, LstmState<T>, Var<T>, Var<T>);                    \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>);                      \
  template Tensor<T> softmax<T>(const Tensor<T>&);

AXI_INSTANTIATE_OPS(float)
AXI_INSTANTIATE_OPS(double)

#undef AXI_INSTANTIATE_OPS

}  // namespace axi::nn
