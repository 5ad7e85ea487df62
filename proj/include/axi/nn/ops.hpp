#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>

#include "axi/nn/tape.hpp"
#include "axi/nn/tensor.hpp"
#include "axi/rng.hpp"

// Differentiable operations over a Tape. Layer ops accept an optional leading
// batch axis: conv3d takes [H,W,D,C] or [N,H,W,D,C], conv2d [H,W,C] or
// [N,H,W,C], dense [n] or [N,n]. Channels are always the last axis.

namespace axi::nn {

enum class Mode { kTrain, kInfer };

// --- elementwise and structural ---------------------------------------------

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
/// 1 - a, used for LSTM-style gating.
template <typename T> Var<T> one_minus(Var<T> a);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
/// Keeps axis 0 and collapses the rest: [N, ...] -> [N, prod(...)].
template <typename T> Var<T> flatten(Var<T> a);
/// Concatenates along the last axis; leading axes must match.
template <typename T> Var<T> concat_last(Var<T> a, Var<T> b);
/// Columns [begin, begin+count) of the last axis.
template <typename T> Var<T> slice_last(Var<T> a, std::size_t begin, std::size_t count);
/// [N, S, F] -> [N, F] at position `step` of axis 1.
template <typename T> Var<T> select_step(Var<T> a, std::size_t step);
/// [N, H, W, D, C] -> [N*D, H, W, C], ordered (n, d).
template <typename T> Var<T> depth_to_batch(Var<T> a);

// --- layers -------------------------------------------------------------------

/// Valid (unpadded) stride-1 convolution. kernel [kh,kw,kd,Cin,Cout], bias [Cout].
template <typename T> Var<T> conv3d(Var<T> input, Var<T> kernel, Var<T> bias);
/// kernel [kh,kw,Cin,Cout], bias [Cout].
template <typename T> Var<T> conv2d(Var<T> input, Var<T> kernel, Var<T> bias);

/// Disjoint-window max pooling over the spatial axes. The window is clamped to
/// 1 on any axis of extent 1; every other extent must divide by its window.
template <typename T> Var<T> maxpool3d(Var<T> input, std::array<std::size_t, 3> window);
template <typename T> Var<T> maxpool2d(Var<T> input, std::array<std::size_t, 2> window);

struct BatchNormConfig {
  double epsilon = 1e-5;
  double momentum = 0.99;
  bool operator==(const BatchNormConfig&) const = default;
};

/// Running statistics are updated in place in train mode and only read in
/// infer mode.
template <typename T>
struct BatchNormState {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
};

/// Normalizes over every axis but the last. Train mode uses batch statistics
/// (biased variance) and folds them into the running statistics with
/// `momentum`; infer mode uses the running statistics.
template <typename T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormState<T> state,
                 Mode mode, const BatchNormConfig& config = {});

template <typename T> Var<T> dense(Var<T> input, Var<T> weight, Var<T> bias);

/// Inverted dropout: train mode zeroes with probability `rate` and scales
/// survivors by 1/(1-rate). Infer mode is the identity and draws nothing.
template <typename T> Var<T> dropout(Var<T> input, double rate, Mode mode, Rng& rng);

template <typename T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

/// One LSTM step. weight [(F+U), 4U] and bias [4U] hold the gates in the
/// order input, forget, cell, output.
template <typename T>
LstmState<T> lstm_cell(Var<T> x, LstmState<T> state, Var<T> weight, Var<T> bias);

/// Mean over the batch of -log softmax(logits)[label]. logits [C] or [N, C].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

/// Row-wise softmax of a [C] or [N, C] tensor (value only).
template <typename T> Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace axi::nn
