#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "axi/nn/ops.hpp"
#include "axi/nn/tape.hpp"
#include "axi/nn/tensor.hpp"
#include "axi/rng.hpp"

namespace axi::models {

enum class Arch : std::uint8_t { kCnn3d = 0, kLstm = 1 };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& text);

inline constexpr std::size_t kSlices = 6;
inline constexpr std::size_t kClasses = 2;
inline constexpr int kDefectClass = 1;

struct ModelSpec {
  Arch arch = Arch::kCnn3d;
  std::string variant = "full";
  std::size_t side = 128;                               // input patch is side x side x 6 x 1
  std::array<std::size_t, 4> widths{8, 16, 32, 64};     // conv output channels
  std::size_t dense_hidden = 1024;                      // cnn3d first dense layer
  std::size_t encoder_features = 2048;                  // lstm per-slice feature vector
  std::size_t lstm_units = 2048;
  std::size_t head_hidden = 512;                        // lstm classifier hidden layer
  double dropout = 0.5;
  nn::BatchNormConfig batchnorm;

  static ModelSpec full(Arch arch);
  /// 16x16 input, conv widths / 4, small hidden layers; for gradient checks.
  static ModelSpec shrunken(Arch arch);
  /// 32x32 input, conv widths / 4; trains in minutes on one core.
  static ModelSpec desk(Arch arch);
  static ModelSpec preset(const std::string& variant, Arch arch);

  /// Spatial extent after the conv/pool trunk (29 at side 128).
  std::size_t trunk_side() const;
  /// Flattened trunk size: trunk_side^2 * widths[3] (53824 at full size).
  std::size_t flat_features() const;
  /// Throws std::invalid_argument if the trunk arithmetic does not close.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

template <typename T>
struct Param {
  std::string name;
  nn::Tensor<T> value;
  bool trainable = true;  // false for batch-norm running statistics
};

template <typename T>
struct ParamSet {
  std::vector<Param<T>> entries;

  std::size_t index(const std::string& name) const;
  nn::Tensor<T>& at(const std::string& name) { return entries[index(name)].value; }
  const nn::Tensor<T>& at(const std::string& name) const { return entries[index(name)].value; }
  std::size_t trainable_scalars() const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries) out.entries.push_back({e.name, e.value.template cast<U>(), e.trainable});
    return out;
  }
};

struct ParamInfo {
  std::string name;
  nn::Shape shape;
  bool trainable = true;
};

/// Names and shapes of every entry init_params creates, in order.
std::vector<ParamInfo> param_layout(const ModelSpec& spec);

/// Fan-in scaled uniform weights, U(-a, a) with a = sqrt(6 / fan_in), so the
/// variance is 2 / fan_in. Biases and batch-norm shift zero, scale one,
/// running mean 0 and variance 1.
template <typename T>
ParamSet<T> init_params(const ModelSpec& spec, std::uint64_t seed);

/// Layer name and per-example output shape, in execution order.
using ShapeTrace = std::vector<std::pair<std::string, nn::Shape>>;

/// Puts every trainable entry on the tape (aliasing, no copy). Entries that
/// are not trainable get an invalid Var.
template <typename T>
std::vector<nn::Var<T>> bind_params(ParamSet<T>& params, nn::Tape<T>& tape, bool requires_grad = true);

/// input [N, side, side, 6, 1] (or without N). Returns logits [N, 2].
/// Batch-norm running statistics in `params` update in train mode.
template <typename T>
nn::Var<T> forward(const ModelSpec& spec, ParamSet<T>& params, std::span<const nn::Var<T>> bound, nn::Var<T> input,
                   nn::Mode mode, Rng& rng, ShapeTrace* trace = nullptr);

/// Per-slice encoder of the lstm model: [N, side, side, 6, 1] -> [N, 6, F].
template <typename T>
nn::Var<T> encode_slices(const ModelSpec& spec, ParamSet<T>& params, std::span<const nn::Var<T>> bound,
                         nn::Var<T> input, nn::Mode mode, ShapeTrace* trace = nullptr);

/// P(defect) for each example of a [N, side, side, 6, 1] batch, infer mode.
template <typename T>
std::vector<T> predict(const ModelSpec& spec, ParamSet<T>& params, const nn::Tensor<T>& batch);

}  // namespace axi::models
