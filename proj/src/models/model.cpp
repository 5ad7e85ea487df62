#include "axi/models/model.hpp"

#include <cmath>
#include <stdexcept>

namespace axi::models {

using nn::Mode;
using nn::Shape;
using nn::Tensor;
using nn::Var;

std::string to_string(Arch arch) { return arch == Arch::kLstm ? "lstm" : "cnn3d"; }

Arch parse_arch(const std::string& text) {
  if (text == "cnn3d") return Arch::kCnn3d;
  if (text == "lstm") return Arch::kLstm;
  throw std::invalid_argument("architecture must be 'cnn3d' or 'lstm', got '" + text + "'");
}

ModelSpec ModelSpec::full(Arch arch) {
  ModelSpec s;
  s.arch = arch;
  return s;
}

ModelSpec ModelSpec::shrunken(Arch arch) {
  ModelSpec s;
  s.arch = arch;
  s.variant = "shrunken";
  s.side = 16;
  s.widths = {2, 4, 8, 16};
  s.dense_hidden = 12;
  s.encoder_features = 10;
  s.lstm_units = 6;
  s.head_hidden = 8;
  return s;
}

ModelSpec ModelSpec::desk(Arch arch) {
  ModelSpec s;
  s.arch = arch;
  s.variant = "desk";
  s.side = 32;
  s.widths = {4, 8, 16, 32};
  s.dense_hidden = 256;
  s.encoder_features = 256;
  s.lstm_units = 128;
  s.head_hidden = 64;
  return s;
}

ModelSpec ModelSpec::preset(const std::string& variant, Arch arch) {
  if (variant == "full") return full(arch);
  if (variant == "shrunken") return shrunken(arch);
  if (variant == "desk") return desk(arch);
  throw std::invalid_argument("unknown model variant '" + variant + "' (full, desk, shrunken)");
}

std::size_t ModelSpec::trunk_side() const {
  validate();
  return ((side - 4) / 2 - 4) / 2;
}

std::size_t ModelSpec::flat_features() const { return trunk_side() * trunk_side() * widths[3]; }

void ModelSpec::validate() const {
  // Two valid 3x3 convs, pool 2, two more, pool 2.
  if (side < 14 || (side - 4) % 2 != 0 || ((side - 4) / 2 - 4) % 2 != 0) {
    throw std::invalid_argument("input side " + std::to_string(side) +
                                " does not pool evenly: need (side-4)/2-4 positive and even");
  }
  for (std::size_t w : widths) {
    if (w == 0) throw std::invalid_argument("conv widths must be positive");
  }
  if (dense_hidden == 0 || encoder_features == 0 || lstm_units == 0 || head_hidden == 0) {
    throw std::invalid_argument("hidden sizes must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
}

template <typename T>
std::size_t ParamSet<T>::index(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
std::size_t ParamSet<T>::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.trainable ? e.value.size() : 0;
  return n;
}

namespace {

struct Layout {
  std::string name;
  Shape shape;
  enum Kind { kWeight, kBias, kOnes, kZeros, kRunningMean, kRunningVar } kind;
  std::size_t fan_in = 0;
};

std::vector<Layout> layout(const ModelSpec& spec) {
  spec.validate();
  const auto& w = spec.widths;
  std::vector<Layout> l;
  auto weight = [&](const std::string& name, Shape shape) {
    std::size_t fan_in = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    const std::size_t out = shape.back();
    l.push_back({name + ".weight", std::move(shape), Layout::kWeight, fan_in});
    l.push_back({name + ".bias", Shape{out}, Layout::kBias});
  };
  auto batchnorm = [&](const std::string& name, std::size_t c) {
    l.push_back({name + ".gamma", Shape{c}, Layout::kOnes});
    l.push_back({name + ".beta", Shape{c}, Layout::kZeros});
    l.push_back({name + ".running_mean", Shape{c}, Layout::kRunningMean});
    l.push_back({name + ".running_var", Shape{c}, Layout::kRunningVar});
  };
  if (spec.arch == Arch::kCnn3d) {
    weight("conv1", {3, 3, 2, 1, w[0]});
    weight("conv2", {3, 3, 2, w[0], w[1]});
    weight("conv3", {3, 3, 1, w[1], w[2]});
    weight("conv4", {3, 3, 1, w[2], w[3]});
    batchnorm("bn", w[3]);
    weight("dense1", {spec.flat_features(), spec.dense_hidden});
    weight("dense2", {spec.dense_hidden, kClasses});
  } else {
    weight("enc.conv1", {3, 3, 1, w[0]});
    weight("enc.conv2", {3, 3, w[0], w[1]});
    weight("enc.conv3", {3, 3, w[1], w[2]});
    weight("enc.conv4", {3, 3, w[2], w[3]});
    batchnorm("enc.bn", w[3]);
    weight("enc.dense", {spec.flat_features(), spec.encoder_features});
    weight("lstm", {spec.encoder_features + spec.lstm_units, 4 * spec.lstm_units});
    weight("head1", {spec.lstm_units, spec.head_hidden});
    weight("head2", {spec.head_hidden, kClasses});
  }
  return l;
}

}  // namespace

std::vector<ParamInfo> param_layout(const ModelSpec& spec) {
  std::vector<ParamInfo> out;
  for (const auto& e : layout(spec)) {
    out.push_back({e.name, e.shape, e.kind != Layout::kRunningMean && e.kind != Layout::kRunningVar});
  }
  return out;
}

template <typename T>
ParamSet<T> init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamSet<T> params;
  const auto entries = layout(spec);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Layout& e = entries[i];
    Tensor<T> value(e.shape);
    bool trainable = true;
    switch (e.kind) {
      case Layout::kWeight: {
        Rng rng(derive_seed(seed, i));
        const double a = std::sqrt(6.0 / static_cast<double>(e.fan_in));
        for (T& v : value.data()) v = static_cast<T>(rng.uniform(-a, a));
        break;
      }
      case Layout::kOnes: value.fill(T{1}); break;
      case Layout::kRunningVar:
        value.fill(T{1});
        trainable = false;
        break;
      case Layout::kRunningMean: trainable = false; break;
      default: break;
    }
    params.entries.push_back({e.name, std::move(value), trainable});
  }
  return params;
}

template <typename T>
std::vector<Var<T>> bind_params(ParamSet<T>& params, nn::Tape<T>& tape, bool requires_grad) {
  std::vector<Var<T>> vars;
  vars.reserve(params.entries.size());
  for (auto& e : params.entries) vars.push_back(e.trainable ? tape.parameter(e.value, requires_grad) : Var<T>{});
  return vars;
}

namespace {

template <typename T>
class Net {
 public:
  Net(const ModelSpec& spec, ParamSet<T>& params, std::span<const Var<T>> bound, Mode mode, ShapeTrace* trace)
      : spec_(spec), params_(params), bound_(bound), mode_(mode), trace_(trace) {
    if (bound.size() != params.entries.size()) throw std::invalid_argument("bound parameter list does not match");
  }

  Var<T> p(const std::string& name) const {
    const Var<T>& v = bound_[params_.index(name)];
    if (!v.valid()) throw std::logic_error("parameter '" + name + "' is not bound");
    return v;
  }

  nn::BatchNormState<T> bn_state(const std::string& name) {
    return {&params_.at(name + ".running_mean"), &params_.at(name + ".running_var")};
  }

  Var<T> batchnorm(Var<T> x, const std::string& name) {
    return nn::batchnorm(x, p(name + ".gamma"), p(name + ".beta"), bn_state(name), mode_, spec_.batchnorm);
  }

  /// Records the shape without the leading `drop` axes.
  Var<T> note(const std::string& layer, Var<T> v, Shape per_example) {
    if (trace_) trace_->emplace_back(layer, std::move(per_example));
    return v;
  }
  Var<T> note(const std::string& layer, Var<T> v) {
    const Shape& s = v.shape();
    return note(layer, v, Shape(s.begin() + 1, s.end()));
  }

  Mode mode() const { return mode_; }
  const ModelSpec& spec() const { return spec_; }

 private:
  const ModelSpec& spec_;
  ParamSet<T>& params_;
  std::span<const Var<T>> bound_;
  Mode mode_;
  ShapeTrace* trace_;
};

template <typename T>
Var<T> batched_input(const ModelSpec& spec, Var<T> input) {
  const Shape expected{spec.side, spec.side, kSlices, 1};
  Shape s = input.shape();
  if (s == expected) return nn::reshape(input, Shape{1, spec.side, spec.side, kSlices, 1});
  if (s.size() == 5 && Shape(s.begin() + 1, s.end()) == expected) return input;
  throw nn::ShapeError("model input must be " + nn::shape_str(expected) + " with optional batch axis, got " +
                       nn::shape_str(s));
}

template <typename T>
Var<T> forward_cnn3d(Net<T>& net, Var<T> x, Rng& rng) {
  const double rate = net.spec().dropout;
  net.note("input", x);
  Var<T> h = net.note("conv3d", nn::relu(nn::conv3d(x, net.p("conv1.weight"), net.p("conv1.bias"))));
  h = net.note("conv3d", nn::relu(nn::conv3d(h, net.p("conv2.weight"), net.p("conv2.bias"))));
  h = net.note("maxpool", nn::maxpool3d(h, {2, 2, 2}));
  h = net.note("conv3d", nn::relu(nn::conv3d(h, net.p("conv3.weight"), net.p("conv3.bias"))));
  h = net.note("conv3d", nn::relu(nn::conv3d(h, net.p("conv4.weight"), net.p("conv4.bias"))));
  h = net.note("maxpool", nn::maxpool3d(h, {2, 2, 2}));
  h = net.note("batchnorm", net.batchnorm(h, "bn"));
  h = net.note("flatten", nn::flatten(h));
  h = net.note("dropout", nn::dropout(h, rate, net.mode(), rng));
  h = net.note("dense", nn::relu(nn::dense(h, net.p("dense1.weight"), net.p("dense1.bias"))));
  h = net.note("dropout", nn::dropout(h, rate, net.mode(), rng));
  return net.note("dense", nn::dense(h, net.p("dense2.weight"), net.p("dense2.bias")));
}

template <typename T>
Var<T> encode(Net<T>& net, Var<T> x) {
  const std::size_t n = x.shape()[0];
  net.note("input", x);
  Var<T> h = nn::depth_to_batch(x);  // [N*6, s, s, 1], slice-major within each example
  net.note("slice", h);
  h = net.note("conv2d", nn::relu(nn::conv2d(h, net.p("enc.conv1.weight"), net.p("enc.conv1.bias"))));
  h = net.note("conv2d", nn::relu(nn::conv2d(h, net.p("enc.conv2.weight"), net.p("enc.conv2.bias"))));
  h = net.note("maxpool", nn::maxpool2d(h, {2, 2}));
  h = net.note("conv2d", nn::relu(nn::conv2d(h, net.p("enc.conv3.weight"), net.p("enc.conv3.bias"))));
  h = net.note("conv2d", nn::relu(nn::conv2d(h, net.p("enc.conv4.weight"), net.p("enc.conv4.bias"))));
  h = net.note("maxpool", nn::maxpool2d(h, {2, 2}));
  h = net.note("batchnorm", net.batchnorm(h, "enc.bn"));
  h = net.note("flatten", nn::flatten(h));
  h = net.note("dense", nn::relu(nn::dense(h, net.p("enc.dense.weight"), net.p("enc.dense.bias"))));
  return net.note("sequence", nn::reshape(h, Shape{n, kSlices, net.spec().encoder_features}));
}

template <typename T>
Var<T> forward_lstm(Net<T>& net, Var<T> x, Rng& rng) {
  const std::size_t n = x.shape()[0];
  const std::size_t u = net.spec().lstm_units;
  Var<T> seq = encode(net, x);
  nn::Tape<T>& tape = x.tape();
  nn::LstmState<T> state{tape.constant(Tensor<T>(Shape{n, u})), tape.constant(Tensor<T>(Shape{n, u}))};
  // Always six steps; zero-padded slices are still fed.
  for (std::size_t t = 0; t < kSlices; ++t) {
    state = nn::lstm_cell(nn::select_step(seq, t), state, net.p("lstm.weight"), net.p("lstm.bias"));
  }
  Var<T> h = net.note("lstm", state.h);
  h = net.note("dense", nn::relu(nn::dense(h, net.p("head1.weight"), net.p("head1.bias"))));
  h = net.note("dropout", nn::dropout(h, net.spec().dropout, net.mode(), rng));
  return net.note("dense", nn::dense(h, net.p("head2.weight"), net.p("head2.bias")));
}

}  // namespace

template <typename T>
Var<T> forward(const ModelSpec& spec, ParamSet<T>& params, std::span<const Var<T>> bound, Var<T> input, Mode mode,
               Rng& rng, ShapeTrace* trace) {
  Net<T> net(spec, params, bound, mode, trace);
  Var<T> x = batched_input(spec, input);
  return spec.arch == Arch::kCnn3d ? forward_cnn3d(net, x, rng) : forward_lstm(net, x, rng);
}

template <typename T>
Var<T> encode_slices(const ModelSpec& spec, ParamSet<T>& params, std::span<const Var<T>> bound, Var<T> input,
                     Mode mode, ShapeTrace* trace) {
  if (spec.arch != Arch::kLstm) throw std::invalid_argument("encode_slices needs the lstm architecture");
  Net<T> net(spec, params, bound, mode, trace);
  return encode(net, batched_input(spec, input));
}

template <typename T>
std::vector<T> predict(const ModelSpec& spec, ParamSet<T>& params, const Tensor<T>& batch) {
  constexpr std::size_t kChunk = 16;
  const Shape& s = batch.shape();
  if (s.size() != 5) throw nn::ShapeError("predict expects [N, side, side, 6, 1], got " + nn::shape_str(s));
  const std::size_t n = s[0];
  const std::size_t per = batch.size() / n;
  std::vector<T> out;
  out.reserve(n);
  Rng unused(0);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    Shape cs = s;
    cs[0] = m;
    std::vector<T> chunk(batch.data().begin() + start * per, batch.data().begin() + (start + m) * per);
    nn::Tape<T> tape;
    const auto bound = bind_params(params, tape, false);
    const Var<T> x = tape.constant(Tensor<T>(cs, std::move(chunk)));
    const Tensor<T> probs = nn::softmax(forward(spec, params, std::span<const Var<T>>(bound), x, Mode::kInfer, unused).value());
    for (std::size_t i = 0; i < m; ++i) out.push_back(probs[i * kClasses + kDefectClass]);
  }
  return out;
}

#define AXI_INSTANTIATE(T)                                                                                         \
  template struct ParamSet<T>;                                                                                     \
  template ParamSet<T> init_params<T>(const ModelSpec&, std::uint64_t);                                            \
  template std::vector<Var<T>> bind_params<T>(ParamSet<T>&, nn::Tape<T>&, bool);                                   \
  template Var<T> forward<T>(const ModelSpec&, ParamSet<T>&, std::span<const Var<T>>, Var<T>, Mode, Rng&,          \
                             ShapeTrace*);                                                                         \
  template Var<T> encode_slices<T>(const ModelSpec&, ParamSet<T>&, std::span<const Var<T>>, Var<T>, Mode,          \
                                   ShapeTrace*);                                                                   \
  template std::vector<T> predict<T>(const ModelSpec&, ParamSet<T>&, const Tensor<T>&);

AXI_INSTANTIATE(float)
AXI_INSTANTIATE(double)

}  // namespace axi::models
