#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "axi/models/checkpoint.hpp"
#include "axi/models/model.hpp"
#include "grad_check.hpp"
#include "temp_dir.hpp"

namespace axi::models {
namespace {

using nn::Mode;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

Tensor<double> random_batch(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return testing::random_tensor<double>(Shape{n, spec.side, spec.side, kSlices, 1}, gen, 0.0, 1.0);
}

template <typename T>
Tensor<T> logits_of(const ModelSpec& spec, ParamSet<T>& params, const Tensor<T>& x, Mode mode, std::uint64_t seed,
                    ShapeTrace* trace = nullptr) {
  Tape<T> tape;
  const auto bound = bind_params(params, tape, false);
  Rng rng(seed);
  return forward(spec, params, std::span<const Var<T>>(bound), tape.constant(x), mode, rng, trace).value();
}

const ParamInfo& find(const std::vector<ParamInfo>& layout, const std::string& name) {
  for (const auto& p : layout) {
    if (p.name == name) return p;
  }
  throw std::out_of_range(name);
}

TEST(ModelSpecTest, FullCnn3dWeightShapes) {
  const auto layout = param_layout(ModelSpec::full(Arch::kCnn3d));
  EXPECT_EQ(find(layout, "conv1.weight").shape, (Shape{3, 3, 2, 1, 8}));
  EXPECT_EQ(find(layout, "conv2.weight").shape, (Shape{3, 3, 2, 8, 16}));
  EXPECT_EQ(find(layout, "conv3.weight").shape, (Shape{3, 3, 1, 16, 32}));
  EXPECT_EQ(find(layout, "conv4.weight").shape, (Shape{3, 3, 1, 32, 64}));
  const auto& d1 = find(layout, "dense1.weight").shape;
  EXPECT_EQ(d1, (Shape{53824, 1024}));
  EXPECT_EQ(nn::shape_size(d1) + nn::shape_size(find(layout, "dense1.bias").shape), 53824u * 1024u + 1024u);
  EXPECT_EQ(find(layout, "dense2.weight").shape, (Shape{1024, 2}));
  EXPECT_FALSE(find(layout, "bn.running_mean").trainable);
  EXPECT_EQ(ModelSpec::full(Arch::kCnn3d).flat_features(), 53824u);
}

TEST(ModelSpecTest, FullLstmHeadShapes) {
  const auto layout = param_layout(ModelSpec::full(Arch::kLstm));
  EXPECT_EQ(find(layout, "enc.dense.weight").shape, (Shape{53824, 2048}));
  EXPECT_EQ(find(layout, "lstm.weight").shape, (Shape{4096, 8192}));
  EXPECT_EQ(find(layout, "head1.weight").shape, (Shape{2048, 512}));
  EXPECT_EQ(find(layout, "head2.weight").shape, (Shape{512, 2}));
}

TEST(ModelSpecTest, RejectsSidesThatDoNotPool) {
  ModelSpec s = ModelSpec::desk(Arch::kCnn3d);
  s.side = 30;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.side = 14;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_EQ(ModelSpec::desk(Arch::kCnn3d).flat_features(), 5u * 5u * 32u);
  EXPECT_EQ(ModelSpec::shrunken(Arch::kLstm).flat_features(), 16u);
  EXPECT_THROW(ModelSpec::preset("huge", Arch::kLstm), std::invalid_argument);
  EXPECT_THROW(parse_arch("rnn"), std::invalid_argument);
}

TEST(ModelTest, FullCnn3dTraceMatchesLayerTable) {
  const ModelSpec spec = ModelSpec::full(Arch::kCnn3d);
  auto params = init_params<float>(spec, 1);
  ShapeTrace trace;
  const Tensor<float> x(Shape{1, 128, 128, 6, 1}, 0.5f);
  const auto logits = logits_of(spec, params, x, Mode::kInfer, 0, &trace);
  const ShapeTrace expected{
      {"input", {128, 128, 6, 1}},   {"conv3d", {126, 126, 5, 8}}, {"conv3d", {124, 124, 4, 16}},
      {"maxpool", {62, 62, 2, 16}},  {"conv3d", {60, 60, 2, 32}},  {"conv3d", {58, 58, 2, 64}},
      {"maxpool", {29, 29, 1, 64}},  {"batchnorm", {29, 29, 1, 64}}, {"flatten", {53824}},
      {"dropout", {53824}},          {"dense", {1024}},            {"dropout", {1024}},
      {"dense", {2}}};
  EXPECT_EQ(trace, expected);
  EXPECT_EQ(logits.shape(), (Shape{1, 2}));
}

TEST(ModelTest, ShrunkenLstmTrace) {
  const ModelSpec spec = ModelSpec::shrunken(Arch::kLstm);
  auto params = init_params<double>(spec, 1);
  ShapeTrace trace;
  logits_of(spec, params, random_batch(spec, 2, 0), Mode::kInfer, 0, &trace);
  const ShapeTrace expected{{"input", {16, 16, 6, 1}}, {"slice", {16, 16, 1}},  {"conv2d", {14, 14, 2}},
                            {"conv2d", {12, 12, 4}},   {"maxpool", {6, 6, 4}},  {"conv2d", {4, 4, 8}},
                            {"conv2d", {2, 2, 16}},    {"maxpool", {1, 1, 16}}, {"batchnorm", {1, 1, 16}},
                            {"flatten", {16}},         {"dense", {10}},         {"sequence", {6, 10}},
                            {"lstm", {6}},             {"dense", {8}},          {"dropout", {8}},
                            {"dense", {2}}};
  EXPECT_EQ(trace, expected);
}

TEST(ModelTest, WrongInputShapeIsError) {
  for (Arch arch : {Arch::kCnn3d, Arch::kLstm}) {
    const ModelSpec spec = ModelSpec::shrunken(arch);
    auto params = init_params<double>(spec, 0);
    EXPECT_THROW(logits_of(spec, params, Tensor<double>(Shape{1, 16, 16, 5, 1}), Mode::kInfer, 0), nn::ShapeError);
    EXPECT_THROW(logits_of(spec, params, Tensor<double>(Shape{1, 32, 32, 6, 1}), Mode::kInfer, 0), nn::ShapeError);
  }
}

TEST(ModelTest, ZeroInputZeroHeadGivesHalf) {
  for (Arch arch : {Arch::kCnn3d, Arch::kLstm}) {
    const ModelSpec spec = ModelSpec::desk(arch);
    auto params = init_params<float>(spec, 3);
    const std::string last = arch == Arch::kCnn3d ? "dense2" : "head2";
    params.at(last + ".weight").fill(0.0f);
    params.at(last + ".bias").fill(0.0f);
    const auto p = predict(spec, params, Tensor<float>(Shape{3, 32, 32, 6, 1}));
    for (float v : p) EXPECT_EQ(v, 0.5f);
  }
}

TEST(ModelTest, InferenceIsDeterministicAndSeedFree) {
  for (Arch arch : {Arch::kCnn3d, Arch::kLstm}) {
    const ModelSpec spec = ModelSpec::shrunken(arch);
    auto params = init_params<double>(spec, 5);
    const auto x = random_batch(spec, 3, 1);
    EXPECT_EQ(logits_of(spec, params, x, Mode::kInfer, 1), logits_of(spec, params, x, Mode::kInfer, 2));
    auto again = init_params<double>(spec, 5);
    EXPECT_EQ(logits_of(spec, again, x, Mode::kInfer, 1), logits_of(spec, params, x, Mode::kInfer, 1));
  }
}

TEST(ModelTest, TrainModeDropoutDependsOnSeed) {
  for (Arch arch : {Arch::kCnn3d, Arch::kLstm}) {
    const ModelSpec spec = ModelSpec::shrunken(arch);
    auto params = init_params<double>(spec, 5);
    const auto x = random_batch(spec, 3, 1);
    const auto a = logits_of(spec, params, x, Mode::kTrain, 1);
    EXPECT_EQ(a, logits_of(spec, params, x, Mode::kTrain, 1));
    EXPECT_NE(a, logits_of(spec, params, x, Mode::kTrain, 2));
  }
}

TEST(ModelTest, SoftmaxSumsToOne) {
  for (Arch arch : {Arch::kCnn3d, Arch::kLstm}) {
    const ModelSpec spec = ModelSpec::shrunken(arch);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto params = init_params<float>(spec, seed);
      const auto x = random_batch(spec, 4, seed).cast<float>();
      const auto probs = nn::softmax(logits_of(spec, params, x, Mode::kInfer, 0));
      for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(probs[2 * i] + probs[2 * i + 1], 1.0, 1e-6);
    }
  }
}

Tensor<double> permute_slices(const Tensor<double>& x, const std::array<std::size_t, 6>& order) {
  Tensor<double> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = i % 6;
    out[i] = x[i - k + order[k]];
  }
  return out;
}

TEST(ModelTest, LstmIsSensitiveToSliceOrder) {
  const ModelSpec spec = ModelSpec::shrunken(Arch::kLstm);
  auto params = init_params<double>(spec, 8);
  const auto x = random_batch(spec, 1, 4);
  const auto reversed = permute_slices(x, {5, 4, 3, 2, 1, 0});
  const auto a = logits_of(spec, params, x, Mode::kInfer, 0);
  const auto b = logits_of(spec, params, reversed, Mode::kInfer, 0);
  EXPECT_GT(std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]), 1e-9);
}

TEST(ModelTest, LstmConsumesAllSixSteps) {
  const ModelSpec spec = ModelSpec::shrunken(Arch::kLstm);
  auto params = init_params<double>(spec, 8);
  auto x = random_batch(spec, 1, 4);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i % 6 >= 4) x[i] = 0.0;  // a four-slice joint
  }
  auto y = x;
  const auto noise = random_batch(spec, 1, 6);
  for (std::size_t i = 5; i < y.size(); i += 6) y[i] = noise[i];
  EXPECT_NE(logits_of(spec, params, x, Mode::kInfer, 0), logits_of(spec, params, y, Mode::kInfer, 0));

  Tape<double> tape;
  const auto bound = bind_params(params, tape, false);
  Rng rng(0);
  forward(spec, params, std::span<const Var<double>>(bound), tape.constant(x), Mode::kInfer, rng);
  std::size_t steps = 0;
  for (std::size_t id = 0; id < tape.size(); ++id) steps += tape.op_name(id) == "select_step";
  EXPECT_EQ(steps, 6u);
}

TEST(ModelTest, EncoderWeightsAreSharedAcrossSlices) {
  const ModelSpec spec = ModelSpec::shrunken(Arch::kLstm);
  auto params = init_params<double>(spec, 2);
  std::mt19937_64 gen(3);
  const auto slice = testing::random_tensor<double>(Shape{16, 16}, gen, 0.0, 1.0);
  Tensor<double> x(Shape{1, 16, 16, 6, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = slice[i / 6];

  auto features = [&](ParamSet<double>& p) {
    Tape<double> tape;
    const auto bound = bind_params(p, tape, false);
    return encode_slices(spec, p, std::span<const Var<double>>(bound), tape.constant(x), Mode::kInfer).value();
  };
  const auto before = features(params);
  params.at("enc.conv1.weight")[0] += 0.25;
  params.at("enc.dense.weight")[3] -= 0.5;
  const auto after = features(params);
  const std::size_t f = spec.encoder_features;
  ASSERT_EQ(before.shape(), (Shape{1, 6, f}));
  double change = 0;
  for (std::size_t k = 1; k < 6; ++k) {
    for (std::size_t j = 0; j < f; ++j) {
      EXPECT_EQ(before[k * f + j], before[j]);
      EXPECT_EQ(after[k * f + j], after[j]);
    }
  }
  for (std::size_t j = 0; j < f; ++j) change += std::abs(after[j] - before[j]);
  EXPECT_GT(change, 0.0);
}

TEST(InitTest, SameSeedSameParams) {
  const ModelSpec spec = ModelSpec::desk(Arch::kLstm);
  const auto a = init_params<float>(spec, 17);
  const auto b = init_params<float>(spec, 17);
  const auto c = init_params<float>(spec, 18);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].value, b.entries[i].value);
  EXPECT_NE(a.at("lstm.weight"), c.at("lstm.weight"));
}

TEST(InitTest, DenseVarianceIsTwoOverFanIn) {
  const ModelSpec spec = ModelSpec::desk(Arch::kCnn3d);
  const auto params = init_params<double>(spec, 4);
  const auto& w = params.at("dense1.weight");
  ASSERT_GE(w.size(), 100000u);
  double mean = 0, var = 0;
  for (double v : w.data()) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  const double target = 2.0 / static_cast<double>(w.extent(0));
  EXPECT_NEAR(var, target, 0.1 * target);
  EXPECT_NEAR(mean, 0.0, 0.01 * std::sqrt(target));
  for (const auto& e : params.entries) {
    if (e.name.ends_with(".bias") || e.name.ends_with(".beta") || e.name.ends_with("running_mean")) {
      for (double v : e.value.data()) EXPECT_EQ(v, 0.0) << e.name;
    }
    if (e.name.ends_with(".gamma") || e.name.ends_with("running_var")) {
      for (double v : e.value.data()) EXPECT_EQ(v, 1.0) << e.name;
    }
  }
}

// Whole-model finite-difference check: every trainable tensor plus the input,
// train mode (batch statistics, fixed dropout mask), cross-entropy loss.
testing::GradCheckResult whole_model_check(Arch arch, std::size_t per_tensor) {
  const ModelSpec spec = ModelSpec::shrunken(arch);
  auto params = init_params<double>(spec, 21);
  std::vector<Tensor<double>> inputs;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    if (params.entries[i].trainable) {
      inputs.push_back(params.entries[i].value);
      slots.push_back(i);
    }
  }
  inputs.push_back(random_batch(spec, 2, 5));
  const std::vector<int> labels{0, 1};
  auto loss = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
    std::vector<Var<double>> bound(params.entries.size());
    for (std::size_t k = 0; k < slots.size(); ++k) bound[slots[k]] = vars[k];
    Rng rng(77);
    const Var<double> logits =
        forward(spec, params, std::span<const Var<double>>(bound), vars.back(), Mode::kTrain, rng);
    return nn::softmax_cross_entropy(logits, std::span<const int>(labels));
  };
  return testing::check_gradients(loss, inputs, 1e-5, per_tensor, 3);
}

TEST(GradientTest, ShrunkenCnn3dWholeModel) {
  const auto r = whole_model_check(Arch::kCnn3d, 40);
  EXPECT_GT(r.checked, 300u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(GradientTest, ShrunkenLstmWholeModel) {
  const auto r = whole_model_check(Arch::kLstm, 40);
  EXPECT_GT(r.checked, 400u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(CheckpointTest, ByteExactRoundTrip) {
  for (Arch arch : {Arch::kCnn3d, Arch::kLstm}) {
    Checkpoint ck{ModelSpec::desk(arch), 128, init_params<float>(ModelSpec::desk(arch), 9)};
    ck.params.entries[ck.params.index(arch == Arch::kCnn3d ? "bn.running_mean" : "enc.bn.running_mean")].value[0] = 0.125f;
    testing::TempDir dir;
    save_checkpoint(dir / "m.axck", ck);
    const Checkpoint back = load_checkpoint(dir / "m.axck");
    EXPECT_EQ(back.spec, ck.spec);
    EXPECT_EQ(back.image_bound, 128);
    ASSERT_EQ(back.params.entries.size(), ck.params.entries.size());
    for (std::size_t i = 0; i < ck.params.entries.size(); ++i) {
      EXPECT_EQ(back.params.entries[i].name, ck.params.entries[i].name);
      EXPECT_EQ(back.params.entries[i].value, ck.params.entries[i].value);
    }
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  }
}

TEST(CheckpointTest, CorruptFilesAreRejected) {
  Checkpoint ck{ModelSpec::shrunken(Arch::kCnn3d), 64, init_params<float>(ModelSpec::shrunken(Arch::kCnn3d), 1)};
  const std::string bytes = encode_checkpoint(ck);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
  EXPECT_THROW(decode_checkpoint("NOPE" + bytes.substr(4)), CheckpointError);
  Checkpoint other = ck;
  other.params.entries.pop_back();
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(other)), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.axck"), CheckpointError);
}

}  // namespace
}  // namespace axi::models
