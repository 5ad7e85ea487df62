#include "axi/train/trainer.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

namespace axi::train {

using models::Checkpoint;
using models::ModelSpec;
using models::ParamSet;
using preprocess::Patch;

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5400000;
constexpr std::uint64_t kDropoutStream = 0xd400000000;
constexpr std::size_t kScoreChunk = 64;

std::vector<int> labels_of(std::span<const Patch* const> patches) {
  std::vector<int> labels;
  for (const Patch* p : patches) labels.push_back(p->label == ingest::Label::kDefect ? 1 : 0);
  return labels;
}

std::vector<const Patch*> pointers(std::span<const Patch> patches) {
  std::vector<const Patch*> out;
  for (const Patch& p : patches) out.push_back(&p);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

ParamSet<float> initial_params(const ModelSpec& spec, std::uint64_t seed) {
  return models::init_params<float>(spec, derive_seed(seed, kInitStream));
}

nn::Tensor<float> stack_patches(std::span<const Patch* const> patches, std::size_t side) {
  const std::size_t per = side * side * preprocess::kChannels;
  std::vector<float> data;
  data.reserve(per * patches.size());
  for (const Patch* p : patches) {
    if (p->data.shape() != nn::Shape{side, side, preprocess::kChannels, 1}) {
      throw nn::ShapeError("patch " + p->joint_id + " is " + nn::shape_str(p->data.shape()) + ", model expects side " +
                           std::to_string(side));
    }
    data.insert(data.end(), p->data.data().begin(), p->data.data().end());
  }
  return nn::Tensor<float>(nn::Shape{patches.size(), side, side, preprocess::kChannels, 1}, std::move(data));
}

std::vector<double> score_patches(const ModelSpec& spec, ParamSet<float>& params, std::span<const Patch> patches) {
  std::vector<double> scores;
  scores.reserve(patches.size());
  const auto ptrs = pointers(patches);
  for (std::size_t start = 0; start < ptrs.size(); start += kScoreChunk) {
    const std::size_t n = std::min(kScoreChunk, ptrs.size() - start);
    const auto batch = stack_patches(std::span(ptrs).subspan(start, n), spec.side);
    for (float p : models::predict(spec, params, batch)) scores.push_back(p);
  }
  return scores;
}

double mean_loss(const ModelSpec& spec, ParamSet<float>& params, std::span<const Patch> patches) {
  if (patches.empty()) throw TrainingError("mean loss of an empty set");
  double total = 0.0;
  const auto scores = score_patches(spec, params, patches);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const double p = patches[i].label == ingest::Label::kDefect ? scores[i] : 1.0 - scores[i];
    total -= std::log(std::max(p, 1e-30));
  }
  return total / static_cast<double>(patches.size());
}

TrainResult train(const ModelSpec& spec, std::span<const Patch> train_set, std::span<const Patch> val_set,
                  const TrainConfig& config, std::int64_t image_bound,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  spec.validate();
  if (train_set.empty()) throw TrainingError("training split is empty");
  if (val_set.empty()) throw TrainingError("validation split is empty");

  TrainResult result;
  result.checkpoint.spec = spec;
  result.checkpoint.image_bound = image_bound;
  ParamSet<float>& params = result.checkpoint.params;
  params = initial_params(spec, config.seed);
  result.initial_loss = mean_loss(spec, params, train_set);

  std::vector<nn::Tensor<float>*> trainable;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    if (params.entries[i].trainable) {
      trainable.push_back(&params.entries[i].value);
      slots.push_back(i);
    }
  }
  AdamState<float> adam;
  const auto all = pointers(train_set);
  const std::size_t n = all.size();
  std::size_t step = 0;
  ParamSet<float> best;
  double best_auroc = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, kShuffleStream + epoch));
    shuffle.shuffle(order.begin(), order.end());

    // Batch boundaries; a trailing batch of one joins its predecessor so
    // batch statistics always see two examples.
    std::vector<std::size_t> bounds;
    for (std::size_t b = 0; b < n; b += config.batch_size) bounds.push_back(b);
    if (bounds.size() > 1 && n - bounds.back() == 1) bounds.pop_back();
    bounds.push_back(n);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
      std::vector<const Patch*> batch;
      std::vector<int> labels;
      for (std::size_t k = bounds[b]; k < bounds[b + 1]; ++k) batch.push_back(all[order[k]]);
      labels = labels_of(batch);

      nn::Tape<float> tape;
      const auto bound = models::bind_params(params, tape, true);
      const auto x = tape.constant(stack_patches(batch, spec.side));
      Rng dropout(derive_seed(config.seed, kDropoutStream + step));
      const auto logits =
          models::forward(spec, params, std::span<const nn::Var<float>>(bound), x, nn::Mode::kTrain, dropout);
      const auto loss = nn::softmax_cross_entropy(logits, std::span<const int>(labels));
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw TrainingError("loss diverged (" + std::to_string(value) + ") at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      std::vector<const nn::Tensor<float>*> grads;
      for (std::size_t slot : slots) grads.push_back(&tape.grad(bound[slot]));
      adam_step<float>(trainable, grads, adam, config.adam);
      loss_sum += value * static_cast<double>(batch.size());
      ++step;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n);
    const auto val_scores = score_patches(spec, params, val_set);
    const auto val_labels = labels_of(pointers(val_set));
    const Confusion c = confusion_at(val_scores, val_labels, 0.5);
    entry.val_recall = c.recall();
    entry.val_fpr = c.fpr();
    const auto roc = roc_curve(val_scores, val_labels);
    entry.val_auroc = auroc(roc);
    if (!config.keep_best_val || entry.val_auroc > best_auroc) {
      best_auroc = entry.val_auroc;
      result.best_epoch = epoch;
      if (config.keep_best_val) best = params;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  if (config.keep_best_val && result.best_epoch > 0) params = std::move(best);
  result.final_loss = mean_loss(spec, params, train_set);
  return result;
}

EvalReport evaluate(Checkpoint& checkpoint, std::span<const Patch> patches, const std::vector<double>& grid,
                    const std::vector<double>& targets) {
  std::vector<std::string> ids;
  for (const Patch& p : patches) ids.push_back(p.joint_id);
  auto scores = score_patches(checkpoint.spec, checkpoint.params, patches);
  return make_report(std::move(ids), std::move(scores), labels_of(pointers(patches)), grid, targets);
}

void write_training_log(std::ostream& out, const TrainConfig& config, const std::vector<EpochLog>& log) {
  out << "# adam lr=" << config.adam.learning_rate << " decay=" << config.adam.decay
      << " schedule=lr/(1+decay*step) beta1=" << config.adam.beta1 << " beta2=" << config.adam.beta2
      << " epsilon=" << config.adam.epsilon << " batch=" << config.batch_size << " epochs=" << config.epochs
      << " seed=" << config.seed << (config.keep_best_val ? " keep=best_val_auroc" : "") << '\n';
  out << "#epoch\ttrain_loss\tval_recall@0.5\tval_fpr@0.5\tval_auroc\n";
  for (const auto& e : log) {
    out << e.epoch << '\t' << e.train_loss << '\t' << e.val_recall << '\t' << e.val_fpr << '\t' << e.val_auroc
        << '\n';
  }
}

}  // namespace axi::train
