#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "axi/models/checkpoint.hpp"
#include "axi/models/model.hpp"
#include "axi/preprocess/patch.hpp"
#include "axi/train/adam.hpp"
#include "axi/train/metrics.hpp"

namespace axi::train {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  // Return the parameters of the epoch with the highest validation AUROC
  // (earliest on ties) instead of the last epoch's.
  bool keep_best_val = false;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's batches, train mode
  double val_recall = 0.0;  // at threshold 0.5
  double val_fpr = 0.0;
  double val_auroc = 0.0;
};

struct TrainResult {
  models::Checkpoint checkpoint;
  std::vector<EpochLog> log;
  double initial_loss = 0.0;  // infer-mode mean loss on the training set
  double final_loss = 0.0;
  std::size_t best_epoch = 0;  // epoch whose parameters the checkpoint holds
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameters train() starts from for this seed.
models::ParamSet<float> initial_params(const models::ModelSpec& spec, std::uint64_t seed);

/// Stacks patches into a [N, side, side, 6, 1] batch.
nn::Tensor<float> stack_patches(std::span<const preprocess::Patch* const> patches, std::size_t side);

/// P(defect) per patch, infer mode, in input order.
std::vector<double> score_patches(const models::ModelSpec& spec, models::ParamSet<float>& params,
                                  std::span<const preprocess::Patch> patches);

/// Infer-mode mean cross-entropy.
double mean_loss(const models::ModelSpec& spec, models::ParamSet<float>& params,
                 std::span<const preprocess::Patch> patches);

/// Fixed-epoch Adam training over seeded shuffles. `train_set` should already
/// be class-balanced. Throws TrainingError on an empty split or a non-finite
/// loss.
TrainResult train(const models::ModelSpec& spec, std::span<const preprocess::Patch> train_set,
                  std::span<const preprocess::Patch> val_set, const TrainConfig& config, std::int64_t image_bound,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Scores every patch once and builds the report.
EvalReport evaluate(models::Checkpoint& checkpoint, std::span<const preprocess::Patch> patches,
                    const std::vector<double>& grid = default_grid(),
                    const std::vector<double>& targets = {0.90, 0.95});

/// Tab-separated: epoch, train_loss, val_recall@0.5, val_fpr@0.5, val_auroc, after a
/// comment header recording the optimizer schedule.
void write_training_log(std::ostream& out, const TrainConfig& config, const std::vector<EpochLog>& log);

}  // namespace axi::train
