#pragma once

#include "popmap/ingest.hpp"
#include "popmap/models.hpp"
#include "popmap/partition.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace popmap {

enum class LossKind { Mse, CrossEntropy };

std::string_view loss_kind_name(LossKind loss) noexcept;
LossKind parse_loss_kind(std::string_view name);
// CROSS_ENTROPY for CLASSIFIER, MSE otherwise.
LossKind default_loss(ModelKind kind) noexcept;

struct TrainConfig {
  double learning_rate = 1e-5;
  double lr_decay_factor = 0.1;
  // Epoch counts after which the rate is multiplied by lr_decay_factor. Empty means a single
  // decay after round(2/3 * epochs).
  std::vector<int> lr_decay_epochs;
  double weight_decay = 5e-3;
  double momentum = 0.9;
  int batch_size = 48;
  int epochs = 30;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::Mse;
  // Data-loader threads; 1 loads inline (strict mode).
  int workers = 1;
  bool augment = true;
  // Start the regression head bias at the mean training target.
  bool init_bias_to_mean = true;
  int eval_batch_size = 48;

  // Throws Config.
  void validate() const;
  std::vector<int> decay_epochs() const;
  double learning_rate_at(int epoch) const; // epoch is 0-based
};

struct EpochRecord {
  int epoch = 0; // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_r2 = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::filesystem::path checkpoint_path;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains `model` on split.train_villages, validating on split.val_villages after every
// epoch. The best-validation weights are written to checkpoint_path and left in `model` on
// return. Throws DataPipeline, MissingTile, Divergence.
TrainHistory train(Network<float>& model, const DatasetManifest& manifest,
                   const SplitAssignment& split, const TrainConfig& config,
                   const std::filesystem::path& checkpoint_path,
                   const EpochCallback& on_epoch = {});

// One plain optimizer step (gradients already accumulated): L2 decay on weights, momentum,
// update. `velocity` is resized on first use.
void sgd_step(const std::vector<nn::Param<float>*>& params,
              std::vector<std::vector<float>>& velocity, double learning_rate,
              double weight_decay, double momentum);

// Mean loss over the batch; fills dout with d(loss)/d(output).
double mse_loss(const nn::Tensor<float>& out, const std::vector<float>& target,
                nn::Tensor<float>& dout);
double cross_entropy_loss(const nn::Tensor<float>& out, const std::vector<int>& target,
                          nn::Tensor<float>& dout);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history,
                       bool include_seconds, const std::string& provenance = {});

struct Prediction {
  double value = 0.0; // log2 density (classifier: from the predicted class)
  int class_index = -1;
  std::vector<double> probabilities; // classifier only
};

// Eval-mode predictions keyed by village id. Throws MissingTile, DataPipeline.
std::map<std::string, Prediction> predict(Network<float>& model, const DatasetManifest& manifest,
                                          const std::vector<std::string>& village_ids,
                                          int batch_size = 48, int workers = 1);

// Checkpoint archive: model spec text, epoch, and every parameter tensor.
void save_checkpoint(const std::filesystem::path& path, Network<float>& model, int epoch,
                     const std::string& note = {});
Network<float> load_checkpoint(const std::filesystem::path& path);

std::map<std::string, Prediction> predict(const std::filesystem::path& checkpoint,
                                          const DatasetManifest& manifest,
                                          const std::vector<std::string>& village_ids,
                                          int batch_size = 48, int workers = 1);

} // namespace popmap
