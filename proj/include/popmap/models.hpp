#pragma once

#include "popmap/error.hpp"
#include "popmap/nn/layers.hpp"
#include "popmap/rng.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace popmap {

enum class ModelKind { SingleOptical, SingleRadar, ChannelConcat, ShallowCombo, DeepCombo, Classifier };

inline constexpr ModelKind kAllModelKinds[] = {ModelKind::SingleOptical, ModelKind::SingleRadar,
                                               ModelKind::ChannelConcat, ModelKind::ShallowCombo,
                                               ModelKind::DeepCombo,     ModelKind::Classifier};

std::string_view model_kind_name(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view name);

bool is_fusion(ModelKind kind) noexcept;
// Whether the model consumes the optical / radar tile.
bool uses_optical(ModelKind kind) noexcept;
bool uses_radar(ModelKind kind) noexcept;

enum class InitKind { Random, PretrainedHook };

struct ModelSpec {
  ModelKind kind = ModelKind::SingleOptical;
  double width_multiplier = 1.0;
  int input_side = 224;
  double dropout_keep = 0.8;
  int n_classes = 0; // classifier only
  double class_lo = 0.0;
  double class_hi = 12.0;
  InitKind init = InitKind::Random;
  std::string pretrained_path; // PRETRAINED_HOOK weight archive

  // Throws SpecError when inconsistent.
  void validate() const;
  // Versioned key=value text, stable field order.
  std::string to_text() const;
  static ModelSpec from_text(const std::string& text);
};

// Channel width after scaling, never below 1.
int scaled_channels(int base, double width_multiplier) noexcept;

// Standard 16-layer conv plan, per stage.
inline constexpr std::array<std::array<int, 3>, 5> kVggStages = {
    {{64, 64, 0}, {128, 128, 0}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}}};
inline constexpr int kVggFcWidth = 4096;
inline constexpr int kComboFcWidth = 100;

// Network built from a ModelSpec. Inputs are given per modality; the network assembles
// them as its topology requires.
template <typename T>
class Network {
public:
  explicit Network(ModelSpec spec);

  const ModelSpec& spec() const noexcept { return spec_; }
  int output_dim() const noexcept;

  // optical / radar: N x 3 x S x S. Unused modalities may be null.
  const nn::Tensor<T>& forward(const nn::Tensor<T>* optical, const nn::Tensor<T>* radar,
                               nn::RunContext& ctx);
  // Accumulates into parameter gradients (call zero_grad first).
  void backward(const nn::Tensor<T>& dout);

  std::vector<nn::Param<T>*> params();
  std::size_t parameter_count();
  void zero_grad();

  // Channel count entering / leaving the fusion 1x1 reducer (0 for non-fusion kinds).
  int fused_channels() const noexcept { return fused_channels_; }
  int reduced_channels() const noexcept { return reduced_channels_; }

  nn::Sequential<T>& branch(std::size_t i) { return branches_.at(i); }
  std::size_t branch_count() const noexcept { return branches_.size(); }
  nn::Sequential<T>& trunk() { return trunk_; }

private:
  ModelSpec spec_;
  std::vector<nn::Sequential<T>> branches_;
  nn::Sequential<T> trunk_;
  int fused_channels_ = 0;
  int reduced_channels_ = 0;
  std::vector<nn::Tensor<T>> branch_inputs_;
  nn::Tensor<T> concat_;
  std::vector<nn::Tensor<T>> branch_grads_;
};

template <typename T>
Network<T> build_model(const ModelSpec& spec) {
  spec.validate();
  return Network<T>(spec);
}

// Named tensor archive: the checkpoint and pretrained-weight file format.
struct TensorRecord {
  std::vector<int> dims;
  std::vector<float> values;
};

struct Archive {
  std::map<std::string, std::string> texts;
  std::map<std::string, TensorRecord> tensors;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path, ErrorCode error = ErrorCode::Checkpoint);

// RANDOM: He-normal weights (fan-in scaled), zero biases, deterministic per seed.
// PRETRAINED_HOOK: copies every tensor whose standard layer name and shape match;
// branch duplicates share the source; the rest falls back to RANDOM.
template <typename T>
void init_parameters(Network<T>& model, InitKind init, std::uint64_t seed,
                     const std::filesystem::path& weights_path = {});

// Name of the standard-plan layer a parameter corresponds to ("optical/conv1_1/weights" ->
// "conv1_1/weights"), or nullopt for layers that exist only in the fusion topologies.
std::optional<std::string> standard_layer_name(const std::string& param_name);

// n_classes + 1 edges: -inf, lo + (hi-lo)/n, ..., +inf.
std::vector<double> bin_edges(int n_classes, double lo = 0.0, double hi = 12.0);
int class_of(double value, const std::vector<double>& edges);

// Parameter snapshot for copying between networks (e.g. float -> double).
template <typename T>
Archive export_parameters(Network<T>& model);
template <typename T>
void import_parameters(Network<T>& model, const Archive& archive, bool require_all = true);

} // namespace popmap
