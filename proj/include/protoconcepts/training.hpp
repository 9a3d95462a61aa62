#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protoconcepts/checkpoint.hpp"
#include "protoconcepts/config.hpp"
#include "protoconcepts/data.hpp"
#include "protoconcepts/losses.hpp"
#include "protoconcepts/model.hpp"
#include "protoconcepts/optimizer.hpp"
#include "protoconcepts/sidecar.hpp"

namespace protoconcepts {

enum class StageKind { Warmup, Joint, Finetune };
enum class ParamGroup { Backbone = 0, AddOn, Centers, Radii, LastLayer };
inline constexpr int kParamGroupCount = 5;

std::string to_string(StageKind kind);
std::string to_string(ParamGroup group);

struct StageSpec {
  StageKind kind = StageKind::Warmup;
  int epochs = 0;
  /// Indexed by ParamGroup; a group trains iff its rate is positive.
  std::array<double, kParamGroupCount> learning_rates{};
  LossWeights weights;
  /// Finetuning only: L1 weight on wrong-class evidence connections.
  double l1 = 1e-4;

  double lr(ParamGroup g) const { return learning_rates[static_cast<size_t>(g)]; }
  bool trains(ParamGroup g) const { return lr(g) > 0.0; }
  /// WARMUP never trains the backbone; FINETUNE trains only the last layer.
  void validate() const;
};

struct OptimizerSpec {
  AdamSettings adam;
  double weight_decay = 1e-3;
  int batch_size = 20;
  int lr_step_epochs = 0;
  double lr_gamma = 0.1;
};

struct TrainingSchedule {
  std::vector<StageSpec> stages;  ///< WARMUP, JOINT, FINETUNE in that order
  OptimizerSpec optimizer;
  std::uint64_t seed = 1;

  void validate() const;
  const StageSpec& stage(StageKind kind) const;
};

struct EpochLog {
  StageKind stage = StageKind::Warmup;
  int epoch = 0;
  double total = 0.0;
  double ce = 0.0;
  double clstk = 0.0;
  double sep = 0.0;
  double rad = 0.0;
  double l1 = 0.0;
  double accuracy = 0.0;  ///< running training accuracy over the epoch
};

using TrainingLog = std::vector<EpochLog>;

/// One stage of SGD. Only the stage's parameter groups change. Deterministic
/// given `seed`. Throws NumericError naming the first non-finite loss component.
TrainingLog run_stage(ProtoConceptsNet& net, const LabeledImages& data, const StageSpec& stage,
                      const OptimizerSpec& optimizer, std::uint64_t seed);

/// Minimizes CE + l1 * sum |w_h| over wrong-class connections with everything
/// but the evidence weights frozen. Rows of masked prototypes are held at zero.
TrainingLog finetune_last_layer(ProtoConceptsNet& net, const LabeledImages& data, double l1_weight, int epochs,
                                double learning_rate, const OptimizerSpec& optimizer, std::uint64_t seed);

struct PruneResult {
  std::vector<int> mask;
  std::vector<long long> member_counts;
  int surviving = 0;
};

/// Number of training patches inside each ball.
std::vector<long long> count_members(const ProtoConceptsNet& net, std::span<const LatentPatchGrid> grids);
std::vector<long long> count_members(const ProtoConceptsNet& net, const LabeledImages& data);

/// Masks every ball that contains no training patch; other entries keep their value.
PruneResult prune_empty_balls(ProtoConceptsNet& net, std::span<const LatentPatchGrid> training_grids);
PruneResult prune_empty_balls(ProtoConceptsNet& net, const LabeledImages& training_data);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<int> per_class_count;
  std::vector<int> predictions;
  std::vector<std::vector<double>> logits;
};

EvalReport evaluate(const ProtoConceptsNet& net, const LabeledImages& data);

struct DataConfig {
  std::filesystem::path root;
  bool synthetic = true;
  SyntheticConceptSpec synthetic_spec;
  std::optional<std::filesystem::path> crop_table;
  AugmentationSpec augment;
  std::filesystem::path augment_root;
};

struct PipelineConfig {
  ModelSpec model;
  TrainingSchedule schedule;
  DataConfig data;
  bool prune = true;
  int top_n = 5;
  int top_p = 3;
  std::array<double, 3> radius_presets{};  ///< small, medium, large
};

/// Typed view of a validated Config. Relative data paths resolve against the config's directory.
PipelineConfig make_pipeline_config(const Config& config);

/// Generates the synthetic dataset when configured and absent (or stale), applies
/// offline augmentation when requested, and returns the manifest.
DatasetManifest prepare_dataset(const DataConfig& data, int image_size);

/// Sets num_classes from the manifest when the config leaves it at 0; errors on disagreement.
void bind_classes(ModelSpec& model, const DatasetManifest& manifest);

struct PipelineResult {
  ProtoConceptsNet net;
  TrainingLog log;
  double accuracy_before_prune = 0.0;
  double accuracy_after_finetune = 0.0;
  PruneResult prune;
  Sidecar metrics;
};

struct PipelineOptions {
  /// Start from checkpoints/joint.ckpt in out_dir when it exists.
  bool resume = false;
  /// Stop after the JOINT stage (no pruning or finetuning).
  bool stop_after_joint = false;
};

/// WARMUP -> JOINT -> prune -> FINETUNE, with a checkpoint after each stage in
/// out_dir/checkpoints and a metrics sidecar at out_dir/metrics.txt.
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir,
                            const PipelineOptions& options = {});

Sidecar training_log_sidecar(const TrainingLog& log);

}  // namespace protoconcepts
