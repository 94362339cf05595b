#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conet/data.hpp"
#include "conet/evaluation.hpp"
#include "conet/models.hpp"
#include "conet/rng.hpp"

namespace conet {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  std::size_t negative_ratio = 1;
  std::size_t epochs = 30;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Epochs without a validation-NDCG improvement before stopping.
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  /// Keeps every H^l at its current value (used to compare against MLP++).
  bool freeze_transfer = false;
  unsigned top_n = 10;
  bool mrr_cutoff = true;

  /// Throws ConfigError.
  void validate() const;
};

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamConfig adam_config(const TrainConfig& config);

/// Bias-corrected Adam on one block of parameters; `step` is the 1-based
/// update count of the block.
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamConfig& config);

struct AdamState {
  Parameters first_moment;
  Parameters second_moment;
  /// Update count per tensor (canonical order); drives bias correction.
  std::vector<std::uint64_t> tensor_steps;
  /// Optimizer steps taken.
  std::uint64_t t = 0;

  static AdamState zeros_for(const Parameters& params);
};

/// Which tensors a step touches. Embedding tensors listed in a row set are
/// updated on those rows only; an empty row set means the whole tensor.
struct UpdatePlan {
  GroupMask groups = kAllGroups;
  std::vector<Index> user_rows;
  std::vector<Index> source_user_rows;
  std::vector<Index> target_item_rows;
  std::vector<Index> source_item_rows;
};

/// One Adam step over every tensor (dense).
void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const AdamConfig& config);
/// One Adam step restricted to a plan.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const AdamConfig& config, const UpdatePlan& plan);

/// Soft-thresholding sign(h)·max(|h| − threshold, 0), entrywise in place.
void proximal_l1(Matrix& h, double threshold);

/// Fraction of entries exactly equal to zero.
double sparsity_ratio(const Matrix& h);

/// loss_target + loss_source + penalty
double joint_loss(double loss_target, double loss_source, double penalty);

enum class PairingMode { kTrain, kEval };

/// Item of `other` (the domain not being labelled) that accompanies user u
/// through the coupled forward pass: uniform over the user's interactions in
/// train mode, smallest index in eval mode, kNoItem for an empty history.
Index pair_item(const InteractionDataset& other, std::size_t user, Rng& rng, PairingMode mode);

/// Source item paired with a target example.
Index pair_source_item(std::size_t user, const LooSplit& split, Rng& rng, PairingMode mode);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss_target = 0.0;  // mean cross-entropy per target example
  double loss_source = 0.0;  // mean cross-entropy per source example
  double penalty = 0.0;      // λ·Σ|H| at the end of the epoch
  double val_hr = 0.0;
  double val_ndcg = 0.0;
  double val_mrr = 0.0;
  std::vector<double> h_zero_ratios;

  bool operator==(const EpochStats&) const = default;
};

/// One JSON object per line with the fields of EpochStats.
std::string epoch_stats_json(const EpochStats& stats);
void write_history(const std::string& path, std::span<const EpochStats> history);
std::vector<EpochStats> read_history(const std::string& path);

/// Scores target items with eval-mode source pairing.
class ModelScorer : public Scorer {
 public:
  ModelScorer(const Model& model, const InteractionDataset& source_train)
      : model_(&model), source_train_(&source_train) {}
  double score(std::size_t user, Index item) const override;

 private:
  const Model* model_;
  const InteractionDataset* source_train_;
};

/// Owns the optimizer state and sampling streams across epochs.
///
/// Each epoch alternates target and source mini-batches until the larger
/// domain has made one full pass; the smaller domain's stream wraps. A
/// target batch updates the shared tensors (P, H^l or stitch scalars) and
/// the target-specific ones; a source batch does the same for the source
/// side. Transfer matrices are soft-thresholded by η·λ after every step.
/// MLP trains on target batches only.
class Trainer {
 public:
  Trainer(Model& model, const LooSplit& split, TrainConfig config);

  /// Runs one epoch and validates. Throws NumericError on a non-finite loss.
  EpochStats train_epoch();

  /// Trains on a single batch of one domain; returns its summed loss.
  double train_batch(Domain domain, const std::vector<TrainingExample>& batch);

  const AdamState& adam() const { return adam_; }
  std::size_t epochs_done() const { return epoch_; }

 private:
  Model* model_;
  const LooSplit* split_;
  TrainConfig config_;
  AdamConfig adam_config_;
  AdamState adam_;
  Parameters grads_;
  BatchSampler target_sampler_;
  std::optional<BatchSampler> source_sampler_;
  Rng target_pairing_;
  Rng source_pairing_;
  std::size_t epoch_ = 0;
};

struct FitResult {
  Model model;  // best-validation checkpoint
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

/// Up to config.epochs epochs with early stopping on validation NDCG.
FitResult fit(Model model, const LooSplit& split, const TrainConfig& config);

}  // namespace conet
