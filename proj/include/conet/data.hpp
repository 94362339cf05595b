#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conet/rng.hpp"

namespace conet {

using Index = std::uint32_t;

/// Marks "no item": the item half of the merged embedding becomes zero.
inline constexpr Index kNoItem = std::numeric_limits<Index>::max();

enum class Domain { kTarget, kSource };

const char* domain_name(Domain d);

/// One domain's binary implicit feedback over a dense user × item grid.
class InteractionDataset {
 public:
  InteractionDataset() = default;
  /// Deduplicates; throws DataError on out-of-range indices.
  InteractionDataset(std::size_t num_users, std::size_t num_items,
                     const std::vector<std::pair<Index, Index>>& pairs);

  std::size_t num_users() const { return adjacency_.size(); }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_interactions() const { return num_interactions_; }
  double density() const;

  /// Sorted item list of user u.
  const std::vector<Index>& items_of(std::size_t u) const { return adjacency_[u]; }
  bool contains(std::size_t u, Index item) const;

  /// All (user, item) pairs in user-major, item-ascending order.
  std::vector<std::pair<Index, Index>> pairs() const;

  bool operator==(const InteractionDataset&) const = default;

 private:
  std::size_t num_items_ = 0;
  std::size_t num_interactions_ = 0;
  std::vector<std::vector<Index>> adjacency_;
};

/// A dataset with its external id vocabularies (index -> id).
struct LabeledDataset {
  InteractionDataset data;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;

  bool operator==(const LabeledDataset&) const = default;
};

/// Target and source domains over one shared user index space.
struct CrossDomainDataset {
  InteractionDataset target;
  InteractionDataset source;
  std::vector<std::string> user_ids;
  std::vector<std::string> target_item_ids;
  std::vector<std::string> source_item_ids;

  std::size_t num_users() const { return target.num_users(); }
  const InteractionDataset& domain(Domain d) const {
    return d == Domain::kTarget ? target : source;
  }

  bool operator==(const CrossDomainDataset&) const = default;
};

/// Reads `<user>\t<item>[\t...]` lines; `#` lines and blank lines are skipped.
/// Users with fewer than min_user_interactions distinct items are dropped
/// before indices are assigned; indices follow first appearance.
LabeledDataset load_interactions(const std::filesystem::path& path,
                                 std::size_t min_user_interactions = 3);

/// Writes one line per interaction, user-major, items ascending.
void write_interactions(const std::filesystem::path& path, const LabeledDataset& dataset);

/// Keeps users present in both domains. Users are numbered in target order;
/// items are compacted per domain, preserving relative order.
CrossDomainDataset align_domains(const LabeledDataset& target, const LabeledDataset& source);

/// The first max_users users (0: all), items compacted per domain.
CrossDomainDataset first_users(const CrossDomainDataset& data, std::size_t max_users);

/// Leave-one-out split of the target domain. The source domain is never split.
struct LooSplit {
  CrossDomainDataset train;
  std::vector<std::optional<Index>> validation;  // per user
  std::vector<std::optional<Index>> test;        // per user
  std::vector<std::vector<Index>> eval_negatives;  // per user; empty if not evaluated

  std::vector<std::size_t> evaluated_users() const;
  bool is_evaluated(std::size_t u) const { return test[u].has_value(); }
  /// Whether u ever interacted with target item i (train, validation or test).
  bool target_interacted(std::size_t u, Index item) const;

  bool operator==(const LooSplit&) const = default;
};

inline constexpr std::size_t kEvalNegatives = 99;
inline constexpr std::size_t kMinEvaluatedInteractions = 3;

LooSplit loo_split(const CrossDomainDataset& data, Rng& rng);

/// 99 distinct target items the user never interacted with, uniformly
/// without replacement. Throws DataError when fewer than 99 are eligible.
std::vector<Index> sample_eval_negatives(const LooSplit& split, std::size_t user, Rng& rng);

struct TrainingExample {
  Index user;
  Index item;
  int label;  // 1 for an observed interaction, 0 for a sampled negative
  Domain domain;
};

/// Epoch-shuffled positives of one domain with fresh negatives per batch.
class BatchSampler {
 public:
  BatchSampler(const InteractionDataset& train, Domain domain, std::size_t batch_size,
               std::size_t negative_ratio, Rng rng);

  /// Next batch: up to batch_size positives, each followed by its negatives.
  /// The final batch of a pass may be short; the next call reshuffles.
  std::vector<TrainingExample> next();

  std::size_t batches_per_epoch() const;
  std::size_t num_positives() const { return positives_.size(); }

 private:
  const InteractionDataset* train_;
  Domain domain_;
  std::size_t batch_size_;
  std::size_t negative_ratio_;
  Rng rng_;
  std::vector<std::pair<Index, Index>> positives_;
  std::size_t cursor_ = 0;
};

/// One-off batch drawn from a fresh sampler (first batch of a pass).
std::vector<TrainingExample> sample_training_batch(const LooSplit& split, Domain domain,
                                                   std::size_t batch_size,
                                                   std::size_t negative_ratio, Rng& rng);

/// Item j uniform over items the user has not interacted with in `train`.
/// Throws DataError if the user interacted with every item.
Index sample_negative_item(const InteractionDataset& train, std::size_t user, Rng& rng);

struct SyntheticConfig {
  std::size_t num_users = 1000;
  std::size_t num_target_items = 2000;
  std::size_t num_source_items = 1000;
  std::size_t latent_dim = 8;
  double relatedness = 0.9;  // ρ
  double target_density = 0.005;
  double source_density = 0.015;
  std::uint64_t seed = 1;

  /// Throws ConfigError when out of range.
  void validate() const;
  std::size_t target_per_user() const;
  std::size_t source_per_user() const;
};

/// Low-rank synthetic domains. Source user factors are ρ·U + (1−ρ)·U′.
/// Each user gets the top-scoring items of each domain; indices are
/// canonical, so write_interactions followed by load_interactions returns
/// the identical dataset.
CrossDomainDataset generate_synthetic(const SyntheticConfig& config);

struct ReductionResult {
  LooSplit split;
  std::size_t removed = 0;
  double removed_percent = 0.0;  // of train target interactions before removal
};

/// Removes up to per_user_removal uniformly chosen train target
/// interactions per user, never below one remaining.
ReductionResult reduce_training(const LooSplit& split, std::size_t per_user_removal, Rng& rng);

// Split manifest: {"num_users", "num_target_items", "test", "validation",
// "eval_negatives"} with per-user entries keyed by decimal user index.
std::string split_manifest_json(const LooSplit& split);
void write_split_manifest(const std::filesystem::path& path, const LooSplit& split);
/// Rebuilds a split from the full (unsplit) dataset and a manifest.
LooSplit read_split_manifest(const std::filesystem::path& path, const CrossDomainDataset& full);
LooSplit split_from_manifest_json(const std::string& json, const CrossDomainDataset& full);

/// FNV-1a over the manifest and train shapes; ties checkpoints to splits.
std::uint64_t split_fingerprint(const LooSplit& split);

}  // namespace conet
