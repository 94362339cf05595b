#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conet/data.hpp"
#include "conet/evaluation.hpp"
#include "conet/models.hpp"
#include "conet/training.hpp"

namespace conet {

/// Where interactions come from and how the split is frozen.
struct DataConfig {
  std::filesystem::path target_path;  // empty: generate synthetic data
  std::filesystem::path source_path;
  SyntheticConfig synthetic;
  std::size_t min_user_interactions = 3;
  std::size_t max_users = 0;  // cap on shared users after alignment; 0: none
  std::filesystem::path split_path;  // frozen manifest; empty: split from split_seed
  std::uint64_t split_seed = 1;

  std::string dataset_name() const;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path output_dir;
};

struct Experiment {
  std::string name;
  CrossDomainDataset data;  // before splitting
  LooSplit split;
};

/// Loads (or generates) both domains, aligns users and splits. Throws
/// DataError for unreadable or inconsistent inputs.
Experiment prepare_experiment(const DataConfig& config);

/// Gaussian-initialized model sized for the split; the init stream is
/// derived from seed. Throws ConfigError for an invalid configuration.
Model init_model(const ModelConfig& config, const LooSplit& split, std::uint64_t seed);

/// Model configuration for an arm name: MLP, MLP++, CSN, CoNet (λ = 0) or
/// SCoNet (λ from base, default 0.1). CSN uses csn_widths when non-empty.
ModelConfig arm_model(std::string_view name, const ModelConfig& base,
                      const std::vector<std::size_t>& csn_widths);

struct ArmSpec {
  std::string label;
  ModelConfig model;
  TrainConfig train;
  const LooSplit* split = nullptr;
};

struct RunResult {
  std::string label;
  ModelConfig model_config;
  TrainConfig train_config;
  FitResult fit;
  MetricsReport test;
  std::uint64_t split_fingerprint = 0;
};

/// Trains and tests one arm.
RunResult run_arm(const ArmSpec& arm);

/// Runs arms on up to `threads` workers; results keep the arms' order and
/// do not depend on the thread count. The first failure (in arm order) is
/// rethrown after all workers finish.
std::vector<RunResult> run_arms(const std::vector<ArmSpec>& arms, unsigned threads);

enum class StudyKind { kCompare, kLambdaSweep, kReduce, kSparsity };

const char* study_kind_name(StudyKind kind);

struct StudyRow {
  std::string condition;
  MetricsReport metrics;
  std::optional<double> p_value;      // paired t-test on per-user NDCG vs baseline
  std::optional<double> improvement;  // relative NDCG change vs baseline
  std::uint64_t seed = 0;
  std::optional<std::size_t> removed;
  std::optional<double> removed_percent;
  std::optional<std::size_t> train_size;
  std::vector<double> zero_ratios;
};

struct StudyReport {
  StudyKind kind = StudyKind::kCompare;
  std::string dataset;
  std::string baseline;
  std::vector<StudyRow> rows;
  /// Reduction study: first level where SCoNet falls below MLP.
  std::optional<std::size_t> crossover_level;
};

/// One row per result; p-values and improvements against results[baseline].
/// Throws DataError if the results were not evaluated on one split.
StudyReport compare_results(const std::vector<RunResult>& results, std::size_t baseline,
                            const std::string& dataset);

StudyReport compare_study(const LooSplit& split, const std::vector<std::string>& arms,
                          const std::string& baseline, const ModelConfig& base,
                          const std::vector<std::size_t>& csn_widths, const TrainConfig& train,
                          const std::string& dataset, unsigned threads);

/// SCoNet for each λ; rows carry end-of-training zero ratios of every H.
StudyReport lambda_sweep(const LooSplit& split, const std::vector<double>& lambdas,
                         const ModelConfig& base, const TrainConfig& train,
                         const std::string& dataset, unsigned threads,
                         std::vector<RunResult>* runs = nullptr);

/// SCoNet on splits with `level` train target interactions removed per
/// user, against MLP on the full split. Rows: MLP first, then one per level.
StudyReport reduce_study(const LooSplit& split, const std::vector<std::size_t>& levels,
                         const ModelConfig& base, const TrainConfig& train,
                         const std::string& dataset, unsigned threads);

/// Zero ratio of each transfer matrix. Throws ConfigError without any H.
StudyReport sparsity_from_model(const Model& model);
/// Per-epoch series from a training history; one row per epoch.
StudyReport sparsity_from_history(const std::vector<EpochStats>& history);

std::string study_report_json(const StudyReport& report);
/// Fixed-width text table (4 decimals).
std::string format_study_table(const StudyReport& report);
/// CSV: epoch, loss and validation columns plus one zero-ratio column per H.
std::string history_csv(const std::vector<EpochStats>& history);

/// Writes text to a file, creating parent directories. Throws DataError.
void write_file(const std::filesystem::path& path, const std::string& text);

/// $CONET_OUTPUT_ROOT/<name>, or runs/<name> when the variable is unset.
std::filesystem::path default_output_dir(const std::string& name);

}  // namespace conet
