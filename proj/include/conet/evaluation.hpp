#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "conet/data.hpp"

namespace conet {

struct RankingResult {
  std::size_t user = 0;
  unsigned hit_position = 0;  // 1-based rank among the 100 candidates

  bool operator==(const RankingResult&) const = default;
};

struct MetricsReport {
  double hr = 0.0;
  double ndcg = 0.0;
  double mrr = 0.0;
  std::vector<RankingResult> per_user;
  unsigned top_n = 10;
  bool mrr_cutoff = true;
  std::size_t num_evaluated_users = 0;
};

/// r̂_ui = f(u, i | Θ) for target items.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(std::size_t user, Index item) const = 0;
};

/// 1 + number of negatives scoring ≥ the test item (ties go against it).
/// Throws NumericError for non-finite scores.
unsigned rank_test_item(double test_score, std::span<const double> negative_scores);

// Per-user contributions. Positions beyond top_n contribute 0.
double hit_contribution(unsigned position, unsigned top_n);
double ndcg_contribution(unsigned position, unsigned top_n);
double mrr_contribution(unsigned position, unsigned top_n, bool cutoff = true);

// Means over users in the given order. Throw DataError on empty input.
double hit_ratio(std::span<const RankingResult> results, unsigned top_n = 10);
double ndcg(std::span<const RankingResult> results, unsigned top_n = 10);
double mrr(std::span<const RankingResult> results, unsigned top_n = 10, bool cutoff = true);

enum class Partition { kTest, kValidation };

const char* partition_name(Partition p);

/// Ranks each evaluated user's held-out item against the split's frozen
/// 99 negatives. Users are processed in index order.
MetricsReport evaluate(const Scorer& scorer, const LooSplit& split,
                       Partition partition = Partition::kTest, unsigned top_n = 10,
                       bool mrr_cutoff = true);

/// Rebuilds the aggregates from per_user.
MetricsReport aggregate(std::vector<RankingResult> per_user, unsigned top_n, bool mrr_cutoff);

enum class Metric { kHr, kNdcg, kMrr };

const char* metric_name(Metric m);

std::vector<double> per_user_values(const MetricsReport& report, Metric metric);

/// Two-sided paired t-test. Identical samples give p = 1; constant nonzero
/// differences give p = 0. Throws DataError for mismatched or short input.
double paired_t_test(std::span<const double> a, std::span<const double> b);

/// JSON with keys model, dataset, topN, hr, ndcg, mrr, num_users and,
/// optionally, per_user (array of {user, position}).
std::string metrics_report_json(const MetricsReport& report, const std::string& model,
                                const std::string& dataset, bool include_per_user);

}  // namespace conet
