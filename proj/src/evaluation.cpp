#include "conet/evaluation.hpp"

#include <cmath>
#include <string>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "conet/error.hpp"

namespace conet {

unsigned rank_test_item(double test_score, std::span<const double> negative_scores) {
  if (!std::isfinite(test_score)) throw NumericError("non-finite test item score");
  unsigned position = 1;
  for (double s : negative_scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite negative item score");
    if (s >= test_score) ++position;
  }
  return position;
}

double hit_contribution(unsigned position, unsigned top_n) {
  return position <= top_n ? 1.0 : 0.0;
}

double ndcg_contribution(unsigned position, unsigned top_n) {
  if (position > top_n) return 0.0;
  return std::log(2.0) / std::log(static_cast<double>(position) + 1.0);
}

double mrr_contribution(unsigned position, unsigned top_n, bool cutoff) {
  if (cutoff && position > top_n) return 0.0;
  return 1.0 / static_cast<double>(position);
}

namespace {

template <typename F>
double mean_of(std::span<const RankingResult> results, F&& contribution) {
  if (results.empty()) throw DataError("metrics need at least one evaluated user");
  double sum = 0.0;
  for (const auto& r : results) sum += contribution(r.hit_position);
  return sum / static_cast<double>(results.size());
}

}  // namespace

double hit_ratio(std::span<const RankingResult> results, unsigned top_n) {
  return mean_of(results, [top_n](unsigned p) { return hit_contribution(p, top_n); });
}

double ndcg(std::span<const RankingResult> results, unsigned top_n) {
  return mean_of(results, [top_n](unsigned p) { return ndcg_contribution(p, top_n); });
}

double mrr(std::span<const RankingResult> results, unsigned top_n, bool cutoff) {
  return mean_of(results, [=](unsigned p) { return mrr_contribution(p, top_n, cutoff); });
}

const char* partition_name(Partition p) {
  return p == Partition::kTest ? "test" : "validation";
}

MetricsReport aggregate(std::vector<RankingResult> per_user, unsigned top_n, bool mrr_cutoff) {
  MetricsReport report;
  report.top_n = top_n;
  report.mrr_cutoff = mrr_cutoff;
  report.num_evaluated_users = per_user.size();
  if (!per_user.empty()) {
    report.hr = hit_ratio(per_user, top_n);
    report.ndcg = ndcg(per_user, top_n);
    report.mrr = mrr(per_user, top_n, mrr_cutoff);
  }
  report.per_user = std::move(per_user);
  return report;
}

MetricsReport evaluate(const Scorer& scorer, const LooSplit& split, Partition partition,
                       unsigned top_n, bool mrr_cutoff) {
  const auto users = split.evaluated_users();
  if (users.empty()) throw DataError("split has no evaluated users");
  std::vector<RankingResult> per_user;
  per_user.reserve(users.size());
  std::vector<double> negative_scores(kEvalNegatives);
  for (std::size_t u : users) {
    const Index held = partition == Partition::kTest ? *split.test[u] : *split.validation[u];
    try {
      const auto& negatives = split.eval_negatives[u];
      negative_scores.resize(negatives.size());
      for (std::size_t k = 0; k < negatives.size(); ++k) {
        negative_scores[k] = scorer.score(u, negatives[k]);
      }
      per_user.push_back({u, rank_test_item(scorer.score(u, held), negative_scores)});
    } catch (const NumericError& e) {
      throw NumericError("evaluating user " + std::to_string(u) + ": " + e.what());
    }
  }
  return aggregate(std::move(per_user), top_n, mrr_cutoff);
}

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::kHr: return "HR";
    case Metric::kNdcg: return "NDCG";
    case Metric::kMrr: return "MRR";
  }
  return "?";
}

std::vector<double> per_user_values(const MetricsReport& report, Metric metric) {
  std::vector<double> values;
  values.reserve(report.per_user.size());
  for (const auto& r : report.per_user) {
    switch (metric) {
      case Metric::kHr: values.push_back(hit_contribution(r.hit_position, report.top_n)); break;
      case Metric::kNdcg: values.push_back(ndcg_contribution(r.hit_position, report.top_n)); break;
      case Metric::kMrr:
        values.push_back(mrr_contribution(r.hit_position, report.top_n, report.mrr_cutoff));
        break;
    }
  }
  return values;
}

double paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("paired_t_test: samples differ in length");
  if (a.size() < 2) throw DataError("paired_t_test: need at least two pairs");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) mean += a[k] - b[k];
  mean /= n;
  double ss = 0.0;
  bool all_zero = true;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    if (diff != 0.0) all_zero = false;
    ss += (diff - mean) * (diff - mean);
  }
  if (all_zero) return 1.0;
  const double variance = ss / (n - 1.0);
  if (variance == 0.0) return 0.0;
  const double t = mean / std::sqrt(variance / n);
  const boost::math::students_t dist(n - 1.0);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

std::string metrics_report_json(const MetricsReport& report, const std::string& model,
                                const std::string& dataset, bool include_per_user) {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["dataset"] = dataset;
  j["topN"] = report.top_n;
  j["hr"] = report.hr;
  j["ndcg"] = report.ndcg;
  j["mrr"] = report.mrr;
  j["num_users"] = report.num_evaluated_users;
  if (include_per_user) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : report.per_user) {
      rows.push_back({{"user", r.user}, {"position", r.hit_position}});
    }
    j["per_user"] = std::move(rows);
  }
  return j.dump(2);
}

}  // namespace conet
