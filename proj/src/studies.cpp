#include "conet/studies.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "conet/error.hpp"

namespace conet {

namespace {

constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kReduceStream = 29;

std::string fixed(double x, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string lambda_label(double lambda) {
  std::ostringstream out;
  out << "lambda=" << lambda;
  return out.str();
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

CrossDomainDataset target_only(const LabeledDataset& target) {
  CrossDomainDataset d;
  d.target = target.data;
  d.source = InteractionDataset(target.data.num_users(), 0, {});
  d.user_ids = target.user_ids;
  d.target_item_ids = target.item_ids;
  return d;
}

}  // namespace

std::string DataConfig::dataset_name() const {
  if (target_path.empty()) {
    std::ostringstream out;
    out << "synthetic(rho=" << synthetic.relatedness << ",seed=" << synthetic.seed << ")";
    return out.str();
  }
  return target_path.stem().string();
}

Experiment prepare_experiment(const DataConfig& config) {
  Experiment e;
  e.name = config.dataset_name();
  if (config.target_path.empty()) {
    e.data = generate_synthetic(config.synthetic);
  } else {
    const LabeledDataset target = load_interactions(config.target_path, config.min_user_interactions);
    if (config.source_path.empty()) {
      e.data = target_only(target);
    } else {
      // The interaction floor applies to the target domain only.
      e.data = align_domains(target, load_interactions(config.source_path, 1));
    }
    e.data = first_users(e.data, config.max_users);
  }
  if (config.split_path.empty()) {
    Rng rng(config.split_seed);
    e.split = loo_split(e.data, rng);
  } else {
    e.split = read_split_manifest(config.split_path, e.data);
  }
  return e;
}

Model init_model(const ModelConfig& config, const LooSplit& split, std::uint64_t seed) {
  config.validate();
  Rng rng = Rng(seed).derive(kInitStream);
  const ModelShape shape{split.train.num_users(), split.train.target.num_items(),
                         has_source_tower(config.architecture) ? split.train.source.num_items() : 0};
  return Model(config, shape, rng);
}

ModelConfig arm_model(std::string_view name, const ModelConfig& base,
                      const std::vector<std::size_t>& csn_widths) {
  ModelConfig c = base;
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "sconet") {
    c.architecture = Architecture::kCoNet;
  } else if (lower == "conet") {
    c.architecture = Architecture::kCoNet;
    c.lasso_lambda = 0.0;
  } else {
    c.architecture = parse_architecture(name);
    if (c.architecture == Architecture::kCsn && !csn_widths.empty()) {
      c.hidden_widths = csn_widths;
      c.embedding_dim = csn_widths.front() / 2;
    }
  }
  c.validate();
  return c;
}

RunResult run_arm(const ArmSpec& arm) {
  if (arm.split == nullptr) throw ConfigError("arm '" + arm.label + "' has no split");
  RunResult r{arm.label, arm.model, arm.train, {init_model(arm.model, *arm.split, arm.train.seed), {}, 0},
              {}, split_fingerprint(*arm.split)};
  r.fit = fit(r.fit.model, *arm.split, arm.train);
  const ModelScorer scorer(r.fit.model, arm.split->train.source);
  r.test = evaluate(scorer, *arm.split, Partition::kTest, arm.train.top_n, arm.train.mrr_cutoff);
  return r;
}

std::vector<RunResult> run_arms(const std::vector<ArmSpec>& arms, unsigned threads) {
  // Refuse bad configurations before any training starts.
  for (const auto& a : arms) {
    a.model.validate();
    a.train.validate();
  }
  std::vector<std::optional<RunResult>> slots(arms.size());
  std::vector<std::exception_ptr> errors(arms.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t k = next++; k < arms.size(); k = next++) {
      try {
        slots[k] = run_arm(arms[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(arms.size(), 1));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<RunResult> out;
  out.reserve(arms.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

const char* study_kind_name(StudyKind kind) {
  switch (kind) {
    case StudyKind::kCompare: return "compare";
    case StudyKind::kLambdaSweep: return "lambda-sweep";
    case StudyKind::kReduce: return "reduce";
    case StudyKind::kSparsity: return "sparsity";
  }
  return "?";
}

namespace {

StudyRow row_for(const RunResult& r) {
  StudyRow row;
  row.condition = r.label;
  row.metrics = r.test;
  row.seed = r.train_config.seed;
  return row;
}

void compare_to(StudyRow& row, const MetricsReport& baseline) {
  row.p_value = paired_t_test(per_user_values(row.metrics, Metric::kNdcg),
                              per_user_values(baseline, Metric::kNdcg));
  if (baseline.ndcg > 0.0) row.improvement = (row.metrics.ndcg - baseline.ndcg) / baseline.ndcg;
}

}  // namespace

StudyReport compare_results(const std::vector<RunResult>& results, std::size_t baseline,
                            const std::string& dataset) {
  if (results.empty()) throw ConfigError("compare needs at least one run");
  if (baseline >= results.size()) throw ConfigError("baseline index out of range");
  for (const auto& r : results) {
    if (r.split_fingerprint != results.front().split_fingerprint) {
      throw DataError("runs '" + results.front().label + "' and '" + r.label +
                      "' were evaluated on different splits");
    }
  }
  StudyReport report;
  report.kind = StudyKind::kCompare;
  report.dataset = dataset;
  report.baseline = results[baseline].label;
  for (std::size_t k = 0; k < results.size(); ++k) {
    StudyRow row = row_for(results[k]);
    if (k != baseline) compare_to(row, results[baseline].test);
    report.rows.push_back(std::move(row));
  }
  return report;
}

StudyReport compare_study(const LooSplit& split, const std::vector<std::string>& arms,
                          const std::string& baseline, const ModelConfig& base,
                          const std::vector<std::size_t>& csn_widths, const TrainConfig& train,
                          const std::string& dataset, unsigned threads) {
  if (arms.empty()) throw ConfigError("compare needs at least one architecture");
  std::vector<ArmSpec> specs;
  for (const auto& name : arms) specs.push_back({name, arm_model(name, base, csn_widths), train, &split});
  std::size_t base_index = 0;
  if (!baseline.empty()) {
    const auto it = std::find(arms.begin(), arms.end(), baseline);
    if (it == arms.end()) throw ConfigError("baseline '" + baseline + "' is not among the arms");
    base_index = static_cast<std::size_t>(it - arms.begin());
  }
  return compare_results(run_arms(specs, threads), base_index, dataset);
}

StudyReport lambda_sweep(const LooSplit& split, const std::vector<double>& lambdas,
                         const ModelConfig& base, const TrainConfig& train,
                         const std::string& dataset, unsigned threads,
                         std::vector<RunResult>* runs) {
  if (lambdas.empty()) throw ConfigError("lambda sweep needs at least one value");
  std::vector<ArmSpec> specs;
  for (double lambda : lambdas) {
    ModelConfig c = base;
    c.architecture = Architecture::kCoNet;
    c.lasso_lambda = lambda;
    specs.push_back({lambda_label(lambda), c, train, &split});
  }
  std::vector<RunResult> results = run_arms(specs, threads);
  StudyReport report = compare_results(results, 0, dataset);
  report.kind = StudyKind::kLambdaSweep;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& history = results[k].fit.history;
    if (!history.empty()) report.rows[k].zero_ratios = history.back().h_zero_ratios;
  }
  if (runs != nullptr) *runs = std::move(results);
  return report;
}

StudyReport reduce_study(const LooSplit& split, const std::vector<std::size_t>& levels,
                         const ModelConfig& base, const TrainConfig& train,
                         const std::string& dataset, unsigned threads) {
  if (levels.empty()) throw ConfigError("reduction study needs at least one level");
  std::vector<ReductionResult> reduced;
  for (std::size_t level : levels) {
    Rng rng = Rng(train.seed).derive(kReduceStream);
    reduced.push_back(reduce_training(split, level, rng));
  }
  ModelConfig mlp = base;
  mlp.architecture = Architecture::kMlp;
  ModelConfig sconet = base;
  sconet.architecture = Architecture::kCoNet;

  std::vector<ArmSpec> specs{{"MLP", mlp, train, &split}};
  for (std::size_t k = 0; k < levels.size(); ++k) {
    specs.push_back({"SCoNet-" + std::to_string(levels[k]), sconet, train, &reduced[k].split});
  }
  const std::vector<RunResult> results = run_arms(specs, threads);

  StudyReport report;
  report.kind = StudyKind::kReduce;
  report.dataset = dataset;
  report.baseline = "MLP";
  StudyRow mlp_row = row_for(results[0]);
  mlp_row.removed = 0;
  mlp_row.removed_percent = 0.0;
  mlp_row.train_size = split.train.target.num_interactions();
  report.rows.push_back(mlp_row);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    StudyRow row = row_for(results[k + 1]);
    compare_to(row, results[0].test);
    row.removed = reduced[k].removed;
    row.removed_percent = reduced[k].removed_percent;
    row.train_size = reduced[k].split.train.target.num_interactions();
    if (!report.crossover_level && row.metrics.ndcg < results[0].test.ndcg) {
      report.crossover_level = levels[k];
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

StudyReport sparsity_from_model(const Model& model) {
  const auto& transfer = model.params().transfer;
  if (transfer.empty()) {
    throw ConfigError(std::string("architecture ") + architecture_name(model.config().architecture) +
                      " has no transfer matrices");
  }
  StudyReport report;
  report.kind = StudyKind::kSparsity;
  for (std::size_t l = 0; l < transfer.size(); ++l) {
    StudyRow row;
    row.condition = "H" + std::to_string(l + 1);
    row.zero_ratios = {sparsity_ratio(transfer[l])};
    report.rows.push_back(std::move(row));
  }
  return report;
}

StudyReport sparsity_from_history(const std::vector<EpochStats>& history) {
  if (history.empty()) throw DataError("history is empty");
  StudyReport report;
  report.kind = StudyKind::kSparsity;
  for (const auto& s : history) {
    if (s.h_zero_ratios.empty()) throw ConfigError("history has no transfer matrices");
    StudyRow row;
    row.condition = "epoch " + std::to_string(s.epoch);
    row.metrics.hr = s.val_hr;
    row.metrics.ndcg = s.val_ndcg;
    row.metrics.mrr = s.val_mrr;
    row.zero_ratios = s.h_zero_ratios;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string study_report_json(const StudyReport& report) {
  nlohmann::ordered_json j;
  j["study"] = study_kind_name(report.kind);
  j["dataset"] = report.dataset;
  j["baseline"] = report.baseline;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["condition"] = r.condition;
    row["seed"] = r.seed;
    row["hr"] = r.metrics.hr;
    row["ndcg"] = r.metrics.ndcg;
    row["mrr"] = r.metrics.mrr;
    row["num_users"] = r.metrics.num_evaluated_users;
    row["p_value"] = r.p_value ? nlohmann::ordered_json(*r.p_value) : nlohmann::ordered_json();
    row["improvement"] = r.improvement ? nlohmann::ordered_json(*r.improvement) : nlohmann::ordered_json();
    if (r.removed) row["amount"] = *r.removed;
    if (r.removed_percent) row["percent"] = *r.removed_percent;
    if (r.train_size) row["train_size"] = *r.train_size;
    if (!r.zero_ratios.empty()) row["zero_ratios"] = r.zero_ratios;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  if (report.kind == StudyKind::kReduce) {
    j["crossover_level"] =
        report.crossover_level ? nlohmann::ordered_json(*report.crossover_level) : nlohmann::ordered_json();
  }
  return j.dump(2);
}

std::string format_study_table(const StudyReport& report) {
  std::ostringstream out;
  std::size_t width = 10;
  for (const auto& r : report.rows) width = std::max(width, r.condition.size() + 2);
  const auto metrics = [&](const StudyRow& r) {
    return pad(fixed(r.metrics.hr), 8) + pad(fixed(r.metrics.ndcg), 8) + pad(fixed(r.metrics.mrr), 8);
  };
  const auto versus = [&](const StudyRow& r) {
    std::string s = pad(r.improvement ? fixed(100.0 * *r.improvement, 2) + "%" : "-", 10);
    s += r.p_value ? "p=" + fixed(*r.p_value) : "-";
    return s;
  };
  switch (report.kind) {
    case StudyKind::kCompare:
      out << pad("Model", width) << "HR      NDCG    MRR     improve   p-value\n";
      for (const auto& r : report.rows) out << pad(r.condition, width) << metrics(r) << versus(r) << '\n';
      break;
    case StudyKind::kLambdaSweep:
      out << pad("Setting", width) << "HR      NDCG    MRR     zeros   improve   p-value\n";
      for (const auto& r : report.rows) {
        out << pad(r.condition, width) << metrics(r) << pad(fixed(mean(r.zero_ratios)), 8) << versus(r)
            << '\n';
      }
      break;
    case StudyKind::kReduce:
      out << pad("Method", width) << "percent  amount   train    HR      NDCG    MRR\n";
      for (const auto& r : report.rows) {
        out << pad(r.condition, width) << pad(fixed(r.removed_percent.value_or(0.0), 2) + "%", 9)
            << pad(std::to_string(r.removed.value_or(0)), 9)
            << pad(std::to_string(r.train_size.value_or(0)), 9) << metrics(r) << '\n';
      }
      out << "crossover: "
          << (report.crossover_level ? "level " + std::to_string(*report.crossover_level) : "none")
          << '\n';
      break;
    case StudyKind::kSparsity:
      out << pad("Row", width) << "zero ratio per H\n";
      for (const auto& r : report.rows) {
        out << pad(r.condition, width);
        for (double z : r.zero_ratios) out << pad(fixed(z), 8);
        out << '\n';
      }
      break;
  }
  std::istringstream lines(out.str());
  std::string table, line;
  while (std::getline(lines, line)) {
    line.erase(line.find_last_not_of(' ') + 1);
    table += line + '\n';
  }
  return table;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  const std::size_t layers = history.empty() ? 0 : history.front().h_zero_ratios.size();
  out << "epoch,loss_target,loss_source,penalty,val_hr,val_ndcg,val_mrr";
  for (std::size_t l = 0; l < layers; ++l) out << ",zero_H" << l + 1;
  out << '\n';
  for (const auto& s : history) {
    out << s.epoch << ',' << fixed(s.loss_target, 6) << ',' << fixed(s.loss_source, 6) << ','
        << fixed(s.penalty, 6) << ',' << fixed(s.val_hr, 6) << ',' << fixed(s.val_ndcg, 6) << ','
        << fixed(s.val_mrr, 6);
    for (double z : s.h_zero_ratios) out << ',' << fixed(z, 6);
    out << '\n';
  }
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) throw DataError("cannot write " + path.string());
}

std::filesystem::path default_output_dir(const std::string& name) {
  const char* root = std::getenv("CONET_OUTPUT_ROOT");
  return std::filesystem::path(root != nullptr && *root != '\0' ? root : "runs") / name;
}

}  // namespace conet
