// conet: command-line driver for data generation, training, evaluation and
// the comparison, λ-sweep, reduction and sparsity studies.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conet/checkpoint.hpp"
#include "conet/error.hpp"
#include "conet/studies.hpp"

namespace {

using namespace conet;

struct Options {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::string arch = "SCoNet";
  std::string out;
  std::string config_path;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());

  std::string checkpoint;
  std::string history;
  std::string partition = "test";
  bool per_user = false;
  bool no_mrr_cutoff = false;
  bool unshared = false;
  std::string init = "fan-in";

  std::vector<std::string> arms{"MLP", "MLP++", "CSN", "CoNet", "SCoNet"};
  std::string baseline;
  std::vector<std::size_t> csn_widths{64, 64, 64, 64};
  std::vector<double> lambdas{0.0, 0.1, 1.0, 10.0};
  std::vector<std::size_t> levels{0, 1, 2};
};

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  for (std::size_t k = 0; k < v.size(); ++k) out << (k ? "," : "") << v[k];
  return out.str();
}

void add_synthetic_options(CLI::App* sub, SyntheticConfig& s) {
  sub->add_option("--users", s.num_users, "Synthetic users")->capture_default_str();
  sub->add_option("--target-items", s.num_target_items, "Synthetic target items")->capture_default_str();
  sub->add_option("--source-items", s.num_source_items, "Synthetic source items")->capture_default_str();
  sub->add_option("--latent-dim", s.latent_dim, "Synthetic latent factors")->capture_default_str();
  sub->add_option("--rho", s.relatedness, "Domain relatedness in [0, 1]")->capture_default_str();
  sub->add_option("--target-density", s.target_density)->capture_default_str();
  sub->add_option("--source-density", s.source_density)->capture_default_str();
  sub->add_option("--data-seed", s.seed, "Synthetic generator seed")->capture_default_str();
}

void add_data_options(CLI::App* sub, Options& o) {
  sub->add_option("--target", o.data.target_path, "Target-domain TSV (omit for synthetic data)");
  sub->add_option("--source", o.data.source_path, "Source-domain TSV");
  sub->add_option("--min-interactions", o.data.min_user_interactions,
                  "Drop target users with fewer interactions")
      ->capture_default_str();
  sub->add_option("--max-users", o.data.max_users, "Keep only the first N shared users (0: all)")
      ->capture_default_str();
  sub->add_option("--split", o.data.split_path, "Frozen split manifest (JSON)");
  sub->add_option("--split-seed", o.data.split_seed, "Seed of the leave-one-out split")
      ->capture_default_str();
  add_synthetic_options(sub, o.data.synthetic);
}

void add_model_options(CLI::App* sub, Options& o) {
  sub->add_option("--dim", o.model.embedding_dim, "Embedding size d")->capture_default_str();
  sub->add_option("--widths", o.model.hidden_widths, "Hidden widths; the first must be 2d")
      ->delimiter(',')
      ->default_str(join(o.model.hidden_widths));
  sub->add_option("--lambda", o.model.lasso_lambda, "Sparsity penalty of SCoNet")->capture_default_str();
  sub->add_option("--csn-alpha-self", o.model.csn_alpha_self)->capture_default_str();
  sub->add_option("--csn-alpha-other", o.model.csn_alpha_other)->capture_default_str();
  sub->add_flag("--unshared-user-embedding", o.unshared, "Give the source tower its own user embedding");
  sub->add_option("--init", o.init, "fan-in or gaussian (every tensor N(0, 0.01^2))")
      ->check(CLI::IsMember({"fan-in", "gaussian"}))
      ->capture_default_str();
}

void add_train_options(CLI::App* sub, Options& o) {
  TrainConfig& t = o.train;
  sub->add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
  sub->add_option("--batch-size", t.batch_size)->capture_default_str();
  sub->add_option("--neg-ratio", t.negative_ratio, "Negatives per positive")->capture_default_str();
  sub->add_option("--epochs", t.epochs)->capture_default_str();
  sub->add_option("--patience", t.patience, "Early-stopping patience in epochs")->capture_default_str();
  sub->add_option("--beta1", t.adam_beta1)->capture_default_str();
  sub->add_option("--beta2", t.adam_beta2)->capture_default_str();
  sub->add_option("--adam-eps", t.adam_epsilon)->capture_default_str();
  sub->add_option("--seed", t.seed, "Training seed")->capture_default_str();
  sub->add_option("--top-n", t.top_n, "Ranking cutoff")->capture_default_str();
  sub->add_flag("--no-mrr-cutoff", o.no_mrr_cutoff, "Count reciprocal ranks beyond the cutoff");
}

void add_common(CLI::App* sub, Options& o, const std::string& name) {
  sub->add_option("--out", o.out, "Output directory")->default_str(default_output_dir(name).string());
  sub->add_option("--config", o.config_path, "Flat key=value file; command-line flags win");
}

// Applies `key=value` lines to options not given on the command line.
void apply_config_file(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  CLI::ConfigINI reader;
  for (const CLI::ConfigItem& item : reader.from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) throw ConfigError("config sections are not supported: " + item.fullname());
    if (item.name == "config") continue;
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + item.name);
    } catch (const CLI::OptionNotFound&) {
      throw ConfigError("unknown config key '" + item.name + "' for " + sub.get_name());
    }
    if (opt->count() > 0) continue;
    try {
      opt->add_result(item.inputs);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config key '" + item.name + "': " + e.what());
    }
  }
}

// Every option of the subcommand as it was finally resolved.
std::string resolved_config(const CLI::App& sub) {
  std::ostringstream out;
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t k = 0; k < results.size(); ++k) value += (k ? "," : "") + results[k];
      if (opt->get_expected_max() == 0 && value.empty()) value = "true";
    } else {
      value = opt->get_default_str();
      if (opt->get_expected_max() == 0 && value.empty()) value = "false";
    }
    if (value.find_first_of(" ,#;\"") != std::string::npos) value = '"' + value + '"';
    out << name << '=' << value << '\n';
  }
  return out.str();
}

void finalize(Options& o) {
  o.model.share_user_embedding = !o.unshared;
  o.model.init_scheme = parse_init_scheme(o.init);
  o.train.mrr_cutoff = !o.no_mrr_cutoff;
}

std::filesystem::path output_dir(const Options& o, const std::string& name) {
  return o.out.empty() ? default_output_dir(name) : std::filesystem::path(o.out);
}

nlohmann::ordered_json metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["hr"] = r.hr;
  j["ndcg"] = r.ndcg;
  j["mrr"] = r.mrr;
  j["num_users"] = r.num_evaluated_users;
  return j;
}

int cmd_generate(const Options& o) {
  const SyntheticConfig& s = o.data.synthetic;
  s.validate();
  const CrossDomainDataset d = generate_synthetic(s);
  const auto dir = output_dir(o, "generate");
  std::filesystem::create_directories(dir);
  write_interactions(dir / "target.tsv", {d.target, d.user_ids, d.target_item_ids});
  write_interactions(dir / "source.tsv", {d.source, d.user_ids, d.source_item_ids});
  nlohmann::ordered_json m;
  m["seed"] = s.seed;
  m["relatedness"] = s.relatedness;
  m["latent_dim"] = s.latent_dim;
  m["num_users"] = s.num_users;
  m["num_target_items"] = s.num_target_items;
  m["num_source_items"] = s.num_source_items;
  m["target_density"] = s.target_density;
  m["source_density"] = s.source_density;
  m["target_interactions"] = d.target.num_interactions();
  m["source_interactions"] = d.source.num_interactions();
  m["realized_target_density"] = d.target.density();
  m["realized_source_density"] = d.source.density();
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << "wrote " << (dir / "target.tsv").string() << ", " << (dir / "source.tsv").string()
            << " and manifest.json (" << d.target.num_interactions() << " target, "
            << d.source.num_interactions() << " source interactions)\n";
  return 0;
}

int cmd_train(const Options& o, const CLI::App& sub) {
  const ModelConfig model = arm_model(o.arch, o.model, {});
  o.train.validate();
  if (model.architecture == Architecture::kMlp && !o.data.source_path.empty()) {
    std::cerr << "warning: MLP does not train on the source domain; " << o.data.source_path.string()
              << " only restricts users to those shared by both domains\n";
  }
  const auto dir = output_dir(o, "train");
  std::filesystem::create_directories(dir);
  write_file(dir / "config.ini", resolved_config(sub));

  const Experiment e = prepare_experiment(o.data);
  const Model initial = init_model(model, e.split, o.train.seed);
  const FitResult result = fit(initial, e.split, o.train);
  const std::uint64_t fingerprint = split_fingerprint(e.split);

  save_checkpoint(dir / "checkpoint.bin", result.model, fingerprint);
  write_history((dir / "history.jsonl").string(), result.history);
  write_split_manifest(dir / "split.json", e.split);

  const ModelScorer scorer(result.model, e.split.train.source);
  const MetricsReport test = evaluate(scorer, e.split, Partition::kTest, o.train.top_n, o.train.mrr_cutoff);
  nlohmann::ordered_json s;
  s["model"] = o.arch;
  s["dataset"] = e.name;
  s["epochs_run"] = result.history.size();
  s["best_epoch"] = result.best_epoch;
  if (result.best_epoch > 0) {
    const EpochStats& best = result.history[result.best_epoch - 1];
    s["validation"] = {{"hr", best.val_hr}, {"ndcg", best.val_ndcg}, {"mrr", best.val_mrr}};
  }
  s["test"] = metrics_json(test);
  write_file(dir / "summary.json", s.dump(2) + "\n");
  std::cout << s.dump(2) << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  Partition partition;
  if (o.partition == "test") {
    partition = Partition::kTest;
  } else if (o.partition == "validation") {
    partition = Partition::kValidation;
  } else {
    throw ConfigError("--partition must be test or validation");
  }
  const Experiment e = prepare_experiment(o.data);
  const std::uint64_t fingerprint = split_fingerprint(e.split);
  if (fingerprint != ckpt.split_fingerprint) {
    throw ConfigError("checkpoint was trained on a different split (fingerprint " +
                      std::to_string(ckpt.split_fingerprint) + ", data gives " +
                      std::to_string(fingerprint) + ")");
  }
  const ModelScorer scorer(ckpt.model, e.split.train.source);
  const MetricsReport report = evaluate(scorer, e.split, partition, o.train.top_n, o.train.mrr_cutoff);
  const std::string json = metrics_report_json(
      report, architecture_name(ckpt.model.config().architecture), e.name, o.per_user);
  const auto dir = output_dir(o, "evaluate");
  write_file(dir / ("report-" + o.partition + ".json"), json + "\n");
  std::cout << json << "\n";
  return 0;
}

void emit_study(const Options& o, const std::string& name, const StudyReport& report,
                const CLI::App& sub) {
  const auto dir = output_dir(o, name);
  write_file(dir / "config.ini", resolved_config(sub));
  write_file(dir / "report.json", study_report_json(report) + "\n");
  const std::string table = format_study_table(report);
  write_file(dir / "table.txt", table);
  std::cout << table;
}

int cmd_compare(const Options& o, const CLI::App& sub) {
  for (const auto& a : o.arms) arm_model(a, o.model, o.csn_widths);
  const Experiment e = prepare_experiment(o.data);
  emit_study(o, "compare",
             compare_study(e.split, o.arms, o.baseline, o.model, o.csn_widths, o.train, e.name, o.threads),
             sub);
  return 0;
}

int cmd_lambda_sweep(const Options& o, const CLI::App& sub) {
  arm_model("SCoNet", o.model, {});
  const Experiment e = prepare_experiment(o.data);
  std::vector<RunResult> runs;
  const StudyReport report = lambda_sweep(e.split, o.lambdas, o.model, o.train, e.name, o.threads, &runs);
  emit_study(o, "lambda-sweep", report, sub);
  std::string csv;
  for (const auto& r : runs) {
    std::istringstream lines(history_csv(r.fit.history));
    std::string line;
    bool header = true;
    while (std::getline(lines, line)) {
      if (header) {
        if (csv.empty()) csv += "lambda," + line + "\n";
        header = false;
        continue;
      }
      std::ostringstream value;
      value << r.model_config.lasso_lambda;
      csv += value.str() + "," + line + "\n";
    }
  }
  write_file(output_dir(o, "lambda-sweep") / "sweep.csv", csv);
  return 0;
}

int cmd_reduce_study(const Options& o, const CLI::App& sub) {
  arm_model("SCoNet", o.model, {});
  const Experiment e = prepare_experiment(o.data);
  emit_study(o, "reduce-study", reduce_study(e.split, o.levels, o.model, o.train, e.name, o.threads), sub);
  return 0;
}

int cmd_sparsity_report(const Options& o) {
  if (o.checkpoint.empty() == o.history.empty()) {
    throw ConfigError("give exactly one of --checkpoint or --history");
  }
  const auto dir = output_dir(o, "sparsity-report");
  StudyReport report;
  if (!o.checkpoint.empty()) {
    report = sparsity_from_model(load_checkpoint(o.checkpoint).model);
  } else {
    const auto history = read_history(o.history);
    report = sparsity_from_history(history);
    write_file(dir / "sparsity.csv", history_csv(history));
  }
  write_file(dir / "sparsity.json", study_report_json(report) + "\n");
  std::cout << format_study_table(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Cross-domain recommendation with collaborative cross networks");
  app.require_subcommand(1);
  Options o;

  auto* generate = app.add_subcommand("generate", "Write a synthetic cross-domain dataset");
  add_synthetic_options(generate, o.data.synthetic);
  add_common(generate, o, "generate");

  auto* train = app.add_subcommand("train", "Train one model and write checkpoint, history and split");
  train->add_option("--arch", o.arch, "MLP, MLP++, CSN, CoNet (lambda 0) or SCoNet")->capture_default_str();
  add_data_options(train, o);
  add_model_options(train, o);
  add_train_options(train, o);
  add_common(train, o, "train");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on its frozen split");
  evaluate_cmd->add_option("--checkpoint", o.checkpoint)->required();
  evaluate_cmd->add_option("--partition", o.partition, "test or validation")->capture_default_str();
  evaluate_cmd->add_flag("--per-user", o.per_user, "Include per-user hit positions");
  evaluate_cmd->add_option("--top-n", o.train.top_n)->capture_default_str();
  evaluate_cmd->add_flag("--no-mrr-cutoff", o.no_mrr_cutoff);
  add_data_options(evaluate_cmd, o);
  add_common(evaluate_cmd, o, "evaluate");

  auto* compare = app.add_subcommand("compare", "Train several architectures on one split");
  compare->add_option("--arms", o.arms, "Architectures to compare")->delimiter(',')->default_str(join(o.arms));
  compare->add_option("--baseline", o.baseline, "Arm used for p-values (default: first)");
  compare->add_option("--csn-widths", o.csn_widths, "Hidden widths of the CSN arm")
      ->delimiter(',')
      ->default_str(join(o.csn_widths));
  compare->add_option("--threads", o.threads)->capture_default_str();
  add_data_options(compare, o);
  add_model_options(compare, o);
  add_train_options(compare, o);
  add_common(compare, o, "compare");

  auto* sweep = app.add_subcommand("lambda-sweep", "SCoNet over a list of sparsity penalties");
  sweep->add_option("--lambdas", o.lambdas)->delimiter(',')->default_str(join(o.lambdas));
  sweep->add_option("--threads", o.threads)->capture_default_str();
  add_data_options(sweep, o);
  add_model_options(sweep, o);
  add_train_options(sweep, o);
  add_common(sweep, o, "lambda-sweep");

  auto* reduce = app.add_subcommand("reduce-study", "SCoNet on reduced training data against MLP");
  reduce->add_option("--levels", o.levels, "Train interactions removed per user")
      ->delimiter(',')
      ->default_str(join(o.levels));
  reduce->add_option("--threads", o.threads)->capture_default_str();
  add_data_options(reduce, o);
  add_model_options(reduce, o);
  add_train_options(reduce, o);
  add_common(reduce, o, "reduce-study");

  auto* sparsity = app.add_subcommand("sparsity-report", "Zero ratios of the transfer matrices");
  sparsity->add_option("--checkpoint", o.checkpoint);
  sparsity->add_option("--history", o.history, "history.jsonl written by train");
  add_common(sparsity, o, "sparsity-report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) {
      if (!o.config_path.empty()) apply_config_file(*sub, o.config_path);
    }
    finalize(o);
    if (generate->parsed()) return cmd_generate(o);
    if (train->parsed()) return cmd_train(o, *train);
    if (evaluate_cmd->parsed()) return cmd_evaluate(o);
    if (compare->parsed()) return cmd_compare(o, *compare);
    if (sweep->parsed()) return cmd_lambda_sweep(o, *sweep);
    if (reduce->parsed()) return cmd_reduce_study(o, *reduce);
    if (sparsity->parsed()) return cmd_sparsity_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
