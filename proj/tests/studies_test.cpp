#include <doctest.h>

#include <string>
#include <vector>

#include "conet/error.hpp"
#include "conet/studies.hpp"
#include "test_support.hpp"

using namespace conet;

namespace {

LooSplit small_split() {
  SyntheticConfig s;
  s.num_users = 60;
  s.num_target_items = 150;
  s.num_source_items = 100;
  s.target_density = 0.04;
  s.source_density = 0.05;
  const auto data = generate_synthetic(s);
  Rng rng(1);
  return loo_split(data, rng);
}

ModelConfig small_model() {
  ModelConfig m;
  m.embedding_dim = 4;
  m.hidden_widths = {8, 8, 4};
  return m;
}

TrainConfig short_training() {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 32;
  return t;
}

}  // namespace

TEST_CASE("arm names map to configurations") {
  ModelConfig base = small_model();
  base.lasso_lambda = 0.3;
  CHECK(arm_model("SCoNet", base, {}).lasso_lambda == 0.3);
  CHECK(arm_model("SCoNet", base, {}).architecture == Architecture::kCoNet);
  CHECK(arm_model("conet", base, {}).lasso_lambda == 0.0);
  CHECK(arm_model("MLP++", base, {}).architecture == Architecture::kMlpPlusPlus);
  const auto csn = arm_model("CSN", base, {8, 8});
  CHECK(csn.architecture == Architecture::kCsn);
  CHECK(csn.hidden_widths == std::vector<std::size_t>{8, 8});
  CHECK(csn.embedding_dim == 4);
  CHECK_THROWS_AS(arm_model("CSN", base, {8, 4}), ConfigError);
  CHECK_THROWS_AS(arm_model("BPRMF", base, {}), ConfigError);
}

TEST_CASE("run_arms results do not depend on the thread count") {
  const LooSplit split = small_split();
  std::vector<ArmSpec> arms;
  for (const char* name : {"MLP", "CoNet", "SCoNet"}) {
    arms.push_back({name, arm_model(name, small_model(), {}), short_training(), &split});
  }
  const auto serial = run_arms(arms, 1);
  const auto parallel = run_arms(arms, 3);
  REQUIRE(serial.size() == 3);
  for (std::size_t k = 0; k < serial.size(); ++k) {
    CHECK(serial[k].label == arms[k].label);
    CHECK(serial[k].fit.history == parallel[k].fit.history);
    CHECK(serial[k].test.per_user == parallel[k].test.per_user);
    CHECK(serial[k].fit.model.params() == parallel[k].fit.model.params());
  }
}

TEST_CASE("invalid arms are refused before any training") {
  const LooSplit split = small_split();
  ModelConfig bad = small_model();
  bad.architecture = Architecture::kCsn;
  std::vector<ArmSpec> arms{{"MLP", small_model(), short_training(), &split},
                            {"CSN", bad, short_training(), &split}};
  CHECK_THROWS_AS(run_arms(arms, 2), ConfigError);
}

TEST_CASE("comparison against itself has p = 1 and no improvement") {
  const LooSplit split = small_split();
  const ArmSpec arm{"MLP", arm_model("MLP", small_model(), {}), short_training(), &split};
  const auto runs = run_arms({arm, arm}, 2);
  const auto report = compare_results(runs, 0, "tiny");
  REQUIRE(report.rows.size() == 2);
  CHECK(report.baseline == "MLP");
  CHECK_FALSE(report.rows[0].p_value.has_value());
  CHECK(*report.rows[1].p_value == 1.0);
  REQUIRE(runs[0].test.ndcg > 0.0);
  CHECK(report.rows[1].improvement == 0.0);

  auto mismatched = runs;
  mismatched[1].split_fingerprint ^= 1;
  CHECK_THROWS_AS(compare_results(mismatched, 0, "tiny"), DataError);
}

TEST_CASE("lambda sweep rows carry zero ratios") {
  const LooSplit split = small_split();
  std::vector<RunResult> runs;
  const auto report =
      lambda_sweep(split, {0.0, 10.0}, small_model(), short_training(), "tiny", 2, &runs);
  REQUIRE(report.rows.size() == 2);
  CHECK(runs.size() == 2);
  CHECK(report.rows[0].condition == "lambda=0");
  CHECK(report.rows[1].condition == "lambda=10");
  CHECK(report.rows[0].zero_ratios.size() == 2);
  for (double z : report.rows[0].zero_ratios) CHECK(z < 0.01);
  for (double z : report.rows[1].zero_ratios) CHECK(z == 1.0);
}

TEST_CASE("reduction study shrinks the training set") {
  const LooSplit split = small_split();
  const auto report = reduce_study(split, {0, 1, 2}, small_model(), short_training(), "tiny", 2);
  REQUIRE(report.rows.size() == 4);
  CHECK(report.rows[0].condition == "MLP");
  CHECK(report.rows[1].condition == "SCoNet-0");
  CHECK(*report.rows[1].removed == 0);
  CHECK(*report.rows[1].train_size == split.train.target.num_interactions());
  CHECK(*report.rows[2].train_size < *report.rows[1].train_size);
  CHECK(*report.rows[3].train_size < *report.rows[2].train_size);
  CHECK(*report.rows[2].removed == split.train.target.num_interactions() - *report.rows[2].train_size);
  CHECK(*report.rows[2].removed_percent ==
        doctest::Approx(100.0 * static_cast<double>(*report.rows[2].removed) /
                        static_cast<double>(split.train.target.num_interactions())));
  const std::string table = format_study_table(report);
  CHECK(table.find("percent") != std::string::npos);
  CHECK(table.find("amount") != std::string::npos);
  const std::string json = study_report_json(report);
  CHECK(json.find("\"study\": \"reduce\"") != std::string::npos);
  CHECK(json.find("crossover_level") != std::string::npos);
}

TEST_CASE("sparsity reports") {
  Rng rng(2);
  ModelConfig mlp = small_model();
  mlp.architecture = Architecture::kMlp;
  CHECK_THROWS_AS(sparsity_from_model(Model(mlp, {3, 4, 0}, rng)), ConfigError);

  ModelConfig conet = small_model();
  conet.architecture = Architecture::kCoNet;
  Model model(conet, {3, 4, 5}, rng);
  model.mutable_params().transfer[0] = Matrix(8, 8);
  const auto report = sparsity_from_model(model);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].zero_ratios == std::vector<double>{1.0});
  CHECK(report.rows[1].zero_ratios == std::vector<double>{0.0});

  EpochStats a;
  a.epoch = 1;
  a.h_zero_ratios = {0.25, 0.5};
  EpochStats b = a;
  b.epoch = 2;
  const auto series = sparsity_from_history({a, b});
  CHECK(series.rows.size() == 2);
  CHECK(series.rows[1].condition == "epoch 2");
  CHECK_THROWS_AS(sparsity_from_history({EpochStats{}}), ConfigError);

  const std::string csv = history_csv({a, b});
  CHECK(csv.rfind("epoch,loss_target,loss_source,penalty,val_hr,val_ndcg,val_mrr,zero_H1,zero_H2\n", 0) ==
        0);
}
