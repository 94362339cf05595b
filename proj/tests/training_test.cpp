#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "conet/error.hpp"
#include "conet/training.hpp"
#include "test_support.hpp"

using namespace conet;

namespace {

LooSplit small_split(std::uint64_t seed = 3, double source_density = 0.04) {
  SyntheticConfig c;
  c.num_users = 80;
  c.num_target_items = 200;
  c.num_source_items = 150;
  c.target_density = 0.03;
  c.source_density = source_density;
  c.seed = seed;
  Rng rng(seed);
  return loo_split(generate_synthetic(c), rng);
}

ModelConfig small_config(Architecture arch, double lambda = 0.1) {
  ModelConfig c;
  c.architecture = arch;
  c.embedding_dim = 8;
  c.hidden_widths = arch == Architecture::kCsn ? std::vector<std::size_t>{16, 16, 16}
                                               : std::vector<std::size_t>{16, 8, 4};
  c.lasso_lambda = lambda;
  return c;
}

ModelShape shape_of(const LooSplit& s) {
  return {s.train.num_users(), s.train.target.num_items(), s.train.source.num_items()};
}

TrainConfig small_train(std::size_t epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.learning_rate = 0.01;
  return t;
}

}  // namespace

TEST_CASE("joint loss") {
  CHECK(joint_loss(1.5, 2.5, 0.0) == 4.0);
  CHECK(joint_loss(0.0, 0.0, 0.0) == 0.0);
  CHECK(joint_loss(1.5, 2.5, 0.6) == doctest::Approx(4.6));
  CHECK(cross_entropy_loss(std::vector<double>(7, 0.5), std::vector<double>{1, 0, 1, 1, 0, 0, 1}) ==
        doctest::Approx(7.0 * std::log(2.0)));
  CHECK(cross_entropy_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 0.0}) ==
        doctest::Approx(0.0));
}

TEST_CASE("adam_update") {
  SUBCASE("first step") {
    std::vector<double> theta{1.0}, grad{1.0}, m{0.0}, v{0.0};
    adam_update(theta, grad, m, v, 1, AdamConfig{});
    CHECK(std::abs(theta[0] - 0.999) < 1e-6);
    CHECK(theta[0] == doctest::Approx(0.99900000001).epsilon(1e-14));
  }
  SUBCASE("zero gradient leaves parameters") {
    std::vector<double> theta{0.3, -2.0}, grad{0.0, 0.0}, m{0.0, 0.0}, v{0.0, 0.0};
    adam_update(theta, grad, m, v, 1, AdamConfig{});
    CHECK(theta == std::vector<double>{0.3, -2.0});
  }
  SUBCASE("matches the scalar recurrence over many steps") {
    const std::vector<double> grads{0.5, -1.25, 2.0, 0.0, 0.75, -0.1, 3.0};
    std::vector<double> theta{0.2}, m{0.0}, v{0.0};
    double t2 = 0.2, m2 = 0.0, v2 = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
      adam_update(theta, std::vector<double>{grads[k]}, m, v, k + 1, AdamConfig{});
      m2 = 0.9 * m2 + 0.1 * grads[k];
      v2 = 0.999 * v2 + 0.001 * grads[k] * grads[k];
      const double mh = m2 / (1.0 - std::pow(0.9, k + 1.0));
      const double vh = v2 / (1.0 - std::pow(0.999, k + 1.0));
      t2 -= 0.001 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(theta[0] == doctest::Approx(t2).epsilon(1e-14));
    }
  }
}

TEST_CASE("adam_step over a parameter set") {
  Rng rng(2);
  const Model model(testing::tiny_config(Architecture::kCoNet), testing::tiny_shape(), rng, 0.5);
  Parameters a = model.params(), b = model.params();
  Parameters grads = zeros_like(a);
  for (double& g : grads.user_embedding.values()) g = 0.1;
  for (double& g : grads.transfer[0].values()) g = -0.2;
  AdamState sa = AdamState::zeros_for(a), sb = AdamState::zeros_for(b);
  adam_step(a, grads, sa, AdamConfig{});
  adam_step(b, grads, sb, AdamConfig{});
  CHECK(a == b);
  CHECK(sa.t == 1);
  CHECK(a.target == model.params().target);
  CHECK_FALSE(a.user_embedding == model.params().user_embedding);

  UpdatePlan plan;
  plan.groups = mask_of(ParamGroup::kUserEmbedding);
  plan.user_rows = {2};
  Parameters c = model.params();
  AdamState sc = AdamState::zeros_for(c);
  adam_step(c, grads, sc, AdamConfig{}, plan);
  for (std::size_t u = 0; u < c.user_embedding.rows(); ++u) {
    const bool changed = !std::equal(c.user_embedding.row(u).begin(), c.user_embedding.row(u).end(),
                                     model.params().user_embedding.row(u).begin());
    CHECK(changed == (u == 2));
  }
  CHECK(c.transfer == model.params().transfer);
  CHECK(sc.tensor_steps[0] == 1);
  CHECK(sc.tensor_steps.back() == 0);

  Parameters wrong = zeros_like(model.params());
  wrong.transfer.pop_back();
  CHECK_THROWS_AS(adam_step(c, wrong, sc, AdamConfig{}), ConfigError);
}

TEST_CASE("proximal_l1") {
  Matrix h(1, 5, {0.25, -0.25, 0.05, -0.1, 0.0});
  Matrix same = h;
  proximal_l1(same, 0.0);
  CHECK(same == h);
  proximal_l1(h, 0.1);
  CHECK(h(0, 0) == doctest::Approx(0.15));
  CHECK(h(0, 1) == doctest::Approx(-0.15));
  CHECK(h(0, 2) == 0.0);
  CHECK(h(0, 3) == 0.0);
  CHECK(h(0, 4) == 0.0);
  Matrix small(2, 2, {0.01, -0.02, 0.03, -0.04});
  proximal_l1(small, 0.05);
  CHECK(sparsity_ratio(small) == 1.0);
}

TEST_CASE("proximal_l1 is firmly non-expansive") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix x = gaussian_init(3, 3, rng, 1.0), y = gaussian_init(3, 3, rng, 1.0);
    Matrix px = x, py = y;
    const double t = rng.uniform();
    proximal_l1(px, t);
    proximal_l1(py, t);
    double inner = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < 9; ++k) {
      const double dp = px.values()[k] - py.values()[k];
      inner += dp * (x.values()[k] - y.values()[k]);
      norm += dp * dp;
    }
    CHECK(norm <= inner + 1e-12);
  }
}

TEST_CASE("sparsity_ratio") {
  CHECK(sparsity_ratio(Matrix(3, 4)) == 1.0);
  CHECK(sparsity_ratio(Matrix(1, 2, {1.0, -2.0})) == 0.0);
  CHECK(sparsity_ratio(Matrix(1, 4, {1.0, 0.0, 0.0, 2.0})) == 0.5);
}

TEST_CASE("source pairing") {
  const auto data = testing::make_dataset(120, 10, {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}},
                                          {{4}, {}, {2, 5, 9}});
  Rng rng(1);
  const auto split = loo_split(data, rng);
  Rng r(9);
  CHECK(pair_source_item(0, split, r, PairingMode::kTrain) == 4);
  CHECK(pair_source_item(0, split, r, PairingMode::kEval) == 4);
  CHECK(pair_source_item(1, split, r, PairingMode::kTrain) == kNoItem);
  CHECK(pair_source_item(2, split, r, PairingMode::kEval) == 2);
  CHECK(pair_source_item(2, split, r, PairingMode::kEval) == 2);
  std::set<Index> drawn;
  for (int k = 0; k < 200; ++k) drawn.insert(pair_source_item(2, split, r, PairingMode::kTrain));
  CHECK(drawn == std::set<Index>{2, 5, 9});

  Rng init(3);
  ModelConfig mc;
  mc.embedding_dim = 2;
  mc.hidden_widths = {4, 2};
  const Model model(mc, {3, 120, 10}, init);
  const double p = model.predict_target(1, 0, kNoItem);
  CHECK(std::isfinite(p));
  CHECK(p > 0.0);
  CHECK(p < 1.0);
}

TEST_CASE("a source batch leaves target-specific parameters untouched") {
  const auto split = small_split();
  for (auto arch : {Architecture::kMlpPlusPlus, Architecture::kCsn, Architecture::kCoNet}) {
    Rng rng(5);
    Model model(small_config(arch), shape_of(split), rng);
    const Parameters before = model.params();
    Trainer trainer(model, split, small_train());
    Rng brng(6);
    trainer.train_batch(Domain::kSource, sample_training_batch(split, Domain::kSource, 32, 1, brng));
    CHECK(model.params().target == before.target);
    CHECK_FALSE(model.params().source == before.source);
    CHECK(trainer.adam().t == 1);

    Rng trng(7);
    trainer.train_batch(Domain::kTarget, sample_training_batch(split, Domain::kTarget, 32, 1, trng));
    const Parameters mid = model.params();
    CHECK(trainer.adam().t == 2);
    CHECK_FALSE(mid.target == before.target);
  }
}

TEST_CASE("train_epoch counts one optimizer step per batch") {
  const auto split = small_split();
  Rng rng(5);
  Model model(small_config(Architecture::kCoNet), shape_of(split), rng);
  const TrainConfig config = small_train();
  Trainer trainer(model, split, config);
  const BatchSampler t(split.train.target, Domain::kTarget, 32, 1, Rng(1));
  const BatchSampler s(split.train.source, Domain::kSource, 32, 1, Rng(1));
  const std::size_t rounds = std::max(t.batches_per_epoch(), s.batches_per_epoch());
  const EpochStats stats = trainer.train_epoch();
  CHECK(trainer.adam().t == 2 * rounds);
  CHECK(stats.epoch == 1);
  CHECK(stats.h_zero_ratios.size() == 2);
  CHECK(stats.penalty == doctest::Approx(lasso_penalty(model.params().transfer, 0.1)));

  Rng rng2(5);
  Model mlp(small_config(Architecture::kMlp), shape_of(split), rng2);
  Trainer mlp_trainer(mlp, split, config);
  mlp_trainer.train_epoch();
  CHECK(mlp_trainer.adam().t == t.batches_per_epoch());
}

TEST_CASE("large lambda zeroes every transfer matrix") {
  const auto split = small_split();
  Rng rng(5);
  Model model(small_config(Architecture::kCoNet, 10.0), shape_of(split), rng);
  Trainer trainer(model, split, small_train());
  const EpochStats stats = trainer.train_epoch();
  for (double r : stats.h_zero_ratios) CHECK(r == 1.0);
}

TEST_CASE("lambda zero applies no thresholding") {
  const auto split = small_split();
  Rng rng(5);
  Model model(small_config(Architecture::kCoNet, 0.0), shape_of(split), rng);
  Trainer trainer(model, split, small_train());
  const EpochStats stats = trainer.train_epoch();
  for (double r : stats.h_zero_ratios) CHECK(r < 0.01);
  CHECK(stats.penalty == 0.0);
}

TEST_CASE("non-finite loss stops training") {
  const auto split = small_split();
  Rng rng(5);
  Model model(small_config(Architecture::kMlp), shape_of(split), rng);
  model.mutable_params().target.tower.output[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer trainer(model, split, small_train());
  CHECK_THROWS_AS(trainer.train_epoch(), NumericError);
}

TEST_CASE("fit") {
  const auto split = small_split();
  Rng rng(5);
  const Model initial(small_config(Architecture::kCoNet), shape_of(split), rng);

  const FitResult none = fit(initial, split, small_train(0));
  CHECK(none.history.empty());
  CHECK(none.model.params() == initial.params());
  CHECK(none.best_epoch == 0);

  const FitResult a = fit(initial, split, small_train(3));
  const FitResult b = fit(initial, split, small_train(3));
  CHECK(a.history == b.history);
  CHECK(a.model.params() == b.model.params());
  CHECK(a.history.size() <= 3);
  CHECK(a.best_epoch >= 1);
  double best = -1.0;
  for (const auto& s : a.history) best = std::max(best, s.val_ndcg);
  CHECK(a.history[a.best_epoch - 1].val_ndcg == best);

  TrainConfig bad = small_train();
  bad.batch_size = 0;
  CHECK_THROWS_AS(fit(initial, split, bad), ConfigError);
}

TEST_CASE("shape mismatch between model and split") {
  const auto split = small_split();
  Rng rng(5);
  Model model(small_config(Architecture::kCoNet), {3, 4, 5}, rng);
  CHECK_THROWS_AS(Trainer(model, split, small_train()), ConfigError);
}

TEST_CASE("history JSONL round-trip") {
  testing::TempDir dir("history");
  std::vector<EpochStats> h(2);
  h[0] = {1, 0.69, 0.68, 0.5, 0.2, 0.1, 0.08, {0.0, 0.25, 1.0}};
  h[1] = {2, 0.5, 0.4, 0.3, 0.3, 0.15, 0.1, {0.1, 0.5, 1.0}};
  write_history((dir / "h.jsonl").string(), h);
  CHECK(read_history((dir / "h.jsonl").string()) == h);
  CHECK(epoch_stats_json(h[0]).rfind("{\"epoch\":1,\"loss_target\"", 0) == 0);
  testing::write_text(dir / "bad.jsonl", "{\"epoch\": 1}\n");
  CHECK_THROWS_AS(read_history((dir / "bad.jsonl").string()), DataError);
}
