#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "conet/data.hpp"
#include "conet/error.hpp"
#include "test_support.hpp"

using namespace conet;
using conet::testing::make_dataset;
using conet::testing::TempDir;
using conet::testing::write_text;

namespace {

LabeledDataset labeled(const std::vector<std::pair<std::string, std::string>>& rows) {
  TempDir dir("labeled");
  std::string text;
  for (const auto& [u, i] : rows) text += u + "\t" + i + "\n";
  write_text(dir / "d.tsv", text);
  return load_interactions(dir / "d.tsv", 1);
}

std::vector<std::vector<Index>> ranges(const std::vector<std::size_t>& counts, Index offset = 0) {
  std::vector<std::vector<Index>> out;
  for (std::size_t c : counts) {
    std::vector<Index> items;
    for (std::size_t k = 0; k < c; ++k) items.push_back(static_cast<Index>(offset + k));
    out.push_back(items);
  }
  return out;
}

}  // namespace

TEST_CASE("InteractionDataset deduplicates and validates") {
  const InteractionDataset d(2, 3, {{0, 2}, {0, 1}, {0, 2}, {1, 0}});
  CHECK(d.num_interactions() == 3);
  CHECK(d.items_of(0) == std::vector<Index>{1, 2});
  CHECK(d.contains(1, 0));
  CHECK_FALSE(d.contains(1, 1));
  CHECK(d.density() == doctest::Approx(0.5));
  CHECK_THROWS_AS(InteractionDataset(2, 3, {{0, 3}}), DataError);
  CHECK_THROWS_AS(InteractionDataset(2, 3, {{2, 0}}), DataError);
}

TEST_CASE("load_interactions") {
  TempDir dir("load");
  SUBCASE("duplicate lines collapse") {
    write_text(dir / "a.tsv", "a\tx\na\tx\na\ty\n");
    const auto d = load_interactions(dir / "a.tsv", 1);
    CHECK(d.data.num_users() == 1);
    CHECK(d.data.num_items() == 2);
    CHECK(d.data.num_interactions() == 2);
  }
  SUBCASE("empty file is an error") {
    write_text(dir / "e.tsv", "");
    CHECK_THROWS_AS(load_interactions(dir / "e.tsv"), DataError);
  }
  SUBCASE("density of a five-line fixture") {
    write_text(dir / "f.tsv", "# user\titem\na\tx\nb\ty\na\tz\n\nb\ty\textra\n");
    const auto d = load_interactions(dir / "f.tsv", 1);
    CHECK(d.data.num_users() == 2);
    CHECK(d.data.num_items() == 3);
    CHECK(d.data.density() == doctest::Approx(0.5));
    CHECK(d.user_ids == std::vector<std::string>{"a", "b"});
    CHECK(d.item_ids == std::vector<std::string>{"x", "y", "z"});
  }
  SUBCASE("malformed line reports its number") {
    write_text(dir / "m.tsv", "a\tx\nnot-a-pair\n");
    try {
      load_interactions(dir / "m.tsv", 1);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
  }
  SUBCASE("users below the interaction floor are dropped first") {
    write_text(dir / "g.tsv", "cold\tq\na\tx\na\ty\na\tz\ncold\tq\n");
    const auto d = load_interactions(dir / "g.tsv", 3);
    CHECK(d.user_ids == std::vector<std::string>{"a"});
    CHECK(d.item_ids == std::vector<std::string>{"x", "y", "z"});
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_interactions(dir / "absent.tsv"), DataError);
  }
}

TEST_CASE("write then load round-trips") {
  TempDir dir("roundtrip");
  const auto original = labeled({{"b", "y"}, {"a", "x"}, {"b", "x"}, {"a", "z"}});
  write_interactions(dir / "out.tsv", original);
  const auto back = load_interactions(dir / "out.tsv", 1);
  CHECK(back.data.pairs().size() == original.data.pairs().size());
  for (const auto& [u, i] : original.data.pairs()) {
    const auto& uid = original.user_ids[u];
    const auto& iid = original.item_ids[i];
    const auto bu = std::find(back.user_ids.begin(), back.user_ids.end(), uid) - back.user_ids.begin();
    const auto bi = std::find(back.item_ids.begin(), back.item_ids.end(), iid) - back.item_ids.begin();
    CHECK(back.data.contains(static_cast<std::size_t>(bu), static_cast<Index>(bi)));
  }
}

TEST_CASE("align_domains") {
  const auto t = labeled({{"a", "x"}, {"b", "x"}, {"c", "y"}});
  const auto s = labeled({{"b", "p"}, {"c", "q"}, {"d", "p"}});
  const auto d = align_domains(t, s);
  CHECK(d.num_users() == 2);
  CHECK(d.source.num_users() == 2);
  CHECK(d.user_ids == std::vector<std::string>{"b", "c"});

  CHECK(align_domains(t, t).num_users() == 3);
  const auto disjoint = labeled({{"z", "p"}});
  CHECK_THROWS_AS(align_domains(t, disjoint), DataError);
}

TEST_CASE("loo_split protocol") {
  const auto data = make_dataset(120, 4, ranges({10, 2, 3}), ranges({1, 1, 0}));
  Rng rng(3);
  const LooSplit split = loo_split(data, rng);
  CHECK(split.train.target.items_of(0).size() == 8);
  CHECK(split.test[0].has_value());
  CHECK(split.validation[0].has_value());
  CHECK(*split.test[0] != *split.validation[0]);
  CHECK_FALSE(split.train.target.contains(0, *split.test[0]));
  CHECK_FALSE(split.train.target.contains(0, *split.validation[0]));

  CHECK(split.train.target.items_of(1).size() == 2);
  CHECK_FALSE(split.is_evaluated(1));
  CHECK(split.eval_negatives[1].empty());
  CHECK(split.train.target.items_of(2).size() == 1);
  CHECK(split.evaluated_users() == std::vector<std::size_t>{0, 2});
  CHECK(split.train.source == data.source);

  for (std::size_t u : split.evaluated_users()) {
    const auto& neg = split.eval_negatives[u];
    CHECK(neg.size() == kEvalNegatives);
    CHECK(std::set<Index>(neg.begin(), neg.end()).size() == kEvalNegatives);
    for (Index j : neg) CHECK_FALSE(data.target.contains(u, j));
  }

  Rng again(3);
  CHECK(loo_split(data, again) == split);
}

TEST_CASE("loo_split partitions each evaluated user's history") {
  Rng gen(17);
  std::vector<std::vector<Index>> target;
  for (int u = 0; u < 40; ++u) {
    std::set<Index> items;
    const std::size_t count = 1 + gen.uniform_index(12);
    while (items.size() < count) items.insert(static_cast<Index>(gen.uniform_index(150)));
    target.emplace_back(items.begin(), items.end());
  }
  const auto data = make_dataset(150, 3, target, std::vector<std::vector<Index>>(40, {0}));
  Rng rng(8);
  const auto split = loo_split(data, rng);
  for (std::size_t u = 0; u < 40; ++u) {
    std::vector<Index> rebuilt = split.train.target.items_of(u);
    if (split.is_evaluated(u)) {
      rebuilt.push_back(*split.test[u]);
      rebuilt.push_back(*split.validation[u]);
    }
    std::sort(rebuilt.begin(), rebuilt.end());
    CHECK(rebuilt == data.target.items_of(u));
    CHECK(std::adjacent_find(rebuilt.begin(), rebuilt.end()) == rebuilt.end());
  }
}

TEST_CASE("sample_eval_negatives") {
  SUBCASE("forced complement") {
    const auto data = make_dataset(100, 1, {{42}}, {{0}});
    Rng rng(1);
    LooSplit split = loo_split(data, rng);
    auto neg = sample_eval_negatives(split, 0, rng);
    std::sort(neg.begin(), neg.end());
    std::vector<Index> expected;
    for (Index j = 0; j < 100; ++j) {
      if (j != 42) expected.push_back(j);
    }
    CHECK(neg == expected);
  }
  SUBCASE("too few items") {
    const auto data = make_dataset(50, 1, {{0, 1, 2}}, {{0}});
    Rng rng(1);
    CHECK_THROWS_AS(loo_split(data, rng), DataError);
  }
  SUBCASE("deterministic") {
    const auto data = make_dataset(300, 1, {{3, 9, 27}}, {{0}});
    Rng a(4), b(4);
    const auto sa = loo_split(data, a);
    const auto sb = loo_split(data, b);
    Rng x(12), y(12);
    CHECK(sample_eval_negatives(sa, 0, x) == sample_eval_negatives(sb, 0, y));
  }
}

TEST_CASE("sample_training_batch") {
  std::vector<std::vector<Index>> target;
  for (Index u = 0; u < 60; ++u) target.push_back({u, static_cast<Index>(u + 60), static_cast<Index>(u + 120)});
  const auto data = make_dataset(200, 5, target, std::vector<std::vector<Index>>(60, {1, 2, 3}));
  Rng rng(6);
  const auto split = loo_split(data, rng);

  const auto batch = sample_training_batch(split, Domain::kSource, 128, 1, rng);
  CHECK(batch.size() == 256);
  CHECK(std::count_if(batch.begin(), batch.end(), [](const auto& e) { return e.label == 1; }) == 128);
  for (const auto& e : batch) {
    CHECK(e.domain == Domain::kSource);
    CHECK(split.train.source.contains(e.user, e.item) == (e.label == 1));
  }

  const auto positives = sample_training_batch(split, Domain::kSource, 16, 0, rng);
  CHECK(positives.size() == 16);
  for (const auto& e : positives) CHECK(e.label == 1);
}

TEST_CASE("BatchSampler covers every positive once per pass") {
  std::vector<std::vector<Index>> target;
  for (Index u = 0; u < 30; ++u) target.push_back({u, static_cast<Index>(u + 1), static_cast<Index>(u + 2), static_cast<Index>(u + 3)});
  const auto data = make_dataset(140, 1, target, std::vector<std::vector<Index>>(30, {0}));
  Rng rng(2);
  const auto split = loo_split(data, rng);
  BatchSampler sampler(split.train.target, Domain::kTarget, 7, 2, Rng(5));
  CHECK(sampler.num_positives() == 60);
  CHECK(sampler.batches_per_epoch() == 9);
  std::multiset<std::pair<Index, Index>> seen;
  for (std::size_t b = 0; b < sampler.batches_per_epoch(); ++b) {
    const auto batch = sampler.next();
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto& e = batch[k];
      if (k % 3 == 0) {
        CHECK(e.label == 1);
        seen.insert({e.user, e.item});
      } else {
        CHECK(e.label == 0);
        CHECK(e.user == batch[k - k % 3].user);
        CHECK_FALSE(split.train.target.contains(e.user, e.item));
      }
    }
  }
  const auto pairs = split.train.target.pairs();
  CHECK(seen == std::multiset<std::pair<Index, Index>>(pairs.begin(), pairs.end()));
}

TEST_CASE("sample_negative_item") {
  const InteractionDataset dense(1, 4, {{0, 0}, {0, 1}, {0, 3}});
  Rng rng(1);
  for (int k = 0; k < 20; ++k) CHECK(sample_negative_item(dense, 0, rng) == 2);
  const InteractionDataset full(1, 2, {{0, 0}, {0, 1}});
  CHECK_THROWS_AS(sample_negative_item(full, 0, rng), DataError);
}

TEST_CASE("generate_synthetic") {
  SyntheticConfig config;
  config.num_users = 200;
  config.num_target_items = 400;
  config.num_source_items = 200;
  config.target_density = 0.025;
  config.source_density = 0.05;
  config.seed = 9;
  const auto data = generate_synthetic(config);
  CHECK(data.num_users() == 200);
  CHECK(data.target.num_items() == 400);
  CHECK(std::abs(data.target.density() / 0.025 - 1.0) <= 0.05);
  CHECK(std::abs(data.source.density() / 0.05 - 1.0) <= 0.05);
  for (std::size_t u = 0; u < 200; ++u) {
    CHECK(data.target.items_of(u).size() == 10);
    CHECK(data.source.items_of(u).size() == 10);
  }
  CHECK(generate_synthetic(config) == data);

  SUBCASE("default shape gives ten target items per user") {
    const SyntheticConfig defaults;
    CHECK(defaults.target_per_user() == 10);
    CHECK(defaults.source_per_user() == 15);
  }
  SUBCASE("relatedness changes the source domain only") {
    SyntheticConfig other = config;
    other.relatedness = 0.0;
    const auto unrelated = generate_synthetic(other);
    CHECK(unrelated.target == data.target);
    CHECK_FALSE(unrelated.source == data.source);
  }
  SUBCASE("swapping domain configurations mirrors the data") {
    config.relatedness = 1.0;
    const auto forward = generate_synthetic(config);
    SyntheticConfig swapped = config;
    std::swap(swapped.num_target_items, swapped.num_source_items);
    std::swap(swapped.target_density, swapped.source_density);
    const auto mirrored = generate_synthetic(swapped);
    CHECK(mirrored.target == forward.source);
    CHECK(mirrored.source == forward.target);
  }
  SUBCASE("round-trips through TSV files") {
    TempDir dir("synthetic");
    write_interactions(dir / "t.tsv", {data.target, data.user_ids, data.target_item_ids});
    write_interactions(dir / "s.tsv", {data.source, data.user_ids, data.source_item_ids});
    const auto back = align_domains(load_interactions(dir / "t.tsv"), load_interactions(dir / "s.tsv"));
    CHECK(back.user_ids == data.user_ids);
    // Items nobody interacted with cannot appear in a TSV; the generator
    // numbers used items first, so the loaded vocabulary is a prefix.
    const auto prefix = [](const auto& shorter, const auto& longer) {
      return shorter.size() <= longer.size() &&
             std::equal(shorter.begin(), shorter.end(), longer.begin());
    };
    CHECK(prefix(back.target_item_ids, data.target_item_ids));
    CHECK(prefix(back.source_item_ids, data.source_item_ids));
    CHECK(back.target.pairs() == data.target.pairs());
    CHECK(back.source.pairs() == data.source.pairs());
  }
  SUBCASE("invalid configurations") {
    SyntheticConfig bad = config;
    bad.relatedness = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = config;
    bad.target_density = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = config;
    bad.num_target_items = 10;
    bad.target_density = 0.13;  // 1.3 items per user cannot be matched within 5%
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("reduce_training") {
  std::vector<std::vector<Index>> target;
  for (Index u = 0; u < 20; ++u) {
    std::vector<Index> items;
    for (Index k = 0; k < 3 + u % 4; ++k) items.push_back(static_cast<Index>(k * 20 + u));
    target.push_back(items);
  }
  target.push_back({7});
  const auto data = make_dataset(150, 1, target, std::vector<std::vector<Index>>(21, {0}));
  Rng rng(13);
  const auto split = loo_split(data, rng);

  Rng r0(1);
  const auto none = reduce_training(split, 0, r0);
  CHECK(none.split == split);
  CHECK(none.removed == 0);

  std::size_t previous = split.train.target.num_interactions();
  for (std::size_t level = 1; level <= 3; ++level) {
    Rng r(1);
    const auto reduced = reduce_training(split, level, r);
    const std::size_t size = reduced.split.train.target.num_interactions();
    CHECK(size < previous);
    CHECK(size + reduced.removed == split.train.target.num_interactions());
    CHECK(reduced.removed_percent ==
          doctest::Approx(100.0 * reduced.removed / split.train.target.num_interactions()));
    CHECK(reduced.split.test == split.test);
    CHECK(reduced.split.validation == split.validation);
    CHECK(reduced.split.eval_negatives == split.eval_negatives);
    CHECK(reduced.split.train.source == split.train.source);
    for (std::size_t u = 0; u < 21; ++u) {
      CHECK(reduced.split.train.target.items_of(u).size() >= 1);
      for (Index i : reduced.split.train.target.items_of(u)) CHECK(split.train.target.contains(u, i));
    }
    CHECK(reduced.split.train.target.items_of(20) == std::vector<Index>{7});
    previous = size;
  }
}

TEST_CASE("one removal per user on Mobile-like data is about 2.05 percent") {
  // About 50 target interactions per user, as in the Mobile app domain.
  std::vector<std::vector<Index>> target;
  for (Index u = 0; u < 400; ++u) {
    std::vector<Index> items;
    const Index count = 50 + u % 2;
    for (Index k = 0; k < count; ++k) items.push_back((u * 7 + k * 3) % 600);
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    target.push_back(items);
  }
  const auto data = make_dataset(600, 1, target, std::vector<std::vector<Index>>(400, {0}));
  Rng rng(21);
  const auto split = loo_split(data, rng);
  const auto reduced = reduce_training(split, 1, rng);
  CHECK(reduced.removed == 400);
  CHECK(std::abs(reduced.removed_percent - 2.05) < 0.1);
}

TEST_CASE("split manifest round-trip") {
  SyntheticConfig config;
  config.num_users = 60;
  config.num_target_items = 300;
  config.num_source_items = 100;
  config.target_density = 0.02;
  config.source_density = 0.05;
  const auto data = generate_synthetic(config);
  Rng rng(4);
  const auto split = loo_split(data, rng);
  const std::string json = split_manifest_json(split);
  CHECK(split_from_manifest_json(json, data) == split);
  CHECK(split_manifest_json(split_from_manifest_json(json, data)) == json);

  TempDir dir("manifest");
  write_split_manifest(dir / "split.json", split);
  CHECK(read_split_manifest(dir / "split.json", data) == split);

  Rng other(5);
  const auto different = loo_split(data, other);
  CHECK(split_fingerprint(split) == split_fingerprint(split_from_manifest_json(json, data)));
  CHECK(split_fingerprint(split) != split_fingerprint(different));

  CHECK_THROWS_AS(split_from_manifest_json("{}", data), DataError);
  CHECK_THROWS_AS(split_from_manifest_json("not json", data), DataError);
}

TEST_CASE("first_users keeps a prefix of users and compacts items") {
  const auto data = make_dataset(4, 3, {{0, 3}, {1}, {2}}, {{2}, {0}, {1}});
  const auto capped = first_users(data, 2);
  CHECK(capped.num_users() == 2);
  CHECK(capped.user_ids == std::vector<std::string>{"u0", "u1"});
  CHECK(capped.target_item_ids == std::vector<std::string>{"t0", "t1", "t3"});
  CHECK(capped.target.items_of(0) == std::vector<Index>{0, 2});
  CHECK(capped.source_item_ids == std::vector<std::string>{"s0", "s2"});
  CHECK(capped.source.items_of(0) == std::vector<Index>{1});
  CHECK(first_users(data, 0) == data);
  CHECK(first_users(data, 10) == data);
}
