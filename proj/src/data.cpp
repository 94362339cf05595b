#include "conet/data.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "conet/error.hpp"
#include "conet/numerics.hpp"

namespace conet {

const char* domain_name(Domain d) { return d == Domain::kTarget ? "target" : "source"; }

InteractionDataset::InteractionDataset(std::size_t num_users, std::size_t num_items,
                                       const std::vector<std::pair<Index, Index>>& pairs)
    : num_items_(num_items), adjacency_(num_users) {
  for (const auto& [u, i] : pairs) {
    if (u >= num_users || i >= num_items) {
      throw DataError("interaction (" + std::to_string(u) + ", " + std::to_string(i) +
                      ") out of range for " + std::to_string(num_users) + "x" +
                      std::to_string(num_items));
    }
    adjacency_[u].push_back(i);
  }
  for (auto& items : adjacency_) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    num_interactions_ += items.size();
  }
}

double InteractionDataset::density() const {
  if (num_users() == 0 || num_items_ == 0) return 0.0;
  return static_cast<double>(num_interactions_) /
         (static_cast<double>(num_users()) * static_cast<double>(num_items_));
}

bool InteractionDataset::contains(std::size_t u, Index item) const {
  const auto& items = adjacency_[u];
  return std::binary_search(items.begin(), items.end(), item);
}

std::vector<std::pair<Index, Index>> InteractionDataset::pairs() const {
  std::vector<std::pair<Index, Index>> out;
  out.reserve(num_interactions_);
  for (std::size_t u = 0; u < adjacency_.size(); ++u) {
    for (Index i : adjacency_[u]) out.emplace_back(static_cast<Index>(u), i);
  }
  return out;
}

namespace {

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

}  // namespace

LabeledDataset load_interactions(const std::filesystem::path& path,
                                 std::size_t min_user_interactions) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::vector<std::pair<std::string, std::string>> lines;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim_cr(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected <user>\\t<item>");
    }
    const auto user = line.substr(0, tab);
    auto item = line.substr(tab + 1);
    if (const auto next = item.find('\t'); next != std::string_view::npos) {
      item = item.substr(0, next);
    }
    if (user.empty() || item.empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty user or item id");
    }
    lines.emplace_back(std::string(user), std::string(item));
  }

  // Distinct items per user decide who survives the filter.
  std::unordered_map<std::string, std::unordered_set<std::string>> per_user;
  for (const auto& [u, i] : lines) per_user[u].insert(i);

  LabeledDataset out;
  std::unordered_map<std::string, Index> user_index;
  std::unordered_map<std::string, Index> item_index;
  std::vector<std::pair<Index, Index>> pairs;
  for (const auto& [u, i] : lines) {
    if (per_user[u].size() < min_user_interactions) continue;
    auto [uit, new_user] = user_index.try_emplace(u, static_cast<Index>(out.user_ids.size()));
    if (new_user) out.user_ids.push_back(u);
    auto [iit, new_item] = item_index.try_emplace(i, static_cast<Index>(out.item_ids.size()));
    if (new_item) out.item_ids.push_back(i);
    pairs.emplace_back(uit->second, iit->second);
  }
  if (pairs.empty()) throw DataError(path.string() + ": no interactions after filtering");
  out.data = InteractionDataset(out.user_ids.size(), out.item_ids.size(), pairs);
  return out;
}

void write_interactions(const std::filesystem::path& path, const LabeledDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t u = 0; u < dataset.data.num_users(); ++u) {
    for (Index i : dataset.data.items_of(u)) {
      out << dataset.user_ids[u] << '\t' << dataset.item_ids[i] << '\n';
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

namespace {

// Restricts `in` to the given users (new index -> old index) and compacts
// items to the ones still referenced, preserving their relative order.
InteractionDataset restrict_users(const InteractionDataset& in,
                                  const std::vector<Index>& old_users,
                                  const std::vector<std::string>& item_ids,
                                  std::vector<std::string>& kept_item_ids) {
  std::vector<char> used(in.num_items(), 0);
  for (Index u : old_users) {
    for (Index i : in.items_of(u)) used[i] = 1;
  }
  std::vector<Index> remap(in.num_items(), kNoItem);
  kept_item_ids.clear();
  for (std::size_t i = 0; i < used.size(); ++i) {
    if (!used[i]) continue;
    remap[i] = static_cast<Index>(kept_item_ids.size());
    kept_item_ids.push_back(item_ids[i]);
  }
  std::vector<std::pair<Index, Index>> pairs;
  for (std::size_t nu = 0; nu < old_users.size(); ++nu) {
    for (Index i : in.items_of(old_users[nu])) pairs.emplace_back(static_cast<Index>(nu), remap[i]);
  }
  return InteractionDataset(old_users.size(), kept_item_ids.size(), pairs);
}

}  // namespace

CrossDomainDataset align_domains(const LabeledDataset& target, const LabeledDataset& source) {
  if (target.data.num_interactions() == 0 || source.data.num_interactions() == 0) {
    throw DataError("align_domains: empty domain");
  }
  std::unordered_map<std::string, Index> source_users;
  for (std::size_t u = 0; u < source.user_ids.size(); ++u) {
    source_users.emplace(source.user_ids[u], static_cast<Index>(u));
  }
  std::vector<Index> target_old, source_old;
  CrossDomainDataset out;
  for (std::size_t u = 0; u < target.user_ids.size(); ++u) {
    const auto it = source_users.find(target.user_ids[u]);
    if (it == source_users.end()) continue;
    target_old.push_back(static_cast<Index>(u));
    source_old.push_back(it->second);
    out.user_ids.push_back(target.user_ids[u]);
  }
  if (out.user_ids.empty()) throw DataError("align_domains: no shared users between domains");
  out.target = restrict_users(target.data, target_old, target.item_ids, out.target_item_ids);
  out.source = restrict_users(source.data, source_old, source.item_ids, out.source_item_ids);
  return out;
}

CrossDomainDataset first_users(const CrossDomainDataset& data, std::size_t max_users) {
  if (max_users == 0 || max_users >= data.num_users()) return data;
  std::vector<Index> keep(max_users);
  for (std::size_t u = 0; u < max_users; ++u) keep[u] = static_cast<Index>(u);
  CrossDomainDataset out;
  out.user_ids.assign(data.user_ids.begin(), data.user_ids.begin() + static_cast<std::ptrdiff_t>(max_users));
  out.target = restrict_users(data.target, keep, data.target_item_ids, out.target_item_ids);
  out.source = restrict_users(data.source, keep, data.source_item_ids, out.source_item_ids);
  return out;
}

std::vector<std::size_t> LooSplit::evaluated_users() const {
  std::vector<std::size_t> users;
  for (std::size_t u = 0; u < test.size(); ++u) {
    if (test[u]) users.push_back(u);
  }
  return users;
}

bool LooSplit::target_interacted(std::size_t u, Index item) const {
  return train.target.contains(u, item) || validation[u] == item || test[u] == item;
}

std::vector<Index> sample_eval_negatives(const LooSplit& split, std::size_t user, Rng& rng) {
  const std::size_t n = split.train.target.num_items();
  std::vector<Index> eligible;
  eligible.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!split.target_interacted(user, static_cast<Index>(i))) {
      eligible.push_back(static_cast<Index>(i));
    }
  }
  if (eligible.size() < kEvalNegatives) {
    throw DataError("user " + std::to_string(user) + " has only " +
                    std::to_string(eligible.size()) + " non-interacted target items; need " +
                    std::to_string(kEvalNegatives));
  }
  // Partial Fisher-Yates: the first 99 slots become a uniform sample.
  for (std::size_t k = 0; k < kEvalNegatives; ++k) {
    const std::size_t j = k + rng.uniform_index(eligible.size() - k);
    std::swap(eligible[k], eligible[j]);
  }
  eligible.resize(kEvalNegatives);
  return eligible;
}

LooSplit loo_split(const CrossDomainDataset& data, Rng& rng) {
  const std::size_t m = data.num_users();
  LooSplit split;
  split.validation.assign(m, std::nullopt);
  split.test.assign(m, std::nullopt);
  split.eval_negatives.assign(m, {});

  std::vector<std::pair<Index, Index>> train_pairs;
  for (std::size_t u = 0; u < m; ++u) {
    std::vector<Index> items = data.target.items_of(u);
    if (items.size() >= kMinEvaluatedInteractions) {
      const std::size_t t = rng.uniform_index(items.size());
      split.test[u] = items[t];
      items.erase(items.begin() + static_cast<std::ptrdiff_t>(t));
      const std::size_t v = rng.uniform_index(items.size());
      split.validation[u] = items[v];
      items.erase(items.begin() + static_cast<std::ptrdiff_t>(v));
    }
    for (Index i : items) train_pairs.emplace_back(static_cast<Index>(u), i);
  }
  split.train = data;
  split.train.target = InteractionDataset(m, data.target.num_items(), train_pairs);
  for (std::size_t u = 0; u < m; ++u) {
    if (split.test[u]) split.eval_negatives[u] = sample_eval_negatives(split, u, rng);
  }
  return split;
}

Index sample_negative_item(const InteractionDataset& train, std::size_t user, Rng& rng) {
  const std::size_t n = train.num_items();
  const auto& items = train.items_of(user);
  if (items.size() >= n) {
    throw DataError("user " + std::to_string(user) + " interacted with every item");
  }
  // Rejection sampling is uniform over the complement and fast when sparse.
  if (items.size() * 2 <= n) {
    for (;;) {
      const auto j = static_cast<Index>(rng.uniform_index(n));
      if (!std::binary_search(items.begin(), items.end(), j)) return j;
    }
  }
  // Dense users: pick the k-th non-interacted item directly.
  std::size_t k = rng.uniform_index(n - items.size());
  Index candidate = 0;
  for (Index taken : items) {
    if (candidate + k < taken) break;
    k -= taken - candidate;
    candidate = taken + 1;
  }
  return static_cast<Index>(candidate + k);
}

BatchSampler::BatchSampler(const InteractionDataset& train, Domain domain,
                           std::size_t batch_size, std::size_t negative_ratio, Rng rng)
    : train_(&train),
      domain_(domain),
      batch_size_(batch_size),
      negative_ratio_(negative_ratio),
      rng_(std::move(rng)),
      positives_(train.pairs()) {
  if (batch_size_ == 0) throw ConfigError("batch_size must be at least 1");
}

std::size_t BatchSampler::batches_per_epoch() const {
  return (positives_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<TrainingExample> BatchSampler::next() {
  std::vector<TrainingExample> batch;
  if (positives_.empty()) return batch;
  if (cursor_ == 0) rng_.shuffle(positives_.begin(), positives_.end());
  const std::size_t take = std::min(batch_size_, positives_.size() - cursor_);
  batch.reserve(take * (1 + negative_ratio_));
  for (std::size_t k = 0; k < take; ++k) {
    const auto [u, i] = positives_[cursor_ + k];
    batch.push_back({u, i, 1, domain_});
    for (std::size_t r = 0; r < negative_ratio_; ++r) {
      batch.push_back({u, sample_negative_item(*train_, u, rng_), 0, domain_});
    }
  }
  cursor_ += take;
  if (cursor_ == positives_.size()) cursor_ = 0;
  return batch;
}

std::vector<TrainingExample> sample_training_batch(const LooSplit& split, Domain domain,
                                                   std::size_t batch_size,
                                                   std::size_t negative_ratio, Rng& rng) {
  BatchSampler sampler(split.train.domain(domain), domain, batch_size, negative_ratio,
                       Rng(rng.next_u64()));
  return sampler.next();
}

void SyntheticConfig::validate() const {
  if (num_users == 0 || num_target_items == 0 || num_source_items == 0 || latent_dim == 0) {
    throw ConfigError("synthetic: counts must be positive");
  }
  if (!(relatedness >= 0.0 && relatedness <= 1.0)) {
    throw ConfigError("synthetic: relatedness must lie in [0, 1]");
  }
  const auto check = [](double density, std::size_t n, const char* name) {
    if (!(density > 0.0 && density < 1.0)) {
      throw ConfigError(std::string("synthetic: ") + name + " density must lie in (0, 1)");
    }
    const double wanted = density * static_cast<double>(n);
    const double got = std::max(1.0, std::round(wanted));
    if (std::abs(got - wanted) > 0.05 * wanted || got >= static_cast<double>(n)) {
      throw ConfigError(std::string("synthetic: ") + name + " density " +
                        std::to_string(density) + " is not achievable within 5% on " +
                        std::to_string(n) + " items");
    }
  };
  check(target_density, num_target_items, "target");
  check(source_density, num_source_items, "source");
}

std::size_t SyntheticConfig::target_per_user() const {
  return static_cast<std::size_t>(
      std::max(1.0, std::round(target_density * static_cast<double>(num_target_items))));
}

std::size_t SyntheticConfig::source_per_user() const {
  return static_cast<std::size_t>(
      std::max(1.0, std::round(source_density * static_cast<double>(num_source_items))));
}

namespace {

// Item factors are keyed by the domain's own shape so that exchanging the
// target and source configurations mirrors the generated dataset.
std::uint64_t item_stream_key(std::size_t n, double density) {
  std::uint64_t bits = 0;
  static_assert(sizeof bits == sizeof density);
  std::memcpy(&bits, &density, sizeof bits);
  return mix_seed(mix_seed(n) ^ bits);
}

std::vector<std::pair<Index, Index>> top_items(const Matrix& users, const Matrix& items,
                                               std::size_t per_user) {
  std::vector<std::pair<Index, Index>> pairs;
  std::vector<Index> order(items.rows());
  std::vector<double> scores(items.rows());
  for (std::size_t u = 0; u < users.rows(); ++u) {
    for (std::size_t i = 0; i < items.rows(); ++i) scores[i] = dot(users.row(u), items.row(i));
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_user),
                      order.end(), [&](Index a, Index b) {
                        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                      });
    for (std::size_t k = 0; k < per_user; ++k) pairs.emplace_back(static_cast<Index>(u), order[k]);
  }
  return pairs;
}

// Item factors on the unit sphere: no item is popular by construction.
Matrix unit_rows(Matrix m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double norm = std::sqrt(dot(row, row));
    if (norm > 0.0) {
      for (double& x : row) x /= norm;
    }
  }
  return m;
}

// Relabels items by first appearance in a user-major, item-ascending walk.
InteractionDataset canonical_items(const InteractionDataset& in) {
  std::vector<Index> remap(in.num_items(), kNoItem);
  Index next = 0;
  for (std::size_t u = 0; u < in.num_users(); ++u) {
    for (Index i : in.items_of(u)) {
      if (remap[i] == kNoItem) remap[i] = next++;
    }
  }
  for (auto& r : remap) {
    if (r == kNoItem) r = next++;
  }
  std::vector<std::pair<Index, Index>> pairs;
  for (const auto& [u, i] : in.pairs()) pairs.emplace_back(u, remap[i]);
  return InteractionDataset(in.num_users(), in.num_items(), pairs);
}

}  // namespace

CrossDomainDataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const std::size_t m = config.num_users;
  const std::size_t k = config.latent_dim;
  Rng root(config.seed);
  Rng user_rng = root.derive(1);
  Rng other_rng = root.derive(2);
  Rng target_items_rng =
      root.derive(item_stream_key(config.num_target_items, config.target_density));
  Rng source_items_rng =
      root.derive(item_stream_key(config.num_source_items, config.source_density));

  const Matrix shared = gaussian_init(m, k, user_rng, 1.0);
  const Matrix independent = gaussian_init(m, k, other_rng, 1.0);
  Matrix source_users(m, k);
  const double rho = config.relatedness;
  for (std::size_t i = 0; i < source_users.size(); ++i) {
    source_users.values()[i] = rho * shared.values()[i] + (1.0 - rho) * independent.values()[i];
  }
  const Matrix target_items = unit_rows(gaussian_init(config.num_target_items, k, target_items_rng, 1.0));
  const Matrix source_items = unit_rows(gaussian_init(config.num_source_items, k, source_items_rng, 1.0));

  CrossDomainDataset out;
  out.target = canonical_items(InteractionDataset(
      m, config.num_target_items, top_items(shared, target_items, config.target_per_user())));
  out.source = canonical_items(InteractionDataset(
      m, config.num_source_items, top_items(source_users, source_items, config.source_per_user())));
  for (std::size_t u = 0; u < m; ++u) out.user_ids.push_back("u" + std::to_string(u));
  for (std::size_t i = 0; i < config.num_target_items; ++i) {
    out.target_item_ids.push_back("t" + std::to_string(i));
  }
  for (std::size_t i = 0; i < config.num_source_items; ++i) {
    out.source_item_ids.push_back("s" + std::to_string(i));
  }
  return out;
}

ReductionResult reduce_training(const LooSplit& split, std::size_t per_user_removal, Rng& rng) {
  ReductionResult result{split, 0, 0.0};
  if (per_user_removal == 0) return result;
  const auto& target = split.train.target;
  std::vector<std::pair<Index, Index>> kept;
  for (std::size_t u = 0; u < target.num_users(); ++u) {
    std::vector<Index> items = target.items_of(u);
    const std::size_t removable = items.empty() ? 0 : items.size() - 1;
    const std::size_t remove = std::min(per_user_removal, removable);
    for (std::size_t r = 0; r < remove; ++r) {
      const std::size_t j = r + rng.uniform_index(items.size() - r);
      std::swap(items[r], items[j]);
    }
    for (std::size_t k = remove; k < items.size(); ++k) kept.emplace_back(static_cast<Index>(u), items[k]);
    result.removed += remove;
  }
  result.split.train.target = InteractionDataset(target.num_users(), target.num_items(), kept);
  if (target.num_interactions() > 0) {
    result.removed_percent = 100.0 * static_cast<double>(result.removed) /
                             static_cast<double>(target.num_interactions());
  }
  return result;
}

std::string split_manifest_json(const LooSplit& split) {
  nlohmann::ordered_json j;
  j["num_users"] = split.train.num_users();
  j["num_target_items"] = split.train.target.num_items();
  nlohmann::ordered_json test = nlohmann::ordered_json::object();
  nlohmann::ordered_json validation = nlohmann::ordered_json::object();
  nlohmann::ordered_json negatives = nlohmann::ordered_json::object();
  for (std::size_t u : split.evaluated_users()) {
    const std::string key = std::to_string(u);
    test[key] = *split.test[u];
    validation[key] = *split.validation[u];
    negatives[key] = split.eval_negatives[u];
  }
  j["test"] = std::move(test);
  j["validation"] = std::move(validation);
  j["eval_negatives"] = std::move(negatives);
  return j.dump();
}

void write_split_manifest(const std::filesystem::path& path, const LooSplit& split) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << split_manifest_json(split) << '\n';
}

LooSplit split_from_manifest_json(const std::string& text, const CrossDomainDataset& full) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("split manifest: ") + e.what());
  }
  const std::size_t m = full.num_users();
  const std::size_t n = full.target.num_items();
  try {
    if (j.at("num_users").get<std::size_t>() != m ||
        j.at("num_target_items").get<std::size_t>() != n) {
      throw DataError("split manifest does not match dataset shape");
    }
    LooSplit split;
    split.validation.assign(m, std::nullopt);
    split.test.assign(m, std::nullopt);
    split.eval_negatives.assign(m, {});
    for (const auto& [key, value] : j.at("test").items()) {
      const std::size_t u = std::stoul(key);
      if (u >= m) throw DataError("split manifest: user " + key + " out of range");
      split.test[u] = value.get<Index>();
      split.validation[u] = j.at("validation").at(key).get<Index>();
      split.eval_negatives[u] = j.at("eval_negatives").at(key).get<std::vector<Index>>();
      const auto& items = full.target.items_of(u);
      for (Index held : {*split.test[u], *split.validation[u]}) {
        if (!std::binary_search(items.begin(), items.end(), held)) {
          throw DataError("split manifest: held-out item not interacted by user " + key);
        }
      }
      if (split.eval_negatives[u].size() != kEvalNegatives) {
        throw DataError("split manifest: user " + key + " needs 99 negatives");
      }
    }
    std::vector<std::pair<Index, Index>> train_pairs;
    for (const auto& [u, i] : full.target.pairs()) {
      if (split.test[u] == i || split.validation[u] == i) continue;
      train_pairs.emplace_back(u, i);
    }
    split.train = full;
    split.train.target = InteractionDataset(m, n, train_pairs);
    return split;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("split manifest: ") + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(std::string("split manifest: ") + e.what());
  }
}

LooSplit read_split_manifest(const std::filesystem::path& path, const CrossDomainDataset& full) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return split_from_manifest_json(buffer.str(), full);
}

std::uint64_t split_fingerprint(const LooSplit& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto feed = [&h](std::string_view bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  feed(split_manifest_json(split));
  feed(std::to_string(split.train.target.num_interactions()));
  feed(std::to_string(split.train.source.num_users()) + "x" +
       std::to_string(split.train.source.num_items()) + ":" +
       std::to_string(split.train.source.num_interactions()));
  return h;
}

}  // namespace conet
