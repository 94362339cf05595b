#include "conet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <type_traits>

#include <json.hpp>

#include "conet/error.hpp"

namespace conet {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (top_n == 0) throw ConfigError("topN must be positive");
}

AdamConfig adam_config(const TrainConfig& config) {
  return {config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon};
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamConfig& config) {
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = grad[k];
    m[k] = b1 * m[k] + (1.0 - b1) * g;
    v[k] = b2 * v[k] + (1.0 - b2) * g * g;
    const double m_hat = m[k] / correction1;
    const double v_hat = v[k] / correction2;
    theta[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

AdamState AdamState::zeros_for(const Parameters& params) {
  AdamState state;
  state.first_moment = zeros_like(params);
  state.second_moment = zeros_like(params);
  std::size_t tensors = 0;
  for_each_tensor(params, [&](ParamGroup, std::size_t, std::size_t, std::span<const double>) {
    ++tensors;
  });
  state.tensor_steps.assign(tensors, 0);
  return state;
}

namespace {

template <typename T>
struct TensorSlot {
  ParamGroup group;
  std::size_t rows;
  std::size_t cols;
  std::span<T> values;
};

template <typename Params>
auto slots_of(Params& p) {
  using T = std::conditional_t<std::is_const_v<Params>, const double, double>;
  std::vector<TensorSlot<T>> slots;
  for_each_tensor(p, [&](ParamGroup g, std::size_t r, std::size_t c, std::span<T> v) {
    slots.push_back({g, r, c, v});
  });
  return slots;
}

const std::vector<Index>* rows_for(const UpdatePlan& plan, ParamGroup g) {
  switch (g) {
    case ParamGroup::kUserEmbedding: return &plan.user_rows;
    case ParamGroup::kSourceUserEmbedding: return &plan.source_user_rows;
    case ParamGroup::kTargetItems: return &plan.target_item_rows;
    case ParamGroup::kSourceItems: return &plan.source_item_rows;
    default: return nullptr;
  }
}

}  // namespace

void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const AdamConfig& config) {
  adam_step(params, grads, state, config, UpdatePlan{});
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const AdamConfig& config, const UpdatePlan& plan) {
  auto p = slots_of(params);
  auto g = slots_of(grads);
  auto m = slots_of(state.first_moment);
  auto v = slots_of(state.second_moment);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size() ||
      state.tensor_steps.size() != p.size()) {
    throw ConfigError("adam_step: gradient/state layout does not match parameters");
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k].values.size() != p[k].values.size() || m[k].values.size() != p[k].values.size() ||
        v[k].values.size() != p[k].values.size()) {
      throw ConfigError("adam_step: tensor " + std::to_string(k) + " shape mismatch");
    }
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!in_mask(plan.groups, p[k].group)) continue;
    const std::uint64_t step = ++state.tensor_steps[k];
    const auto* rows = rows_for(plan, p[k].group);
    if (rows == nullptr || rows->empty()) {
      adam_update(p[k].values, g[k].values, m[k].values, v[k].values, step, config);
      continue;
    }
    const std::size_t cols = p[k].cols;
    for (Index r : *rows) {
      const std::size_t off = static_cast<std::size_t>(r) * cols;
      adam_update(p[k].values.subspan(off, cols), g[k].values.subspan(off, cols),
                  m[k].values.subspan(off, cols), v[k].values.subspan(off, cols), step, config);
    }
  }
  ++state.t;
}

void proximal_l1(Matrix& h, double threshold) {
  if (threshold <= 0.0) return;
  for (double& x : h.values()) {
    const double magnitude = std::abs(x) - threshold;
    x = magnitude > 0.0 ? std::copysign(magnitude, x) : 0.0;
  }
}

double sparsity_ratio(const Matrix& h) {
  if (h.size() == 0) return 0.0;
  const auto zeros = std::count(h.values().begin(), h.values().end(), 0.0);
  return static_cast<double>(zeros) / static_cast<double>(h.size());
}

double joint_loss(double loss_target, double loss_source, double penalty) {
  return loss_target + loss_source + penalty;
}

Index pair_item(const InteractionDataset& other, std::size_t user, Rng& rng, PairingMode mode) {
  const auto& items = other.items_of(user);
  if (items.empty()) return kNoItem;
  if (mode == PairingMode::kEval) return items.front();
  return items[rng.uniform_index(items.size())];
}

Index pair_source_item(std::size_t user, const LooSplit& split, Rng& rng, PairingMode mode) {
  return pair_item(split.train.source, user, rng, mode);
}

double ModelScorer::score(std::size_t user, Index item) const {
  Index paired = kNoItem;
  if (is_coupled(model_->config().architecture)) {
    const auto& items = source_train_->items_of(user);
    if (!items.empty()) paired = items.front();
  }
  return model_->predict_target(user, item, paired);
}

std::string epoch_stats_json(const EpochStats& s) {
  nlohmann::ordered_json j;
  j["epoch"] = s.epoch;
  j["loss_target"] = s.loss_target;
  j["loss_source"] = s.loss_source;
  j["penalty"] = s.penalty;
  j["val_hr"] = s.val_hr;
  j["val_ndcg"] = s.val_ndcg;
  j["val_mrr"] = s.val_mrr;
  j["h_zero_ratios"] = s.h_zero_ratios;
  return j.dump();
}

void write_history(const std::string& path, std::span<const EpochStats> history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& s : history) out << epoch_stats_json(s) << '\n';
}

std::vector<EpochStats> read_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<EpochStats> history;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EpochStats s;
      s.epoch = j.at("epoch").get<std::size_t>();
      s.loss_target = j.at("loss_target").get<double>();
      s.loss_source = j.at("loss_source").get<double>();
      s.penalty = j.at("penalty").get<double>();
      s.val_hr = j.at("val_hr").get<double>();
      s.val_ndcg = j.at("val_ndcg").get<double>();
      s.val_mrr = j.at("val_mrr").get<double>();
      s.h_zero_ratios = j.at("h_zero_ratios").get<std::vector<double>>();
      history.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  return history;
}

namespace {

// Stream ids for Rng::derive; fixed so runs are reproducible.
constexpr std::uint64_t kTargetStream = 11;
constexpr std::uint64_t kSourceStream = 13;
constexpr std::uint64_t kTargetPairingStream = 17;
constexpr std::uint64_t kSourcePairingStream = 19;

std::vector<Index> unique_rows(std::vector<Index> rows) {
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

void zero_rows(Matrix& m, const std::vector<Index>& rows) {
  for (Index r : rows) {
    auto row = m.row(r);
    std::fill(row.begin(), row.end(), 0.0);
  }
}

void zero_tower(Tower& t) {
  for (auto& w : t.weights) std::fill(w.values().begin(), w.values().end(), 0.0);
  for (auto& b : t.biases) std::fill(b.begin(), b.end(), 0.0);
  std::fill(t.output.begin(), t.output.end(), 0.0);
}

}  // namespace

Trainer::Trainer(Model& model, const LooSplit& split, TrainConfig config)
    : model_(&model),
      split_(&split),
      config_(std::move(config)),
      adam_config_(adam_config(config_)),
      adam_(AdamState::zeros_for(model.params())),
      grads_(zeros_like(model.params())),
      target_sampler_(split.train.target, Domain::kTarget, config_.batch_size,
                      config_.negative_ratio, Rng(config_.seed).derive(kTargetStream)),
      target_pairing_(Rng(config_.seed).derive(kTargetPairingStream)),
      source_pairing_(Rng(config_.seed).derive(kSourcePairingStream)) {
  config_.validate();
  const ModelShape& shape = model.shape();
  if (shape.num_users != split.train.num_users() ||
      shape.num_target_items != split.train.target.num_items() ||
      (has_source_tower(model.config().architecture) &&
       shape.num_source_items != split.train.source.num_items())) {
    throw ConfigError("model shape does not match the training split");
  }
  if (has_source_tower(model.config().architecture)) {
    source_sampler_.emplace(split.train.source, Domain::kSource, config_.batch_size,
                            config_.negative_ratio, Rng(config_.seed).derive(kSourceStream));
  }
}

double Trainer::train_batch(Domain domain, const std::vector<TrainingExample>& batch) {
  if (batch.empty()) return 0.0;
  const Model& model = *model_;
  const Architecture arch = model.config().architecture;
  const bool coupled = is_coupled(arch);
  const bool unshared = !model.params().source_user_embedding.empty();
  const bool is_target = domain == Domain::kTarget;

  UpdatePlan plan;
  plan.groups = 0;
  if (is_target) {
    plan.groups |= mask_of(ParamGroup::kUserEmbedding) | mask_of(ParamGroup::kTargetItems) |
                   mask_of(ParamGroup::kTargetTower);
  } else {
    plan.groups |= mask_of(unshared ? ParamGroup::kSourceUserEmbedding
                                    : ParamGroup::kUserEmbedding) |
                   mask_of(ParamGroup::kSourceItems) | mask_of(ParamGroup::kSourceTower);
  }
  if (arch == Architecture::kCoNet && !config_.freeze_transfer) {
    plan.groups |= mask_of(ParamGroup::kTransfer);
  }
  if (arch == Architecture::kCsn) plan.groups |= mask_of(ParamGroup::kStitch);

  std::vector<Index> users, items;
  users.reserve(batch.size());
  items.reserve(batch.size());
  double total = 0.0;
  for (const TrainingExample& ex : batch) {
    Index target_item = kNoItem;
    Index source_item = kNoItem;
    Labels labels;
    if (is_target) {
      target_item = ex.item;
      if (coupled) {
        source_item = pair_item(split_->train.source, ex.user, target_pairing_, PairingMode::kTrain);
      }
      labels.target = static_cast<double>(ex.label);
    } else {
      source_item = ex.item;
      if (coupled) {
        target_item = pair_item(split_->train.target, ex.user, source_pairing_, PairingMode::kTrain);
      }
      labels.source = static_cast<double>(ex.label);
    }
    const ForwardTrace trace = model.forward(ex.user, target_item, source_item, is_target, !is_target);
    const double loss = Model::loss(trace, labels);
    if (!std::isfinite(loss)) {
      throw NumericError(std::string("non-finite ") + domain_name(domain) + " loss at epoch " +
                         std::to_string(epoch_) + ", optimizer step " + std::to_string(adam_.t + 1) +
                         " (user " + std::to_string(ex.user) + ")");
    }
    total += loss;
    model.backward(trace, labels, grads_, plan.groups);
    users.push_back(ex.user);
    items.push_back(ex.item);
  }

  users = unique_rows(std::move(users));
  items = unique_rows(std::move(items));
  if (is_target) {
    plan.user_rows = users;
    plan.target_item_rows = items;
  } else {
    (unshared ? plan.source_user_rows : plan.user_rows) = users;
    plan.source_item_rows = items;
  }

  Parameters& params = model_->mutable_params();
  adam_step(params, grads_, adam_, adam_config_, plan);
  const double lambda = model.config().lasso_lambda;
  if (in_mask(plan.groups, ParamGroup::kTransfer) && lambda > 0.0) {
    for (Matrix& h : params.transfer) proximal_l1(h, config_.learning_rate * lambda);
  }

  // Reset exactly what this step accumulated into.
  if (is_target) {
    zero_rows(grads_.user_embedding, plan.user_rows);
    zero_rows(grads_.target.item_embedding, plan.target_item_rows);
    zero_tower(grads_.target.tower);
  } else {
    zero_rows(unshared ? grads_.source_user_embedding : grads_.user_embedding,
              unshared ? plan.source_user_rows : plan.user_rows);
    zero_rows(grads_.source.item_embedding, plan.source_item_rows);
    zero_tower(grads_.source.tower);
  }
  for (Matrix& h : grads_.transfer) std::fill(h.values().begin(), h.values().end(), 0.0);
  for (Vector& s : grads_.stitch) std::fill(s.begin(), s.end(), 0.0);
  return total;
}

EpochStats Trainer::train_epoch() {
  ++epoch_;
  EpochStats stats;
  stats.epoch = epoch_;
  double target_loss = 0.0, source_loss = 0.0;
  std::size_t target_examples = 0, source_examples = 0;

  const std::size_t target_batches = target_sampler_.batches_per_epoch();
  const std::size_t source_batches = source_sampler_ ? source_sampler_->batches_per_epoch() : 0;
  const std::size_t rounds = std::max(target_batches, source_batches);
  for (std::size_t k = 0; k < rounds; ++k) {
    if (target_batches > 0) {
      const auto batch = target_sampler_.next();
      target_loss += train_batch(Domain::kTarget, batch);
      target_examples += batch.size();
    }
    if (source_batches > 0) {
      const auto batch = source_sampler_->next();
      source_loss += train_batch(Domain::kSource, batch);
      source_examples += batch.size();
    }
  }
  if (target_examples > 0) stats.loss_target = target_loss / static_cast<double>(target_examples);
  if (source_examples > 0) stats.loss_source = source_loss / static_cast<double>(source_examples);

  const Model& model = *model_;
  stats.penalty = lasso_penalty(model.params().transfer, model.config().lasso_lambda);
  for (const Matrix& h : model.params().transfer) stats.h_zero_ratios.push_back(sparsity_ratio(h));

  if (!split_->evaluated_users().empty()) {
    const ModelScorer scorer(model, split_->train.source);
    const MetricsReport val =
        evaluate(scorer, *split_, Partition::kValidation, config_.top_n, config_.mrr_cutoff);
    stats.val_hr = val.hr;
    stats.val_ndcg = val.ndcg;
    stats.val_mrr = val.mrr;
  }
  return stats;
}

FitResult fit(Model model, const LooSplit& split, const TrainConfig& config) {
  config.validate();
  FitResult result{model, {}, 0};
  if (config.epochs == 0) return result;
  const bool validates = !split.evaluated_users().empty();
  Trainer trainer(model, split, config);
  double best = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t e = 1; e <= config.epochs; ++e) {
    EpochStats stats = trainer.train_epoch();
    const double score = stats.val_ndcg;
    result.history.push_back(std::move(stats));
    if (!validates || score > best) {
      best = score;
      result.model = model;
      result.best_epoch = e;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace conet
