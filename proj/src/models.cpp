#include "conet/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "conet/error.hpp"

namespace conet {

const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::kMlp: return "MLP";
    case Architecture::kMlpPlusPlus: return "MLP++";
    case Architecture::kCsn: return "CSN";
    case Architecture::kCoNet: return "CoNet";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "mlp") return Architecture::kMlp;
  if (lower == "mlp++") return Architecture::kMlpPlusPlus;
  if (lower == "csn") return Architecture::kCsn;
  if (lower == "conet") return Architecture::kCoNet;
  throw ConfigError("unknown architecture '" + std::string(name) +
                    "' (expected MLP, MLP++, CSN or CoNet)");
}

const char* init_scheme_name(InitScheme s) {
  return s == InitScheme::kGaussian ? "gaussian" : "fan-in";
}

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "gaussian") return InitScheme::kGaussian;
  if (name == "fan-in") return InitScheme::kFanIn;
  throw ConfigError("unknown init scheme '" + std::string(name) + "' (expected gaussian or fan-in)");
}

void ModelConfig::validate() const {
  if (hidden_widths.empty()) throw ConfigError("hidden_widths must not be empty");
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  for (std::size_t w : hidden_widths) {
    if (w == 0) throw ConfigError("hidden widths must be positive");
  }
  if (2 * embedding_dim != hidden_widths.front()) {
    throw ConfigError("first hidden width " + std::to_string(hidden_widths.front()) +
                      " must equal 2 x embedding_dim (" + std::to_string(2 * embedding_dim) + ")");
  }
  if (architecture == Architecture::kCsn &&
      std::adjacent_find(hidden_widths.begin(), hidden_widths.end(), std::not_equal_to<>()) !=
          hidden_widths.end()) {
    throw ConfigError(
        "CSN requires equal hidden widths: cross-stitch mixing cannot combine activations of "
        "contiguous layers with different dimensions");
  }
  if (!(lasso_lambda >= 0.0) || !std::isfinite(lasso_lambda)) {
    throw ConfigError("lasso_lambda must be a nonnegative finite number");
  }
}

Parameters zeros_like(const Parameters& p) {
  Parameters z = p;
  for_each_tensor(z, [](ParamGroup, std::size_t, std::size_t, std::span<double> v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return z;
}

std::size_t parameter_count(const Parameters& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](ParamGroup, std::size_t, std::size_t, std::span<const double> v) {
    n += v.size();
  });
  return n;
}

std::vector<double> flatten(const Parameters& p) {
  std::vector<double> flat;
  flat.reserve(parameter_count(p));
  for_each_tensor(p, [&](ParamGroup, std::size_t, std::size_t, std::span<const double> v) {
    flat.insert(flat.end(), v.begin(), v.end());
  });
  return flat;
}

void unflatten(std::span<const double> flat, Parameters& p) {
  if (flat.size() != parameter_count(p)) throw ConfigError("unflatten: size mismatch");
  std::size_t offset = 0;
  for_each_tensor(p, [&](ParamGroup, std::size_t, std::size_t, std::span<double> v) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  });
}

Vector embed_lookup(const Matrix& users, const Matrix& items, std::size_t u, Index i) {
  if (u >= users.rows()) {
    throw DataError("user index " + std::to_string(u) + " out of range (" +
                    std::to_string(users.rows()) + " users)");
  }
  if (i != kNoItem && i >= items.rows()) {
    throw DataError("item index " + std::to_string(i) + " out of range (" +
                    std::to_string(items.rows()) + " items)");
  }
  const std::size_t d = users.cols();
  Vector x(d + items.cols());
  std::copy_n(users.row(u).begin(), d, x.begin());
  if (i != kNoItem) std::copy_n(items.row(i).begin(), items.cols(), x.begin() + static_cast<std::ptrdiff_t>(d));
  return x;
}

namespace {

Vector layer_pre(const Matrix& w, const Vector& b, std::span<const double> in) {
  Vector pre(std::vector<double>(b.begin(), b.end()));
  gemv_add(w, in, pre.values());
  return pre;
}

void push_layer(TowerTrace& t, Vector pre) {
  t.act.push_back(relu(pre));
  t.pre.push_back(std::move(pre));
}

void finish_output(TowerTrace& t, const Tower& tower) {
  t.logit = dot(tower.output, t.act.back());
  t.probability = sigmoid(t.logit);
}

TowerTrace tower_forward(const Matrix& users, const DomainParams& d, std::size_t u, Index i) {
  TowerTrace t;
  t.input = embed_lookup(users, d.item_embedding, u, i);
  const Tower& tower = d.tower;
  for (std::size_t l = 0; l < tower.weights.size(); ++l) {
    push_layer(t, layer_pre(tower.weights[l], tower.biases[l], l == 0 ? t.input.values()
                                                                      : t.act.back().values()));
  }
  finish_output(t, tower);
  return t;
}

ForwardTrace coupled_forward(const Parameters& p, Architecture arch, const Matrix& source_users,
                             std::size_t u, Index i, Index j) {
  ForwardTrace trace;
  trace.architecture = arch;
  trace.user = static_cast<Index>(u);
  trace.target_item = i;
  trace.source_item = j;
  TowerTrace t, s;
  t.input = embed_lookup(p.user_embedding, p.target.item_embedding, u, i);
  s.input = embed_lookup(source_users, p.source.item_embedding, u, j);
  const Tower& tt = p.target.tower;
  const Tower& st = p.source.tower;
  push_layer(t, layer_pre(tt.weights[0], tt.biases[0], t.input));
  push_layer(s, layer_pre(st.weights[0], st.biases[0], s.input));
  for (std::size_t l = 1; l < tt.weights.size(); ++l) {
    const Vector& a_t = t.act[l - 1];
    const Vector& a_s = s.act[l - 1];
    if (arch == Architecture::kCoNet) {
      Vector pre_t = layer_pre(tt.weights[l], tt.biases[l], a_t);
      Vector pre_s = layer_pre(st.weights[l], st.biases[l], a_s);
      gemv_add(p.transfer[l - 1], a_s, pre_t.values());
      gemv_add(p.transfer[l - 1], a_t, pre_s.values());
      push_layer(t, std::move(pre_t));
      push_layer(s, std::move(pre_s));
    } else {
      const double self = p.stitch[l - 1][0];
      const double other = p.stitch[l - 1][1];
      Vector m_t(a_t.size()), m_s(a_s.size());
      for (std::size_t k = 0; k < a_t.size(); ++k) {
        m_t[k] = self * a_t[k] + other * a_s[k];
        m_s[k] = self * a_s[k] + other * a_t[k];
      }
      push_layer(t, layer_pre(tt.weights[l], tt.biases[l], m_t));
      push_layer(s, layer_pre(st.weights[l], st.biases[l], m_s));
      t.mixed.push_back(std::move(m_t));
      s.mixed.push_back(std::move(m_s));
    }
  }
  finish_output(t, tt);
  finish_output(s, st);
  trace.target = std::move(t);
  trace.source = std::move(s);
  return trace;
}

void require_coupled_shapes(const Parameters& p, Architecture arch) {
  const std::size_t layers = p.target.tower.weights.size();
  if (layers == 0 || p.source.tower.weights.size() != layers) {
    throw ConfigError("coupled forward needs two towers of equal depth");
  }
  if (arch == Architecture::kCoNet && p.transfer.size() + 1 != layers) {
    throw ConfigError("CoNet needs one transfer matrix per hidden-layer transition");
  }
  if (arch == Architecture::kCsn && p.stitch.size() + 1 != layers) {
    throw ConfigError("CSN needs one stitch unit per hidden-layer transition");
  }
}

}  // namespace

BaseOutput base_forward(const Matrix& users, const DomainParams& domain, std::size_t u, Index i) {
  const Tower& tower = domain.tower;
  if (tower.weights.empty() || tower.weights.size() != tower.biases.size()) {
    throw ConfigError("base_forward: tower has no layers or mismatched biases");
  }
  std::size_t in = users.cols() + domain.item_embedding.cols();
  for (std::size_t l = 0; l < tower.weights.size(); ++l) {
    if (tower.weights[l].cols() != in || tower.biases[l].size() != tower.weights[l].rows()) {
      throw ConfigError("base_forward: layer " + std::to_string(l + 1) + " shape mismatch");
    }
    in = tower.weights[l].rows();
  }
  if (tower.output.size() != in) throw ConfigError("base_forward: output weight shape mismatch");
  TowerTrace t = tower_forward(users, domain, u, i);
  const double probability = t.probability;
  return {probability, std::move(t)};
}

std::pair<Vector, Vector> cross_unit(const Matrix& w_t, const Vector& b_t, const Matrix& w_s,
                                     const Vector& b_s, const Matrix& h,
                                     std::span<const double> a_t, std::span<const double> a_s) {
  if (h.cols() != a_s.size() || h.cols() != a_t.size() || h.rows() != w_t.rows() ||
      h.rows() != w_s.rows()) {
    throw ConfigError("cross_unit: transfer matrix shape does not match activations/weights");
  }
  Vector pre_t = affine(w_t, b_t, a_t);
  Vector pre_s = affine(w_s, b_s, a_s);
  gemv_add(h, a_s, pre_t.values());
  gemv_add(h, a_t, pre_s.values());
  return {std::move(pre_t), std::move(pre_s)};
}

CoupledOutput conet_forward(const Parameters& params, std::size_t u, Index target_item,
                            Index source_item) {
  require_coupled_shapes(params, Architecture::kCoNet);
  const Matrix& source_users = params.source_user_embedding.empty()
                                   ? params.user_embedding
                                   : params.source_user_embedding;
  ForwardTrace trace =
      coupled_forward(params, Architecture::kCoNet, source_users, u, target_item, source_item);
  return {trace.target->probability, trace.source->probability, std::move(trace)};
}

CoupledOutput csn_forward(const Parameters& params, std::size_t u, Index target_item,
                          Index source_item) {
  require_coupled_shapes(params, Architecture::kCsn);
  const auto& widths = params.target.tower.weights;
  for (std::size_t l = 1; l < widths.size(); ++l) {
    if (widths[l].rows() != widths[l - 1].rows()) {
      throw ConfigError("CSN requires equal hidden widths");
    }
  }
  const Matrix& source_users = params.source_user_embedding.empty()
                                   ? params.user_embedding
                                   : params.source_user_embedding;
  ForwardTrace trace =
      coupled_forward(params, Architecture::kCsn, source_users, u, target_item, source_item);
  return {trace.target->probability, trace.source->probability, std::move(trace)};
}

double lasso_penalty(std::span<const Matrix> transfer, double lambda) {
  double sum = 0.0;
  for (const Matrix& h : transfer) {
    for (double v : h.values()) sum += std::abs(v);
  }
  return lambda * sum;
}

double cross_entropy_from_logit(double logit, double label) {
  // softplus(z) − r·z, i.e. −[r·log σ(z) + (1−r)·log(1−σ(z))]
  return std::max(logit, 0.0) - label * logit + std::log1p(std::exp(-std::abs(logit)));
}

double cross_entropy_loss(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) {
    throw ConfigError("cross_entropy_loss: size mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const double p = predictions[k];
    const double r = labels[k];
    // 0 · log 0 is taken as 0.
    if (r != 0.0) total -= r * std::log(p);
    if (r != 1.0) total -= (1.0 - r) * std::log1p(-p);
  }
  return total;
}

Model::Model(ModelConfig config, ModelShape shape, Rng& rng, double init_stddev)
    : config_(std::move(config)), shape_(shape) {
  config_.validate();
  const std::size_t d = config_.embedding_dim;
  const auto& widths = config_.hidden_widths;
  const auto make_tower = [&] {
    Tower t;
    std::size_t in = 2 * d;
    for (std::size_t w : widths) {
      t.weights.emplace_back(w, in);
      t.biases.emplace_back(w);
      in = w;
    }
    t.output = Vector(in);
    return t;
  };
  params_.user_embedding = Matrix(shape_.num_users, d);
  params_.target = {Matrix(shape_.num_target_items, d), make_tower()};
  const Architecture arch = config_.architecture;
  if (has_source_tower(arch)) {
    params_.source = {Matrix(shape_.num_source_items, d), make_tower()};
    if (!config_.share_user_embedding) params_.source_user_embedding = Matrix(shape_.num_users, d);
  }
  if (arch == Architecture::kCoNet) {
    for (std::size_t l = 1; l < widths.size(); ++l) {
      params_.transfer.emplace_back(widths[l], widths[l - 1]);
    }
  }
  for_each_tensor(params_, [&](ParamGroup, std::size_t, std::size_t, std::span<double> v) {
    for (double& x : v) x = rng.normal();
  });
  const auto scale = [](std::span<double> v, double s) {
    for (double& x : v) x *= s;
  };
  const bool fan_in = config_.init_scheme == InitScheme::kFanIn;
  for_each_tensor(params_, [&](ParamGroup g, std::size_t, std::size_t, std::span<double> v) {
    if (!fan_in || (g != ParamGroup::kTargetTower && g != ParamGroup::kSourceTower)) scale(v, init_stddev);
  });
  if (fan_in) {
    for (Tower* t : {&params_.target.tower, &params_.source.tower}) {
      for (Matrix& w : t->weights) scale(w.values(), std::sqrt(2.0 / static_cast<double>(w.cols())));
      for (Vector& b : t->biases) scale(b.values(), 0.0);
      if (!t->output.empty()) scale(t->output.values(), std::sqrt(1.0 / static_cast<double>(t->output.size())));
    }
  }
  if (arch == Architecture::kCsn) {
    for (std::size_t l = 1; l < widths.size(); ++l) {
      params_.stitch.push_back(Vector{config_.csn_alpha_self, config_.csn_alpha_other});
    }
  }
  check_shapes();
}

Model::Model(ModelConfig config, ModelShape shape, Parameters params)
    : config_(std::move(config)), shape_(shape), params_(std::move(params)) {
  config_.validate();
  check_shapes();
}

void Model::check_shapes() const {
  const std::size_t d = config_.embedding_dim;
  const auto& widths = config_.hidden_widths;
  const auto fail = [](const std::string& what) {
    throw ConfigError("parameter shape mismatch: " + what);
  };
  const auto check_matrix = [&](const Matrix& m, std::size_t r, std::size_t c,
                                const std::string& name) {
    if (m.rows() != r || m.cols() != c) {
      fail(name + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
           ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
  };
  const auto check_domain = [&](const DomainParams& dp, std::size_t items, const std::string& name) {
    check_matrix(dp.item_embedding, items, d, name + " item embedding");
    if (dp.tower.weights.size() != widths.size() || dp.tower.biases.size() != widths.size()) {
      fail(name + " tower depth");
    }
    std::size_t in = 2 * d;
    for (std::size_t l = 0; l < widths.size(); ++l) {
      check_matrix(dp.tower.weights[l], widths[l], in, name + " W" + std::to_string(l + 1));
      if (dp.tower.biases[l].size() != widths[l]) fail(name + " b" + std::to_string(l + 1));
      in = widths[l];
    }
    if (dp.tower.output.size() != in) fail(name + " output weight");
  };
  const Architecture arch = config_.architecture;
  check_matrix(params_.user_embedding, shape_.num_users, d, "user embedding");
  check_domain(params_.target, shape_.num_target_items, "target");
  if (has_source_tower(arch)) {
    check_domain(params_.source, shape_.num_source_items, "source");
    if (config_.share_user_embedding) {
      if (!params_.source_user_embedding.empty()) fail("unexpected source user embedding");
    } else {
      check_matrix(params_.source_user_embedding, shape_.num_users, d, "source user embedding");
    }
  } else if (!params_.source.item_embedding.empty() || !params_.source.tower.weights.empty()) {
    fail("MLP carries no source tower");
  }
  const std::size_t transitions = widths.size() - 1;
  if (arch == Architecture::kCoNet) {
    if (params_.transfer.size() != transitions) fail("transfer matrix count");
    for (std::size_t l = 0; l < transitions; ++l) {
      check_matrix(params_.transfer[l], widths[l + 1], widths[l], "H" + std::to_string(l + 1));
    }
  } else if (!params_.transfer.empty()) {
    fail("only CoNet carries transfer matrices");
  }
  if (arch == Architecture::kCsn) {
    if (params_.stitch.size() != transitions) fail("stitch unit count");
    for (const Vector& s : params_.stitch) {
      if (s.size() != 2) fail("stitch unit must hold (alpha_S, alpha_D)");
    }
  } else if (!params_.stitch.empty()) {
    fail("only CSN carries stitch units");
  }
}

const Matrix& Model::user_embedding(Domain d) const {
  if (d == Domain::kSource && !params_.source_user_embedding.empty()) {
    return params_.source_user_embedding;
  }
  return params_.user_embedding;
}

ForwardTrace Model::forward(std::size_t u, Index target_item, Index source_item, bool need_target,
                            bool need_source) const {
  const Architecture arch = config_.architecture;
  if (is_coupled(arch)) {
    return coupled_forward(params_, arch, user_embedding(Domain::kSource), u, target_item,
                           source_item);
  }
  ForwardTrace trace;
  trace.architecture = arch;
  trace.user = static_cast<Index>(u);
  trace.target_item = target_item;
  trace.source_item = source_item;
  if (need_target) trace.target = tower_forward(params_.user_embedding, params_.target, u, target_item);
  if (need_source && has_source_tower(arch)) {
    trace.source = tower_forward(user_embedding(Domain::kSource), params_.source, u, source_item);
  }
  return trace;
}

double Model::predict_target(std::size_t u, Index target_item, Index source_item) const {
  return forward(u, target_item, source_item, true, false).target->probability;
}

double Model::loss(const ForwardTrace& trace, const Labels& labels) {
  double total = 0.0;
  if (labels.target) total += cross_entropy_from_logit(trace.target->logit, *labels.target);
  if (labels.source) total += cross_entropy_from_logit(trace.source->logit, *labels.source);
  return total;
}

namespace {

// Per-tower view used by the backward pass.
struct TowerGrad {
  const TowerTrace* trace = nullptr;
  const DomainParams* params = nullptr;
  DomainParams* grads = nullptr;
  Matrix* user_grads = nullptr;
  bool tower_on = false;
  bool items_on = false;
  bool users_on = false;
  double logit_grad = 0.0;
  Vector delta;  // ∂L/∂(activation of the current layer)
};

void relu_backward(const Vector& pre, Vector& delta) {
  for (std::size_t k = 0; k < pre.size(); ++k) {
    if (!(pre[k] > 0.0)) delta[k] = 0.0;
  }
}

void accumulate_layer(TowerGrad& g, std::size_t l, std::span<const double> input) {
  if (!g.tower_on) return;
  outer_add(g.delta, input, g.grads->tower.weights[l]);
  axpy(1.0, g.delta, g.grads->tower.biases[l].values());
}

void accumulate_embedding(TowerGrad& g, std::size_t u, Index item, std::size_t d) {
  if (!g.users_on && !(g.items_on && item != kNoItem)) return;
  Vector dx(2 * d);
  gemv_transpose_add(g.params->tower.weights[0], g.delta, dx.values());
  if (g.users_on) axpy(1.0, std::span<const double>(dx.values()).first(d), g.user_grads->row(u));
  if (g.items_on && item != kNoItem) {
    axpy(1.0, std::span<const double>(dx.values()).subspan(d), g.grads->item_embedding.row(item));
  }
}

}  // namespace

void Model::backward(const ForwardTrace& trace, const Labels& labels, Parameters& grads,
                     GroupMask mask) const {
  if (trace.architecture != config_.architecture) {
    throw ConfigError("backward: trace was produced by a different architecture");
  }
  if ((labels.target && !trace.target) || (labels.source && !trace.source)) {
    throw ConfigError("backward: label given for a tower missing from the trace");
  }
  const Architecture arch = config_.architecture;
  const bool coupled = is_coupled(arch);
  const std::size_t layers = config_.hidden_widths.size();
  const std::size_t d = config_.embedding_dim;
  const bool unshared = !params_.source_user_embedding.empty();

  TowerGrad t, s;
  if (trace.target && (coupled || labels.target)) {
    t.trace = &*trace.target;
    t.params = &params_.target;
    t.grads = &grads.target;
    t.user_grads = &grads.user_embedding;
    t.tower_on = in_mask(mask, ParamGroup::kTargetTower);
    t.items_on = in_mask(mask, ParamGroup::kTargetItems);
    t.users_on = in_mask(mask, ParamGroup::kUserEmbedding);
    t.logit_grad = labels.target ? trace.target->probability - *labels.target : 0.0;
  }
  if (trace.source && (coupled || labels.source)) {
    s.trace = &*trace.source;
    s.params = &params_.source;
    s.grads = &grads.source;
    s.user_grads = unshared ? &grads.source_user_embedding : &grads.user_embedding;
    s.tower_on = in_mask(mask, ParamGroup::kSourceTower);
    s.items_on = in_mask(mask, ParamGroup::kSourceItems);
    s.users_on = in_mask(mask, unshared ? ParamGroup::kSourceUserEmbedding
                                        : ParamGroup::kUserEmbedding);
    s.logit_grad = labels.source ? trace.source->probability - *labels.source : 0.0;
  }
  if (coupled && (!t.trace || !s.trace)) throw ConfigError("backward: coupled trace lacks a tower");

  for (TowerGrad* g : {&t, &s}) {
    if (!g->trace) continue;
    g->delta = Vector(g->params->tower.output.size());
    axpy(g->logit_grad, g->params->tower.output, g->delta.values());
    if (g->tower_on) axpy(g->logit_grad, g->trace->act.back(), g->grads->tower.output.values());
  }

  const bool transfer_on = in_mask(mask, ParamGroup::kTransfer);
  const bool stitch_on = in_mask(mask, ParamGroup::kStitch);
  for (std::size_t l = layers; l-- > 0;) {
    for (TowerGrad* g : {&t, &s}) {
      if (g->trace) relu_backward(g->trace->pre[l], g->delta);
    }
    if (l == 0) {
      for (TowerGrad* g : {&t, &s}) {
        if (!g->trace) continue;
        accumulate_layer(*g, 0, g->trace->input);
        const Index item = g == &t ? trace.target_item : trace.source_item;
        accumulate_embedding(*g, trace.user, item, d);
      }
      break;
    }
    if (!coupled) {
      for (TowerGrad* g : {&t, &s}) {
        if (!g->trace) continue;
        accumulate_layer(*g, l, g->trace->act[l - 1]);
        Vector below(g->trace->act[l - 1].size());
        gemv_transpose_add(g->params->tower.weights[l], g->delta, below.values());
        g->delta = std::move(below);
      }
      continue;
    }
    const Vector& a_t = t.trace->act[l - 1];
    const Vector& a_s = s.trace->act[l - 1];
    if (arch == Architecture::kCoNet) {
      accumulate_layer(t, l, a_t);
      accumulate_layer(s, l, a_s);
      const Matrix& h = params_.transfer[l - 1];
      if (transfer_on) {
        outer_add(t.delta, a_s, grads.transfer[l - 1]);
        outer_add(s.delta, a_t, grads.transfer[l - 1]);
      }
      Vector below_t(a_t.size()), below_s(a_s.size());
      gemv_transpose_add(params_.target.tower.weights[l], t.delta, below_t.values());
      gemv_transpose_add(h, s.delta, below_t.values());
      gemv_transpose_add(params_.source.tower.weights[l], s.delta, below_s.values());
      gemv_transpose_add(h, t.delta, below_s.values());
      t.delta = std::move(below_t);
      s.delta = std::move(below_s);
    } else {
      const Vector& m_t = t.trace->mixed[l - 1];
      const Vector& m_s = s.trace->mixed[l - 1];
      accumulate_layer(t, l, m_t);
      accumulate_layer(s, l, m_s);
      Vector dm_t(a_t.size()), dm_s(a_s.size());
      gemv_transpose_add(params_.target.tower.weights[l], t.delta, dm_t.values());
      gemv_transpose_add(params_.source.tower.weights[l], s.delta, dm_s.values());
      const double self = params_.stitch[l - 1][0];
      const double other = params_.stitch[l - 1][1];
      if (stitch_on) {
        grads.stitch[l - 1][0] += dot(dm_t, a_t) + dot(dm_s, a_s);
        grads.stitch[l - 1][1] += dot(dm_t, a_s) + dot(dm_s, a_t);
      }
      Vector below_t(a_t.size()), below_s(a_s.size());
      for (std::size_t k = 0; k < a_t.size(); ++k) {
        below_t[k] = self * dm_t[k] + other * dm_s[k];
        below_s[k] = self * dm_s[k] + other * dm_t[k];
      }
      t.delta = std::move(below_t);
      s.delta = std::move(below_s);
    }
  }
}

}  // namespace conet
