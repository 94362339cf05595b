#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "conet/data.hpp"
#include "conet/numerics.hpp"
#include "conet/rng.hpp"

namespace conet {

enum class Architecture : std::uint32_t {
  kMlp = 0,          // single target tower
  kMlpPlusPlus = 1,  // two towers sharing the user embedding
  kCsn = 2,          // cross-stitch coupling (scalar mixing)
  kCoNet = 3,        // cross connection units (matrix transfer)
};

const char* architecture_name(Architecture a);
/// Accepts "MLP", "MLP++", "CSN", "CoNet" (case-insensitive). Throws ConfigError.
Architecture parse_architecture(std::string_view name);

/// kGaussian: every tensor N(0, σ²). kFanIn: embeddings and H^l N(0, σ²),
/// tower weights N(0, 2/fan_in), output weights N(0, 1/fan_in), biases 0.
enum class InitScheme : std::uint32_t { kGaussian = 0, kFanIn = 1 };

const char* init_scheme_name(InitScheme s);
/// Accepts "gaussian" or "fan-in". Throws ConfigError.
InitScheme parse_init_scheme(std::string_view name);

inline bool has_source_tower(Architecture a) { return a != Architecture::kMlp; }
inline bool is_coupled(Architecture a) {
  return a == Architecture::kCsn || a == Architecture::kCoNet;
}

struct ModelConfig {
  Architecture architecture = Architecture::kCoNet;
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> hidden_widths{64, 32, 16, 8};
  double csn_alpha_self = 0.9;
  double csn_alpha_other = 0.1;
  /// ℓ1 strength on the transfer matrices; 0 gives plain CoNet, > 0 SCoNet.
  double lasso_lambda = 0.1;
  /// When false, the source tower gets its own user embedding.
  bool share_user_embedding = true;
  InitScheme init_scheme = InitScheme::kFanIn;

  /// Throws ConfigError: empty widths, 2·d ≠ widths[0], unequal CSN widths,
  /// negative λ.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct ModelShape {
  std::size_t num_users = 0;
  std::size_t num_target_items = 0;
  std::size_t num_source_items = 0;

  bool operator==(const ModelShape&) const = default;
};

/// Hidden layers W^l, b^l and the output weight h of one domain.
struct Tower {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Vector output;

  bool operator==(const Tower&) const = default;
};

struct DomainParams {
  Matrix item_embedding;  // Q, n × d
  Tower tower;

  bool operator==(const DomainParams&) const = default;
};

/// Every trainable tensor. Gradients and Adam moments reuse this layout.
struct Parameters {
  Matrix user_embedding;  // P, shared by both towers unless unshared
  DomainParams target;
  DomainParams source;           // empty for MLP
  Matrix source_user_embedding;  // only when sharing is disabled
  std::vector<Matrix> transfer;  // H^l, widths[l+1] × widths[l] (CoNet)
  std::vector<Vector> stitch;    // (α_S, α_D) per transition (CSN)

  bool operator==(const Parameters&) const = default;
};

enum class ParamGroup : std::uint32_t {
  kUserEmbedding = 1u << 0,
  kTargetItems = 1u << 1,
  kTargetTower = 1u << 2,
  kSourceItems = 1u << 3,
  kSourceTower = 1u << 4,
  kSourceUserEmbedding = 1u << 5,
  kTransfer = 1u << 6,
  kStitch = 1u << 7,
};

/// Bit set of ParamGroup values.
using GroupMask = std::uint32_t;
inline constexpr GroupMask kAllGroups = 0xffu;
inline constexpr GroupMask mask_of(ParamGroup g) { return static_cast<GroupMask>(g); }
inline constexpr bool in_mask(GroupMask mask, ParamGroup g) { return (mask & mask_of(g)) != 0; }
inline constexpr bool is_embedding(ParamGroup g) {
  return g == ParamGroup::kUserEmbedding || g == ParamGroup::kTargetItems ||
         g == ParamGroup::kSourceItems || g == ParamGroup::kSourceUserEmbedding;
}

/// Visits every tensor in canonical order:
/// P, Q_t, tower_t (W¹, b¹, …, h), Q_s, tower_s, P_s, H¹…, stitch¹….
/// Empty tensors are skipped. f(group, rows, cols, span).
template <typename Params, typename F>
void for_each_tensor(Params& p, F&& f) {
  const auto matrix = [&](ParamGroup g, auto& m) {
    if (!m.empty()) f(g, m.rows(), m.cols(), m.values());
  };
  const auto vector = [&](ParamGroup g, auto& v) {
    if (!v.empty()) f(g, v.size(), std::size_t{1}, v.values());
  };
  const auto tower = [&](ParamGroup g, auto& t) {
    for (std::size_t l = 0; l < t.weights.size(); ++l) {
      matrix(g, t.weights[l]);
      vector(g, t.biases[l]);
    }
    vector(g, t.output);
  };
  matrix(ParamGroup::kUserEmbedding, p.user_embedding);
  matrix(ParamGroup::kTargetItems, p.target.item_embedding);
  tower(ParamGroup::kTargetTower, p.target.tower);
  matrix(ParamGroup::kSourceItems, p.source.item_embedding);
  tower(ParamGroup::kSourceTower, p.source.tower);
  matrix(ParamGroup::kSourceUserEmbedding, p.source_user_embedding);
  for (auto& h : p.transfer) matrix(ParamGroup::kTransfer, h);
  for (auto& s : p.stitch) vector(ParamGroup::kStitch, s);
}

Parameters zeros_like(const Parameters& p);
std::size_t parameter_count(const Parameters& p);
/// Concatenation of all tensors in canonical order.
std::vector<double> flatten(const Parameters& p);
/// Inverse of flatten; sizes must match.
void unflatten(std::span<const double> flat, Parameters& p);

struct TowerTrace {
  Vector input;               // merged embedding x_ui
  std::vector<Vector> pre;    // pre-activations per hidden layer
  std::vector<Vector> act;    // ReLU outputs per hidden layer
  std::vector<Vector> mixed;  // CSN only: stitched input of layer l ≥ 1
  double logit = 0.0;
  double probability = 0.5;
};

struct ForwardTrace {
  Architecture architecture = Architecture::kMlp;
  Index user = 0;
  Index target_item = kNoItem;
  Index source_item = kNoItem;
  std::optional<TowerTrace> target;
  std::optional<TowerTrace> source;
};

/// Per-domain labels for one example; absent labels contribute no loss.
struct Labels {
  std::optional<double> target;
  std::optional<double> source;
};

/// [row u of P, row i of Q]; i == kNoItem leaves the item half zero.
/// Throws DataError for out-of-range indices.
Vector embed_lookup(const Matrix& users, const Matrix& items, std::size_t u, Index i);

struct BaseOutput {
  double probability;
  TowerTrace trace;
};

/// One uncoupled tower: ReLU hidden layers, sigmoid(h·z) output.
BaseOutput base_forward(const Matrix& users, const DomainParams& domain, std::size_t u, Index i);

/// Cross connection unit:
///   pre_t = W_t·a_t + b_t + H·a_s,  pre_s = W_s·a_s + b_s + H·a_t.
/// Throws ConfigError on shape mismatch.
std::pair<Vector, Vector> cross_unit(const Matrix& w_t, const Vector& b_t, const Matrix& w_s,
                                     const Vector& b_s, const Matrix& h,
                                     std::span<const double> a_t, std::span<const double> a_s);

struct CoupledOutput {
  double target_probability;
  double source_probability;
  ForwardTrace trace;
};

CoupledOutput conet_forward(const Parameters& params, std::size_t u, Index target_item,
                            Index source_item);
CoupledOutput csn_forward(const Parameters& params, std::size_t u, Index target_item,
                          Index source_item);

/// λ · Σ_l Σ_ij |h_ij|
double lasso_penalty(std::span<const Matrix> transfer, double lambda);

/// Binary cross-entropy of one example from its logit, stable for any logit.
double cross_entropy_from_logit(double logit, double label);

/// −Σ [r·log r̂ + (1−r)·log(1−r̂)]
double cross_entropy_loss(std::span<const double> predictions, std::span<const double> labels);

/// Parameters plus the configuration that fixes their shapes.
class Model {
 public:
  /// Standard normal draws in canonical tensor order, scaled per
  /// config.init_scheme with σ = init_stddev; CSN mixing scalars start at
  /// (csn_alpha_self, csn_alpha_other).
  Model(ModelConfig config, ModelShape shape, Rng& rng, double init_stddev = 0.01);
  /// Adopts existing parameters. Throws ConfigError if any shape breaks the
  /// configuration's width chain.
  Model(ModelConfig config, ModelShape shape, Parameters params);

  const ModelConfig& config() const { return config_; }
  const ModelShape& shape() const { return shape_; }
  const Parameters& params() const { return params_; }
  /// Values may change; shapes must not.
  Parameters& mutable_params() { return params_; }

  /// User embedding feeding the given domain's tower.
  const Matrix& user_embedding(Domain d) const;

  /// Runs the towers needed for the requested outputs. Coupled
  /// architectures always run both towers; a missing source item for them is
  /// the kNoItem sentinel.
  ForwardTrace forward(std::size_t u, Index target_item, Index source_item, bool need_target,
                       bool need_source) const;

  /// Target-domain probability for (u, i) with source item j paired in.
  double predict_target(std::size_t u, Index target_item, Index source_item) const;

  /// Accumulates ∂(labelled cross-entropy)/∂θ into grads for groups in mask.
  /// Throws ConfigError when labels ask for a tower the trace lacks.
  void backward(const ForwardTrace& trace, const Labels& labels, Parameters& grads,
                GroupMask mask = kAllGroups) const;

  /// Labelled cross-entropy of a trace.
  static double loss(const ForwardTrace& trace, const Labels& labels);

 private:
  void check_shapes() const;

  ModelConfig config_;
  ModelShape shape_;
  Parameters params_;
};

}  // namespace conet
