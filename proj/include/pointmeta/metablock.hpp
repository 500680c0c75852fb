#pragma once

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "pointmeta/cloud.hpp"
#include "pointmeta/neighbors.hpp"
#include "pointmeta/numkernel.hpp"
#include "pointmeta/params.hpp"

namespace pmeta {

// ---------------------------------------------------------------------------
// Block description
// ---------------------------------------------------------------------------

enum class UpdateOrder { mlp_before_group, group_before_mlp };
enum class Grouping { ball, knn, feature_knn };

// What a grouped row carries before the neighbor MLP: the neighbor's feature,
// or the edge form concat(f_j - f_i, f_i).
enum class NeighborInput { neighbor, edge };

// Geometric quantities that can be fed to an MLP, concatenated in this order.
namespace position_input {
inline constexpr unsigned relpos = 1u;  // p_j - p_i
inline constexpr unsigned dist = 2u;    // |p_j - p_i|
inline constexpr unsigned abs_j = 4u;   // p_j
inline constexpr unsigned abs_i = 8u;   // p_i
}  // namespace position_input

using PositionInputs = unsigned;

std::size_t position_input_dim(PositionInputs inputs);

struct NeighborUpdateSpec {
  UpdateOrder order = UpdateOrder::mlp_before_group;
  std::optional<MlpSpec> mlp;
  Grouping grouping = Grouping::ball;
  float radius = 0.1f;
  std::size_t k = 32;
  std::size_t repeat_factor = 1;
  NeighborInput input = NeighborInput::neighbor;
};

enum class EmbedMerge { add, concat };

struct EpeSpec {
  MlpSpec mlp;
  EmbedMerge merge = EmbedMerge::add;
  PositionInputs inputs = position_input::relpos;
};

// Relative coordinates broadcast to the channel axis and used as
// multiplicative pooling weights. With repeat_to_channels the channels are
// split into three contiguous axis blocks (x..x, y..y, z..z); otherwise the
// axes cycle per channel (x, y, z, x, ...).
struct PpSpec {
  bool repeat_to_channels = true;
};

// ipe inputs are concatenated into the neighbor MLP input; epe and pp produce
// embedding fields consumed at aggregation. More than one may be present.
struct PositionEmbedSpec {
  PositionInputs ipe = 0;
  std::optional<EpeSpec> epe;
  std::optional<PpSpec> pp;
};

struct MaxAgg {};
struct MeanAgg {};
struct SumAgg {};
// 1/K sum_j (f_j * e_j) with e from the pp embedding.
struct PositionPoolAgg {};

// Vector self-attention: M_j = softmax_K(w(q(f_i) - k(f_j) + e_j) / T),
// output sum_j M_j * (f_j + e_j).
struct VsaAgg {
  MlpSpec query;
  MlpSpec key;
  MlpSpec weight;
  float temperature = 1.0f;
};

// M_j = softmax_K(score(x_j) / T), output sum_j M_j * x_j with x the merged
// (typically concatenated) neighbor features.
struct AttentivePoolAgg {
  MlpSpec score;
  float temperature = 1.0f;
};

// Learned K x K transform of the relative coordinates applied to the neighbor
// block, then one affine "kernel" layer over the flattened result.
struct XConvAgg {
  MlpSpec transform;  // 3K -> K*K
  std::size_t out_dim = 0;
};

// Decoupled PointConv: M_j = weight_net(p_j - p_i) in R^{d_mid};
// f' = sum_j M_j f_j^T; output = H vec(f').
struct EffPointConvAgg {
  MlpSpec weight_net;  // 3 -> d_mid
  std::size_t out_dim = 0;
};

// g_j = sum_l max(0, 1 - |(p_j - p_i) - p_l| / sigma) W_l; output sum_j g_j f_j.
struct KpConvAgg {
  std::vector<Vec3> kernel_points;
  float sigma = 0.1f;
  std::size_t out_dim = 0;
};

using AggregationOp =
    std::variant<MaxAgg, MeanAgg, SumAgg, PositionPoolAgg, VsaAgg, AttentivePoolAgg, XConvAgg, EffPointConvAgg, KpConvAgg>;

const char* aggregation_name(const AggregationOp& op);

struct AggregationSpec {
  AggregationOp op = MaxAgg{};
  // Restrict summation-type aggregations to the valid neighbors of each row.
  // Off by default: padding repeats the first neighbor and is included.
  bool mask_padding = false;
};

struct PointUpdateSpec {
  std::optional<MlpSpec> mlp;
  bool inverted_bottleneck = false;
  bool residual = false;
};

inline constexpr std::size_t kInvertedBottleneckExpansion = 4;

struct BlockSpec {
  std::size_t in_dim = 0;
  NeighborUpdateSpec neighbor_update;
  PositionEmbedSpec position_embed;
  AggregationSpec aggregation;
  PointUpdateSpec point_update;
};

// Channel widths along the block, derived and checked by block_dims.
struct BlockDims {
  std::size_t input = 0;
  std::size_t mlp_input = 0;   // neighbor MLP input width (incl. ipe / edge)
  std::size_t center = 0;      // width of center features seen by the aggregation
  std::size_t grouped = 0;     // width after neighbor update (incl. repeat)
  std::size_t embedding = 0;   // epe width, 0 if absent
  std::size_t merged = 0;      // width after merging embeddings
  std::size_t aggregated = 0;
  std::size_t output = 0;
  bool projection = false;     // residual needs a linear shortcut
};

// Validates the spec and returns its widths. Throws spec or dimension errors.
BlockDims block_dims(const BlockSpec& spec);

std::vector<ParamDecl> block_param_decls(const BlockSpec& spec, std::string_view prefix);

// KPConv kernel layout: the center plus the 12 icosahedron vertices at `radius`.
std::vector<Vec3> kpconv_kernel_points(float radius);

// ---------------------------------------------------------------------------
// Forward pipeline
// ---------------------------------------------------------------------------

struct Neighborhood {
  Tensor grouped;           // [M, K, grouped]
  Tensor relpos;            // [M, K, 3]
  Tensor neighbor_positions;  // [M, K, 3]
  Tensor center_positions;  // [M, 3]
  Tensor center_features;   // [M, center]
  NeighborTable table;
};

// Neighbor grouping plus neighbor MLP. `centers` selects the query points
// (all points when empty).
Neighborhood neighbor_update(const PointCloud& cloud, const BlockSpec& spec, const Params& weights,
                             const std::vector<std::uint32_t>& centers = {});

// Gather-only grouping used by neighbor_update; exposed for equivariance tests.
NeighborTable group_points(const PointCloud& cloud, const NeighborUpdateSpec& spec,
                           const std::vector<std::uint32_t>& centers);

// Concatenation of the requested position inputs: [M, K, position_input_dim].
Tensor position_features(const Tensor& relpos, const Tensor& neighbor_positions, const Tensor& center_positions,
                         PositionInputs inputs);

struct PositionEmbedding {
  std::optional<Tensor> values;        // epe output [M, K, d_e]
  EmbedMerge merge = EmbedMerge::add;
  std::optional<Tensor> pool_weights;  // pp field [M, K, channels]

  bool empty() const { return !values && !pool_weights; }
};

PositionEmbedding position_embed(const Tensor& relpos, const Tensor& neighbor_positions, const Tensor& center_positions,
                                 std::size_t channels, const PositionEmbedSpec& spec, const Params& weights);
PositionEmbedding position_embed(const Neighborhood& hood, const BlockSpec& spec, const Params& weights);

// Relative coordinates broadcast to `channels` under the pp layout.
Tensor position_pool_weights(const Tensor& relpos, std::size_t channels, const PpSpec& spec);

struct AttentionMask {
  Tensor values;  // [M, K, d]
  float temperature = 1.0f;
};

// Aggregated features [M, aggregated]. For vsa / attentive pooling the
// normalized mask is written to `mask_out` when given.
Tensor aggregate(const Neighborhood& hood, const PositionEmbedding& emb, const BlockSpec& spec, const Params& weights,
                 AttentionMask* mask_out = nullptr);

Tensor point_update(const Tensor& aggregated, const Tensor& input_features, const BlockSpec& spec,
                    const Params& weights);

// Full forward of one block on every point; positions are unchanged.
PointCloud run_block(const PointCloud& cloud, const BlockSpec& spec, const Params& weights);

// Forward evaluated only at `centers` (reduction blocks); the returned cloud
// holds the center positions.
PointCloud run_block_at(const PointCloud& cloud, const std::vector<std::uint32_t>& centers, const BlockSpec& spec,
                        const Params& weights);

// Decoupled PointConv core: m [M,K,d_mid], f [M,K,d_in], h [d_mid*d_in, d_out].
Tensor eff_pointconv_apply(const Tensor& m, const Tensor& f, const Tensor& h, const std::vector<std::uint32_t>& counts);

// KPConv core: relpos [M,K,3], f [M,K,d_in], w [L, d_in, d_out].
Tensor kpconv_apply(const Tensor& relpos, const Tensor& f, const KpConvAgg& op, const Tensor& w,
                    const std::vector<std::uint32_t>& counts);

}  // namespace pmeta
