#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pointmeta/cloud.hpp"
#include "pointmeta/metablock.hpp"
#include "pointmeta/params.hpp"
#include "pointmeta/zoo.hpp"

namespace pmeta {

enum class HeadKind { per_point_features, per_point_logits, pooled_logits };

struct NetworkConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 32;
  std::array<std::size_t, 4> blocks{2, 4, 2, 2};
  std::size_t stride = 4;
  float base_radius = 0.1f;
  std::size_t k = 32;
  std::string block_variant = "pointmetabase";
  HeadKind head = HeadKind::per_point_features;
  std::size_t num_classes = 13;
};

// S, L, XL, XXL of the PointMetaBase family with the given block variant.
NetworkConfig family_config(std::string_view family, std::string_view variant = "pointmetabase");

// Throws a config error naming the violated invariant.
void validate_config(const NetworkConfig& cfg);

struct Stage {
  std::size_t width = 0;
  float radius = 0.0f;
  BlockSpec reduction;
  std::vector<BlockSpec> blocks;
};

// Merges the coarser level into level `level` (0 = stem resolution):
// 1-layer MLP over concat(skip, interpolated).
struct DecoderUnit {
  std::size_t level = 0;
  std::size_t skip_width = 0;
  std::size_t coarse_width = 0;
  MlpSpec mlp;
};

struct Network {
  NetworkConfig config;
  MlpSpec stem;
  std::array<Stage, 4> stages;
  std::vector<DecoderUnit> decoder;  // coarse to fine
  std::optional<MlpSpec> head;
  std::size_t out_dim = 0;
  ParamStore weights;

  std::vector<ParamDecl> param_decls() const;
  std::size_t level_width(std::size_t level) const;
};

// Layer path names used for weights and cost rows.
std::string stage_path(std::size_t stage);                          // "enc.s1"
std::string block_path(std::size_t stage, std::size_t block);        // "enc.s1.block0"
std::string reduction_path(std::size_t stage);                       // "enc.s1.sa"
std::string decoder_path(std::size_t level);                         // "dec.l0"

Network build_network(const NetworkConfig& cfg);
void init_weights(Network& net, std::uint64_t seed);

// Point counts per level for an input of n points: n, ceil(n/s), ...
std::array<std::size_t, 5> level_sizes(const NetworkConfig& cfg, std::size_t n);

// Per-point outputs [N, out_dim], or [1, num_classes] for the pooled head.
// `fps_start` seeds the first sampling stage. When `level_points` is given it
// receives the point count of every encoder level.
Tensor forward(const Network& net, const PointCloud& cloud, std::size_t fps_start = 0,
               std::vector<std::size_t>* level_points = nullptr);

struct CostRow {
  std::string path;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

enum class CountingMode { macs, flops2x };
const char* counting_mode_name(CountingMode mode);

struct CostReport {
  std::vector<CostRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
  CountingMode mode = CountingMode::macs;
  std::size_t n_points = 0;
  std::size_t k = 0;
  std::size_t stride = 0;

  void add(CostRow row);
};

// Parameter totals from the declared tensors of the network, one row per
// layer group.
CostReport count_params(const Network& net);

}  // namespace pmeta
