#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pointmeta/metablock.hpp"

namespace pmeta {

// Grouping hyperparameters a registry entry is instantiated with.
struct BlockContext {
  std::size_t channels = 32;
  float radius = 0.1f;
  std::size_t k = 32;
};

struct VariantInfo {
  std::string name;
  std::string formula;
};

// Stable, sorted. The N{a}P{b} grid is listed in its canonical lowercase form.
std::vector<VariantInfo> list_variants();

// Accepts the "-inv" spelling of the grid entries. Throws a registry error for
// unknown names.
std::string canonical_variant(std::string_view name);
bool is_variant(std::string_view name);

BlockSpec make_block(std::string_view name, const BlockContext& ctx);
BlockSpec make_block(std::string_view name, std::size_t channels);

// How a network built from a variant reduces resolution between stages.
//   classic: group-before-MLP over concat(f_j, p_j - p_i), max.
//   pointmeta: MLP-before-group, explicit embedding added, max.
//   pointmeta_plain: as pointmeta without the embedding.
enum class ReductionStyle { classic, pointmeta, pointmeta_plain };

ReductionStyle reduction_style(std::string_view variant);
const char* reduction_style_name(ReductionStyle style);

BlockSpec make_reduction_block(ReductionStyle style, std::size_t in_dim, std::size_t out_dim, float radius,
                               std::size_t k);

}  // namespace pmeta
