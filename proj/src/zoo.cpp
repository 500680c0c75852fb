#include "pointmeta/zoo.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <map>

namespace pmeta {

namespace {

using Builder = std::function<BlockSpec(const BlockContext&)>;

MlpSpec layers(std::size_t in, std::size_t out, std::size_t n) { return MlpSpec::stack(in, out, out, n); }

MlpSpec inverted(std::size_t d) { return MlpSpec{{d, kInvertedBottleneckExpansion * d, d}}; }

BlockSpec base(const BlockContext& ctx, Grouping grouping) {
  BlockSpec s;
  s.in_dim = ctx.channels;
  s.neighbor_update.grouping = grouping;
  s.neighbor_update.radius = ctx.radius;
  s.neighbor_update.k = ctx.k;
  return s;
}

PointUpdateSpec plain_update(std::size_t in, std::size_t out) { return {layers(in, out, 1), false, false}; }

PointUpdateSpec residual_update(MlpSpec mlp, bool inv = false) {
  return {std::move(mlp), inv, true};
}

EpeSpec epe_add(std::size_t d, std::size_t n = 1) { return {layers(3, d, n), EmbedMerge::add, position_input::relpos}; }

// mlp_before_group, 1-layer neighbor MLP, max, 1-layer point update.
BlockSpec plain(const BlockContext& ctx) {
  const std::size_t d = ctx.channels;
  BlockSpec s = base(ctx, Grouping::ball);
  s.neighbor_update.mlp = layers(d, d, 1);
  s.point_update = plain_update(d, d);
  return s;
}

BlockSpec classic(const BlockContext& ctx, Grouping grouping, std::size_t nu_layers) {
  const std::size_t d = ctx.channels;
  BlockSpec s = base(ctx, grouping);
  s.neighbor_update.order = UpdateOrder::group_before_mlp;
  s.neighbor_update.mlp = layers(d + 3, d, nu_layers);
  s.position_embed.ipe = position_input::relpos;
  return s;
}

// Plain-EPE-Max with an a-layer neighbor MLP and a b-layer point update.
BlockSpec grid(const BlockContext& ctx, std::size_t a, std::size_t b, bool inv) {
  const std::size_t d = ctx.channels;
  BlockSpec s = base(ctx, Grouping::ball);
  if (a > 0) s.neighbor_update.mlp = (inv && a == 2) ? inverted(d) : layers(d, d, a);
  s.position_embed.epe = epe_add(d);
  if (b > 0) {
    s.point_update.mlp = (inv && b == 2) ? inverted(d) : layers(d, d, b);
    s.point_update.inverted_bottleneck = inv && b == 2;
  }
  return s;
}

struct Entry {
  const char* formula;
  Builder build;
};

const std::map<std::string, Entry, std::less<>>& registry() {
  static const std::map<std::string, Entry, std::less<>> table = [] {
    std::map<std::string, Entry, std::less<>> t;
    t["pointnet2"] = {"max_j MLP3(concat(f_j, p_j - p_i)); MLP(f)", [](const BlockContext& c) {
                        BlockSpec s = classic(c, Grouping::ball, 3);
                        s.point_update = plain_update(c.channels, c.channels);
                        return s;
                      }};
    t["pointnext"] = {"max_j MLP1(concat(f_j, p_j - p_i)); MLP_inv(f) + f_i", [](const BlockContext& c) {
                        BlockSpec s = classic(c, Grouping::ball, 1);
                        s.point_update = residual_update(inverted(c.channels), true);
                        return s;
                      }};
    t["pointmetabase"] = {"max_j(MLP(f)_j + MLP(p_j - p_i)); MLP2(f) + f_i", [](const BlockContext& c) {
                            const std::size_t d = c.channels;
                            BlockSpec s = base(c, Grouping::ball);
                            s.neighbor_update.mlp = layers(d, d, 1);
                            s.position_embed.epe = epe_add(d);
                            s.point_update = residual_update(layers(d, d, 2));
                            return s;
                          }};
    t["point_transformer"] = {"sum_j softmax(w(q(f_i) - k(f_j) + e_j)) * (f_j + e_j); MLP(f) + f_i",
                              [](const BlockContext& c) {
                                const std::size_t d = c.channels;
                                BlockSpec s = base(c, Grouping::knn);
                                s.neighbor_update.mlp = layers(d, d, 1);
                                s.position_embed.epe = epe_add(d, 2);
                                s.aggregation.op =
                                    VsaAgg{MlpSpec::linear(d, d), MlpSpec::linear(d, d), MlpSpec::linear(d, d), 1.0f};
                                s.point_update = residual_update(layers(d, d, 1));
                                return s;
                              }};
    t["point_transformer_max"] = {"max_j(f_j + e_j); MLP(f) + f_i", [](const BlockContext& c) {
                                    const std::size_t d = c.channels;
                                    BlockSpec s = base(c, Grouping::knn);
                                    s.neighbor_update.mlp = layers(d, d, 1);
                                    s.position_embed.epe = epe_add(d, 2);
                                    s.point_update = residual_update(layers(d, d, 1));
                                    return s;
                                  }};
    t["assanet"] = {"1/K sum_j repeat3(f_j) * repeat(p_j - p_i); MLP(f) + f_i", [](const BlockContext& c) {
                      const std::size_t d = c.channels;
                      BlockSpec s = base(c, Grouping::ball);
                      s.neighbor_update.mlp = layers(d, d, 1);
                      s.neighbor_update.repeat_factor = 3;
                      s.position_embed.pp = PpSpec{true};
                      s.aggregation.op = PositionPoolAgg{};
                      s.point_update = residual_update(layers(3 * d, d, 1));
                      return s;
                    }};
    t["dgcnn"] = {"max_j MLP(concat(f_j - f_i, f_i)) over feature-space kNN", [](const BlockContext& c) {
                    const std::size_t d = c.channels;
                    BlockSpec s = base(c, Grouping::feature_knn);
                    s.neighbor_update.order = UpdateOrder::group_before_mlp;
                    s.neighbor_update.input = NeighborInput::edge;
                    s.neighbor_update.mlp = layers(2 * d, d, 1);
                    return s;
                  }};
    t["pointcnn"] = {"Conv(K, X(p_j - p_i) x concat(f_j, MLP(p_j - p_i)))", [](const BlockContext& c) {
                       const std::size_t d = c.channels;
                       const std::size_t de = (d + 3) / 4;
                       BlockSpec s = base(c, Grouping::knn);
                       s.position_embed.epe = EpeSpec{layers(3, de, 1), EmbedMerge::concat, position_input::relpos};
                       s.aggregation.op = XConvAgg{MlpSpec::linear(3 * c.k, c.k * c.k), d};
                       return s;
                     }};
    t["randla"] = {"sum_j softmax(s(x_j)) * x_j, x_j = concat(MLP(concat(f_j, p_j)), MLP(p_i, p_j, d_ij)); MLP(f) + f_i",
                   [](const BlockContext& c) {
                     const std::size_t d = c.channels;
                     BlockSpec s = base(c, Grouping::knn);
                     s.neighbor_update.order = UpdateOrder::group_before_mlp;
                     s.neighbor_update.mlp = layers(d + 3, d, 1);
                     s.position_embed.ipe = position_input::abs_j;
                     const PositionInputs all = position_input::relpos | position_input::dist | position_input::abs_j |
                                                position_input::abs_i;
                     s.position_embed.epe = EpeSpec{layers(10, d, 1), EmbedMerge::concat, all};
                     s.aggregation.op = AttentivePoolAgg{MlpSpec::linear(2 * d, 2 * d), 1.0f};
                     s.point_update = residual_update(layers(2 * d, d, 1));
                     return s;
                   }};
    t["pointconv_eff"] = {"H vec(sum_j M(p_j - p_i) f_j^T), f_j = MLP3(concat(f_j, p_j - p_i)); MLP(f)",
                          [](const BlockContext& c) {
                            const std::size_t d = c.channels;
                            BlockSpec s = classic(c, Grouping::knn, 3);
                            s.aggregation.op = EffPointConvAgg{layers(3, 16, 1), d};
                            s.point_update = plain_update(d, d);
                            return s;
                          }};
    t["kpconv"] = {"sum_j sum_l max(0, 1 - |p_j - p_i - p_l| / sigma) W_l f_j", [](const BlockContext& c) {
                     const std::size_t d = c.channels;
                     BlockSpec s = base(c, Grouping::ball);
                     s.aggregation.op = KpConvAgg{kpconv_kernel_points(c.radius), c.radius, d};
                     return s;
                   }};
    t["plain_max"] = {"max_j MLP(f)_j; MLP(f)", [](const BlockContext& c) { return plain(c); }};
    t["plain_pp"] = {"1/K sum_j MLP(f)_j * (p_j - p_i); MLP(f)", [](const BlockContext& c) {
                       BlockSpec s = plain(c);
                       s.position_embed.pp = PpSpec{false};
                       s.aggregation.op = PositionPoolAgg{};
                       return s;
                     }};
    t["plain_pp_max"] = {"max_j MLP(f)_j * (p_j - p_i); MLP(f)", [](const BlockContext& c) {
                           BlockSpec s = plain(c);
                           s.position_embed.pp = PpSpec{false};
                           return s;
                         }};
    t["plain_ipe_max"] = {"max_j MLP(concat(f_j, p_j - p_i)); MLP(f)", [](const BlockContext& c) {
                            BlockSpec s = classic(c, Grouping::ball, 1);
                            s.point_update = plain_update(c.channels, c.channels);
                            return s;
                          }};
    t["plain_epe_max"] = {"max_j(MLP(f)_j + MLP(p_j - p_i)); MLP(f)", [](const BlockContext& c) {
                            BlockSpec s = plain(c);
                            s.position_embed.epe = epe_add(c.channels);
                            return s;
                          }};
    t["plain_epe_pp"] = {"1/K sum_j (MLP(f)_j + MLP(p_j - p_i)) * (p_j - p_i); MLP(f)", [](const BlockContext& c) {
                           BlockSpec s = plain(c);
                           s.position_embed.epe = epe_add(c.channels);
                           s.position_embed.pp = PpSpec{false};
                           s.aggregation.op = PositionPoolAgg{};
                           return s;
                         }};
    constexpr std::array<std::array<int, 3>, 9> kGrid = {
        {{1, 1, 0}, {2, 0, 0}, {0, 2, 0}, {1, 2, 0}, {1, 2, 1}, {2, 1, 0}, {2, 1, 1}, {1, 3, 0}, {3, 1, 0}}};
    for (const auto& [a, b, inv] : kGrid) {
      std::string name = "n" + std::to_string(a) + "p" + std::to_string(b) + (inv ? "_inv" : "");
      t[name] = {"Plain-EPE-Max, neighbor MLP / point MLP layer allocation",
                 [a = a, b = b, inv = inv](const BlockContext& c) { return grid(c, a, b, inv != 0); }};
    }
    return t;
  }();
  return table;
}

}  // namespace

std::vector<VariantInfo> list_variants() {
  std::vector<VariantInfo> out;
  for (const auto& [name, entry] : registry()) out.push_back({name, entry.formula});
  return out;
}

std::string canonical_variant(std::string_view name) {
  std::string key(name);
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) {
    return ch == '-' ? '_' : static_cast<char>(std::tolower(ch));
  });
  if (!registry().count(key)) fail(ErrorKind::registry, "unknown block variant '" + std::string(name) + "'");
  return key;
}

bool is_variant(std::string_view name) {
  try {
    canonical_variant(name);
    return true;
  } catch (const Error&) {
    return false;
  }
}

BlockSpec make_block(std::string_view name, const BlockContext& ctx) {
  if (ctx.channels == 0) fail(ErrorKind::spec, "block channels must be positive");
  const auto& entry = registry().find(canonical_variant(name))->second;
  BlockSpec spec = entry.build(ctx);
  block_dims(spec);
  return spec;
}

BlockSpec make_block(std::string_view name, std::size_t channels) {
  BlockContext ctx;
  ctx.channels = channels;
  return make_block(name, ctx);
}

ReductionStyle reduction_style(std::string_view variant) {
  const std::string key = canonical_variant(variant);
  if (key == "pointnet2" || key == "pointnext" || key == "plain_ipe_max") return ReductionStyle::classic;
  if (key == "plain_max") return ReductionStyle::pointmeta_plain;
  return ReductionStyle::pointmeta;
}

const char* reduction_style_name(ReductionStyle style) {
  switch (style) {
    case ReductionStyle::classic:
      return "classic";
    case ReductionStyle::pointmeta:
      return "pointmeta";
    case ReductionStyle::pointmeta_plain:
      return "pointmeta_plain";
  }
  return "?";
}

BlockSpec make_reduction_block(ReductionStyle style, std::size_t in_dim, std::size_t out_dim, float radius,
                               std::size_t k) {
  BlockSpec s;
  s.in_dim = in_dim;
  s.neighbor_update.grouping = Grouping::ball;
  s.neighbor_update.radius = radius;
  s.neighbor_update.k = k;
  if (style == ReductionStyle::classic) {
    s.neighbor_update.order = UpdateOrder::group_before_mlp;
    s.position_embed.ipe = position_input::relpos;
    s.neighbor_update.mlp = layers(in_dim + 3, out_dim, 1);
  } else {
    s.neighbor_update.mlp = layers(in_dim, out_dim, 1);
    if (style == ReductionStyle::pointmeta) s.position_embed.epe = epe_add(out_dim);
  }
  block_dims(s);
  return s;
}

}  // namespace pmeta
