#include "pointmeta/metablock.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pmeta {

namespace {

std::string dims_msg(const char* what, std::size_t got, std::size_t want) {
  return std::string(what) + " is " + std::to_string(got) + ", expected " + std::to_string(want);
}

void expect_dim(const char* what, std::size_t got, std::size_t want) {
  if (got != want) fail(ErrorKind::dimension, dims_msg(what, got, want));
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<std::uint32_t> row_counts(const Neighborhood& hood, bool mask) {
  const std::size_t k = hood.table.k;
  std::vector<std::uint32_t> counts(hood.table.rows(), static_cast<std::uint32_t>(k));
  if (mask) {
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] = std::max<std::uint32_t>(hood.table.valid_counts[i], 1);
  }
  return counts;
}

// Elementwise f (+ e) (* w) over [M, K, d].
Tensor merge_embedding(const Tensor& grouped, const PositionEmbedding& emb) {
  Tensor merged = grouped;
  if (emb.values) {
    if (emb.merge == EmbedMerge::add) {
      if (emb.values->shape() != merged.shape()) {
        fail(ErrorKind::dimension, "add-merge embedding " + emb.values->shape_str() + " vs features " +
                                       merged.shape_str());
      }
      for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += (*emb.values)[i];
    } else {
      merged = concat({merged, *emb.values}, 2);
    }
  }
  if (emb.pool_weights) {
    if (emb.pool_weights->shape() != merged.shape()) {
      fail(ErrorKind::dimension, "pooling weights " + emb.pool_weights->shape_str() + " vs features " +
                                     merged.shape_str());
    }
    for (std::size_t i = 0; i < merged.size(); ++i) merged[i] *= (*emb.pool_weights)[i];
  }
  return merged;
}

Tensor reduce_neighbors(const Tensor& x, const std::vector<std::uint32_t>& counts, ReduceMode mode) {
  const std::size_t m = x.dim(0), k = x.dim(1), d = x.dim(2);
  Tensor out({m, d});
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t c = counts[i];
    if (mode == ReduceMode::max) {
      for (std::size_t ch = 0; ch < d; ++ch) {
        float mx = x.at(i, 0, ch);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j, ch));
        out.at(i, ch) = mx;
      }
      continue;
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t ch = 0; ch < d; ++ch) acc[ch] += x.at(i, j, ch);
    }
    // mean divides by the number of summed entries: K, or the valid count when masked.
    const double denom = mode == ReduceMode::mean ? double(c) : 1.0;
    for (std::size_t ch = 0; ch < d; ++ch) out.at(i, ch) = static_cast<float>(acc[ch] / denom);
  }
  (void)k;
  return out;
}

// softmax over K per channel restricted to the first counts[i] entries;
// entries past the count get weight 0.
Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint32_t>& counts, float temperature) {
  if (!(temperature > 0.0f)) fail(ErrorKind::parameter, "attention temperature must be positive");
  const std::size_t m = logits.dim(0), k = logits.dim(1), d = logits.dim(2);
  Tensor out(logits.shape());
  std::vector<double> e(k);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t c = counts[i];
    for (std::size_t ch = 0; ch < d; ++ch) {
      float mx = logits.at(i, 0, ch);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j, ch));
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        e[j] = std::exp((double(logits.at(i, j, ch)) - double(mx)) / double(temperature));
        sum += e[j];
      }
      for (std::size_t j = 0; j < c; ++j) out.at(i, j, ch) = static_cast<float>(e[j] / sum);
    }
  }
  return out;
}

Tensor weighted_neighbor_sum(const Tensor& weights, const Tensor& values, const std::vector<std::uint32_t>& counts) {
  const std::size_t m = values.dim(0), d = values.dim(2);
  Tensor out({m, d});
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < counts[i]; ++j) {
      for (std::size_t ch = 0; ch < d; ++ch) acc[ch] += double(weights.at(i, j, ch)) * double(values.at(i, j, ch));
    }
    for (std::size_t ch = 0; ch < d; ++ch) out.at(i, ch) = static_cast<float>(acc[ch]);
  }
  return out;
}

Tensor vsa_forward(const Neighborhood& hood, const PositionEmbedding& emb, const VsaAgg& op, const Params& w,
                   const std::vector<std::uint32_t>& counts, AttentionMask* mask_out) {
  const Tensor& f = hood.grouped;
  const std::size_t m = f.dim(0), k = f.dim(1), d = f.dim(2);
  const Tensor q = apply_mlp(hood.center_features, op.query, w.sub("query"));
  const Tensor kf = apply_mlp(f, op.key, w.sub("key"));
  expect_dim("vsa query width", q.dim(1), d);
  expect_dim("vsa key width", kf.dim(2), d);
  Tensor value = f;
  if (emb.values) {
    if (emb.merge != EmbedMerge::add) fail(ErrorKind::spec, "vector self-attention needs an add-merge embedding");
    if (emb.values->shape() != f.shape()) fail(ErrorKind::dimension, "vsa embedding shape " + emb.values->shape_str());
    for (std::size_t i = 0; i < value.size(); ++i) value[i] += (*emb.values)[i];
  }
  Tensor rel({m, k, d});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t ch = 0; ch < d; ++ch) {
        float v = q.at(i, ch) - kf.at(i, j, ch);
        if (emb.values) v += emb.values->at(i, j, ch);
        rel.at(i, j, ch) = v;
      }
    }
  }
  const Tensor logits = apply_mlp(rel, op.weight, w.sub("weight"));
  expect_dim("vsa weight width", logits.dim(2), d);
  Tensor mask = masked_softmax(logits, counts, op.temperature);
  Tensor out = weighted_neighbor_sum(mask, value, counts);
  if (mask_out) *mask_out = AttentionMask{std::move(mask), op.temperature};
  return out;
}

Tensor attentive_forward(const Tensor& merged, const AttentivePoolAgg& op, const Params& w,
                         const std::vector<std::uint32_t>& counts, AttentionMask* mask_out) {
  const Tensor scores = apply_mlp(merged, op.score, w.sub("score"));
  expect_dim("attentive score width", scores.dim(2), merged.dim(2));
  Tensor mask = masked_softmax(scores, counts, op.temperature);
  Tensor out = weighted_neighbor_sum(mask, merged, counts);
  if (mask_out) *mask_out = AttentionMask{std::move(mask), op.temperature};
  return out;
}

Tensor xconv_forward(const Neighborhood& hood, const Tensor& merged, const XConvAgg& op, const Params& w) {
  const std::size_t m = merged.dim(0), k = merged.dim(1), d = merged.dim(2);
  const Tensor x = apply_mlp(hood.relpos.reshaped({m, 3 * k}), op.transform, w.sub("transform"));
  expect_dim("xconv transform width", x.dim(1), k * k);
  Tensor transformed({m, k * d});
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a = 0; a < k; ++a) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t t = 0; t < k; ++t) {
        const double xa = x.at(i, a * k + t);
        for (std::size_t ch = 0; ch < d; ++ch) acc[ch] += xa * double(merged.at(i, t, ch));
      }
      for (std::size_t ch = 0; ch < d; ++ch) transformed.at(i, a * d + ch) = static_cast<float>(acc[ch]);
    }
  }
  return apply_mlp(transformed, MlpSpec::linear(k * d, op.out_dim), w.sub("kernel"));
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t position_input_dim(PositionInputs inputs) {
  std::size_t d = 0;
  if (inputs & position_input::relpos) d += 3;
  if (inputs & position_input::dist) d += 1;
  if (inputs & position_input::abs_j) d += 3;
  if (inputs & position_input::abs_i) d += 3;
  return d;
}

const char* aggregation_name(const AggregationOp& op) {
  return std::visit(overloaded{[](const MaxAgg&) { return "max"; }, [](const MeanAgg&) { return "mean"; },
                               [](const SumAgg&) { return "sum"; },
                               [](const PositionPoolAgg&) { return "position_pool"; },
                               [](const VsaAgg&) { return "vsa"; },
                               [](const AttentivePoolAgg&) { return "attentive_pool"; },
                               [](const XConvAgg&) { return "xconv"; },
                               [](const EffPointConvAgg&) { return "eff_pointconv"; },
                               [](const KpConvAgg&) { return "kpconv"; }},
                    op);
}

BlockDims block_dims(const BlockSpec& spec) {
  BlockDims dims;
  const auto& nu = spec.neighbor_update;
  const auto& pe = spec.position_embed;
  if (spec.in_dim == 0) fail(ErrorKind::spec, "block input width must be positive");
  if (nu.k == 0) fail(ErrorKind::spec, "neighbor count must be positive");
  if (nu.repeat_factor == 0) fail(ErrorKind::spec, "repeat factor must be positive");
  if (nu.grouping == Grouping::ball && !(nu.radius > 0.0f)) fail(ErrorKind::spec, "ball radius must be positive");
  dims.input = spec.in_dim;

  if (nu.order == UpdateOrder::mlp_before_group) {
    if (pe.ipe != 0) {
      fail(ErrorKind::spec, "implicit position embedding requires group_before_mlp (relative coordinates must enter "
                            "the neighbor MLP)");
    }
    if (nu.input == NeighborInput::edge) fail(ErrorKind::spec, "edge features require group_before_mlp");
    dims.mlp_input = spec.in_dim;
  } else {
    dims.mlp_input = (nu.input == NeighborInput::edge ? 2 * spec.in_dim : spec.in_dim) + position_input_dim(pe.ipe);
  }
  std::size_t nu_out = dims.mlp_input;
  if (nu.mlp) {
    validate_mlp(*nu.mlp);
    expect_dim("neighbor MLP input width", nu.mlp->in_dim(), dims.mlp_input);
    nu_out = nu.mlp->out_dim();
  }
  dims.center = nu.order == UpdateOrder::mlp_before_group ? nu_out : spec.in_dim;
  dims.grouped = nu_out * nu.repeat_factor;

  dims.merged = dims.grouped;
  if (pe.epe) {
    validate_mlp(pe.epe->mlp);
    if (pe.epe->inputs == 0) fail(ErrorKind::spec, "explicit position embedding needs at least one input");
    expect_dim("embedding MLP input width", pe.epe->mlp.in_dim(), position_input_dim(pe.epe->inputs));
    dims.embedding = pe.epe->mlp.out_dim();
    if (pe.epe->merge == EmbedMerge::add) {
      expect_dim("add-merge embedding width", dims.embedding, dims.grouped);
    } else {
      dims.merged = dims.grouped + dims.embedding;
    }
  }
  if (pe.pp && pe.pp->repeat_to_channels && dims.merged % 3 != 0) {
    fail(ErrorKind::spec, "position pooling with repeat_to_channels needs a channel count divisible by 3, got " +
                              std::to_string(dims.merged));
  }

  const std::size_t k = nu.k;
  dims.aggregated = std::visit(
      overloaded{
          [&](const MaxAgg&) { return dims.merged; }, [&](const MeanAgg&) { return dims.merged; },
          [&](const SumAgg&) { return dims.merged; },
          [&](const PositionPoolAgg&) {
            if (!pe.pp) fail(ErrorKind::spec, "position_pool aggregation requires a pp position embedding");
            return dims.merged;
          },
          [&](const VsaAgg& op) {
            if (pe.pp) fail(ErrorKind::spec, "vsa cannot be combined with position pooling");
            if (pe.epe && pe.epe->merge != EmbedMerge::add) fail(ErrorKind::spec, "vsa needs an add-merge embedding");
            validate_mlp(op.query);
            validate_mlp(op.key);
            validate_mlp(op.weight);
            expect_dim("vsa query input", op.query.in_dim(), dims.center);
            expect_dim("vsa query output", op.query.out_dim(), dims.grouped);
            expect_dim("vsa key input", op.key.in_dim(), dims.grouped);
            expect_dim("vsa key output", op.key.out_dim(), dims.grouped);
            expect_dim("vsa weight input", op.weight.in_dim(), dims.grouped);
            expect_dim("vsa weight output", op.weight.out_dim(), dims.grouped);
            return dims.grouped;
          },
          [&](const AttentivePoolAgg& op) {
            validate_mlp(op.score);
            expect_dim("attentive score input", op.score.in_dim(), dims.merged);
            expect_dim("attentive score output", op.score.out_dim(), dims.merged);
            return dims.merged;
          },
          [&](const XConvAgg& op) {
            if (spec.aggregation.mask_padding) fail(ErrorKind::spec, "xconv needs a fixed neighbor count; no masking");
            validate_mlp(op.transform);
            expect_dim("xconv transform input", op.transform.in_dim(), 3 * k);
            expect_dim("xconv transform output", op.transform.out_dim(), k * k);
            if (op.out_dim == 0) fail(ErrorKind::spec, "xconv output width must be positive");
            return op.out_dim;
          },
          [&](const EffPointConvAgg& op) {
            validate_mlp(op.weight_net);
            expect_dim("pointconv weight-net input", op.weight_net.in_dim(), 3);
            if (op.out_dim == 0) fail(ErrorKind::spec, "pointconv output width must be positive");
            return op.out_dim;
          },
          [&](const KpConvAgg& op) {
            if (op.kernel_points.empty()) fail(ErrorKind::spec, "kpconv needs kernel points");
            if (!(op.sigma > 0.0f)) fail(ErrorKind::spec, "kpconv sigma must be positive");
            if (op.out_dim == 0) fail(ErrorKind::spec, "kpconv output width must be positive");
            return op.out_dim;
          }},
      spec.aggregation.op);

  const auto& pu = spec.point_update;
  dims.output = dims.aggregated;
  if (pu.mlp) {
    validate_mlp(*pu.mlp);
    expect_dim("point MLP input width", pu.mlp->in_dim(), dims.aggregated);
    dims.output = pu.mlp->out_dim();
    if (pu.inverted_bottleneck) {
      if (pu.mlp->layers() != 2 || pu.mlp->layer_dims[1] != kInvertedBottleneckExpansion * pu.mlp->in_dim()) {
        fail(ErrorKind::spec, "inverted bottleneck needs a 2-layer MLP with hidden width 4x its input");
      }
    }
  } else if (pu.inverted_bottleneck) {
    fail(ErrorKind::spec, "inverted bottleneck set without a point MLP");
  }
  dims.projection = pu.residual && dims.output != dims.input;
  return dims;
}

std::vector<ParamDecl> block_param_decls(const BlockSpec& spec, std::string_view prefix) {
  const BlockDims dims = block_dims(spec);
  std::vector<ParamDecl> decls;
  auto append = [&](std::vector<ParamDecl> more) {
    decls.insert(decls.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  };
  auto name = [&](std::string_view leaf) { return join_path(prefix, leaf); };
  if (spec.neighbor_update.mlp) append(mlp_param_decls(*spec.neighbor_update.mlp, name("nu.mlp")));
  if (spec.position_embed.epe) append(mlp_param_decls(spec.position_embed.epe->mlp, name("pe.epe")));
  std::visit(overloaded{[](const MaxAgg&) {}, [](const MeanAgg&) {}, [](const SumAgg&) {},
                        [](const PositionPoolAgg&) {},
                        [&](const VsaAgg& op) {
                          append(mlp_param_decls(op.query, name("agg.query")));
                          append(mlp_param_decls(op.key, name("agg.key")));
                          append(mlp_param_decls(op.weight, name("agg.weight")));
                        },
                        [&](const AttentivePoolAgg& op) { append(mlp_param_decls(op.score, name("agg.score"))); },
                        [&](const XConvAgg& op) {
                          append(mlp_param_decls(op.transform, name("agg.transform")));
                          const std::size_t k = spec.neighbor_update.k;
                          append(mlp_param_decls(MlpSpec::linear(k * dims.merged, op.out_dim), name("agg.kernel")));
                        },
                        [&](const EffPointConvAgg& op) {
                          append(mlp_param_decls(op.weight_net, name("agg.weight_net")));
                          const std::size_t fan_in = op.weight_net.out_dim() * dims.merged;
                          decls.push_back({name("agg.h"), {fan_in, op.out_dim}, ParamRole::weight, fan_in, op.out_dim});
                        },
                        [&](const KpConvAgg& op) {
                          const std::size_t l = op.kernel_points.size();
                          decls.push_back({name("agg.kernel_weights"),
                                           {l, dims.merged, op.out_dim},
                                           ParamRole::weight,
                                           l * dims.merged,
                                           op.out_dim});
                        }},
             spec.aggregation.op);
  if (spec.point_update.mlp) append(mlp_param_decls(*spec.point_update.mlp, name("pu.mlp")));
  if (dims.projection) append(mlp_param_decls(MlpSpec::linear(dims.input, dims.output), name("pu.proj")));
  return decls;
}

std::vector<Vec3> kpconv_kernel_points(float radius) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double norm = std::sqrt(1.0 + phi * phi);
  const double raw[12][3] = {{0, 1, phi},  {0, -1, phi},  {0, 1, -phi},  {0, -1, -phi},
                             {1, phi, 0},  {-1, phi, 0},  {1, -phi, 0},  {-1, -phi, 0},
                             {phi, 0, 1},  {-phi, 0, 1},  {phi, 0, -1},  {-phi, 0, -1}};
  std::vector<Vec3> pts;
  pts.push_back({0.0f, 0.0f, 0.0f});
  for (const auto& v : raw) {
    pts.push_back({static_cast<float>(v[0] / norm * radius), static_cast<float>(v[1] / norm * radius),
                   static_cast<float>(v[2] / norm * radius)});
  }
  return pts;
}

// ---------------------------------------------------------------------------

NeighborTable group_points(const PointCloud& cloud, const NeighborUpdateSpec& spec,
                           const std::vector<std::uint32_t>& centers) {
  const std::size_t n = cloud.size();
  const bool all = centers.empty();
  const Tensor query = all ? cloud.positions : gather_rows(cloud.positions, centers);
  if (spec.grouping == Grouping::ball) return ball_query_auto(query, cloud.positions, spec.radius, spec.k);

  // knn with more neighbors than points pads the row, like a saturated ball.
  const std::size_t k = std::min(spec.k, n);
  NeighborTable t;
  if (spec.grouping == Grouping::knn) {
    t = knn_auto(query, cloud.positions, k);
  } else {
    if (!all) fail(ErrorKind::spec, "feature-space grouping is only defined for all points of a cloud");
    t = feature_knn(cloud.features, k);
  }
  if (k == spec.k) return t;
  NeighborTable padded{spec.k, std::vector<std::uint32_t>(t.rows() * spec.k), t.valid_counts};
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < spec.k; ++j) padded.indices[i * spec.k + j] = t.at(i, j < k ? j : 0);
  }
  return padded;
}

Tensor position_features(const Tensor& relpos, const Tensor& neighbor_positions, const Tensor& center_positions,
                         PositionInputs inputs) {
  const std::size_t m = relpos.dim(0), k = relpos.dim(1);
  const std::size_t d = position_input_dim(inputs);
  Tensor out({m, k, d});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      float* o = &out.at(i, j, 0);
      const float* r = relpos.data().data() + (i * relpos.dim(1) + j) * 3;
      if (inputs & position_input::relpos) {
        *o++ = r[0];
        *o++ = r[1];
        *o++ = r[2];
      }
      if (inputs & position_input::dist) *o++ = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
      if (inputs & position_input::abs_j) {
        for (int a = 0; a < 3; ++a) *o++ = neighbor_positions.at(i, j, a);
      }
      if (inputs & position_input::abs_i) {
        for (int a = 0; a < 3; ++a) *o++ = center_positions.at(i, a);
      }
    }
  }
  return out;
}

Neighborhood neighbor_update(const PointCloud& cloud, const BlockSpec& spec, const Params& weights,
                             const std::vector<std::uint32_t>& centers) {
  validate_cloud(cloud);
  const BlockDims dims = block_dims(spec);
  expect_dim("cloud feature width", cloud.feature_dim(), spec.in_dim);
  const auto& nu = spec.neighbor_update;
  const bool all = centers.empty();
  const std::size_t m = all ? cloud.size() : centers.size();
  for (auto c : centers) {
    if (c >= cloud.size()) fail(ErrorKind::parameter, "center index out of range");
  }
  auto center_of = [&](std::size_t i) -> std::size_t { return all ? i : centers[i]; };

  Neighborhood hood;
  hood.table = group_points(cloud, nu, centers);
  const std::size_t k = hood.table.k;
  hood.center_positions = all ? cloud.positions : gather_rows(cloud.positions, centers);
  hood.neighbor_positions = Tensor({m, k, 3});
  hood.relpos = Tensor({m, k, 3});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const float* pj = cloud.position(hood.table.at(i, j));
      const float* pi = cloud.position(center_of(i));
      for (int a = 0; a < 3; ++a) {
        hood.neighbor_positions.at(i, j, a) = pj[a];
        hood.relpos.at(i, j, a) = pj[a] - pi[a];
      }
    }
  }

  auto gather = [&](const Tensor& rows) {
    const std::size_t d = rows.dim(1);
    Tensor g({m, k, d});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const auto src = rows.row(hood.table.at(i, j));
        std::copy(src.begin(), src.end(), &g.at(i, j, 0));
      }
    }
    return g;
  };

  Tensor grouped;
  if (nu.order == UpdateOrder::mlp_before_group) {
    const Tensor updated = nu.mlp ? apply_mlp(cloud.features, *nu.mlp, weights.sub("nu.mlp")) : cloud.features;
    grouped = gather(updated);
    hood.center_features = all ? updated : gather_rows(updated, centers);
  } else {
    Tensor base = gather(cloud.features);
    hood.center_features = all ? cloud.features : gather_rows(cloud.features, centers);
    if (nu.input == NeighborInput::edge) {
      Tensor center({m, k, spec.in_dim});
      for (std::size_t i = 0; i < m; ++i) {
        const auto fi = hood.center_features.row(i);
        for (std::size_t j = 0; j < k; ++j) {
          for (std::size_t c = 0; c < spec.in_dim; ++c) {
            center.at(i, j, c) = fi[c];
            base.at(i, j, c) -= fi[c];
          }
        }
      }
      base = concat({base, center}, 2);
    }
    if (spec.position_embed.ipe != 0) {
      base = concat({base, position_features(hood.relpos, hood.neighbor_positions, hood.center_positions,
                                             spec.position_embed.ipe)},
                    2);
    }
    grouped = nu.mlp ? apply_mlp(base, *nu.mlp, weights.sub("nu.mlp")) : std::move(base);
  }
  if (nu.repeat_factor > 1) {
    std::vector<Tensor> copies(nu.repeat_factor, grouped);
    grouped = concat(std::span<const Tensor>(copies), 2);
  }
  expect_dim("grouped width", grouped.dim(2), dims.grouped);
  hood.grouped = std::move(grouped);
  return hood;
}

Tensor position_pool_weights(const Tensor& relpos, std::size_t channels, const PpSpec& spec) {
  const std::size_t m = relpos.dim(0), k = relpos.dim(1);
  if (spec.repeat_to_channels && channels % 3 != 0) {
    fail(ErrorKind::dimension, "axis-block pooling needs channels divisible by 3, got " + std::to_string(channels));
  }
  const std::size_t block = channels / 3;
  Tensor out({m, k, channels});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t axis = spec.repeat_to_channels ? c / block : c % 3;
        out.at(i, j, c) = relpos.at(i, j, axis);
      }
    }
  }
  return out;
}

PositionEmbedding position_embed(const Tensor& relpos, const Tensor& neighbor_positions, const Tensor& center_positions,
                                 std::size_t channels, const PositionEmbedSpec& spec, const Params& weights) {
  PositionEmbedding emb;
  if (spec.epe) {
    const Tensor in = position_features(relpos, neighbor_positions, center_positions, spec.epe->inputs);
    emb.values = apply_mlp(in, spec.epe->mlp, weights.sub("pe.epe"));
    emb.merge = spec.epe->merge;
    if (emb.merge == EmbedMerge::add && emb.values->dim(2) != channels) {
      fail(ErrorKind::dimension, dims_msg("add-merge embedding width", emb.values->dim(2), channels));
    }
  }
  if (spec.pp) {
    const std::size_t width = (emb.values && emb.merge == EmbedMerge::concat) ? channels + emb.values->dim(2) : channels;
    emb.pool_weights = position_pool_weights(relpos, width, *spec.pp);
  }
  return emb;
}

PositionEmbedding position_embed(const Neighborhood& hood, const BlockSpec& spec, const Params& weights) {
  return position_embed(hood.relpos, hood.neighbor_positions, hood.center_positions, hood.grouped.dim(2),
                        spec.position_embed, weights);
}

Tensor eff_pointconv_apply(const Tensor& m, const Tensor& f, const Tensor& h, const std::vector<std::uint32_t>& counts) {
  const std::size_t rows = f.dim(0), d_in = f.dim(2), d_mid = m.dim(2);
  expect_dim("pointconv H rows", h.dim(0), d_mid * d_in);
  const std::size_t d_out = h.dim(1);
  Tensor out({rows, d_out});
  std::vector<double> fprime(d_mid * d_in);
  for (std::size_t i = 0; i < rows; ++i) {
    std::fill(fprime.begin(), fprime.end(), 0.0);
    for (std::size_t j = 0; j < counts[i]; ++j) {
      for (std::size_t a = 0; a < d_mid; ++a) {
        const double ma = m.at(i, j, a);
        for (std::size_t c = 0; c < d_in; ++c) fprime[a * d_in + c] += ma * double(f.at(i, j, c));
      }
    }
    for (std::size_t o = 0; o < d_out; ++o) {
      double acc = 0.0;
      for (std::size_t v = 0; v < d_mid * d_in; ++v) acc += double(h.at(v, o)) * fprime[v];
      out.at(i, o) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor kpconv_apply(const Tensor& relpos, const Tensor& f, const KpConvAgg& op, const Tensor& w,
                    const std::vector<std::uint32_t>& counts) {
  const std::size_t rows = f.dim(0), d_in = f.dim(2);
  const std::size_t l_count = op.kernel_points.size();
  if (w.rank() != 3 || w.dim(0) != l_count || w.dim(1) != d_in) {
    fail(ErrorKind::dimension, "kpconv weights " + w.shape_str() + " do not match " + std::to_string(l_count) +
                                   " kernel points and width " + std::to_string(d_in));
  }
  const std::size_t d_out = w.dim(2);
  Tensor out({rows, d_out});
  std::vector<double> h(l_count * d_in);
  std::vector<double> acc(d_out);
  for (std::size_t i = 0; i < rows; ++i) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t j = 0; j < counts[i]; ++j) {
      const float* r = relpos.data().data() + (i * relpos.dim(1) + j) * 3;
      for (std::size_t l = 0; l < l_count; ++l) {
        const Vec3& kp = op.kernel_points[l];
        const double dx = double(r[0]) - kp[0], dy = double(r[1]) - kp[1], dz = double(r[2]) - kp[2];
        const double corr = std::max(0.0, 1.0 - std::sqrt(dx * dx + dy * dy + dz * dz) / double(op.sigma));
        if (corr == 0.0) continue;
        for (std::size_t c = 0; c < d_in; ++c) h[l * d_in + c] += corr * double(f.at(i, j, c));
      }
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t l = 0; l < l_count; ++l) {
      for (std::size_t c = 0; c < d_in; ++c) {
        const double hv = h[l * d_in + c];
        if (hv == 0.0) continue;
        for (std::size_t o = 0; o < d_out; ++o) acc[o] += hv * double(w.at(l, c, o));
      }
    }
    for (std::size_t o = 0; o < d_out; ++o) out.at(i, o) = static_cast<float>(acc[o]);
  }
  return out;
}

Tensor aggregate(const Neighborhood& hood, const PositionEmbedding& emb, const BlockSpec& spec, const Params& weights,
                 AttentionMask* mask_out) {
  const BlockDims dims = block_dims(spec);
  const Params w = weights.sub("agg");
  const auto counts = row_counts(hood, spec.aggregation.mask_padding);
  if (std::holds_alternative<PositionPoolAgg>(spec.aggregation.op) && !emb.pool_weights) {
    fail(ErrorKind::spec, "position_pool aggregation requires a pp position embedding");
  }
  Tensor out = std::visit(
      overloaded{
          [&](const MaxAgg&) { return reduce_neighbors(merge_embedding(hood.grouped, emb), counts, ReduceMode::max); },
          [&](const MeanAgg&) { return reduce_neighbors(merge_embedding(hood.grouped, emb), counts, ReduceMode::mean); },
          [&](const SumAgg&) { return reduce_neighbors(merge_embedding(hood.grouped, emb), counts, ReduceMode::sum); },
          [&](const PositionPoolAgg&) {
            return reduce_neighbors(merge_embedding(hood.grouped, emb), counts, ReduceMode::mean);
          },
          [&](const VsaAgg& op) {
            if (emb.pool_weights) fail(ErrorKind::spec, "vsa cannot be combined with position pooling");
            return vsa_forward(hood, emb, op, w, counts, mask_out);
          },
          [&](const AttentivePoolAgg& op) {
            return attentive_forward(merge_embedding(hood.grouped, emb), op, w, counts, mask_out);
          },
          [&](const XConvAgg& op) { return xconv_forward(hood, merge_embedding(hood.grouped, emb), op, w); },
          [&](const EffPointConvAgg& op) {
            const Tensor merged = merge_embedding(hood.grouped, emb);
            const Tensor m = apply_mlp(hood.relpos, op.weight_net, w.sub("weight_net"));
            return eff_pointconv_apply(m, merged, w.at("h"), counts);
          },
          [&](const KpConvAgg& op) {
            return kpconv_apply(hood.relpos, merge_embedding(hood.grouped, emb), op, w.at("kernel_weights"), counts);
          }},
      spec.aggregation.op);
  expect_dim("aggregated width", out.dim(1), dims.aggregated);
  require_finite(out, "aggregate");
  return out;
}

Tensor point_update(const Tensor& aggregated, const Tensor& input_features, const BlockSpec& spec,
                    const Params& weights) {
  const BlockDims dims = block_dims(spec);
  const auto& pu = spec.point_update;
  expect_dim("point update input width", aggregated.dim(1), dims.aggregated);
  Tensor out = pu.mlp ? apply_mlp(aggregated, *pu.mlp, weights.sub("pu.mlp")) : aggregated;
  if (pu.residual) {
    expect_dim("residual input width", input_features.dim(1), dims.input);
    if (input_features.dim(0) != out.dim(0)) fail(ErrorKind::dimension, "residual row count mismatch");
    const Tensor shortcut = dims.projection
                                ? apply_mlp(input_features, MlpSpec::linear(dims.input, dims.output), weights.sub("pu.proj"))
                                : input_features;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += shortcut[i];
  }
  require_finite(out, "point_update");
  return out;
}

PointCloud run_block_at(const PointCloud& cloud, const std::vector<std::uint32_t>& centers, const BlockSpec& spec,
                        const Params& weights) {
  const Neighborhood hood = neighbor_update(cloud, spec, weights, centers);
  const PositionEmbedding emb = position_embed(hood, spec, weights);
  const Tensor f1 = aggregate(hood, emb, spec, weights);
  const Tensor input = centers.empty() ? cloud.features : gather_rows(cloud.features, centers);
  Tensor f2 = point_update(f1, input, spec, weights);
  return PointCloud(hood.center_positions, std::move(f2));
}

PointCloud run_block(const PointCloud& cloud, const BlockSpec& spec, const Params& weights) {
  return run_block_at(cloud, {}, spec, weights);
}

}  // namespace pmeta
