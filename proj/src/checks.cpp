#include "pointmeta/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "pointmeta/analysis.hpp"
#include "pointmeta/neighbors.hpp"
#include "pointmeta/reference.hpp"
#include "pointmeta/zoo.hpp"

namespace pmeta::checks {

float Rng::uniform(float lo, float hi) {
  const float u = static_cast<float>(engine_() >> 40) * 0x1.0p-24f;
  return lo + (hi - lo) * u;
}

std::size_t Rng::index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

std::vector<std::uint32_t> Rng::permutation(std::size_t n) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
  return p;
}

Tensor Rng::tensor(const Shape& shape, float lo, float hi) {
  Tensor t(shape);
  for (auto& v : t.data()) v = uniform(lo, hi);
  return t;
}

PointCloud Rng::cloud(std::size_t n, std::size_t d) {
  Tensor p = tensor({n, 3}, 0.0f, 1.0f);
  Tensor f = tensor({n, d});
  return PointCloud(std::move(p), std::move(f));
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

// max |a - b| / max(1, |b|)
double scaled_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(double(a[i]) - double(b[i])) / std::max(1.0, std::abs(double(b[i])));
    worst = std::max(worst, d);
  }
  return worst;
}

double max_abs(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

CheckResult make(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

// Runs `body` per trial and records the first failure.
CheckResult tolerance_check(std::string name, std::size_t trials, double tol,
                            const std::function<double(std::size_t)>& body) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    double err = 0.0;
    try {
      err = body(t);
    } catch (const std::exception& e) {
      return make(name, false, "trial " + std::to_string(t) + " threw: " + e.what());
    }
    worst = std::max(worst, err);
    if (!(err <= tol)) {
      return make(name, false, "trial " + std::to_string(t) + " error " + fmt(err) + " > " + fmt(tol));
    }
  }
  return make(name, true, std::to_string(trials) + " trials, max error " + fmt(worst) + " <= " + fmt(tol));
}

bool same_table(const NeighborTable& a, const NeighborTable& b) {
  return a.k == b.k && a.indices == b.indices && a.valid_counts == b.valid_counts;
}

PointCloud permute_cloud(const PointCloud& c, const std::vector<std::uint32_t>& perm) {
  return PointCloud(gather_rows(c.positions, perm), gather_rows(c.features, perm));
}

Neighborhood random_hood(Rng& rng, std::size_t m, std::size_t k, std::size_t d) {
  Neighborhood h;
  h.grouped = rng.tensor({m, k, d});
  h.center_positions = rng.tensor({m, 3}, 0.0f, 1.0f);
  h.relpos = rng.tensor({m, k, 3}, -0.3f, 0.3f);
  h.neighbor_positions = Tensor({m, k, 3});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t a = 0; a < 3; ++a) {
        h.neighbor_positions.at(i, j, a) = h.center_positions.at(i, a) + h.relpos.at(i, j, a);
      }
    }
  }
  h.center_features = rng.tensor({m, d});
  h.table.k = k;
  h.table.valid_counts.assign(m, static_cast<std::uint32_t>(k));
  for (std::size_t i = 0; i < m * k; ++i) h.table.indices.push_back(static_cast<std::uint32_t>(i));
  return h;
}

Tensor permute_k(const Tensor& t, const std::vector<std::uint32_t>& perm) {
  const std::size_t m = t.dim(0), k = t.dim(1), d = t.dim(2);
  Tensor out(t.shape());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < d; ++c) out.at(i, j, c) = t.at(i, perm[j], c);
    }
  }
  return out;
}

Neighborhood permute_hood(const Neighborhood& h, const std::vector<std::uint32_t>& perm) {
  Neighborhood p = h;
  p.grouped = permute_k(h.grouped, perm);
  p.relpos = permute_k(h.relpos, perm);
  p.neighbor_positions = permute_k(h.neighbor_positions, perm);
  const std::size_t k = h.table.k;
  for (std::size_t i = 0; i < h.table.rows(); ++i) {
    for (std::size_t j = 0; j < k; ++j) p.table.indices[i * k + j] = h.table.indices[i * k + perm[j]];
  }
  return p;
}

BlockSpec aggregation_case(const std::string& name, std::size_t d, std::size_t k) {
  BlockSpec s;
  s.in_dim = d;
  s.neighbor_update.grouping = Grouping::knn;
  s.neighbor_update.k = k;
  const EpeSpec add{MlpSpec::stack(3, d, d, 1), EmbedMerge::add, position_input::relpos};
  if (name == "max") {
    s.position_embed.epe = add;
  } else if (name == "mean") {
    s.position_embed.epe = add;
    s.aggregation.op = MeanAgg{};
  } else if (name == "sum") {
    s.aggregation.op = SumAgg{};
  } else if (name == "position_pool") {
    s.position_embed.pp = PpSpec{true};
    s.aggregation.op = PositionPoolAgg{};
  } else if (name == "vsa") {
    s.position_embed.epe = add;
    s.aggregation.op = VsaAgg{MlpSpec::linear(d, d), MlpSpec::linear(d, d), MlpSpec::linear(d, d), 1.0f};
  } else if (name == "attentive_pool") {
    s.position_embed.epe = EpeSpec{MlpSpec::stack(3, 3, 3, 1), EmbedMerge::concat, position_input::relpos};
    s.aggregation.op = AttentivePoolAgg{MlpSpec::linear(d + 3, d + 3), 1.0f};
  } else if (name == "eff_pointconv") {
    s.aggregation.op = EffPointConvAgg{MlpSpec::stack(3, 4, 4, 1), 5};
  } else if (name == "kpconv") {
    s.aggregation.op = KpConvAgg{kpconv_kernel_points(0.3f), 0.3f, 5};
  } else {
    fail(ErrorKind::registry, "no aggregation case '" + name + "'");
  }
  return s;
}

double mask_normalization_error(const AttentionMask& mask) {
  const std::size_t m = mask.values.dim(0), k = mask.values.dim(1), d = mask.values.dim(2);
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += mask.values.at(i, j, c);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  return worst;
}

void set_matrix(ParamStore& store, const std::string& name, std::size_t d, float diag) {
  Tensor w({d, d});
  for (std::size_t i = 0; i < d; ++i) w.at(i, i) = diag;
  store[name + ".0.weight"] = std::move(w);
  store[name + ".0.bias"] = Tensor({d});
}

}  // namespace

std::vector<std::string> invariance_aggregations() {
  return {"max", "mean", "sum", "position_pool", "vsa", "attentive_pool", "eff_pointconv", "kpconv"};
}

CheckResult softmax_limit(std::uint64_t seed, std::size_t trials, std::size_t k, std::size_t d) {
  Rng rng(seed);
  BlockSpec spec;
  spec.in_dim = d;
  spec.neighbor_update.grouping = Grouping::knn;
  spec.neighbor_update.k = k;
  spec.position_embed.epe = EpeSpec{MlpSpec::linear(3, d), EmbedMerge::add, position_input::relpos};
  spec.aggregation.op = VsaAgg{MlpSpec::linear(d, d), MlpSpec::linear(d, d), MlpSpec::linear(d, d), 1e-4f};
  // q = 0, k = -I, w = I: the attention logits are f_j + e_j.
  ParamStore store;
  set_matrix(store, "agg.query", d, 0.0f);
  set_matrix(store, "agg.key", d, -1.0f);
  set_matrix(store, "agg.weight", d, 1.0f);
  const Params weights(store);
  double worst_mask = 0.0;
  CheckResult r = tolerance_check("softmax_limit_vsa_equals_max", trials, 1e-3, [&](std::size_t) {
    Neighborhood h = random_hood(rng, 1, k, d);
    Tensor e = rng.tensor({1, k, d});
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t top = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (h.grouped.at(0, j, c) + e.at(0, j, c) > h.grouped.at(0, top, c) + e.at(0, top, c)) top = j;
      }
      float second = -INFINITY;
      for (std::size_t j = 0; j < k; ++j) {
        if (j != top) second = std::max(second, h.grouped.at(0, j, c) + e.at(0, j, c));
      }
      const float gap = h.grouped.at(0, top, c) + e.at(0, top, c) - second;
      if (gap < 0.1f) h.grouped.at(0, top, c) += 0.11f - gap;
    }
    PositionEmbedding emb;
    emb.values = e;
    emb.merge = EmbedMerge::add;
    AttentionMask mask;
    const Tensor vsa = aggregate(h, emb, spec, weights, &mask);
    worst_mask = std::max(worst_mask, mask_normalization_error(mask));
    Tensor expect({1, d});
    for (std::size_t c = 0; c < d; ++c) {
      float mx = -INFINITY;
      for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, h.grouped.at(0, j, c) + e.at(0, j, c));
      expect.at(0, c) = mx;
    }
    return max_abs(vsa, expect);
  });
  if (r.passed && worst_mask > 1e-5) {
    r.passed = false;
    r.detail = "attention mask normalization error " + fmt(worst_mask);
  }
  return r;
}

std::vector<CheckResult> aggregation_invariance(std::uint64_t seed, std::size_t trials) {
  std::vector<CheckResult> out;
  for (const auto& name : invariance_aggregations()) {
    Rng rng(seed ^ fnv1a64(name));
    const bool exact = name == "max";
    double worst_mask = 0.0;
    CheckResult r =
        tolerance_check("aggregation_invariance_" + name, trials, exact ? 0.0 : 1e-5, [&](std::size_t t) {
          const std::size_t d = 6, k = 2 + rng.index(11), m = 3;
          const BlockSpec spec = aggregation_case(name, d, k);
          const ParamStore store = init_params(block_param_decls(spec, ""), seed + t);
          const Params w(store);
          const Neighborhood h = random_hood(rng, m, k, d);
          const Neighborhood p = permute_hood(h, rng.permutation(k));
          AttentionMask mask;
          const Tensor a = aggregate(h, position_embed(h, spec, w), spec, w, &mask);
          if (mask.values.size()) worst_mask = std::max(worst_mask, mask_normalization_error(mask));
          const Tensor b = aggregate(p, position_embed(p, spec, w), spec, w);
          if (exact) return a == b ? 0.0 : std::max(max_abs(a, b), 1e-30);
          return scaled_error(b, a);
        });
    if (r.passed && worst_mask > 1e-5) {
      r.passed = false;
      r.detail = "attention mask normalization error " + fmt(worst_mask);
    }
    out.push_back(std::move(r));
  }
  return out;
}

BlockSpec harness_block(std::string_view variant, std::size_t channels, std::size_t n_points, float radius,
                        std::size_t knn_k) {
  BlockContext ctx{channels, radius, knn_k};
  BlockSpec s = make_block(variant, ctx);
  if (s.neighbor_update.grouping == Grouping::ball) {
    ctx.k = n_points;
    s = make_block(variant, ctx);
  }
  const auto& op = s.aggregation.op;
  if (!std::holds_alternative<MaxAgg>(op) && !std::holds_alternative<XConvAgg>(op)) s.aggregation.mask_padding = true;
  return s;
}

std::vector<CheckResult> block_covariance(std::uint64_t seed, std::size_t trials) {
  std::vector<CheckResult> out;
  constexpr std::size_t kPoints = 20, kChannels = 6;
  for (const auto& info : list_variants()) {
    Rng rng(seed ^ fnv1a64(info.name));
    const BlockSpec spec = harness_block(info.name, kChannels, kPoints, 0.45f, 6);
    out.push_back(tolerance_check("block_covariance_" + info.name, trials, 1e-5, [&](std::size_t t) {
      const ParamStore store = init_params(block_param_decls(spec, ""), seed + t);
      const Params w(store);
      const PointCloud cloud = rng.cloud(kPoints, kChannels);
      const auto perm = rng.permutation(kPoints);
      const PointCloud a = run_block(cloud, spec, w);
      const PointCloud b = run_block(permute_cloud(cloud, perm), spec, w);
      return scaled_error(b.features, gather_rows(a.features, perm));
    }));
  }
  return out;
}

CheckResult order_commutation(std::uint64_t seed, std::size_t trials) {
  Rng rng(seed);
  return tolerance_check("order_commutation", trials, 1e-5, [&](std::size_t t) {
    const std::size_t n = 16 + rng.index(16), d = 2 + rng.index(6);
    const std::size_t hidden = 2 + rng.index(8), width = 2 + rng.index(8), layers = 1 + rng.index(2);
    BlockSpec a;
    a.in_dim = d;
    a.neighbor_update.mlp = MlpSpec::stack(d, hidden, width, layers);
    a.neighbor_update.grouping = rng.index(2) ? Grouping::ball : Grouping::knn;
    a.neighbor_update.radius = 0.3f;
    a.neighbor_update.k = 4 + rng.index(8);
    switch (rng.index(3)) {
      case 0:
        a.aggregation.op = MaxAgg{};
        break;
      case 1:
        a.aggregation.op = MeanAgg{};
        break;
      default:
        a.aggregation.op = SumAgg{};
    }
    a.aggregation.mask_padding = rng.index(2) == 1;
    if (rng.index(2)) a.point_update = {MlpSpec::stack(width, width, width, 1), false, rng.index(2) == 1};
    BlockSpec b = a;
    b.neighbor_update.order = UpdateOrder::group_before_mlp;
    const ParamStore store = init_params(block_param_decls(a, ""), seed + t);
    check_weights_match(block_param_decls(b, ""), store);
    const Params w(store);
    const PointCloud cloud = rng.cloud(n, d);
    return scaled_error(run_block(cloud, b, w).features, run_block(cloud, a, w).features);
  });
}

CheckResult neighbor_oracle(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  for (std::size_t t = 0; t < instances; ++t) {
    std::size_t n = 50 + rng.index(350);
    float radius = 0.05f + rng.uniform(0.0f, 0.25f);
    float cell = radius;
    Tensor ref;
    switch (t % 5) {
      case 0:  // uniform
        ref = rng.tensor({n, 3}, 0.0f, 1.0f);
        break;
      case 1: {  // lattice points on cell boundaries, radius a multiple of the cell
        cell = 0.1f;
        radius = cell * static_cast<float>(1 + rng.index(2));
        ref = Tensor({n, 3});
        for (auto& v : ref.data()) v = static_cast<float>(rng.index(6)) * cell - 0.2f;
        break;
      }
      case 2: {  // coincident clusters
        const Tensor sites = rng.tensor({5, 3}, 0.0f, 1.0f);
        ref = Tensor({n, 3});
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t s = rng.index(5);
          for (std::size_t a = 0; a < 3; ++a) ref.at(i, a) = sites.at(s, a);
        }
        cell = 0.02f + rng.uniform(0.0f, 0.3f);
        break;
      }
      case 3:  // radius spanning many cells
        ref = rng.tensor({n, 3}, -1.0f, 1.0f);
        radius = 0.4f;
        cell = radius / 6.0f;
        break;
      default:  // one cell holds everything
        ref = rng.tensor({n, 3}, 0.0f, 1.0f);
        cell = 10.0f;
        break;
    }
    const std::size_t extra = 20;
    Tensor query({n + extra, 3});
    std::copy(ref.data().begin(), ref.data().end(), query.data().begin());
    for (std::size_t i = n; i < n + extra; ++i) {
      for (std::size_t a = 0; a < 3; ++a) query.at(i, a) = rng.uniform(-0.3f, 1.3f);
    }
    const GridIndex grid = build_grid(ref, cell);
    const std::size_t cap = 1 + rng.index(40);
    const auto where = "instance " + std::to_string(t) + " (case " + std::to_string(t % 5) + ")";
    const NeighborTable brute_ball = ball_query(query, ref, radius, cap);
    const NeighborTable grid_ball = ball_query(query, grid, radius, cap);
    if (!same_table(brute_ball, grid_ball) || !same_table(brute_ball, reference::ball_query(query, ref, radius, cap))) {
      return make("neighbor_oracle", false, where + ": ball query differs from brute force");
    }
    const std::size_t k = 1 + rng.index(std::min<std::size_t>(n, 20));
    const NeighborTable brute_knn = knn(query, ref, k);
    const NeighborTable grid_knn = knn(query, grid, k);
    if (!same_table(brute_knn, grid_knn) || !same_table(brute_knn, reference::knn(query, ref, k))) {
      return make("neighbor_oracle", false, where + ": knn differs from brute force");
    }
    try {
      check_table(grid_ball, n);
      check_table(grid_knn, n);
    } catch (const Error& e) {
      return make("neighbor_oracle", false, where + ": " + e.what());
    }
    for (std::size_t i = 0; i < query.dim(0); ++i) {
      for (std::size_t j = 0; j < grid_ball.valid_counts[i]; ++j) {
        if (squared_distance(&query.data()[3 * i], &ref.data()[3 * grid_ball.at(i, j)]) > radius * radius) {
          return make("neighbor_oracle", false, where + ": ball neighbor outside radius");
        }
      }
      for (std::size_t j = 1; j < k; ++j) {
        if (squared_distance(&query.data()[3 * i], &ref.data()[3 * grid_knn.at(i, j)]) <
            squared_distance(&query.data()[3 * i], &ref.data()[3 * grid_knn.at(i, j - 1)])) {
          return make("neighbor_oracle", false, where + ": knn distances not sorted");
        }
      }
    }
  }
  return make("neighbor_oracle", true, std::to_string(instances) + " instances, grid == brute force == oracle");
}

CheckResult fps_oracle(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = 2 + rng.index(255);
    const std::size_t m = 1 + rng.index(n);
    const std::size_t start = rng.index(n);
    Tensor pos = rng.tensor({n, 3}, 0.0f, 1.0f);
    if (t % 4 == 3) {
      for (auto& v : pos.data()) v = static_cast<float>(rng.index(4)) * 0.25f;
    }
    if (farthest_point_sample(pos, m, start).indices != reference::fps(pos, m, start)) {
      return make("fps_oracle", false, "instance " + std::to_string(t) + " differs (n=" + std::to_string(n) +
                                           ", m=" + std::to_string(m) + ")");
    }
  }
  return make("fps_oracle", true, std::to_string(instances) + " instances identical to brute-force FPS");
}

CheckResult eff_pointconv_decoupling(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  return tolerance_check("eff_pointconv_decoupling", instances, 1e-4, [&](std::size_t) {
    const std::size_t rows = 1 + rng.index(16), k = 1 + rng.index(8), d_in = 1 + rng.index(8);
    const std::size_t d_mid = 1 + rng.index(8), d_out = 1 + rng.index(8);
    const Tensor m = rng.tensor({rows, k, d_mid});
    const Tensor f = rng.tensor({rows, k, d_in});
    const Tensor h = rng.tensor({d_mid * d_in, d_out});
    std::vector<std::uint32_t> counts(rows);
    for (auto& c : counts) c = static_cast<std::uint32_t>(1 + rng.index(k));
    return max_abs(eff_pointconv_apply(m, f, h, counts), reference::eff_pointconv(m, f, h, counts));
  });
}

CheckResult network_permutation(std::uint64_t seed, std::size_t trials) {
  Rng rng(seed);
  NetworkConfig cfg = family_config("S");
  Network net = build_network(cfg);
  init_weights(net, seed);
  const std::size_t n = 256;
  return tolerance_check("network_permutation", trials, 1e-4, [&](std::size_t) {
    const PointCloud cloud = rng.cloud(n, 3);
    const std::size_t start = rng.index(n);
    const auto perm = rng.permutation(n);
    std::size_t mapped = 0;
    while (perm[mapped] != start) ++mapped;
    const Tensor a = forward(net, cloud, start);
    const Tensor b = forward(net, permute_cloud(cloud, perm), mapped);
    return scaled_error(b, gather_rows(a, perm));
  });
}

CheckResult forward_determinism(std::uint64_t seed) {
  Rng rng(seed);
  Network a = build_network(family_config("S"));
  Network b = build_network(family_config("S"));
  init_weights(a, seed);
  init_weights(b, seed);
  if (a.weights != b.weights) return make("forward_determinism", false, "same seed produced different weights");
  const PointCloud cloud = rng.cloud(300, 3);
  if (!(forward(a, cloud) == forward(b, cloud))) {
    return make("forward_determinism", false, "two forwards differ");
  }
  return make("forward_determinism", true, "weights and outputs bit-identical");
}

namespace {

std::vector<CheckResult> numkernel_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  out.push_back(tolerance_check("softmax_normalized", 100, 1e-6, [&](std::size_t) {
    const std::size_t n = 1 + rng.index(64);
    const float temp = rng.uniform(0.05f, 2.0f);
    const Tensor x = rng.tensor({n}, -5.0f, 5.0f);
    const Tensor s = softmax_axis(x, 0, temp);
    const auto naive = reference::softmax_naive(x.values(), temp);
    double sum = 0.0, err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += s[i];
      err = std::max(err, std::abs(double(s[i]) - naive[i]));
    }
    return std::max(err, std::abs(sum - 1.0));
  }));
  out.push_back(tolerance_check("softmax_limit_scalar", 100, 1e-4, [&](std::size_t) {
    Tensor x = rng.tensor({32});
    const std::size_t top = rng.index(32);
    float mx = -INFINITY;
    for (std::size_t i = 0; i < 32; ++i) {
      if (i != top) mx = std::max(mx, x[i]);
    }
    x[top] = mx + 0.1f + rng.uniform(0.0f, 1.0f);
    const Tensor s = softmax_axis(x, 0, 1e-4f);
    double acc = 0.0;
    for (std::size_t i = 0; i < 32; ++i) acc += double(s[i]) * x[i];
    return std::abs(acc - double(x[top]));
  }));
  out.push_back(tolerance_check("mlp_identity", 20, 0.0, [&](std::size_t) {
    const std::size_t d = 1 + rng.index(8), layers = 1 + rng.index(3);
    MlpSpec spec = MlpSpec::stack(d, d, d, layers);
    spec.activation = Activation::none;
    ParamStore store;
    for (std::size_t l = 0; l < layers; ++l) {
      set_matrix(store, "m", d, 1.0f);
      const std::string p = "m." + std::to_string(l);
      store[p + ".weight"] = store["m.0.weight"];
      store[p + ".bias"] = Tensor({d});
      store[p + ".norm_scale"] = Tensor({d}, 1.0f);
      store[p + ".norm_shift"] = Tensor({d});
    }
    const Tensor x = rng.tensor({5, 4, d});
    return apply_mlp(x, spec, Params(store).sub("m")) == x ? 0.0 : 1.0;
  }));
  out.push_back(tolerance_check("max_permutation", 50, 0.0, [&](std::size_t) {
    const std::size_t k = 1 + rng.index(32);
    const Tensor x = rng.tensor({3, k, 4});
    return reduce(x, 1, ReduceMode::max) == reduce(permute_k(x, rng.permutation(k)), 1, ReduceMode::max) ? 0.0 : 1.0;
  }));
  out.push_back(tolerance_check("matmul_oracle_and_associativity", 20, 1e-4, [&](std::size_t) {
    const Tensor a = rng.tensor({8, 8}), b = rng.tensor({8, 8}), c = rng.tensor({8, 8});
    const double oracle = max_abs(matmul(a, b), reference::matmul_naive(a, b));
    return std::max(oracle * 100.0, max_abs(matmul(matmul(a, b), c), matmul(a, matmul(b, c))));
  }));
  return out;
}

std::vector<CheckResult> cloud_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  out.push_back(fps_oracle(seed, 30));
  out.push_back(tolerance_check("fps_relabel_covariance", 30, 0.0, [&](std::size_t) {
    const std::size_t n = 8 + rng.index(120), m = 1 + rng.index(n), start = rng.index(n);
    const Tensor pos = rng.tensor({n, 3}, 0.0f, 1.0f);
    const auto perm = rng.permutation(n);
    std::size_t mapped = 0;
    while (perm[mapped] != start) ++mapped;
    const auto a = farthest_point_sample(pos, m, start).indices;
    auto b = farthest_point_sample(gather_rows(pos, perm), m, mapped).indices;
    for (auto& v : b) v = perm[v];
    return a == b ? 0.0 : 1.0;
  }));
  out.push_back(tolerance_check("fps_min_distance_nonincreasing", 30, 0.0, [&](std::size_t) {
    const std::size_t n = 8 + rng.index(120);
    const Tensor pos = rng.tensor({n, 3}, 0.0f, 1.0f);
    const auto sel = farthest_point_sample(pos, n, 0).indices;
    float prev = INFINITY;
    for (std::size_t s = 1; s < n; ++s) {
      float d = INFINITY;
      for (std::size_t t = 0; t < s; ++t) d = std::min(d, squared_distance(&pos.data()[3 * sel[s]], &pos.data()[3 * sel[t]]));
      if (d > prev) return 1.0;
      prev = d;
    }
    return 0.0;
  }));
  out.push_back(tolerance_check("interpolation_weights_and_oracle", 30, 1e-5, [&](std::size_t) {
    const std::size_t n = 3 + rng.index(60), m = 1 + rng.index(60), d = 1 + rng.index(6);
    const PointCloud coarse = rng.cloud(n, d);
    const Tensor fine = rng.tensor({m, 3}, 0.0f, 1.0f);
    const auto w = interpolation_weights(coarse.positions, fine, 3);
    double err = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 3; ++j) s += w.weights[i * 3 + j];
      err = std::max(err, std::abs(s - 1.0) * 10.0);
    }
    const Tensor got = interpolate_features(coarse, fine, 3);
    return std::max(err, max_abs(got, reference::interpolate(coarse.positions, coarse.features, fine, 3)));
  }));
  return out;
}

std::vector<CheckResult> metablock_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  out.push_back(tolerance_check("neighbor_update_equivariance", 50, 0.0, [&](std::size_t t) {
    const std::size_t d = 1 + rng.index(6), k = 1 + rng.index(10);
    const MlpSpec mlp = MlpSpec::stack(d + 3, 8, 1 + rng.index(8), 1 + rng.index(2));
    const ParamStore store = init_params(mlp_param_decls(mlp, "mlp"), seed + t);
    const Tensor gathered = rng.tensor({4, k, d + 3});
    const auto perm = rng.permutation(k);
    const Params w = Params(store).sub("mlp");
    return apply_mlp(permute_k(gathered, perm), mlp, w) == permute_k(apply_mlp(gathered, mlp, w), perm) ? 0.0 : 1.0;
  }));
  for (auto& r : aggregation_invariance(seed, 200)) out.push_back(std::move(r));
  for (auto& r : block_covariance(seed, 10)) out.push_back(std::move(r));
  out.push_back(order_commutation(seed, 100));
  out.push_back(softmax_limit(seed, 200));
  out.push_back(eff_pointconv_decoupling(seed, 50));
  out.push_back(tolerance_check("kpconv_oracle", 30, 1e-4, [&](std::size_t) {
    const std::size_t rows = 1 + rng.index(8), k = 1 + rng.index(8), d_in = 1 + rng.index(6), d_out = 1 + rng.index(6);
    const KpConvAgg op{kpconv_kernel_points(0.3f), 0.3f, d_out};
    const Tensor relpos = rng.tensor({rows, k, 3}, -0.3f, 0.3f);
    const Tensor f = rng.tensor({rows, k, d_in});
    const Tensor w = rng.tensor({op.kernel_points.size(), d_in, d_out});
    std::vector<std::uint32_t> counts(rows, static_cast<std::uint32_t>(k));
    return max_abs(kpconv_apply(relpos, f, op, w, counts), reference::kpconv(relpos, f, op, w, counts));
  }));
  return out;
}

std::vector<CheckResult> zoo_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  const auto variants = list_variants();
  bool sorted = std::is_sorted(variants.begin(), variants.end(),
                               [](const VariantInfo& a, const VariantInfo& b) { return a.name < b.name; });
  std::size_t built = 0;
  for (const auto& v : variants) {
    try {
      make_block(v.name, 6);
      ++built;
    } catch (const Error&) {
    }
  }
  out.push_back(make("registry_roundtrip", sorted && built == variants.size(),
                     std::to_string(built) + "/" + std::to_string(variants.size()) + " variants build, listing " +
                         (sorted ? "sorted" : "unsorted")));

  const PointCloud cloud = rng.cloud(64, 6);
  std::size_t ok = 0;
  std::string first_bad;
  for (const auto& v : variants) {
    const BlockSpec spec = make_block(v.name, BlockContext{6, 0.3f, 16});
    const ParamStore store = init_params(block_param_decls(spec, ""), seed);
    const PointCloud a = run_block(cloud, spec, Params(store));
    const PointCloud b = run_block(cloud, spec, Params(store));
    if (a.features == b.features && a.features.all_finite()) {
      ++ok;
    } else if (first_bad.empty()) {
      first_bad = v.name;
    }
  }
  out.push_back(make("zoo_forward_deterministic_finite", ok == variants.size(),
                     std::to_string(ok) + "/" + std::to_string(variants.size()) + " variants" +
                         (first_bad.empty() ? "" : ", first failure " + first_bad)));

  {
    BlockSpec reduced = make_block("pointmetabase", 6);
    reduced.point_update.mlp = MlpSpec::stack(6, 6, 6, 1);
    reduced.point_update.residual = false;
    const BlockSpec plain = make_block("plain_epe_max", 6);
    const ParamStore store = init_params(block_param_decls(plain, ""), seed);
    check_weights_match(block_param_decls(reduced, ""), store);
    const bool same = run_block(cloud, reduced, Params(store)).features == run_block(cloud, plain, Params(store)).features;
    out.push_back(make("plain_epe_max_is_reduced_pointmetabase", same, same ? "identical outputs" : "outputs differ"));
  }
  {
    BlockSpec swapped = make_block("point_transformer", 6);
    swapped.aggregation.op = MaxAgg{};
    const BlockSpec pt_max = make_block("point_transformer_max", 6);
    const ParamStore store = init_params(block_param_decls(pt_max, ""), seed);
    const Tensor a = run_block(cloud, swapped, Params(store)).features;
    const Tensor b = run_block(cloud, pt_max, Params(store)).features;
    // Max(f + e) computed directly from the neighborhood.
    const Neighborhood h = neighbor_update(cloud, pt_max, Params(store));
    const PositionEmbedding e = position_embed(h, pt_max, Params(store));
    Tensor direct({h.grouped.dim(0), h.grouped.dim(2)}, -INFINITY);
    for (std::size_t i = 0; i < h.grouped.dim(0); ++i) {
      for (std::size_t j = 0; j < h.grouped.dim(1); ++j) {
        for (std::size_t c = 0; c < h.grouped.dim(2); ++c) {
          direct.at(i, c) = std::max(direct.at(i, c), h.grouped.at(i, j, c) + e.values->at(i, j, c));
        }
      }
    }
    const bool same = a == b && aggregate(h, e, pt_max, Params(store)) == direct;
    out.push_back(make("point_transformer_vsa_to_max", same, same ? "Max(f + e) form reproduced" : "outputs differ"));
  }
  return out;
}

std::vector<CheckResult> network_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  {
    NetworkConfig cfg = family_config("L");
    Network net = build_network(cfg);
    init_weights(net, seed);
    const std::size_t n = 300;
    std::vector<std::size_t> levels;
    const Tensor y = forward(net, rng.cloud(n, 3), 0, &levels);
    const auto expect = level_sizes(cfg, n);
    const bool ok = levels == std::vector<std::size_t>(expect.begin(), expect.end()) && y.dim(0) == n;
    out.push_back(make("stage_counts_and_decoder_rows", ok,
                       "levels " + std::to_string(levels.size() == 5 ? levels[4] : 0) + " coarsest, output rows " +
                           std::to_string(y.dim(0))));
  }
  {
    bool ok = true;
    std::string detail = "analysis closed form == declared tensors for all families";
    for (const char* fam : {"S", "L", "XL", "XXL"}) {
      const Network net = build_network(family_config(fam));
      const auto a = count_params(net).total_params;
      if (a != count_flops(net, 4096).total_params || a != count_flops(net, 65536).total_params) {
        ok = false;
        detail = std::string("mismatch for ") + fam;
      }
    }
    out.push_back(make("params_two_walks_agree", ok, detail));
  }
  {
    std::uint64_t prev = 0;
    bool ok = true;
    std::string detail;
    for (const char* fam : {"S", "L", "XL", "XXL"}) {
      const auto p = count_params(build_network(family_config(fam))).total_params;
      ok = ok && p > prev;
      detail += std::string(detail.empty() ? "" : " < ") + fam + "=" + std::to_string(p);
      prev = p;
    }
    out.push_back(make("family_monotone", ok, detail));
  }
  out.push_back(network_permutation(seed, 3));
  out.push_back(forward_determinism(seed));
  return out;
}

std::vector<CheckResult> analysis_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  {
    bool ok = true;
    for (std::size_t k : {1, 8, 16, 32, 64}) ok = ok && verify_k_reduction(32, 1024, k, 2) == double(k);
    for (int t = 0; t < 20; ++t) {
      const std::size_t k = 1 + rng.index(64);
      ok = ok && verify_k_reduction(1 + rng.index(256), 1 + rng.index(100000), k, 1 + rng.index(4)) == double(k);
    }
    out.push_back(make("k_reduction_exact", ok, ok ? "ratio == k for all cases" : "ratio differs from k"));
  }
  {
    const Network net = build_network(family_config("L"));
    std::uint64_t prev = 0;
    bool mono = true, totals = true;
    for (std::size_t n : {256, 1024, 4096, 16384, 65536}) {
      const CostReport r = count_flops(net, n);
      mono = mono && r.total_flops > prev;
      prev = r.total_flops;
      std::uint64_t p = 0, f = 0;
      for (const auto& row : r.rows) {
        p += row.params;
        f += row.flops;
      }
      totals = totals && p == r.total_params && f == r.total_flops;
    }
    out.push_back(make("flops_monotone_in_n", mono, mono ? "strictly increasing over 256..65536" : "not monotone"));
    out.push_back(make("totals_equal_row_sums", totals, totals ? "all reports consistent" : "row sums differ"));
  }
  {
    const auto ratio = [](std::size_t n) {
      const double a = double(count_flops(build_network(family_config("L")), n).total_flops);
      const double b = double(count_flops(build_network(family_config("L", "pointnext")), n).total_flops);
      return a / b;
    };
    const double r16 = ratio(16384), r4 = ratio(4096);
    const bool ok = r16 >= 0.09 && r16 <= 0.17 && std::abs(r16 - r4) < 0.02;
    out.push_back(make("pointmetabase_vs_pointnext_flops", ok, "ratio " + fmt(r16) + " at 16384, " + fmt(r4) + " at 4096"));
  }
  return out;
}

}  // namespace

std::vector<std::string> suite_names() { return {"numkernel", "cloud", "neighbors", "metablock", "zoo", "network", "analysis"}; }

std::vector<CheckResult> run_suite(std::string_view name, std::uint64_t seed) {
  if (name == "all") {
    std::vector<CheckResult> all;
    for (const auto& s : suite_names()) {
      for (auto& r : run_suite(s, seed)) all.push_back(std::move(r));
    }
    return all;
  }
  if (name == "numkernel") return numkernel_suite(seed);
  if (name == "cloud") return cloud_suite(seed);
  if (name == "neighbors") return {neighbor_oracle(seed, 200)};
  if (name == "metablock") return metablock_suite(seed);
  if (name == "zoo") return zoo_suite(seed);
  if (name == "network") return network_suite(seed);
  if (name == "analysis") return analysis_suite(seed);
  fail(ErrorKind::registry, "unknown check suite '" + std::string(name) + "'");
}

bool report(std::ostream& os, const std::vector<CheckResult>& results) {
  std::size_t passed = 0;
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    passed += r.passed;
  }
  os << passed << "/" << results.size() << " checks passed\n";
  return passed == results.size();
}

}  // namespace pmeta::checks
