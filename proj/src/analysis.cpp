#include "pointmeta/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <variant>

#include "pointmeta/neighbors.hpp"

namespace pmeta {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::uint64_t mac(std::uint64_t x, CountingMode mode) { return mode == CountingMode::macs ? x : 2 * x; }

std::uint64_t search_cost(const BlockSpec& spec, std::size_t n_query, std::size_t n_ref, CountingMode mode) {
  const std::uint64_t width = spec.neighbor_update.grouping == Grouping::feature_knn ? spec.in_dim : 3;
  return mac(std::uint64_t(n_query) * n_ref * width, mode);
}

}  // namespace

std::uint64_t mlp_params(const MlpSpec& spec) {
  validate_mlp(spec);
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::uint64_t in = spec.layer_dims[l], out = spec.layer_dims[l + 1];
    total += in * out + out;
    if (spec.with_norm) total += 2 * out;
  }
  return total;
}

std::uint64_t mlp_flops(const MlpSpec& spec, std::uint64_t rows, CountingMode mode) {
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::uint64_t in = spec.layer_dims[l], out = spec.layer_dims[l + 1];
    total += mac(rows * in * out, mode);
    if (mode == CountingMode::flops2x) total += rows * out;
  }
  return total;
}

std::uint64_t block_params(const BlockSpec& spec) {
  const BlockDims dims = block_dims(spec);
  std::uint64_t total = 0;
  if (spec.neighbor_update.mlp) total += mlp_params(*spec.neighbor_update.mlp);
  if (spec.position_embed.epe) total += mlp_params(spec.position_embed.epe->mlp);
  const std::uint64_t m = dims.merged;
  total += std::visit(
      overloaded{[](const MaxAgg&) -> std::uint64_t { return 0; }, [](const MeanAgg&) -> std::uint64_t { return 0; },
                 [](const SumAgg&) -> std::uint64_t { return 0; },
                 [](const PositionPoolAgg&) -> std::uint64_t { return 0; },
                 [](const VsaAgg& op) { return mlp_params(op.query) + mlp_params(op.key) + mlp_params(op.weight); },
                 [](const AttentivePoolAgg& op) { return mlp_params(op.score); },
                 [&](const XConvAgg& op) {
                   const std::uint64_t k = spec.neighbor_update.k;
                   return mlp_params(op.transform) + k * m * op.out_dim + op.out_dim;
                 },
                 [&](const EffPointConvAgg& op) {
                   return mlp_params(op.weight_net) + std::uint64_t(op.weight_net.out_dim()) * m * op.out_dim;
                 },
                 [&](const KpConvAgg& op) { return std::uint64_t(op.kernel_points.size()) * m * op.out_dim; }},
      spec.aggregation.op);
  if (spec.point_update.mlp) total += mlp_params(*spec.point_update.mlp);
  if (dims.projection) total += std::uint64_t(dims.input) * dims.output + dims.output;
  return total;
}

std::uint64_t block_flops(const BlockSpec& spec, std::size_t n_query, std::size_t n_ref, const CountOptions& opt) {
  const BlockDims dims = block_dims(spec);
  const CountingMode mode = opt.mode;
  const auto& nu = spec.neighbor_update;
  const std::uint64_t q = n_query, k = nu.k, qk = q * k;
  const std::uint64_t g = dims.grouped, m = dims.merged;
  std::uint64_t total = 0;

  if (nu.mlp) total += mlp_flops(*nu.mlp, nu.order == UpdateOrder::mlp_before_group ? n_ref : qk, mode);
  if (spec.position_embed.epe) {
    total += mlp_flops(spec.position_embed.epe->mlp, qk, mode);
    if (spec.position_embed.epe->merge == EmbedMerge::add) total += qk * g;
  }
  if (spec.position_embed.pp) total += qk * m;

  total += std::visit(
      overloaded{[&](const MaxAgg&) { return qk * m; }, [&](const MeanAgg&) { return qk * m; },
                 [&](const SumAgg&) { return qk * m; }, [&](const PositionPoolAgg&) { return qk * m; },
                 [&](const VsaAgg& op) {
                   std::uint64_t c = mlp_flops(op.query, q, mode) + mlp_flops(op.key, qk, mode) +
                                     mlp_flops(op.weight, qk, mode);
                   c += 2 * qk * g;  // q - k + e
                   c += 5 * qk * g;  // softmax
                   if (spec.position_embed.epe) c += qk * g;  // f + e
                   return c + mac(qk * g, mode);
                 },
                 [&](const AttentivePoolAgg& op) {
                   return mlp_flops(op.score, qk, mode) + 5 * qk * m + mac(qk * m, mode);
                 },
                 [&](const XConvAgg& op) {
                   return mlp_flops(op.transform, q, mode) + mac(qk * k * m, mode) +
                          mlp_flops(MlpSpec::linear(k * m, op.out_dim), q, mode);
                 },
                 [&](const EffPointConvAgg& op) {
                   const std::uint64_t mid = op.weight_net.out_dim();
                   return mlp_flops(op.weight_net, qk, mode) + mac(qk * mid * m, mode) +
                          mac(q * mid * m * op.out_dim, mode);
                 },
                 [&](const KpConvAgg& op) {
                   const std::uint64_t l = op.kernel_points.size();
                   return mac(qk * l * 3, mode) + mac(qk * l * m, mode) + mac(q * l * m * op.out_dim, mode);
                 }},
      spec.aggregation.op);

  if (spec.point_update.mlp) total += mlp_flops(*spec.point_update.mlp, q, mode);
  if (spec.point_update.residual) {
    total += q * dims.output;
    if (dims.projection) total += mlp_flops(MlpSpec::linear(dims.input, dims.output), q, mode);
  }
  if (opt.include_search) total += search_cost(spec, n_query, n_ref, mode);
  return total;
}

CostReport count_flops(const Network& net, std::size_t n_points, const CountOptions& opt) {
  const NetworkConfig& cfg = net.config;
  const auto sizes = level_sizes(cfg, n_points);
  if (sizes[4] == 0 || n_points < cfg.stride * cfg.stride * cfg.stride * cfg.stride) {
    fail(ErrorKind::config, "cost estimate needs at least stride^4 points");
  }
  const CountingMode mode = opt.mode;
  CostReport report;
  report.mode = mode;
  report.n_points = n_points;
  report.k = cfg.k;
  report.stride = cfg.stride;
  // Unbuilt parts (empty stem, stages without a reduction) contribute nothing.
  if (!net.stem.layer_dims.empty()) {
    report.add({"stem", mlp_params(net.stem), mlp_flops(net.stem, n_points, mode)});
  }
  for (std::size_t s = 0; s < 4; ++s) {
    const Stage& st = net.stages[s];
    if (st.reduction.in_dim == 0) continue;
    std::uint64_t sa = block_flops(st.reduction, sizes[s + 1], sizes[s], opt);
    if (opt.include_search) sa += mac(std::uint64_t(sizes[s]) * sizes[s + 1] * 3, mode);
    report.add({reduction_path(s + 1), block_params(st.reduction), sa});
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      report.add({block_path(s + 1, b), block_params(st.blocks[b]),
                  block_flops(st.blocks[b], sizes[s + 1], sizes[s + 1], opt)});
    }
  }
  std::size_t head_rows = n_points;
  if (cfg.head == HeadKind::pooled_logits) {
    head_rows = 1;
  }
  for (const auto& unit : net.decoder) {
    const std::uint64_t fine = sizes[unit.level], coarse = sizes[unit.level + 1];
    std::uint64_t c = mac(fine * 3 * unit.coarse_width, mode) + mlp_flops(unit.mlp, fine, mode);
    if (opt.include_search) c += mac(fine * coarse * 3, mode);
    report.add({decoder_path(unit.level), mlp_params(unit.mlp), c});
  }
  if (net.head) {
    std::uint64_t c = mlp_flops(*net.head, head_rows, mode);
    if (cfg.head == HeadKind::pooled_logits) c += std::uint64_t(sizes[4]) * net.level_width(4);
    report.add({"head", mlp_params(*net.head), c});
  }
  return report;
}

double verify_k_reduction(std::size_t d, std::size_t n, std::size_t k, std::size_t l) {
  if (d == 0 || n == 0 || k == 0 || l == 0) fail(ErrorKind::parameter, "d, n, k and l must be positive");
  const MlpSpec mlp = MlpSpec::stack(d, d, d, l);
  BlockSpec before;
  before.in_dim = d;
  before.neighbor_update.mlp = mlp;
  before.neighbor_update.k = k;
  BlockSpec after = before;
  after.neighbor_update.order = UpdateOrder::group_before_mlp;
  // Only the neighbor-MLP term differs between the two orders.
  const auto nu_term = [&](const BlockSpec& s) {
    BlockSpec bare = s;
    const std::uint64_t with = block_flops(bare, n, n);
    bare.neighbor_update.mlp.reset();
    bare.in_dim = d;
    return with - block_flops(bare, n, n);
  };
  return static_cast<double>(nu_term(after)) / static_cast<double>(nu_term(before));
}

std::vector<VariantCost> compare_variants(const std::vector<std::string>& ids, const NetworkConfig& tmpl,
                                          std::size_t n_points, const CountOptions& opt) {
  std::vector<VariantCost> out;
  for (const auto& id : ids) {
    NetworkConfig cfg = tmpl;
    cfg.block_variant = canonical_variant(id);
    const Network net = build_network(cfg);
    out.push_back({cfg.block_variant, count_flops(net, n_points, opt)});
  }
  return out;
}

void write_cost_table(std::ostream& os, const std::vector<VariantCost>& costs) {
  os << "variant\tparams\tflops\tn_points\tmode\n";
  for (const auto& c : costs) {
    os << c.variant << '\t' << c.report.total_params << '\t' << c.report.total_flops << '\t' << c.report.n_points
       << '\t' << counting_mode_name(c.report.mode) << '\n';
  }
}

void write_cost_records(std::ostream& os, const std::vector<VariantCost>& costs, bool with_rows) {
  for (const auto& c : costs) {
    os << "variant=" << c.variant << " params=" << c.report.total_params << " flops=" << c.report.total_flops
       << " n_points=" << c.report.n_points << " mode=" << counting_mode_name(c.report.mode) << " k=" << c.report.k
       << " stride=" << c.report.stride << '\n';
    if (!with_rows) continue;
    for (const auto& r : c.report.rows) {
      os << "layer variant=" << c.variant << " path=" << r.path << " params=" << r.params << " flops=" << r.flops
         << '\n';
    }
  }
}

float radius_for_mean_neighbors(std::size_t n, double target) {
  return static_cast<float>(std::cbrt(3.0 * target / (4.0 * std::numbers::pi * double(n))));
}

namespace {

Tensor uniform_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t({n, 3});
  for (auto& v : t.data()) v = static_cast<float>(rng() >> 40) * 0x1.0p-24f;
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

template <class F>
double time_once(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchResult> bench_neighbors(const std::vector<std::size_t>& n_points, float radius, std::size_t k,
                                         std::size_t repetitions, std::uint64_t seed, std::size_t max_queries) {
  if (repetitions < 3) fail(ErrorKind::parameter, "benchmark needs at least 3 repetitions");
  if (k == 0) fail(ErrorKind::parameter, "benchmark k must be positive");
  std::vector<BenchResult> out;
  for (std::size_t n : n_points) {
    if (n == 0) fail(ErrorKind::parameter, "benchmark point counts must be positive");
    const float r = radius > 0.0f ? radius : radius_for_mean_neighbors(n, double(k));
    const Tensor cloud = uniform_cloud(n, seed ^ n);
    const std::size_t nq = std::min(n, max_queries);
    const Tensor query = Tensor({nq, 3}, std::vector<float>(cloud.data().begin(), cloud.data().begin() + 3 * nq));

    const NeighborTable brute = ball_query(query, cloud, r, k);
    const NeighborTable fast = ball_query(query, build_grid(cloud, r), r, k);
    if (brute.indices != fast.indices || brute.valid_counts != fast.valid_counts) {
      fail(ErrorKind::numeric, "grid ball query disagrees with brute force at n=" + std::to_string(n));
    }
    double mean = 0.0;
    for (auto c : brute.valid_counts) mean += c;
    mean /= double(nq);

    BenchResult b{"brute", n, nq, r, k, {}, 0.0, 1.0, mean};
    BenchResult g{"grid", n, nq, r, k, {}, 0.0, 1.0, mean};
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      b.times_s.push_back(time_once([&] { (void)ball_query(query, cloud, r, k); }));
      g.times_s.push_back(time_once([&] { (void)ball_query(query, build_grid(cloud, r), r, k); }));
    }
    b.median_s = median(b.times_s);
    g.median_s = median(g.times_s);
    g.speedup = g.median_s > 0.0 ? b.median_s / g.median_s : 0.0;
    out.push_back(std::move(b));
    out.push_back(std::move(g));
  }
  return out;
}

void write_bench_table(std::ostream& os, const std::vector<BenchResult>& results) {
  os << "method\tn_points\tn_queries\tradius\tk\tmean_neighbors\tmedian_s\tspeedup\ttimes_s\n";
  for (const auto& r : results) {
    os << r.method << '\t' << r.n_points << '\t' << r.n_queries << '\t' << r.radius << '\t' << r.k << '\t'
       << r.mean_neighbors << '\t' << r.median_s << '\t' << r.speedup << '\t';
    for (std::size_t i = 0; i < r.times_s.size(); ++i) os << (i ? "," : "") << r.times_s[i];
    os << '\n';
  }
}

}  // namespace pmeta
