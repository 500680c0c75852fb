#include <doctest.h>

#include <cmath>

#include "pointmeta/checks.hpp"
#include "pointmeta/metablock.hpp"
#include "pointmeta/reference.hpp"

using namespace pmeta;

namespace {

BlockSpec bare(std::size_t d, Grouping g = Grouping::knn, std::size_t k = 4) {
  BlockSpec s;
  s.in_dim = d;
  s.neighbor_update.grouping = g;
  s.neighbor_update.k = k;
  s.neighbor_update.radius = 0.5f;
  return s;
}

ParamStore weights_for(const BlockSpec& s, std::uint64_t seed = 9) { return init_params(block_param_decls(s, ""), seed); }

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::numeric;
}

std::size_t decl_total(const std::vector<ParamDecl>& decls, std::string_view prefix) {
  std::size_t n = 0;
  for (const auto& d : decls) {
    if (d.name.rfind(prefix, 0) == 0) n += shape_count(d.shape);
  }
  return n;
}

}  // namespace

TEST_CASE("no-MLP neighbor update is a pure gather") {
  checks::Rng rng(1);
  const PointCloud c = rng.cloud(20, 5);
  const BlockSpec s = bare(5);
  const ParamStore w;
  const Neighborhood h = neighbor_update(c, s, Params(w));
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t a = 0; a < 5; ++a) CHECK(h.grouped.at(i, j, a) == c.features.at(h.table.at(i, j), a));
      for (std::size_t a = 0; a < 3; ++a) {
        CHECK(h.relpos.at(i, j, a) == c.positions.at(h.table.at(i, j), a) - c.positions.at(i, a));
      }
    }
  }
}

TEST_CASE("neighbor-update orders commute for pointwise MLPs") {
  checks::Rng rng(2);
  const PointCloud c = rng.cloud(24, 6);
  BlockSpec before = bare(6);
  before.neighbor_update.mlp = MlpSpec::stack(6, 8, 8, 2);
  BlockSpec after = before;
  after.neighbor_update.order = UpdateOrder::group_before_mlp;
  const ParamStore w = weights_for(before);
  const Tensor a = neighbor_update(c, before, Params(w)).grouped;
  const Tensor b = neighbor_update(c, after, Params(w)).grouped;
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-5 * std::max(1.0f, std::abs(b[i])));

  ParamStore id;
  id["nu.mlp.0.weight"] = Tensor({6, 6});
  for (std::size_t i = 0; i < 6; ++i) id["nu.mlp.0.weight"].at(i, i) = 1.0f;
  id["nu.mlp.0.bias"] = Tensor({6});
  MlpSpec ident = MlpSpec::linear(6, 6);
  before.neighbor_update.mlp = after.neighbor_update.mlp = ident;
  CHECK(neighbor_update(c, before, Params(id)).grouped == neighbor_update(c, after, Params(id)).grouped);
}

TEST_CASE("spec validation") {
  BlockSpec s = bare(4);
  s.position_embed.ipe = position_input::relpos;
  s.neighbor_update.mlp = MlpSpec::stack(7, 4, 4, 1);
  CHECK(kind_of([&] { (void)block_dims(s); }) == ErrorKind::spec);

  BlockSpec pp = bare(4);
  pp.aggregation.op = PositionPoolAgg{};
  CHECK(kind_of([&] { (void)block_dims(pp); }) == ErrorKind::spec);
  pp.position_embed.pp = PpSpec{true};
  CHECK(kind_of([&] { (void)block_dims(pp); }) == ErrorKind::spec);  // 4 channels not divisible by 3

  BlockSpec epe = bare(4);
  epe.position_embed.epe = EpeSpec{MlpSpec::stack(3, 5, 5, 1), EmbedMerge::add};
  CHECK(kind_of([&] { (void)block_dims(epe); }) == ErrorKind::dimension);

  BlockSpec res = bare(4);
  res.point_update.mlp = MlpSpec::stack(4, 8, 8, 1);
  res.point_update.residual = true;
  CHECK(block_dims(res).projection);
}

TEST_CASE("position embedding examples") {
  const Tensor zero({2, 3, 3});
  EpeSpec e{MlpSpec::stack(3, 4, 4, 1), EmbedMerge::add};
  PositionEmbedSpec pes;
  pes.epe = e;
  ParamStore w = init_params(mlp_param_decls(e.mlp, "pe.epe"), 3);
  for (auto& [name, t] : w) {
    if (name.ends_with("bias")) t = Tensor(t.shape());
  }
  const auto emb = position_embed(zero, zero, Tensor({2, 3}), 4, pes, Params(w));
  REQUIRE(emb.values);
  for (float v : emb.values->data()) CHECK(v == 0.0f);

  checks::Rng rng(4);
  const Tensor r = rng.tensor({2, 3, 3});
  CHECK(position_pool_weights(r, 3, PpSpec{true}) == r);
  CHECK(position_pool_weights(r, 3, PpSpec{false}) == r);
  const Tensor blocks = position_pool_weights(r, 6, PpSpec{true});
  const Tensor cyc = position_pool_weights(r, 6, PpSpec{false});
  CHECK(blocks.at(1, 2, 1) == r.at(1, 2, 0));
  CHECK(blocks.at(1, 2, 2) == r.at(1, 2, 1));
  CHECK(cyc.at(1, 2, 3) == r.at(1, 2, 0));
  CHECK(cyc.at(1, 2, 5) == r.at(1, 2, 2));
}

TEST_CASE("concat-merged embedding slices recover both parts") {
  checks::Rng rng(5);
  const PointCloud c = rng.cloud(12, 4);
  BlockSpec s = bare(4, Grouping::knn, 3);
  s.position_embed.epe = EpeSpec{MlpSpec::stack(3, 2, 2, 1), EmbedMerge::concat};
  const ParamStore w = weights_for(s);
  const BlockDims dims = block_dims(s);
  CHECK(dims.merged == 6);
  CHECK(dims.aggregated == 6);
  const Neighborhood h = neighbor_update(c, s, Params(w));
  const auto emb = position_embed(h, s, Params(w));
  const Tensor out = aggregate(h, emb, s, Params(w));
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t a = 0; a < 4; ++a) {
      float m = -INFINITY;
      for (std::size_t j = 0; j < 3; ++j) m = std::max(m, h.grouped.at(i, j, a));
      CHECK(out.at(i, a) == m);
    }
    for (std::size_t a = 0; a < 2; ++a) {
      float m = -INFINITY;
      for (std::size_t j = 0; j < 3; ++j) m = std::max(m, emb.values->at(i, j, a));
      CHECK(out.at(i, 4 + a) == m);
    }
  }
}

TEST_CASE("max over identical neighbor rows returns the row") {
  const PointCloud c(Tensor::from_rows({{0, 0, 0}, {0.1f, 0, 0}, {0, 0.1f, 0}}),
                     Tensor::from_rows({{1, -2}, {1, -2}, {1, -2}}));
  const ParamStore w;
  const PointCloud out = run_block(c, bare(2, Grouping::ball, 3), Params(w));
  CHECK(out.features == c.features);
  CHECK(out.positions == c.positions);
}

TEST_CASE("vsa over one neighbor returns f plus e") {
  checks::Rng rng(6);
  const PointCloud c = rng.cloud(10, 4);
  BlockSpec s = bare(4, Grouping::knn, 1);
  s.position_embed.epe = EpeSpec{MlpSpec::stack(3, 4, 4, 1), EmbedMerge::add};
  s.aggregation.op = VsaAgg{MlpSpec::linear(4, 4), MlpSpec::linear(4, 4), MlpSpec::linear(4, 4), 1.0f};
  const ParamStore w = weights_for(s);
  const Neighborhood h = neighbor_update(c, s, Params(w));
  const auto emb = position_embed(h, s, Params(w));
  AttentionMask mask;
  const Tensor out = aggregate(h, emb, s, Params(w), &mask);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t a = 0; a < 4; ++a) CHECK(out.at(i, a) == h.grouped.at(i, 0, a) + emb.values->at(i, 0, a));
  }
  for (float v : mask.values.data()) CHECK(v == 1.0f);
}

TEST_CASE("attention masks are normalized along K") {
  checks::Rng rng(7);
  const PointCloud c = rng.cloud(16, 6);
  BlockSpec s = bare(6, Grouping::knn, 5);
  s.position_embed.epe = EpeSpec{MlpSpec::stack(3, 6, 6, 1), EmbedMerge::add};
  s.aggregation.op = VsaAgg{MlpSpec::linear(6, 6), MlpSpec::linear(6, 6), MlpSpec::linear(6, 6), 0.5f};
  const ParamStore w = weights_for(s);
  const Neighborhood h = neighbor_update(c, s, Params(w));
  AttentionMask mask;
  (void)aggregate(h, position_embed(h, s, Params(w)), s, Params(w), &mask);
  CHECK(mask.temperature == 0.5f);
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t a = 0; a < 6; ++a) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) sum += mask.values.at(i, j, a);
      CHECK(std::abs(sum - 1.0) <= 1e-5);
    }
  }
}

TEST_CASE("softmax-limit reduction to max") {
  const auto r = checks::softmax_limit(17, 50);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("point update examples") {
  checks::Rng rng(8);
  const Tensor f = rng.tensor({5, 4});
  BlockSpec none = bare(4);
  const ParamStore empty;
  CHECK(point_update(f, f, none, Params(empty)) == f);

  BlockSpec res = bare(4);
  res.point_update.mlp = MlpSpec::stack(4, 4, 4, 2);
  res.point_update.residual = true;
  ParamStore zero = weights_for(res);
  for (auto& [name, t] : zero) {
    if (name.ends_with("weight") || name.ends_with("bias")) t = Tensor(t.shape());
  }
  CHECK(point_update(rng.tensor({5, 4}), f, res, Params(zero)) == f);
}

TEST_CASE("inverted bottleneck parameter layout") {
  BlockSpec s = bare(32);
  s.point_update.mlp = MlpSpec::stack(32, 128, 32, 2);
  s.point_update.inverted_bottleneck = true;
  const auto decls = block_param_decls(s, "b");
  CHECK(decl_total(decls, "b.pu.mlp") == 32 * 128 + 128 + 128 * 32 + 32 + 2 * 128 + 2 * 32);
}

TEST_CASE("hand-computed set abstraction on two points") {
  const PointCloud c(Tensor::from_rows({{0, 0, 0}, {1, 0, 0}}), Tensor::from_rows({{1}, {2}}));
  BlockSpec s = bare(1, Grouping::ball, 2);
  s.neighbor_update.radius = 2.0f;
  s.neighbor_update.order = UpdateOrder::group_before_mlp;
  s.position_embed.ipe = position_input::relpos;
  s.neighbor_update.mlp = MlpSpec{{4, 1}, false};
  s.point_update.mlp = MlpSpec{{1, 1}, false};

  ParamStore w;
  w["nu.mlp.0.weight"] = Tensor({4, 1}, std::vector<float>{1, 1, 0, 0});
  w["nu.mlp.0.bias"] = Tensor({1}, -0.5f);
  w["pu.mlp.0.weight"] = Tensor({1, 1}, 2.0f);
  w["pu.mlp.0.bias"] = Tensor({1}, 1.0f);

  // point 0: rows [1,0,0,0] -> 0.5 and [2,1,0,0] -> 2.5; max 2.5; 2*2.5+1 = 6
  // point 1: rows [1,-1,0,0] -> 0 and [2,0,0,0] -> 1.5; max 1.5; 2*1.5+1 = 4
  const PointCloud out = run_block(c, s, Params(w));
  CHECK(out.features == Tensor::from_rows({{6}, {4}}));
}

TEST_CASE("identity block leaves features unchanged") {
  checks::Rng rng(9);
  const PointCloud c = rng.cloud(15, 3);
  const ParamStore w;
  CHECK(run_block(c, bare(3, Grouping::knn, 1), Params(w)).features == c.features);
}

TEST_CASE("kpconv kernel points") {
  const auto pts = kpconv_kernel_points(0.2f);
  REQUIRE(pts.size() == 13);
  CHECK(pts[0] == Vec3{0, 0, 0});
  for (std::size_t l = 1; l < 13; ++l) {
    CHECK(std::hypot(pts[l][0], pts[l][1], pts[l][2]) == doctest::Approx(0.2).epsilon(1e-6));
  }
}

TEST_CASE("decoupled pointconv and kpconv against direct loops") {
  checks::Rng rng(10);
  const std::size_t m = 6, k = 5, dm = 3, di = 4, dout = 7;
  const Tensor mm = rng.tensor({m, k, dm}), f = rng.tensor({m, k, di}), h = rng.tensor({dm * di, dout});
  const std::vector<std::uint32_t> counts(m, k);
  const Tensor a = eff_pointconv_apply(mm, f, h, counts), b = reference::eff_pointconv(mm, f, h, counts);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-4 * std::max(1.0f, std::abs(b[i])));

  KpConvAgg op{kpconv_kernel_points(0.5f), 0.5f, dout};
  const Tensor rel = rng.tensor({m, k, 3}, -0.5f, 0.5f), w = rng.tensor({13, di, dout});
  const Tensor x = kpconv_apply(rel, f, op, w, counts), y = reference::kpconv(rel, f, op, w, counts);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) <= 1e-4 * std::max(1.0f, std::abs(y[i])));
}

TEST_CASE("aggregation names") {
  CHECK(std::string(aggregation_name(MaxAgg{})) == "max");
  CHECK(std::string(aggregation_name(KpConvAgg{})) == "kpconv");
  CHECK(checks::invariance_aggregations().size() == 8);
}

TEST_CASE("metablock property suite") {
  for (const auto& r : checks::run_suite("metablock", 42)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
