#include <doctest.h>

#include <set>

#include "pointmeta/checks.hpp"
#include "pointmeta/zoo.hpp"

using namespace pmeta;

namespace {

const std::set<std::string> kRequired = {
    "pointnet2", "point_transformer", "assanet",       "dgcnn",         "pointcnn",     "randla",
    "pointconv_eff", "kpconv",        "pointnext",     "pointmetabase", "plain_max",    "plain_pp",
    "plain_pp_max",  "plain_ipe_max", "plain_epe_max", "plain_epe_pp",  "n1p1",         "n2p0",
    "n0p2",          "n1p2",          "n1p2_inv",      "n2p1",          "n2p1_inv",     "n1p3",
    "n3p1"};

bool same_structure(const BlockSpec& a, const BlockSpec& b) {
  const auto& na = a.neighbor_update;
  const auto& nb = b.neighbor_update;
  const auto& ea = a.position_embed;
  const auto& eb = b.position_embed;
  return a.in_dim == b.in_dim && na.order == nb.order && na.mlp == nb.mlp && na.grouping == nb.grouping &&
         na.radius == nb.radius && na.k == nb.k && na.repeat_factor == nb.repeat_factor && ea.ipe == eb.ipe &&
         ea.epe.has_value() == eb.epe.has_value() && (!ea.epe || ea.epe->mlp == eb.epe->mlp) &&
         ea.pp.has_value() == eb.pp.has_value() && a.aggregation.op.index() == b.aggregation.op.index() &&
         a.point_update.mlp == b.point_update.mlp && a.point_update.residual == b.point_update.residual &&
         a.point_update.inverted_bottleneck == b.point_update.inverted_bottleneck;
}

}  // namespace

TEST_CASE("registry lists every required variant, sorted and stable") {
  const auto list = list_variants();
  std::set<std::string> names;
  for (const auto& v : list) {
    names.insert(v.name);
    CHECK_FALSE(v.formula.empty());
  }
  for (const auto& r : kRequired) CHECK_MESSAGE(names.count(r), r);
  CHECK(std::is_sorted(list.begin(), list.end(), [](auto& a, auto& b) { return a.name < b.name; }));
  const auto again = list_variants();
  REQUIRE(again.size() == list.size());
  for (std::size_t i = 0; i < list.size(); ++i) CHECK(again[i].name == list[i].name);
}

TEST_CASE("every listed variant builds") {
  for (const auto& v : list_variants()) {
    INFO(v.name);
    CHECK_NOTHROW(block_dims(make_block(v.name, 24)));
  }
}

TEST_CASE("names") {
  CHECK(canonical_variant("N1P2-Inv") == "n1p2_inv");
  CHECK(is_variant("PointMetaBase"));
  CHECK_FALSE(is_variant("resnet"));
  try {
    (void)make_block("resnet", 32);
    FAIL("expected registry error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::registry);
  }
  CHECK_THROWS_AS(make_block("pointmetabase", 0), Error);
}

TEST_CASE("plain_max structure") {
  const BlockSpec s = make_block("plain_max", 32);
  CHECK(s.neighbor_update.order == UpdateOrder::mlp_before_group);
  REQUIRE(s.neighbor_update.mlp);
  CHECK(s.neighbor_update.mlp->layers() == 1);
  CHECK(s.position_embed.ipe == 0);
  CHECK_FALSE(s.position_embed.epe);
  CHECK_FALSE(s.position_embed.pp);
  CHECK(std::holds_alternative<MaxAgg>(s.aggregation.op));
  REQUIRE(s.point_update.mlp);
  CHECK(s.point_update.mlp->layers() == 1);
  CHECK_FALSE(s.point_update.residual);
}

TEST_CASE("pointnet2 structure") {
  const BlockSpec s = make_block("pointnet2", 32);
  CHECK(s.neighbor_update.order == UpdateOrder::group_before_mlp);
  CHECK(s.position_embed.ipe == position_input::relpos);
  REQUIRE(s.neighbor_update.mlp);
  CHECK(s.neighbor_update.mlp->in_dim() == 35);
  CHECK(std::holds_alternative<MaxAgg>(s.aggregation.op));
  CHECK(s.point_update.mlp);
}

TEST_CASE("pointmetabase structure") {
  const BlockSpec s = make_block("pointmetabase", 32);
  CHECK(s.neighbor_update.order == UpdateOrder::mlp_before_group);
  CHECK(s.neighbor_update.mlp->layers() == 1);
  REQUIRE(s.position_embed.epe);
  CHECK(s.position_embed.epe->merge == EmbedMerge::add);
  CHECK(s.position_embed.epe->mlp.layers() == 1);
  CHECK(std::holds_alternative<MaxAgg>(s.aggregation.op));
  CHECK(s.point_update.mlp->layers() == 2);
  CHECK(s.point_update.residual);
}

TEST_CASE("grid entries differ only where their names say") {
  const BlockSpec n1p1 = make_block("n1p1", 32), n1p2 = make_block("n1p2", 32);
  BlockSpec patched = n1p1;
  patched.point_update.mlp = n1p2.point_update.mlp;
  CHECK(same_structure(patched, n1p2));
  CHECK(n1p1.point_update.mlp->layers() == 1);
  CHECK(n1p2.point_update.mlp->layers() == 2);

  const BlockSpec inv = make_block("n1p2_inv", 32);
  CHECK(inv.point_update.inverted_bottleneck);
  CHECK(inv.point_update.mlp->layer_dims == std::vector<std::size_t>{32, 128, 32});
  CHECK_FALSE(make_block("n0p2", 32).neighbor_update.mlp);
  CHECK_FALSE(make_block("n2p0", 32).point_update.mlp);
  CHECK(make_block("n2p1_inv", 32).neighbor_update.mlp->layer_dims == std::vector<std::size_t>{32, 128, 32});
}

TEST_CASE("plain_epe_max is pointmetabase with a 1-layer non-residual update") {
  BlockSpec pmb = make_block("pointmetabase", 32);
  pmb.point_update.mlp = MlpSpec::stack(32, 32, 32, 1);
  pmb.point_update.residual = false;
  const BlockSpec epe = make_block("plain_epe_max", 32);
  CHECK(same_structure(pmb, epe));

  checks::Rng rng(3);
  const PointCloud c = rng.cloud(48, 32);
  const ParamStore w = init_params(block_param_decls(epe, ""), 5);
  CHECK(run_block(c, pmb, Params(w)).features == run_block(c, epe, Params(w)).features);
}

TEST_CASE("point transformer with max aggregation is max of f plus e") {
  BlockContext ctx{8, 0.3f, 6};
  const BlockSpec s = make_block("point_transformer_max", ctx);
  checks::Rng rng(4);
  const PointCloud c = rng.cloud(30, 8);
  const ParamStore w = init_params(block_param_decls(s, ""), 6);
  const Neighborhood h = neighbor_update(c, s, Params(w));
  const auto emb = position_embed(h, s, Params(w));
  const Tensor got = aggregate(h, emb, s, Params(w));
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t a = 0; a < 8; ++a) {
      float m = -INFINITY;
      for (std::size_t j = 0; j < 6; ++j) m = std::max(m, h.grouped.at(i, j, a) + emb.values->at(i, j, a));
      CHECK(got.at(i, a) == m);
    }
  }
  // The vsa form shares every other piece of the block.
  BlockSpec vsa = make_block("point_transformer", ctx);
  vsa.aggregation.op = MaxAgg{};
  CHECK(same_structure(vsa, s));
}

TEST_CASE("declared widths of the supplementary instantiations") {
  const BlockSpec cnn = make_block("pointcnn", 32);
  CHECK(cnn.position_embed.epe->mlp.out_dim() == 8);
  CHECK(cnn.position_embed.epe->merge == EmbedMerge::concat);
  CHECK(block_dims(cnn).merged == 40);
  const BlockSpec rl = make_block("randla", 32);
  CHECK(rl.position_embed.epe->mlp.in_dim() == 10);
  const BlockSpec pc = make_block("pointconv_eff", 32);
  CHECK(std::get<EffPointConvAgg>(pc.aggregation.op).weight_net.out_dim() == 16);
  const BlockSpec kp = make_block("kpconv", BlockContext{32, 0.25f, 16});
  CHECK(std::get<KpConvAgg>(kp.aggregation.op).kernel_points.size() == 13);
  CHECK(std::get<KpConvAgg>(kp.aggregation.op).sigma == 0.25f);
  CHECK(make_block("assanet", 33).neighbor_update.repeat_factor == 3);
  CHECK(make_block("dgcnn", 16).neighbor_update.grouping == Grouping::feature_knn);
}

TEST_CASE("reduction styles") {
  CHECK(reduction_style("pointnet2") == ReductionStyle::classic);
  CHECK(reduction_style("pointnext") == ReductionStyle::classic);
  CHECK(reduction_style("plain_max") == ReductionStyle::pointmeta_plain);
  CHECK(reduction_style("pointmetabase") == ReductionStyle::pointmeta);
  const BlockSpec sa = make_reduction_block(ReductionStyle::pointmeta, 32, 64, 0.2f, 32);
  CHECK(block_dims(sa).output == 64);
  CHECK(sa.neighbor_update.order == UpdateOrder::mlp_before_group);
  CHECK(sa.position_embed.epe);
}

TEST_CASE("zoo property suite") {
  for (const auto& r : checks::run_suite("zoo", 42)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
