#include <doctest.h>

#include <sstream>

#include "pointmeta/analysis.hpp"
#include "pointmeta/checks.hpp"

using namespace pmeta;

TEST_CASE("k reduction ratio") {
  CHECK(verify_k_reduction(32, 1000, 32, 1) == 32.0);
  CHECK(verify_k_reduction(32, 1000, 1, 1) == 1.0);
  checks::Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 1 + rng.index(128), n = 1 + rng.index(5000), k = 1 + rng.index(64), l = 1 + rng.index(4);
    CHECK(verify_k_reduction(d, n, k, l) == double(k));
  }
}

TEST_CASE("mlp cost closed forms") {
  const MlpSpec spec = MlpSpec::stack(16, 32, 8, 2);
  CHECK(mlp_params(spec) == (16 * 32 + 32 + 64) + (32 * 8 + 8 + 16));
  CHECK(mlp_flops(spec, 10, CountingMode::macs) == 10 * (16 * 32 + 32 * 8));
  CHECK(mlp_flops(spec, 10, CountingMode::flops2x) == 2 * 10 * (16 * 32 + 32 * 8) + 10 * (32 + 8));
  CHECK(mlp_params(MlpSpec::linear(4, 3)) == 15);
}

TEST_CASE("pointmetabase block cost by hand") {
  const BlockSpec s = make_block("pointmetabase", 32);
  // nu 1120, epe 3*32+32+64, pu 2*1120
  CHECK(block_params(s) == 1120 + 192 + 2240);
  const std::uint64_t n = 1000, k = 32, d = 32;
  const std::uint64_t want = n * d * d        // neighbor MLP on points
                             + n * k * 3 * d  // embedding on every neighbor row
                             + n * k * d      // embedding add
                             + n * k * d      // max
                             + 2 * n * d * d  // point update
                             + n * d;         // residual add
  CHECK(block_flops(s, n, n) == want);
}

TEST_CASE("mlp-term ratio between orders is exactly K") {
  BlockSpec before;
  before.in_dim = 24;
  before.neighbor_update.mlp = MlpSpec::stack(24, 24, 24, 3);
  before.neighbor_update.k = 16;
  BlockSpec after = before;
  after.neighbor_update.order = UpdateOrder::group_before_mlp;
  BlockSpec none = before;
  none.neighbor_update.mlp.reset();
  const double a = double(block_flops(after, 500, 500) - block_flops(none, 500, 500));
  const double b = double(block_flops(before, 500, 500) - block_flops(none, 500, 500));
  CHECK(a / b == 16.0);
}

TEST_CASE("frozen network costs at 16384 points") {
  const Network l = build_network(family_config("L"));
  CHECK(count_flops(l, 16384).total_flops == 1125449728ULL);
  CHECK(count_flops(build_network(family_config("S")), 16384).total_flops == 421658624ULL);
  CHECK(count_flops(build_network(family_config("L", "pointnext")), 16384).total_flops == 8216969216ULL);
  CHECK(count_flops(build_network(family_config("L", "plain_max")), 16384).total_flops == 734134272ULL);
  CHECK(count_flops(build_network(family_config("L", "plain_ipe_max")), 16384).total_flops == 7041318912ULL);
  CHECK(count_flops(build_network(family_config("L", "plain_epe_max")), 16384).total_flops == 956432384ULL);
}

TEST_CASE("reports are consistent") {
  const Network net = build_network(family_config("L"));
  const CostReport r = count_flops(net, 8192);
  std::uint64_t p = 0, f = 0;
  for (const auto& row : r.rows) {
    p += row.params;
    f += row.flops;
  }
  CHECK(p == r.total_params);
  CHECK(f == r.total_flops);
  CHECK(r.n_points == 8192);
  CHECK(r.k == 32);
  CHECK(r.stride == 4);

  std::uint64_t prev = 0;
  for (std::size_t n : {256, 1024, 4096, 16384, 65536}) {
    const auto t = count_flops(net, n).total_flops;
    CHECK(t > prev);
    prev = t;
  }
  CHECK(count_flops(net, 8192, {CountingMode::macs, true}).total_flops > r.total_flops);
  CHECK(count_flops(net, 8192, {CountingMode::flops2x, false}).total_flops > r.total_flops);
}

TEST_CASE("zero-layer network has zero flops") {
  Network empty;
  empty.config = family_config("S");
  empty.config.stem_channels = 1;
  CHECK(count_flops(empty, 256).total_flops == 0);
}

TEST_CASE("compare_variants") {
  const auto t = compare_variants({"plain_max", "plain_epe_max"}, family_config("L"), 16384);
  REQUIRE(t.size() == 2);
  CHECK(t[1].report.total_flops > t[0].report.total_flops);
  CHECK(double(t[1].report.total_params) <= 1.05 * double(t[0].report.total_params));

  const auto grid = compare_variants({"n1p1", "n1p2", "n1p3"}, family_config("L"), 16384);
  CHECK(grid[1].report.total_params - grid[0].report.total_params == 735616);
  CHECK(grid[2].report.total_params - grid[1].report.total_params == 735616);

  const auto one = compare_variants({"pointmetabase"}, family_config("L"), 4096);
  CHECK(one[0].report.total_flops == count_flops(build_network(family_config("L")), 4096).total_flops);
  CHECK_THROWS_AS(compare_variants({"bogus"}, family_config("L"), 4096), Error);
}

TEST_CASE("table and record output") {
  const auto t = compare_variants({"plain_max"}, family_config("S"), 4096);
  std::ostringstream table, rec;
  write_cost_table(table, t);
  CHECK(table.str().rfind("variant\tparams\tflops\tn_points\tmode\n", 0) == 0);
  CHECK(table.str().find("plain_max\t") != std::string::npos);
  write_cost_records(rec, t, false);
  CHECK(rec.str().find("variant=plain_max") != std::string::npos);
  CHECK(rec.str().find("mode=macs") != std::string::npos);
}

TEST_CASE("bench harness") {
  const auto res = bench_neighbors({1000}, 0.0f, 32, 3, 42, 500);
  REQUIRE(res.size() >= 2);
  for (const auto& r : res) {
    CHECK(r.times_s.size() == 3);
    CHECK(r.median_s > 0.0);
    CHECK(r.n_points == 1000);
  }
  CHECK(res[0].speedup == 1.0);
  CHECK_THROWS_AS(bench_neighbors({1000}, 0.0f, 32, 2, 42), Error);
  CHECK(radius_for_mean_neighbors(65536, 32) > 0.0f);
}

TEST_CASE("analysis property suite") {
  for (const auto& r : checks::run_suite("analysis", 42)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
