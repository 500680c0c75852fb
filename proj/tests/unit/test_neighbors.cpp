#include <doctest.h>

#include <algorithm>
#include <set>

#include "pointmeta/checks.hpp"
#include "pointmeta/neighbors.hpp"
#include "pointmeta/reference.hpp"

using namespace pmeta;

namespace {

std::vector<std::uint32_t> row(const NeighborTable& t, std::size_t r) {
  return {t.indices.begin() + r * t.k, t.indices.begin() + (r + 1) * t.k};
}

bool same_table(const NeighborTable& a, const NeighborTable& b) {
  return a.k == b.k && a.indices == b.indices && a.valid_counts == b.valid_counts;
}

}  // namespace

TEST_CASE("knn examples") {
  const Tensor one = Tensor::from_rows({{0.3f, 0.1f, 0.2f}});
  const auto t = knn(Tensor::from_rows({{5, 5, 5}, {0, 0, 0}}), one, 1);
  CHECK(t.indices == std::vector<std::uint32_t>{0, 0});

  const Tensor line = Tensor::from_rows({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  CHECK(row(knn(Tensor::from_rows({{0, 0, 0}}), line, 2), 0) == std::vector<std::uint32_t>{0, 1});
  CHECK_THROWS_AS(knn(line, line, 4), Error);
}

TEST_CASE("knn ties go to the smaller index and self comes first") {
  const Tensor pts = Tensor::from_rows({{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}});
  const auto t = knn(pts, pts, 3);
  CHECK(row(t, 0) == std::vector<std::uint32_t>{0, 1, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.at(i, 0) == i);
}

TEST_CASE("knn matches the sorting oracle and is distance-sorted") {
  checks::Rng rng(10);
  const Tensor q = rng.tensor({50, 3}, 0, 1), r = rng.tensor({200, 3}, 0, 1);
  const auto t = knn(q, r, 8);
  CHECK(same_table(t, reference::knn(q, r, 8)));
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 1; j < 8; ++j) {
      CHECK(squared_distance(q.row(i).data(), r.row(t.at(i, j - 1)).data()) <=
            squared_distance(q.row(i).data(), r.row(t.at(i, j)).data()));
    }
  }
}

TEST_CASE("ball query examples") {
  const Tensor pts = Tensor::from_rows({{0, 0, 0}, {0.1f, 0, 0}, {0, 0.1f, 0}});
  const auto all = ball_query(pts, pts, 1.0f, 5);
  CHECK(all.valid_counts == std::vector<std::uint32_t>{3, 3, 3});
  CHECK(row(all, 1) == std::vector<std::uint32_t>{0, 1, 2, 0, 0});

  const auto self = ball_query(pts, pts, 0.01f, 4);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(self.valid_counts[i] == 1);
    CHECK(row(self, i) == std::vector<std::uint32_t>(4, static_cast<std::uint32_t>(i)));
  }
  CHECK_THROWS_AS(ball_query(pts, pts, 0.0f, 4), Error);
  CHECK_THROWS_AS(ball_query(pts, pts, 1.0f, 0), Error);
}

TEST_CASE("empty ball falls back to the nearest point") {
  const Tensor ref = Tensor::from_rows({{0, 0, 0}, {1, 0, 0}});
  const auto t = ball_query(Tensor::from_rows({{0.9f, 0.5f, 0}}), ref, 0.1f, 3);
  CHECK(t.valid_counts[0] == 0);
  CHECK(row(t, 0) == std::vector<std::uint32_t>{1, 1, 1});
}

TEST_CASE("ball query sets match the oracle before and after capping") {
  checks::Rng rng(11);
  const Tensor q = rng.tensor({40, 3}, 0, 1), r = rng.tensor({300, 3}, 0, 1);
  const auto capped = ball_query(q, r, 0.2f, 8);
  CHECK(same_table(capped, reference::ball_query(q, r, 0.2f, 8)));
  const auto full = ball_query(q, r, 0.2f, 300);
  for (std::size_t i = 0; i < 40; ++i) {
    std::set<std::uint32_t> want;
    for (std::uint32_t j = 0; j < 300; ++j) {
      if (squared_distance(q.row(i).data(), r.row(j).data()) <= 0.04f) want.insert(j);
    }
    const auto got = row(full, i);
    CHECK(std::set<std::uint32_t>(got.begin(), got.begin() + full.valid_counts[i]) == want);
    CHECK(std::is_sorted(got.begin(), got.begin() + full.valid_counts[i]));
  }
  check_table(capped, 300);
}

TEST_CASE("feature knn") {
  Tensor onehot({4, 3});
  onehot.at(0, 0) = onehot.at(1, 1) = onehot.at(2, 0) = onehot.at(3, 1) = 1.0f;
  const auto t = feature_knn(onehot, 2);
  CHECK(row(t, 0) == std::vector<std::uint32_t>{0, 2});
  CHECK(row(t, 3) == std::vector<std::uint32_t>{1, 3});

  checks::Rng rng(12);
  const Tensor pos = rng.tensor({40, 3}, 0, 1);
  CHECK(same_table(feature_knn(pos, 5), knn(pos, pos, 5)));

  const Tensor f = rng.tensor({30, 16});
  const auto ft = feature_knn(f, 4);
  for (std::size_t i = 0; i < 30; ++i) {
    std::vector<std::pair<double, std::uint32_t>> d;
    for (std::uint32_t j = 0; j < 30; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 16; ++c) s += double(f.at(i, c) - f.at(j, c)) * (f.at(i, c) - f.at(j, c));
      d.emplace_back(s, j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t j = 0; j < 4; ++j) CHECK(ft.at(i, j) == d[j].second);
  }
}

TEST_CASE("grid equals brute force") {
  checks::Rng rng(13);
  const Tensor r = rng.tensor({500, 3}, 0, 1), q = rng.tensor({60, 3}, 0, 1);

  SUBCASE("single cell") {
    const GridIndex g = build_grid(r, 10.0f);
    CHECK(g.occupancy().size() == 1);
    CHECK(same_table(ball_query(q, g, 0.15f, 16), ball_query(q, r, 0.15f, 16)));
    CHECK(same_table(knn(q, g, 6), knn(q, r, 6)));
  }
  SUBCASE("cell equals radius") {
    const GridIndex g = build_grid(r, 0.1f);
    CHECK(ball_query_cell_visits(g, q.row(0).data(), 0.1f) == 27);
    CHECK(same_table(ball_query(q, g, 0.1f, 32), ball_query(q, r, 0.1f, 32)));
    CHECK(same_table(knn(q, g, 10), knn(q, r, 10)));
  }
  SUBCASE("coincident points") {
    const Tensor same({20, 3}, 0.25f);
    const GridIndex g = build_grid(same, 0.1f);
    CHECK(g.occupancy().size() == 1);
    CHECK(same_table(ball_query(same, g, 0.05f, 8), ball_query(same, same, 0.05f, 8)));
    CHECK(same_table(knn(same, g, 5), knn(same, same, 5)));
  }
  CHECK_THROWS_AS(build_grid(r, 0.0f), Error);
}

TEST_CASE("every point lands in one bucket consistent with its cell") {
  checks::Rng rng(14);
  const Tensor r = rng.tensor({300, 3}, -2, 2);
  const GridIndex g = build_grid(r, 0.37f);
  std::size_t total = 0;
  for (const auto& [key, bucket] : g.occupancy()) {
    total += bucket.size();
    CHECK(std::is_sorted(bucket.begin(), bucket.end()));
    for (auto i : bucket) CHECK(g.cell_of(r.row(i).data()) == key);
  }
  CHECK(total == 300);
}

TEST_CASE("neighbor oracle suite") {
  for (const auto& r : checks::run_suite("neighbors", 42)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
