#include "pointmeta/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace pmeta {

namespace {

using Candidate = std::pair<float, std::uint32_t>;  // (squared distance, index)

constexpr std::size_t kGridThreshold = 256;

void require_points(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 3) {
    fail(ErrorKind::dimension, std::string(what) + " must be [N,3], got " + t.shape_str());
  }
}

void check_k(std::size_t k, std::size_t n) {
  if (k == 0 || k > n) {
    fail(ErrorKind::parameter, "neighbor count k=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  }
}

void check_radius(float radius, std::size_t k_cap) {
  if (!(radius > 0.0f)) fail(ErrorKind::parameter, "ball radius must be positive, got " + std::to_string(radius));
  if (k_cap == 0) fail(ErrorKind::parameter, "ball query k_cap must be at least 1");
}

std::int64_t cell_coord(double v, double cell) { return static_cast<std::int64_t>(std::floor(v / cell)); }

// Writes the k best candidates (ascending by distance, then index) into row.
void take_best(std::vector<Candidate>& cands, std::size_t k, std::uint32_t* row) {
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end());
  for (std::size_t j = 0; j < k; ++j) row[j] = cands[j].second;
}

std::uint32_t nearest_brute(const float* q, const Tensor& reference) {
  const float* r = reference.data().data();
  std::uint32_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < reference.dim(0); ++i) {
    const float d = squared_distance(q, r + 3 * i);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(i);
    }
  }
  return best;
}

void pad_row(NeighborTable& t, std::size_t row, std::size_t valid) {
  std::uint32_t* r = t.indices.data() + row * t.k;
  for (std::size_t j = valid; j < t.k; ++j) r[j] = r[0];
  t.valid_counts[row] = static_cast<std::uint32_t>(valid);
}

NeighborTable empty_table(std::size_t rows, std::size_t k) {
  return NeighborTable{k, std::vector<std::uint32_t>(rows * k), std::vector<std::uint32_t>(rows)};
}

}  // namespace

void check_table(const NeighborTable& table, std::size_t reference_size) {
  if (table.indices.size() != table.rows() * table.k) fail(ErrorKind::parameter, "neighbor table size mismatch");
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (table.valid_counts[i] > table.k) fail(ErrorKind::parameter, "valid count exceeds K in row " + std::to_string(i));
    for (std::size_t j = 0; j < table.k; ++j) {
      const auto idx = table.at(i, j);
      if (idx >= reference_size) fail(ErrorKind::parameter, "neighbor index out of range in row " + std::to_string(i));
      if (j >= std::max<std::uint32_t>(table.valid_counts[i], 1) && idx != table.at(i, 0)) {
        fail(ErrorKind::parameter, "padding does not repeat the first neighbor in row " + std::to_string(i));
      }
    }
  }
}

GridIndex::GridIndex(const Tensor& reference, float cell_size) : reference_(reference), cell_size_(cell_size) {
  require_points(reference, "grid reference");
  if (!(cell_size > 0.0f)) fail(ErrorKind::parameter, "grid cell size must be positive");
  const std::size_t n = reference.dim(0);
  lo_ = {std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max(),
         std::numeric_limits<std::int64_t>::max()};
  hi_ = {std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::min(),
         std::numeric_limits<std::int64_t>::min()};
  for (std::size_t i = 0; i < n; ++i) {
    const CellKey key = cell_of(reference_.data().data() + 3 * i);
    cells_[key].push_back(static_cast<std::uint32_t>(i));
    lo_ = {std::min(lo_.x, key.x), std::min(lo_.y, key.y), std::min(lo_.z, key.z)};
    hi_ = {std::max(hi_.x, key.x), std::max(hi_.y, key.y), std::max(hi_.z, key.z)};
  }
}

CellKey GridIndex::cell_of(const float* p) const {
  const double c = cell_size_;
  return {cell_coord(p[0], c), cell_coord(p[1], c), cell_coord(p[2], c)};
}

const std::vector<std::uint32_t>* GridIndex::bucket(const CellKey& key) const {
  auto it = cells_.find(key);
  return it == cells_.end() ? nullptr : &it->second;
}

GridIndex build_grid(const Tensor& reference, float cell_size) { return GridIndex(reference, cell_size); }

float auto_cell_size(const Tensor& reference) {
  require_points(reference, "reference");
  const std::size_t n = reference.dim(0);
  float lo[3] = {std::numeric_limits<float>::max(), std::numeric_limits<float>::max(), std::numeric_limits<float>::max()};
  float hi[3] = {std::numeric_limits<float>::lowest(), std::numeric_limits<float>::lowest(),
                 std::numeric_limits<float>::lowest()};
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], reference.at(i, a));
      hi[a] = std::max(hi[a], reference.at(i, a));
    }
  }
  const double extent = std::max({double(hi[0]) - lo[0], double(hi[1]) - lo[1], double(hi[2]) - lo[2]});
  if (!(extent > 0.0)) return 1.0f;
  const double per_axis = std::max(1.0, std::floor(std::cbrt(double(n) / 4.0)));
  return static_cast<float>(extent / per_axis);
}

NeighborTable knn(const Tensor& query, const Tensor& reference, std::size_t k) {
  require_points(query, "query");
  require_points(reference, "reference");
  const std::size_t n = reference.dim(0);
  check_k(k, n);
  const std::size_t m = query.dim(0);
  NeighborTable t = empty_table(m, k);
  std::vector<Candidate> cands(n);
  const float* r = reference.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const float* q = query.data().data() + 3 * i;
    for (std::size_t j = 0; j < n; ++j) cands[j] = {squared_distance(q, r + 3 * j), static_cast<std::uint32_t>(j)};
    take_best(cands, k, t.indices.data() + i * k);
    t.valid_counts[i] = static_cast<std::uint32_t>(k);
  }
  return t;
}

NeighborTable ball_query(const Tensor& query, const Tensor& reference, float radius, std::size_t k_cap) {
  require_points(query, "query");
  require_points(reference, "reference");
  check_radius(radius, k_cap);
  const float r2 = radius * radius;
  const std::size_t m = query.dim(0);
  const std::size_t n = reference.dim(0);
  const float* r = reference.data().data();
  NeighborTable t = empty_table(m, k_cap);
  for (std::size_t i = 0; i < m; ++i) {
    const float* q = query.data().data() + 3 * i;
    std::uint32_t* row = t.indices.data() + i * k_cap;
    std::size_t found = 0;
    for (std::size_t j = 0; j < n && found < k_cap; ++j) {
      if (squared_distance(q, r + 3 * j) <= r2) row[found++] = static_cast<std::uint32_t>(j);
    }
    if (found == 0) row[0] = nearest_brute(q, reference);
    pad_row(t, i, found);
  }
  return t;
}

NeighborTable feature_knn(const Tensor& features, std::size_t k) {
  if (features.rank() != 2) fail(ErrorKind::dimension, "features must be [N,d], got " + features.shape_str());
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  check_k(k, n);
  NeighborTable t = empty_table(n, k);
  std::vector<Candidate> cands(n);
  const float* f = features.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const float* a = f + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const float* b = f + j * d;
      float acc = 0.0f;
      for (std::size_t c = 0; c < d; ++c) {
        const float diff = a[c] - b[c];
        acc += diff * diff;
      }
      cands[j] = {acc, static_cast<std::uint32_t>(j)};
    }
    take_best(cands, k, t.indices.data() + i * k);
    t.valid_counts[i] = static_cast<std::uint32_t>(k);
  }
  return t;
}

namespace {

struct CellRange {
  CellKey lo, hi;
};

CellRange ball_cells(const GridIndex& grid, const float* q, float radius) {
  // Slightly inflated so float rounding in the distance test can never admit
  // a point from an unvisited cell.
  const double reach = double(radius) * (1.0 + 1e-5);
  const double c = grid.cell_size();
  CellRange r{{cell_coord(q[0] - reach, c), cell_coord(q[1] - reach, c), cell_coord(q[2] - reach, c)},
              {cell_coord(q[0] + reach, c), cell_coord(q[1] + reach, c), cell_coord(q[2] + reach, c)}};
  const CellKey lo = grid.min_cell(), hi = grid.max_cell();
  r.lo = {std::max(r.lo.x, lo.x), std::max(r.lo.y, lo.y), std::max(r.lo.z, lo.z)};
  r.hi = {std::min(r.hi.x, hi.x), std::min(r.hi.y, hi.y), std::min(r.hi.z, hi.z)};
  return r;
}

template <typename Fn>
void for_each_cell(const GridIndex& grid, const CellRange& r, Fn&& fn) {
  for (auto x = r.lo.x; x <= r.hi.x; ++x) {
    for (auto y = r.lo.y; y <= r.hi.y; ++y) {
      for (auto z = r.lo.z; z <= r.hi.z; ++z) {
        if (const auto* b = grid.bucket({x, y, z})) fn(*b);
      }
    }
  }
}

std::uint32_t nearest_grid(const float* q, const GridIndex& grid);

void knn_grid_row(const float* q, const GridIndex& grid, std::size_t k, std::vector<Candidate>& cands,
                  std::uint32_t* row) {
  const Tensor& ref = grid.reference();
  const float* r = ref.data().data();
  const std::size_t n = ref.dim(0);
  const double c = grid.cell_size();
  const CellKey c0 = grid.cell_of(q);
  const CellKey glo = grid.min_cell(), ghi = grid.max_cell();
  cands.clear();
  for (std::int64_t ring = 0;; ++ring) {
    const double side = double(2 * ring + 1);
    if (side * side * side > 8.0 * double(n) + 27.0) {
      // Sparse occupancy relative to the search box: a linear scan is cheaper
      // and by definition identical.
      cands.resize(n);
      for (std::size_t j = 0; j < n; ++j) cands[j] = {squared_distance(q, r + 3 * j), static_cast<std::uint32_t>(j)};
      take_best(cands, k, row);
      return;
    }
    const CellRange box{{std::max(c0.x - ring, glo.x), std::max(c0.y - ring, glo.y), std::max(c0.z - ring, glo.z)},
                        {std::min(c0.x + ring, ghi.x), std::min(c0.y + ring, ghi.y), std::min(c0.z + ring, ghi.z)}};
    for (auto x = box.lo.x; x <= box.hi.x; ++x) {
      for (auto y = box.lo.y; y <= box.hi.y; ++y) {
        for (auto z = box.lo.z; z <= box.hi.z; ++z) {
          const auto cheb = std::max({std::llabs(x - c0.x), std::llabs(y - c0.y), std::llabs(z - c0.z)});
          if (cheb != ring) continue;
          if (const auto* b = grid.bucket({x, y, z})) {
            for (auto j : *b) cands.push_back({squared_distance(q, r + 3 * j), j});
          }
        }
      }
    }
    const bool covered = c0.x - ring <= glo.x && c0.y - ring <= glo.y && c0.z - ring <= glo.z &&
                         c0.x + ring >= ghi.x && c0.y + ring >= ghi.y && c0.z + ring >= ghi.z;
    if (cands.size() >= k) {
      std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k - 1), cands.end());
      const float kth = cands[k - 1].first;
      // Distance from q to the outside of the visited box of cells.
      double bound = std::numeric_limits<double>::infinity();
      const double qv[3] = {q[0], q[1], q[2]};
      const std::int64_t cv[3] = {c0.x, c0.y, c0.z};
      for (int a = 0; a < 3; ++a) {
        bound = std::min(bound, qv[a] - double(cv[a] - ring) * c);
        bound = std::min(bound, double(cv[a] + ring + 1) * c - qv[a]);
      }
      bound = std::max(bound, 0.0);
      if (covered || double(kth) < bound * bound * (1.0 - 1e-5)) {
        take_best(cands, k, row);
        return;
      }
    } else if (covered) {
      fail(ErrorKind::parameter, "knn k exceeds the reference size");
    }
  }
}

std::uint32_t nearest_grid(const float* q, const GridIndex& grid) {
  std::vector<Candidate> cands;
  std::uint32_t out = 0;
  knn_grid_row(q, grid, 1, cands, &out);
  return out;
}

}  // namespace

NeighborTable knn(const Tensor& query, const GridIndex& grid, std::size_t k) {
  require_points(query, "query");
  check_k(k, grid.size());
  const std::size_t m = query.dim(0);
  NeighborTable t = empty_table(m, k);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < m; ++i) {
    knn_grid_row(query.data().data() + 3 * i, grid, k, cands, t.indices.data() + i * k);
    t.valid_counts[i] = static_cast<std::uint32_t>(k);
  }
  return t;
}

NeighborTable ball_query(const Tensor& query, const GridIndex& grid, float radius, std::size_t k_cap) {
  require_points(query, "query");
  check_radius(radius, k_cap);
  const float r2 = radius * radius;
  const float* r = grid.reference().data().data();
  const std::size_t m = query.dim(0);
  NeighborTable t = empty_table(m, k_cap);
  std::vector<std::uint32_t> hits;
  for (std::size_t i = 0; i < m; ++i) {
    const float* q = query.data().data() + 3 * i;
    hits.clear();
    for_each_cell(grid, ball_cells(grid, q, radius), [&](const std::vector<std::uint32_t>& bucket) {
      for (auto j : bucket) {
        if (squared_distance(q, r + 3 * j) <= r2) hits.push_back(j);
      }
    });
    std::uint32_t* row = t.indices.data() + i * k_cap;
    const std::size_t found = std::min(hits.size(), k_cap);
    if (found > 0) {
      std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(found), hits.end());
      std::copy(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(found), row);
    } else {
      row[0] = nearest_grid(q, grid);
    }
    pad_row(t, i, found);
  }
  return t;
}

std::size_t ball_query_cell_visits(const GridIndex& grid, const float* q, float radius) {
  const CellRange r = ball_cells(grid, q, radius);
  if (r.hi.x < r.lo.x || r.hi.y < r.lo.y || r.hi.z < r.lo.z) return 0;
  return static_cast<std::size_t>((r.hi.x - r.lo.x + 1) * (r.hi.y - r.lo.y + 1) * (r.hi.z - r.lo.z + 1));
}

NeighborTable knn_auto(const Tensor& query, const Tensor& reference, std::size_t k) {
  require_points(reference, "reference");
  if (reference.dim(0) < kGridThreshold) return knn(query, reference, k);
  return knn(query, build_grid(reference, auto_cell_size(reference)), k);
}

NeighborTable ball_query_auto(const Tensor& query, const Tensor& reference, float radius, std::size_t k_cap) {
  require_points(reference, "reference");
  check_radius(radius, k_cap);
  if (reference.dim(0) < kGridThreshold) return ball_query(query, reference, radius, k_cap);
  return ball_query(query, build_grid(reference, radius), radius, k_cap);
}

}  // namespace pmeta
