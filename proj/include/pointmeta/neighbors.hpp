#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "pointmeta/cloud.hpp"
#include "pointmeta/tensor.hpp"

namespace pmeta {

// Per-query neighbor indices, K entries per row. Entries past valid_counts[i]
// repeat the row's first entry. A ball query with no hit records a valid count
// of 0 and fills the row with the nearest reference point.
struct NeighborTable {
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;       // [rows * k]
  std::vector<std::uint32_t> valid_counts;  // [rows]

  std::size_t rows() const { return valid_counts.size(); }
  std::uint32_t at(std::size_t row, std::size_t j) const { return indices[row * k + j]; }
};

// Throws a parameter error if any index is out of range or padding is wrong.
void check_table(const NeighborTable& table, std::size_t reference_size);

struct CellKey {
  std::int64_t x = 0, y = 0, z = 0;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& c) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(c.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(c.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(c.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

// Uniform hash grid over a reference set. Buckets hold point indices in
// ascending order.
class GridIndex {
 public:
  GridIndex(const Tensor& reference, float cell_size);

  float cell_size() const noexcept { return cell_size_; }
  const Tensor& reference() const noexcept { return reference_; }
  std::size_t size() const { return reference_.dim(0); }
  CellKey cell_of(const float* p) const;
  const std::vector<std::uint32_t>* bucket(const CellKey& key) const;
  const std::unordered_map<CellKey, std::vector<std::uint32_t>, CellKeyHash>& occupancy() const { return cells_; }
  CellKey min_cell() const noexcept { return lo_; }
  CellKey max_cell() const noexcept { return hi_; }

 private:
  Tensor reference_;
  float cell_size_;
  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellKeyHash> cells_;
  CellKey lo_, hi_;
};

GridIndex build_grid(const Tensor& reference, float cell_size);

// Cell size giving a few points per cell over the reference bounding box.
float auto_cell_size(const Tensor& reference);

// Brute-force definitions.
NeighborTable knn(const Tensor& query, const Tensor& reference, std::size_t k);
NeighborTable ball_query(const Tensor& query, const Tensor& reference, float radius, std::size_t k_cap);
NeighborTable feature_knn(const Tensor& features, std::size_t k);

// Grid-accelerated forms; results are identical to the brute-force ones.
NeighborTable knn(const Tensor& query, const GridIndex& grid, std::size_t k);
NeighborTable ball_query(const Tensor& query, const GridIndex& grid, float radius, std::size_t k_cap);

// Picks the accelerated path for large reference sets.
NeighborTable knn_auto(const Tensor& query, const Tensor& reference, std::size_t k);
NeighborTable ball_query_auto(const Tensor& query, const Tensor& reference, float radius, std::size_t k_cap);

// Number of grid cells a ball query of this radius inspects around `q`.
std::size_t ball_query_cell_visits(const GridIndex& grid, const float* q, float radius);

}  // namespace pmeta
