#pragma once

// Slow, direct implementations used as oracles by tests and check suites.

#include <cstdint>
#include <vector>

#include "pointmeta/metablock.hpp"
#include "pointmeta/neighbors.hpp"

namespace pmeta::reference {

Tensor matmul_naive(const Tensor& a, const Tensor& b);
std::vector<double> softmax_naive(const std::vector<float>& x, double temperature);

// Recomputes every candidate's distance to the whole selected set per step.
std::vector<std::uint32_t> fps(const Tensor& positions, std::size_t m, std::size_t start);

NeighborTable knn(const Tensor& query, const Tensor& reference, std::size_t k);
NeighborTable ball_query(const Tensor& query, const Tensor& reference, float radius, std::size_t k_cap);

// Undecoupled PointConv: sum_j H vec(M_j f_j^T).
Tensor eff_pointconv(const Tensor& m, const Tensor& f, const Tensor& h, const std::vector<std::uint32_t>& counts);

// KPConv with explicit per-neighbor kernels g_j = sum_l corr_l W_l.
Tensor kpconv(const Tensor& relpos, const Tensor& f, const KpConvAgg& op, const Tensor& w,
              const std::vector<std::uint32_t>& counts);

Tensor interpolate(const Tensor& coarse_positions, const Tensor& coarse_features, const Tensor& fine_positions,
                   std::size_t k);

}  // namespace pmeta::reference
