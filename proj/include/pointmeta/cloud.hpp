#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pointmeta/tensor.hpp"

namespace pmeta {

using Vec3 = std::array<float, 3>;

// Squared Euclidean distance, evaluated in float in a fixed order. Every
// neighbor search, sampler and oracle in the library goes through this so
// that accelerated and brute-force paths compare bit-for-bit.
inline float squared_distance(const float* a, const float* b) {
  const float dx = a[0] - b[0];
  const float dy = a[1] - b[1];
  const float dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
  Tensor positions;  // [N, 3]
  Tensor features;   // [N, d]

  PointCloud() = default;
  PointCloud(Tensor positions, Tensor features);
  // Features default to a copy of the positions.
  static PointCloud from_positions(Tensor positions);

  std::size_t size() const { return positions.rank() ? positions.dim(0) : 0; }
  std::size_t feature_dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
  const float* position(std::size_t i) const { return positions.data().data() + 3 * i; }
};

void validate_cloud(const PointCloud& cloud);

struct SampleIndex {
  std::vector<std::uint32_t> indices;
  std::size_t parent_size = 0;
};

enum class CloudFormat { xyz_text, pmeta_binary };

CloudFormat format_from_path(const std::filesystem::path& path);

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);

// Greedy farthest point sampling starting at `start`; ties resolve to the
// smaller index. Indices are returned in selection order.
SampleIndex farthest_point_sample(const PointCloud& cloud, std::size_t m, std::size_t start = 0);
SampleIndex farthest_point_sample(const Tensor& positions, std::size_t m, std::size_t start = 0);

inline constexpr float kInterpolationEpsilon = 1e-8f;

// Inverse squared distance weighting over the k nearest coarse points.
Tensor interpolate_features(const PointCloud& coarse, const Tensor& fine_positions, std::size_t k = 3);

// Per fine point, the normalized weights and coarse indices used above.
struct InterpolationWeights {
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;  // [M * k]
  std::vector<float> weights;          // [M * k]
};

InterpolationWeights interpolation_weights(const Tensor& coarse_positions, const Tensor& fine_positions, std::size_t k);

// Row gathers used throughout the pipeline.
Tensor gather_rows(const Tensor& src, const std::vector<std::uint32_t>& indices);
PointCloud subset(const PointCloud& cloud, const SampleIndex& sample);

}  // namespace pmeta
