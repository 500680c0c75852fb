#include "pointmeta/cloud.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "pointmeta/neighbors.hpp"

namespace pmeta {

PointCloud::PointCloud(Tensor p, Tensor f) : positions(std::move(p)), features(std::move(f)) {
  validate_cloud(*this);
}

PointCloud PointCloud::from_positions(Tensor p) {
  Tensor f = p;
  return PointCloud(std::move(p), std::move(f));
}

void validate_cloud(const PointCloud& cloud) {
  if (cloud.positions.rank() != 2 || cloud.positions.dim(1) != 3) {
    fail(ErrorKind::dimension, "positions must be [N,3], got " + cloud.positions.shape_str());
  }
  if (cloud.positions.dim(0) == 0) fail(ErrorKind::empty_cloud, "point cloud has no points");
  if (!cloud.positions.all_finite()) fail(ErrorKind::numeric, "point positions must be finite");
  if (cloud.features.rank() != 2 || cloud.features.dim(0) != cloud.positions.dim(0)) {
    fail(ErrorKind::dimension, "features " + cloud.features.shape_str() + " do not match " +
                                   std::to_string(cloud.positions.dim(0)) + " points");
  }
}

CloudFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::xyz_text;
  return CloudFormat::pmeta_binary;
}

namespace {

constexpr char kCloudMagic[8] = {'P', 'M', 'E', 'T', 'A', '0', '1', '\0'};

void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, std::size_t offset) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    fail(ErrorKind::format, "truncated binary cloud at offset " + std::to_string(offset));
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

PointCloud assemble(std::size_t n, std::size_t d, std::vector<float> pos, std::vector<float> feat) {
  if (n == 0) fail(ErrorKind::empty_cloud, "file contains no points");
  Tensor positions({n, 3}, std::move(pos));
  if (d == 0) return PointCloud::from_positions(std::move(positions));
  return PointCloud(std::move(positions), Tensor({n, d}, std::move(feat)));
}

PointCloud load_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::size_t d = 0;
  std::size_t n = 0;
  std::vector<float> pos, feat;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      if (line_no == 1) {
        const auto eq = line.find("d=");
        if (eq == std::string::npos) fail(ErrorKind::format, "line 1: malformed header '" + line + "'");
        const char* b = line.data() + eq + 2;
        const char* e = line.data() + line.size();
        auto [ptr, ec] = std::from_chars(b, e, d);
        if (ec != std::errc() || line.find_first_not_of(" \t", ptr - line.data()) != std::string::npos) {
          fail(ErrorKind::format, "line 1: malformed feature count in '" + line + "'");
        }
      }
      continue;
    }
    const char* p = line.data();
    const char* end = line.data() + line.size();
    std::size_t col = 0;
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p >= end) break;
      float v = 0.0f;
      auto [ptr, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        fail(ErrorKind::format, "line " + std::to_string(line_no) + ", column " + std::to_string(col + 1) +
                                    ": not a number");
      }
      if (col < 3) {
        pos.push_back(v);
      } else {
        feat.push_back(v);
      }
      ++col;
      p = ptr;
    }
    if (col != 3 + d) {
      fail(ErrorKind::format, "line " + std::to_string(line_no) + ": expected " + std::to_string(3 + d) +
                                  " columns, found " + std::to_string(col));
    }
    ++n;
  }
  return assemble(n, d, std::move(pos), std::move(feat));
}

PointCloud load_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCloudMagic, 7) != 0) {
    fail(ErrorKind::format, "bad PMETA01 magic at offset 0 in '" + path.string() + "'");
  }
  const std::size_t n = read_u32(is, 8);
  const std::size_t d = read_u32(is, 12);
  std::vector<float> pos(n * 3), feat(n * d);
  std::size_t offset = 16;
  for (auto* buf : {&pos, &feat}) {
    for (auto& v : *buf) {
      v = std::bit_cast<float>(read_u32(is, offset));
      offset += 4;
    }
  }
  return assemble(n, d, std::move(pos), std::move(feat));
}

}  // namespace

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  return format == CloudFormat::xyz_text ? load_text(path) : load_binary(path);
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  const std::size_t n = cloud.size();
  const std::size_t d = cloud.feature_dim();
  if (format == CloudFormat::xyz_text) {
    std::ofstream os(path);
    if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    if (d > 0) os << "# d=" << d << '\n';
    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3 + d; ++c) {
        const float v = c < 3 ? cloud.positions.at(i, c) : cloud.features.at(i, c - 3);
        std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(v));
        if (c) os << ' ';
        os << buf;
      }
      os << '\n';
    }
    if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os.write(kCloudMagic, 8);
  write_u32(os, static_cast<std::uint32_t>(n));
  write_u32(os, static_cast<std::uint32_t>(d));
  for (float v : cloud.positions.data()) write_u32(os, std::bit_cast<std::uint32_t>(v));
  for (float v : cloud.features.data()) write_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

SampleIndex farthest_point_sample(const PointCloud& cloud, std::size_t m, std::size_t start) {
  return farthest_point_sample(cloud.positions, m, start);
}

SampleIndex farthest_point_sample(const Tensor& positions, std::size_t m, std::size_t start) {
  const std::size_t n = positions.dim(0);
  if (m == 0 || m > n) {
    fail(ErrorKind::parameter, "FPS sample count " + std::to_string(m) + " must be in [1, " + std::to_string(n) + "]");
  }
  if (start >= n) fail(ErrorKind::parameter, "FPS start index " + std::to_string(start) + " out of range");
  const float* p = positions.data().data();
  SampleIndex out{{}, n};
  out.indices.reserve(m);
  std::vector<float> min_dist(n, std::numeric_limits<float>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t current = start;
  for (std::size_t s = 0; s < m; ++s) {
    out.indices.push_back(static_cast<std::uint32_t>(current));
    taken[current] = 1;
    if (s + 1 == m) break;
    std::size_t best = n;
    float best_d = -1.0f;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const float dd = squared_distance(p + 3 * i, p + 3 * current);
      if (dd < min_dist[i]) min_dist[i] = dd;
      if (min_dist[i] > best_d) {
        best_d = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  return out;
}

InterpolationWeights interpolation_weights(const Tensor& coarse_positions, const Tensor& fine_positions,
                                           std::size_t k) {
  const std::size_t n = coarse_positions.dim(0);
  if (k == 0 || k > n) {
    fail(ErrorKind::parameter, "interpolation k=" + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  }
  const NeighborTable table = knn_auto(fine_positions, coarse_positions, k);
  const std::size_t m = fine_positions.dim(0);
  InterpolationWeights w{k, table.indices, std::vector<float>(m * k)};
  const float* cp = coarse_positions.data().data();
  const float* fp = fine_positions.data().data();
  std::vector<double> raw(k);
  for (std::size_t i = 0; i < m; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const float d2 = squared_distance(fp + 3 * i, cp + 3 * table.indices[i * k + j]);
      raw[j] = 1.0 / (double(d2) + double(kInterpolationEpsilon));
      total += raw[j];
    }
    for (std::size_t j = 0; j < k; ++j) w.weights[i * k + j] = static_cast<float>(raw[j] / total);
  }
  return w;
}

Tensor interpolate_features(const PointCloud& coarse, const Tensor& fine_positions, std::size_t k) {
  if (fine_positions.rank() != 2 || fine_positions.dim(1) != 3) {
    fail(ErrorKind::dimension, "fine positions must be [M,3], got " + fine_positions.shape_str());
  }
  const InterpolationWeights w = interpolation_weights(coarse.positions, fine_positions, k);
  const std::size_t m = fine_positions.dim(0);
  const std::size_t d = coarse.feature_dim();
  Tensor out({m, d});
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const double wj = w.weights[i * k + j];
      const auto src = coarse.features.row(w.indices[i * k + j]);
      for (std::size_t c = 0; c < d; ++c) acc[c] += wj * src[c];
    }
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) = static_cast<float>(acc[c]);
  }
  require_finite(out, "interpolate_features");
  return out;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::uint32_t>& indices) {
  const std::size_t c = src.cols();
  Shape shape = src.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto row = src.row(indices[r]);
    std::copy(row.begin(), row.end(), out.data().data() + r * c);
  }
  return out;
}

PointCloud subset(const PointCloud& cloud, const SampleIndex& sample) {
  return PointCloud(gather_rows(cloud.positions, sample.indices), gather_rows(cloud.features, sample.indices));
}

}  // namespace pmeta
