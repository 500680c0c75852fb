#include "pointmeta/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pmeta::reference {

Tensor matmul_naive(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) fail(ErrorKind::dimension, "matmul_naive: " + a.shape_str() + " x " + b.shape_str());
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t t = 0; t < k; ++t) acc += static_cast<long double>(a.at(i, t)) * b.at(t, j);
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

std::vector<double> softmax_naive(const std::vector<float>& x, double temperature) {
  std::vector<double> e(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(double(x[i]) / temperature);
    sum += e[i];
  }
  for (auto& v : e) v /= sum;
  return e;
}

std::vector<std::uint32_t> fps(const Tensor& positions, std::size_t m, std::size_t start) {
  const std::size_t n = positions.dim(0);
  const float* p = positions.data().data();
  std::vector<std::uint32_t> selected{static_cast<std::uint32_t>(start)};
  std::vector<char> taken(n, 0);
  taken[start] = 1;
  while (selected.size() < m) {
    std::size_t best = n;
    float best_d = -1.0f;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      float d = squared_distance(p + 3 * i, p + 3 * selected[0]);
      for (auto s : selected) d = std::min(d, squared_distance(p + 3 * i, p + 3 * s));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    selected.push_back(static_cast<std::uint32_t>(best));
    taken[best] = 1;
  }
  return selected;
}

NeighborTable knn(const Tensor& query, const Tensor& reference, std::size_t k) {
  const std::size_t m = query.dim(0), n = reference.dim(0);
  const float* q = query.data().data();
  const float* r = reference.data().data();
  NeighborTable t{k, {}, std::vector<std::uint32_t>(m, static_cast<std::uint32_t>(k))};
  std::vector<std::uint32_t> order(n);
  std::vector<float> d(n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[j] = squared_distance(q + 3 * i, r + 3 * j);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return d[a] < d[b] || (d[a] == d[b] && a < b);
    });
    t.indices.insert(t.indices.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return t;
}

NeighborTable ball_query(const Tensor& query, const Tensor& reference, float radius, std::size_t k_cap) {
  const std::size_t m = query.dim(0), n = reference.dim(0);
  const float* q = query.data().data();
  const float* r = reference.data().data();
  const float r2 = radius * radius;
  NeighborTable t{k_cap, {}, {}};
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::uint32_t> hits;
    for (std::size_t j = 0; j < n; ++j) {
      if (squared_distance(q + 3 * i, r + 3 * j) <= r2) hits.push_back(static_cast<std::uint32_t>(j));
    }
    const std::size_t valid = std::min(hits.size(), k_cap);
    t.valid_counts.push_back(static_cast<std::uint32_t>(valid));
    if (hits.empty()) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < n; ++j) {
        if (squared_distance(q + 3 * i, r + 3 * j) < squared_distance(q + 3 * i, r + 3 * best)) best = j;
      }
      hits.push_back(static_cast<std::uint32_t>(best));
    }
    for (std::size_t j = 0; j < k_cap; ++j) t.indices.push_back(j < valid ? hits[j] : hits[0]);
  }
  return t;
}

Tensor eff_pointconv(const Tensor& m, const Tensor& f, const Tensor& h, const std::vector<std::uint32_t>& counts) {
  const std::size_t rows = f.dim(0), d_in = f.dim(2), d_mid = m.dim(2), d_out = h.dim(1);
  Tensor out({rows, d_out});
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<long double> acc(d_out, 0.0L);
    for (std::size_t j = 0; j < counts[i]; ++j) {
      // vec(M_j f_j^T) laid out as a * d_in + c
      for (std::size_t o = 0; o < d_out; ++o) {
        long double s = 0.0L;
        for (std::size_t a = 0; a < d_mid; ++a) {
          for (std::size_t c = 0; c < d_in; ++c) {
            s += static_cast<long double>(h.at(a * d_in + c, o)) * m.at(i, j, a) * f.at(i, j, c);
          }
        }
        acc[o] += s;
      }
    }
    for (std::size_t o = 0; o < d_out; ++o) out.at(i, o) = static_cast<float>(acc[o]);
  }
  return out;
}

Tensor kpconv(const Tensor& relpos, const Tensor& f, const KpConvAgg& op, const Tensor& w,
              const std::vector<std::uint32_t>& counts) {
  const std::size_t rows = f.dim(0), d_in = f.dim(2), d_out = w.dim(2);
  const std::size_t l_count = op.kernel_points.size();
  Tensor out({rows, d_out});
  std::vector<long double> g(d_in * d_out);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<long double> acc(d_out, 0.0L);
    for (std::size_t j = 0; j < counts[i]; ++j) {
      std::fill(g.begin(), g.end(), 0.0L);
      for (std::size_t l = 0; l < l_count; ++l) {
        long double dist2 = 0.0L;
        for (int a = 0; a < 3; ++a) {
          const long double diff = static_cast<long double>(relpos.at(i, j, a)) - op.kernel_points[l][a];
          dist2 += diff * diff;
        }
        const long double corr = std::max(0.0L, 1.0L - std::sqrt(dist2) / op.sigma);
        for (std::size_t c = 0; c < d_in; ++c) {
          for (std::size_t o = 0; o < d_out; ++o) g[c * d_out + o] += corr * w.at(l, c, o);
        }
      }
      for (std::size_t c = 0; c < d_in; ++c) {
        for (std::size_t o = 0; o < d_out; ++o) acc[o] += g[c * d_out + o] * f.at(i, j, c);
      }
    }
    for (std::size_t o = 0; o < d_out; ++o) out.at(i, o) = static_cast<float>(acc[o]);
  }
  return out;
}

Tensor interpolate(const Tensor& coarse_positions, const Tensor& coarse_features, const Tensor& fine_positions,
                   std::size_t k) {
  const NeighborTable t = reference::knn(fine_positions, coarse_positions, k);
  const std::size_t m = fine_positions.dim(0), d = coarse_features.dim(1);
  Tensor out({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    long double total = 0.0L;
    std::vector<long double> acc(d, 0.0L);
    for (std::size_t j = 0; j < k; ++j) {
      long double d2 = 0.0L;
      for (int a = 0; a < 3; ++a) {
        const long double diff =
            static_cast<long double>(fine_positions.at(i, a)) - coarse_positions.at(t.at(i, j), a);
        d2 += diff * diff;
      }
      const long double w = 1.0L / (d2 + 1e-8L);
      total += w;
      for (std::size_t c = 0; c < d; ++c) acc[c] += w * coarse_features.at(t.at(i, j), c);
    }
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) = static_cast<float>(acc[c] / total);
  }
  return out;
}

}  // namespace pmeta::reference
