#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "pointmeta/network.hpp"

namespace pmeta {

inline constexpr std::size_t kDefaultReportPoints = 16384;

struct CountOptions {
  CountingMode mode = CountingMode::macs;
  bool include_search = false;  // neighbor search, FPS and interpolation lookups
};

// Closed-form parameter counts.
std::uint64_t mlp_params(const MlpSpec& spec);
std::uint64_t block_params(const BlockSpec& spec);

// Analytic cost of one block evaluated at n_query centers over n_ref points.
std::uint64_t block_flops(const BlockSpec& spec, std::size_t n_query, std::size_t n_ref, const CountOptions& opt = {});
std::uint64_t mlp_flops(const MlpSpec& spec, std::uint64_t rows, CountingMode mode);

// Full-network report: one row per layer group, params from the closed forms.
CostReport count_flops(const Network& net, std::size_t n_points, const CountOptions& opt = {});

// Neighbor-MLP cost ratio group_before_mlp / mlp_before_group for an l-layer
// d -> d MLP over n points with k neighbors.
double verify_k_reduction(std::size_t d, std::size_t n, std::size_t k, std::size_t l);

struct VariantCost {
  std::string variant;
  CostReport report;
};

std::vector<VariantCost> compare_variants(const std::vector<std::string>& ids, const NetworkConfig& tmpl,
                                          std::size_t n_points, const CountOptions& opt = {});

// Tab-separated table with header "variant\tparams\tflops\tn_points\tmode".
void write_cost_table(std::ostream& os, const std::vector<VariantCost>& costs);
// One key=value record per line.
void write_cost_records(std::ostream& os, const std::vector<VariantCost>& costs, bool with_rows);

struct BenchResult {
  std::string method;
  std::size_t n_points = 0;
  std::size_t n_queries = 0;
  float radius = 0.0f;
  std::size_t k = 0;
  std::vector<double> times_s;  // raw timings, one per repetition
  double median_s = 0.0;
  double speedup = 1.0;         // brute median / this median
  double mean_neighbors = 0.0;
};

// Radius giving about `target` neighbors in a uniform unit cube of n points.
float radius_for_mean_neighbors(std::size_t n, double target);

// Brute-force vs grid ball query on seeded uniform clouds. Queries are the
// first min(n, max_queries) points. Throws if the two disagree.
std::vector<BenchResult> bench_neighbors(const std::vector<std::size_t>& n_points, float radius, std::size_t k,
                                         std::size_t repetitions, std::uint64_t seed, std::size_t max_queries = 4096);

void write_bench_table(std::ostream& os, const std::vector<BenchResult>& results);

}  // namespace pmeta
