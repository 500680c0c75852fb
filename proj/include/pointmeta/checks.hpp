#pragma once

// Seeded invariant suites. Shared by `pmeta check` and the test binaries.

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pointmeta/metablock.hpp"
#include "pointmeta/network.hpp"

namespace pmeta::checks {

// Portable draws on top of mt19937_64 (the distribution adaptors of the
// standard library are implementation defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  float uniform(float lo = 0.0f, float hi = 1.0f);
  std::size_t index(std::size_t n);  // [0, n)
  std::vector<std::uint32_t> permutation(std::size_t n);
  Tensor tensor(const Shape& shape, float lo = -1.0f, float hi = 1.0f);
  PointCloud cloud(std::size_t n, std::size_t d);
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Individual checks, parameterized by trial count.
CheckResult softmax_limit(std::uint64_t seed, std::size_t trials, std::size_t k = 32, std::size_t d = 32);
std::vector<CheckResult> aggregation_invariance(std::uint64_t seed, std::size_t trials);
std::vector<CheckResult> block_covariance(std::uint64_t seed, std::size_t trials);
CheckResult order_commutation(std::uint64_t seed, std::size_t trials);
CheckResult neighbor_oracle(std::uint64_t seed, std::size_t instances);
CheckResult fps_oracle(std::uint64_t seed, std::size_t instances);
CheckResult eff_pointconv_decoupling(std::uint64_t seed, std::size_t instances);
CheckResult network_permutation(std::uint64_t seed, std::size_t trials);
CheckResult forward_determinism(std::uint64_t seed);

// The eight aggregation variants covered by the invariance suite.
std::vector<std::string> invariance_aggregations();

// Block spec used by the invariance harnesses: ball grouping takes every
// point so capping cannot depend on point order, and summation-type
// aggregations ignore padding.
BlockSpec harness_block(std::string_view variant, std::size_t channels, std::size_t n_points, float radius,
                        std::size_t knn_k);

std::vector<std::string> suite_names();  // "all" not included
std::vector<CheckResult> run_suite(std::string_view name, std::uint64_t seed);

// "PASS|FAIL <name>: <detail>" per result, then a summary line. Returns true
// when everything passed.
bool report(std::ostream& os, const std::vector<CheckResult>& results);

}  // namespace pmeta::checks
