// Runs the thirteen acceptance criteria and prints one PASS/FAIL line each.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pointmeta/analysis.hpp"
#include "pointmeta/checks.hpp"
#include "pointmeta/cli.hpp"

using namespace pmeta;

namespace {

constexpr std::uint64_t kSeed = 42;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double params_m(std::string_view family, std::string_view variant = "pointmetabase") {
  return double(count_params(build_network(family_config(family, variant))).total_params) / 1e6;
}

double flops(std::string_view variant, std::size_t n) {
  return double(count_flops(build_network(family_config("L", variant)), n).total_flops);
}

bool within(double v, double target, double rel) { return std::abs(v - target) <= rel * target; }

Outcome fold(const std::vector<checks::CheckResult>& results) {
  Outcome o{true, {}};
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (!r.passed) {
      o.passed = false;
      ++failed;
      o.detail += (o.detail.empty() ? "" : "; ") + r.name + ": " + r.detail;
    }
  }
  if (o.passed) o.detail = fmt("%zu checks", results.size());
  else o.detail = fmt("%zu/%zu failed: ", failed, results.size()) + o.detail;
  return o;
}

Outcome from(const checks::CheckResult& r) { return {r.passed, r.detail}; }

Outcome k_reduction() {
  for (std::size_t k : {1, 8, 16, 32, 64}) {
    for (auto [d, n, l] : {std::array<std::size_t, 3>{32, 16384, 1}, {7, 100, 3}, {256, 3, 2}}) {
      const double r = verify_k_reduction(d, n, k, l);
      if (r != double(k)) return {false, fmt("k=%zu d=%zu n=%zu l=%zu gave %.17g", k, d, n, l, r)};
    }
  }
  return {true, "ratio == k exactly for k in {1,8,16,32,64}"};
}

Outcome family_params() {
  const double s = params_m("S"), l = params_m("L"), xl = params_m("XL"), xxl = params_m("XXL");
  const bool ok = within(l, 2.7, 0.10) && within(xl, 15.3, 0.10) && within(xxl, 19.7, 0.10) && s < l && l < xl &&
                  xl < xxl;
  return {ok, fmt("S %.3fM, L %.3fM (2.7), XL %.3fM (15.3), XXL %.3fM (19.7)", s, l, xl, xxl)};
}

Outcome grid_deltas() {
  const double n1p1 = params_m("L", "n1p1"), n1p2 = params_m("L", "n1p2"), inv = params_m("L", "n1p2_inv");
  const double delta = n1p2 - n1p1;
  const bool ok = std::abs(delta - 0.7) <= 0.15 && within(inv, 7.1, 0.15);
  return {ok, fmt("N1P2-N1P1 = %.3fM (0.7 +- 0.15), N1P2-Inv = %.3fM (7.1 +- 15%%)", delta, inv)};
}

Outcome flops_ratio() {
  const double r16 = flops("pointmetabase", 16384) / flops("pointnext", 16384);
  const double r4 = flops("pointmetabase", 4096) / flops("pointnext", 4096);
  const bool ok = r16 >= 0.09 && r16 <= 0.17 && std::abs(r16 - r4) < 0.02;
  return {ok, fmt("ratio %.4f at N=16384, %.4f at N=4096", r16, r4)};
}

Outcome plain_ratios() {
  const double ipe = flops("plain_ipe_max", 16384), epe = flops("plain_epe_max", 16384), mx = flops("plain_max", 16384);
  const double r = ipe / epe, inc = epe / mx - 1.0;
  const bool ok = within(r, 7.7, 0.25) && epe > mx && inc <= 0.40;
  return {ok, fmt("IPE/EPE %.3f (7.7 +- 25%%), EPE over Max +%.1f%% (<= 40%%)", r, 100.0 * inc)};
}

Outcome permutation_suites() {
  auto results = checks::aggregation_invariance(kSeed, 200);
  const auto blocks = checks::block_covariance(kSeed + 1, 50);
  bool dgcnn = false;
  for (const auto& b : blocks) dgcnn = dgcnn || b.name.find("dgcnn") != std::string::npos;
  results.insert(results.end(), blocks.begin(), blocks.end());
  results.push_back({"dgcnn included", dgcnn, dgcnn ? "" : "no dgcnn covariance result"});
  return fold(results);
}

Outcome determinism() {
  auto capture = [](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return std::to_string(code) + "\n" + out.str();
  };
  const std::vector<std::vector<std::string>> cmds = {
      {"analyze", "--variant", "pointmetabase", "--family", "L", "--layers"},
      {"compare", "--variants", "plain_max,plain_epe_max,n1p2_inv", "--records"},
      {"check", "--suite", "all", "--seed", "42"},
  };
  for (const auto& c : cmds) {
    const std::string a = capture(c), b = capture(c);
    if (a != b) return {false, "output differs for '" + c[0] + "'"};
    if (a.rfind("0\n", 0) != 0) return {false, "'" + c[0] + "' exited nonzero"};
  }
  const auto fwd = checks::forward_determinism(kSeed);
  if (!fwd.passed) return from(fwd);
  return {true, "analyze/compare/check byte-identical; " + fwd.detail};
}

Outcome bench() {
  try {
    const auto res = bench_neighbors({65536}, 0.0f, 32, 3, kSeed);
    const BenchResult* grid = nullptr;
    for (const auto& r : res) {
      if (r.method != "brute") grid = &r;
    }
    if (!grid) return {false, "no accelerated row"};
    return {grid->speedup >= 5.0, fmt("speedup %.1fx (>= 5), radius %.4f, mean neighbors %.1f", grid->speedup,
                                      grid->radius, grid->mean_neighbors)};
  } catch (const Error& e) {
    return {false, e.what()};
  }
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 k-times reduction", k_reduction},
      {"AC2 family parameters", family_params},
      {"AC3 allocation grid deltas", grid_deltas},
      {"AC4 PointMetaBase/PointNeXt FLOPs", flops_ratio},
      {"AC5 position embedding FLOPs", plain_ratios},
      {"AC6 softmax limit", [] { return from(checks::softmax_limit(kSeed, 1000, 32, 32)); }},
      {"AC7 permutation suites", permutation_suites},
      {"AC8 order commutation", [] { return from(checks::order_commutation(kSeed, 100)); }},
      {"AC9 neighbor search oracle", [] { return from(checks::neighbor_oracle(kSeed, 200)); }},
      {"AC10 FPS oracle", [] { return from(checks::fps_oracle(kSeed, 100)); }},
      {"AC11 decoupled PointConv", [] { return from(checks::eff_pointconv_decoupling(kSeed, 50)); }},
      {"AC12 determinism", determinism},
      {"AC13 grid benchmark", bench},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << " [" << fmt("%.2fs", secs) << "]: " << o.detail
              << std::endl;
    failed += o.passed ? 0 : 1;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
