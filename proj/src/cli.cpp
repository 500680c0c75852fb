#include "pointmeta/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "pointmeta/analysis.hpp"
#include "pointmeta/checks.hpp"
#include "pointmeta/network.hpp"
#include "pointmeta/zoo.hpp"

namespace pmeta {

namespace {

constexpr std::uint64_t kDefaultSeed = 42;

struct NetFlags {
  std::string variant = "pointmetabase";
  std::string family = "L";
  std::size_t stride = 4;
  std::size_t k = 32;
  float radius = 0.1f;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--variant", variant, "Block variant")->capture_default_str();
    cmd->add_option("--family", family, "Family: S, L, XL or XXL")->capture_default_str();
    cmd->add_option("--stride", stride, "Subsampling stride per stage")->capture_default_str();
    cmd->add_option("--k", k, "Neighbor cap")->capture_default_str();
    cmd->add_option("--radius", radius, "Base ball radius")->capture_default_str();
  }

  NetworkConfig config() const {
    NetworkConfig cfg = family_config(family, variant);
    cfg.stride = stride;
    cfg.k = k;
    cfg.base_radius = radius;
    return cfg;
  }
};

struct CostFlags {
  std::size_t points = kDefaultReportPoints;
  std::string mode = "macs";
  bool include_search = false;
  bool records = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--points", points, "Input point count for the estimate")->capture_default_str();
    cmd->add_option("--mode", mode, "Counting mode")->check(CLI::IsMember({"macs", "flops2x"}))->capture_default_str();
    cmd->add_flag("--include-search", include_search, "Count neighbor search, FPS and interpolation lookups");
    cmd->add_flag("--records", records, "Emit key=value records instead of a table");
  }

  CountOptions options() const {
    return {mode == "macs" ? CountingMode::macs : CountingMode::flops2x, include_search};
  }
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("PMETA_SEED")) {
    try {
      std::size_t used = 0;
      const std::string s(env);
      const auto v = std::stoull(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw CLI::ValidationError("PMETA_SEED", "must be an unsigned integer");
  }
  return kDefaultSeed;
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    std::size_t v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size() || v == 0) {
      throw CLI::ValidationError("--points", "expected a comma-separated list of positive integers, got '" + list + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw CLI::ValidationError("--points", "empty list");
  return out;
}

std::vector<std::string> split(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void emit_costs(std::ostream& out, const std::vector<VariantCost>& costs, const CostFlags& flags, bool layers) {
  if (flags.records) {
    write_cost_records(out, costs, layers);
    return;
  }
  write_cost_table(out, costs);
  if (!layers) return;
  out << "\nvariant\tpath\tparams\tflops\n";
  for (const auto& c : costs) {
    for (const auto& r : c.report.rows) out << c.variant << '\t' << r.path << '\t' << r.params << '\t' << r.flops << '\n';
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pmeta: point-cloud block engine and complexity analyzer", "pmeta"};
  app.require_subcommand(1, 1);
  app.allow_windows_style_options(false);

  std::uint64_t seed = 0;
  bool seed_given = false;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& v) {
          seed = v;
          seed_given = true;
        },
        "Random seed (default 42, or PMETA_SEED)");
  };

  NetFlags net_flags;
  CostFlags cost_flags;
  bool layers = false;
  auto* analyze = app.add_subcommand("analyze", "Parameter and FLOPs report for one network");
  net_flags.add_to(analyze);
  cost_flags.add_to(analyze);
  analyze->add_flag("--layers", layers, "Also list every layer group");

  std::string variants;
  auto* compare = app.add_subcommand("compare", "Cost table for several variants at one macro config");
  compare->add_option("--variants", variants, "Comma-separated variant names")->required();
  compare->add_option("--family", net_flags.family, "Family: S, L, XL or XXL")->capture_default_str();
  cost_flags.add_to(compare);

  std::string input, weights_path, output, save_weights_path, head = "features";
  std::size_t classes = 13, fps_start = 0;
  auto* infer = app.add_subcommand("infer", "Forward a cloud through a network");
  net_flags.add_to(infer);
  infer->add_option("--input", input, "Input cloud (.xyz/.txt text, otherwise binary)")->required();
  infer->add_option("--weights", weights_path, "PMWT01 weights; seeded init when absent");
  infer->add_option("--output", output, "Output cloud with per-point outputs as features")->required();
  infer->add_option("--save-weights", save_weights_path, "Write the weights used to this path");
  infer->add_option("--head", head, "Head kind")->check(CLI::IsMember({"features", "logits", "pooled"}))->capture_default_str();
  infer->add_option("--classes", classes, "Classes for logit heads")->capture_default_str();
  infer->add_option("--fps-start", fps_start, "First FPS index")->capture_default_str();
  add_seed(infer);

  std::string suite = "all";
  auto* check = app.add_subcommand("check", "Run invariant suites");
  check->add_option("--suite", suite, "Suite name or 'all'")->capture_default_str();
  add_seed(check);

  std::string bench_points = "1000,16384,65536";
  float bench_radius = 0.0f;
  std::size_t bench_k = 32, reps = 3, max_queries = 4096;
  auto* bench = app.add_subcommand("bench", "Brute-force vs grid ball query timings");
  bench->add_option("--points", bench_points, "Comma-separated cloud sizes")->capture_default_str();
  bench->add_option("--radius", bench_radius, "Ball radius; 0 picks ~k mean neighbors")->capture_default_str();
  bench->add_option("--k", bench_k, "Neighbor cap")->capture_default_str();
  bench->add_option("--repetitions", reps, "Timed repetitions (>= 3)")->capture_default_str();
  bench->add_option("--max-queries", max_queries, "Queries per run")->capture_default_str();
  add_seed(bench);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (!seed_given) seed = default_seed();
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (analyze->parsed()) {
      const NetworkConfig cfg = net_flags.config();
      const Network net = build_network(cfg);
      emit_costs(out, {{net.config.block_variant, count_flops(net, cost_flags.points, cost_flags.options())}},
                 cost_flags, layers);
    } else if (compare->parsed()) {
      const auto ids = split(variants);
      if (ids.empty()) {
        err << "error: --variants needs at least one name\n\n" << app.help();
        return kExitUsage;
      }
      const NetworkConfig tmpl = family_config(net_flags.family);
      emit_costs(out, compare_variants(ids, tmpl, cost_flags.points, cost_flags.options()), cost_flags, false);
    } else if (infer->parsed()) {
      NetworkConfig cfg = net_flags.config();
      const PointCloud cloud = load_cloud(input, format_from_path(input));
      cfg.in_channels = cloud.feature_dim();
      cfg.head = head == "features" ? HeadKind::per_point_features
                 : head == "logits" ? HeadKind::per_point_logits
                                    : HeadKind::pooled_logits;
      cfg.num_classes = classes;
      Network net = build_network(cfg);
      if (weights_path.empty()) {
        init_weights(net, seed);
      } else {
        net.weights = load_weights(weights_path);
        check_weights_match(net.param_decls(), net.weights);
      }
      if (!save_weights_path.empty()) save_weights(net.weights, save_weights_path);
      const Tensor y = forward(net, cloud, fps_start);
      const Tensor pos = cfg.head == HeadKind::pooled_logits ? Tensor({1, 3}) : cloud.positions;
      save_cloud(PointCloud(pos, y), output, format_from_path(output));
      out << "wrote " << y.dim(0) << " x " << y.dim(1) << " outputs to " << output << '\n';
    } else if (check->parsed()) {
      const auto results = checks::run_suite(suite, seed);
      if (!checks::report(out, results)) return kExitCheckFailed;
    } else if (bench->parsed()) {
      write_bench_table(out, bench_neighbors(parse_sizes(bench_points), bench_radius, bench_k, reps, seed, max_queries));
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace pmeta
