#include "pointmeta/network.hpp"

#include <cmath>
#include <utility>

namespace pmeta {

namespace {

std::vector<std::pair<std::string, std::vector<ParamDecl>>> layer_groups(const Network& net) {
  std::vector<std::pair<std::string, std::vector<ParamDecl>>> groups;
  groups.emplace_back("stem", mlp_param_decls(net.stem, "stem"));
  for (std::size_t s = 0; s < 4; ++s) {
    const Stage& st = net.stages[s];
    groups.emplace_back(reduction_path(s + 1), block_param_decls(st.reduction, reduction_path(s + 1)));
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      groups.emplace_back(block_path(s + 1, b), block_param_decls(st.blocks[b], block_path(s + 1, b)));
    }
  }
  for (const auto& unit : net.decoder) {
    groups.emplace_back(decoder_path(unit.level), mlp_param_decls(unit.mlp, decoder_path(unit.level)));
  }
  if (net.head) groups.emplace_back("head", mlp_param_decls(*net.head, "head"));
  return groups;
}

}  // namespace

std::string stage_path(std::size_t stage) { return "enc.s" + std::to_string(stage); }
std::string block_path(std::size_t stage, std::size_t block) {
  return stage_path(stage) + ".block" + std::to_string(block);
}
std::string reduction_path(std::size_t stage) { return stage_path(stage) + ".sa"; }
std::string decoder_path(std::size_t level) { return "dec.l" + std::to_string(level); }

NetworkConfig family_config(std::string_view family, std::string_view variant) {
  NetworkConfig cfg;
  cfg.block_variant = std::string(variant);
  if (family == "S") {
    cfg.stem_channels = 32;
    cfg.blocks = {0, 0, 0, 0};
  } else if (family == "L") {
    cfg.stem_channels = 32;
    cfg.blocks = {2, 4, 2, 2};
  } else if (family == "XL") {
    cfg.stem_channels = 64;
    cfg.blocks = {3, 6, 3, 3};
  } else if (family == "XXL") {
    cfg.stem_channels = 64;
    cfg.blocks = {4, 8, 4, 4};
  } else {
    fail(ErrorKind::config, "unknown family '" + std::string(family) + "' (expected S, L, XL or XXL)");
  }
  return cfg;
}

void validate_config(const NetworkConfig& cfg) {
  if (cfg.in_channels == 0) fail(ErrorKind::config, "in_channels must be positive");
  if (cfg.stem_channels == 0) fail(ErrorKind::config, "stem channels C must be positive");
  if (cfg.stride < 2) fail(ErrorKind::config, "stride must be at least 2");
  if (!(cfg.base_radius > 0.0f) || !std::isfinite(cfg.base_radius)) {
    fail(ErrorKind::config, "base radius must be positive");
  }
  if (cfg.k == 0) fail(ErrorKind::config, "neighbor cap k must be positive");
  if (cfg.head != HeadKind::per_point_features && cfg.num_classes == 0) {
    fail(ErrorKind::config, "logit heads need num_classes > 0");
  }
  if (!is_variant(cfg.block_variant)) fail(ErrorKind::config, "unknown block variant '" + cfg.block_variant + "'");
}

std::size_t Network::level_width(std::size_t level) const {
  return level == 0 ? config.stem_channels : stages[level - 1].width;
}

std::vector<ParamDecl> Network::param_decls() const {
  std::vector<ParamDecl> all;
  for (auto& [path, decls] : layer_groups(*this)) {
    for (auto& d : decls) all.push_back(std::move(d));
  }
  return all;
}

Network build_network(const NetworkConfig& cfg) {
  validate_config(cfg);
  Network net;
  net.config = cfg;
  net.config.block_variant = canonical_variant(cfg.block_variant);
  net.stem = MlpSpec::stack(cfg.in_channels, cfg.stem_channels, cfg.stem_channels, 1);
  const ReductionStyle style = reduction_style(net.config.block_variant);
  std::size_t width = cfg.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    Stage& st = net.stages[s];
    st.width = 2 * width;
    st.radius = cfg.base_radius * static_cast<float>(1u << s);
    st.reduction = make_reduction_block(style, width, st.width, st.radius, cfg.k);
    BlockContext ctx{st.width, st.radius, cfg.k};
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
      BlockSpec block = make_block(net.config.block_variant, ctx);
      const BlockDims dims = block_dims(block);
      if (dims.output != st.width) {
        fail(ErrorKind::config, "block variant '" + net.config.block_variant + "' changes the channel width");
      }
      st.blocks.push_back(std::move(block));
    }
    width = st.width;
  }
  if (cfg.head == HeadKind::pooled_logits) {
    net.head = MlpSpec::linear(width, cfg.num_classes);
    net.out_dim = cfg.num_classes;
    return net;
  }
  std::size_t current = width;
  for (std::size_t level = 4; level-- > 0;) {
    DecoderUnit unit;
    unit.level = level;
    unit.skip_width = net.level_width(level);
    unit.coarse_width = current;
    unit.mlp = MlpSpec::stack(unit.skip_width + current, unit.skip_width, unit.skip_width, 1);
    current = unit.skip_width;
    net.decoder.push_back(std::move(unit));
  }
  if (cfg.head == HeadKind::per_point_logits) {
    net.head = MlpSpec::linear(current, cfg.num_classes);
    net.out_dim = cfg.num_classes;
  } else {
    net.out_dim = current;
  }
  return net;
}

void init_weights(Network& net, std::uint64_t seed) { net.weights = init_params(net.param_decls(), seed); }

std::array<std::size_t, 5> level_sizes(const NetworkConfig& cfg, std::size_t n) {
  std::array<std::size_t, 5> sizes{};
  sizes[0] = n;
  for (std::size_t s = 1; s < 5; ++s) sizes[s] = (sizes[s - 1] + cfg.stride - 1) / cfg.stride;
  return sizes;
}

Tensor forward(const Network& net, const PointCloud& cloud, std::size_t fps_start,
               std::vector<std::size_t>* level_points) {
  validate_cloud(cloud);
  const NetworkConfig& cfg = net.config;
  const std::size_t n = cloud.size();
  std::size_t min_points = 1;
  for (int s = 0; s < 4; ++s) min_points *= cfg.stride;
  if (n < min_points) {
    fail(ErrorKind::config, "forward needs at least stride^4 = " + std::to_string(min_points) + " points, got " +
                                std::to_string(n));
  }
  if (cloud.feature_dim() != cfg.in_channels) {
    fail(ErrorKind::dimension, "input features have width " + std::to_string(cloud.feature_dim()) + ", network expects " +
                                   std::to_string(cfg.in_channels));
  }
  if (fps_start >= n) fail(ErrorKind::parameter, "FPS start index out of range");
  check_weights_match(net.param_decls(), net.weights);
  const Params w(net.weights);

  std::vector<PointCloud> levels;
  levels.emplace_back(cloud.positions, apply_mlp(cloud.features, net.stem, w.sub("stem")));
  const auto sizes = level_sizes(cfg, n);
  for (std::size_t s = 0; s < 4; ++s) {
    const PointCloud& prev = levels.back();
    const SampleIndex sample = farthest_point_sample(prev.positions, sizes[s + 1], s == 0 ? fps_start : 0);
    const Stage& st = net.stages[s];
    PointCloud cur = run_block_at(prev, sample.indices, st.reduction, w.sub(reduction_path(s + 1)));
    for (std::size_t b = 0; b < st.blocks.size(); ++b) cur = run_block(cur, st.blocks[b], w.sub(block_path(s + 1, b)));
    levels.push_back(std::move(cur));
  }
  if (level_points) {
    level_points->clear();
    for (const auto& l : levels) level_points->push_back(l.size());
  }

  if (cfg.head == HeadKind::pooled_logits) {
    const Tensor pooled = reduce(levels.back().features, 0, ReduceMode::mean);
    Tensor out = apply_mlp(pooled.reshaped({1, pooled.size()}), *net.head, w.sub("head"));
    require_finite(out, "forward");
    return out;
  }

  PointCloud current = levels.back();
  for (const auto& unit : net.decoder) {
    const PointCloud& skip = levels[unit.level];
    const Tensor up = interpolate_features(current, skip.positions, std::min<std::size_t>(3, current.size()));
    Tensor merged = apply_mlp(concat({skip.features, up}, 1), unit.mlp, w.sub(decoder_path(unit.level)));
    current = PointCloud(skip.positions, std::move(merged));
  }
  Tensor out = net.head ? apply_mlp(current.features, *net.head, w.sub("head")) : current.features;
  require_finite(out, "forward");
  return out;
}

const char* counting_mode_name(CountingMode mode) { return mode == CountingMode::macs ? "macs" : "flops2x"; }

void CostReport::add(CostRow row) {
  total_params += row.params;
  total_flops += row.flops;
  rows.push_back(std::move(row));
}

CostReport count_params(const Network& net) {
  CostReport report;
  report.k = net.config.k;
  report.stride = net.config.stride;
  for (const auto& [path, decls] : layer_groups(net)) {
    std::uint64_t count = 0;
    for (const auto& d : decls) count += shape_count(d.shape);
    report.add({path, count, 0});
  }
  return report;
}

}  // namespace pmeta
