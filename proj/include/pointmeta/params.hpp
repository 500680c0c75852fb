#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pointmeta/tensor.hpp"

namespace pmeta {

// Flat, name-addressed parameter storage. Names are dotted layer paths, e.g.
// "enc.stage1.block0.nu.mlp.0.weight".
using ParamStore = std::map<std::string, Tensor, std::less<>>;

enum class ParamRole { weight, bias, norm_scale, norm_shift };

struct ParamDecl {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::weight;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

// Read-only view of a ParamStore under a name prefix.
class Params {
 public:
  Params() = default;
  Params(const ParamStore& store, std::string prefix = {}) : store_(&store), prefix_(std::move(prefix)) {}

  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  Params sub(std::string_view name) const;
  std::string full_name(std::string_view name) const;
  const std::string& prefix() const noexcept { return prefix_; }

 private:
  const ParamStore* store_ = nullptr;
  std::string prefix_;
};

std::string join_path(std::string_view prefix, std::string_view name);

// Glorot-uniform weights and biases, unit norm scale, zero norm shift. Each
// declared tensor draws from its own stream seeded by fnv1a(name) ^ seed.
ParamStore init_params(const std::vector<ParamDecl>& decls, std::uint64_t seed);

std::uint64_t fnv1a64(std::string_view text);
float glorot_bound(std::size_t fan_in, std::size_t fan_out);

// PMWT01 weights container.
void save_weights(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_weights(const std::filesystem::path& path);

// Throws a named-parameter error listing missing and unexpected names.
void check_weights_match(const std::vector<ParamDecl>& decls, const ParamStore& params);

}  // namespace pmeta
