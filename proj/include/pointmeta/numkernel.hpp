#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "pointmeta/params.hpp"
#include "pointmeta/tensor.hpp"

namespace pmeta {

enum class Activation { relu, none };

// Shared pointwise MLP. Each layer is affine -> folded norm (per-channel
// scale and shift) -> activation; the last layer's activation is governed by
// final_activation.
struct MlpSpec {
  std::vector<std::size_t> layer_dims;
  bool with_norm = true;
  Activation activation = Activation::relu;
  bool final_activation = true;

  std::size_t in_dim() const { return layer_dims.front(); }
  std::size_t out_dim() const { return layer_dims.back(); }
  std::size_t layers() const { return layer_dims.size() - 1; }

  // Linear map: no norm, no activation.
  static MlpSpec linear(std::size_t in, std::size_t out);
  // `layers` affine+norm+relu layers from `in` to `out` through `hidden`.
  static MlpSpec stack(std::size_t in, std::size_t hidden, std::size_t out, std::size_t layers);

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

void validate_mlp(const MlpSpec& spec);

// Parameter names are "<prefix>.<layer>.weight" ([in, out]), ".bias",
// ".norm_scale" and ".norm_shift".
std::vector<ParamDecl> mlp_param_decls(const MlpSpec& spec, std::string_view prefix);

Tensor matmul(const Tensor& a, const Tensor& b);

// Applies the MLP along the last axis; leading axes are treated as rows.
Tensor apply_mlp(const Tensor& x, const MlpSpec& spec, const Params& weights);

Tensor softmax_axis(const Tensor& x, std::size_t axis, float temperature);

enum class ReduceMode { max, mean, sum };

Tensor reduce(const Tensor& x, std::size_t axis, ReduceMode mode);

struct MaxWithArgmax {
  Tensor values;
  std::vector<std::size_t> argmax;  // same layout as values
};

MaxWithArgmax reduce_max_argmax(const Tensor& x, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);

}  // namespace pmeta
