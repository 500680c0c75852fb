#include "pointmeta/numkernel.hpp"

#include <cmath>
#include <string>

namespace pmeta {

namespace {

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    fail(ErrorKind::parameter, "axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

std::string layer_name(std::string_view prefix, std::size_t layer, std::string_view leaf) {
  return join_path(join_path(prefix, std::to_string(layer)), leaf);
}

}  // namespace

MlpSpec MlpSpec::linear(std::size_t in, std::size_t out) {
  return MlpSpec{{in, out}, false, Activation::none, false};
}

MlpSpec MlpSpec::stack(std::size_t in, std::size_t hidden, std::size_t out, std::size_t layers) {
  MlpSpec spec;
  spec.layer_dims.push_back(in);
  for (std::size_t l = 1; l < layers; ++l) spec.layer_dims.push_back(hidden);
  spec.layer_dims.push_back(out);
  return spec;
}

void validate_mlp(const MlpSpec& spec) {
  if (spec.layer_dims.size() < 2) fail(ErrorKind::spec, "MLP needs at least an input and an output dim");
  for (auto d : spec.layer_dims) {
    if (d == 0) fail(ErrorKind::spec, "MLP layer dims must be positive");
  }
}

std::vector<ParamDecl> mlp_param_decls(const MlpSpec& spec, std::string_view prefix) {
  validate_mlp(spec);
  std::vector<ParamDecl> decls;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.layer_dims[l];
    const std::size_t out = spec.layer_dims[l + 1];
    decls.push_back({layer_name(prefix, l, "weight"), {in, out}, ParamRole::weight, in, out});
    decls.push_back({layer_name(prefix, l, "bias"), {out}, ParamRole::bias, in, out});
    if (spec.with_norm) {
      decls.push_back({layer_name(prefix, l, "norm_scale"), {out}, ParamRole::norm_scale, in, out});
      decls.push_back({layer_name(prefix, l, "norm_shift"), {out}, ParamRole::norm_shift, in, out});
    }
  }
  return decls;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorKind::dimension, "matmul shapes " + a.shape_str() + " and " + b.shape_str() + " do not agree");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += double(a[i * k + t]) * double(b[t * n + j]);
      out[i * n + j] = static_cast<float>(acc);
    }
  }
  require_finite(out, "matmul");
  return out;
}

Tensor apply_mlp(const Tensor& x, const MlpSpec& spec, const Params& weights) {
  validate_mlp(spec);
  if (x.rank() == 0 || x.cols() != spec.in_dim()) {
    fail(ErrorKind::dimension, "MLP expects last dim " + std::to_string(spec.in_dim()) + ", got shape " +
                                   x.shape_str());
  }
  const std::size_t rows = x.rows();
  std::vector<float> cur(x.values());
  std::vector<double> acc;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.layer_dims[l];
    const std::size_t out = spec.layer_dims[l + 1];
    const Params layer = weights.sub(std::to_string(l));
    const Tensor& w = layer.at("weight");
    const Tensor& b = layer.at("bias");
    if (w.shape() != Shape{in, out} || b.shape() != Shape{out}) {
      fail(ErrorKind::dimension, "layer '" + layer.prefix() + "' expects weight (" + std::to_string(in) + "," +
                                     std::to_string(out) + "), got " + w.shape_str());
    }
    const Tensor* scale = nullptr;
    const Tensor* shift = nullptr;
    if (spec.with_norm) {
      scale = &layer.at("norm_scale");
      shift = &layer.at("norm_shift");
      if (scale->shape() != Shape{out} || shift->shape() != Shape{out}) {
        fail(ErrorKind::dimension, "norm of layer '" + layer.prefix() + "' has wrong width");
      }
    }
    const bool act = spec.activation == Activation::relu && (l + 1 < spec.layers() || spec.final_activation);
    std::vector<float> next(rows * out);
    acc.assign(out, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) acc[o] = b[o];
      const float* xr = cur.data() + r * in;
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = xr[i];
        const float* wr = w.data().data() + i * out;
        for (std::size_t o = 0; o < out; ++o) acc[o] += xi * double(wr[o]);
      }
      float* yr = next.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        float v = static_cast<float>(acc[o]);
        if (scale) v = (*scale)[o] * v + (*shift)[o];
        if (act && v < 0.0f) v = 0.0f;
        yr[o] = v;
      }
    }
    cur = std::move(next);
  }
  Shape shape = x.shape();
  shape.back() = spec.out_dim();
  Tensor y(std::move(shape), std::move(cur));
  require_finite(y, "apply_mlp");
  return y;
}

Tensor softmax_axis(const Tensor& x, std::size_t axis, float temperature) {
  if (!(temperature > 0.0f)) {
    fail(ErrorKind::parameter, "softmax temperature must be positive, got " + std::to_string(temperature));
  }
  const AxisLayout l = axis_layout(x.shape(), axis);
  if (l.length == 0) fail(ErrorKind::parameter, "softmax over an empty axis");
  Tensor out(x.shape());
  std::vector<double> e(l.length);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      float mx = x[base];
      for (std::size_t t = 1; t < l.length; ++t) mx = std::max(mx, x[base + t * l.inner]);
      double sum = 0.0;
      for (std::size_t t = 0; t < l.length; ++t) {
        e[t] = std::exp((double(x[base + t * l.inner]) - double(mx)) / double(temperature));
        sum += e[t];
      }
      for (std::size_t t = 0; t < l.length; ++t) out[base + t * l.inner] = static_cast<float>(e[t] / sum);
    }
  }
  require_finite(out, "softmax_axis");
  return out;
}

Tensor reduce(const Tensor& x, std::size_t axis, ReduceMode mode) {
  if (mode == ReduceMode::max) return reduce_max_argmax(x, axis).values;
  const AxisLayout l = axis_layout(x.shape(), axis);
  if (l.length == 0) fail(ErrorKind::parameter, "reduction over an empty axis");
  Tensor out(drop_axis(x.shape(), axis));
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      double acc = 0.0;
      for (std::size_t t = 0; t < l.length; ++t) acc += x[base + t * l.inner];
      if (mode == ReduceMode::mean) acc /= double(l.length);
      out[o * l.inner + in] = static_cast<float>(acc);
    }
  }
  require_finite(out, "reduce");
  return out;
}

MaxWithArgmax reduce_max_argmax(const Tensor& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  if (l.length == 0) fail(ErrorKind::parameter, "reduction over an empty axis");
  MaxWithArgmax r{Tensor(drop_axis(x.shape(), axis)), std::vector<std::size_t>(l.outer * l.inner)};
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      std::size_t best = 0;
      float mx = x[base];
      for (std::size_t t = 1; t < l.length; ++t) {
        const float v = x[base + t * l.inner];
        if (v > mx) {
          mx = v;
          best = t;
        }
      }
      r.values[o * l.inner + in] = mx;
      r.argmax[o * l.inner + in] = best;
    }
  }
  return r;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorKind::parameter, "concat of zero parts");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) fail(ErrorKind::parameter, "concat axis out of range for " + shape_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) {
      fail(ErrorKind::dimension, "concat shapes " + shape_string(ref) + " and " + shape_string(s) +
                                     " disagree off axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  Tensor out(out_shape);
  std::size_t pos = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (const auto& p : parts) {
      const std::size_t chunk = p.shape()[axis] * inner;
      const float* src = p.data().data() + o * chunk;
      std::copy(src, src + chunk, out.data().data() + pos);
      pos += chunk;
    }
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

}  // namespace pmeta
