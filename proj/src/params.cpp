#include "pointmeta/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

namespace pmeta {

std::string join_path(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  if (name.empty()) return std::string(prefix);
  std::string out;
  out.reserve(prefix.size() + 1 + name.size());
  out.append(prefix).push_back('.');
  out.append(name);
  return out;
}

std::string Params::full_name(std::string_view name) const { return join_path(prefix_, name); }

const Tensor& Params::at(std::string_view name) const {
  const std::string full = full_name(name);
  if (store_ == nullptr) fail(ErrorKind::named_parameter, "no parameter store bound; missing '" + full + "'");
  auto it = store_->find(full);
  if (it == store_->end()) fail(ErrorKind::named_parameter, "missing parameter '" + full + "'");
  return it->second;
}

bool Params::contains(std::string_view name) const {
  return store_ != nullptr && store_->find(full_name(name)) != store_->end();
}

Params Params::sub(std::string_view name) const {
  Params p;
  p.store_ = store_;
  p.prefix_ = full_name(name);
  return p;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

float glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

ParamStore init_params(const std::vector<ParamDecl>& decls, std::uint64_t seed) {
  ParamStore store;
  for (const auto& decl : decls) {
    Tensor t(decl.shape);
    switch (decl.role) {
      case ParamRole::norm_scale:
        for (auto& v : t.data()) v = 1.0f;
        break;
      case ParamRole::norm_shift:
        break;
      case ParamRole::weight:
      case ParamRole::bias: {
        std::mt19937_64 rng(fnv1a64(decl.name) ^ seed);
        const float b = glorot_bound(decl.fan_in, decl.fan_out);
        for (auto& v : t.data()) {
          // 24 random mantissa bits -> u in [0, 1); avoids library-specific distributions.
          const float u = static_cast<float>(rng() >> 40) * 0x1.0p-24f;
          v = (2.0f * u - 1.0f) * b;
        }
        break;
      }
    }
    store.emplace(decl.name, std::move(t));
  }
  return store;
}

namespace {

constexpr char kWeightsMagic[6] = {'P', 'M', 'W', 'T', '0', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    fail(ErrorKind::format, std::string("truncated weights file while reading ") + what + " at offset " +
                                std::to_string(static_cast<long long>(is.tellg())));
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_weights(const ParamStore& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os.write(kWeightsMagic, sizeof(kWeightsMagic));
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_f32(os, v);
  }
  if (!os) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

ParamStore load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  char magic[sizeof(kWeightsMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    fail(ErrorKind::format, "'" + path.string() + "' is not a PMWT01 weights file (bad magic at offset 0)");
  }
  const std::uint32_t count = get_u32(is, "record count");
  ParamStore store;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t len = get_u32(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) fail(ErrorKind::format, "truncated name in record " + std::to_string(r));
    const std::uint32_t rank = get_u32(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(is, "dims");
    Tensor t(shape);
    for (auto& v : t.data()) v = std::bit_cast<float>(get_u32(is, "payload"));
    if (!store.emplace(name, std::move(t)).second) {
      fail(ErrorKind::format, "duplicate record '" + name + "'");
    }
  }
  return store;
}

void check_weights_match(const std::vector<ParamDecl>& decls, const ParamStore& params) {
  std::set<std::string> expected;
  for (const auto& d : decls) expected.insert(d.name);
  std::string missing, extra, mismatched;
  for (const auto& d : decls) {
    auto it = params.find(d.name);
    if (it == params.end()) {
      missing += " " + d.name;
    } else if (it->second.shape() != d.shape) {
      mismatched += " " + d.name + shape_string(it->second.shape()) + "!=" + shape_string(d.shape);
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.count(name)) extra += " " + name;
  }
  if (!missing.empty() || !extra.empty() || !mismatched.empty()) {
    std::string msg = "weights do not match the network layout";
    if (!missing.empty()) msg += "; missing:" + missing;
    if (!extra.empty()) msg += "; unexpected:" + extra;
    if (!mismatched.empty()) msg += "; shape mismatch:" + mismatched;
    fail(ErrorKind::named_parameter, msg);
  }
}

}  // namespace pmeta
