#include "ndi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ndi::ckpt {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated data");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
  }
  double f64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double Checkpoint::meta_at(const std::string& name) const {
  auto it = meta.find(name);
  if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta value '" + name + "'");
  return it->second;
}

const Eigen::MatrixXd& Checkpoint::array_at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array '" + name + "'");
  return it->second;
}

std::string serialize(const Checkpoint& c) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_str(out, c.kind);
  put_u32(out, static_cast<std::uint32_t>(c.widths.size()));
  for (auto w : c.widths) put_u32(out, w);
  put_u32(out, static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [name, value] : c.meta) {
    put_str(out, name);
    put_f64(out, value);
  }
  put_u32(out, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, m] : c.arrays) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
    }
  }
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.kind = r.str();
  c.widths.resize(r.u32());
  for (auto& w : c.widths) w = r.u32();
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string name = r.str();
    c.meta[name] = r.f64();
  }
  const std::uint32_t n_arrays = r.u32();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t a = 0; a < rows; ++a) {
      for (std::uint32_t b = 0; b < cols; ++b) m(a, b) = r.f64();
    }
    c.arrays[name] = std::move(m);
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return c;
}

void save(const Checkpoint& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::string bytes = serialize(c);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

Checkpoint load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

void put_mlp(Checkpoint& c, const std::string& prefix, const nn::Mlp& mlp) {
  c.meta[prefix + ".n_layers"] = double(mlp.layers.size());
  c.meta[prefix + ".output_tanh"] = mlp.output_activation() == nn::Activation::Tanh ? 1.0 : 0.0;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    const std::string p = prefix + ".layer" + std::to_string(i);
    c.arrays[p + ".weight"] = l.weight->value;
    c.arrays[p + ".bias"] = l.bias->value;
    c.meta[p + ".spectral"] = l.spectral ? 1.0 : 0.0;
    if (l.mask) c.arrays[p + ".mask"] = *l.mask;
    c.arrays[p + ".u"] = l.u;
    c.arrays[p + ".v"] = l.v;
  }
}

nn::Mlp get_mlp(const Checkpoint& c, const std::string& prefix) {
  const auto n_layers = static_cast<std::size_t>(c.meta_at(prefix + ".n_layers"));
  if (n_layers == 0) throw std::runtime_error("checkpoint: MLP '" + prefix + "' has no layers");
  std::vector<Eigen::Index> widths;
  bool spectral = false;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    const auto& w = c.array_at(p + ".weight");
    if (i == 0) widths.push_back(w.cols());
    widths.push_back(w.rows());
    spectral = spectral || c.meta_at(p + ".spectral") != 0.0;
  }
  std::mt19937_64 rng(0);
  nn::Mlp mlp(widths, false, rng,
              c.meta_at(prefix + ".output_tanh") != 0.0 ? nn::Activation::Tanh
                                                        : nn::Activation::Identity);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    auto& l = mlp.layers[i];
    l.weight->value = c.array_at(p + ".weight");
    l.bias->value = c.array_at(p + ".bias");
    l.spectral = c.meta_at(p + ".spectral") != 0.0;
    if (auto it = c.arrays.find(p + ".mask"); it != c.arrays.end()) l.mask = it->second;
    l.u = c.array_at(p + ".u");
    l.v = c.array_at(p + ".v");
  }
  return mlp;
}

}  // namespace ndi::ckpt
