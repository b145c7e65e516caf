#pragma once

#include <string>

#include "todnet/binio.hpp"
#include "todnet/flow.hpp"

namespace todnet {

enum class DeformerKind : std::uint8_t { RealNVP = 0, ConditionalMLP = 1 };

/// A trainable deformer: either the conditional Real-NVP flow or the plain
/// conditional MLP used by the ablation study. Exactly one side is populated.
struct Deformer {
  DeformerKind kind = DeformerKind::RealNVP;
  FlowParams flow;
  MlpParams mlp;  // conditional MLP deformer parameters (kind == ConditionalMLP)

  // flow.dimension carries d for both kinds
  std::size_t dimension() const { return flow.dimension; }
};

// TODF checkpoint format (all integers little-endian):
//   magic "TODF", version u16, kind u8, condition_normalized u8,
//   d u32, n_networks u32,
//   per network: n_dense u32, per dense layer: in u32, out u32,
//   then all parameters as little-endian f64 in network order
//   (per dense layer: weights row-major, then bias).
// For kind RealNVP each network is one coupling layer's conditioner, in layer
// order; transformed halves follow the fixed alternation (layer 0 = Second).
// For kind ConditionalMLP there is exactly one network.

inline constexpr std::uint16_t kTodfVersion = 1;

namespace detail {

inline void write_mlp_shapes(ByteWriter& w, const MlpParams& p) {
  w.u32(static_cast<std::uint32_t>(p.layers.size()));
  for (const DenseLayer& l : p.layers) {
    w.u32(static_cast<std::uint32_t>(l.in));
    w.u32(static_cast<std::uint32_t>(l.out));
  }
}

inline void write_mlp_values(ByteWriter& w, const MlpParams& p) {
  for (const DenseLayer& l : p.layers) {
    for (double v : l.weight) w.f64(v);
    for (double v : l.bias) w.f64(v);
  }
}

inline MlpParams read_mlp_shapes(ByteReader& r) {
  MlpParams p;
  const std::uint32_t n = r.u32();
  if (n == 0) throw ParseError(r.what + ": network with zero layers");
  for (std::uint32_t i = 0; i < n; ++i) {
    DenseLayer l;
    l.in = r.u32();
    l.out = r.u32();
    if (l.in == 0 || l.out == 0) throw ParseError(r.what + ": zero-width dense layer");
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline void read_mlp_values(ByteReader& r, MlpParams& p) {
  for (DenseLayer& l : p.layers) {
    l.weight.resize(l.in * l.out);
    l.bias.resize(l.out);
    for (double& v : l.weight) v = r.f64();
    for (double& v : l.bias) v = r.f64();
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const Deformer& d) {
  ByteWriter w;
  w.raw("TODF", 4);
  w.u16(kTodfVersion);
  w.u8(static_cast<std::uint8_t>(d.kind));
  w.u8(d.flow.condition_normalized ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(d.flow.dimension));
  if (d.kind == DeformerKind::RealNVP) {
    w.u32(static_cast<std::uint32_t>(d.flow.layers.size()));
    for (const auto& l : d.flow.layers) detail::write_mlp_shapes(w, l.conditioner);
    for (const auto& l : d.flow.layers) detail::write_mlp_values(w, l.conditioner);
  } else {
    w.u32(1);
    detail::write_mlp_shapes(w, d.mlp);
    detail::write_mlp_values(w, d.mlp);
  }
  return std::move(w.bytes);
}

inline Deformer deserialize_checkpoint(const std::string& bytes, const std::string& name) {
  ByteReader r{bytes, 0, name};
  char magic[4];
  r.raw(magic, 4);
  if (std::string(magic, 4) != "TODF")
    throw ParseError(name + ": bad magic (expected TODF)");
  const std::uint16_t version = r.u16();
  if (version != kTodfVersion)
    throw ParseError(name + ": unsupported format version " + std::to_string(version));
  const std::uint8_t kind_byte = r.u8();
  if (kind_byte > 1) throw ParseError(name + ": unknown deformer kind");
  const bool cond_norm = r.u8() != 0;
  const std::uint32_t d = r.u32();
  if (d < 2 || d % 2 != 0) throw ParseError(name + ": dimension must be even and >= 2");
  const std::uint32_t n = r.u32();
  if (n == 0) throw ParseError(name + ": checkpoint holds no networks");

  Deformer out;
  out.kind = static_cast<DeformerKind>(kind_byte);
  out.flow.dimension = d;
  out.flow.condition_normalized = cond_norm;
  if (out.kind == DeformerKind::RealNVP) {
    for (std::uint32_t i = 0; i < n; ++i) {
      CouplingLayerParams layer;
      layer.transformed_half = (i % 2 == 0) ? Half::Second : Half::First;
      layer.conditioner = detail::read_mlp_shapes(r);
      if (layer.conditioner.input_width() != d / 2 + d)
        throw ParseError(name + ": conditioner input width mismatch with dimension");
      if (layer.conditioner.output_width() != d)
        throw ParseError(name + ": conditioner output width mismatch with dimension");
      out.flow.layers.push_back(std::move(layer));
    }
    for (auto& l : out.flow.layers) detail::read_mlp_values(r, l.conditioner);
  } else {
    if (n != 1) throw ParseError(name + ": MLP checkpoint must hold exactly one network");
    out.mlp = detail::read_mlp_shapes(r);
    if (out.mlp.input_width() != 2 * static_cast<std::size_t>(d))
      throw ParseError(name + ": MLP input width mismatch with dimension");
    if (out.mlp.output_width() != d)
      throw ParseError(name + ": MLP output width mismatch with dimension");
    detail::read_mlp_values(r, out.mlp);
  }
  if (!r.at_end()) throw ParseError(name + ": trailing bytes after parameters");
  return out;
}

inline void save_checkpoint(const Deformer& d, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(d));
}

inline Deformer load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file_bytes(path), path);
}

}  // namespace todnet
