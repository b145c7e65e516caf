#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "todnet/binio.hpp"
#include "todnet/core.hpp"

namespace todnet {

// ---------------------------------------------------------------------------
// Synthetic hierarchical embeddings
// ---------------------------------------------------------------------------

/// A dataset-global pool of aspect vectors is shared by every group and
/// split; each group draws its own concept vector. Captions reference single
/// aspects while the image blends all of them, so plain cosine increasingly
/// confuses aspect-mates across groups as aspect_signal grows — and a
/// conditional deformer can learn the fixed aspect subspace.
struct SyntheticConfig {
  std::size_t train_groups = 500;
  std::size_t val_groups = 100;
  std::size_t test_groups = 100;
  std::size_t dimension = 64;
  std::size_t n_aspects = 4;
  std::size_t captions_per_image = 5;
  double aspect_signal = 10.0;  // norm of each aspect vector
  double shared_signal = 1.0;   // norm of the shared concept vector
  double noise = 0.3;           // norm of the per-record noise vector
  std::uint64_t seed = 1;

  void validate() const {
    if (dimension < 2 || dimension % 2 != 0)
      throw UsageError("SyntheticConfig: dimension must be even and >= 2");
    if (n_aspects < 1) throw UsageError("SyntheticConfig: n_aspects must be >= 1");
    if (captions_per_image < 1)
      throw UsageError("SyntheticConfig: captions_per_image must be >= 1");
    if (aspect_signal <= 0.0 || shared_signal <= 0.0)
      throw UsageError("SyntheticConfig: signal scales must be > 0");
    if (noise < 0.0) throw UsageError("SyntheticConfig: noise must be >= 0");
    if (train_groups == 0 || val_groups == 0 || test_groups == 0)
      throw UsageError("SyntheticConfig: all splits need >= 1 group");
  }
};

struct SyntheticDatasets {
  EmbeddingDataset train;
  EmbeddingDataset val;
  EmbeddingDataset test;
};

namespace detail {

/// Random direction scaled to an exact norm (zero stays zero).
inline Vec random_scaled(std::size_t d, double target_norm, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(d);
  for (double& x : v) x = g(rng);
  if (target_norm == 0.0) return Vec(d, 0.0);
  const double n = norm(v);
  for (double& x : v) x = x / n * target_norm;
  return v;
}

inline EmbeddingDataset generate_split(const SyntheticConfig& cfg,
                                       const std::vector<Vec>& aspects, std::size_t n_groups,
                                       Split split, std::mt19937_64& rng,
                                       std::uint64_t& next_entity, std::uint64_t& next_group) {
  EmbeddingDataset ds;
  ds.dimension = cfg.dimension;
  ds.split = split;
  const std::size_t d = cfg.dimension;
  for (std::size_t gi = 0; gi < n_groups; ++gi) {
    const std::uint64_t group_id = next_group++;
    Vec shared = random_scaled(d, cfg.shared_signal, rng);

    Vec image = shared;
    for (std::size_t a = 0; a < cfg.n_aspects; ++a)
      for (std::size_t i = 0; i < d; ++i) image[i] += aspects[a][i] / double(cfg.n_aspects);
    Vec img_noise = random_scaled(d, cfg.noise, rng);
    for (std::size_t i = 0; i < d; ++i) image[i] += img_noise[i];
    ds.records.push_back(
        EmbeddingRecord{next_entity++, Modality::Image, group_id, l2_normalize(image)});

    for (std::size_t ci = 0; ci < cfg.captions_per_image; ++ci) {
      const std::size_t a = ci % cfg.n_aspects;
      Vec cap = shared;
      for (std::size_t i = 0; i < d; ++i) cap[i] += aspects[a][i];
      Vec cap_noise = random_scaled(d, cfg.noise, rng);
      for (std::size_t i = 0; i < d; ++i) cap[i] += cap_noise[i];
      ds.records.push_back(
          EmbeddingRecord{next_entity++, Modality::Caption, group_id, l2_normalize(cap)});
    }
  }
  return ds;
}

}  // namespace detail

inline SyntheticDatasets generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  // Aspect pool is global: every split references the same aspect directions.
  std::vector<Vec> aspects;
  for (std::size_t a = 0; a < cfg.n_aspects; ++a)
    aspects.push_back(detail::random_scaled(cfg.dimension, cfg.aspect_signal, rng));
  std::uint64_t next_entity = 0;
  std::uint64_t next_group = 0;
  SyntheticDatasets out;
  out.train = detail::generate_split(cfg, aspects, cfg.train_groups, Split::Train, rng,
                                     next_entity, next_group);
  out.val = detail::generate_split(cfg, aspects, cfg.val_groups, Split::Val, rng, next_entity,
                                   next_group);
  out.test = detail::generate_split(cfg, aspects, cfg.test_groups, Split::Test, rng, next_entity,
                                    next_group);
  return out;
}

// ---------------------------------------------------------------------------
// TDE1 embedding file format
// ---------------------------------------------------------------------------
// Header: magic "TDE1", version u16, d u32, record count u64.
// Records (fixed stride): entity_id u64, modality u8, group_id u64,
// d little-endian f32 coordinates. All integers little-endian.

inline constexpr std::uint16_t kTdeVersion = 1;

inline std::string serialize_embeddings(const EmbeddingDataset& ds) {
  ByteWriter w;
  w.raw("TDE1", 4);
  w.u16(kTdeVersion);
  w.u32(static_cast<std::uint32_t>(ds.dimension));
  w.u64(ds.records.size());
  for (const auto& r : ds.records) {
    if (r.vector.size() != ds.dimension)
      throw UsageError("write_embeddings: record dimension mismatch");
    w.u64(r.entity_id);
    w.u8(static_cast<std::uint8_t>(r.modality));
    w.u64(r.group_id);
    for (double x : r.vector) w.f32(static_cast<float>(x));
  }
  return std::move(w.bytes);
}

inline void write_embeddings(const EmbeddingDataset& ds, const std::string& path) {
  write_file_bytes(path, serialize_embeddings(ds));
}

inline EmbeddingDataset deserialize_embeddings(const std::string& bytes, const std::string& name) {
  ByteReader r{bytes, 0, name};
  char magic[4];
  r.raw(magic, 4);
  if (std::string(magic, 4) != "TDE1") throw ParseError(name + ": bad magic (expected TDE1)");
  const std::uint16_t version = r.u16();
  if (version != kTdeVersion)
    throw ParseError(name + ": unsupported format version " + std::to_string(version));
  const std::uint32_t d = r.u32();
  if (d < 2 || d % 2 != 0) throw ParseError(name + ": dimension must be even and >= 2");
  const std::uint64_t count = r.u64();

  EmbeddingDataset ds;
  ds.dimension = d;
  ds.records.reserve(count);
  std::vector<std::uint64_t> seen_ids;
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.entity_id = r.u64();
    const std::uint8_t m = r.u8();
    if (m > 1) throw ParseError(name + ": invalid modality byte");
    rec.modality = static_cast<Modality>(m);
    rec.group_id = r.u64();
    rec.vector.resize(d);
    for (std::uint32_t k = 0; k < d; ++k) {
      const float f = r.f32();
      if (!std::isfinite(f)) throw ParseError(name + ": non-finite coordinate");
      rec.vector[k] = static_cast<double>(f);
    }
    ds.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw ParseError(name + ": trailing bytes after declared records");
  std::vector<std::uint64_t> ids;
  ids.reserve(ds.records.size());
  for (const auto& rec : ds.records) ids.push_back(rec.entity_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ParseError(name + ": duplicate entity_id");
  try {
    ds.groups();  // enforces one image + >=1 captions per group
  } catch (const UsageError& e) {
    throw ParseError(name + ": group integrity violated (" + e.what() + ")");
  }
  return ds;
}

inline EmbeddingDataset read_embeddings(const std::string& path) {
  return deserialize_embeddings(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

/// Seeded per-epoch shuffle of group indices, partitioned into batches of
/// batch_size groups. A trailing batch is kept only if it has >= 2 groups.
inline std::vector<std::vector<std::size_t>> batch_sampler(std::size_t n_groups,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed,
                                                           std::uint64_t epoch) {
  if (batch_size < 2) throw UsageError("batch_sampler: batch_size must be >= 2");
  std::vector<std::size_t> order(n_groups);
  for (std::size_t i = 0; i < n_groups; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n_groups; start += batch_size) {
    const std::size_t end = std::min(n_groups, start + batch_size);
    if (end - start < 2) break;  // drop singleton remainder
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace todnet
