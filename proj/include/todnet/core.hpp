#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "todnet/errors.hpp"

namespace todnet {

/// A d-dimensional embedded vector. Coordinates are kept in 64-bit floats
/// internally; the on-disk format stores 32-bit floats.
using Vec = std::vector<double>;

enum class Modality : std::uint8_t { Image = 0, Caption = 1 };

enum class Split { Train, Val, Test };

struct EmbeddingRecord {
  std::uint64_t entity_id = 0;
  Modality modality = Modality::Image;
  std::uint64_t group_id = 0;
  Vec vector;
};

/// One image plus its positive captions, by index into EmbeddingDataset::records.
struct Group {
  std::uint64_t group_id = 0;
  std::size_t image_index = 0;
  std::vector<std::size_t> caption_indices;
};

struct EmbeddingDataset {
  std::size_t dimension = 0;
  std::vector<EmbeddingRecord> records;
  Split split = Split::Train;

  /// Groups in first-appearance order. Throws UsageError if any group lacks
  /// exactly one image or has no caption.
  std::vector<Group> groups() const;
};

inline double dot(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline void check_finite(const Vec& a, const char* what) {
  for (double x : a) {
    if (!std::isfinite(x)) throw NumericOverflowError(std::string(what) + ": non-finite entry");
  }
}

inline double cosine_similarity(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw UsageError("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm input");
  return dot(a, b) / (na * nb);
}

inline Vec l2_normalize(const Vec& a) {
  const double n = norm(a);
  if (n == 0.0) throw DegenerateInputError("l2_normalize: zero-norm input");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
  return out;
}

inline std::vector<Group> EmbeddingDataset::groups() const {
  std::vector<Group> out;
  std::vector<std::uint64_t> order;  // group_id in first-appearance order
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    std::size_t gi = out.size();
    for (std::size_t j = 0; j < out.size(); ++j) {
      if (out[j].group_id == r.group_id) {
        gi = j;
        break;
      }
    }
    if (gi == out.size()) {
      out.push_back(Group{r.group_id, records.size(), {}});
    }
    if (r.modality == Modality::Image) {
      if (out[gi].image_index != records.size())
        throw UsageError("group " + std::to_string(r.group_id) + " has more than one image");
      out[gi].image_index = i;
    } else {
      out[gi].caption_indices.push_back(i);
    }
  }
  for (const auto& g : out) {
    if (g.image_index >= records.size())
      throw UsageError("group " + std::to_string(g.group_id) + " has no image record");
    if (g.caption_indices.empty())
      throw UsageError("group " + std::to_string(g.group_id) + " has no caption records");
  }
  return out;
}

}  // namespace todnet
