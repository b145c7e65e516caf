#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "todnet/checkpoint.hpp"
#include "todnet/core.hpp"
#include "todnet/loss_opt.hpp"

namespace todnet {

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

/// Scores a (query, candidate) record pair.
using Scorer = std::function<double(const EmbeddingRecord&, const EmbeddingRecord&)>;

inline Scorer cosine_scorer() {
  return [](const EmbeddingRecord& q, const EmbeddingRecord& c) {
    return cosine_similarity(q.vector, c.vector);
  };
}

inline Scorer deformer_scorer(const Deformer& deformer, ConditionMode mode) {
  return [&deformer, mode](const EmbeddingRecord& q, const EmbeddingRecord& c) {
    const Vec* cond = nullptr;
    Vec zero;
    switch (mode) {
      case ConditionMode::Target: cond = &c.vector; break;
      case ConditionMode::Query: cond = &q.vector; break;
      case ConditionMode::Caption:
        cond = c.modality == Modality::Caption ? &c.vector
             : q.modality == Modality::Caption ? &q.vector
                                               : nullptr;
        if (!cond) throw UsageError("deformer_scorer: no caption-modality side in pair");
        break;
      case ConditionMode::Image:
        cond = c.modality == Modality::Image ? &c.vector
             : q.modality == Modality::Image ? &q.vector
                                             : nullptr;
        if (!cond) throw UsageError("deformer_scorer: no image-modality side in pair");
        break;
      case ConditionMode::None:
        zero.assign(q.vector.size(), 0.0);
        cond = &zero;
        break;
    }
    Vec fq = deform(deformer, q.vector, *cond);
    Vec fc = deform(deformer, c.vector, *cond);
    return cosine_similarity(fq, fc);
  };
}

struct RankingResult {
  std::uint64_t query_id = 0;
  std::vector<std::uint64_t> ordered_target_ids;  // descending score
  std::size_t rank_of_first_positive = 0;         // 1-based
};

/// Candidates sorted by descending score, ties broken by ascending entity_id.
/// A candidate is positive when its group matches the query's group.
inline RankingResult rank_targets(const Scorer& scorer, const EmbeddingRecord& query,
                                  const std::vector<const EmbeddingRecord*>& candidates) {
  if (candidates.empty()) throw UsageError("rank_targets: no candidates");
  struct Entry {
    double score;
    std::uint64_t id;
    bool positive;
  };
  std::vector<Entry> entries;
  entries.reserve(candidates.size());
  bool any_positive = false;
  for (const EmbeddingRecord* c : candidates) {
    const bool pos = c->group_id == query.group_id;
    any_positive = any_positive || pos;
    entries.push_back(Entry{scorer(query, *c), c->entity_id, pos});
  }
  if (!any_positive) throw UsageError("rank_targets: no positive candidate");
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  RankingResult r;
  r.query_id = query.entity_id;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    r.ordered_target_ids.push_back(entries[i].id);
    if (entries[i].positive && r.rank_of_first_positive == 0) r.rank_of_first_positive = i + 1;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double recall_at_k(const std::vector<RankingResult>& rankings, std::size_t k) {
  if (k < 1) throw UsageError("recall_at_k: K must be >= 1");
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : rankings)
    if (r.rank_of_first_positive <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

inline double median_rank(const std::vector<RankingResult>& rankings) {
  if (rankings.empty()) throw UsageError("median_rank: empty input");
  std::vector<std::size_t> ranks;
  ranks.reserve(rankings.size());
  for (const auto& r : rankings) ranks.push_back(r.rank_of_first_positive);
  std::sort(ranks.begin(), ranks.end());
  const std::size_t n = ranks.size();
  if (n % 2 == 1) return static_cast<double>(ranks[n / 2]);
  return (static_cast<double>(ranks[n / 2 - 1]) + static_cast<double>(ranks[n / 2])) / 2.0;
}

/// Recall fractions in [0,1]; mR is the mean of the six recalls in the same
/// unit. Reported as percentages with one decimal.
struct MetricReport {
  std::map<std::size_t, double> r_at;   // caption retrieval
  std::map<std::size_t, double> ri_at;  // image retrieval
  double mr = 0.0;
  double med_r = 0.0;
};

inline double mean_recall(const MetricReport& partial) {
  for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}}) {
    if (!partial.r_at.count(k) || !partial.ri_at.count(k))
      throw UsageError("mean_recall: missing R@" + std::to_string(k) + " or Ri@" +
                       std::to_string(k));
  }
  return (partial.r_at.at(1) + partial.r_at.at(5) + partial.r_at.at(10) + partial.ri_at.at(1) +
          partial.ri_at.at(5) + partial.ri_at.at(10)) /
         6.0;
}

// ---------------------------------------------------------------------------
// Fold-averaged split evaluation
// ---------------------------------------------------------------------------

/// Contiguous group folds; within a fold, every fold image queries all fold
/// captions (caption retrieval, any group caption positive) and every fold
/// caption queries all fold images (image retrieval). Metrics are the
/// arithmetic mean over folds.
inline MetricReport evaluate_split(const Scorer& scorer, const EmbeddingDataset& ds,
                                   std::size_t folds) {
  if (folds < 1) throw UsageError("evaluate_split: folds must be >= 1");
  const std::vector<Group> groups = ds.groups();
  if (groups.size() % folds != 0)
    throw UsageError("evaluate_split: " + std::to_string(groups.size()) +
                     " groups not divisible into " + std::to_string(folds) + " folds");
  const std::size_t per_fold = groups.size() / folds;

  MetricReport avg;
  for (std::size_t k : {1, 5, 10}) {
    avg.r_at[k] = 0.0;
    avg.ri_at[k] = 0.0;
  }
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<const EmbeddingRecord*> images, captions;
    for (std::size_t gi = f * per_fold; gi < (f + 1) * per_fold; ++gi) {
      images.push_back(&ds.records[groups[gi].image_index]);
      for (std::size_t ci : groups[gi].caption_indices) captions.push_back(&ds.records[ci]);
    }
    std::vector<RankingResult> cap_rankings;  // image query -> captions
    for (const EmbeddingRecord* img : images)
      cap_rankings.push_back(rank_targets(scorer, *img, captions));
    std::vector<RankingResult> img_rankings;  // caption query -> images
    for (const EmbeddingRecord* cap : captions)
      img_rankings.push_back(rank_targets(scorer, *cap, images));

    for (std::size_t k : {1, 5, 10}) {
      avg.r_at[k] += recall_at_k(cap_rankings, k);
      avg.ri_at[k] += recall_at_k(img_rankings, k);
    }
    std::vector<RankingResult> all = cap_rankings;
    all.insert(all.end(), img_rankings.begin(), img_rankings.end());
    avg.med_r += median_rank(all);
  }
  for (std::size_t k : {1, 5, 10}) {
    avg.r_at[k] /= static_cast<double>(folds);
    avg.ri_at[k] /= static_cast<double>(folds);
  }
  avg.med_r /= static_cast<double>(folds);
  avg.mr = mean_recall(avg);
  return avg;
}

// ---------------------------------------------------------------------------
// Report formatting
// ---------------------------------------------------------------------------

inline std::string metric_header() {
  return "model\tcondition\tR@1\tR@5\tR@10\tRi@1\tRi@5\tRi@10\tmR\tMedR";
}

inline std::string metric_row(const std::string& model, const std::string& condition,
                              const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s\t%s\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f",
                model.c_str(), condition.c_str(), 100.0 * r.r_at.at(1), 100.0 * r.r_at.at(5),
                100.0 * r.r_at.at(10), 100.0 * r.ri_at.at(1), 100.0 * r.ri_at.at(5),
                100.0 * r.ri_at.at(10), 100.0 * r.mr, r.med_r);
  return buf;
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

struct DeformerShape {
  std::size_t n_layers = 3;
  std::size_t n_hidden_layers = 2;
  std::size_t hidden_units = 0;      // 0 -> 2d
  std::size_t mlp_hidden_layers = 4;
  std::size_t mlp_hidden_units = 0;  // 0 -> 2d
};

inline Deformer make_deformer(DeformerKind kind, std::size_t d, const DeformerShape& shape,
                              std::uint64_t seed) {
  Deformer def;
  def.kind = kind;
  def.flow.dimension = d;
  if (kind == DeformerKind::RealNVP) {
    def.flow = init_flow(d, shape.n_layers, shape.n_hidden_layers,
                         shape.hidden_units ? shape.hidden_units : 2 * d, seed);
  } else {
    def.mlp = init_mlp_deformer(d, shape.mlp_hidden_layers,
                                shape.mlp_hidden_units ? shape.mlp_hidden_units : 2 * d, seed);
  }
  return def;
}

inline const char* condition_mode_name(ConditionMode m) {
  switch (m) {
    case ConditionMode::Target: return "target";
    case ConditionMode::Caption: return "caption";
    case ConditionMode::Image: return "image";
    case ConditionMode::Query: return "query";
    case ConditionMode::None: return "no";
  }
  return "?";
}

struct AblationRow {
  std::string model;      // "No", "Real-NVP", "MLP"
  std::string condition;  // "-", "target", "no", "caption", "image", "query"
  MetricReport report;
};

/// The Table-III-style study: plain-cosine baseline, Real-NVP under the five
/// condition modes, and the conditional MLP with target condition. All cells
/// share one seed and schedule; evaluation is on the test split.
inline std::vector<AblationRow> run_ablation(const EmbeddingDataset& train_split,
                                             const EmbeddingDataset& val_split,
                                             const EmbeddingDataset& test_split,
                                             const TrainConfig& base, const DeformerShape& shape,
                                             std::size_t eval_folds = 5) {
  const std::size_t d = train_split.dimension;
  std::vector<AblationRow> rows;
  rows.push_back(
      AblationRow{"No", "-", evaluate_split(cosine_scorer(), test_split, eval_folds)});

  auto run_cell = [&](DeformerKind kind, ConditionMode mode, const std::string& model) {
    TrainConfig cfg = base;
    cfg.condition_mode = mode;
    cfg.deformer_kind = kind;
    Deformer init = make_deformer(kind, d, shape, cfg.seed);
    auto val_mr = [&](const Deformer& m) {
      return evaluate_split(deformer_scorer(m, mode), val_split, eval_folds).mr;
    };
    TrainResult tr = train(std::move(init), train_split, cfg, val_mr);
    rows.push_back(AblationRow{
        model, condition_mode_name(mode),
        evaluate_split(deformer_scorer(tr.best_model, mode), test_split, eval_folds)});
  };
  run_cell(DeformerKind::RealNVP, ConditionMode::Target, "Real-NVP");
  run_cell(DeformerKind::RealNVP, ConditionMode::None, "Real-NVP");
  run_cell(DeformerKind::RealNVP, ConditionMode::Caption, "Real-NVP");
  run_cell(DeformerKind::RealNVP, ConditionMode::Image, "Real-NVP");
  run_cell(DeformerKind::RealNVP, ConditionMode::Query, "Real-NVP");
  run_cell(DeformerKind::ConditionalMLP, ConditionMode::Target, "MLP");
  return rows;
}

}  // namespace todnet
