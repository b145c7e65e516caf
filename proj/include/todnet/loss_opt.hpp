#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "todnet/checkpoint.hpp"
#include "todnet/core.hpp"
#include "todnet/data.hpp"
#include "todnet/flow.hpp"

namespace todnet {

enum class ConditionMode { Target, Caption, Image, Query, None };

struct TrainConfig {
  double margin = 0.2;
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  double lr = 2e-5;
  std::size_t lr_decay_epoch = 15;
  double lr_decay_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  ConditionMode condition_mode = ConditionMode::Target;
  DeformerKind deformer_kind = DeformerKind::RealNVP;

  void validate() const {
    if (margin < 0.0) throw UsageError("TrainConfig: margin must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw UsageError("TrainConfig: betas must lie in [0, 1)");
    if (eps <= 0.0) throw UsageError("TrainConfig: eps must be > 0");
    if (lr <= 0.0) throw UsageError("TrainConfig: lr must be > 0");
    if (batch_size < 2) throw UsageError("TrainConfig: batch_size must be >= 2");
    if (epochs < 1) throw UsageError("TrainConfig: epochs must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Hinge rank loss with hardest negative
// ---------------------------------------------------------------------------

struct SimilarityMatrix {
  std::size_t n_queries = 0;
  std::size_t n_targets = 0;
  std::vector<double> scores;        // row-major Q x T
  std::vector<std::uint8_t> positive_mask;

  double score(std::size_t q, std::size_t t) const { return scores[q * n_targets + t]; }
  bool positive(std::size_t q, std::size_t t) const {
    return positive_mask[q * n_targets + t] != 0;
  }
};

/// One (query row, positive, hardest negative) triple whose hinge is active.
struct HingeTerm {
  std::size_t row = 0;
  std::size_t pos_col = 0;
  std::size_t neg_col = 0;
};

struct HingeLossResult {
  double loss = 0.0;
  std::size_t n_pairs = 0;           // all (row, positive) pairs, active or not
  std::vector<HingeTerm> active;     // terms with hinge > 0 (gradient routing)
};

/// Per (row, positive): max over negatives of |sim(n) - sim(p) + m|+ ;
/// loss is the mean over all (row, positive) pairs. Other positives of the
/// row are masked out of the negative max; ties pick the lowest column.
inline HingeLossResult hinge_hardest_loss(const SimilarityMatrix& sims, double margin) {
  HingeLossResult out;
  double total = 0.0;
  for (std::size_t q = 0; q < sims.n_queries; ++q) {
    // hardest negative of the row: max score over non-positive columns
    bool has_pos = false, has_neg = false;
    std::size_t hardest = 0;
    double hardest_score = 0.0;
    for (std::size_t t = 0; t < sims.n_targets; ++t) {
      if (sims.positive(q, t)) {
        has_pos = true;
        continue;
      }
      const double s = sims.score(q, t);
      if (!has_neg || s > hardest_score) {
        hardest = t;
        hardest_score = s;
        has_neg = true;
      }
    }
    if (!has_pos) throw UsageError("hinge_hardest_loss: row " + std::to_string(q) +
                                   " has no positive");
    if (!has_neg) throw UsageError("hinge_hardest_loss: row " + std::to_string(q) +
                                   " has no negative");
    for (std::size_t p = 0; p < sims.n_targets; ++p) {
      if (!sims.positive(q, p)) continue;
      ++out.n_pairs;
      const double h = hardest_score - sims.score(q, p) + margin;
      if (h > 0.0) {
        total += h;
        out.active.push_back(HingeTerm{q, p, hardest});
      }
    }
  }
  out.loss = out.n_pairs == 0 ? 0.0 : total / static_cast<double>(out.n_pairs);
  return out;
}

// ---------------------------------------------------------------------------
// Batch similarity under a condition mode
// ---------------------------------------------------------------------------

/// One side of a retrieval direction: the vector plus its group identity.
struct BatchItem {
  const Vec* vec = nullptr;
  std::uint64_t group = 0;
  Modality modality = Modality::Image;
};

namespace detail {

enum class CondSide { QuerySide, TargetSide, None };

inline CondSide condition_side(ConditionMode mode, Modality query_mod, Modality target_mod) {
  switch (mode) {
    case ConditionMode::Target:
      return CondSide::TargetSide;
    case ConditionMode::Query:
      return CondSide::QuerySide;
    case ConditionMode::None:
      return CondSide::None;
    case ConditionMode::Caption:
      if (target_mod == Modality::Caption) return CondSide::TargetSide;
      if (query_mod == Modality::Caption) return CondSide::QuerySide;
      throw UsageError("condition mode 'caption': no caption-modality side in this direction");
    case ConditionMode::Image:
      if (target_mod == Modality::Image) return CondSide::TargetSide;
      if (query_mod == Modality::Image) return CondSide::QuerySide;
      throw UsageError("condition mode 'image': no image-modality side in this direction");
  }
  throw UsageError("unknown condition mode");
}

inline Modality common_modality(const std::vector<BatchItem>& items, const char* what) {
  if (items.empty()) throw UsageError(std::string(what) + ": empty item list");
  for (const auto& it : items)
    if (it.modality != items.front().modality)
      throw UsageError(std::string(what) + ": mixed modalities in one retrieval side");
  return items.front().modality;
}

}  // namespace detail

inline Vec deform(const Deformer& d, const Vec& v, const Vec& c) {
  return d.kind == DeformerKind::RealNVP ? flow_forward(d.flow, v, c)
                                         : mlp_deformer_forward(d.mlp, v, c);
}

/// entry (q, t) = cosine of the two deformed vectors, condition picked per
/// mode; positives marked where groups match.
inline SimilarityMatrix batch_similarity(const Deformer& deformer,
                                         const std::vector<BatchItem>& queries,
                                         const std::vector<BatchItem>& targets,
                                         ConditionMode mode) {
  const Modality qm = detail::common_modality(queries, "batch_similarity: queries");
  const Modality tm = detail::common_modality(targets, "batch_similarity: targets");
  const detail::CondSide side = detail::condition_side(mode, qm, tm);
  const std::size_t d = deformer.dimension();
  const Vec zero(d, 0.0);

  SimilarityMatrix m;
  m.n_queries = queries.size();
  m.n_targets = targets.size();
  m.scores.assign(queries.size() * targets.size(), 0.0);
  m.positive_mask.assign(queries.size() * targets.size(), 0);

  if (side == detail::CondSide::None) {
    std::vector<Vec> fq, ft;
    for (const auto& q : queries) fq.push_back(deform(deformer, *q.vec, zero));
    for (const auto& t : targets) ft.push_back(deform(deformer, *t.vec, zero));
    for (std::size_t qi = 0; qi < queries.size(); ++qi)
      for (std::size_t ti = 0; ti < targets.size(); ++ti)
        m.scores[qi * targets.size() + ti] = cosine_similarity(fq[qi], ft[ti]);
  } else if (side == detail::CondSide::TargetSide) {
    std::vector<Vec> ft;  // each target deformed under its own condition
    for (const auto& t : targets) ft.push_back(deform(deformer, *t.vec, *t.vec));
    for (std::size_t qi = 0; qi < queries.size(); ++qi)
      for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        Vec fq = deform(deformer, *queries[qi].vec, *targets[ti].vec);
        m.scores[qi * targets.size() + ti] = cosine_similarity(fq, ft[ti]);
      }
  } else {
    std::vector<Vec> fq;
    for (const auto& q : queries) fq.push_back(deform(deformer, *q.vec, *q.vec));
    for (std::size_t qi = 0; qi < queries.size(); ++qi)
      for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        Vec ft = deform(deformer, *targets[ti].vec, *queries[qi].vec);
        m.scores[qi * targets.size() + ti] = cosine_similarity(fq[qi], ft);
      }
  }
  for (std::size_t qi = 0; qi < queries.size(); ++qi)
    for (std::size_t ti = 0; ti < targets.size(); ++ti)
      m.positive_mask[qi * targets.size() + ti] = queries[qi].group == targets[ti].group ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Gradients through the batch loss
// ---------------------------------------------------------------------------

/// Parameter gradients for a Deformer: one MlpParams per conditioner for the
/// flow, or a single entry for the conditional MLP.
struct DeformerGradients {
  std::vector<MlpParams> nets;
};

inline DeformerGradients zeros_like(const Deformer& d) {
  DeformerGradients g;
  if (d.kind == DeformerKind::RealNVP) {
    for (const auto& l : d.flow.layers) g.nets.push_back(zeros_like(l.conditioner));
  } else {
    g.nets.push_back(zeros_like(d.mlp));
  }
  return g;
}

namespace detail {

/// Backpropagate `upstream` (w.r.t. the deformed vector) into parameter grads.
inline void deform_backward_accum(const Deformer& d, const Vec& v, const Vec& c,
                                  const Vec& upstream, DeformerGradients& acc) {
  if (d.kind == DeformerKind::RealNVP) {
    FlowTrace trace;
    flow_forward(d.flow, v, c, &trace);
    // reuse the flow backward but route parameter grads into acc.nets
    FlowGradients fg;
    fg.layer_grads = std::move(acc.nets);
    fg.d_input.assign(d.flow.dimension, 0.0);
    fg.d_condition.assign(d.flow.dimension, 0.0);
    flow_backward_accum(d.flow, trace, upstream, fg, c);
    acc.nets = std::move(fg.layer_grads);
  } else {
    MlpTrace trace;
    mlp_deformer_forward(d.mlp, v, c, &trace);
    mlp_backward(d.mlp, trace, upstream, acc.nets[0]);
  }
}

/// d cos(a,b) / d a, scaled by w.
inline Vec cosine_grad_lhs(const Vec& a, const Vec& b, double w) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine gradient: zero-norm input");
  const double c = dot(a, b) / (na * nb);
  Vec g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    g[i] = w * (b[i] / (na * nb) - c * a[i] / (na * na));
  return g;
}

/// One retrieval direction: loss plus parameter-gradient accumulation.
inline double direction_loss_grad(const Deformer& deformer, const std::vector<BatchItem>& queries,
                                  const std::vector<BatchItem>& targets, ConditionMode mode,
                                  double margin, DeformerGradients* acc) {
  SimilarityMatrix m = batch_similarity(deformer, queries, targets, mode);
  HingeLossResult h = hinge_hardest_loss(m, margin);
  if (!acc || h.active.empty() || h.n_pairs == 0) return h.loss;

  const Modality qm = common_modality(queries, "direction_loss_grad: queries");
  const Modality tm = common_modality(targets, "direction_loss_grad: targets");
  const CondSide side = condition_side(mode, qm, tm);
  const Vec zero(deformer.dimension(), 0.0);
  const double w0 = 1.0 / static_cast<double>(h.n_pairs);

  auto pair_condition = [&](std::size_t qi, std::size_t ti) -> const Vec& {
    switch (side) {
      case CondSide::TargetSide:
        return *targets[ti].vec;
      case CondSide::QuerySide:
        return *queries[qi].vec;
      default:
        return zero;
    }
  };
  // gradient of one similarity entry, weight w, pushed into acc
  auto backprop_entry = [&](std::size_t qi, std::size_t ti, double w) {
    const Vec& c = pair_condition(qi, ti);
    Vec fq = deform(deformer, *queries[qi].vec, c);
    Vec ft = deform(deformer, *targets[ti].vec, c);
    deform_backward_accum(deformer, *queries[qi].vec, c, cosine_grad_lhs(fq, ft, w), *acc);
    deform_backward_accum(deformer, *targets[ti].vec, c, cosine_grad_lhs(ft, fq, w), *acc);
  };
  for (const HingeTerm& term : h.active) {
    backprop_entry(term.row, term.neg_col, +w0);
    backprop_entry(term.row, term.pos_col, -w0);
  }
  return h.loss;
}

}  // namespace detail

/// A training batch: the selected groups' image and caption items.
struct GroupBatch {
  std::vector<BatchItem> images;
  std::vector<BatchItem> captions;
};

inline GroupBatch make_group_batch(const EmbeddingDataset& ds, const std::vector<Group>& groups,
                                   const std::vector<std::size_t>& group_indices) {
  GroupBatch b;
  for (std::size_t gi : group_indices) {
    const Group& g = groups[gi];
    const auto& img = ds.records[g.image_index];
    b.images.push_back(BatchItem{&img.vector, img.group_id, Modality::Image});
    for (std::size_t ci : g.caption_indices) {
      const auto& cap = ds.records[ci];
      b.captions.push_back(BatchItem{&cap.vector, cap.group_id, Modality::Caption});
    }
  }
  return b;
}

/// Image-retrieval loss (caption queries, image targets) plus caption-retrieval
/// loss (image queries, caption targets). Pass `acc` to also accumulate
/// parameter gradients.
inline double bidirectional_batch_loss(const Deformer& deformer, const GroupBatch& batch,
                                       const TrainConfig& cfg,
                                       DeformerGradients* acc = nullptr) {
  if (batch.images.size() < 2)
    throw UsageError("bidirectional_batch_loss: batch needs >= 2 groups");
  const double li = detail::direction_loss_grad(deformer, batch.captions, batch.images,
                                                cfg.condition_mode, cfg.margin, acc);
  const double lc = detail::direction_loss_grad(deformer, batch.images, batch.captions,
                                                cfg.condition_mode, cfg.margin, acc);
  return li + lc;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

namespace detail {

inline std::vector<std::vector<double>*> tensor_list(MlpParams& p) {
  std::vector<std::vector<double>*> out;
  for (DenseLayer& l : p.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

inline std::vector<std::vector<double>*> tensor_list(Deformer& d) {
  std::vector<std::vector<double>*> out;
  if (d.kind == DeformerKind::RealNVP) {
    for (auto& l : d.flow.layers)
      for (auto* t : tensor_list(l.conditioner)) out.push_back(t);
  } else {
    for (auto* t : tensor_list(d.mlp)) out.push_back(t);
  }
  return out;
}

inline std::vector<const std::vector<double>*> tensor_list(const DeformerGradients& g) {
  std::vector<const std::vector<double>*> out;
  for (const MlpParams& p : g.nets)
    for (const DenseLayer& l : p.layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  return out;
}

}  // namespace detail

inline AdamState make_adam_state(Deformer& d) {
  AdamState s;
  for (auto* t : detail::tensor_list(d)) {
    s.m.emplace_back(t->size(), 0.0);
    s.v.emplace_back(t->size(), 0.0);
  }
  return s;
}

/// Standard bias-corrected Adam update.
inline void adam_step(Deformer& params, const DeformerGradients& grads, AdamState& state,
                      double lr, double beta1, double beta2, double eps) {
  auto ps = detail::tensor_list(params);
  auto gs = detail::tensor_list(grads);
  if (ps.size() != gs.size() || ps.size() != state.m.size())
    throw UsageError("adam_step: parameter/gradient/state shapes differ");
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t ti = 0; ti < ps.size(); ++ti) {
    std::vector<double>& p = *ps[ti];
    const std::vector<double>& g = *gs[ti];
    if (p.size() != g.size()) throw UsageError("adam_step: tensor shape mismatch");
    std::vector<double>& m = state.m[ti];
    std::vector<double>& v = state.v[ti];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return epoch < cfg.lr_decay_epoch ? cfg.lr : cfg.lr * cfg.lr_decay_factor;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  double val_mr = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Deformer final_model;
  Deformer best_model;
  double best_val_mr = 0.0;
  std::vector<EpochLog> logs;
};

/// Seeded batches, bidirectional loss, Adam; after each epoch the eval
/// callback supplies validation mR and the best snapshot is retained.
inline TrainResult train(Deformer model, const EmbeddingDataset& train_split,
                         const TrainConfig& cfg,
                         const std::function<double(const Deformer&)>& eval_val_mr,
                         const std::function<void(const EpochLog&)>& log_sink = nullptr) {
  cfg.validate();
  if (train_split.records.empty()) throw UsageError("train: empty training split");
  const std::vector<Group> groups = train_split.groups();
  if (groups.size() < 2) throw UsageError("train: need >= 2 training groups");

  TrainResult result;
  AdamState adam = make_adam_state(model);
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, cfg);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (const auto& batch_groups :
         batch_sampler(groups.size(), cfg.batch_size, cfg.seed, epoch)) {
      GroupBatch batch = make_group_batch(train_split, groups, batch_groups);
      DeformerGradients grads = zeros_like(model);
      loss_sum += bidirectional_batch_loss(model, batch, cfg, &grads);
      adam_step(model, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps);
      ++n_batches;
    }
    const double val_mr = eval_val_mr ? eval_val_mr(model) : 0.0;
    if (!have_best || val_mr > result.best_val_mr) {
      result.best_model = model;
      result.best_val_mr = val_mr;
      have_best = true;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochLog log{epoch, n_batches == 0 ? 0.0 : loss_sum / double(n_batches), val_mr, lr, secs};
    result.logs.push_back(log);
    if (log_sink) log_sink(log);
  }
  result.final_model = std::move(model);
  return result;
}

}  // namespace todnet
