#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "todnet/eval.hpp"

using namespace todnet;

namespace {

std::vector<RankingResult> from_ranks(const std::vector<std::size_t>& ranks) {
  std::vector<RankingResult> out;
  for (std::size_t r : ranks) out.push_back(RankingResult{0, {}, r});
  return out;
}

Vec random_vec(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(d);
  for (double& x : v) x = g(rng);
  return v;
}

EmbeddingDataset random_dataset(std::size_t n_groups, std::size_t captions, std::size_t d,
                                std::mt19937_64& rng) {
  EmbeddingDataset ds;
  ds.dimension = d;
  std::uint64_t id = 0;
  for (std::uint64_t g = 0; g < n_groups; ++g) {
    ds.records.push_back({id++, Modality::Image, g, l2_normalize(random_vec(d, rng))});
    for (std::size_t c = 0; c < captions; ++c)
      ds.records.push_back({id++, Modality::Caption, g, l2_normalize(random_vec(d, rng))});
  }
  return ds;
}

}  // namespace

TEST_CASE("rank_targets") {
  EmbeddingDataset ds;
  ds.dimension = 2;
  ds.records = {
      {0, Modality::Image, 0, {1.0, 0.0}},
      {1, Modality::Caption, 0, {0.9, 0.1}},
      {2, Modality::Caption, 1, {0.5, 0.5}},
      {3, Modality::Caption, 2, {0.1, 0.9}},
  };
  std::vector<const EmbeddingRecord*> cands = {&ds.records[1], &ds.records[2], &ds.records[3]};

  SECTION("positive ranked first") {
    RankingResult r = rank_targets(cosine_scorer(), ds.records[0], cands);
    CHECK(r.rank_of_first_positive == 1);
    CHECK(r.ordered_target_ids.front() == 1);
  }
  SECTION("score ties break by ascending entity id") {
    Scorer flat = [](const EmbeddingRecord&, const EmbeddingRecord&) { return 0.5; };
    RankingResult r = rank_targets(flat, ds.records[0], cands);
    CHECK(r.ordered_target_ids == std::vector<std::uint64_t>{1, 2, 3});
  }
  SECTION("no positive candidate is an error") {
    std::vector<const EmbeddingRecord*> negs = {&ds.records[2], &ds.records[3]};
    CHECK_THROWS_AS(rank_targets(cosine_scorer(), ds.records[0], negs), UsageError);
  }
  SECTION("candidate order does not matter") {
    std::vector<const EmbeddingRecord*> shuffled = {&ds.records[3], &ds.records[1],
                                                    &ds.records[2]};
    RankingResult a = rank_targets(cosine_scorer(), ds.records[0], cands);
    RankingResult b = rank_targets(cosine_scorer(), ds.records[0], shuffled);
    CHECK(a.ordered_target_ids == b.ordered_target_ids);
    CHECK(a.rank_of_first_positive == b.rank_of_first_positive);
  }
}

TEST_CASE("recall_at_k") {
  auto rankings = from_ranks({1, 2, 7});
  CHECK(recall_at_k(rankings, 1) == Catch::Approx(1.0 / 3.0));
  CHECK(recall_at_k(rankings, 5) == Catch::Approx(2.0 / 3.0));
  CHECK(recall_at_k(rankings, 10) == 1.0);
  CHECK(recall_at_k(from_ranks({1, 1, 1}), 3) == 1.0);
  CHECK(recall_at_k(from_ranks({2, 3}), 100) == 1.0);

  SECTION("nondecreasing in K") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::size_t> ranks;
      for (int i = 0; i < 10; ++i) ranks.push_back(1 + rng() % 20);
      double prev = 0.0;
      for (std::size_t k = 1; k <= 20; ++k) {
        const double r = recall_at_k(from_ranks(ranks), k);
        CHECK(r >= prev);
        prev = r;
      }
    }
  }
}

TEST_CASE("median_rank") {
  CHECK(median_rank(from_ranks({1, 1, 2})) == 1.0);
  CHECK(median_rank(from_ranks({1, 3})) == 2.0);
  CHECK(median_rank(from_ranks({5, 1, 9, 3, 7})) == 5.0);
  CHECK_THROWS_AS(median_rank({}), UsageError);
}

TEST_CASE("mean_recall") {
  MetricReport r;
  // Table-style percentages as fractions
  r.r_at = {{1, 0.659}, {5, 0.907}, {10, 0.962}};
  r.ri_at = {{1, 0.529}, {5, 0.846}, {10, 0.924}};
  CHECK(100.0 * mean_recall(r) == Catch::Approx(80.45).margin(1e-9));

  r.r_at = {{1, 0.723}, {5, 0.934}, {10, 0.974}};
  r.ri_at = {{1, 0.585}, {5, 0.883}, {10, 0.946}};
  CHECK(100.0 * mean_recall(r) == Catch::Approx(84.0833333333).margin(1e-9));

  r.r_at = {{1, 1.0}, {5, 1.0}, {10, 1.0}};
  r.ri_at = {{1, 1.0}, {5, 1.0}, {10, 1.0}};
  CHECK(mean_recall(r) == 1.0);

  MetricReport missing;
  missing.r_at = {{1, 0.5}};
  CHECK_THROWS_AS(mean_recall(missing), UsageError);
}

TEST_CASE("evaluate_split") {
  std::mt19937_64 rng(11);
  EmbeddingDataset ds = random_dataset(10, 3, 6, rng);

  SECTION("folds=1 matches direct whole-split computation") {
    MetricReport direct = evaluate_split(cosine_scorer(), ds, 1);
    // brute-force recomputation
    auto groups = ds.groups();
    std::vector<const EmbeddingRecord*> images, captions;
    for (const auto& g : groups) {
      images.push_back(&ds.records[g.image_index]);
      for (std::size_t ci : g.caption_indices) captions.push_back(&ds.records[ci]);
    }
    std::vector<RankingResult> cap, img;
    for (auto* i : images) cap.push_back(rank_targets(cosine_scorer(), *i, captions));
    for (auto* c : captions) img.push_back(rank_targets(cosine_scorer(), *c, images));
    CHECK(direct.r_at.at(1) == recall_at_k(cap, 1));
    CHECK(direct.ri_at.at(5) == recall_at_k(img, 5));
    std::vector<RankingResult> all = cap;
    all.insert(all.end(), img.begin(), img.end());
    CHECK(direct.med_r == median_rank(all));
    CHECK(direct.mr == Catch::Approx(mean_recall(direct)));
  }
  SECTION("per-fold metrics match independent recomputation") {
    const std::size_t folds = 5;
    MetricReport avg = evaluate_split(cosine_scorer(), ds, folds);
    auto groups = ds.groups();
    double r1 = 0.0, ri10 = 0.0;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<const EmbeddingRecord*> images, captions;
      for (std::size_t gi = f * 2; gi < (f + 1) * 2; ++gi) {
        images.push_back(&ds.records[groups[gi].image_index]);
        for (std::size_t ci : groups[gi].caption_indices) captions.push_back(&ds.records[ci]);
      }
      std::vector<RankingResult> cap, img;
      for (auto* i : images) cap.push_back(rank_targets(cosine_scorer(), *i, captions));
      for (auto* c : captions) img.push_back(rank_targets(cosine_scorer(), *c, images));
      r1 += recall_at_k(cap, 1);
      ri10 += recall_at_k(img, 10);
    }
    CHECK(avg.r_at.at(1) == Catch::Approx(r1 / folds));
    CHECK(avg.ri_at.at(10) == Catch::Approx(ri10 / folds));
  }
  SECTION("identity flow equals baseline exactly") {
    Deformer id;
    id.kind = DeformerKind::RealNVP;
    id.flow = init_flow(6, 3, 2, 8, 1);
    for (ConditionMode mode : {ConditionMode::Target, ConditionMode::Query, ConditionMode::None}) {
      MetricReport a = evaluate_split(cosine_scorer(), ds, 5);
      MetricReport b = evaluate_split(deformer_scorer(id, mode), ds, 5);
      CHECK(a.r_at == b.r_at);
      CHECK(a.ri_at == b.ri_at);
      CHECK(a.mr == b.mr);
      CHECK(a.med_r == b.med_r);
    }
  }
  SECTION("indivisible split is rejected") {
    CHECK_THROWS_AS(evaluate_split(cosine_scorer(), ds, 3), UsageError);
  }
}

TEST_CASE("metric row formatting") {
  MetricReport r;
  r.r_at = {{1, 0.659}, {5, 0.907}, {10, 0.962}};
  r.ri_at = {{1, 0.529}, {5, 0.846}, {10, 0.924}};
  r.mr = mean_recall(r);
  r.med_r = 1.0;
  CHECK(metric_row("VSE++", "-", r) ==
        "VSE++\t-\t65.9\t90.7\t96.2\t52.9\t84.6\t92.4\t80.5\t1.0");
  CHECK(metric_header() == "model\tcondition\tR@1\tR@5\tR@10\tRi@1\tRi@5\tRi@10\tmR\tMedR");
}

TEST_CASE("ablation table is seven fixed rows with a reproducible baseline") {
  std::mt19937_64 rng(29);
  SyntheticConfig scfg;
  scfg.train_groups = 8;
  scfg.val_groups = 2;
  scfg.test_groups = 2;
  scfg.dimension = 8;
  scfg.n_aspects = 2;
  scfg.captions_per_image = 2;
  scfg.seed = 31;
  SyntheticDatasets data = generate_synthetic(scfg);

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  DeformerShape shape;
  shape.n_layers = 2;
  shape.n_hidden_layers = 1;
  shape.hidden_units = 8;
  shape.mlp_hidden_layers = 2;
  shape.mlp_hidden_units = 8;

  auto rows = run_ablation(data.train, data.val, data.test, cfg, shape, 1);
  REQUIRE(rows.size() == 7);
  CHECK(rows[0].model == "No");
  CHECK(rows[1].model == "Real-NVP");
  CHECK(rows[1].condition == "target");
  CHECK(rows[2].condition == "no");
  CHECK(rows[3].condition == "caption");
  CHECK(rows[4].condition == "image");
  CHECK(rows[5].condition == "query");
  CHECK(rows[6].model == "MLP");

  auto rows2 = run_ablation(data.train, data.val, data.test, cfg, shape, 1);
  CHECK(rows[0].report.mr == rows2[0].report.mr);
  CHECK(rows[0].report.med_r == rows2[0].report.med_r);
}
