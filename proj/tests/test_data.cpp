#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "todnet/data.hpp"
#include "todnet/eval.hpp"

using namespace todnet;

TEST_CASE("synthetic generation shape and determinism") {
  SyntheticConfig cfg;
  cfg.train_groups = 10;
  cfg.val_groups = 3;
  cfg.test_groups = 3;
  cfg.dimension = 16;
  cfg.n_aspects = 4;
  cfg.captions_per_image = 5;
  cfg.seed = 2;

  SyntheticDatasets a = generate_synthetic(cfg);
  CHECK(a.train.records.size() == 10 * 6);
  CHECK(a.val.records.size() == 3 * 6);
  CHECK(a.test.records.size() == 3 * 6);
  CHECK(a.train.groups().size() == 10);
  for (const auto& g : a.train.groups()) CHECK(g.caption_indices.size() == 5);

  // entity ids unique across splits, vectors unit norm
  std::set<std::uint64_t> ids;
  for (const auto* ds : {&a.train, &a.val, &a.test})
    for (const auto& r : ds->records) {
      CHECK(ids.insert(r.entity_id).second);
      CHECK(norm(r.vector) == Catch::Approx(1.0).margin(1e-12));
    }

  SyntheticDatasets b = generate_synthetic(cfg);
  CHECK(serialize_embeddings(a.train) == serialize_embeddings(b.train));
  CHECK(serialize_embeddings(a.test) == serialize_embeddings(b.test));

  SECTION("distinct seeds produce different vectors") {
    SyntheticConfig other = cfg;
    other.seed = 3;
    SyntheticDatasets c = generate_synthetic(other);
    CHECK(c.train.records[0].vector != a.train.records[0].vector);
  }
  SECTION("invalid configs are rejected") {
    SyntheticConfig bad = cfg;
    bad.dimension = 7;
    CHECK_THROWS_AS(generate_synthetic(bad), UsageError);
    bad = cfg;
    bad.n_aspects = 0;
    CHECK_THROWS_AS(generate_synthetic(bad), UsageError);
    bad = cfg;
    bad.aspect_signal = 0.0;
    CHECK_THROWS_AS(generate_synthetic(bad), UsageError);
  }
}

TEST_CASE("noise-free single-aspect construction is trivially retrievable") {
  SyntheticConfig cfg;
  cfg.train_groups = 2;
  cfg.val_groups = 2;
  cfg.test_groups = 10;
  cfg.dimension = 16;
  cfg.n_aspects = 1;
  cfg.captions_per_image = 3;
  cfg.noise = 0.0;
  cfg.seed = 4;
  SyntheticDatasets data = generate_synthetic(cfg);
  // with one aspect and no noise, caption == image embedding
  for (const auto& g : data.test.groups()) {
    const Vec& img = data.test.records[g.image_index].vector;
    for (std::size_t ci : g.caption_indices) {
      const Vec& cap = data.test.records[ci].vector;
      for (std::size_t k = 0; k < img.size(); ++k)
        CHECK(cap[k] == Catch::Approx(img[k]).margin(1e-12));
    }
  }
  MetricReport r = evaluate_split(cosine_scorer(), data.test, 1);
  CHECK(r.r_at.at(1) == 1.0);
  CHECK(r.ri_at.at(1) == 1.0);
}

TEST_CASE("baseline R@1 is nonincreasing as aspect signal grows") {
  double prev = 1.1;
  for (double sigma_a : {0.3, 1.0, 3.0}) {
    double r1 = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
      SyntheticConfig cfg;
      cfg.train_groups = 2;
      cfg.val_groups = 2;
      cfg.test_groups = 40;
      cfg.dimension = 32;
      cfg.n_aspects = 4;
      cfg.aspect_signal = sigma_a;
      cfg.seed = seed;
      SyntheticDatasets data = generate_synthetic(cfg);
      r1 += evaluate_split(cosine_scorer(), data.test, 1).r_at.at(1) / 3.0;
    }
    CHECK(r1 <= prev);
    prev = r1;
  }
}

TEST_CASE("TDE1 round trip is exact at 32-bit precision") {
  SyntheticConfig cfg;
  cfg.train_groups = 5;
  cfg.val_groups = 2;
  cfg.test_groups = 2;
  cfg.dimension = 8;
  cfg.seed = 7;
  EmbeddingDataset ds = generate_synthetic(cfg).train;

  std::string bytes = serialize_embeddings(ds);
  EmbeddingDataset back = deserialize_embeddings(bytes, "mem");
  CHECK(back.dimension == ds.dimension);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].entity_id == ds.records[i].entity_id);
    CHECK(back.records[i].group_id == ds.records[i].group_id);
    CHECK(back.records[i].modality == ds.records[i].modality);
    for (std::size_t k = 0; k < ds.dimension; ++k)
      CHECK(back.records[i].vector[k] ==
            static_cast<double>(static_cast<float>(ds.records[i].vector[k])));
  }
  // a second serialization is byte-identical
  CHECK(serialize_embeddings(back) == bytes);
}

TEST_CASE("TDE1 parse errors name the violated invariant") {
  SyntheticConfig cfg;
  cfg.train_groups = 3;
  cfg.val_groups = 2;
  cfg.test_groups = 2;
  cfg.dimension = 8;
  cfg.seed = 9;
  std::string bytes = serialize_embeddings(generate_synthetic(cfg).train);

  SECTION("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH(deserialize_embeddings(bad, "f"), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("truncated payload") {
    std::string bad = bytes.substr(0, bytes.size() - 10);
    CHECK_THROWS_WITH(deserialize_embeddings(bad, "f"),
                      Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("odd dimension") {
    std::string bad = bytes;
    bad[6] = 7;  // dimension field (after magic + version)
    CHECK_THROWS_AS(deserialize_embeddings(bad, "f"), ParseError);
  }
  SECTION("group integrity violation") {
    EmbeddingDataset ds = generate_synthetic(cfg).train;
    ds.records.erase(ds.records.begin());  // drop the first image
    // serialize_embeddings succeeds; the group check happens on read
    std::string bad = serialize_embeddings(ds);
    CHECK_THROWS_WITH(deserialize_embeddings(bad, "f"),
                      Catch::Matchers::ContainsSubstring("group integrity"));
  }
  SECTION("duplicate entity id") {
    EmbeddingDataset ds = generate_synthetic(cfg).train;
    ds.records[1].entity_id = ds.records[0].entity_id;
    CHECK_THROWS_WITH(deserialize_embeddings(serialize_embeddings(ds), "f"),
                      Catch::Matchers::ContainsSubstring("duplicate"));
  }
}

TEST_CASE("batch sampler") {
  SECTION("partition arithmetic") {
    auto batches = batch_sampler(10, 4, 1, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);
  }
  SECTION("singleton remainder dropped") {
    auto batches = batch_sampler(9, 4, 1, 0);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
  }
  SECTION("deterministic per (seed, epoch), different across epochs") {
    CHECK(batch_sampler(20, 4, 7, 3) == batch_sampler(20, 4, 7, 3));
    CHECK(batch_sampler(20, 4, 7, 3) != batch_sampler(20, 4, 7, 4));
  }
  SECTION("covers every group exactly once (when nothing is dropped)") {
    auto batches = batch_sampler(12, 4, 5, 2);
    std::set<std::size_t> seen;
    for (const auto& b : batches)
      for (std::size_t g : b) CHECK(seen.insert(g).second);
    CHECK(seen.size() == 12);
  }
  SECTION("batch_size below 2 is rejected") {
    CHECK_THROWS_AS(batch_sampler(10, 1, 1, 0), UsageError);
  }
}
