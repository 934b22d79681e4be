#include "rve/pipeline.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace rve;

namespace {

// Synthetic knowledge base: entity i gets a distinct unit embedding, a store
// record, and one corpus passage that names it and carries its answer string.
struct SyntheticKb {
  HnswIndex index{8};
  EntityStore store;
  std::vector<EmbeddingVector> embeddings;
  std::vector<std::string> corpus;

  explicit SyntheticKb(std::size_t n, std::uint32_t seed = 404) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (std::uint64_t i = 0; i < n; ++i) {
      EmbeddingVector v;
      v.values.resize(8);
      for (float& x : v.values) x = dist(rng);
      v.normalize();
      embeddings.push_back(v);
      index.insert(i, v);

      EntityRecord rec;
      rec.id = i;
      rec.entity_name = "landmark_" + std::to_string(i);
      rec.description = "a famous landmark number " + std::to_string(i);
      rec.image_ref = "img/" + std::to_string(i) + ".jpg";
      store.add(rec);

      corpus.push_back("the landmark_" + std::to_string(i) +
                       " was finished in year answer_" + std::to_string(i) +
                       " according to records");
    }
    index.freeze();
  }

  MultimodalQuery query_for(std::uint64_t i, const std::string& text) const {
    MultimodalQuery q;
    q.image_embedding = embeddings[i];
    q.patch_embeddings = {embeddings[i]};
    q.text = text;
    q.text_embedding = embeddings[i];
    return q;
  }
};

// backend whose every call fails, for degraded-mode checks
class FailingBackend : public TextRetrieverBackend {
 public:
  std::vector<RetrievedPassage> retrieve(const std::string&, std::size_t) const override {
    throw BackendError("always down");
  }
};

}  // namespace

TEST(ExpandQuery, TemplateMatchesExample) {
  EntityRecord e;
  e.entity_name = "One World Trade Center";
  e.description = "skyscraper in Lower Manhattan";
  std::string q = "Who designed the tallest building in the picture?";
  EXPECT_EQ(expand_query(q, e),
            "One World Trade Center. skyscraper in Lower Manhattan. "
            "Who designed the tallest building in the picture?");
}

TEST(ExpandQuery, EmptyDescriptionHasNoDanglingSeparator) {
  EntityRecord e;
  e.entity_name = "Eiffel Tower";
  EXPECT_EQ(expand_query("When was it built?", e), "Eiffel Tower. When was it built?");
}

TEST(ExpandQuery, LongDescriptionCappedAtTokenBudget) {
  EntityRecord e;
  e.entity_name = "Big Entity";  // 2 tokens
  std::string desc;
  for (int i = 0; i < 10000; ++i) desc += "d" + std::to_string(i) + " ";
  e.description = desc;
  std::string q = "What is it?";  // 3 tokens
  std::string expanded = expand_query(q, e);
  EXPECT_EQ(text::count_tokens(expanded), 512u);
  // ends with the verbatim original query
  ASSERT_GE(expanded.size(), q.size());
  EXPECT_EQ(expanded.substr(expanded.size() - q.size()), q);
}

TEST(ExpandQuery, AlwaysEndsWithVerbatimQuery) {
  EntityRecord e;
  e.entity_name = "X";
  e.description = "y z";
  std::string q = "odd   spacing?  kept";
  std::string expanded = expand_query(q, e);
  EXPECT_EQ(expanded.substr(expanded.size() - q.size()), q);
}

TEST(TruncatePassage, DefaultLimit) {
  std::string fifty;
  for (int i = 0; i < 50; ++i) fifty += "w ";
  EXPECT_EQ(truncate_passage(fifty), fifty);

  std::string long_passage;
  for (int i = 0; i < 401; ++i) long_passage += "w" + std::to_string(i) + " ";
  std::string truncated = truncate_passage(long_passage);
  EXPECT_EQ(text::count_tokens(truncated), 400u);
  EXPECT_EQ(truncate_passage(truncated), truncated);
}

TEST(Stage1Retrieve, PlantedMatchRanksFirst) {
  SyntheticKb kb(100);
  auto hits = stage1_retrieve(kb.index, kb.store, kb.query_for(42, "what is it?"), 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].entity.id, 42u);
  EXPECT_EQ(hits[0].entity.entity_name, "landmark_42");
  EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
}

TEST(Stage1Retrieve, SaturatesOnSmallStore) {
  SyntheticKb kb(2);
  auto hits = stage1_retrieve(kb.index, kb.store, kb.query_for(0, "q?"), 3);
  EXPECT_EQ(hits.size(), 2u);
}

TEST(Stage1Retrieve, RankingEqualsIndexSearch) {
  SyntheticKb kb(100);
  for (std::uint64_t i = 0; i < 10; ++i) {
    MultimodalQuery q = kb.query_for(i * 7, "q?");
    auto hits = stage1_retrieve(kb.index, kb.store, q, 5);
    auto raw = kb.index.search(q.image_embedding, 5);
    ASSERT_EQ(hits.size(), raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) {
      EXPECT_EQ(hits[j].entity.id, raw[j].id);
      EXPECT_DOUBLE_EQ(hits[j].score, raw[j].score);
    }
  }
}

TEST(Stage1Retrieve, SoftmaxRankingEqualsRawRanking) {
  // the operational content of the softmax scoring: ranking is unchanged
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + trial % 40;
    std::vector<double> sims(n);
    for (double& s : sims) s = dist(rng);
    std::vector<double> probs = softmax_scores(sims);

    std::vector<ScoredId> raw, soft;
    for (std::size_t i = 0; i < n; ++i) {
      raw.push_back({i, sims[i]});
      soft.push_back({i, probs[i]});
    }
    std::size_t k = 1 + trial % 5;
    auto raw_top = top_k(raw, k);
    auto soft_top = top_k(soft, k);
    ASSERT_EQ(raw_top.size(), soft_top.size());
    for (std::size_t i = 0; i < raw_top.size(); ++i) {
      EXPECT_EQ(raw_top[i].id, soft_top[i].id);
    }
  }
}

TEST(Stage2Retrieve, DelegatesToBackend) {
  LocalLexicalBackend backend({"alpha beta gamma", "delta"});
  auto results = stage2_retrieve(backend, "alpha beta", 1);
  ASSERT_EQ(results.size(), 1u);
  EXPECT_EQ(results[0].score, 2.0);
}

TEST(Retrieve, DefaultsProduceKSnippetsWithinLimits) {
  SyntheticKb kb(100);
  LocalLexicalBackend backend(kb.corpus);
  RetrievalConfig config;  // k=3, l=3, 400 tokens
  auto snippets = retrieve(kb.index, kb.store, backend, kb.query_for(7, "when was it built?"),
                           config);
  ASSERT_EQ(snippets.size(), 3u);
  for (const KnowledgeSnippet& s : snippets) {
    EXPECT_LE(s.passages.size(), 3u);
    for (const std::string& p : s.passages) {
      EXPECT_LE(text::count_tokens(p), 400u);
    }
  }
  EXPECT_EQ(snippets[0].entity.id, 7u);
}

TEST(Retrieve, EmptyCorpusDegradesToZeroPassages) {
  SyntheticKb kb(10);
  LocalLexicalBackend backend(std::vector<std::string>{});
  RetrievalConfig config;
  config.k = 1;
  auto snippets = retrieve(kb.index, kb.store, backend, kb.query_for(3, "q?"), config);
  ASSERT_EQ(snippets.size(), 1u);
  EXPECT_TRUE(snippets[0].passages.empty());
}

TEST(Retrieve, BackendFailureDegradesPerSnippet) {
  SyntheticKb kb(10);
  FailingBackend backend;
  RetrievalConfig config;
  auto snippets = retrieve(kb.index, kb.store, backend, kb.query_for(1, "q?"), config);
  ASSERT_EQ(snippets.size(), 3u);
  for (const KnowledgeSnippet& s : snippets) EXPECT_TRUE(s.passages.empty());
  EXPECT_EQ(snippets[0].entity.id, 1u);  // stage-1 results survive
}

TEST(Retrieve, GoldAnswerContainedForPlantedCorpus) {
  SyntheticKb kb(100);
  LocalLexicalBackend backend(kb.corpus);
  RetrievalConfig config;
  for (std::uint64_t i : {0ull, 13ull, 99ull}) {
    auto snippets =
        retrieve(kb.index, kb.store, backend, kb.query_for(i, "when was it finished?"), config);
    std::string gold = "answer_" + std::to_string(i);
    bool contained = false;
    for (const KnowledgeSnippet& s : snippets) {
      for (const std::string& p : s.passages) {
        if (p.find(gold) != std::string::npos) contained = true;
      }
    }
    EXPECT_TRUE(contained) << "query " << i;
  }
}

TEST(Retrieve, DeterministicWithLocalBackend) {
  SyntheticKb kb(50);
  LocalLexicalBackend backend(kb.corpus);
  RetrievalConfig config;
  MultimodalQuery q = kb.query_for(5, "when?");
  auto first = retrieve(kb.index, kb.store, backend, q, config);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(retrieve(kb.index, kb.store, backend, q, config), first);
  }
  // concurrency setting must not affect results
  RetrievalConfig serial = config;
  serial.max_in_flight = 1;
  EXPECT_EQ(retrieve(kb.index, kb.store, backend, q, serial), first);
}

TEST(Retrieve, SnippetJsonRoundTrip) {
  SyntheticKb kb(10);
  LocalLexicalBackend backend(kb.corpus);
  auto snippets = retrieve(kb.index, kb.store, backend, kb.query_for(2, "when?"), {});
  for (const KnowledgeSnippet& s : snippets) {
    EXPECT_EQ(snippet_from_json(snippet_to_json(s)), s);
  }
  std::ostringstream out;
  write_snippets_jsonl(out, snippets);
  std::istringstream in(out.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(snippet_from_json(nlohmann::json::parse(line)), snippets[lines]);
    ++lines;
  }
  EXPECT_EQ(lines, snippets.size());
}

TEST(MultimodalQueryType, ValidationErrors) {
  MultimodalQuery q;
  q.image_embedding = EmbeddingVector{1.0f, 0.0f};
  q.patch_embeddings = {EmbeddingVector{1.0f, 0.0f}};
  q.text = "ok?";
  q.text_embedding = EmbeddingVector{1.0f, 0.0f};
  EXPECT_NO_THROW(q.validate());

  MultimodalQuery no_text = q;
  no_text.text.clear();
  EXPECT_THROW(no_text.validate(), EmptyInputError);

  MultimodalQuery no_patches = q;
  no_patches.patch_embeddings.clear();
  EXPECT_THROW(no_patches.validate(), EmptyInputError);

  MultimodalQuery bad_dim = q;
  bad_dim.text_embedding = EmbeddingVector{1.0f, 0.0f, 0.0f};
  EXPECT_THROW(bad_dim.validate(), DimensionError);
}
