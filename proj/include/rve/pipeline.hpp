#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rve/backend.hpp"
#include "rve/embedding.hpp"
#include "rve/entity_store.hpp"
#include "rve/errors.hpp"
#include "rve/hnsw.hpp"
#include "rve/text.hpp"

namespace rve {

// A query as the engine sees it: pre-computed embeddings plus the question
// text. Encoding happens upstream.
struct MultimodalQuery {
  EmbeddingVector image_embedding;
  std::vector<EmbeddingVector> patch_embeddings;
  std::string text;
  EmbeddingVector text_embedding;

  void validate() const {
    if (text.empty()) throw EmptyInputError("MultimodalQuery: text must be non-empty");
    if (patch_embeddings.empty()) {
      throw EmptyInputError("MultimodalQuery: at least one patch embedding required");
    }
    const std::size_t d = image_embedding.dim();
    if (d == 0) throw DimensionError("MultimodalQuery: empty image embedding");
    if (text_embedding.dim() != d) {
      throw DimensionError("MultimodalQuery: text embedding dim mismatch");
    }
    for (const EmbeddingVector& p : patch_embeddings) {
      if (p.dim() != d) throw DimensionError("MultimodalQuery: patch embedding dim mismatch");
    }
  }
};

// One retrieved image (by entity record) plus its stage-2 text passages.
struct KnowledgeSnippet {
  EntityRecord entity;
  std::vector<std::string> passages;
  double stage1_score = 0.0;

  bool operator==(const KnowledgeSnippet& other) const = default;
};

struct RetrievalConfig {
  std::size_t k = 3;                 // stage-1 images
  std::size_t l = 3;                 // stage-2 passages per image
  std::size_t truncation_limit = 400;  // tokens per passage
  std::size_t max_in_flight = 4;     // concurrent stage-2 requests

  void validate() const {
    if (k < 1) throw Error("RetrievalConfig: k must be >= 1");
    if (l < 1) throw Error("RetrievalConfig: l must be >= 1");
    if (truncation_limit < 1) throw Error("RetrievalConfig: truncation_limit must be >= 1");
  }
};

struct Stage1Hit {
  EntityRecord entity;
  double score = 0.0;
};

// Stage-1: image-anchored entity retrieval. Top-k over the vector index,
// joined to entity records; scores are cosine similarities and the ranking is
// exactly the index's.
inline std::vector<Stage1Hit> stage1_retrieve(const HnswIndex& index, const EntityStore& store,
                                              const MultimodalQuery& query, std::size_t k) {
  std::vector<Stage1Hit> hits;
  for (const ScoredId& s : index.search(query.image_embedding, k)) {
    hits.push_back({store.get(s.id), s.score});
  }
  return hits;
}

// Expands the text query with a retrieved entity's name and description:
// "{name}. {description}. {q}". The entity part is whitespace-normalized; q
// is appended verbatim. The total is capped at `max_tokens` by truncating the
// description from the right.
inline std::string expand_query(const std::string& q, const EntityRecord& entity,
                                std::size_t max_tokens = 512) {
  const std::string name = text::normalize_whitespace(entity.entity_name);
  std::string desc = text::normalize_whitespace(entity.description);

  const std::size_t name_tokens = text::count_tokens(name);
  const std::size_t q_tokens = text::count_tokens(q);
  std::size_t budget = 0;
  if (max_tokens > name_tokens + q_tokens) budget = max_tokens - name_tokens - q_tokens;
  desc = text::truncate_tokens(desc, budget);

  std::string out = name;
  out += ". ";
  if (!desc.empty()) {
    out += desc;
    out += ". ";
  }
  out += q;
  return out;
}

// Stage-2: query-expanded text retrieval against the configured backend.
inline std::vector<RetrievedPassage> stage2_retrieve(const TextRetrieverBackend& backend,
                                                     const std::string& expanded_query,
                                                     std::size_t l) {
  return backend.retrieve(expanded_query, l);
}

// Keeps the first `limit_tokens` tokens of a passage. Idempotent.
inline std::string truncate_passage(std::string_view passage, std::size_t limit_tokens = 400) {
  return text::truncate_tokens(passage, limit_tokens);
}

// Full 2-stage retrieval: stage-1 entities, per-entity query expansion,
// stage-2 passages, truncation. Snippet order follows stage-1 rank. A
// backend failure for one entity degrades that snippet to an empty passage
// list instead of aborting the query.
inline std::vector<KnowledgeSnippet> retrieve(const HnswIndex& index, const EntityStore& store,
                                              const TextRetrieverBackend& backend,
                                              const MultimodalQuery& query,
                                              const RetrievalConfig& config) {
  config.validate();
  query.validate();
  std::vector<Stage1Hit> hits = stage1_retrieve(index, store, query, config.k);

  std::vector<KnowledgeSnippet> snippets(hits.size());
  auto fetch_one = [&](std::size_t i) {
    KnowledgeSnippet& snippet = snippets[i];
    snippet.entity = hits[i].entity;
    snippet.stage1_score = hits[i].score;
    try {
      std::string expanded = expand_query(query.text, hits[i].entity);
      for (const RetrievedPassage& p : stage2_retrieve(backend, expanded, config.l)) {
        snippet.passages.push_back(truncate_passage(p.text, config.truncation_limit));
      }
    } catch (const BackendError&) {
      snippet.passages.clear();
    }
  };

  const std::size_t workers = std::min(config.max_in_flight, hits.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < hits.size(); ++i) fetch_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < snippets.size(); i = next.fetch_add(1)) {
          try {
            fetch_one(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  return snippets;
}

inline nlohmann::json snippet_to_json(const KnowledgeSnippet& snippet) {
  nlohmann::json j = entity_to_json(snippet.entity);
  j["stage1_score"] = snippet.stage1_score;
  j["passages"] = snippet.passages;
  return j;
}

inline KnowledgeSnippet snippet_from_json(const nlohmann::json& j) {
  KnowledgeSnippet snippet;
  snippet.entity = entity_from_json(j);
  if (!j.contains("stage1_score") || !j["stage1_score"].is_number()) {
    throw ParseError("snippet missing 'stage1_score'");
  }
  snippet.stage1_score = j["stage1_score"].get<double>();
  if (!j.contains("passages") || !j["passages"].is_array()) {
    throw ParseError("snippet missing 'passages'");
  }
  for (const nlohmann::json& p : j["passages"]) {
    if (!p.is_string()) throw ParseError("snippet passage is not a string");
    snippet.passages.push_back(p.get<std::string>());
  }
  return snippet;
}

// Line-delimited export for downstream consumption: one snippet per line.
inline void write_snippets_jsonl(std::ostream& out,
                                 const std::vector<KnowledgeSnippet>& snippets) {
  for (const KnowledgeSnippet& s : snippets) out << snippet_to_json(s).dump() << '\n';
}

}  // namespace rve
