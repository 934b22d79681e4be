#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rve/entity_store.hpp"
#include "rve/errors.hpp"
#include "rve/pipeline.hpp"
#include "rve/rng.hpp"
#include "rve/text.hpp"

namespace rve {

// Segment roles in the interleaved training sequence.
enum class Segment { Snippet, Noise, QueryImage, QueryText };

inline const char* segment_name(Segment s) {
  switch (s) {
    case Segment::Snippet: return "snippet";
    case Segment::Noise: return "noise";
    case Segment::QueryImage: return "query_image";
    case Segment::QueryText: return "query_text";
  }
  return "";
}

inline Segment segment_from_name(const std::string& name) {
  if (name == "snippet") return Segment::Snippet;
  if (name == "noise") return Segment::Noise;
  if (name == "query_image") return Segment::QueryImage;
  if (name == "query_text") return Segment::QueryText;
  throw ParseError("unknown layout segment '" + name + "'");
}

// The canonical interleaving: retrieved snippets, then the injected noise
// snippet, then the query image and text.
inline std::vector<Segment> canonical_layout(std::size_t snippet_count) {
  std::vector<Segment> layout(snippet_count, Segment::Snippet);
  layout.push_back(Segment::Noise);
  layout.push_back(Segment::QueryImage);
  layout.push_back(Segment::QueryText);
  return layout;
}

// Noise at an arbitrary position among the snippet segments; the query image
// and text always close the sequence.
inline std::vector<Segment> layout_with_noise_at(std::size_t snippet_count,
                                                 std::size_t noise_position) {
  std::vector<Segment> layout(snippet_count, Segment::Snippet);
  layout.insert(layout.begin() + static_cast<std::ptrdiff_t>(
                                     std::min(noise_position, snippet_count)),
                Segment::Noise);
  layout.push_back(Segment::QueryImage);
  layout.push_back(Segment::QueryText);
  return layout;
}

// A layout is well-formed when the last two segments are the query image and
// text, exactly one noise segment sits among the snippets, and the snippet
// count matches.
inline bool layout_is_valid(const std::vector<Segment>& layout, std::size_t snippet_count) {
  if (layout.size() != snippet_count + 3) return false;
  if (layout[layout.size() - 2] != Segment::QueryImage) return false;
  if (layout[layout.size() - 1] != Segment::QueryText) return false;
  std::size_t noise_count = 0;
  std::size_t snippet_seen = 0;
  for (std::size_t i = 0; i + 2 < layout.size(); ++i) {
    if (layout[i] == Segment::Noise) {
      ++noise_count;
    } else if (layout[i] == Segment::Snippet) {
      ++snippet_seen;
    } else {
      return false;
    }
  }
  return noise_count == 1 && snippet_seen == snippet_count;
}

// One noise-injected training instance. Images are carried by reference; the
// fine-tuning side owns pixel loading.
struct TrainingInstance {
  std::vector<KnowledgeSnippet> snippets;  // retrieved, stage-1 order
  KnowledgeSnippet noise_snippet;          // guaranteed entity mismatch
  std::string query_text;
  std::string query_image_ref;
  std::string answer;
  std::vector<Segment> layout;

  bool operator==(const TrainingInstance& other) const = default;
};

// A training query with its supervision labels.
struct AnnotatedQuery {
  MultimodalQuery query;
  std::string query_image_ref;
  std::string gold_entity_name;
  std::string answer;
};

// Stage-2 context for a sampled noise entity: its own name and description,
// no user query, capped like an expanded query.
inline std::string entity_context_query(const EntityRecord& entity, std::size_t max_tokens = 512) {
  const std::string name = text::normalize_whitespace(entity.entity_name);
  std::string desc = text::normalize_whitespace(entity.description);
  const std::size_t name_tokens = text::count_tokens(name);
  std::size_t budget = max_tokens > name_tokens ? max_tokens - name_tokens : 0;
  desc = text::truncate_tokens(desc, budget);
  std::string out = name;
  out += ".";
  if (!desc.empty()) {
    out += ' ';
    out += desc;
    out += '.';
  }
  return out;
}

// Noise placement: the default keeps the noise snippet last among the
// snippets; shuffled placement (for ablations) draws its position from the
// instance seed.
struct NoisePlacement {
  bool shuffled = false;
};

// Builds one instance: top-(k-1) retrieved snippets plus one uniformly
// sampled mismatched snippet whose passages are fetched with the noise
// entity's own context. Deterministic for a fixed seed with a deterministic
// backend.
inline TrainingInstance build_instance(const HnswIndex& index, const EntityStore& store,
                                       const TextRetrieverBackend& backend,
                                       const AnnotatedQuery& annotated,
                                       const RetrievalConfig& config, std::uint64_t seed,
                                       const NoisePlacement& placement = {}) {
  config.validate();
  TrainingInstance instance;
  instance.query_text = annotated.query.text;
  instance.query_image_ref = annotated.query_image_ref;
  instance.answer = annotated.answer;

  const std::size_t retrieved_k = config.k - 1;
  if (retrieved_k > 0) {
    RetrievalConfig stage_config = config;
    stage_config.k = retrieved_k;
    instance.snippets = retrieve(index, store, backend, annotated.query, stage_config);
  }

  const EntityRecord& noise = store.sample_mismatched(annotated.gold_entity_name, seed);
  instance.noise_snippet.entity = noise;
  instance.noise_snippet.stage1_score = 0.0;
  try {
    std::string context = entity_context_query(noise);
    for (const RetrievedPassage& p : stage2_retrieve(backend, context, config.l)) {
      instance.noise_snippet.passages.push_back(truncate_passage(p.text, config.truncation_limit));
    }
  } catch (const BackendError&) {
    instance.noise_snippet.passages.clear();
  }

  if (placement.shuffled) {
    std::size_t position =
        splitmix64(seed ^ 0x517cc1b727220a95ULL) % (instance.snippets.size() + 1);
    instance.layout = layout_with_noise_at(instance.snippets.size(), position);
  } else {
    instance.layout = canonical_layout(instance.snippets.size());
  }
  return instance;
}

inline std::string serialize_instance(const TrainingInstance& instance) {
  nlohmann::json layout = nlohmann::json::array();
  for (Segment s : instance.layout) layout.push_back(segment_name(s));
  nlohmann::json snippets = nlohmann::json::array();
  for (const KnowledgeSnippet& s : instance.snippets) snippets.push_back(snippet_to_json(s));
  nlohmann::json j{
      {"layout", layout},
      {"snippets", snippets},
      {"noise", snippet_to_json(instance.noise_snippet)},
      {"query_text", instance.query_text},
      {"query_image_ref", instance.query_image_ref},
      {"answer", instance.answer},
  };
  return j.dump();
}

inline TrainingInstance parse_instance(const std::string& record) {
  nlohmann::json j = nlohmann::json::parse(record, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("training record is not a JSON object");
  for (const char* field : {"layout", "snippets", "noise", "query_text", "query_image_ref",
                            "answer"}) {
    if (!j.contains(field)) throw ParseError(std::string("training record missing '") + field + "'");
  }
  TrainingInstance instance;
  if (!j["snippets"].is_array()) throw ParseError("'snippets' must be an array");
  for (const nlohmann::json& s : j["snippets"]) instance.snippets.push_back(snippet_from_json(s));
  instance.noise_snippet = snippet_from_json(j["noise"]);
  if (!j["query_text"].is_string() || !j["query_image_ref"].is_string() ||
      !j["answer"].is_string()) {
    throw ParseError("training record query/answer fields must be strings");
  }
  instance.query_text = j["query_text"].get<std::string>();
  instance.query_image_ref = j["query_image_ref"].get<std::string>();
  instance.answer = j["answer"].get<std::string>();

  if (!j["layout"].is_array()) throw ParseError("'layout' must be an array");
  for (const nlohmann::json& s : j["layout"]) {
    if (!s.is_string()) throw ParseError("layout segment must be a string");
    instance.layout.push_back(segment_from_name(s.get<std::string>()));
  }
  if (!layout_is_valid(instance.layout, instance.snippets.size())) {
    throw ParseError(
        "layout must interleave the snippets with exactly one noise segment and end "
        "with query_image, query_text");
  }
  return instance;
}

struct DatasetSummary {
  std::size_t instances = 0;
  std::size_t skipped = 0;
  std::uint64_t total_passages = 0;
  std::uint64_t total_passage_tokens = 0;
  std::size_t max_passage_tokens = 0;
  std::vector<std::string> errors;
};

inline nlohmann::json summary_to_json(const DatasetSummary& s) {
  return nlohmann::json{
      {"instances", s.instances},
      {"skipped", s.skipped},
      {"total_passages", s.total_passages},
      {"total_passage_tokens", s.total_passage_tokens},
      {"max_passage_tokens", s.max_passage_tokens},
      {"errors", s.errors},
  };
}

// Writes one record per query in input order. Per-query seeds are drawn from
// one deterministic stream, so a fixed seed reproduces the file byte for
// byte. Failing queries are skipped and reported in the summary.
inline DatasetSummary build_dataset(const HnswIndex& index, const EntityStore& store,
                                    const TextRetrieverBackend& backend,
                                    const std::vector<AnnotatedQuery>& queries,
                                    const RetrievalConfig& config, std::uint64_t seed,
                                    const std::filesystem::path& out_path,
                                    const NoisePlacement& placement = {}) {
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorruptFileError("cannot open dataset file for writing: " + out_path.string());

  DatasetSummary summary;
  SplitMix64 seeds(seed);
  auto tally = [&summary](const KnowledgeSnippet& snippet) {
    for (const std::string& p : snippet.passages) {
      std::size_t tokens = text::count_tokens(p);
      ++summary.total_passages;
      summary.total_passage_tokens += tokens;
      summary.max_passage_tokens = std::max(summary.max_passage_tokens, tokens);
    }
  };

  for (std::size_t i = 0; i < queries.size(); ++i) {
    const std::uint64_t query_seed = seeds.next();
    try {
      TrainingInstance instance =
          build_instance(index, store, backend, queries[i], config, query_seed, placement);
      out << serialize_instance(instance) << '\n';
      if (!out) throw CorruptFileError("dataset write failed: " + out_path.string());
      ++summary.instances;
      for (const KnowledgeSnippet& s : instance.snippets) tally(s);
      tally(instance.noise_snippet);
    } catch (const CorruptFileError&) {
      throw;
    } catch (const Error& e) {
      ++summary.skipped;
      summary.errors.push_back("query " + std::to_string(i) + ": " + e.what());
    }
  }
  return summary;
}

}  // namespace rve
