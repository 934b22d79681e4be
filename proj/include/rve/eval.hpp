#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rve/embedding.hpp"
#include "rve/errors.hpp"
#include "rve/text.hpp"

namespace rve {

// One evaluation item: gold labels plus whatever the pipeline and model
// produced for the query.
struct EvalRecord {
  std::string query_id;
  std::string gold_entity_name;
  std::vector<std::string> gold_answers;  // accepted alias variants
  std::optional<double> numeric_gold;
  std::vector<std::string> stage1_entities;
  std::vector<std::string> stage2_passages;
  std::optional<std::string> prediction;
};

struct MetricCounts {
  std::uint64_t evaluated = 0;
  std::uint64_t hits = 0;

  std::optional<double> rate() const {
    if (evaluated == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(evaluated);
  }
};

struct PositionHistogram {
  std::size_t bucket_width = 50;
  std::vector<std::uint64_t> buckets;  // buckets[i] counts positions in [i*w, (i+1)*w)
  std::uint64_t mentions = 0;
  std::uint64_t excluded = 0;  // passages that never mention the entity
};

struct MetricReport {
  MetricCounts stage1;
  MetricCounts stage2;
  MetricCounts vqa;
  MetricCounts relaxed;
  std::uint64_t vqa_missing_prediction = 0;
  PositionHistogram position_histogram;

  std::optional<double> stage1_precision() const { return stage1.rate(); }
  std::optional<double> stage2_precision() const { return stage2.rate(); }
  std::optional<double> vqa_accuracy() const { return vqa.rate(); }
  std::optional<double> relaxed_accuracy() const { return relaxed.rate(); }
};

// Stage-1 correctness: the gold entity matches any retrieved entity name.
inline bool stage1_hit(const EvalRecord& record) {
  const std::string gold = text::normalize_match(record.gold_entity_name);
  if (gold.empty()) return false;
  for (const std::string& entity : record.stage1_entities) {
    if (text::normalize_match(entity) == gold) return true;
  }
  return false;
}

// Stage-2 correctness: any gold answer alias occurs as a normalized substring
// of any retrieved passage.
inline bool stage2_hit(const EvalRecord& record) {
  for (const std::string& passage : record.stage2_passages) {
    const std::string norm_passage = text::normalize_match(passage);
    for (const std::string& alias : record.gold_answers) {
      const std::string norm_alias = text::normalize_match(alias);
      if (norm_alias.empty()) continue;
      if (norm_passage.find(norm_alias) != std::string::npos) return true;
    }
  }
  return false;
}

// Exact string match against any accepted alias, after normalization.
inline bool prediction_matches(const EvalRecord& record) {
  if (!record.prediction) return false;
  const std::string pred = text::normalize_match(*record.prediction);
  for (const std::string& alias : record.gold_answers) {
    if (text::normalize_match(alias) == pred) return true;
  }
  return false;
}

// Fraction of records whose prediction matches a gold alias. Records with no
// prediction are excluded from the denominator.
inline double vqa_accuracy(std::span<const EvalRecord> records) {
  MetricCounts counts;
  for (const EvalRecord& r : records) {
    if (!r.prediction) continue;
    ++counts.evaluated;
    if (prediction_matches(r)) ++counts.hits;
  }
  if (counts.evaluated == 0) throw EmptyInputError("vqa_accuracy: no records with predictions");
  return *counts.rate();
}

inline std::optional<double> parse_numeric(const std::string& s) {
  const std::string trimmed = text::normalize_whitespace(s);
  if (trimmed.empty()) return std::nullopt;
  const char* begin = trimmed.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + trimmed.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

// Numeric hit: |pred - gold| <= tolerance * |gold|; a gold of exactly 0
// requires an exact 0. Non-numeric or missing predictions are misses.
inline bool relaxed_hit(const EvalRecord& record, double tolerance) {
  if (!record.numeric_gold || !record.prediction) return false;
  std::optional<double> pred = parse_numeric(*record.prediction);
  if (!pred) return false;
  const double gold = *record.numeric_gold;
  if (gold == 0.0) return *pred == 0.0;
  return std::abs(*pred - gold) <= tolerance * std::abs(gold);
}

// Fraction of numeric-gold records answered within the relative tolerance.
inline double relaxed_accuracy(std::span<const EvalRecord> records, double tolerance = 0.05) {
  MetricCounts counts;
  for (const EvalRecord& r : records) {
    if (!r.numeric_gold) continue;
    ++counts.evaluated;
    if (relaxed_hit(r, tolerance)) ++counts.hits;
  }
  if (counts.evaluated == 0) throw EmptyInputError("relaxed_accuracy: no numeric-gold records");
  return *counts.rate();
}

namespace detail {

// Token index of the first mention of `entity` in `passage`, matching
// consecutive punctuation-stripped case-folded tokens.
inline std::optional<std::size_t> first_mention_token(const std::string& passage,
                                                      const std::string& entity) {
  std::vector<std::string> entity_terms;
  for (const text::TokenSpan& t : text::token_spans(entity)) {
    std::string term = text::scoring_term(t.view(entity));
    if (!term.empty()) entity_terms.push_back(std::move(term));
  }
  if (entity_terms.empty()) return std::nullopt;

  std::vector<text::TokenSpan> spans = text::token_spans(passage);
  std::vector<std::string> terms;
  terms.reserve(spans.size());
  for (const text::TokenSpan& t : spans) terms.push_back(text::scoring_term(t.view(passage)));

  if (terms.size() < entity_terms.size()) return std::nullopt;
  for (std::size_t i = 0; i + entity_terms.size() <= terms.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j < entity_terms.size(); ++j) {
      if (terms[i + j] != entity_terms[j]) {
        match = false;
        break;
      }
    }
    if (match) return i;
  }
  return std::nullopt;
}

}  // namespace detail

// Distribution of the token position at which the gold entity is first
// mentioned within each retrieved passage. Passages without a mention are
// tallied separately, so mentions + excluded equals the passages examined.
inline PositionHistogram entity_position_histogram(std::span<const EvalRecord> records,
                                                   std::size_t bucket_width = 50) {
  if (bucket_width == 0) throw Error("entity_position_histogram: bucket_width must be >= 1");
  PositionHistogram hist;
  hist.bucket_width = bucket_width;
  for (const EvalRecord& r : records) {
    for (const std::string& passage : r.stage2_passages) {
      std::optional<std::size_t> pos = detail::first_mention_token(passage, r.gold_entity_name);
      if (!pos) {
        ++hist.excluded;
        continue;
      }
      const std::size_t bucket = *pos / bucket_width;
      if (bucket >= hist.buckets.size()) hist.buckets.resize(bucket + 1, 0);
      ++hist.buckets[bucket];
      ++hist.mentions;
    }
  }
  return hist;
}

// The "w/o refinement" comparator: mean-pools the patch grid with a square
// kernel. 576 tokens pool to 144, the refinement default. The patch count
// must form a square grid.
inline std::vector<EmbeddingVector> avg_pool_baseline(std::span<const EmbeddingVector> patches,
                                                      std::size_t kernel = 2,
                                                      std::size_t stride = 2) {
  if (kernel == 0 || stride == 0) throw ShapeError("avg_pool_baseline: kernel/stride must be >= 1");
  if (patches.empty()) throw EmptyInputError("avg_pool_baseline: no patches");
  const std::size_t n = patches.size();
  std::size_t side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw ShapeError("avg_pool_baseline: " + std::to_string(n) + " patches is not a square grid");
  }
  if (side < kernel) throw ShapeError("avg_pool_baseline: grid smaller than kernel");
  const std::size_t d = patches[0].dim();
  for (const EmbeddingVector& p : patches) {
    if (p.dim() != d) throw DimensionError("avg_pool_baseline: patch dim mismatch");
  }

  const std::size_t out_side = (side - kernel) / stride + 1;
  std::vector<EmbeddingVector> pooled;
  pooled.reserve(out_side * out_side);
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (std::size_t r = 0; r < out_side; ++r) {
    for (std::size_t c = 0; c < out_side; ++c) {
      std::vector<double> acc(d, 0.0);
      for (std::size_t kr = 0; kr < kernel; ++kr) {
        for (std::size_t kc = 0; kc < kernel; ++kc) {
          const EmbeddingVector& p = patches[(r * stride + kr) * side + (c * stride + kc)];
          for (std::size_t i = 0; i < d; ++i) acc[i] += static_cast<double>(p.values[i]);
        }
      }
      EmbeddingVector v;
      v.values.resize(d);
      for (std::size_t i = 0; i < d; ++i) v.values[i] = static_cast<float>(acc[i] * inv);
      pooled.push_back(std::move(v));
    }
  }
  return pooled;
}

inline std::vector<EmbeddingVector> avg_pool_baseline(const std::vector<EmbeddingVector>& patches,
                                                      std::size_t kernel = 2,
                                                      std::size_t stride = 2) {
  return avg_pool_baseline(std::span<const EmbeddingVector>(patches), kernel, stride);
}

struct EvalOptions {
  double relaxed_tolerance = 0.05;
  std::size_t histogram_bucket_width = 50;
};

// Full report over a record set. Each metric's denominator covers only the
// records it can score: stage metrics need retrieval output plus the gold
// label, VQA needs a prediction, relaxed needs a numeric gold.
inline MetricReport evaluate(std::span<const EvalRecord> records, const EvalOptions& options = {}) {
  MetricReport report;
  for (const EvalRecord& r : records) {
    if (!r.stage1_entities.empty() && !r.gold_entity_name.empty()) {
      ++report.stage1.evaluated;
      if (stage1_hit(r)) ++report.stage1.hits;
    }
    if (!r.stage2_passages.empty() && !r.gold_answers.empty()) {
      ++report.stage2.evaluated;
      if (stage2_hit(r)) ++report.stage2.hits;
    }
    if (!r.gold_answers.empty()) {
      if (!r.prediction) {
        ++report.vqa_missing_prediction;
      } else {
        ++report.vqa.evaluated;
        if (prediction_matches(r)) ++report.vqa.hits;
      }
    }
    if (r.numeric_gold) {
      ++report.relaxed.evaluated;
      if (relaxed_hit(r, options.relaxed_tolerance)) ++report.relaxed.hits;
    }
  }
  report.position_histogram = entity_position_histogram(records, options.histogram_bucket_width);
  return report;
}

inline nlohmann::json eval_record_to_json(const EvalRecord& r) {
  nlohmann::json j{
      {"query_id", r.query_id},
      {"gold_entity_name", r.gold_entity_name},
      {"gold_answers", r.gold_answers},
      {"stage1_entities", r.stage1_entities},
      {"stage2_passages", r.stage2_passages},
  };
  if (r.numeric_gold) j["numeric_gold"] = *r.numeric_gold;
  if (r.prediction) j["prediction"] = *r.prediction;
  return j;
}

inline EvalRecord eval_record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("eval record is not an object");
  EvalRecord r;
  if (j.contains("query_id")) {
    if (j["query_id"].is_string()) {
      r.query_id = j["query_id"].get<std::string>();
    } else if (j["query_id"].is_number()) {
      r.query_id = std::to_string(j["query_id"].get<std::int64_t>());
    } else {
      throw ParseError("eval record 'query_id' must be a string or number");
    }
  }
  if (j.contains("gold_entity_name")) {
    if (!j["gold_entity_name"].is_string()) {
      throw ParseError("eval record 'gold_entity_name' must be a string");
    }
    r.gold_entity_name = j["gold_entity_name"].get<std::string>();
  }
  auto read_strings = [&j](const char* key, std::vector<std::string>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_array()) throw ParseError(std::string("eval record '") + key + "' must be an array");
    for (const nlohmann::json& s : j[key]) {
      if (!s.is_string()) throw ParseError(std::string("eval record '") + key + "' entries must be strings");
      out.push_back(s.get<std::string>());
    }
  };
  read_strings("gold_answers", r.gold_answers);
  read_strings("stage1_entities", r.stage1_entities);
  read_strings("stage2_passages", r.stage2_passages);
  if (j.contains("numeric_gold") && !j["numeric_gold"].is_null()) {
    if (!j["numeric_gold"].is_number()) throw ParseError("eval record 'numeric_gold' must be a number");
    r.numeric_gold = j["numeric_gold"].get<double>();
  }
  if (j.contains("prediction") && !j["prediction"].is_null()) {
    if (!j["prediction"].is_string()) throw ParseError("eval record 'prediction' must be a string");
    r.prediction = j["prediction"].get<std::string>();
  }
  return r;
}

// Loads newline-delimited eval records. With a non-null `errors`, malformed
// lines are skipped and reported there; otherwise the first malformed line
// throws ParseError.
inline std::vector<EvalRecord> load_eval_records(const std::filesystem::path& path,
                                                 std::vector<std::string>* errors = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFileError("cannot open eval records file: " + path.string());
  std::vector<EvalRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string problem;
    try {
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw ParseError("invalid JSON");
      records.push_back(eval_record_from_json(j));
    } catch (const Error& e) {
      problem = e.what();
    } catch (const nlohmann::json::exception& e) {
      problem = e.what();
    }
    if (!problem.empty()) {
      std::string msg = "eval line " + std::to_string(line_no) + ": " + problem;
      if (errors) {
        errors->push_back(std::move(msg));
      } else {
        throw ParseError(msg);
      }
    }
  }
  return records;
}

inline nlohmann::json report_to_json(const MetricReport& report) {
  auto rate_or_null = [](const std::optional<double>& r) {
    return r ? nlohmann::json(*r) : nlohmann::json(nullptr);
  };
  nlohmann::json hist{
      {"bucket_width", report.position_histogram.bucket_width},
      {"buckets", report.position_histogram.buckets},
      {"mentions", report.position_histogram.mentions},
      {"excluded", report.position_histogram.excluded},
  };
  return nlohmann::json{
      {"stage1_precision", rate_or_null(report.stage1_precision())},
      {"stage1_evaluated", report.stage1.evaluated},
      {"stage1_hits", report.stage1.hits},
      {"stage2_precision", rate_or_null(report.stage2_precision())},
      {"stage2_evaluated", report.stage2.evaluated},
      {"stage2_hits", report.stage2.hits},
      {"vqa_accuracy", rate_or_null(report.vqa_accuracy())},
      {"vqa_evaluated", report.vqa.evaluated},
      {"vqa_hits", report.vqa.hits},
      {"vqa_missing_prediction", report.vqa_missing_prediction},
      {"relaxed_accuracy", rate_or_null(report.relaxed_accuracy())},
      {"relaxed_evaluated", report.relaxed.evaluated},
      {"relaxed_hits", report.relaxed.hits},
      {"position_histogram", hist},
  };
}

inline void write_report_table(std::ostream& out, const MetricReport& report) {
  auto row = [&out](const char* name, const MetricCounts& counts) {
    out << name << ": ";
    if (auto rate = counts.rate()) {
      out << *rate * 100.0 << "% (" << counts.hits << "/" << counts.evaluated << ")";
    } else {
      out << "n/a (0 evaluated)";
    }
    out << '\n';
  };
  row("stage-1 precision", report.stage1);
  row("stage-2 precision", report.stage2);
  row("vqa accuracy     ", report.vqa);
  row("relaxed accuracy ", report.relaxed);
  out << "passages with entity mention: " << report.position_histogram.mentions
      << ", without: " << report.position_histogram.excluded << '\n';
}

inline void write_histogram_csv(std::ostream& out, const PositionHistogram& hist) {
  out << "bucket_start,bucket_end,count\n";
  for (std::size_t i = 0; i < hist.buckets.size(); ++i) {
    out << i * hist.bucket_width << ',' << (i + 1) * hist.bucket_width << ',' << hist.buckets[i]
        << '\n';
  }
}

}  // namespace rve
