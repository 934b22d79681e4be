#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "rve/embedding.hpp"
#include "rve/errors.hpp"
#include "rve/text.hpp"

namespace rve {

struct RetrievedPassage {
  std::string text;
  double score = 0.0;

  bool operator==(const RetrievedPassage& other) const = default;
};

// Stage-2 text retriever: given an expanded query, returns up to `limit`
// passages ordered by relevance. Implementations must support concurrent
// retrieve() calls.
class TextRetrieverBackend {
 public:
  virtual ~TextRetrieverBackend() = default;
  virtual std::vector<RetrievedPassage> retrieve(const std::string& query,
                                                 std::size_t limit) const = 0;
};

// Offline term-overlap ranker over a fixed passage corpus. Score is the
// number of unique query terms (case-folded, punctuation-stripped) present in
// the passage; ties break by ascending passage id; zero-score passages are
// excluded. Fully deterministic.
class LocalLexicalBackend : public TextRetrieverBackend {
 public:
  explicit LocalLexicalBackend(std::vector<std::string> corpus) : corpus_(std::move(corpus)) {
    passage_terms_.reserve(corpus_.size());
    for (const std::string& passage : corpus_) {
      std::unordered_set<std::string> terms;
      for (std::string& t : text::scoring_terms(passage)) terms.insert(std::move(t));
      passage_terms_.push_back(std::move(terms));
    }
  }

  std::size_t corpus_size() const { return corpus_.size(); }

  std::vector<RetrievedPassage> retrieve(const std::string& query,
                                         std::size_t limit) const override {
    std::vector<std::string> unique_terms;
    {
      std::unordered_set<std::string> seen;
      for (std::string& term : text::scoring_terms(query)) {
        if (seen.insert(term).second) unique_terms.push_back(std::move(term));
      }
    }
    std::vector<ScoredId> scored;
    for (std::size_t i = 0; i < corpus_.size(); ++i) {
      std::size_t hits = 0;
      for (const std::string& term : unique_terms) {
        if (passage_terms_[i].count(term)) ++hits;
      }
      if (hits > 0) scored.push_back({static_cast<std::uint64_t>(i), static_cast<double>(hits)});
    }
    std::vector<RetrievedPassage> out;
    for (const ScoredId& s : top_k(scored, limit)) {
      out.push_back({corpus_[static_cast<std::size_t>(s.id)], s.score});
    }
    return out;
  }

 private:
  std::vector<std::string> corpus_;
  std::vector<std::unordered_set<std::string>> passage_terms_;
};

struct RemoteSearchOptions {
  std::chrono::seconds timeout{10};
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{250};
  std::string api_key;  // sent as X-API-KEY when non-empty
};

// HTTP JSON client for a web-search endpoint. POSTs
//   {"query": <string>, "num_results": <int>}
// and expects a JSON array of {"text": <string>, "score": <number>}.
// Transient failures are retried with exponential backoff; exhausted retries
// surface as BackendError.
class RemoteSearchBackend : public TextRetrieverBackend {
 public:
  using Options = RemoteSearchOptions;

  explicit RemoteSearchBackend(std::string endpoint_url, Options options = Options())
      : options_(std::move(options)) {
    auto scheme_end = endpoint_url.find("://");
    if (scheme_end == std::string::npos) {
      throw BackendError("endpoint URL must include a scheme: " + endpoint_url);
    }
    auto path_begin = endpoint_url.find('/', scheme_end + 3);
    if (path_begin == std::string::npos) {
      base_ = endpoint_url;
      path_ = "/";
    } else {
      base_ = endpoint_url.substr(0, path_begin);
      path_ = endpoint_url.substr(path_begin);
    }
  }

  std::vector<RetrievedPassage> retrieve(const std::string& query,
                                         std::size_t limit) const override {
    nlohmann::json body{{"query", query}, {"num_results", limit}};
    const std::string payload = body.dump();

    std::string last_error;
    std::chrono::milliseconds delay = options_.initial_backoff;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
      httplib::Client client(base_);
      client.set_connection_timeout(options_.timeout);
      client.set_read_timeout(options_.timeout);
      httplib::Headers headers;
      if (!options_.api_key.empty()) headers.emplace("X-API-KEY", options_.api_key);

      httplib::Result res = client.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP status " + std::to_string(res->status);
        continue;
      }
      return parse_response(res->body, limit);
    }
    throw BackendError("search request to " + base_ + path_ + " failed after " +
                       std::to_string(options_.max_retries + 1) + " attempts: " + last_error);
  }

 private:
  static std::vector<RetrievedPassage> parse_response(const std::string& body,
                                                      std::size_t limit) {
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_array()) {
      throw BackendError("malformed search response: expected a JSON array");
    }
    std::vector<RetrievedPassage> out;
    for (const nlohmann::json& item : j) {
      if (!item.is_object() || !item.contains("text") || !item["text"].is_string()) {
        throw BackendError("malformed search response: item missing 'text'");
      }
      RetrievedPassage p;
      p.text = item["text"].get<std::string>();
      if (item.contains("score") && item["score"].is_number()) {
        p.score = item["score"].get<double>();
      }
      if (p.text.empty()) continue;
      out.push_back(std::move(p));
      if (out.size() == limit) break;
    }
    return out;
  }

  Options options_;
  std::string base_;
  std::string path_;
};

}  // namespace rve
