// rve: operator CLI for the retrieval-vision engine.
//
// Subcommands: index build, index query, retrieve, refine, build-training,
// eval. Exit codes: 0 success, 1 degraded with warnings, 2 usage/validation,
// 3 I/O or corruption.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rve/rve.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDegraded = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

// Thrown instead of degrading when --strict is set.
struct StrictBackendFailure : rve::Error {
  using Error::Error;
};

// Counts backend failures so the CLI can warn (default) or abort (--strict)
// while the pipeline keeps its per-snippet degradation contract.
class RecordingBackend : public rve::TextRetrieverBackend {
 public:
  RecordingBackend(std::unique_ptr<rve::TextRetrieverBackend> inner, bool strict)
      : inner_(std::move(inner)), strict_(strict) {}

  std::vector<rve::RetrievedPassage> retrieve(const std::string& query,
                                              std::size_t limit) const override {
    try {
      return inner_->retrieve(query, limit);
    } catch (const rve::BackendError& e) {
      {
        std::lock_guard<std::mutex> lock(mutex_);
        ++failures_;
        if (first_error_.empty()) first_error_ = e.what();
      }
      if (strict_) throw StrictBackendFailure(e.what());
      throw;
    }
  }

  int failures() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return failures_;
  }

  std::string first_error() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return first_error_;
  }

 private:
  std::unique_ptr<rve::TextRetrieverBackend> inner_;
  bool strict_;
  mutable std::mutex mutex_;
  mutable int failures_ = 0;
  mutable std::string first_error_;
};

struct BackendOptions {
  std::string kind = "local";
  std::string corpus_path;
  std::string endpoint;
  int timeout_seconds = 10;
  int retries = 2;
};

void add_backend_options(CLI::App* cmd, BackendOptions& opts) {
  cmd->add_option("--backend", opts.kind, "Text retrieval backend: local or remote")
      ->check(CLI::IsMember({"local", "remote"}))
      ->capture_default_str();
  cmd->add_option("--corpus", opts.corpus_path,
                  "Passage corpus for the local backend (UTF-8, one passage per line)");
  cmd->add_option("--endpoint", opts.endpoint, "Remote search endpoint URL");
  cmd->add_option("--timeout", opts.timeout_seconds, "Remote request timeout in seconds")
      ->capture_default_str();
  cmd->add_option("--retries", opts.retries, "Remote retry count")->capture_default_str();
}

std::unique_ptr<rve::TextRetrieverBackend> make_backend(const BackendOptions& opts) {
  if (opts.kind == "local") {
    if (opts.corpus_path.empty()) {
      throw rve::Error("--backend local requires --corpus");
    }
    std::ifstream in(opts.corpus_path, std::ios::binary);
    if (!in) throw rve::CorruptFileError("cannot open corpus file: " + opts.corpus_path);
    std::vector<std::string> passages;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) passages.push_back(line);
    }
    return std::make_unique<rve::LocalLexicalBackend>(std::move(passages));
  }
  if (opts.endpoint.empty()) throw rve::Error("--backend remote requires --endpoint");
  rve::RemoteSearchBackend::Options remote;
  remote.timeout = std::chrono::seconds(opts.timeout_seconds);
  remote.max_retries = opts.retries;
  if (const char* key = std::getenv("RVE_SEARCH_API_KEY")) remote.api_key = key;
  return std::make_unique<rve::RemoteSearchBackend>(opts.endpoint, remote);
}

rve::EmbeddingVector load_single_embedding(const std::string& path, std::size_t row) {
  auto [dim, vectors] = rve::read_embedding_file(path);
  (void)dim;
  if (row >= vectors.size()) {
    throw rve::Error("row " + std::to_string(row) + " out of range for " + path + " (count " +
                     std::to_string(vectors.size()) + ")");
  }
  return vectors[row];
}

rve::EmbeddingVector json_to_embedding(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.empty()) {
    throw rve::ParseError(std::string("'") + field + "' must be a non-empty array of numbers");
  }
  rve::EmbeddingVector v;
  v.values.reserve(j.size());
  for (const nlohmann::json& x : j) {
    if (!x.is_number()) throw rve::ParseError(std::string("'") + field + "' must be numeric");
    v.values.push_back(x.get<float>());
  }
  return v;
}

std::vector<rve::AnnotatedQuery> load_annotated_queries(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw rve::CorruptFileError("cannot open queries file: " + path);
  std::vector<rve::AnnotatedQuery> queries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw rve::ParseError("queries line " + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      rve::AnnotatedQuery q;
      for (const char* field : {"query_text", "gold_entity", "answer", "image_embedding"}) {
        if (!j.contains(field)) {
          throw rve::ParseError(std::string("missing '") + field + "'");
        }
      }
      q.query.text = j["query_text"].get<std::string>();
      q.query_image_ref = j.value("query_image_ref", std::string{});
      q.gold_entity_name = j["gold_entity"].get<std::string>();
      q.answer = j["answer"].get<std::string>();
      q.query.image_embedding = json_to_embedding(j["image_embedding"], "image_embedding");
      if (j.contains("patch_embeddings")) {
        for (const nlohmann::json& p : j["patch_embeddings"]) {
          q.query.patch_embeddings.push_back(json_to_embedding(p, "patch_embeddings"));
        }
      } else {
        q.query.patch_embeddings.push_back(q.query.image_embedding);
      }
      if (j.contains("text_embedding")) {
        q.query.text_embedding = json_to_embedding(j["text_embedding"], "text_embedding");
      } else {
        q.query.text_embedding = q.query.image_embedding;
      }
      q.query.validate();
      queries.push_back(std::move(q));
    } catch (const rve::Error& e) {
      throw rve::ParseError("queries line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw rve::ParseError("queries line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return queries;
}

int run_index_build(const std::string& embeddings_path, const std::string& store_path,
                    const std::string& out_path, const rve::HnswParams& params) {
  auto [dim, vectors] = rve::read_embedding_file(embeddings_path);
  rve::EntityStore store = rve::load_store(store_path);
  if (vectors.size() != store.size()) {
    std::cerr << "error: embedding count " << vectors.size() << " != store record count "
              << store.size() << "\n";
    return kExitUsage;
  }

  auto start = std::chrono::steady_clock::now();
  rve::HnswIndex index(dim, params);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    index.insert(store.records()[i].id, vectors[i]);
  }
  index.freeze();
  rve::save_index(index, out_path);
  double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::cout << "N=" << index.size() << " dim=" << index.dim() << " build_time=" << seconds
            << "s\n";
  return kExitOk;
}

int run_index_query(const std::string& index_path, const std::string& query_path, std::size_t row,
                    std::size_t k, bool exact, bool softmax) {
  rve::HnswIndex index = rve::load_index(index_path);
  rve::EmbeddingVector query = load_single_embedding(query_path, row);

  std::vector<rve::ScoredId> results;
  std::vector<double> probs;
  if (exact) {
    std::vector<rve::ScoredId> all = index.similarities(query);
    results = rve::top_k(all, k);
    if (softmax) {
      // probabilities over the full database
      std::vector<double> sims;
      sims.reserve(all.size());
      for (const rve::ScoredId& s : all) sims.push_back(s.score);
      std::vector<double> full = rve::softmax_scores(sims);
      for (const rve::ScoredId& r : results) {
        for (std::size_t i = 0; i < all.size(); ++i) {
          if (all[i].id == r.id) {
            probs.push_back(full[i]);
            break;
          }
        }
      }
    }
  } else if (softmax) {
    // probabilities over the candidate pool the search beam retained
    std::size_t pool_size = std::max<std::size_t>(k, index.params().ef_search);
    std::vector<rve::ScoredId> pool = index.search(query, pool_size);
    std::vector<double> sims;
    sims.reserve(pool.size());
    for (const rve::ScoredId& s : pool) sims.push_back(s.score);
    std::vector<double> pool_probs = rve::softmax_scores(sims);
    for (std::size_t i = 0; i < std::min(k, pool.size()); ++i) {
      results.push_back(pool[i]);
      probs.push_back(pool_probs[i]);
    }
  } else {
    results = index.search(query, k);
  }

  for (std::size_t i = 0; i < results.size(); ++i) {
    std::cout << results[i].id << ' ' << results[i].score;
    if (softmax) std::cout << ' ' << probs[i];
    std::cout << '\n';
  }
  return kExitOk;
}

int run_retrieve(const std::string& index_path, const std::string& store_path,
                 const std::string& query_embedding_path, std::size_t query_row,
                 const std::string& patches_path, const std::string& query_text,
                 const rve::RetrievalConfig& config, const BackendOptions& backend_opts,
                 bool strict, const std::string& out_path) {
  rve::HnswIndex index = rve::load_index(index_path);
  rve::EntityStore store = rve::load_store(store_path);
  rve::verify_aligned(index, store);

  rve::MultimodalQuery query;
  query.image_embedding = load_single_embedding(query_embedding_path, query_row);
  if (!patches_path.empty()) {
    auto [dim, patches] = rve::read_embedding_file(patches_path);
    (void)dim;
    query.patch_embeddings = std::move(patches);
  } else {
    query.patch_embeddings = {query.image_embedding};
  }
  query.text = query_text;
  query.text_embedding = query.image_embedding;

  RecordingBackend backend(make_backend(backend_opts), strict);
  std::vector<rve::KnowledgeSnippet> snippets =
      rve::retrieve(index, store, backend, query, config);

  if (out_path.empty()) {
    rve::write_snippets_jsonl(std::cout, snippets);
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw rve::CorruptFileError("cannot open output file: " + out_path);
    rve::write_snippets_jsonl(out, snippets);
  }

  if (backend.failures() > 0) {
    std::cerr << "warning: " << backend.failures()
              << " stage-2 request(s) failed, affected snippets have no passages ("
              << backend.first_error() << ")\n";
    return kExitDegraded;
  }
  return kExitOk;
}

int run_refine(const std::string& patches_path, const std::string& text_embedding_path,
               std::size_t m, std::size_t grid_width, const std::string& mask_path) {
  auto [dim, patches] = rve::read_embedding_file(patches_path);
  (void)dim;
  rve::EmbeddingVector text_embedding = load_single_embedding(text_embedding_path, 0);
  rve::TokenSelection selection = rve::refine_query_tokens(patches, text_embedding, m);

  for (std::size_t i = 0; i < selection.indices.size(); ++i) {
    if (i > 0) std::cout << ' ';
    std::cout << selection.indices[i];
  }
  std::cout << '\n';

  if (grid_width > 0) {
    std::ofstream mask(mask_path, std::ios::binary | std::ios::trunc);
    if (!mask) throw rve::CorruptFileError("cannot open mask file: " + mask_path);
    rve::write_patch_mask(mask, selection.indices, patches.size(), grid_width);
  }
  return kExitOk;
}

int run_build_training(const std::string& queries_path, const std::string& index_path,
                       const std::string& store_path, const rve::RetrievalConfig& config,
                       const BackendOptions& backend_opts, std::uint64_t seed,
                       const std::string& out_path, bool shuffle_noise) {
  rve::HnswIndex index = rve::load_index(index_path);
  rve::EntityStore store = rve::load_store(store_path);
  rve::verify_aligned(index, store);
  std::vector<rve::AnnotatedQuery> queries = load_annotated_queries(queries_path);

  RecordingBackend backend(make_backend(backend_opts), /*strict=*/false);
  rve::NoisePlacement placement;
  placement.shuffled = shuffle_noise;
  rve::DatasetSummary summary =
      rve::build_dataset(index, store, backend, queries, config, seed, out_path, placement);
  std::cout << rve::summary_to_json(summary).dump(2) << '\n';
  for (const std::string& err : summary.errors) std::cerr << "warning: " << err << '\n';
  return summary.skipped > 0 ? kExitDegraded : kExitOk;
}

int run_eval(const std::string& records_path, double tolerance, std::size_t bucket_width,
             const std::string& histogram_csv, const std::string& report_path, bool strict) {
  std::vector<std::string> errors;
  std::vector<rve::EvalRecord> records = rve::load_eval_records(records_path, &errors);
  for (const std::string& err : errors) std::cerr << "warning: " << err << '\n';
  if (strict && !errors.empty()) {
    std::cerr << "error: " << errors.size() << " malformed record(s)\n";
    return kExitIo;
  }
  if (records.empty()) {
    std::cerr << "error: no evaluable records in " << records_path << "\n";
    return kExitUsage;
  }

  rve::EvalOptions options;
  options.relaxed_tolerance = tolerance;
  options.histogram_bucket_width = bucket_width;
  rve::MetricReport report = rve::evaluate(records, options);

  rve::write_report_table(std::cout, report);
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    if (!out) throw rve::CorruptFileError("cannot open report file: " + report_path);
    out << rve::report_to_json(report).dump(2) << '\n';
  }
  if (!histogram_csv.empty()) {
    std::ofstream out(histogram_csv, std::ios::binary | std::ios::trunc);
    if (!out) throw rve::CorruptFileError("cannot open histogram file: " + histogram_csv);
    rve::write_histogram_csv(out, report.position_histogram);
  }
  return errors.empty() ? kExitOk : kExitDegraded;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retrieval-vision engine: two-stage multimodal retrieval, visual token "
               "refinement, noise-injected training data, and retrieval evaluation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Declarative config file; command-line flags override");

  // index build / index query
  CLI::App* index_cmd = app.add_subcommand("index", "Vector index operations");
  index_cmd->require_subcommand(1);

  std::string embeddings_path, store_path, out_index;
  rve::HnswParams params;
  CLI::App* build_cmd = index_cmd->add_subcommand("build", "Build an index from embeddings");
  build_cmd->add_option("--embeddings", embeddings_path, "Embedding file (RVE1)")->required();
  build_cmd->add_option("--store", store_path, "Entity store (JSONL)")->required();
  build_cmd->add_option("--out", out_index, "Output index path")->required();
  build_cmd->add_option("--max-degree", params.max_degree)->capture_default_str();
  build_cmd->add_option("--ef-construction", params.ef_construction)->capture_default_str();
  build_cmd->add_option("--ef-search", params.ef_search)->capture_default_str();
  build_cmd->add_option("--level-lambda", params.level_lambda,
                        "Level draw factor; 0 derives 1/ln(max_degree)")
      ->capture_default_str();
  build_cmd->add_option("--seed", params.rng_seed, "Build RNG seed")->capture_default_str();

  std::string query_index_path, query_embedding_path;
  std::size_t query_row = 0;
  std::size_t query_k = 10;
  bool query_exact = false;
  bool query_softmax = false;
  CLI::App* query_cmd = index_cmd->add_subcommand("query", "Query an index");
  query_cmd->add_option("--index", query_index_path, "Index file (RHN1)")->required();
  query_cmd->add_option("--query", query_embedding_path, "Query embedding file (RVE1)")
      ->required();
  query_cmd->add_option("--row", query_row, "Row in the query file")->capture_default_str();
  query_cmd->add_option("-k,--k", query_k, "Number of results")->capture_default_str();
  query_cmd->add_flag("--exact", query_exact, "Linear scan instead of the HNSW graph");
  query_cmd->add_flag("--softmax", query_softmax, "Also print softmax probabilities");

  // retrieve
  std::string r_index, r_store, r_query_embedding, r_patches, r_text, r_out;
  std::size_t r_query_row = 0;
  rve::RetrievalConfig r_config;
  BackendOptions r_backend;
  bool r_strict = false;
  CLI::App* retrieve_cmd = app.add_subcommand("retrieve", "Two-stage multimodal retrieval");
  retrieve_cmd->add_option("--index", r_index)->required();
  retrieve_cmd->add_option("--store", r_store)->required();
  retrieve_cmd->add_option("--query-embedding", r_query_embedding, "Query image embedding (RVE1)")
      ->required();
  retrieve_cmd->add_option("--query-row", r_query_row)->capture_default_str();
  retrieve_cmd->add_option("--patches", r_patches, "Query patch embeddings (RVE1, optional)");
  retrieve_cmd->add_option("--query-text", r_text, "Text query")->required();
  retrieve_cmd->add_option("-k,--k", r_config.k, "Stage-1 snippet count")->capture_default_str();
  retrieve_cmd->add_option("-l,--l", r_config.l, "Stage-2 passages per snippet")
      ->capture_default_str();
  retrieve_cmd->add_option("--truncation-limit", r_config.truncation_limit,
                           "Token cap per passage")
      ->capture_default_str();
  retrieve_cmd->add_option("--max-in-flight", r_config.max_in_flight,
                           "Concurrent stage-2 requests")
      ->capture_default_str();
  add_backend_options(retrieve_cmd, r_backend);
  retrieve_cmd->add_flag("--strict", r_strict, "Fail on backend errors instead of degrading");
  retrieve_cmd->add_option("--out", r_out, "Write snippets to this file instead of stdout");

  // refine
  std::string f_patches, f_text_embedding, f_mask;
  std::size_t f_m = 144;
  std::size_t f_grid = 0;
  CLI::App* refine_cmd = app.add_subcommand("refine", "Query-oriented visual token refinement");
  refine_cmd->add_option("--patches", f_patches, "Patch embeddings (RVE1)")->required();
  refine_cmd->add_option("--text-embedding", f_text_embedding, "Text embedding (RVE1, row 0)")
      ->required();
  refine_cmd->add_option("-m,--m", f_m, "Tokens to keep")->capture_default_str();
  refine_cmd->add_option("--grid-width", f_grid, "Patch grid width; enables the mask output");
  refine_cmd->add_option("--mask", f_mask, "Mask output path (portable bitmap)");

  // build-training
  std::string t_queries, t_index, t_store, t_out;
  rve::RetrievalConfig t_config;
  BackendOptions t_backend;
  std::uint64_t t_seed = 0;
  bool t_shuffle_noise = false;
  CLI::App* training_cmd =
      app.add_subcommand("build-training", "Build noise-injected training instances");
  training_cmd->add_option("--queries", t_queries, "Annotated queries (JSONL)")->required();
  training_cmd->add_option("--index", t_index)->required();
  training_cmd->add_option("--store", t_store)->required();
  training_cmd->add_option("-k,--k", t_config.k)->capture_default_str();
  training_cmd->add_option("-l,--l", t_config.l)->capture_default_str();
  training_cmd->add_option("--truncation-limit", t_config.truncation_limit)
      ->capture_default_str();
  add_backend_options(training_cmd, t_backend);
  training_cmd->add_option("--seed", t_seed, "Noise sampling seed")->capture_default_str();
  training_cmd->add_flag("--shuffle-noise", t_shuffle_noise,
                         "Place the noise snippet at a seeded random position (ablation)");
  training_cmd->add_option("--out", t_out, "Output dataset path")->required();

  // eval
  std::string e_records, e_histogram, e_report;
  double e_tolerance = 0.05;
  std::size_t e_bucket = 50;
  bool e_strict = false;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Compute retrieval and answer metrics");
  eval_cmd->add_option("--records", e_records, "Eval records (JSONL)")->required();
  eval_cmd->add_option("--tolerance", e_tolerance, "Relaxed-accuracy relative tolerance")
      ->capture_default_str();
  eval_cmd->add_option("--bucket-width", e_bucket, "Histogram bucket width in tokens")
      ->capture_default_str();
  eval_cmd->add_option("--histogram-csv", e_histogram, "Write the position histogram as CSV");
  eval_cmd->add_option("--report", e_report, "Write the machine-readable report (JSON)");
  eval_cmd->add_flag("--strict", e_strict, "Fail on malformed records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (build_cmd->parsed()) {
      return run_index_build(embeddings_path, store_path, out_index, params);
    }
    if (query_cmd->parsed()) {
      return run_index_query(query_index_path, query_embedding_path, query_row, query_k,
                             query_exact, query_softmax);
    }
    if (retrieve_cmd->parsed()) {
      return run_retrieve(r_index, r_store, r_query_embedding, r_query_row, r_patches, r_text,
                          r_config, r_backend, r_strict, r_out);
    }
    if (refine_cmd->parsed()) {
      if (f_grid > 0 && f_mask.empty()) {
        std::cerr << "error: --grid-width requires --mask\n";
        return kExitUsage;
      }
      return run_refine(f_patches, f_text_embedding, f_m, f_grid, f_mask);
    }
    if (training_cmd->parsed()) {
      return run_build_training(t_queries, t_index, t_store, t_config, t_backend, t_seed, t_out,
                                t_shuffle_noise);
    }
    if (eval_cmd->parsed()) {
      return run_eval(e_records, e_tolerance, e_bucket, e_histogram, e_report, e_strict);
    }
  } catch (const StrictBackendFailure& e) {
    std::cerr << "error: backend failure (strict): " << e.what() << "\n";
    return kExitIo;
  } catch (const rve::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const rve::CorruptFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const rve::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const rve::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
