#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rve/errors.hpp"
#include "rve/hnsw.hpp"
#include "rve/rng.hpp"
#include "rve/text.hpp"

namespace rve {

// One knowledge-base entry: the search value paired with an index vector id.
struct EntityRecord {
  std::uint64_t id = 0;
  std::string entity_name;
  std::string description;
  std::string image_ref;
  std::optional<std::string> patch_embedding_ref;

  bool operator==(const EntityRecord& other) const = default;
};

inline nlohmann::json entity_to_json(const EntityRecord& rec) {
  nlohmann::json j{
      {"id", rec.id},
      {"entity_name", rec.entity_name},
      {"description", rec.description},
      {"image_ref", rec.image_ref},
  };
  if (rec.patch_embedding_ref) j["patch_embedding_ref"] = *rec.patch_embedding_ref;
  return j;
}

inline EntityRecord entity_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("entity record is not an object");
  EntityRecord rec;
  if (!j.contains("id") || !j["id"].is_number_unsigned()) {
    throw ParseError("entity record missing unsigned 'id'");
  }
  rec.id = j["id"].get<std::uint64_t>();
  if (!j.contains("entity_name") || !j["entity_name"].is_string()) {
    throw ParseError("entity record missing 'entity_name'");
  }
  rec.entity_name = j["entity_name"].get<std::string>();
  if (rec.entity_name.empty()) throw ParseError("entity record has empty 'entity_name'");
  auto optional_string = [&j](const char* key) -> std::string {
    if (!j.contains(key)) return {};
    if (!j[key].is_string()) {
      throw ParseError(std::string("entity record '") + key + "' must be a string");
    }
    return j[key].get<std::string>();
  };
  rec.description = optional_string("description");
  rec.image_ref = optional_string("image_ref");
  if (j.contains("patch_embedding_ref") && !j["patch_embedding_ref"].is_null()) {
    if (!j["patch_embedding_ref"].is_string()) {
      throw ParseError("entity record 'patch_embedding_ref' must be a string");
    }
    rec.patch_embedding_ref = j["patch_embedding_ref"].get<std::string>();
  }
  return rec;
}

// Immutable-after-load map from vector ids to entity records. Record order is
// preserved so persisted stores round-trip byte for byte.
class EntityStore {
 public:
  EntityStore() = default;

  void add(EntityRecord rec) {
    if (rec.entity_name.empty()) throw ParseError("add: entity_name must be non-empty");
    if (by_id_.count(rec.id)) {
      throw DuplicateIdError("add: duplicate entity id " + std::to_string(rec.id));
    }
    by_id_.emplace(rec.id, records_.size());
    normalized_names_.push_back(text::normalize_name(rec.entity_name));
    records_.push_back(std::move(rec));
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<EntityRecord>& records() const { return records_; }
  bool contains(std::uint64_t id) const { return by_id_.count(id) != 0; }

  const EntityRecord& get(std::uint64_t id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw NotFoundError("no entity with id " + std::to_string(id));
    return records_[it->second];
  }

  // Uniform draw over records whose entity name differs from `excluded_name`
  // under the normalized comparison. Deterministic for a fixed seed.
  const EntityRecord& sample_mismatched(std::string_view excluded_name,
                                        std::uint64_t seed) const {
    const std::string excluded = text::normalize_name(excluded_name);
    std::vector<std::size_t> eligible;
    eligible.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (normalized_names_[i] != excluded) eligible.push_back(i);
    }
    if (eligible.empty()) {
      throw ExhaustedStoreError("sample_mismatched: no entity differs from '" +
                                std::string(excluded_name) + "'");
    }
    return records_[eligible[splitmix64(seed) % eligible.size()]];
  }

  bool operator==(const EntityStore& other) const { return records_ == other.records_; }

 private:
  std::vector<EntityRecord> records_;
  std::vector<std::string> normalized_names_;  // parallel to records_
  std::unordered_map<std::uint64_t, std::size_t> by_id_;
};

// Store file: UTF-8, one JSON object per line. JSON string escaping keeps
// multi-line descriptions on a single line.
inline void save_store(const EntityStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorruptFileError("cannot open store file for writing: " + path.string());
  for (const EntityRecord& rec : store.records()) {
    out << entity_to_json(rec).dump() << '\n';
  }
  if (!out) throw CorruptFileError("store write failed: " + path.string());
}

inline EntityStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFileError("cannot open store file: " + path.string());
  EntityStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ParseError("store line " + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      store.add(entity_from_json(j));
    } catch (const Error& e) {
      throw ParseError("store line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("store line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return store;
}

// A store bound to an index must cover exactly the same id set.
inline void verify_aligned(const HnswIndex& index, const EntityStore& store) {
  if (index.size() != store.size()) {
    throw Error("index/store size mismatch: " + std::to_string(index.size()) + " vs " +
                std::to_string(store.size()));
  }
  for (const EntityRecord& rec : store.records()) {
    if (!index.contains(rec.id)) {
      throw Error("store id " + std::to_string(rec.id) + " missing from index");
    }
  }
}

}  // namespace rve
