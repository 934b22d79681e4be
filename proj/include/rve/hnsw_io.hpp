#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "rve/crc32.hpp"
#include "rve/embedding_io.hpp"
#include "rve/errors.hpp"
#include "rve/hnsw.hpp"

namespace rve {

// Index file format "RHN1", version 1, all integers little-endian:
//   magic        4 bytes "RHN1"
//   version      u32
//   dim          u32
//   count        u64
//   params       u32 max_degree, u32 ef_construction, u32 ef_search,
//                f64 level_lambda, u64 rng_seed
//   entry_point  u64 node id (u64 max when the index is empty)
//   nodes        count entries, insertion order:
//                  u64 id, u32 level_count,
//                  per level: u32 neighbor_count, neighbor_count u64 ids
//   vectors      embedded RVE1 block (normalized payload, insertion order)
//   checksum     u32 CRC-32 of every preceding byte
//
// A fixed rng_seed and insertion order reproduce this file byte for byte.

inline constexpr char kIndexMagic[4] = {'R', 'H', 'N', '1'};
inline constexpr std::uint32_t kIndexVersion = 1;
inline constexpr std::uint64_t kNoEntryPoint = ~0ull;

inline std::string serialize_index(const HnswIndex& index) {
  if (!index.frozen()) throw StateError("serialize_index: index must be frozen");
  std::string out;
  out.append(kIndexMagic, 4);
  detail::put_u32(out, kIndexVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(index.dim()));
  detail::put_u64(out, static_cast<std::uint64_t>(index.size()));

  const HnswParams& p = index.params();
  detail::put_u32(out, p.max_degree);
  detail::put_u32(out, p.ef_construction);
  detail::put_u32(out, p.ef_search);
  detail::put_f64(out, p.effective_level_lambda());
  detail::put_u64(out, p.rng_seed);

  detail::put_u64(out, index.empty() ? kNoEntryPoint : index.entry_id());

  const std::vector<HnswIndex::Node>& nodes = index.nodes();
  for (const HnswIndex::Node& node : nodes) {
    detail::put_u64(out, node.id);
    detail::put_u32(out, static_cast<std::uint32_t>(node.links.size()));
    for (const std::vector<std::uint32_t>& level_links : node.links) {
      detail::put_u32(out, static_cast<std::uint32_t>(level_links.size()));
      for (std::uint32_t nb : level_links) detail::put_u64(out, nodes[nb].id);
    }
  }

  out.append(kEmbeddingMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(index.dim()));
  detail::put_u64(out, static_cast<std::uint64_t>(index.size()));
  for (float x : index.raw_data()) detail::put_f32(out, x);

  detail::put_u32(out, crc32(out.data(), out.size()));
  return out;
}

inline void save_index(const HnswIndex& index, const std::filesystem::path& path) {
  detail::write_file_bytes(path, serialize_index(index));
}

inline HnswIndex load_index(const std::filesystem::path& path) {
  std::string data = detail::read_file_bytes(path);
  if (data.size() < 4) throw CorruptFileError("index file too short: " + path.string());
  if (std::memcmp(data.data(), kIndexMagic, 4) != 0) {
    throw FormatError("bad index magic: " + path.string());
  }
  if (data.size() < 12) throw CorruptFileError("index file too short: " + path.string());

  detail::ByteReader reader(data.data(), data.size() - 4);
  char magic[4];
  reader.read_raw(magic, 4);
  std::uint32_t version = reader.u32();
  if (version != kIndexVersion) {
    throw FormatError("unsupported index version " + std::to_string(version));
  }

  std::uint32_t stored_crc = 0;
  for (int i = 3; i >= 0; --i) {
    stored_crc = (stored_crc << 8) | static_cast<unsigned char>(data[data.size() - 4 + i]);
  }
  if (crc32(data.data(), data.size() - 4) != stored_crc) {
    throw CorruptFileError("index checksum mismatch: " + path.string());
  }

  std::uint32_t dim = reader.u32();
  std::uint64_t count = reader.u64();
  if (dim == 0) throw CorruptFileError("index header has zero dim");

  HnswParams params;
  params.max_degree = reader.u32();
  params.ef_construction = reader.u32();
  params.ef_search = reader.u32();
  params.level_lambda = reader.f64();
  params.rng_seed = reader.u64();

  std::uint64_t entry_id = reader.u64();

  // first pass over node ids is implicit: neighbor ids are resolved after all
  // nodes are read, since edges may point forward in insertion order
  struct RawNode {
    std::uint64_t id;
    std::vector<std::vector<std::uint64_t>> links;
  };
  std::vector<RawNode> raw_nodes;
  raw_nodes.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    RawNode raw;
    raw.id = reader.u64();
    std::uint32_t level_count = reader.u32();
    if (level_count == 0 || level_count > 64) {
      throw CorruptFileError("index node has invalid level count");
    }
    raw.links.resize(level_count);
    for (std::uint32_t l = 0; l < level_count; ++l) {
      std::uint32_t n = reader.u32();
      if (reader.remaining() / 8 < n) throw CorruptFileError("index adjacency truncated");
      raw.links[l].resize(n);
      for (std::uint32_t j = 0; j < n; ++j) raw.links[l][j] = reader.u64();
    }
    raw_nodes.push_back(std::move(raw));
  }

  auto [vec_dim, vectors] = parse_embedding_block(reader);
  if (reader.remaining() != 0) throw CorruptFileError("index file has trailing bytes");
  if (vec_dim != dim || vectors.size() != count) {
    throw CorruptFileError("index vector payload inconsistent with header");
  }

  std::unordered_map<std::uint64_t, std::uint32_t> slot_of;
  slot_of.reserve(raw_nodes.size());
  for (std::uint32_t slot = 0; slot < raw_nodes.size(); ++slot) {
    if (!slot_of.emplace(raw_nodes[slot].id, slot).second) {
      throw CorruptFileError("index contains duplicate node id");
    }
  }

  std::vector<HnswIndex::Node> nodes;
  nodes.reserve(raw_nodes.size());
  std::vector<float> flat;
  flat.reserve(static_cast<std::size_t>(count) * dim);
  for (const EmbeddingVector& v : vectors) {
    flat.insert(flat.end(), v.values.begin(), v.values.end());
  }
  for (RawNode& raw : raw_nodes) {
    HnswIndex::Node node;
    node.id = raw.id;
    node.links.resize(raw.links.size());
    for (std::size_t l = 0; l < raw.links.size(); ++l) {
      node.links[l].reserve(raw.links[l].size());
      for (std::uint64_t nb_id : raw.links[l]) {
        auto it = slot_of.find(nb_id);
        if (it == slot_of.end()) throw CorruptFileError("index edge references unknown id");
        node.links[l].push_back(it->second);
      }
    }
    nodes.push_back(std::move(node));
  }

  if (entry_id == kNoEntryPoint && count > 0) {
    throw CorruptFileError("index missing entry point");
  }
  try {
    if (count == 0) {
      HnswIndex index(dim, params);
      index.freeze();
      return index;
    }
    return HnswIndex::restore(dim, params, std::move(nodes), std::move(flat), entry_id);
  } catch (const CorruptFileError&) {
    throw;
  } catch (const Error& e) {
    throw CorruptFileError("index file inconsistent: " + std::string(e.what()));
  }
}

}  // namespace rve
