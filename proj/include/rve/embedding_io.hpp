#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rve/embedding.hpp"
#include "rve/errors.hpp"

namespace rve {

// Embedding file format "RVE1":
//   magic   4 bytes  "RVE1"
//   dim     u32 LE
//   count   u64 LE
//   payload count*dim f32 LE, row-major
// No padding, no footer. Total size is exactly 16 + count*dim*4 bytes.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

// Bounds-checked little-endian reader over an in-memory buffer.
class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t pos() const { return pos_; }

  void read_raw(void* dst, std::size_t n) {
    if (remaining() < n) throw CorruptFileError("unexpected end of file");
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read_raw(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    unsigned char b[8];
    read_raw(b, 8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string bytes(std::size_t n) {
    if (remaining() < n) throw CorruptFileError("unexpected end of file");
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFileError("cannot open file: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorruptFileError("cannot open file for writing: " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw CorruptFileError("write failed: " + path.string());
}

}  // namespace detail

inline constexpr char kEmbeddingMagic[4] = {'R', 'V', 'E', '1'};
inline constexpr std::size_t kEmbeddingHeaderBytes = 16;

// Serializes the RVE1 block into `out` (used standalone and embedded in the
// index file). All vectors must share one dimension.
inline void append_embedding_block(std::string& out,
                                   std::span<const EmbeddingVector> vectors,
                                   std::size_t dim) {
  out.append(kEmbeddingMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(dim));
  detail::put_u64(out, static_cast<std::uint64_t>(vectors.size()));
  for (const EmbeddingVector& v : vectors) {
    if (v.dim() != dim) {
      throw DimensionError("embedding block: vector dim " + std::to_string(v.dim()) +
                           " != " + std::to_string(dim));
    }
    for (float x : v.values) detail::put_f32(out, x);
  }
}

inline std::pair<std::size_t, std::vector<EmbeddingVector>> parse_embedding_block(
    detail::ByteReader& reader) {
  char magic[4];
  reader.read_raw(magic, 4);
  if (std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
    throw FormatError("bad embedding magic");
  }
  std::uint32_t dim = reader.u32();
  std::uint64_t count = reader.u64();
  if (count > 0 && dim == 0) throw FormatError("embedding block: zero dim with nonzero count");
  if (count > 0 && reader.remaining() / (4ull * dim) < count) {
    throw CorruptFileError("embedding payload truncated");
  }
  std::vector<EmbeddingVector> vectors;
  vectors.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingVector v;
    v.values.resize(dim);
    for (std::uint32_t d = 0; d < dim; ++d) v.values[d] = reader.f32();
    vectors.push_back(std::move(v));
  }
  return {dim, std::move(vectors)};
}

inline void write_embedding_file(const std::filesystem::path& path,
                                 std::span<const EmbeddingVector> vectors) {
  if (vectors.empty()) throw EmptyInputError("write_embedding_file: no vectors");
  std::string out;
  out.reserve(kEmbeddingHeaderBytes + vectors.size() * vectors[0].dim() * 4);
  append_embedding_block(out, vectors, vectors[0].dim());
  detail::write_file_bytes(path, out);
}

inline void write_embedding_file(const std::filesystem::path& path,
                                 const std::vector<EmbeddingVector>& vectors) {
  write_embedding_file(path, std::span<const EmbeddingVector>(vectors));
}

// Returns (dim, vectors). The file length must equal the header-predicted
// size exactly; trailing garbage is treated as corruption.
inline std::pair<std::size_t, std::vector<EmbeddingVector>> read_embedding_file(
    const std::filesystem::path& path) {
  std::string data = detail::read_file_bytes(path);
  if (data.size() < kEmbeddingHeaderBytes) {
    throw CorruptFileError("embedding file too short: " + path.string());
  }
  detail::ByteReader reader(data.data(), data.size());
  auto [dim, vectors] = parse_embedding_block(reader);
  if (reader.remaining() != 0) {
    throw CorruptFileError("embedding file has trailing bytes: " + path.string());
  }
  return {dim, std::move(vectors)};
}

}  // namespace rve
