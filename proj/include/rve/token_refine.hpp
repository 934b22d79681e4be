#pragma once

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "rve/embedding.hpp"
#include "rve/errors.hpp"

namespace rve {

// Result of selecting the top-m visual tokens. Indices are original patch
// positions in strictly increasing order, so the spatial layout survives
// refinement; scores are the exact dot products the selection used.
struct TokenSelection {
  std::vector<std::size_t> indices;
  std::vector<EmbeddingVector> tokens;
  std::vector<double> scores;

  std::size_t size() const { return indices.size(); }
  bool operator==(const TokenSelection& other) const = default;
};

namespace detail {

struct TokenScore {
  double score;
  std::size_t index;
};

// better(a, b): a is selected ahead of b (higher score, ties by lower index)
inline bool token_better(const TokenScore& a, const TokenScore& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index < b.index;
}

// Exact top-m over precomputed scores via a size-m bounded heap (worst on
// top), then re-emitted in original index order.
inline TokenSelection select_top_tokens(std::span<const EmbeddingVector> patches,
                                        std::span<const double> scores, std::size_t m) {
  std::vector<TokenScore> heap;
  heap.reserve(std::min(m, scores.size()) + 1);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    TokenScore entry{scores[i], i};
    if (heap.size() < m) {
      heap.push_back(entry);
      std::push_heap(heap.begin(), heap.end(), token_better);
    } else if (m > 0 && token_better(entry, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), token_better);
      heap.back() = entry;
      std::push_heap(heap.begin(), heap.end(), token_better);
    }
  }
  std::sort(heap.begin(), heap.end(),
            [](const TokenScore& a, const TokenScore& b) { return a.index < b.index; });

  TokenSelection out;
  out.indices.reserve(heap.size());
  out.tokens.reserve(heap.size());
  out.scores.reserve(heap.size());
  for (const TokenScore& t : heap) {
    out.indices.push_back(t.index);
    out.tokens.push_back(patches[t.index]);
    out.scores.push_back(t.score);
  }
  return out;
}

}  // namespace detail

// Selects the m query-image tokens most similar to the text embedding by raw
// dot product s_i = x_i . x_q. Ties break by ascending patch index.
inline TokenSelection refine_query_tokens(std::span<const EmbeddingVector> patch_embeddings,
                                          const EmbeddingVector& text_embedding,
                                          std::size_t m = 144) {
  std::vector<double> scores;
  scores.reserve(patch_embeddings.size());
  for (const EmbeddingVector& p : patch_embeddings) {
    if (p.dim() != text_embedding.dim()) {
      throw DimensionError("refine_query_tokens: patch dim " + std::to_string(p.dim()) +
                           " != text dim " + std::to_string(text_embedding.dim()));
    }
    scores.push_back(dot(p, text_embedding));
  }
  return detail::select_top_tokens(patch_embeddings, scores, m);
}

inline TokenSelection refine_query_tokens(const std::vector<EmbeddingVector>& patch_embeddings,
                                          const EmbeddingVector& text_embedding,
                                          std::size_t m = 144) {
  return refine_query_tokens(std::span<const EmbeddingVector>(patch_embeddings), text_embedding,
                             m);
}

// Selects the m retrieved-image tokens most relevant to the query image:
// s_j = sum over selected query tokens of (x_i . x_j), computed through the
// summed query vector (the sum distributes over the dot product).
inline TokenSelection refine_retrieved_tokens(std::span<const EmbeddingVector> retrieved_patches,
                                              const TokenSelection& query_selection,
                                              std::size_t m = 144) {
  if (query_selection.size() == 0) {
    throw EmptyInputError("refine_retrieved_tokens: empty query selection");
  }
  const std::size_t d = query_selection.tokens[0].dim();
  std::vector<double> summed(d, 0.0);
  for (const EmbeddingVector& t : query_selection.tokens) {
    if (t.dim() != d) throw DimensionError("refine_retrieved_tokens: query token dim mismatch");
    for (std::size_t i = 0; i < d; ++i) summed[i] += static_cast<double>(t.values[i]);
  }

  std::vector<double> scores;
  scores.reserve(retrieved_patches.size());
  for (const EmbeddingVector& p : retrieved_patches) {
    if (p.dim() != d) {
      throw DimensionError("refine_retrieved_tokens: retrieved patch dim " +
                           std::to_string(p.dim()) + " != " + std::to_string(d));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += summed[i] * static_cast<double>(p.values[i]);
    scores.push_back(acc);
  }
  return detail::select_top_tokens(retrieved_patches, scores, m);
}

inline TokenSelection refine_retrieved_tokens(const std::vector<EmbeddingVector>& retrieved_patches,
                                              const TokenSelection& query_selection,
                                              std::size_t m = 144) {
  return refine_retrieved_tokens(std::span<const EmbeddingVector>(retrieved_patches),
                                 query_selection, m);
}

// Emits the selection as an ASCII portable bitmap (P1): one cell per patch on
// a grid of the given width, 1 where the patch was selected. Rows are filled
// left-to-right, top-to-bottom; a ragged final row is padded with zeros.
inline void write_patch_mask(std::ostream& out, const std::vector<std::size_t>& selected_indices,
                             std::size_t patch_count, std::size_t grid_width) {
  if (grid_width == 0) throw ShapeError("write_patch_mask: grid width must be >= 1");
  const std::size_t rows = (patch_count + grid_width - 1) / grid_width;
  std::vector<char> mask(rows * grid_width, '0');
  for (std::size_t idx : selected_indices) {
    if (idx >= patch_count) throw ShapeError("write_patch_mask: index out of range");
    mask[idx] = '1';
  }
  out << "P1\n" << grid_width << ' ' << rows << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < grid_width; ++c) {
      if (c > 0) out << ' ';
      out << mask[r * grid_width + c];
    }
    out << '\n';
  }
}

}  // namespace rve
