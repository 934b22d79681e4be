#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rve/errors.hpp"

namespace rve {

// Fixed-dimension embedding. Payload is f32; all similarity arithmetic
// accumulates in f64 so near-ties in top-k stay stable.
struct EmbeddingVector {
  std::vector<float> values;

  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<float> v) : values(std::move(v)) {}
  EmbeddingVector(std::initializer_list<float> v) : values(v) {}

  std::size_t dim() const { return values.size(); }

  bool is_finite() const {
    for (float x : values) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  double l2_norm() const {
    double acc = 0.0;
    for (float x : values) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
  }

  bool is_normalized(double tol = 1e-6) const {
    return std::abs(l2_norm() - 1.0) <= tol;
  }

  // Scales to unit L2 norm. Zero-norm or non-finite input has no direction.
  void normalize() {
    double norm = l2_norm();
    if (!std::isfinite(norm) || norm == 0.0) {
      throw DegenerateVectorError(
          "cannot normalize vector with zero norm or non-finite components");
    }
    float inv = static_cast<float>(1.0 / norm);
    for (float& x : values) x *= inv;
  }

  EmbeddingVector normalized() const {
    EmbeddingVector out = *this;
    out.normalize();
    return out;
  }

  bool operator==(const EmbeddingVector& other) const = default;
};

// One search hit: record id plus similarity (or probability).
struct ScoredId {
  std::uint64_t id = 0;
  double score = 0.0;

  bool operator==(const ScoredId& other) const = default;
};

// Canonical result ordering: score descending, ties by ascending id.
inline bool score_order(const ScoredId& a, const ScoredId& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  return dot(std::span<const float>(a.values), std::span<const float>(b.values));
}

// Cosine similarity a.b / (|a||b|). Result is in [-1, 1] up to rounding.
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionError("cosine_similarity: dim " + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()));
  }
  if (a.dim() == 0) throw DimensionError("cosine_similarity: empty vectors");
  double na = a.l2_norm();
  double nb = b.l2_norm();
  if (!std::isfinite(na) || !std::isfinite(nb) || na == 0.0 || nb == 0.0) {
    throw DegenerateVectorError("cosine_similarity: zero-norm or non-finite input");
  }
  return dot(a, b) / (na * nb);
}

// Softmax with max-subtraction for stability. Output sums to 1 and is
// order-preserving: the argsort of the output equals the argsort of the input.
inline std::vector<double> softmax_scores(std::span<const double> sims) {
  if (sims.empty()) throw EmptyInputError("softmax_scores: empty input");
  double max_sim = *std::max_element(sims.begin(), sims.end());
  std::vector<double> out(sims.size());
  double total = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    out[i] = std::exp(sims[i] - max_sim);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

inline std::vector<double> softmax_scores(const std::vector<double>& sims) {
  return softmax_scores(std::span<const double>(sims));
}

// Exact top-k under the canonical ordering via a size-k bounded heap.
// The heap keeps the current worst on top; equal scores evict the larger id
// first, so the result matches the prefix of a full sort. k > len returns all.
inline std::vector<ScoredId> top_k(std::span<const ScoredId> candidates, std::size_t k) {
  if (k == 0) return {};
  // worst-first ordering: true when a is "better" than b (kept deeper in heap)
  auto worst_on_top = [](const ScoredId& a, const ScoredId& b) {
    return score_order(a, b);
  };
  std::vector<ScoredId> heap;
  heap.reserve(std::min(k, candidates.size()) + 1);
  for (const ScoredId& c : candidates) {
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end(), worst_on_top);
    } else if (score_order(c, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), worst_on_top);
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end(), worst_on_top);
    }
  }
  std::sort(heap.begin(), heap.end(), score_order);
  return heap;
}

inline std::vector<ScoredId> top_k(const std::vector<ScoredId>& candidates, std::size_t k) {
  return top_k(std::span<const ScoredId>(candidates), k);
}

}  // namespace rve
