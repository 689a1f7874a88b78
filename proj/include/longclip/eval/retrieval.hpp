#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "longclip/embedding.hpp"
#include "longclip/errors.hpp"

namespace longclip::eval {

enum class Direction { text_to_image, image_to_text };

inline const char* direction_name(Direction d) { return d == Direction::text_to_image ? "t2i" : "i2t"; }

inline const std::vector<std::size_t>& table_ks() {
  static const std::vector<std::size_t> ks{1, 5, 10};
  return ks;
}
inline const std::vector<std::size_t>& extended_ks() {
  static const std::vector<std::size_t> ks{1, 5, 10, 100};
  return ks;
}

struct RetrievalResult {
  Direction direction = Direction::text_to_image;
  std::map<std::size_t, double> recalls;  // keyed by the requested K
  std::vector<std::size_t> ranks;         // 1-based rank of each query's ground truth
  std::vector<std::size_t> capped_ks;     // requested Ks larger than the gallery

  bool k_capped() const noexcept { return !capped_ks.empty(); }
};

// 1 + items scoring strictly higher + equal-scoring items with a lower gallery index.
inline std::size_t rank_of(std::span<const double> scores, std::size_t gt) {
  const double s = scores[gt];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) rank += (scores[j] > s) || (scores[j] == s && j < gt);
  return rank;
}

inline RetrievalResult retrieve(std::span<const EmbeddingVector> queries, std::span<const EmbeddingVector> gallery,
                                std::span<const std::size_t> ground_truth, std::span<const std::size_t> ks,
                                Direction direction = Direction::text_to_image, std::size_t block_size = 256) {
  if (queries.size() != ground_truth.size())
    throw UsageError("retrieve: " + std::to_string(queries.size()) + " queries but " +
                     std::to_string(ground_truth.size()) + " ground-truth indices");
  if (gallery.empty()) throw UsageError("retrieve: gallery is empty");
  if (ks.empty()) throw UsageError("retrieve: no K values requested");
  if (block_size == 0) throw UsageError("retrieve: block_size must be positive");
  const std::size_t dim = gallery.front().size();
  for (const auto& g : gallery)
    if (g.size() != dim) throw UsageError("retrieve: gallery embeddings differ in dimension");
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (queries[q].size() != dim) throw UsageError("retrieve: query and gallery dimensions differ");
    if (ground_truth[q] >= gallery.size())
      throw UsageError("retrieve: ground truth " + std::to_string(ground_truth[q]) + " of query " + std::to_string(q) +
                       " is outside the gallery");
  }

  RetrievalResult r;
  r.direction = direction;
  r.ranks.resize(queries.size());
  // One block of the query x gallery similarity matrix at a time bounds memory for large N.
  std::vector<double> sims(std::min(block_size, queries.size()) * gallery.size());
  for (std::size_t q0 = 0; q0 < queries.size(); q0 += block_size) {
    const std::size_t q1 = std::min(queries.size(), q0 + block_size);
    for (std::size_t q = q0; q < q1; ++q)
      for (std::size_t j = 0; j < gallery.size(); ++j) sims[(q - q0) * gallery.size() + j] = dot(queries[q], gallery[j]);
    for (std::size_t q = q0; q < q1; ++q)
      r.ranks[q] = rank_of(std::span<const double>(sims.data() + (q - q0) * gallery.size(), gallery.size()),
                           ground_truth[q]);
  }
  for (std::size_t k : ks) {
    if (k == 0) throw UsageError("retrieve: K must be positive");
    if (k > gallery.size()) r.capped_ks.push_back(k);
    const std::size_t eff = std::min(k, gallery.size());
    std::size_t hits = 0;
    for (std::size_t rank : r.ranks) hits += rank <= eff;
    r.recalls[k] = queries.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(queries.size());
  }
  return r;
}

struct RetrievalPair {
  RetrievalResult t2i;
  RetrievalResult i2t;
};

// Item i of each list is the ground truth for item i of the other.
inline RetrievalPair recall_pair(std::span<const EmbeddingVector> image_embs, std::span<const EmbeddingVector> text_embs,
                                 std::span<const std::size_t> ks, std::size_t block_size = 256) {
  if (image_embs.size() != text_embs.size())
    throw UsageError("recall_pair: " + std::to_string(image_embs.size()) + " images but " +
                     std::to_string(text_embs.size()) + " texts");
  std::vector<std::size_t> identity(image_embs.size());
  for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = i;
  return {retrieve(text_embs, image_embs, identity, ks, Direction::text_to_image, block_size),
          retrieve(image_embs, text_embs, identity, ks, Direction::image_to_text, block_size)};
}

inline void write_retrieval_csv_header(std::ostream& out) { out << "benchmark,direction,K,recall\n"; }

inline void write_retrieval_csv(std::ostream& out, const std::string& benchmark, const RetrievalResult& r) {
  char buf[64];
  for (const auto& [k, v] : r.recalls) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << benchmark << ',' << direction_name(r.direction) << ',' << k << ',' << buf << '\n';
  }
}

// Flat text: one "direction R@K = percent" line per entry, then any cap warnings.
inline void write_retrieval_summary(std::ostream& out, const std::string& benchmark, const RetrievalPair& p) {
  char buf[96];
  out << benchmark << " (" << p.t2i.ranks.size() << " pairs)\n";
  for (const auto* r : {&p.t2i, &p.i2t}) {
    for (const auto& [k, v] : r->recalls) {
      std::snprintf(buf, sizeof buf, "  %s R@%zu = %.2f\n", direction_name(r->direction), k, 100.0 * v);
      out << buf;
    }
    for (std::size_t k : r->capped_ks)
      out << "  warning: " << direction_name(r->direction) << " K=" << k << " exceeds the gallery size; capped\n";
  }
}

}  // namespace longclip::eval
