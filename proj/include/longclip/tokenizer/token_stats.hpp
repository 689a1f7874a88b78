#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "longclip/errors.hpp"
#include "longclip/tokenizer/vocab.hpp"

namespace longclip::tokenizer {

// Corpus-level truncation accounting at one cutoff.
//
// Lengths count content tokens only: BOS and EOS are not charged, and the cutoff
// is read as a content-token budget, so a caption of n tokens wastes max(0, n - cutoff).
struct TokenWasteReport {
  std::size_t cutoff = 0;
  std::size_t captions = 0;
  std::size_t total_tokens = 0;
  std::size_t wasted_tokens = 0;
  double waste_fraction = 0.0;
  double mean_length = 0.0;
  double median_length = 0.0;
  std::size_t min_length = 0;
  std::size_t max_length = 0;
};

inline TokenWasteReport token_stats_from_lengths(std::span<const std::size_t> lengths, std::size_t cutoff) {
  if (lengths.empty()) throw UsageError("token statistics need a nonempty corpus");
  TokenWasteReport r;
  r.cutoff = cutoff;
  r.captions = lengths.size();
  for (std::size_t n : lengths) {
    r.total_tokens += n;
    if (n > cutoff) r.wasted_tokens += n - cutoff;
  }
  r.waste_fraction =
      r.total_tokens ? static_cast<double>(r.wasted_tokens) / static_cast<double>(r.total_tokens) : 0.0;
  r.mean_length = static_cast<double>(r.total_tokens) / static_cast<double>(r.captions);

  std::vector<std::size_t> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_length = sorted.size() % 2 ? static_cast<double>(sorted[mid])
                                      : (static_cast<double>(sorted[mid - 1]) + static_cast<double>(sorted[mid])) / 2.0;
  r.min_length = sorted.front();
  r.max_length = sorted.back();
  return r;
}

// Content-token length of every caption under `vocab`.
inline std::vector<std::size_t> caption_lengths(const Vocab& vocab, std::span<const std::string> corpus) {
  std::vector<std::size_t> lengths;
  lengths.reserve(corpus.size());
  for (const auto& text : corpus) lengths.push_back(vocab.tokenize(text).size());
  return lengths;
}

inline TokenWasteReport corpus_token_stats(const Vocab& vocab, std::span<const std::string> corpus,
                                           std::size_t cutoff) {
  if (corpus.empty()) throw UsageError("corpus_token_stats: corpus is empty");
  const auto lengths = caption_lengths(vocab, corpus);
  return token_stats_from_lengths(lengths, cutoff);
}

namespace detail {
inline std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

// Flat `key = value` report.
inline void write_report(std::ostream& out, const TokenWasteReport& r) {
  out << "cutoff = " << r.cutoff << '\n'
      << "captions = " << r.captions << '\n'
      << "total_tokens = " << r.total_tokens << '\n'
      << "wasted_tokens = " << r.wasted_tokens << '\n'
      << "waste_fraction = " << detail::exact(r.waste_fraction) << '\n'
      << "mean_length = " << detail::exact(r.mean_length) << '\n'
      << "median_length = " << detail::exact(r.median_length) << '\n'
      << "min_length = " << r.min_length << '\n'
      << "max_length = " << r.max_length << '\n'
      << "length_unit = content tokens (BOS/EOS excluded)\n";
}

inline const char* csv_header() {
  return "cutoff,captions,total_tokens,wasted_tokens,waste_fraction,mean_length,median_length,min_length,max_length";
}

inline void write_csv_row(std::ostream& out, const TokenWasteReport& r) {
  out << r.cutoff << ',' << r.captions << ',' << r.total_tokens << ',' << r.wasted_tokens << ','
      << detail::exact(r.waste_fraction) << ',' << detail::exact(r.mean_length) << ','
      << detail::exact(r.median_length) << ',' << r.min_length << ',' << r.max_length << '\n';
}

}  // namespace longclip::tokenizer
