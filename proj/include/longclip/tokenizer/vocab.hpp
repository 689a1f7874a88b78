#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "longclip/errors.hpp"

namespace longclip::tokenizer {

using TokenId = std::int32_t;

inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kPad = 258;
inline constexpr std::size_t kNumSpecials = 3;
inline constexpr std::size_t kMinVocabSize = 256 + kNumSpecials;

namespace detail {

enum class CharClass { Space, Letter, Digit, Other };

inline CharClass classify(unsigned char c) {
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return CharClass::Space;
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return CharClass::Letter;
  if (c >= '0' && c <= '9') return CharClass::Digit;
  return CharClass::Other;
}

inline std::string to_hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

inline std::string from_hex(std::string_view hex, const std::string& where) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw ParseError(where, "invalid hex digit '" + std::string(1, c) + "'");
  };
  if (hex.size() % 2 != 0 || hex.empty()) throw ParseError(where, "hex token must have even, nonzero length");
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    out += static_cast<char>((nibble(hex[i]) << 4) | nibble(hex[i + 1]));
  }
  return out;
}

inline std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace detail

// Splits text into pre-token chunks: runs of letters, digits or punctuation, each
// optionally carrying one leading space, and the remaining whitespace runs.
// Concatenating the chunks reproduces the input exactly.
inline std::vector<std::string_view> split_chunks(std::string_view text) {
  using detail::CharClass;
  std::vector<std::string_view> chunks;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const std::size_t start = i;
    auto cls = detail::classify(static_cast<unsigned char>(text[i]));
    if (cls == CharClass::Space) {
      std::size_t j = i;
      while (j < n && detail::classify(static_cast<unsigned char>(text[j])) == CharClass::Space) ++j;
      // A single trailing ' ' before a word belongs to that word.
      if (j < n && text[j - 1] == ' ') {
        if (j - 1 > i) chunks.push_back(text.substr(i, j - 1 - i));
        i = j - 1;
        const auto word_cls = detail::classify(static_cast<unsigned char>(text[j]));
        std::size_t k = j;
        while (k < n && detail::classify(static_cast<unsigned char>(text[k])) == word_cls) ++k;
        chunks.push_back(text.substr(i, k - i));
        i = k;
      } else {
        chunks.push_back(text.substr(i, j - i));
        i = j;
      }
      continue;
    }
    while (i < n && detail::classify(static_cast<unsigned char>(text[i])) == cls) ++i;
    chunks.push_back(text.substr(start, i - start));
  }
  return chunks;
}

class Vocab;
inline Vocab train_bpe_impl(const std::vector<std::string_view>& texts, std::size_t vocab_size,
                            std::size_t min_pair_frequency);

// Byte-level BPE vocabulary. Ids 0-255 are raw bytes, 256-258 the BOS/EOS/PAD
// specials, and every later id the product of one merge rule.
class Vocab {
 public:
  struct Merge {
    TokenId left;
    TokenId right;
    TokenId result;
  };

  // Byte-only vocabulary with no merges.
  Vocab() {
    tokens_.reserve(kMinVocabSize);
    for (int b = 0; b < 256; ++b) add_token(std::string(1, static_cast<char>(b)));
    tokens_.push_back("<bos>");
    tokens_.push_back("<eos>");
    tokens_.push_back("<pad>");
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<Merge>& merges() const noexcept { return merges_; }

  static bool is_special(TokenId id) noexcept { return id == kBos || id == kEos || id == kPad; }

  // Raw bytes of a non-special token, or the special's display name.
  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw UsageError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::optional<TokenId> find(std::string_view bytes) const {
    auto it = token_to_id_.find(std::string(bytes));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  // Content token ids for `text` (no specials, no truncation).
  std::vector<TokenId> tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    std::vector<TokenId> symbols;
    for (std::string_view chunk : split_chunks(text)) {
      symbols.clear();
      for (unsigned char c : chunk) symbols.push_back(static_cast<TokenId>(c));
      apply_merges(symbols);
      out.insert(out.end(), symbols.begin(), symbols.end());
    }
    return out;
  }

  // Concatenated bytes of all non-special ids.
  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (!is_special(id)) out += token(id);
    }
    return out;
  }

  // Writes `merges.txt` (ordered rules, hex bytes) and `tokens.tsv` (id table) into `dir`.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream merges(dir / "merges.txt", std::ios::binary);
    std::ofstream table(dir / "tokens.tsv", std::ios::binary);
    if (!merges || !table) throw IoError("cannot write vocabulary into " + dir.string());
    merges << "#longclip-bpe-merges v1\n";
    for (const Merge& m : merges_) {
      merges << detail::to_hex(token(m.left)) << ' ' << detail::to_hex(token(m.right)) << '\n';
    }
    table << "#longclip-bpe-tokens v1\n";
    for (std::size_t id = 0; id < tokens_.size(); ++id) {
      table << id << '\t';
      if (is_special(static_cast<TokenId>(id))) {
        table << tokens_[id];
      } else {
        table << detail::to_hex(tokens_[id]);
      }
      table << '\n';
    }
  }

  static Vocab load(const std::filesystem::path& dir) {
    Vocab v;
    const auto table_path = dir / "tokens.tsv";
    std::ifstream table(table_path, std::ios::binary);
    if (!table) throw IoError("cannot read " + table_path.string());
    std::string line;
    std::size_t line_no = 0;
    std::getline(table, line);
    ++line_no;
    if (line != "#longclip-bpe-tokens v1") throw ParseError(table_path.string() + ":1", "unknown token table header");
    while (std::getline(table, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = table_path.string() + ":" + std::to_string(line_no);
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(where, "expected '<id>\\t<token>'");
      std::size_t id = 0;
      try {
        id = std::stoul(line.substr(0, tab));
      } catch (const std::exception&) {
        throw ParseError(where, "token id is not a number");
      }
      const std::string field = line.substr(tab + 1);
      if (id < kMinVocabSize) {
        const std::string expected = id < 256 ? detail::to_hex(v.tokens_[id]) : v.tokens_[id];
        if (field != expected) throw ParseError(where, "base token " + std::to_string(id) + " does not match");
        continue;
      }
      if (id != v.tokens_.size()) throw ParseError(where, "token ids must be dense and ascending");
      v.add_token(detail::from_hex(field, where));
    }

    const auto merges_path = dir / "merges.txt";
    std::ifstream merges(merges_path, std::ios::binary);
    if (!merges) throw IoError("cannot read " + merges_path.string());
    line_no = 0;
    std::getline(merges, line);
    ++line_no;
    if (line != "#longclip-bpe-merges v1") throw ParseError(merges_path.string() + ":1", "unknown merges header");
    while (std::getline(merges, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = merges_path.string() + ":" + std::to_string(line_no);
      const auto space = line.find(' ');
      if (space == std::string::npos) throw ParseError(where, "expected '<left> <right>'");
      const std::string left = detail::from_hex(line.substr(0, space), where);
      const std::string right = detail::from_hex(line.substr(space + 1), where);
      auto l = v.find(left), r = v.find(right), res = v.find(left + right);
      if (!l || !r || !res) throw ParseError(where, "merge refers to tokens missing from the table");
      v.add_merge(*l, *r, *res);
    }
    return v;
  }

 private:
  friend Vocab train_bpe_impl(const std::vector<std::string_view>&, std::size_t, std::size_t);

  TokenId add_token(std::string bytes) {
    const auto id = static_cast<TokenId>(tokens_.size());
    token_to_id_.emplace(bytes, id);
    tokens_.push_back(std::move(bytes));
    return id;
  }

  void add_merge(TokenId left, TokenId right, TokenId result) {
    merge_rank_.emplace(detail::pair_key(left, right), std::make_pair(merges_.size(), result));
    merges_.push_back({left, right, result});
  }

  // Repeatedly merges the adjacent pair with the lowest rule rank.
  void apply_merges(std::vector<TokenId>& symbols) const {
    while (symbols.size() > 1) {
      std::size_t best_rank = merges_.size();
      TokenId best_left = 0, best_right = 0, best_result = 0;
      for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
        auto it = merge_rank_.find(detail::pair_key(symbols[k], symbols[k + 1]));
        if (it != merge_rank_.end() && it->second.first < best_rank) {
          best_rank = it->second.first;
          best_left = symbols[k];
          best_right = symbols[k + 1];
          best_result = it->second.second;
        }
      }
      if (best_rank == merges_.size()) return;
      std::size_t w = 0;
      for (std::size_t k = 0; k < symbols.size(); ++k) {
        if (k + 1 < symbols.size() && symbols[k] == best_left && symbols[k + 1] == best_right) {
          symbols[w++] = best_result;
          ++k;
        } else {
          symbols[w++] = symbols[k];
        }
      }
      symbols.resize(w);
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, std::pair<std::size_t, TokenId>> merge_rank_;
};

struct BpeOptions {
  // Pairs seen fewer times than this are never merged.
  std::size_t min_pair_frequency = 2;
  // When nonzero and the corpus is larger, train on a seeded sample of this many texts.
  std::size_t max_training_texts = 0;
};

inline Vocab train_bpe_impl(const std::vector<std::string_view>& texts, std::size_t vocab_size,
                            std::size_t min_pair_frequency) {
  Vocab vocab;
  std::map<std::string_view, std::size_t> chunk_counts;  // ordered: deterministic word order
  for (std::string_view text : texts) {
    for (std::string_view chunk : split_chunks(text)) ++chunk_counts[chunk];
  }
  std::vector<std::vector<TokenId>> words;
  std::vector<std::size_t> freq;
  for (const auto& [chunk, count] : chunk_counts) {
    std::vector<TokenId> symbols;
    for (unsigned char c : chunk) symbols.push_back(static_cast<TokenId>(c));
    if (symbols.size() < 2) continue;
    words.push_back(std::move(symbols));
    freq.push_back(count);
  }

  std::unordered_map<std::uint64_t, std::size_t> pair_counts;
  while (vocab.size() < vocab_size) {
    pair_counts.clear();
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& s = words[w];
      for (std::size_t k = 0; k + 1 < s.size(); ++k) pair_counts[detail::pair_key(s[k], s[k + 1])] += freq[w];
    }
    // Highest count wins; ties go to the lexicographically smallest (left, right) byte strings.
    bool found = false;
    std::size_t best_count = 0;
    TokenId best_left = 0, best_right = 0;
    for (const auto& [key, count] : pair_counts) {
      if (count < min_pair_frequency) continue;
      const auto left = static_cast<TokenId>(key >> 32);
      const auto right = static_cast<TokenId>(key & 0xffffffffu);
      bool better = !found || count > best_count;
      if (found && count == best_count) {
        const auto& lb = vocab.tokens_[left];
        const auto& bb = vocab.tokens_[best_left];
        better = lb < bb || (lb == bb && vocab.tokens_[right] < vocab.tokens_[best_right]);
      }
      if (better) {
        found = true;
        best_count = count;
        best_left = left;
        best_right = right;
      }
    }
    if (!found) break;

    const std::string merged = vocab.tokens_[best_left] + vocab.tokens_[best_right];
    auto existing = vocab.find(merged);
    const TokenId result = existing ? *existing : vocab.add_token(merged);
    vocab.add_merge(best_left, best_right, result);

    for (auto& s : words) {
      std::size_t w = 0;
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (k + 1 < s.size() && s[k] == best_left && s[k + 1] == best_right) {
          s[w++] = result;
          ++k;
        } else {
          s[w++] = s[k];
        }
      }
      s.resize(w);
    }
  }
  return vocab;
}

// Learns merge rules until the vocabulary reaches `vocab_size` or no pair repeats.
// Deterministic for a given corpus, size and seed.
inline Vocab train_bpe(std::span<const std::string> corpus, std::size_t vocab_size, std::uint64_t seed,
                       const BpeOptions& options = {}) {
  if (corpus.empty()) throw UsageError("train_bpe: corpus is empty");
  if (vocab_size < kMinVocabSize) {
    throw UsageError("train_bpe: vocab_size " + std::to_string(vocab_size) + " is below the minimum " +
                     std::to_string(kMinVocabSize) + " (256 bytes + 3 specials)");
  }
  std::vector<std::string_view> texts(corpus.begin(), corpus.end());
  if (options.max_training_texts && texts.size() > options.max_training_texts) {
    std::vector<std::string_view> sample;
    std::mt19937_64 rng(seed);
    std::sample(texts.begin(), texts.end(), std::back_inserter(sample), options.max_training_texts, rng);
    texts = std::move(sample);
  }
  return train_bpe_impl(texts, vocab_size, options.min_pair_frequency);
}

// Token ids of one caption in a fixed-size context window.
struct TokenSeq {
  std::vector<TokenId> ids;        // BOS, visible content, EOS, then PAD up to the context length
  std::size_t full_length = 0;     // content tokens before truncation
  std::size_t visible_length = 0;  // BOS + kept content + EOS
  bool truncated = false;

  std::size_t context_length() const noexcept { return ids.size(); }
  std::size_t visible_content() const noexcept { return visible_length - 2; }
  std::size_t wasted() const noexcept { return full_length - visible_content(); }
  std::span<const TokenId> visible() const noexcept { return {ids.data(), visible_length}; }
};

// Keeps the first context_length - 2 content tokens between BOS and EOS and pads the rest.
inline TokenSeq encode(const Vocab& vocab, std::string_view text, std::size_t context_length) {
  if (context_length < 3) {
    throw UsageError("encode: context_length must be at least 3, got " + std::to_string(context_length));
  }
  const auto content = vocab.tokenize(text);
  const std::size_t keep = std::min(content.size(), context_length - 2);
  TokenSeq seq;
  seq.full_length = content.size();
  seq.visible_length = keep + 2;
  seq.truncated = content.size() > keep;
  seq.ids.reserve(context_length);
  seq.ids.push_back(kBos);
  seq.ids.insert(seq.ids.end(), content.begin(), content.begin() + static_cast<std::ptrdiff_t>(keep));
  seq.ids.push_back(kEos);
  seq.ids.resize(context_length, kPad);
  return seq;
}

}  // namespace longclip::tokenizer
