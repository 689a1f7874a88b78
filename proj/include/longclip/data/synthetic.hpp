#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "longclip/data/corpus.hpp"
#include "longclip/tokenizer/vocab.hpp"
#include "longclip/util/kv.hpp"
#include "longclip/util/seed.hpp"

namespace longclip::data {

// Captions are one word per content token. Positions count content tokens from 1, so a word
// at position p survives truncation to context L exactly when p <= L - 2.
struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 200;
  std::size_t image_dim = 64;
  std::size_t distractor_prefix_tokens = 100;
  std::size_t class_token_position = 110;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  std::size_t pool_size = 1000;
  // Optional second attribute: a detail word placed after the class word and a detail
  // direction added to the image. 0 disables it.
  std::size_t num_details = 0;
  std::size_t detail_token_position = 0;
  double detail_weight = 0.7;
  std::size_t trailing_tokens = 4;
  double max_prototype_cosine = 0.5;

  std::size_t last_marked_position() const {
    return std::max(class_token_position, num_details ? detail_token_position : std::size_t{0});
  }
  std::size_t caption_tokens() const { return last_marked_position() + trailing_tokens; }
  std::size_t size() const { return num_classes * samples_per_class; }

  void validate() const;
};

template <typename C, typename F>
void visit_fields(C& c, F&& f) {
  f("num_classes", c.num_classes);
  f("samples_per_class", c.samples_per_class);
  f("image_dim", c.image_dim);
  f("distractor_prefix_tokens", c.distractor_prefix_tokens);
  f("class_token_position", c.class_token_position);
  f("noise_std", c.noise_std);
  f("seed", c.seed);
  f("pool_size", c.pool_size);
  f("num_details", c.num_details);
  f("detail_token_position", c.detail_token_position);
  f("detail_weight", c.detail_weight);
  f("trailing_tokens", c.trailing_tokens);
  f("max_prototype_cosine", c.max_prototype_cosine);
}

namespace detail {

inline constexpr const char* kCommonConsonants = "bdfgklmnprstvz";
inline constexpr const char* kRareConsonants = "jqwxy";
inline constexpr const char* kVowels = "aeiou";

// All consonant-vowel-consonant-vowel words over the given consonants, in a fixed shuffled order.
inline std::vector<std::string> cvcv_words(std::string_view consonants, std::string_view stream) {
  std::vector<std::string> words;
  for (char c1 : consonants)
    for (char v1 : std::string_view(kVowels))
      for (char c2 : consonants)
        for (char v2 : std::string_view(kVowels)) words.push_back({c1, v1, c2, v2});
  std::mt19937_64 rng(util::stream_seed(0, stream));
  std::shuffle(words.begin(), words.end(), rng);
  return words;
}

}  // namespace detail

// Distractor pool drawn from common letters and marker words from rare ones, so the two never collide.
inline std::size_t max_pool_size() { return 14u * 5u * 14u * 5u; }
inline std::size_t max_marker_words() { return 5u * 5u * 5u * 5u; }

inline void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("synthetic spec: " + m); };
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (samples_per_class == 0) fail("samples_per_class must be positive");
  if (image_dim == 0) fail("image_dim must be positive");
  if (class_token_position <= distractor_prefix_tokens) fail("class_token_position must exceed distractor_prefix_tokens");
  if (pool_size == 0 || pool_size > max_pool_size())
    fail("pool_size must be in [1, " + std::to_string(max_pool_size()) + "]");
  if (num_classes + num_details > max_marker_words())
    fail("num_classes + num_details = " + std::to_string(num_classes + num_details) + " exceeds the " +
         std::to_string(max_marker_words()) + " available marker words");
  if (num_details == 1) fail("num_details must be 0 or at least 2");
  if (num_details && detail_token_position <= distractor_prefix_tokens)
    fail("detail_token_position must exceed distractor_prefix_tokens");
  if (num_details && detail_token_position == class_token_position)
    fail("detail_token_position must differ from class_token_position");
  if (!(noise_std >= 0) || !std::isfinite(noise_std)) fail("noise_std must be finite and nonnegative");
  if (!(detail_weight >= 0) || !std::isfinite(detail_weight)) fail("detail_weight must be finite and nonnegative");
  if (!(max_prototype_cosine > -1.0 && max_prototype_cosine <= 1.0)) fail("max_prototype_cosine must be in (-1, 1]");
}

struct SyntheticWords {
  std::vector<std::string> pool;
  std::vector<std::string> classes;
  std::vector<std::string> details;
};

inline SyntheticWords synthetic_words(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticWords w;
  auto common = detail::cvcv_words(detail::kCommonConsonants, "synthetic/pool");
  w.pool.assign(common.begin(), common.begin() + static_cast<std::ptrdiff_t>(spec.pool_size));
  auto rare = detail::cvcv_words(detail::kRareConsonants, "synthetic/markers");
  w.classes.assign(rare.begin(), rare.begin() + static_cast<std::ptrdiff_t>(spec.num_classes));
  w.details.assign(rare.begin() + static_cast<std::ptrdiff_t>(spec.num_classes),
                   rare.begin() + static_cast<std::ptrdiff_t>(spec.num_classes + spec.num_details));
  return w;
}

struct Prototypes {
  std::vector<std::vector<double>> classes;
  std::vector<std::vector<double>> details;
  std::size_t attempts = 0;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Random unit directions, redrawn as a set until every pair is below max_prototype_cosine.
inline Prototypes synthetic_prototypes(const SyntheticSpec& spec) {
  spec.validate();
  constexpr std::size_t kMaxAttempts = 1000;
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::mt19937_64 rng(util::stream_seed(spec.seed, "synthetic/prototypes/" + std::to_string(attempt)));
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> all(spec.num_classes + spec.num_details, std::vector<double>(spec.image_dim));
    for (auto& v : all) {
      double n2 = 0;
      for (auto& x : v) {
        x = normal(rng);
        n2 += x * x;
      }
      for (auto& x : v) x /= std::sqrt(n2);
    }
    bool ok = true;
    for (std::size_t i = 0; i < all.size() && ok; ++i)
      for (std::size_t j = i + 1; j < all.size() && ok; ++j) ok = cosine(all[i], all[j]) < spec.max_prototype_cosine;
    if (!ok) continue;
    Prototypes p;
    p.classes.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.num_classes));
    p.details.assign(all.begin() + static_cast<std::ptrdiff_t>(spec.num_classes), all.end());
    p.attempts = attempt + 1;
    return p;
  }
  throw UsageError("synthetic spec: no prototype set with pairwise cosine below " +
                   util::format_double(spec.max_prototype_cosine) + " in " + std::to_string(kMaxAttempts) +
                   " draws; raise image_dim or max_prototype_cosine");
}

struct SyntheticData {
  PairedCorpus corpus;
  std::vector<std::size_t> class_labels;
  std::vector<std::size_t> detail_labels;  // empty when the spec has no details
  SyntheticWords words;
};

namespace detail {

struct SampleFactory {
  const SyntheticSpec& spec;
  const SyntheticWords& words;
  const Prototypes& protos;

  // The caption starts with a space so every word, the first included, pre-tokenizes as " word".
  std::string caption(std::size_t cls, std::size_t det, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, words.pool.size() - 1);
    std::string out;
    for (std::size_t pos = 1; pos <= spec.caption_tokens(); ++pos) {
      out += ' ';
      if (pos == spec.class_token_position) {
        out += words.classes[cls];
      } else if (spec.num_details && pos == spec.detail_token_position) {
        out += words.details[det];
      } else {
        out += words.pool[pick(rng)];
      }
    }
    return out;
  }

  std::vector<double> image(std::size_t cls, std::size_t det, std::mt19937_64& rng) const {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> x = protos.classes[cls];
    if (spec.num_details)
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += spec.detail_weight * protos.details[det][i];
    for (auto& v : x) v += spec.noise_std * noise(rng);
    return x;
  }

  void add(SyntheticData& d, const std::string& id, std::size_t cls, std::size_t det, std::mt19937_64& rng) const {
    PairRecord r;
    r.id = id;
    r.caption = caption(cls, det, rng);
    r.image = image(cls, det, rng);
    r.context["class"] = std::to_string(cls);
    if (spec.num_details) r.context["detail"] = std::to_string(det);
    d.corpus.add(std::move(r));
    d.class_labels.push_back(cls);
    if (spec.num_details) d.detail_labels.push_back(det);
  }
};

inline std::string synthetic_id(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s-%06zu", prefix, i);
  return buf;
}

}  // namespace detail

// Classes are interleaved (sample i has class i % num_classes) and details cycle within each class.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData d;
  d.words = synthetic_words(spec);
  const Prototypes protos = synthetic_prototypes(spec);
  const detail::SampleFactory make{spec, d.words, protos};
  std::mt19937_64 rng(util::stream_seed(spec.seed, "synthetic/samples"));
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const std::size_t cls = i % spec.num_classes;
    const std::size_t det = spec.num_details ? (i / spec.num_classes) % spec.num_details : 0;
    make.add(d, detail::synthetic_id("syn", i), cls, det, rng);
  }
  return d;
}

// A fresh evaluation set from the same prototypes and words: one sample per (class, detail) cell,
// so every gallery item has a distinct label and retrieval has one right answer per query.
inline SyntheticData generate_synthetic_gallery(const SyntheticSpec& spec, std::size_t gallery_index) {
  spec.validate();
  SyntheticData d;
  d.words = synthetic_words(spec);
  const Prototypes protos = synthetic_prototypes(spec);
  const detail::SampleFactory make{spec, d.words, protos};
  std::mt19937_64 rng(util::stream_seed(spec.seed, "synthetic/gallery/" + std::to_string(gallery_index)));
  const std::size_t details = std::max<std::size_t>(spec.num_details, 1);
  std::size_t i = 0;
  for (std::size_t cls = 0; cls < spec.num_classes; ++cls)
    for (std::size_t det = 0; det < details; ++det, ++i)
      make.add(d, detail::synthetic_id(("gal" + std::to_string(gallery_index)).c_str(), i), cls, det, rng);
  return d;
}

// Every marker word must be one token sitting exactly at its nominal position.
inline void check_synthetic_tokens(const tokenizer::Vocab& vocab, const SyntheticSpec& spec, const SyntheticData& d) {
  auto single = [&](const std::string& w) {
    auto id = vocab.find(" " + w);
    if (!id) throw UsageError("synthetic marker word '" + w + "' is not a single token under this vocabulary");
    return *id;
  };
  std::vector<tokenizer::TokenId> class_ids, detail_ids;
  for (const auto& w : d.words.classes) class_ids.push_back(single(w));
  for (const auto& w : d.words.details) detail_ids.push_back(single(w));
  for (std::size_t i = 0; i < d.corpus.size(); ++i) {
    const auto ids = vocab.tokenize(d.corpus[i].caption);
    const auto& id = d.corpus[i].id;
    if (ids.size() != spec.caption_tokens())
      throw UsageError("synthetic caption '" + id + "' tokenizes to " + std::to_string(ids.size()) + " tokens, expected " +
                       std::to_string(spec.caption_tokens()));
    if (ids[spec.class_token_position - 1] != class_ids[d.class_labels[i]])
      throw UsageError("synthetic caption '" + id + "' has no class token at position " +
                       std::to_string(spec.class_token_position));
    if (spec.num_details && ids[spec.detail_token_position - 1] != detail_ids[d.detail_labels[i]])
      throw UsageError("synthetic caption '" + id + "' has no detail token at position " +
                       std::to_string(spec.detail_token_position));
  }
}

// Trains a vocabulary on the corpus captions and verifies the marker words against it.
inline tokenizer::Vocab synthetic_vocab(const SyntheticSpec& spec, const SyntheticData& d, std::size_t vocab_size = 8192) {
  const auto captions = d.corpus.captions();
  auto vocab = tokenizer::train_bpe(captions, vocab_size, spec.seed);
  check_synthetic_tokens(vocab, spec, d);
  return vocab;
}

}  // namespace longclip::data
