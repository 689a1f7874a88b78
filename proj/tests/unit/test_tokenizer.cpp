#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "longclip/tokenizer/token_stats.hpp"
#include "longclip/tokenizer/vocab.hpp"

using namespace longclip;
using namespace longclip::tokenizer;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("longclip_tok_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> random_corpus(std::mt19937_64& rng, std::size_t n) {
  static const std::vector<std::string> words = {"chest", "x-ray", "shows", "bilateral", "opacity", "CXR",
                                                 "H&E", "stain", "x40", "tumor", "cells", "(arrow)",
                                                 "scale", "bar:", "50", "µm", "Fig.", "2B", "—", "MRI"};
  std::uniform_int_distribution<std::size_t> len(0, 60), pick(0, words.size() - 1);
  std::vector<std::string> corpus;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    const std::size_t count = len(rng);
    for (std::size_t k = 0; k < count; ++k) {
      if (k) text += (k % 7 == 0) ? "  " : " ";
      text += words[pick(rng)];
    }
    corpus.push_back(text);
  }
  return corpus;
}

}  // namespace

TEST(Chunks, ConcatenationReproducesInput) {
  const std::string text = "  Fig. 2B: H&E stain,\tx40 \n scale bar = 50 µm.  ";
  std::string joined;
  for (auto c : split_chunks(text)) joined += c;
  EXPECT_EQ(joined, text);
  auto chunks = split_chunks("a bc");
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[1], " bc");
}

TEST(TrainBpe, SingleSymbolCorpusLearnsAaFirst) {
  std::vector<std::string> corpus{"aaaa"};
  auto v = train_bpe(corpus, 260, 0);
  ASSERT_GE(v.merges().size(), 1u);
  EXPECT_EQ(v.merges()[0].left, 'a');
  EXPECT_EQ(v.merges()[0].right, 'a');
  EXPECT_EQ(v.token(v.merges()[0].result), "aa");
  EXPECT_EQ(v.size(), 260u);
}

TEST(TrainBpe, RoundTripsCorpus) {
  std::mt19937_64 rng(1);
  auto corpus = random_corpus(rng, 200);
  auto v = train_bpe(corpus, 600, 3);
  for (const auto& t : corpus) {
    auto ids = v.tokenize(t);
    EXPECT_EQ(v.decode(ids), t);
  }
}

TEST(TrainBpe, SameInputsGiveByteIdenticalFiles) {
  std::mt19937_64 rng(2);
  auto corpus = random_corpus(rng, 100);
  auto a = temp_dir("det_a"), b = temp_dir("det_b");
  train_bpe(corpus, 500, 9).save(a);
  train_bpe(corpus, 500, 9).save(b);
  EXPECT_EQ(slurp(a / "merges.txt"), slurp(b / "merges.txt"));
  EXPECT_EQ(slurp(a / "tokens.tsv"), slurp(b / "tokens.tsv"));
}

TEST(TrainBpe, RejectsBadArguments) {
  std::vector<std::string> corpus{"abc"};
  EXPECT_THROW(train_bpe(corpus, 258, 0), UsageError);
  std::vector<std::string> empty;
  EXPECT_THROW(train_bpe(empty, 300, 0), UsageError);
}

TEST(TrainBpe, TokenTableIsBijective) {
  std::mt19937_64 rng(4);
  auto corpus = random_corpus(rng, 300);
  auto v = train_bpe(corpus, 800, 0);
  std::set<std::string> seen;
  for (std::size_t id = 0; id < v.size(); ++id) {
    EXPECT_TRUE(seen.insert(v.token(static_cast<TokenId>(id))).second) << "duplicate token at id " << id;
  }
}

TEST(TrainBpe, SaveLoadPreservesTokenization) {
  std::mt19937_64 rng(5);
  auto corpus = random_corpus(rng, 150);
  auto v = train_bpe(corpus, 700, 0);
  auto dir = temp_dir("saveload");
  v.save(dir);
  auto w = Vocab::load(dir);
  EXPECT_EQ(w.size(), v.size());
  for (const auto& t : corpus) EXPECT_EQ(w.tokenize(t), v.tokenize(t));
}

TEST(TrainBpe, LoadRejectsCorruptTable) {
  auto dir = temp_dir("corrupt");
  Vocab().save(dir);
  {
    std::ofstream out(dir / "tokens.tsv", std::ios::app);
    out << "259\tzz\n";
  }
  EXPECT_THROW(Vocab::load(dir), ParseError);
}

TEST(Encode, ShortTextIsNotTruncated) {
  Vocab bytes;
  auto seq = encode(bytes, "abcdefghij", 77);
  EXPECT_FALSE(seq.truncated);
  EXPECT_EQ(seq.full_length, 10u);
  EXPECT_EQ(seq.visible_length, 12u);
  EXPECT_EQ(seq.ids.size(), 77u);
  EXPECT_EQ(seq.ids[0], kBos);
  EXPECT_EQ(seq.ids[11], kEos);
  EXPECT_EQ(seq.ids[12], kPad);
}

TEST(Encode, LongTextKeepsFirstContextMinusTwo) {
  std::vector<std::string> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back("cat dog cat dog cat");
  auto v = train_bpe(corpus, 400, 0);
  std::string text = "cat";
  for (int i = 1; i < 200; ++i) text += (i % 2 ? " dog" : " cat");
  // Independent count: every chunk of the fixture is a single vocabulary token.
  std::size_t chunks = 0;
  for (auto c : split_chunks(text)) {
    ASSERT_TRUE(v.find(c).has_value()) << "chunk '" << c << "' is not one token";
    ++chunks;
  }
  ASSERT_EQ(chunks, 200u);

  auto seq = encode(v, text, 77);
  EXPECT_TRUE(seq.truncated);
  EXPECT_EQ(seq.full_length, 200u);
  EXPECT_EQ(seq.visible_length, 77u);
  EXPECT_EQ(seq.wasted(), 200u - 75u);
  EXPECT_EQ(seq.ids.back(), kEos);
}

TEST(Encode, EmptyTextIsBosEosPadding) {
  Vocab bytes;
  auto seq = encode(bytes, "", 5);
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{kBos, kEos, kPad, kPad, kPad}));
  EXPECT_EQ(seq.visible_length, 2u);
  EXPECT_FALSE(seq.truncated);
}

TEST(Encode, RejectsTinyContext) {
  Vocab bytes;
  EXPECT_THROW(encode(bytes, "abc", 2), UsageError);
}

TEST(Encode, LongContextCapacityRatio) {
  // 512-token windows against the 77-token convention.
  EXPECT_NEAR(512.0 / 77.0, 6.6, 0.05);
}

TEST(Encode, TruncationInvariantsOnRandomText) {
  std::mt19937_64 rng(7);
  auto corpus = random_corpus(rng, 300);
  auto v = train_bpe(corpus, 700, 0);
  std::uniform_int_distribution<std::size_t> ctx(3, 80);
  for (const auto& t : corpus) {
    const std::size_t L = ctx(rng);
    auto seq = encode(v, t, L);
    auto full = v.tokenize(t);
    EXPECT_LE(seq.visible_length, L);
    EXPECT_EQ(seq.truncated, seq.full_length > seq.visible_length - 2);
    EXPECT_EQ(seq.ids[seq.visible_length - 1], kEos);
    std::vector<TokenId> content(seq.ids.begin() + 1, seq.ids.begin() + static_cast<long>(seq.visible_length) - 1);
    ASSERT_LE(content.size(), full.size());
    EXPECT_TRUE(std::equal(content.begin(), content.end(), full.begin()));
    if (!seq.truncated) EXPECT_EQ(v.decode(content), t);
  }
}

TEST(TokenStats, ThreeCaptionFixture) {
  Vocab bytes;  // one token per byte
  std::vector<std::string> corpus{std::string(50, 'a'), std::string(100, 'b'), std::string(150, 'c')};
  auto r = corpus_token_stats(bytes, corpus, 77);
  EXPECT_EQ(r.wasted_tokens, 96u);
  EXPECT_EQ(r.total_tokens, 300u);
  EXPECT_EQ(r.waste_fraction, 0.32);
  EXPECT_EQ(r.min_length, 50u);
  EXPECT_EQ(r.max_length, 150u);
  EXPECT_EQ(r.median_length, 100.0);
  EXPECT_EQ(r.mean_length, 100.0);
}

TEST(TokenStats, NothingTruncatedMeansNoWaste) {
  Vocab bytes;
  std::vector<std::string> corpus{"short", "tiny"};
  EXPECT_EQ(corpus_token_stats(bytes, corpus, 77).waste_fraction, 0.0);
}

TEST(TokenStats, EmptyCorpusRejected) {
  Vocab bytes;
  std::vector<std::string> corpus;
  EXPECT_THROW(corpus_token_stats(bytes, corpus, 77), UsageError);
}

TEST(TokenStats, MatchesBruteForceRecount) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto corpus = random_corpus(rng, 1 + trial * 5);
    auto v = train_bpe(corpus, 500, 0);
    const std::size_t cutoff = 5 + static_cast<std::size_t>(trial) * 3;
    auto r = corpus_token_stats(v, corpus, cutoff);

    // Oracle: count non-special ids in generous windows and re-derive every field.
    std::size_t total = 0, wasted = 0;
    std::vector<std::size_t> lens;
    for (const auto& t : corpus) {
      auto wide = encode(v, t, 4096);
      std::size_t n = 0;
      for (auto id : wide.ids) n += Vocab::is_special(id) ? 0 : 1;
      auto narrow = encode(v, t, cutoff + 2);
      std::size_t kept = 0;
      for (auto id : narrow.ids) kept += Vocab::is_special(id) ? 0 : 1;
      total += n;
      wasted += n - kept;
      lens.push_back(n);
    }
    std::sort(lens.begin(), lens.end());
    const double median = lens.size() % 2 ? double(lens[lens.size() / 2])
                                          : (double(lens[lens.size() / 2 - 1]) + double(lens[lens.size() / 2])) / 2;
    EXPECT_EQ(r.total_tokens, total);
    EXPECT_EQ(r.wasted_tokens, wasted);
    EXPECT_EQ(r.waste_fraction, total ? double(wasted) / double(total) : 0.0);
    EXPECT_EQ(r.median_length, median);
    EXPECT_EQ(r.min_length, lens.front());
    EXPECT_EQ(r.max_length, lens.back());
    EXPECT_EQ(r.mean_length, double(total) / double(lens.size()));
  }
}

TEST(TokenStats, WasteIsNonIncreasingInCutoff) {
  std::mt19937_64 rng(9);
  auto corpus = random_corpus(rng, 80);
  auto v = train_bpe(corpus, 500, 0);
  double previous = 1.0;
  for (std::size_t cutoff = 0; cutoff < 120; cutoff += 3) {
    const double w = corpus_token_stats(v, corpus, cutoff).waste_fraction;
    EXPECT_LE(w, previous);
    previous = w;
  }
}

TEST(TokenStats, ReportFormats) {
  std::vector<std::size_t> lens{50, 100, 150};
  auto r = token_stats_from_lengths(lens, 77);
  std::ostringstream kv, csv;
  write_report(kv, r);
  write_csv_row(csv, r);
  EXPECT_NE(kv.str().find("waste_fraction = 0.32000000000000001\n"), std::string::npos);
  EXPECT_EQ(csv.str(), "77,3,300,96,0.32000000000000001,100,100,50,150\n");
}
