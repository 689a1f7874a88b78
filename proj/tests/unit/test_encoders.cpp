#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "longclip/encoders/checkpoint.hpp"
#include "longclip/encoders/model.hpp"

using namespace longclip;
using namespace longclip::encoders;
using longclip::tokenizer::TokenSeq;
namespace fs = std::filesystem;

namespace {

TextEncoderConfig tiny_text(std::size_t context = 12) {
  TextEncoderConfig c;
  c.context_length = context;
  c.vocab_size = 300;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.output_dim = 4;
  c.mlp_ratio = 2;
  return c;
}

ImageEncoderConfig tiny_image() {
  ImageEncoderConfig c;
  c.input_dim = 6;
  c.hidden_dim = 5;
  c.num_layers = 2;
  c.output_dim = 4;
  return c;
}

TokenSeq make_seq(const std::vector<tokenizer::TokenId>& content, std::size_t context) {
  TokenSeq s;
  s.ids.push_back(tokenizer::kBos);
  s.ids.insert(s.ids.end(), content.begin(), content.end());
  s.ids.push_back(tokenizer::kEos);
  s.visible_length = s.ids.size();
  s.full_length = content.size();
  s.ids.resize(context, tokenizer::kPad);
  return s;
}

std::vector<TokenSeq> random_seqs(std::mt19937_64& rng, std::size_t n, std::size_t context) {
  std::uniform_int_distribution<int> tok(0, 255);
  std::uniform_int_distribution<std::size_t> len(0, context - 2);
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<tokenizer::TokenId> content(len(rng));
    for (auto& t : content) t = tok(rng);
    out.push_back(make_seq(content, context));
  }
  return out;
}

std::vector<std::vector<double>> random_features(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> d;
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& v : out)
    for (auto& x : v) x = d(rng);
  return out;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5}); }

double max_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Scalar probe <z, W> so a full Jacobian check reduces to one backward pass.
numerics::NodeId probe(numerics::Graph& g, numerics::NodeId z) {
  auto w = g.input("probe", g.shape(z));
  return g.sum(g.mul(z, w));
}

}  // namespace

TEST(InitParams, SameSeedIsBitIdentical) {
  auto a = init_params(tiny_text(), tiny_image(), 7);
  auto b = init_params(tiny_text(), tiny_image(), 7);
  EXPECT_EQ(a, b);
  auto c = init_params(tiny_text(), tiny_image(), 8);
  EXPECT_NE(a.at("text.projection"), c.at("text.projection"));
}

TEST(InitParams, PositionalTableHasContextLengthRows) {
  TextEncoderConfig cfg;
  cfg.context_length = 512;
  auto p = init_params(cfg, ImageEncoderConfig{}, 0);
  EXPECT_EQ(p.at("text.position_embedding").shape(), (Shape{512, cfg.embed_dim}));
}

TEST(InitParams, WeightVarianceMatchesInitScale) {
  for (std::uint64_t seed : {1u, 2u}) {
    auto p = init_params(TextEncoderConfig{}, ImageEncoderConfig{}, seed);
    for (const char* name : {"text.block0.attn.q.weight", "text.block1.mlp.fc1.weight", "text.token_embedding",
                             "image.fc0.weight"}) {
      const auto& w = p.at(name);
      double sum = 0, sq = 0;
      for (double v : w.data()) sum += v;
      const double mean = sum / double(w.size());
      for (double v : w.data()) sq += (v - mean) * (v - mean);
      const double var = sq / double(w.size() - 1);
      EXPECT_NEAR(var / (0.02 * 0.02), 1.0, 0.2) << name << " seed " << seed;
    }
  }
}

TEST(InitParams, BiasesZeroGainsOne) {
  auto p = init_params(tiny_text(), tiny_image(), 3);
  for (double v : p.at("text.block0.attn.q.bias").data()) EXPECT_EQ(v, 0.0);
  for (double v : p.at("text.ln_final.gain").data()) EXPECT_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(p.at(kLogScale)[0], std::log(1.0 / 0.07));
}

TEST(InitParams, ContextLengthChangesOnlyPositionalTable) {
  auto short_p = init_params(tiny_text(77), tiny_image(), 5);
  auto long_p = init_params(tiny_text(512), tiny_image(), 5);
  ASSERT_EQ(short_p.size(), long_p.size());
  for (const auto& [name, a] : short_p) {
    if (name == "text.position_embedding") {
      EXPECT_NE(a.shape(), long_p.at(name).shape());
    } else {
      EXPECT_EQ(a, long_p.at(name)) << name;
    }
  }
}

TEST(InitParams, RejectsInvalidConfigs) {
  auto text = tiny_text();
  text.num_heads = 3;
  EXPECT_THROW(init_params(text, tiny_image(), 0), UsageError);
  auto image = tiny_image();
  image.output_dim = 5;
  EXPECT_THROW(init_params(tiny_text(), image, 0), UsageError);
  text = tiny_text();
  text.context_length = 2;
  EXPECT_THROW(init_params(text, tiny_image(), 0), UsageError);
}

TEST(TextEncode, OutputsAreUnitNorm) {
  std::mt19937_64 rng(1);
  auto model = make_model(tiny_text(), tiny_image(), 1);
  auto seqs = random_seqs(rng, 40, 12);
  auto z = text_encode(model, std::span<const TokenSeq>(seqs));
  ASSERT_EQ(z.size(), seqs.size());
  for (const auto& e : z) EXPECT_NEAR(e.norm(), 1.0, 1e-6);
}

TEST(TextEncode, IdenticalSequencesGiveIdenticalEmbeddings) {
  auto model = make_model(tiny_text(), tiny_image(), 2);
  auto s = make_seq({10, 20, 30}, 12);
  std::vector<TokenSeq> batch{s, make_seq({1, 2, 3, 4, 5, 6, 7}, 12), s};
  auto z = text_encode(model, std::span<const TokenSeq>(batch));
  EXPECT_LT(max_distance(z[0], z[2]), 1e-12);
}

TEST(TextEncode, ExtraPaddingLeavesEmbeddingUnchanged) {
  auto model = make_model(tiny_text(40), tiny_image(), 3);
  std::vector<TokenSeq> a{make_seq({5, 6, 7, 8}, 10)};
  std::vector<TokenSeq> b{make_seq({5, 6, 7, 8}, 40)};
  auto za = text_encode(model, std::span<const TokenSeq>(a));
  auto zb = text_encode(model, std::span<const TokenSeq>(b));
  EXPECT_LT(max_distance(za[0], zb[0]), 1e-6);
}

TEST(TextEncode, DependsOnlyOnVisibleTokens) {
  auto model = make_model(tiny_text(), tiny_image(), 4);
  auto clean = make_seq({40, 41, 42}, 12);
  auto dirty = clean;
  for (std::size_t t = clean.visible_length; t < dirty.ids.size(); ++t) dirty.ids[t] = 99;
  std::vector<TokenSeq> alone{clean};
  std::vector<TokenSeq> with_long{dirty, make_seq({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 12)};
  auto z1 = text_encode(model, std::span<const TokenSeq>(alone));
  auto z2 = text_encode(model, std::span<const TokenSeq>(with_long));
  EXPECT_LT(max_distance(z1[0], z2[0]), 1e-6);
}

TEST(TextEncode, DifferentContentGivesDifferentEmbeddings) {
  auto model = make_model(tiny_text(), tiny_image(), 5);
  std::vector<TokenSeq> batch{make_seq({1, 2, 3}, 12), make_seq({1, 2, 4}, 12)};
  auto z = text_encode(model, std::span<const TokenSeq>(batch));
  EXPECT_GT(max_distance(z[0], z[1]), 1e-9);
}

TEST(TextEncode, RejectsOverlongSequence) {
  auto model = make_model(tiny_text(12), tiny_image(), 6);
  std::vector<TokenSeq> batch{make_seq(std::vector<tokenizer::TokenId>(15, 65), 17)};
  EXPECT_THROW(text_encode(model, std::span<const TokenSeq>(batch)), UsageError);
}

TEST(TextEncode, RejectsIdOutsideVocabulary) {
  auto model = make_model(tiny_text(12), tiny_image(), 6);
  std::vector<TokenSeq> batch{make_seq({299, 300}, 12)};
  EXPECT_THROW(text_encode(model, std::span<const TokenSeq>(batch)), UsageError);
}

TEST(TextEncode, EncodesRawStrings) {
  TextEncoderConfig cfg = tiny_text(8);
  auto model = make_model(cfg, tiny_image(), 6);
  tokenizer::Vocab bytes;
  std::vector<std::string> texts{"a much longer caption than eight", "short"};
  auto z = text_encode(model, bytes, std::span<const std::string>(texts));
  ASSERT_EQ(z.size(), 2u);
  for (const auto& e : z) EXPECT_NEAR(e.norm(), 1.0, 1e-6);
}

TEST(ImageEncode, UnitNormAndPure) {
  std::mt19937_64 rng(7);
  auto model = make_model(tiny_text(), tiny_image(), 7);
  auto x = random_features(rng, 30, 6);
  x.push_back(x[3]);
  auto z = image_encode(model, std::span<const std::vector<double>>(x));
  for (const auto& e : z) EXPECT_NEAR(e.norm(), 1.0, 1e-6);
  EXPECT_EQ(z[3], z.back());
}

TEST(ImageEncode, RejectsWrongDimension) {
  auto model = make_model(tiny_text(), tiny_image(), 7);
  std::vector<std::vector<double>> x{std::vector<double>(5, 1.0)};
  EXPECT_THROW(image_encode(model, std::span<const std::vector<double>>(x)), UsageError);
}

TEST(ImageEncode, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto model = make_model(tiny_text(), tiny_image(), 8);
  numerics::Graph g;
  auto z = build_image_tower(g, model.image, 3);
  auto out = probe(g, z);
  auto bindings = model.params;
  auto x = random_features(rng, 3, 6);
  bind_image_batch(bindings, std::span<const std::vector<double>>(x), 6);
  numerics::DenseArray<double> w({3, 4});
  std::normal_distribution<double> d;
  for (auto& v : w.data()) v = d(rng);
  bindings.emplace("probe", w);

  numerics::Tape<double> tape(g);
  tape.evaluate(bindings);
  auto grads = tape.backward(out);
  for (const auto& [name, grad] : grads) {
    if (name == "probe") continue;
    auto fd = numerics::finite_difference_grad(g, bindings, out, name, 1e-5);
    for (std::size_t k = 0; k < grad.size(); ++k) EXPECT_LT(rel_err(grad[k], fd[k]), 1e-4) << name << "[" << k << "]";
  }
  EXPECT_TRUE(grads.count(kImageFeatures));
}

TEST(TextTower, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto cfg = tiny_text(7);
  auto model = make_model(cfg, tiny_image(), 9);
  // Larger weights than the init scale so the check is not dominated by near-zero gradients.
  std::normal_distribution<double> d(0.0, 0.3);
  for (auto& [name, a] : model.params) {
    if (name.ends_with(".weight") || name.ends_with("embedding") || name == "text.projection") {
      for (auto& v : a.data()) v = d(rng);
    }
  }
  std::vector<TokenSeq> batch{make_seq({3, 4, 5, 6, 7}, 7), make_seq({8, 9}, 7)};
  const std::size_t seq_len = batch_seq_len(std::span<const TokenSeq>(batch), cfg);
  numerics::Graph g;
  auto z = build_text_tower(g, cfg, batch.size(), seq_len);
  auto out = probe(g, z);
  auto bindings = model.params;
  bind_text_batch(bindings, std::span<const TokenSeq>(batch), seq_len);
  numerics::DenseArray<double> w({2, 4});
  for (auto& v : w.data()) v = d(rng);
  bindings.emplace("probe", w);

  numerics::Tape<double> tape(g);
  tape.evaluate(bindings);
  auto grads = tape.backward(out);
  std::size_t checked = 0;
  for (const auto& [name, grad] : grads) {
    if (name == "probe" || name == "text.token_embedding") continue;
    auto fd = numerics::finite_difference_grad(g, bindings, out, name, 1e-5);
    for (std::size_t k = 0; k < grad.size(); ++k) EXPECT_LT(rel_err(grad[k], fd[k]), 1e-4) << name << "[" << k << "]";
    ++checked;
  }
  EXPECT_GT(checked, 20u);

  // Token table: check only the rows the batch touches plus one untouched row.
  const auto& tg = grads.at("text.token_embedding");
  auto fd_rows = [&](std::size_t row) {
    auto probe_bindings = bindings;
    auto& table = probe_bindings.at("text.token_embedding");
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) {
      const double orig = table(row, c);
      table(row, c) = orig + 1e-5;
      tape.evaluate(probe_bindings);
      const double plus = tape.value(out)[0];
      table(row, c) = orig - 1e-5;
      tape.evaluate(probe_bindings);
      const double minus = tape.value(out)[0];
      table(row, c) = orig;
      EXPECT_LT(rel_err(tg(row, c), (plus - minus) / 2e-5), 1e-4) << "token row " << row;
    }
  };
  for (std::size_t row : {3u, 8u, 256u, 257u, 100u}) fd_rows(row);
  for (std::size_t c = 0; c < cfg.embed_dim; ++c) EXPECT_EQ(tg(100, c), 0.0);
}

TEST(TextTower, RejectsSequenceBeyondContext) {
  numerics::Graph g;
  auto cfg = tiny_text(12);
  EXPECT_THROW(build_text_tower(g, cfg, 2, 13), UsageError);
}

TEST(Checkpoint, RoundTripsBothPrecisions) {
  auto dir = fs::temp_directory_path() / "longclip_ckpt";
  fs::remove_all(dir);
  Checkpoint<double> ckpt{make_model(tiny_text(), tiny_image(), 11), 42};
  ckpt.model.params.at(kLogScale)[0] = 3.25;
  save_checkpoint(dir / "model.ckpt", ckpt);
  auto back = load_checkpoint<double>(dir / "model.ckpt");
  EXPECT_EQ(back.step, 42u);
  EXPECT_EQ(back.model.text, ckpt.model.text);
  EXPECT_EQ(back.model.image, ckpt.model.image);
  EXPECT_EQ(back.model.params, ckpt.model.params);
  EXPECT_EQ(back.model.log_scale(), 3.25);

  Checkpoint<float> single{make_model<float>(tiny_text(), tiny_image(), 11), 1};
  save_checkpoint(dir / "single.ckpt", single);
  auto widened = load_checkpoint<double>(dir / "single.ckpt");
  EXPECT_EQ(widened.model.params.at("text.projection").cast<float>(), single.model.params.at("text.projection"));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  auto dir = fs::temp_directory_path() / "longclip_ckpt_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream(dir / "junk.ckpt") << "hello\n";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), ParseError);
  Checkpoint<double> ckpt{make_model(tiny_text(), tiny_image(), 12), 0};
  save_checkpoint(dir / "ok.ckpt", ckpt);
  fs::resize_file(dir / "ok.ckpt", fs::file_size(dir / "ok.ckpt") - 8);
  EXPECT_THROW(load_checkpoint(dir / "ok.ckpt"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}
