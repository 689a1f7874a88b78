#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "longclip/trainer/train.hpp"

using namespace longclip;
using namespace longclip::trainer;
using longclip::tokenizer::TokenSeq;
namespace fs = std::filesystem;

namespace {

std::vector<EmbeddingVector> random_unit(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g;
  std::vector<EmbeddingVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng);
    out.push_back(EmbeddingVector::normalized(v));
  }
  return out;
}

// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
std::vector<std::vector<double>> random_rotation(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> q;
  while (q.size() < d) {
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng);
    for (const auto& u : q) {
      double p = 0;
      for (std::size_t k = 0; k < d; ++k) p += u[k] * v[k];
      for (std::size_t k = 0; k < d; ++k) v[k] -= p * u[k];
    }
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    q.push_back(v);
  }
  return q;
}

std::vector<EmbeddingVector> rotate(const std::vector<EmbeddingVector>& z, const std::vector<std::vector<double>>& r) {
  std::vector<EmbeddingVector> out;
  for (const auto& e : z) {
    std::vector<double> v(e.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t k = 0; k < v.size(); ++k) v[i] += r[i][k] * e[k];
    out.push_back(EmbeddingVector::normalized(v));
  }
  return out;
}

EmbeddingVector unit(std::vector<double> v) { return EmbeddingVector::normalized(std::move(v)); }

encoders::TextEncoderConfig tiny_text(std::size_t context) {
  encoders::TextEncoderConfig c;
  c.context_length = context;
  c.vocab_size = 300;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.output_dim = 4;
  c.mlp_ratio = 2;
  return c;
}

encoders::ImageEncoderConfig tiny_image() {
  encoders::ImageEncoderConfig c;
  c.input_dim = 6;
  c.hidden_dim = 5;
  c.num_layers = 1;
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

// Four classes; the caption names its class with one token, the image is a noisy class prototype.
TrainingSet toy_set(std::size_t per_class, std::size_t context, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> filler(97, 122);
  std::vector<std::vector<double>> protos(4, std::vector<double>(6));
  for (auto& p : protos)
    for (auto& x : p) x = g(rng);
  TrainingSet set;
  for (std::size_t i = 0; i < 4 * per_class; ++i) {
    const std::size_t c = i % 4;
    std::vector<tokenizer::TokenId> content{filler(rng), static_cast<tokenizer::TokenId>(260 + c), filler(rng)};
    set.texts.push_back(make_seq(content, context));
    auto img = protos[c];
    for (auto& x : img) x += 0.1 * g(rng);
    set.images.push_back(img);
  }
  return set;
}

TrainConfig toy_config(std::size_t context) {
  TrainConfig cfg;
  cfg.context_length = context;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 6;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(ContrastiveLoss, PerfectAlignmentAtHighScale) {
  std::vector<EmbeddingVector> z{unit({1, 0}), unit({0, 1})};
  auto r = contrastive_loss(z, z, std::log(100.0));
  EXPECT_LT(r.loss, 1e-6);
  EXPECT_GE(r.loss, 0.0);
}

TEST(ContrastiveLoss, EqualSimilaritiesGiveLogN) {
  std::vector<EmbeddingVector> z(4, unit({0.6, 0.8, 0.0}));
  auto r = contrastive_loss(z, z, 2.0);
  EXPECT_EQ(r.loss, std::log(4.0));
}

TEST(ContrastiveLoss, TwoByTwoIdentitySimilarity) {
  std::vector<EmbeddingVector> z{unit({1, 0}), unit({0, 1})};
  auto r = contrastive_loss(z, z, 0.0);
  // Each row and column: -log(e / (e + 1)).
  const double expected = -std::log(std::numbers::e / (std::numbers::e + 1.0));
  EXPECT_NEAR(r.loss, expected, 1e-15);
  EXPECT_NEAR(r.loss, 0.31326, 1e-5);
  EXPECT_EQ(r.sim(0, 1), 0.0);
}

TEST(ContrastiveLoss, RejectsBadInputs) {
  std::vector<EmbeddingVector> one{unit({1, 0})};
  EXPECT_THROW(contrastive_loss(one, one, 0.0), UsageError);
  std::vector<EmbeddingVector> two{unit({1, 0}), unit({0, 1})};
  std::vector<EmbeddingVector> three{unit({1, 0}), unit({0, 1}), unit({1, 1})};
  EXPECT_THROW(contrastive_loss(two, three, 0.0), UsageError);
}

TEST(ContrastiveLoss, PermutationInvariant) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto zi = random_unit(rng, 16, 8), zt = random_unit(rng, 16, 8);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<EmbeddingVector> pi, pt;
    for (auto k : perm) {
      pi.push_back(zi[k]);
      pt.push_back(zt[k]);
    }
    EXPECT_NEAR(contrastive_loss(zi, zt, 2.5).loss, contrastive_loss(pi, pt, 2.5).loss, 1e-10);
  }
}

TEST(ContrastiveLoss, RotationInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto zi = random_unit(rng, 12, 6), zt = random_unit(rng, 12, 6);
    auto r = random_rotation(rng, 6);
    EXPECT_NEAR(contrastive_loss(zi, zt, 3.0).loss, contrastive_loss(rotate(zi, r), rotate(zt, r), 3.0).loss, 1e-8);
  }
}

TEST(ContrastiveLoss, ApproachesZeroForAntipodalMismatches) {
  std::vector<EmbeddingVector> z{unit({1, 0}), unit({-1, 0})};
  double previous = contrastive_loss(z, z, 0.0).loss;
  for (double s : {1.0, 2.0, 3.0, std::log(100.0)}) {
    const double l = contrastive_loss(z, z, s).loss;
    EXPECT_LT(l, previous);
    EXPECT_GE(l, 0.0);
    previous = l;
  }
  EXPECT_LT(previous, 1e-80);
}

TEST(ContrastiveLoss, GraphMatchesDirectEvaluation) {
  std::mt19937_64 rng(3);
  auto zi = random_unit(rng, 10, 5), zt = random_unit(rng, 10, 5);
  numerics::Graph g;
  auto a = g.input("zi", {10, 5});
  auto b = g.input("zt", {10, 5});
  auto s = g.input("s", {});
  auto loss = build_contrastive_loss(g, a, b, s);
  numerics::DenseArray<double> ai({10, 5}), bt({10, 5});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t k = 0; k < 5; ++k) {
      ai(i, k) = zi[i][k];
      bt(i, k) = zt[i][k];
    }
  numerics::Tape<double> tape(g);
  tape.evaluate({{"zi", ai}, {"zt", bt}, {"s", numerics::DenseArray<double>::scalar(1.7)}});
  EXPECT_NEAR(tape.value(loss)[0], contrastive_loss(zi, zt, 1.7).loss, 1e-12);
}

TEST(FullLoss, GradientMatchesFiniteDifferencesOnFourPairs) {
  std::mt19937_64 rng(4);
  const std::size_t ctx = 7;
  auto model = encoders::make_model(tiny_text(ctx), tiny_image(), 4, 0.5);
  std::normal_distribution<double> big(0.0, 0.3);
  for (auto& [name, a] : model.params) {
    if (a.rank() >= 2) {
      for (auto& v : a.data()) v = big(rng);
    }
  }
  std::vector<TokenSeq> texts{make_seq({1, 2, 3}, ctx), make_seq({4, 5, 6, 7, 8}, ctx), make_seq({9}, ctx),
                              make_seq({10, 11}, ctx)};
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> images(4, std::vector<double>(6));
  for (auto& v : images)
    for (auto& x : v) x = g(rng);

  const auto out = loss_and_gradients(model, std::span<const TokenSeq>(texts),
                                      std::span<const std::vector<double>>(images));
  ASSERT_EQ(out.grads.size(), model.params.size());
  for (const auto& [name, grad] : out.grads) {
    auto& p = model.params.at(name);
    for (std::size_t k = 0; k < p.size(); ++k) {
      // Untouched embedding rows have zero gradient in both; sample them sparsely.
      if (name == "text.token_embedding" && k / 8 > 12 && k / 8 != 256 && k / 8 != 257) continue;
      const double orig = p[k];
      p[k] = orig + 1e-5;
      const double plus = loss_and_gradients(model, std::span<const TokenSeq>(texts),
                                             std::span<const std::vector<double>>(images))
                              .loss;
      p[k] = orig - 1e-5;
      const double minus = loss_and_gradients(model, std::span<const TokenSeq>(texts),
                                              std::span<const std::vector<double>>(images))
                               .loss;
      p[k] = orig;
      const double fd = (plus - minus) / 2e-5;
      const double err = std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-5});
      EXPECT_LT(err, 1e-4) << name << "[" << k << "] analytic " << grad[k] << " numeric " << fd;
    }
  }
}

TEST(Schedule, WarmupEndpointsAndCosineMidpoint) {
  TrainConfig cfg;
  cfg.learning_rate = 5e-4;
  cfg.warmup_steps = 100;
  const std::size_t total = 1100;
  EXPECT_EQ(lr_schedule(0, cfg, total), 0.0);
  EXPECT_EQ(lr_schedule(100, cfg, total), 5e-4);
  EXPECT_EQ(lr_schedule(600, cfg, total), 2.5e-4);
  EXPECT_EQ(lr_schedule(total, cfg, total), 0.0);
  EXPECT_NEAR(lr_schedule(50, cfg, total), 2.5e-4, 1e-18);
  double previous = lr_schedule(100, cfg, total);
  for (std::size_t s = 101; s <= total; ++s) {
    const double lr = lr_schedule(s, cfg, total);
    EXPECT_LE(lr, previous);
    previous = lr;
  }
}

TEST(Schedule, ConstantDecayHoldsBaseRate) {
  TrainConfig cfg;
  cfg.warmup_steps = 10;
  cfg.lr_decay = "constant";
  EXPECT_EQ(lr_schedule(500, cfg, 1000), cfg.learning_rate);
}

TEST(Schedule, RejectsTotalNotAboveWarmup) {
  TrainConfig cfg;
  cfg.warmup_steps = 1000;
  EXPECT_THROW(lr_schedule(0, cfg, 1000), UsageError);
}

TEST(Schedule, DeskScaleWarmup) {
  EXPECT_EQ(effective_warmup(1000, 1000), 50u);
  EXPECT_EQ(effective_warmup(1000, 20000), 1000u);
  EXPECT_EQ(effective_warmup(1000, 400), 20u);
  EXPECT_EQ(effective_warmup(1000, 10), 1u);
  EXPECT_EQ(effective_warmup(0, 100), 1u);
  EXPECT_THROW(effective_warmup(10, 1), UsageError);
}

TEST(Clip, UnderThresholdUnchanged) {
  numerics::Gradients<double> g{{"a", numerics::DenseArray<double>({2}, std::vector<double>{0.3, 0.4})}};
  auto before = g;
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 0.5);
  EXPECT_EQ(g, before);
}

TEST(Clip, NormTwoIsHalved) {
  numerics::Gradients<double> g{{"a", numerics::DenseArray<double>({2}, std::vector<double>{1.2, 0.0})},
                                {"b", numerics::DenseArray<double>({1, 1}, std::vector<double>{1.6})}};
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(g.at("a")[0], 0.6);
  EXPECT_DOUBLE_EQ(g.at("b")[0], 0.8);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-12);
}

TEST(Clip, NonFiniteGradientIsNumericError) {
  numerics::Gradients<double> g{{"a", numerics::DenseArray<double>({1}, std::vector<double>{NAN})}};
  EXPECT_THROW(clip_gradients(g, 1.0), NumericError);
  EXPECT_THROW(clip_gradients(g, 0.0), UsageError);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Params<double> p{{"w", numerics::DenseArray<double>({2, 2}, std::vector<double>{1, 1, 1, 1})},
                   {"b", numerics::DenseArray<double>({2}, std::vector<double>{1, 1})}};
  numerics::Gradients<double> g{{"w", numerics::DenseArray<double>({2, 2}, std::vector<double>{0.5, -2, 0, 0})},
                                {"b", numerics::DenseArray<double>({2}, std::vector<double>{3, 0})}};
  AdamW<double> opt(0.9, 0.95, 1e-12, 0.2);
  opt.step(p, g, 0.1);
  // Decoupled decay multiplies matrices by (1 - lr*wd) before the Adam step; vectors are not decayed.
  EXPECT_NEAR(p.at("w")[0], 0.98 - 0.1, 1e-9);
  EXPECT_NEAR(p.at("w")[1], 0.98 + 0.1, 1e-9);
  EXPECT_NEAR(p.at("w")[2], 0.98, 1e-15);
  EXPECT_NEAR(p.at("b")[0], 0.9, 1e-9);
  EXPECT_EQ(p.at("b")[1], 1.0);
}

TEST(Train, DeterministicLossCurve) {
  auto data = toy_set(8, 6, 1);
  auto cfg = toy_config(6);
  auto model = encoders::make_model(tiny_text(6), tiny_image(), 5);
  auto a = train(cfg, model, data);
  auto b = train(cfg, model, data);
  ASSERT_EQ(a.curve.points.size(), b.curve.points.size());
  for (std::size_t i = 0; i < a.curve.points.size(); ++i) {
    EXPECT_EQ(a.curve.points[i].step, b.curve.points[i].step);
    EXPECT_EQ(a.curve.points[i].loss, b.curve.points[i].loss);
    EXPECT_EQ(a.curve.points[i].lr, b.curve.points[i].lr);
  }
  EXPECT_EQ(a.checkpoint.model.params, b.checkpoint.model.params);
  std::ostringstream ca, cb;
  a.curve.write_csv(ca, false);
  b.curve.write_csv(cb, false);
  EXPECT_EQ(ca.str(), cb.str());
}

TEST(Train, LossDecreasesOnLearnableData) {
  auto data = toy_set(16, 6, 2);
  auto cfg = toy_config(6);
  cfg.max_epochs = 15;
  auto r = train(cfg, encoders::make_model(tiny_text(6), tiny_image(), 6), data);
  const auto means = r.curve.epoch_means(r.steps_per_epoch);
  ASSERT_EQ(means.size(), cfg.max_epochs);
  EXPECT_LT(means.back(), means.front());
  EXPECT_EQ(r.steps_per_epoch, 8u);
  EXPECT_EQ(r.total_steps, 120u);
  EXPECT_EQ(r.checkpoint.step, 120u);
  EXPECT_LE(r.checkpoint.model.log_scale(), cfg.log_scale_max);
}

TEST(Train, StepsStrictlyIncreaseAndLastBatchDropped) {
  auto data = toy_set(5, 6, 3);  // 20 pairs, batch 8 -> 2 full batches
  auto cfg = toy_config(6);
  cfg.max_epochs = 2;
  auto r = train(cfg, encoders::make_model(tiny_text(6), tiny_image(), 6), data);
  ASSERT_EQ(r.curve.points.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.curve.points[i].step, i + 1);
  EXPECT_EQ(r.warmup_steps, 1u);
}

TEST(Train, TemperatureIsClamped) {
  auto data = toy_set(8, 6, 4);
  auto cfg = toy_config(6);
  cfg.log_scale_max = 2.5;
  cfg.log_scale_init = 2.5;
  cfg.learning_rate = 0.1;
  auto r = train(cfg, encoders::make_model(tiny_text(6), tiny_image(), 7, 2.5), data);
  EXPECT_LE(r.checkpoint.model.log_scale(), 2.5);
}

TEST(Train, RejectsBadSetups) {
  auto data = toy_set(1, 6, 5);  // 4 pairs
  auto cfg = toy_config(6);
  EXPECT_THROW(train(cfg, encoders::make_model(tiny_text(6), tiny_image(), 1), data), UsageError);
  auto big = toy_set(4, 6, 5);
  EXPECT_THROW(train(cfg, encoders::make_model(tiny_text(7), tiny_image(), 1), big), UsageError);
  cfg.beta2 = 1.0;
  EXPECT_THROW(train(cfg, encoders::make_model(tiny_text(6), tiny_image(), 1), big), UsageError);
}

TEST(Train, NonFiniteLossNamesTheStep) {
  auto data = toy_set(4, 6, 6);
  data.images[3][0] = std::numeric_limits<double>::infinity();
  auto cfg = toy_config(6);
  try {
    train(cfg, encoders::make_model(tiny_text(6), tiny_image(), 1), data);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step "), std::string::npos) << e.what();
  }
}

TEST(LossCurveFormat, CsvAndThreshold) {
  LossCurve c;
  c.points = {{1, 3.0, 0.1, 0.5}, {2, 1.25, 0.2, 1.0}, {3, 0.5, 0.3, 1.5}};
  std::ostringstream out;
  c.write_csv(out);
  EXPECT_EQ(out.str(), "step,loss,lr,seconds\n1,3,0.10000000000000001,0.500000\n2,1.25,0.20000000000000001,1.000000\n"
                       "3,0.5,0.29999999999999999,1.500000\n");
  EXPECT_EQ(c.steps_to_reach(1.25), 2u);
  EXPECT_FALSE(c.steps_to_reach(0.1).has_value());
}

TEST(TrainConfigFile, ReadsKeysAndRejectsUnknown) {
  auto dir = fs::temp_directory_path() / "longclip_traincfg";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "ok.cfg");
    out << "# desk run\ncontext_length = 512\nlearning_rate = 1e-3\nbeta2=0.98\nseed = 9\n";
  }
  auto cfg = read_train_config(dir / "ok.cfg");
  EXPECT_EQ(cfg.context_length, 512u);
  EXPECT_EQ(cfg.learning_rate, 1e-3);
  EXPECT_EQ(cfg.beta2, 0.98);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.batch_size, TrainConfig{}.batch_size);
  {
    std::ofstream out(dir / "bad.cfg");
    out << "learning_rat = 1e-3\n";
  }
  EXPECT_THROW(read_train_config(dir / "bad.cfg"), UsageError);
  {
    std::ofstream out(dir / "bad2.cfg");
    out << "batch_size = -4\n";
  }
  EXPECT_THROW(read_train_config(dir / "bad2.cfg"), UsageError);
  auto kv = to_kv(cfg);
  EXPECT_EQ(kv.at("learning_rate"), "0.001");
  EXPECT_EQ(kv.at("lr_decay"), "cosine");
}
