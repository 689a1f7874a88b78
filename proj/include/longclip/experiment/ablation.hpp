#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "longclip/data/synthetic.hpp"
#include "longclip/encoders/model.hpp"
#include "longclip/eval/retrieval.hpp"
#include "longclip/trainer/train.hpp"

namespace longclip::experiment {

// Train and evaluate one model per context length on the same synthetic corpus.
// The class word sits past 77 tokens and the detail word past 154, so each longer
// window exposes strictly more caption information.
struct AblationConfig {
  data::SyntheticSpec spec = [] {
    data::SyntheticSpec s;
    s.num_details = 4;
    s.detail_token_position = 160;
    return s;
  }();
  std::vector<std::size_t> contexts{77, 154, 512};
  encoders::TextEncoderConfig text = [] {
    encoders::TextEncoderConfig t;
    t.embed_dim = 32;
    t.num_layers = 1;
    t.num_heads = 2;
    t.mlp_ratio = 2;
    t.output_dim = 32;
    return t;
  }();
  encoders::ImageEncoderConfig image = [] {
    encoders::ImageEncoderConfig i;
    i.hidden_dim = 64;
    i.num_layers = 1;
    i.output_dim = 32;
    return i;
  }();
  trainer::TrainConfig train = [] {
    trainer::TrainConfig c;
    c.learning_rate = 1e-3;
    c.max_epochs = 15;
    return c;
  }();
  std::size_t eval_galleries = 5;  // held-out galleries, one item per (class, detail) cell each
  std::vector<std::size_t> ks = eval::table_ks();
  std::size_t vocab_size = 8192;
  std::uint64_t seed = 0;  // drives data, initialization and batch order together

  void validate() const {
    spec.validate();
    if (contexts.empty()) throw UsageError("ablation needs at least one context length");
    for (auto c : contexts)
      if (c < 3) throw UsageError("context length " + std::to_string(c) + " is below 3");
    if (eval_galleries == 0) throw UsageError("ablation needs at least one evaluation gallery");
    if (ks.empty()) throw UsageError("ablation needs at least one K");
    if (image.input_dim != spec.image_dim)
      throw UsageError("image input_dim " + std::to_string(image.input_dim) + " differs from synthetic image_dim " +
                       std::to_string(spec.image_dim));
  }
};

struct ContextResult {
  std::size_t context_length = 0;
  std::map<std::size_t, double> t2i;  // K -> recall, mean over galleries
  std::map<std::size_t, double> i2t;
  std::optional<std::size_t> steps_to_threshold;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
  trainer::LossCurve curve;
};

struct AblationResult {
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
  double loss_threshold = 0.0;  // ln(batch_size) / 2
  std::vector<ContextResult> contexts;

  const ContextResult& at(std::size_t context_length) const {
    for (const auto& c : contexts)
      if (c.context_length == context_length) return c;
    throw UsageError("no ablation result for context length " + std::to_string(context_length));
  }
};

struct AblationHooks {
  std::function<void(std::size_t context_length)> on_context_start;
  std::function<void(const ContextResult&)> on_context_done;
};

template <typename T = float>
AblationResult run_ablation(AblationConfig cfg, const AblationHooks& hooks = {}) {
  cfg.spec.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();

  const auto data = data::generate_synthetic(cfg.spec);
  const auto vocab = data::synthetic_vocab(cfg.spec, data, cfg.vocab_size);
  const auto captions = data.corpus.captions();
  const auto images = data.corpus.images();
  std::vector<data::SyntheticData> galleries;
  for (std::size_t g = 0; g < cfg.eval_galleries; ++g) galleries.push_back(data::generate_synthetic_gallery(cfg.spec, g));

  AblationResult result;
  result.seed = cfg.seed;
  result.batch_size = cfg.train.batch_size;
  result.loss_threshold = std::log(static_cast<double>(cfg.train.batch_size)) / 2.0;

  for (const std::size_t ctx : cfg.contexts) {
    if (hooks.on_context_start) hooks.on_context_start(ctx);
    auto text = cfg.text;
    text.context_length = ctx;
    text.vocab_size = vocab.size();
    auto tc = cfg.train;
    tc.context_length = ctx;
    auto model = encoders::make_model<T>(text, cfg.image, cfg.seed, tc.log_scale_init);
    const auto set = trainer::make_training_set(vocab, captions, images, ctx);
    auto trained = trainer::train(tc, std::move(model), set);

    ContextResult r;
    r.context_length = ctx;
    r.steps_to_threshold = trained.curve.steps_to_reach(result.loss_threshold);
    const auto means = trained.curve.epoch_means(trained.steps_per_epoch);
    r.first_epoch_loss = means.front();
    r.last_epoch_loss = means.back();
    for (const auto& gal : galleries) {
      const auto te = encoders::text_encode(trained.checkpoint.model, vocab, gal.corpus.captions());
      const auto gi = gal.corpus.images();
      const auto ie = encoders::image_encode(trained.checkpoint.model, std::span<const std::vector<double>>(gi));
      const auto pair = eval::recall_pair(ie, te, cfg.ks);
      for (auto k : cfg.ks) {
        r.t2i[k] += pair.t2i.recalls.at(k) / static_cast<double>(galleries.size());
        r.i2t[k] += pair.i2t.recalls.at(k) / static_cast<double>(galleries.size());
      }
    }
    r.curve = std::move(trained.curve);
    if (hooks.on_context_done) hooks.on_context_done(r);
    result.contexts.push_back(std::move(r));
  }
  return result;
}

// True when T2I recall@k rises strictly with context length, in the listed order.
inline bool recall_strictly_increasing(const AblationResult& r, std::size_t k = 1) {
  for (std::size_t i = 1; i < r.contexts.size(); ++i)
    if (!(r.contexts[i].t2i.at(k) > r.contexts[i - 1].t2i.at(k))) return false;
  return true;
}

// True when the longer context reaches the loss threshold in strictly fewer steps.
// A run that never reaches it counts as infinitely slow.
inline bool converges_faster(const AblationResult& r, std::size_t longer, std::size_t shorter) {
  const auto& a = r.at(longer).steps_to_threshold;
  const auto& b = r.at(shorter).steps_to_threshold;
  if (!a) return false;
  return !b || *a < *b;
}

inline void write_comparison_header(std::ostream& out) { out << "seed,context_length,direction,K,recall\n"; }

inline void write_comparison_rows(std::ostream& out, const AblationResult& r) {
  char buf[128];
  for (const auto& c : r.contexts) {
    for (const auto* dir : {"t2i", "i2t"}) {
      const auto& m = std::string(dir) == "t2i" ? c.t2i : c.i2t;
      for (const auto& [k, v] : m) {
        std::snprintf(buf, sizeof buf, "%llu,%zu,%s,%zu,%.17g\n", static_cast<unsigned long long>(r.seed),
                      c.context_length, dir, k, v);
        out << buf;
      }
    }
  }
}

inline void write_convergence_header(std::ostream& out) { out << "seed,context_length,step,loss,lr\n"; }

inline void write_convergence_rows(std::ostream& out, const AblationResult& r) {
  char buf[160];
  for (const auto& c : r.contexts) {
    for (const auto& p : c.curve.points) {
      std::snprintf(buf, sizeof buf, "%llu,%zu,%zu,%.17g,%.17g\n", static_cast<unsigned long long>(r.seed),
                    c.context_length, p.step, p.loss, p.lr);
      out << buf;
    }
  }
}

inline void write_steps_header(std::ostream& out) {
  out << "seed,context_length,loss_threshold,steps_to_threshold,first_epoch_loss,last_epoch_loss\n";
}

// steps_to_threshold is left empty when the run never reached the threshold.
inline void write_steps_rows(std::ostream& out, const AblationResult& r) {
  char buf[200];
  for (const auto& c : r.contexts) {
    const std::string steps = c.steps_to_threshold ? std::to_string(*c.steps_to_threshold) : "";
    std::snprintf(buf, sizeof buf, "%llu,%zu,%.17g,%s,%.17g,%.17g\n", static_cast<unsigned long long>(r.seed),
                  c.context_length, r.loss_threshold, steps.c_str(), c.first_epoch_loss, c.last_epoch_loss);
    out << buf;
  }
}

// Human-readable comparison table, recalls in percent.
inline void write_panel(std::ostream& out, const AblationResult& r) {
  char buf[64];
  out << "seed " << r.seed << "\n";
  out << "context";
  if (r.contexts.empty()) return;
  for (const auto* dir : {"T2I", "I2T"})
    for (const auto& [k, v] : r.contexts.front().t2i) {
      std::snprintf(buf, sizeof buf, "  %s R@%zu", dir, k);
      out << buf;
    }
  out << "  steps\n";
  for (const auto& c : r.contexts) {
    std::snprintf(buf, sizeof buf, "%7zu", c.context_length);
    out << buf;
    for (const auto* m : {&c.t2i, &c.i2t})
      for (const auto& [k, v] : *m) {
        const int width = 6 + (k >= 10 ? 2 : 1) + (k >= 100 ? 1 : 0);
        std::snprintf(buf, sizeof buf, "  %*.1f", width, 100.0 * v);
        out << buf;
      }
    out << "  " << (c.steps_to_threshold ? std::to_string(*c.steps_to_threshold) : std::string("-")) << "\n";
  }
}

}  // namespace longclip::experiment
