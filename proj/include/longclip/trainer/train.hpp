#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "longclip/encoders/checkpoint.hpp"
#include "longclip/encoders/model.hpp"
#include "longclip/trainer/config.hpp"
#include "longclip/trainer/loss.hpp"
#include "longclip/trainer/optimizer.hpp"

namespace longclip::trainer {

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall time since training started
};

struct LossCurve {
  std::vector<LossPoint> points;

  // First step whose batch loss is at or below `threshold`.
  std::optional<std::size_t> steps_to_reach(double threshold) const {
    for (const auto& p : points)
      if (p.loss <= threshold) return p.step;
    return std::nullopt;
  }

  std::vector<double> epoch_means(std::size_t steps_per_epoch) const {
    std::vector<double> means;
    for (std::size_t start = 0; start + steps_per_epoch <= points.size(); start += steps_per_epoch) {
      double s = 0;
      for (std::size_t k = start; k < start + steps_per_epoch; ++k) s += points[k].loss;
      means.push_back(s / static_cast<double>(steps_per_epoch));
    }
    return means;
  }

  static const char* csv_header() { return "step,loss,lr,seconds"; }

  void write_csv(std::ostream& out, bool with_time = true) const {
    out << (with_time ? csv_header() : "step,loss,lr") << '\n';
    char buf[96];
    for (const auto& p : points) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g", p.step, p.loss, p.lr);
      out << buf;
      if (with_time) {
        std::snprintf(buf, sizeof buf, ",%.6f", p.seconds);
        out << buf;
      }
      out << '\n';
    }
  }
};

// Tokenized captions and image features, aligned by index.
struct TrainingSet {
  std::vector<tokenizer::TokenSeq> texts;
  std::vector<std::vector<double>> images;

  std::size_t size() const noexcept { return texts.size(); }
};

inline TrainingSet make_training_set(const tokenizer::Vocab& vocab, std::span<const std::string> captions,
                                     std::span<const std::vector<double>> images, std::size_t context_length) {
  if (captions.size() != images.size()) throw UsageError("caption and image counts differ");
  TrainingSet set;
  set.texts.reserve(captions.size());
  for (const auto& c : captions) set.texts.push_back(tokenizer::encode(vocab, c, context_length));
  set.images.assign(images.begin(), images.end());
  return set;
}

struct TrainHooks {
  std::function<void(const LossPoint&)> on_step;
};

template <typename T>
struct TrainResult {
  encoders::Checkpoint<T> checkpoint;
  LossCurve curve;
  std::size_t steps_per_epoch = 0;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;
};

// Batch order for every epoch, drawn from one seeded stream. The last partial batch is dropped.
inline std::vector<std::vector<std::size_t>> epoch_orders(std::size_t n, std::size_t epochs, std::uint64_t seed) {
  std::mt19937_64 rng(encoders::param_stream_seed(seed, "shuffle"));
  std::vector<std::vector<std::size_t>> orders;
  std::vector<std::size_t> perm(n);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    orders.push_back(perm);
  }
  return orders;
}

// One forward/backward pass of the full contrastive objective on a batch.
template <typename T>
struct StepOutput {
  double loss = 0.0;
  Gradients<T> grads;
};

template <typename T>
StepOutput<T> loss_and_gradients(const encoders::Model<T>& model, std::span<const tokenizer::TokenSeq> texts,
                                 std::span<const std::vector<double>> images) {
  const std::size_t b = texts.size();
  if (images.size() != b) throw UsageError("batch text and image counts differ");
  const std::size_t seq_len = encoders::batch_seq_len(texts, model.text);
  numerics::Graph g;
  auto z_txt = encoders::build_text_tower(g, model.text, b, seq_len);
  auto z_img = encoders::build_image_tower(g, model.image, b);
  auto log_scale = g.input(encoders::kLogScale, {});
  auto loss = build_contrastive_loss(g, z_img, z_txt, log_scale);

  Params<T> bindings = model.params;
  encoders::bind_text_batch(bindings, texts, seq_len);
  encoders::bind_image_batch(bindings, images, model.image.input_dim);
  numerics::Tape<T> tape(g);
  tape.evaluate(bindings);
  StepOutput<T> out;
  out.loss = static_cast<double>(tape.value(loss)[0]);
  out.grads = tape.backward(loss);
  out.grads.erase(encoders::kImageFeatures);
  return out;
}

template <typename T>
TrainResult<T> train(const TrainConfig& cfg, encoders::Model<T> model, const TrainingSet& data,
                     const TrainHooks& hooks = {}) {
  cfg.validate();
  if (model.text.context_length != cfg.context_length) {
    throw UsageError("model context_length " + std::to_string(model.text.context_length) +
                     " differs from training context_length " + std::to_string(cfg.context_length));
  }
  if (data.images.size() != data.texts.size()) throw UsageError("training set text and image counts differ");
  if (data.size() < cfg.batch_size) {
    throw UsageError("corpus of " + std::to_string(data.size()) + " pairs is smaller than batch_size " +
                     std::to_string(cfg.batch_size));
  }

  TrainResult<T> result;
  result.steps_per_epoch = data.size() / cfg.batch_size;
  result.total_steps = result.steps_per_epoch * cfg.max_epochs;
  TrainConfig schedule = cfg;
  schedule.warmup_steps = effective_warmup(cfg.warmup_steps, result.total_steps);
  result.warmup_steps = schedule.warmup_steps;

  AdamW<T> optimizer(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  const auto orders = epoch_orders(data.size(), cfg.max_epochs, cfg.seed);
  const auto start = std::chrono::steady_clock::now();
  std::vector<tokenizer::TokenSeq> texts(cfg.batch_size);
  std::vector<std::vector<double>> images(cfg.batch_size);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t s = 0; s < result.steps_per_epoch; ++s) {
      ++step;
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        const std::size_t idx = orders[epoch][s * cfg.batch_size + k];
        texts[k] = data.texts[idx];
        images[k] = data.images[idx];
      }
      StepOutput<T> out;
      try {
        out = loss_and_gradients(model, std::span<const tokenizer::TokenSeq>(texts),
                                 std::span<const std::vector<double>>(images));
        if (!std::isfinite(out.loss)) throw NumericError("loss", "non-finite loss");
        clip_gradients(out.grads, cfg.grad_clip_norm);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step), e.what());
      }
      const double lr = lr_schedule(step, schedule, result.total_steps);
      optimizer.step(model.params, out.grads, lr);
      T& log_scale = model.params.at(encoders::kLogScale)[0];
      log_scale = std::min(log_scale, static_cast<T>(cfg.log_scale_max));

      LossPoint p{step, out.loss, lr,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      result.curve.points.push_back(p);
      if (hooks.on_step) hooks.on_step(p);
    }
  }
  result.checkpoint = encoders::Checkpoint<T>{std::move(model), step};
  return result;
}

}  // namespace longclip::trainer
