#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>

#include "longclip/errors.hpp"
#include "longclip/util/kv.hpp"

namespace longclip::trainer {

struct TrainConfig {
  std::size_t context_length = 77;
  std::size_t batch_size = 32;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-6;
  double weight_decay = 0.2;
  std::size_t warmup_steps = 1000;
  std::size_t max_epochs = 20;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  double log_scale_init = std::log(1.0 / 0.07);
  double log_scale_max = std::log(100.0);
  std::string lr_decay = "cosine";  // or "constant"

  void validate() const {
    if (context_length < 3) throw UsageError("context_length must be >= 3");
    if (batch_size < 2) throw UsageError("batch_size must be >= 2 for a contrastive loss");
    if (!(learning_rate > 0)) throw UsageError("learning_rate must be > 0");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw UsageError("betas must lie in (0, 1)");
    if (!(adam_eps > 0)) throw UsageError("adam_eps must be > 0");
    if (!(weight_decay >= 0)) throw UsageError("weight_decay must be >= 0");
    if (!(grad_clip_norm > 0)) throw UsageError("grad_clip_norm must be > 0");
    if (max_epochs == 0) throw UsageError("max_epochs must be > 0");
    if (!(log_scale_init <= log_scale_max)) throw UsageError("log_scale_init exceeds log_scale_max");
    if (lr_decay != "cosine" && lr_decay != "constant") {
      throw UsageError("lr_decay must be 'cosine' or 'constant', got '" + lr_decay + "'");
    }
  }
};

template <typename C, typename F>
  requires std::is_same_v<std::remove_const_t<C>, TrainConfig>
void visit_fields(C& c, F&& f) {
  f("context_length", c.context_length);
  f("batch_size", c.batch_size);
  f("learning_rate", c.learning_rate);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("adam_eps", c.adam_eps);
  f("weight_decay", c.weight_decay);
  f("warmup_steps", c.warmup_steps);
  f("max_epochs", c.max_epochs);
  f("grad_clip_norm", c.grad_clip_norm);
  f("seed", c.seed);
  f("log_scale_init", c.log_scale_init);
  f("log_scale_max", c.log_scale_max);
  f("lr_decay", c.lr_decay);
}

inline TrainConfig read_train_config(const std::filesystem::path& path) {
  TrainConfig cfg;
  util::apply_kv(cfg, util::read_kv_file(path), [](auto& c, auto&& f) { visit_fields(c, f); });
  cfg.validate();
  return cfg;
}

inline util::KeyValues to_kv(const TrainConfig& cfg) {
  return util::to_kv(cfg, [](auto& c, auto&& f) { visit_fields(c, f); });
}

// Linear warmup from 0, then cosine decay to 0 at total_steps.
inline double lr_schedule(std::size_t step, const TrainConfig& cfg, std::size_t total_steps) {
  const std::size_t warmup = cfg.warmup_steps;
  if (total_steps <= warmup) {
    throw UsageError("lr_schedule: total_steps " + std::to_string(total_steps) + " must exceed warmup_steps " +
                     std::to_string(warmup));
  }
  if (step < warmup) return cfg.learning_rate * (static_cast<double>(step) / static_cast<double>(warmup));
  if (cfg.lr_decay == "constant") return cfg.learning_rate;
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Warmup actually used for a run of `total_steps`. A configured warmup sized for
// large-scale runs is shrunk in proportion (1000 of 20000 steps, so 50 at 1000 steps).
inline std::size_t effective_warmup(std::size_t warmup, std::size_t total_steps) {
  if (total_steps < 2) throw UsageError("training needs at least 2 steps, got " + std::to_string(total_steps));
  if (total_steps >= 1000 && warmup < total_steps) return warmup;
  const double scaled = std::round(static_cast<double>(warmup) * static_cast<double>(total_steps) / 20000.0);
  return std::clamp<std::size_t>(static_cast<std::size_t>(scaled), 1, total_steps - 1);
}

}  // namespace longclip::trainer
