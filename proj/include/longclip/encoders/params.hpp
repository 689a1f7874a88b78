#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "longclip/encoders/config.hpp"
#include "longclip/numerics/tape.hpp"
#include "longclip/util/seed.hpp"

namespace longclip::encoders {

using numerics::DenseArray;
using numerics::Shape;

// Named parameter arrays. The learnable temperature lives here as the scalar "log_scale".
template <typename T>
using Params = numerics::Bindings<T>;

inline constexpr const char* kLogScale = "log_scale";
inline constexpr double kInitStd = 0.02;

// ln(1/0.07)
inline double default_log_scale_init() { return std::log(1.0 / 0.07); }

// Every tensor draws from its own stream keyed by (seed, name), so a tensor's values do not
// depend on which other tensors exist or on their sizes.
inline std::uint64_t param_stream_seed(std::uint64_t seed, std::string_view name) {
  return util::stream_seed(seed, name);
}

template <typename T>
DenseArray<T> normal_param(std::uint64_t seed, const std::string& name, Shape shape, double stddev) {
  DenseArray<T> a(std::move(shape));
  std::mt19937_64 rng(param_stream_seed(seed, name));
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& v : a.data()) v = static_cast<T>(dist(rng));
  return a;
}

namespace detail {

template <typename T>
void add_linear(Params<T>& p, std::uint64_t seed, const std::string& prefix, std::size_t in, std::size_t out) {
  p.emplace(prefix + ".weight", normal_param<T>(seed, prefix + ".weight", {in, out}, kInitStd));
  p.emplace(prefix + ".bias", DenseArray<T>(Shape{out}));
}

template <typename T>
void add_layer_norm(Params<T>& p, const std::string& prefix, std::size_t dim) {
  p.emplace(prefix + ".gain", DenseArray<T>(Shape{dim}, T{1}));
  p.emplace(prefix + ".bias", DenseArray<T>(Shape{dim}));
}

}  // namespace detail

inline std::string block_prefix(std::size_t layer) { return "text.block" + std::to_string(layer); }

// Weights and embeddings ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
template <typename T = double>
Params<T> init_params(const TextEncoderConfig& text, const ImageEncoderConfig& image, std::uint64_t seed,
                      double log_scale_init = default_log_scale_init()) {
  validate_pair(text, image);
  Params<T> p;
  const std::size_t d = text.embed_dim;
  p.emplace("text.token_embedding", normal_param<T>(seed, "text.token_embedding", {text.vocab_size, d}, kInitStd));
  p.emplace("text.position_embedding",
            normal_param<T>(seed, "text.position_embedding", {text.context_length, d}, kInitStd));
  for (std::size_t l = 0; l < text.num_layers; ++l) {
    const std::string b = block_prefix(l);
    detail::add_layer_norm(p, b + ".ln1", d);
    detail::add_linear(p, seed, b + ".attn.q", d, d);
    detail::add_linear(p, seed, b + ".attn.k", d, d);
    detail::add_linear(p, seed, b + ".attn.v", d, d);
    detail::add_linear(p, seed, b + ".attn.out", d, d);
    detail::add_layer_norm(p, b + ".ln2", d);
    detail::add_linear(p, seed, b + ".mlp.fc1", d, d * text.mlp_ratio);
    detail::add_linear(p, seed, b + ".mlp.fc2", d * text.mlp_ratio, d);
  }
  detail::add_layer_norm(p, "text.ln_final", d);
  p.emplace("text.projection", normal_param<T>(seed, "text.projection", {d, text.output_dim}, kInitStd));

  std::size_t width = image.input_dim;
  for (std::size_t l = 0; l < image.num_layers; ++l) {
    detail::add_linear(p, seed, "image.fc" + std::to_string(l), width, image.hidden_dim);
    width = image.hidden_dim;
  }
  p.emplace("image.projection", normal_param<T>(seed, "image.projection", {width, image.output_dim}, kInitStd));
  p.emplace(kLogScale, DenseArray<T>::scalar(static_cast<T>(log_scale_init)));
  return p;
}

template <typename T>
std::size_t parameter_count(const Params<T>& p) {
  std::size_t n = 0;
  for (const auto& [name, a] : p) n += a.size();
  return n;
}

}  // namespace longclip::encoders
