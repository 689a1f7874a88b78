#pragma once

#include <cstddef>
#include <string>

#include "longclip/errors.hpp"

namespace longclip::encoders {

struct TextEncoderConfig {
  std::size_t context_length = 77;
  std::size_t vocab_size = 8192;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t output_dim = 32;
  std::size_t mlp_ratio = 4;

  void validate() const {
    if (context_length < 3) throw UsageError("text encoder: context_length must be >= 3");
    if (vocab_size == 0 || embed_dim == 0 || num_heads == 0 || output_dim == 0 || mlp_ratio == 0) {
      throw UsageError("text encoder: dimensions must be positive");
    }
    if (embed_dim % num_heads != 0) {
      throw UsageError("text encoder: embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                       std::to_string(num_heads));
    }
  }

  std::size_t head_dim() const { return embed_dim / num_heads; }

  friend bool operator==(const TextEncoderConfig&, const TextEncoderConfig&) = default;
};

// The image tower consumes precomputed feature vectors, not pixels.
struct ImageEncoderConfig {
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 2;
  std::size_t output_dim = 32;

  void validate() const {
    if (input_dim == 0 || output_dim == 0 || (num_layers > 0 && hidden_dim == 0)) {
      throw UsageError("image encoder: dimensions must be positive");
    }
  }

  friend bool operator==(const ImageEncoderConfig&, const ImageEncoderConfig&) = default;
};

inline void validate_pair(const TextEncoderConfig& text, const ImageEncoderConfig& image) {
  text.validate();
  image.validate();
  if (text.output_dim != image.output_dim) {
    throw UsageError("text output_dim " + std::to_string(text.output_dim) + " differs from image output_dim " +
                     std::to_string(image.output_dim));
  }
}

}  // namespace longclip::encoders
