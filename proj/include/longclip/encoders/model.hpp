#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "longclip/embedding.hpp"
#include "longclip/encoders/params.hpp"
#include "longclip/numerics/graph.hpp"
#include "longclip/tokenizer/vocab.hpp"

namespace longclip::encoders {

using numerics::Graph;
using numerics::NodeId;

// Configs plus parameters of one paired model.
template <typename T = double>
struct Model {
  TextEncoderConfig text;
  ImageEncoderConfig image;
  Params<T> params;

  T log_scale() const { return params.at(kLogScale)[0]; }
};

template <typename T = double>
Model<T> make_model(const TextEncoderConfig& text, const ImageEncoderConfig& image, std::uint64_t seed,
                    double log_scale_init = default_log_scale_init()) {
  return Model<T>{text, image, init_params<T>(text, image, seed, log_scale_init)};
}

// Graph input names of the per-batch (non-parameter) inputs.
inline constexpr const char* kTokenIds = "batch.token_ids";
inline constexpr const char* kPositionIds = "batch.position_ids";
inline constexpr const char* kKeyMask = "batch.key_mask";
inline constexpr const char* kEosIndex = "batch.eos_index";
inline constexpr const char* kImageFeatures = "batch.image_features";

namespace detail {

inline NodeId linear(Graph& g, const std::string& prefix, NodeId x, std::size_t in, std::size_t out) {
  NodeId w = g.input(prefix + ".weight", {in, out});
  NodeId b = g.input(prefix + ".bias", {out});
  return g.add_bias(g.matmul(x, w), b);
}

inline NodeId layer_norm(Graph& g, const std::string& prefix, NodeId x, std::size_t dim) {
  return g.layer_norm(x, g.input(prefix + ".gain", {dim}), g.input(prefix + ".bias", {dim}));
}

// [B*S, D] -> [B*H, S, dh]
inline NodeId split_heads(Graph& g, NodeId x, std::size_t batch, std::size_t seq, std::size_t heads,
                          std::size_t head_dim) {
  NodeId r = g.reshape(x, {batch, seq, heads, head_dim});
  NodeId p = g.permute(r, {0, 2, 1, 3});
  return g.reshape(p, {batch * heads, seq, head_dim});
}

// [B*H, S, dh] -> [B*S, D]
inline NodeId merge_heads(Graph& g, NodeId x, std::size_t batch, std::size_t seq, std::size_t heads,
                          std::size_t head_dim) {
  NodeId r = g.reshape(x, {batch, heads, seq, head_dim});
  NodeId p = g.permute(r, {0, 2, 1, 3});
  return g.reshape(p, {batch * seq, heads * head_dim});
}

}  // namespace detail

// Text tower over `batch` sequences trimmed to `seq_len` positions. Returns unit-norm rows [batch, output_dim].
//
// Only the EOS row of the final block reaches the output, so by default that block
// computes attention and feed-forward for the EOS query alone. `full_last_block`
// computes every row instead; the result is the same.
inline NodeId build_text_tower(Graph& g, const TextEncoderConfig& cfg, std::size_t batch, std::size_t seq_len,
                               bool full_last_block = false) {
  cfg.validate();
  if (seq_len == 0 || seq_len > cfg.context_length) {
    throw UsageError("text tower: sequence length " + std::to_string(seq_len) + " outside [1, " +
                     std::to_string(cfg.context_length) + "]");
  }
  auto scope = g.scope("text");
  const std::size_t d = cfg.embed_dim, h = cfg.num_heads, dh = cfg.head_dim(), rows = batch * seq_len;

  NodeId ids = g.index_input(kTokenIds, {rows});
  NodeId pos = g.index_input(kPositionIds, {rows});
  NodeId mask = g.index_input(kKeyMask, {batch, seq_len});
  NodeId eos = g.index_input(kEosIndex, {batch});

  NodeId tok_table = g.input("text.token_embedding", {cfg.vocab_size, d});
  NodeId pos_table = g.input("text.position_embedding", {cfg.context_length, d});
  NodeId x = g.add(g.embedding(tok_table, ids), g.embedding(pos_table, pos));
  bool pooled = false;

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string b = block_prefix(l);
    auto block_scope = g.scope("block" + std::to_string(l));
    const bool eos_only = !full_last_block && l + 1 == cfg.num_layers;
    const std::size_t queries = eos_only ? 1 : seq_len;

    NodeId a = detail::layer_norm(g, b + ".ln1", x, d);
    NodeId a_q = eos_only ? g.gather_rows(a, eos) : a;
    NodeId q = g.scale(detail::linear(g, b + ".attn.q", a_q, d, d), attn_scale);
    q = detail::split_heads(g, q, batch, queries, h, dh);
    NodeId k = detail::split_heads(g, detail::linear(g, b + ".attn.k", a, d, d), batch, seq_len, h, dh);
    NodeId v = detail::split_heads(g, detail::linear(g, b + ".attn.v", a, d, d), batch, seq_len, h, dh);
    NodeId attn = g.masked_row_softmax(g.matmul(q, g.permute(k, {0, 2, 1})), mask);
    NodeId ctx = detail::merge_heads(g, g.matmul(attn, v), batch, queries, h, dh);
    if (eos_only) {
      x = g.gather_rows(x, eos);
      pooled = true;
    }
    x = g.add(x, detail::linear(g, b + ".attn.out", ctx, d, d));

    NodeId f = detail::layer_norm(g, b + ".ln2", x, d);
    f = g.gelu(detail::linear(g, b + ".mlp.fc1", f, d, d * cfg.mlp_ratio));
    f = detail::linear(g, b + ".mlp.fc2", f, d * cfg.mlp_ratio, d);
    x = g.add(x, f);
  }
  x = detail::layer_norm(g, "text.ln_final", x, d);
  if (!pooled) x = g.gather_rows(x, eos);
  NodeId z = g.matmul(x, g.input("text.projection", {d, cfg.output_dim}));
  return g.label(g.row_l2_normalize(z), "text/embedding");
}

// Image tower over `batch` feature vectors. Returns unit-norm rows [batch, output_dim].
inline NodeId build_image_tower(Graph& g, const ImageEncoderConfig& cfg, std::size_t batch) {
  cfg.validate();
  auto scope = g.scope("image");
  NodeId x = g.input(kImageFeatures, {batch, cfg.input_dim});
  std::size_t width = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    x = g.gelu(detail::linear(g, "image.fc" + std::to_string(l), x, width, cfg.hidden_dim));
    width = cfg.hidden_dim;
  }
  NodeId z = g.matmul(x, g.input("image.projection", {width, cfg.output_dim}));
  return g.label(g.row_l2_normalize(z), "image/embedding");
}

// Longest visible length in the batch; attention beyond it would only see PAD.
inline std::size_t batch_seq_len(std::span<const tokenizer::TokenSeq> batch, const TextEncoderConfig& cfg) {
  if (batch.empty()) throw UsageError("text batch is empty");
  std::size_t longest = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    if (s.visible_length > cfg.context_length || s.visible_length > s.ids.size()) {
      throw UsageError("sequence " + std::to_string(b) + " has visible length " + std::to_string(s.visible_length) +
                       " beyond context_length " + std::to_string(cfg.context_length) +
                       "; encode must truncate upstream");
    }
    if (s.visible_length < 2) throw UsageError("sequence " + std::to_string(b) + " has no BOS/EOS");
    longest = std::max(longest, s.visible_length);
  }
  return longest;
}

// Per-batch index inputs for build_text_tower.
template <typename T>
void bind_text_batch(Params<T>& bindings, std::span<const tokenizer::TokenSeq> batch, std::size_t seq_len) {
  const std::size_t n = batch.size();
  DenseArray<T> ids(Shape{n * seq_len}), pos(Shape{n * seq_len}), mask(Shape{n, seq_len}), eos(Shape{n});
  for (std::size_t b = 0; b < n; ++b) {
    const auto& s = batch[b];
    for (std::size_t t = 0; t < seq_len; ++t) {
      const bool visible = t < s.visible_length;
      ids[b * seq_len + t] = static_cast<T>(visible ? s.ids[t] : tokenizer::kPad);
      pos[b * seq_len + t] = static_cast<T>(t);
      mask(b, t) = visible ? T{1} : T{0};
    }
    eos[b] = static_cast<T>(b * seq_len + s.visible_length - 1);
  }
  bindings.insert_or_assign(kTokenIds, std::move(ids));
  bindings.insert_or_assign(kPositionIds, std::move(pos));
  bindings.insert_or_assign(kKeyMask, std::move(mask));
  bindings.insert_or_assign(kEosIndex, std::move(eos));
}

template <typename T>
void bind_image_batch(Params<T>& bindings, std::span<const std::vector<double>> features, std::size_t input_dim) {
  DenseArray<T> x(Shape{features.size(), input_dim});
  for (std::size_t b = 0; b < features.size(); ++b) {
    if (features[b].size() != input_dim) {
      throw UsageError("image " + std::to_string(b) + " has " + std::to_string(features[b].size()) +
                       " features, expected " + std::to_string(input_dim));
    }
    for (std::size_t c = 0; c < input_dim; ++c) x(b, c) = static_cast<T>(features[b][c]);
  }
  bindings.insert_or_assign(kImageFeatures, std::move(x));
}

namespace detail {

template <typename T>
std::vector<EmbeddingVector> rows_to_embeddings(const DenseArray<T>& z) {
  std::vector<EmbeddingVector> out;
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  out.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> v(cols);
    for (std::size_t c = 0; c < cols; ++c) v[c] = static_cast<double>(z(r, c));
    // Renormalize in double so float models still meet the 1e-6 norm contract.
    out.push_back(EmbeddingVector::normalized(std::move(v)));
  }
  return out;
}

}  // namespace detail

inline constexpr std::size_t kEncodeChunk = 64;

template <typename T>
std::vector<EmbeddingVector> text_encode(const Model<T>& model, std::span<const tokenizer::TokenSeq> batch) {
  std::vector<EmbeddingVector> out;
  out.reserve(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += kEncodeChunk) {
    auto chunk = batch.subspan(start, std::min(kEncodeChunk, batch.size() - start));
    const std::size_t seq_len = batch_seq_len(chunk, model.text);
    Graph g;
    NodeId z = build_text_tower(g, model.text, chunk.size(), seq_len);
    Params<T> bindings = model.params;
    bind_text_batch(bindings, chunk, seq_len);
    numerics::Tape<T> tape(g);
    tape.evaluate(bindings);
    for (auto& e : detail::rows_to_embeddings(tape.value(z))) out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
std::vector<EmbeddingVector> image_encode(const Model<T>& model, std::span<const std::vector<double>> features) {
  if (features.empty()) return {};
  std::vector<EmbeddingVector> out;
  out.reserve(features.size());
  for (std::size_t start = 0; start < features.size(); start += kEncodeChunk) {
    auto chunk = features.subspan(start, std::min(kEncodeChunk, features.size() - start));
    Graph g;
    NodeId z = build_image_tower(g, model.image, chunk.size());
    Params<T> bindings = model.params;
    bind_image_batch(bindings, chunk, model.image.input_dim);
    numerics::Tape<T> tape(g);
    tape.evaluate(bindings);
    for (auto& e : detail::rows_to_embeddings(tape.value(z))) out.push_back(std::move(e));
  }
  return out;
}

// Tokenizes and encodes raw strings at the model's context length.
template <typename T>
std::vector<EmbeddingVector> text_encode(const Model<T>& model, const tokenizer::Vocab& vocab,
                                         std::span<const std::string> texts) {
  std::vector<tokenizer::TokenSeq> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(tokenizer::encode(vocab, t, model.text.context_length));
  return text_encode(model, std::span<const tokenizer::TokenSeq>(seqs));
}

}  // namespace longclip::encoders
