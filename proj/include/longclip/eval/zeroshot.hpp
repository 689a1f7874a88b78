#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "longclip/embedding.hpp"
#include "longclip/encoders/model.hpp"
#include "longclip/errors.hpp"
#include "longclip/util/seed.hpp"

namespace longclip::eval {

// Multiple-choice items: each image is answered by picking the closest option text.
struct ZeroShotTask {
  std::vector<std::string> image_refs;
  std::vector<EmbeddingVector> images;
  std::vector<std::vector<std::string>> options;
  std::vector<std::size_t> correct;

  std::size_t size() const noexcept { return options.size(); }

  void validate() const {
    if (options.size() != correct.size()) throw UsageError("zero-shot task: options and answers differ in count");
    if (!images.empty() && images.size() != options.size())
      throw UsageError("zero-shot task: images and options differ in count");
    for (std::size_t i = 0; i < options.size(); ++i) {
      if (options[i].size() < 2) throw UsageError("zero-shot item " + std::to_string(i) + " has fewer than 2 options");
      if (correct[i] >= options[i].size())
        throw UsageError("zero-shot item " + std::to_string(i) + ": correct index " + std::to_string(correct[i]) +
                         " is out of range");
      for (const auto& o : options[i])
        if (o.empty()) throw UsageError("zero-shot item " + std::to_string(i) + " has an empty option");
    }
  }
};

struct ZeroShotResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
};

// Highest similarity wins; the lowest option index wins ties.
inline std::size_t argmax_option(const EmbeddingVector& image, std::span<const EmbeddingVector> options) {
  std::size_t best = 0;
  double best_score = dot(image, options[0]);
  for (std::size_t j = 1; j < options.size(); ++j) {
    const double s = dot(image, options[j]);
    if (s > best_score) {
      best = j;
      best_score = s;
    }
  }
  return best;
}

inline ZeroShotResult score_predictions(std::vector<std::size_t> predictions, std::span<const std::size_t> correct) {
  ZeroShotResult r;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == correct[i];
  r.accuracy = predictions.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(predictions.size());
  r.predictions = std::move(predictions);
  return r;
}

// Classification from precomputed option embeddings, one list per item.
inline ZeroShotResult classify_embeddings(const ZeroShotTask& task,
                                          const std::vector<std::vector<EmbeddingVector>>& option_embs) {
  task.validate();
  if (task.images.size() != task.size()) throw UsageError("zero-shot task has no image embeddings");
  std::vector<std::size_t> pred(task.size());
  for (std::size_t i = 0; i < task.size(); ++i) {
    if (option_embs[i].size() != task.options[i].size())
      throw UsageError("zero-shot item " + std::to_string(i) + ": option embedding count differs");
    pred[i] = argmax_option(task.images[i], option_embs[i]);
  }
  return score_predictions(std::move(pred), task.correct);
}

// Encodes every option with the text tower and classifies each image against its own options.
template <typename T>
ZeroShotResult zero_shot_classify(const ZeroShotTask& task, const encoders::Model<T>& model,
                                  const tokenizer::Vocab& vocab) {
  task.validate();
  std::vector<std::string> flat;
  for (const auto& opts : task.options) flat.insert(flat.end(), opts.begin(), opts.end());
  const auto embs = encoders::text_encode(model, vocab, std::span<const std::string>(flat));
  std::vector<std::vector<EmbeddingVector>> per_item;
  std::size_t at = 0;
  for (const auto& opts : task.options) {
    per_item.emplace_back(embs.begin() + static_cast<std::ptrdiff_t>(at),
                          embs.begin() + static_cast<std::ptrdiff_t>(at + opts.size()));
    at += opts.size();
  }
  return classify_embeddings(task, per_item);
}

// Per-item uniform shuffle of the options, with the answer index following its option.
// Single-option items pass through unchanged.
inline ZeroShotTask permute_options(const ZeroShotTask& task, std::uint64_t seed) {
  if (task.options.size() != task.correct.size()) throw UsageError("zero-shot task: options and answers differ in count");
  for (std::size_t i = 0; i < task.size(); ++i)
    if (task.correct[i] >= task.options[i].size())
      throw UsageError("zero-shot item " + std::to_string(i) + ": correct index is out of range");
  ZeroShotTask out = task;
  for (std::size_t i = 0; i < task.size(); ++i) {
    std::vector<std::size_t> perm(task.options[i].size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(util::stream_seed(seed, "permute/" + std::to_string(i)));
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t j = 0; j < perm.size(); ++j) {
      out.options[i][j] = task.options[i][perm[j]];
      if (perm[j] == task.correct[i]) out.correct[i] = j;
    }
  }
  return out;
}

// One JSON object per line: {"image_ref": "...", "options": ["...", ...], "answer": index}.
inline ZeroShotTask read_zero_shot_tasks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  ZeroShotTask task;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      task.image_refs.push_back(j.at("image_ref").get<std::string>());
      task.options.push_back(j.at("options").get<std::vector<std::string>>());
      task.correct.push_back(j.at("answer").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, std::string("bad zero-shot item: ") + e.what());
    }
  }
  if (task.size() == 0) throw ParseError(path.string(), "no zero-shot items");
  task.validate();
  return task;
}

inline void write_zero_shot_tasks(const ZeroShotTask& task, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < task.size(); ++i)
    out << nlohmann::json{{"image_ref", task.image_refs.at(i)}, {"options", task.options[i]}, {"answer", task.correct[i]}}
               .dump()
        << '\n';
}

}  // namespace longclip::eval
