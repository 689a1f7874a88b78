#pragma once

#include <algorithm>
#include <cctype>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "longclip/errors.hpp"
#include "longclip/longcap/prompts.hpp"
#include "longclip/util/seed.hpp"

namespace longclip::longcap {

struct GenerationRequest {
  std::string prompt;
  std::optional<std::string> image_ref;
};

// Returns generated text or throws BackendError. Implementations must be safe to call
// from several threads at once.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string generate(const GenerationRequest& request) = 0;
  virtual std::string descriptor() const = 0;
};

// Retries BackendError up to `max_attempts` calls in total; the final error carries the count.
inline std::string generate_with_retries(GenerationBackend& backend, const GenerationRequest& request,
                                         std::size_t max_attempts) {
  if (max_attempts == 0) throw UsageError("max_attempts must be at least 1");
  for (std::size_t attempt = 1;; ++attempt) {
    try {
      return backend.generate(request);
    } catch (const BackendError& e) {
      if (attempt >= max_attempts)
        throw BackendError(std::string(e.what()) + " (after " + std::to_string(attempt) + " attempts)", attempt);
    }
  }
}

// Keeps every request, for tests and audit logs.
class RequestLog {
 public:
  void record(const GenerationRequest& r) {
    std::lock_guard lock(mu_);
    requests_.push_back(r);
  }
  std::vector<GenerationRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return requests_.size();
  }

 private:
  mutable std::mutex mu_;
  std::vector<GenerationRequest> requests_;
};

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

// Sentence split on ". ", "! ", "? " and newlines; terminal punctuation stays with its sentence.
inline std::vector<std::string> sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \n\t");
    if (b != std::string::npos) out.push_back(cur.substr(b, cur.find_last_not_of(" \n\t") - b + 1));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    cur += c;
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\n')) flush();
  }
  flush();
  return out;
}

}  // namespace detail

// Deterministic stand-in for a vision-language model: a pure function of (prompt, image_ref, seed).
// It performs each task mechanically: augmentation appends the supplied context, feasibility marks
// sentences with non-visual cue words as NOT_FEASIBLE, refinement keeps the FEASIBLE features.
class MockBackend : public GenerationBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0, RequestLog* log = nullptr) : seed_(seed), log_(log) {}

  std::string descriptor() const override { return "mock:" + std::to_string(seed_); }

  std::string generate(const GenerationRequest& request) override {
    if (log_) log_->record(request);
    const auto p = parse_prompt(request.prompt);
    const std::uint64_t h = util::stream_seed(seed_, request.prompt + "\x1f" + request.image_ref.value_or(""));
    if (p.task == kTaskAugment) return augment(p, h);
    if (p.task == kTaskFeasibility) return feasibility(p);
    if (p.task == kTaskRefine) return refine(p);
    throw BackendError("mock backend: unknown task '" + p.task + "'");
  }

  // Cue words that mark a sentence as not verifiable from pixels.
  static const std::vector<std::string>& non_visual_cues() {
    static const std::vector<std::string> cues{"survival", "prognosis", "outcome", "improved", "mortality",
                                               "follow-up", "history", "years old", "treated", "enrolled",
                                               "cohort", "reported", "recurrence", "was diagnosed"};
    return cues;
  }

 private:
  static std::string augment(const ParsedPrompt& p, std::uint64_t h) {
    static const char* intros[] = {"In context,", "Additional context:", "As described in the article,"};
    std::string out = p.get("CAPTION");
    std::string context;
    for (const auto& m : p.items("INLINE MENTIONS")) context += " " + m;
    const auto abs = detail::sentences(p.get("ABSTRACT"));
    if (!abs.empty()) context += " " + abs.front();
    if (!context.empty()) out += std::string(" ") + intros[h % 3] + context;
    return out;
  }

  static std::string feasibility(const ParsedPrompt& p) {
    std::string xml = "<features>\n";
    for (const auto& s : detail::sentences(p.get("CAPTION"))) {
      const auto low = detail::lower(s);
      std::string cue;
      for (const auto& c : non_visual_cues())
        if (low.find(c) != std::string::npos) {
          cue = c;
          break;
        }
      xml += "  <feature label=\"" + std::string(cue.empty() ? "FEASIBLE" : "NOT_FEASIBLE") + "\" rationale=\"" +
             detail::xml_escape(cue.empty() ? "describes visible content" : "mentions " + cue) + "\">" +
             detail::xml_escape(s) + "</feature>\n";
    }
    return xml + "</features>\n";
  }

  static std::string refine(const ParsedPrompt& p) {
    if (p.items("NOT_FEASIBLE FEATURES").empty()) return p.get("CAPTION");
    const auto keep = p.items("FEASIBLE FEATURES");
    if (keep.empty()) return "A biomedical image.";
    std::string out;
    for (const auto& k : keep) out += (out.empty() ? "" : " ") + k;
    return out;
  }

  std::uint64_t seed_;
  RequestLog* log_;
};

// Replays canned responses in order, whatever the prompt. A response with `fail` set throws BackendError.
class ScriptedBackend : public GenerationBackend {
 public:
  struct Response {
    std::string text;
    bool fail = false;
  };

  explicit ScriptedBackend(std::vector<Response> script, RequestLog* log = nullptr)
      : script_(script.begin(), script.end()), log_(log) {}

  std::string descriptor() const override { return "scripted"; }

  std::string generate(const GenerationRequest& request) override {
    if (log_) log_->record(request);
    std::lock_guard lock(mu_);
    if (script_.empty()) throw BackendError("scripted backend: script exhausted");
    auto r = std::move(script_.front());
    script_.pop_front();
    if (r.fail) throw BackendError("scripted backend: " + (r.text.empty() ? std::string("failure") : r.text));
    return r.text;
  }

  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return script_.size();
  }

 private:
  mutable std::mutex mu_;
  std::deque<Response> script_;
  RequestLog* log_;
};

}  // namespace longclip::longcap
