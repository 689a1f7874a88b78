#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "longclip/longcap/backend.hpp"
#include "longclip/longcap/prompts.hpp"
#include "longclip/longcap/records.hpp"
#include "longclip/util/xml.hpp"

namespace longclip::longcap {

struct StepOptions {
  PromptTemplates templates;
  std::size_t backend_attempts = 3;  // calls per request before the record fails
};

// A step that gave up: parse or validation failed twice, or the backend kept failing.
class StepFailure : public Error {
 public:
  StepFailure(std::string stage, const std::string& message, std::size_t repairs = 0)
      : Error(stage + ": " + message), stage_(std::move(stage)), repairs_(repairs) {}
  const std::string& stage() const noexcept { return stage_; }
  std::size_t repairs() const noexcept { return repairs_; }

 private:
  std::string stage_;
  std::size_t repairs_;
};

namespace detail {

inline std::string acronym_lines(const std::map<std::string, std::string>& m) {
  std::string out;
  for (const auto& [a, e] : m) out += a + ": " + e + "\n";
  return out;
}

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::string call(GenerationBackend& backend, const std::string& prompt, const std::string& image_ref,
                        const StepOptions& opt, const std::string& stage) {
  GenerationRequest req{prompt, image_ref.empty() ? std::nullopt : std::optional<std::string>(image_ref)};
  try {
    return generate_with_retries(backend, req, opt.backend_attempts);
  } catch (const BackendError& e) {
    throw StepFailure(stage, e.what());
  }
}

inline std::string with_repair(const std::string& prompt, const StepOptions& opt, const std::string& previous,
                               const std::string& problem) {
  std::string out = prompt;
  out += "=== REPAIR ===\n" + opt.templates.repair;
  if (!out.empty() && out.back() != '\n') out += '\n';
  out += "=== PREVIOUS RESPONSE ===\n" + previous;
  if (!out.empty() && out.back() != '\n') out += '\n';
  out += "=== PROBLEM ===\n" + problem + "\n";
  return out;
}

}  // namespace detail

inline std::string augment_prompt(const CaptionRecord& r, const PromptTemplates& t) {
  return PromptBuilder(t, kTaskAugment, t.augment)
      .section("CAPTION", r.caption)
      .list("INLINE MENTIONS", r.inline_mentions)
      .section("ABSTRACT", r.abstract)
      .section("ACRONYMS", detail::acronym_lines(r.acronym_map))
      .str();
}

inline std::string augment_caption(const CaptionRecord& record, GenerationBackend& backend, const StepOptions& opt = {}) {
  record.validate();
  auto out = detail::trim_copy(detail::call(backend, augment_prompt(record, opt.templates), record.image_ref, opt, "augment"));
  if (out.empty()) throw StepFailure("augment", "backend returned an empty caption");
  return out;
}

// Accepts a <features> document, optionally surrounded by other text such as a code fence.
inline FeasibilityReport parse_feasibility_xml(const std::string& response) {
  const auto begin = response.find("<features");
  const auto close = response.rfind("</features>");
  std::string xml;
  if (begin != std::string::npos && close != std::string::npos && close > begin) {
    xml = response.substr(begin, close + 11 - begin);
  } else if (begin != std::string::npos) {
    xml = response.substr(begin);  // maybe self-closing; rapidxml decides
  } else {
    throw ParseError("feasibility response", "no <features> element");
  }
  util::XmlDocument doc(xml, "feasibility response");
  const auto* root = doc.root();
  if (!root || util::name_of(root) != "features") throw ParseError("feasibility response", "root is not <features>");
  FeasibilityReport report;
  for (const auto* f : util::children(root)) {
    if (util::name_of(f) != "feature")
      throw ParseError("feasibility response", "unexpected element <" + std::string(util::name_of(f)) + ">");
    Feature feat;
    const auto label = util::attr(f, "label");
    if (label == "FEASIBLE") {
      feat.label = Label::feasible;
    } else if (label == "NOT_FEASIBLE") {
      feat.label = Label::not_feasible;
    } else {
      throw ParseError("feasibility response", "feature label '" + label + "' is not FEASIBLE or NOT_FEASIBLE");
    }
    if (!util::has_attr(f, "rationale")) throw ParseError("feasibility response", "feature without rationale");
    feat.rationale = util::attr(f, "rationale");
    feat.text = util::text_of(f);
    if (feat.text.empty()) throw ParseError("feasibility response", "feature with empty text");
    report.features.push_back(std::move(feat));
  }
  if (report.features.empty()) throw ParseError("feasibility response", "no features listed");
  return report;
}

struct FeasibilityOutcome {
  FeasibilityReport report;
  std::size_t repairs = 0;
};

// Malformed XML earns one repair reprompt; a second failure fails the step.
inline FeasibilityOutcome assess_feasibility(const std::string& image_ref, const std::string& caption,
                                             GenerationBackend& backend, const StepOptions& opt = {}) {
  if (caption.empty()) throw UsageError("assess_feasibility: caption is empty");
  const std::string prompt =
      PromptBuilder(opt.templates, kTaskFeasibility, opt.templates.feasibility).section("CAPTION", caption).str();
  std::string response = detail::call(backend, prompt, image_ref, opt, "feasibility");
  try {
    return {parse_feasibility_xml(response), 0};
  } catch (const ParseError& first) {
    response = detail::call(backend, detail::with_repair(prompt, opt, response, first.what()), image_ref, opt,
                            "feasibility");
    try {
      return {parse_feasibility_xml(response), 1};
    } catch (const ParseError& second) {
      throw StepFailure("feasibility", second.what(), 1);
    }
  }
}

inline std::vector<std::string> leaked_features(const std::string& refined, const FeasibilityReport& report) {
  std::vector<std::string> out;
  for (const auto& t : report.texts(Label::not_feasible))
    if (refined.find(t) != std::string::npos) out.push_back(t);
  return out;
}

struct RefineOutcome {
  std::string caption;
  std::size_t repairs = 0;
  bool low_content = false;  // nothing was feasible, so the caption is generic
};

// Output must not contain any NOT_FEASIBLE feature verbatim; one reprompt, then the step fails.
inline RefineOutcome refine_caption(const std::string& image_ref, const std::string& caption,
                                    const FeasibilityReport& report, GenerationBackend& backend,
                                    const StepOptions& opt = {}) {
  if (report.features.empty()) throw UsageError("refine_caption: feasibility report is empty");
  const std::string prompt = PromptBuilder(opt.templates, kTaskRefine, opt.templates.refine)
                                 .section("CAPTION", caption)
                                 .list("FEASIBLE FEATURES", report.texts(Label::feasible))
                                 .list("NOT_FEASIBLE FEATURES", report.texts(Label::not_feasible))
                                 .str();
  RefineOutcome out;
  out.low_content = report.texts(Label::feasible).empty();
  auto check = [&](const std::string& text) -> std::string {
    if (text.empty()) return "the refined caption is empty";
    const auto leaked = leaked_features(text, report);
    if (leaked.empty()) return {};
    std::string msg = "the refined caption still contains NOT_FEASIBLE features:";
    for (const auto& l : leaked) msg += "\n- " + l;
    return msg;
  };
  out.caption = detail::trim_copy(detail::call(backend, prompt, image_ref, opt, "refine"));
  auto problem = check(out.caption);
  if (problem.empty()) return out;
  out.repairs = 1;
  out.caption = detail::trim_copy(
      detail::call(backend, detail::with_repair(prompt, opt, out.caption, problem), image_ref, opt, "refine"));
  problem = check(out.caption);
  if (!problem.empty()) throw StepFailure("refine", problem, 1);
  return out;
}

namespace detail {
inline bool word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80 || c == '_';
}
}  // namespace detail

// First whole-word, case-sensitive occurrence of each acronym becomes "expansion (ACRONYM)".
// An occurrence already written as "expansion (ACRONYM)" counts as expanded.
inline std::string expand_acronyms(const std::string& caption, const std::map<std::string, std::string>& acronyms) {
  struct Hit {
    std::size_t pos;
    std::size_t len;
    std::string replacement;
  };
  std::vector<Hit> hits;
  for (const auto& [acr, exp] : acronyms) {
    if (acr.empty() || exp.empty()) throw UsageError("expand_acronyms: empty acronym or expansion");
    for (std::size_t pos = caption.find(acr); pos != std::string::npos; pos = caption.find(acr, pos + 1)) {
      const bool left = pos == 0 || !detail::word_char(caption[pos - 1]);
      const bool right = pos + acr.size() == caption.size() || !detail::word_char(caption[pos + acr.size()]);
      if (!left || !right) continue;
      const std::string already = exp + " (";
      const bool expanded = pos >= already.size() && caption.compare(pos - already.size(), already.size(), already) == 0 &&
                            pos + acr.size() < caption.size() && caption[pos + acr.size()] == ')';
      if (!expanded) hits.push_back({pos, acr.size(), exp + " (" + acr + ")"});
      break;
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.pos < b.pos; });
  std::string out;
  std::size_t at = 0;
  for (const auto& h : hits) {
    if (h.pos < at) continue;  // overlaps an earlier replacement
    out.append(caption, at, h.pos - at);
    out += h.replacement;
    at = h.pos + h.len;
  }
  out.append(caption, at, std::string::npos);
  return out;
}

}  // namespace longclip::longcap
