#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "longclip/errors.hpp"

namespace longclip::longcap {

// Prompt bodies are plain text with {placeholder} fields. Every prompt starts with a tag line
// "[<version>:<task>]" and carries its inputs as "=== SECTION ===" blocks, which keeps the
// requests self-describing for both real and mock backends.
struct PromptTemplates {
  std::string version = "longcap-v1";
  std::string augment =
      "You are given a biomedical figure and text from the article it appears in. Rewrite the caption into a "
      "detailed, self-contained description of the image. Keep every statement of the original caption. Use the "
      "inline mentions, the abstract and the acronym list only to add information about what the image shows.\n";
  std::string feasibility =
      "List every atomic feature stated in the caption below. Label a feature FEASIBLE if it can be verified by "
      "looking at the image alone, including text explicitly overlaid on the image, and NOT_FEASIBLE otherwise "
      "(for example patient history, outcomes or study design). The output is an XML document of the form\n"
      "<features>\n  <feature label=\"FEASIBLE\" rationale=\"...\">feature text</feature>\n</features>\n"
      "Quote each feature exactly as it appears in the caption. Output only the XML.\n";
  std::string refine =
      "Rewrite the caption so that it preserves only the features labeled FEASIBLE. Do not include any feature "
      "listed as NOT_FEASIBLE, in whole or in part. If no feature is feasible, write a short generic description "
      "of the image.\n";
  std::string repair =
      "Your previous response could not be used. Fix the problem described below and answer again, following the "
      "original instructions exactly.\n";
};

inline constexpr std::string_view kTaskAugment = "augment";
inline constexpr std::string_view kTaskFeasibility = "feasibility";
inline constexpr std::string_view kTaskRefine = "refine";

// Reads augment.txt, feasibility.txt, refine.txt and repair.txt plus a VERSION file from `dir`.
// Missing files keep the built-in text.
inline PromptTemplates load_templates(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("prompt template directory not found: " + dir.string());
  PromptTemplates t;
  auto slurp = [&](const char* name, std::string& field) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) return false;
    std::ostringstream ss;
    ss << in.rdbuf();
    field = ss.str();
    return true;
  };
  if (!slurp("VERSION", t.version)) throw IoError("prompt template directory has no VERSION file: " + dir.string());
  while (!t.version.empty() && (t.version.back() == '\n' || t.version.back() == '\r' || t.version.back() == ' '))
    t.version.pop_back();
  if (t.version.empty()) throw ParseError((dir / "VERSION").string(), "empty template version");
  slurp("augment.txt", t.augment);
  slurp("feasibility.txt", t.feasibility);
  slurp("refine.txt", t.refine);
  slurp("repair.txt", t.repair);
  return t;
}

inline void save_templates(const PromptTemplates& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << text;
  };
  put("VERSION", t.version + "\n");
  put("augment.txt", t.augment);
  put("feasibility.txt", t.feasibility);
  put("refine.txt", t.refine);
  put("repair.txt", t.repair);
}

// Assembles a prompt: tag line, instruction text, then the sections in order.
class PromptBuilder {
 public:
  PromptBuilder(const PromptTemplates& t, std::string_view task, const std::string& instructions) {
    text_ = "[" + t.version + ":" + std::string(task) + "]\n" + instructions;
    if (!text_.empty() && text_.back() != '\n') text_ += '\n';
  }
  PromptBuilder& section(std::string_view name, std::string_view body) {
    text_ += "=== ";
    text_ += name;
    text_ += " ===\n";
    text_ += body;
    if (!body.empty() && body.back() != '\n') text_ += '\n';
    return *this;
  }
  PromptBuilder& list(std::string_view name, const std::vector<std::string>& items) {
    std::string body;
    for (const auto& i : items) body += "- " + i + "\n";
    return section(name, body);
  }
  std::string str() const { return text_; }

 private:
  std::string text_;
};

// Parsed view of a prompt built by PromptBuilder.
struct ParsedPrompt {
  std::string version;
  std::string task;
  std::map<std::string, std::string> sections;

  const std::string& get(const std::string& name) const {
    static const std::string empty;
    auto it = sections.find(name);
    return it == sections.end() ? empty : it->second;
  }
  std::vector<std::string> items(const std::string& name) const {
    std::vector<std::string> out;
    std::istringstream in(get(name));
    for (std::string line; std::getline(in, line);)
      if (line.rfind("- ", 0) == 0) out.push_back(line.substr(2));
    return out;
  }
};

inline ParsedPrompt parse_prompt(const std::string& prompt) {
  ParsedPrompt p;
  std::istringstream in(prompt);
  std::string line;
  if (!std::getline(in, line) || line.size() < 4 || line.front() != '[' || line.back() != ']')
    throw ParseError("prompt", "missing [version:task] tag line");
  const auto colon = line.rfind(':');
  if (colon == std::string::npos) throw ParseError("prompt", "malformed tag line");
  p.version = line.substr(1, colon - 1);
  p.task = line.substr(colon + 1, line.size() - colon - 2);
  std::string* current = nullptr;
  while (std::getline(in, line)) {
    if (line.size() > 8 && line.rfind("=== ", 0) == 0 && line.substr(line.size() - 4) == " ===") {
      current = &p.sections[line.substr(4, line.size() - 8)];
      continue;
    }
    if (current) *current += line + "\n";
  }
  for (auto& [name, body] : p.sections)
    if (!body.empty() && body.back() == '\n') body.pop_back();
  return p;
}

}  // namespace longclip::longcap
