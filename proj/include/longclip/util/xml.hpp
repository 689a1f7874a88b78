#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/detail/rapidxml.hpp>

#include "longclip/errors.hpp"

namespace longclip::util {

namespace rx = boost::property_tree::detail::rapidxml;
using XmlNode = rx::xml_node<char>;

// Owns the in-situ buffer rapidxml parses into, so nodes stay valid for the document's lifetime.
class XmlDocument {
 public:
  XmlDocument(std::string text, const std::string& where) : buffer_(std::move(text)) {
    buffer_.push_back('\0');
    try {
      doc_.parse<rx::parse_default>(buffer_.data());
    } catch (const rx::parse_error& e) {
      char* at = e.where<char>();
      std::size_t line = 1;
      if (at >= buffer_.data() && at <= buffer_.data() + buffer_.size())
        line += static_cast<std::size_t>(std::count(buffer_.data(), at, '\n'));
      throw ParseError(where + ":" + std::to_string(line), std::string("malformed XML: ") + e.what());
    }
  }
  XmlDocument(const XmlDocument&) = delete;
  XmlDocument& operator=(const XmlDocument&) = delete;

  const XmlNode* root() const { return doc_.first_node(); }

 private:
  std::string buffer_;
  rx::xml_document<char> doc_;
};

inline std::string_view name_of(const XmlNode* n) { return {n->name(), n->name_size()}; }

inline std::string attr(const XmlNode* n, std::string_view name, std::string fallback = {}) {
  for (auto* a = n->first_attribute(); a; a = a->next_attribute())
    if (std::string_view(a->name(), a->name_size()) == name) return std::string(a->value(), a->value_size());
  return fallback;
}

inline bool has_attr(const XmlNode* n, std::string_view name) {
  for (auto* a = n->first_attribute(); a; a = a->next_attribute())
    if (std::string_view(a->name(), a->name_size()) == name) return true;
  return false;
}

inline std::vector<const XmlNode*> children(const XmlNode* n, std::string_view name = {}) {
  std::vector<const XmlNode*> out;
  for (auto* c = n->first_node(); c; c = c->next_sibling())
    if (c->type() == rx::node_element && (name.empty() || name_of(c) == name)) out.push_back(c);
  return out;
}

// Depth-first, document order.
inline void for_each_element(const XmlNode* n, const std::function<void(const XmlNode*)>& f) {
  for (auto* c = n->first_node(); c; c = c->next_sibling()) {
    if (c->type() != rx::node_element) continue;
    f(c);
    for_each_element(c, f);
  }
}

inline const XmlNode* first_descendant(const XmlNode* n, std::string_view name) {
  for (auto* c = n->first_node(); c; c = c->next_sibling()) {
    if (c->type() != rx::node_element) continue;
    if (name_of(c) == name) return c;
    if (auto* d = first_descendant(c, name)) return d;
  }
  return nullptr;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
      space = !out.empty();
    } else {
      if (space) out += ' ';
      space = false;
      out += c;
    }
  }
  return out;
}

namespace detail {
inline void gather_text(const XmlNode* n, std::string& out) {
  for (auto* c = n->first_node(); c; c = c->next_sibling()) {
    if (c->type() == rx::node_data || c->type() == rx::node_cdata) {
      out.append(c->value(), c->value_size());
    } else if (c->type() == rx::node_element) {
      const auto nm = name_of(c);
      const bool block = nm == "p" || nm == "title" || nm == "label" || nm == "sec";
      if (block) out += ' ';
      gather_text(c, out);
      if (block) out += ' ';
    }
  }
}
}  // namespace detail

// Concatenated character data below `n`, with whitespace collapsed.
inline std::string text_of(const XmlNode* n) {
  std::string raw;
  detail::gather_text(n, raw);
  return collapse_whitespace(raw);
}

}  // namespace longclip::util
