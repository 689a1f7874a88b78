#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "longclip/data/corpus.hpp"
#include "longclip/util/seed.hpp"
#include "longclip/util/xml.hpp"

namespace longclip::data {

struct Figure {
  std::string id;
  std::string caption;
  std::string graphic;                        // image reference, as found in the article
  std::vector<std::string> inline_references;  // body paragraphs citing this figure, document order
};

struct Article {
  std::string id;
  int year = 0;  // 0 when the article carries no publication year
  std::string title;
  std::vector<Figure> figures;
};

namespace detail {

inline std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string id; in >> id;) out.push_back(id);
  return out;
}

inline int parse_year(const std::string& s) {
  try {
    return std::stoi(s);
  } catch (...) {
    return 0;
  }
}

}  // namespace detail

// Minimal JATS reader: article id, earliest publication year, figures with captions,
// and the body paragraphs that cross-reference each figure.
inline Article parse_article_xml(const std::string& xml, const std::string& where) {
  using namespace util;
  XmlDocument doc(xml, where);
  const XmlNode* root = doc.root();
  if (!root || name_of(root) != "article") throw ParseError(where, "root element is not <article>");
  Article a;

  if (const XmlNode* meta = first_descendant(root, "article-meta")) {
    std::string fallback;
    for (const XmlNode* id : children(meta, "article-id")) {
      const auto type = attr(id, "pub-id-type");
      if (type == "pmc" || type == "pmcid") a.id = text_of(id);
      if (fallback.empty()) fallback = text_of(id);
    }
    if (a.id.empty()) a.id = fallback;
    for (const XmlNode* date : children(meta, "pub-date")) {
      if (const XmlNode* y = first_descendant(date, "year")) {
        const int year = detail::parse_year(text_of(y));
        if (year > 0 && (a.year == 0 || year < a.year)) a.year = year;
      }
    }
    if (const XmlNode* t = first_descendant(meta, "article-title")) a.title = text_of(t);
  }
  if (a.id.empty()) throw ParseError(where, "article has no <article-id>");

  for_each_element(root, [&](const XmlNode* n) {
    if (name_of(n) != "fig") return;
    Figure f;
    f.id = attr(n, "id");
    if (const XmlNode* c = first_descendant(n, "caption")) f.caption = text_of(c);
    if (const XmlNode* g = first_descendant(n, "graphic")) f.graphic = attr(g, "xlink:href");
    if (f.id.empty()) f.id = "fig" + std::to_string(a.figures.size() + 1);
    a.figures.push_back(std::move(f));
  });

  if (const XmlNode* body = first_descendant(root, "body")) {
    for_each_element(body, [&](const XmlNode* p) {
      if (name_of(p) != "p") return;
      std::set<std::string> cited;
      for_each_element(p, [&](const XmlNode* x) {
        if (name_of(x) == "xref" && attr(x, "ref-type") == "fig")
          for (auto& id : detail::split_ids(attr(x, "rid"))) cited.insert(id);
      });
      if (cited.empty()) return;
      const std::string text = text_of(p);
      for (auto& f : a.figures) {
        if (cited.count(f.id) &&
            std::find(f.inline_references.begin(), f.inline_references.end(), text) == f.inline_references.end())
          f.inline_references.push_back(text);
      }
    });
  }
  return a;
}

inline Article read_article(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_article_xml(ss.str(), path.string());
}

// Every *.nxml or *.xml file in `dir`, in file-name order.
inline std::vector<Article> read_articles(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".nxml" || ext == ".xml")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Article> out;
  for (const auto& f : files) out.push_back(read_article(f));
  return out;
}

struct BenchmarkOptions {
  std::uint64_t seed = 0;
  std::optional<int> min_year;  // keep only articles published in or after this year
  // Supplies image features for the chosen figure. Without it records carry no features.
  std::function<std::vector<double>(const Article&, const Figure&)> features;
};

struct ManifestRow {
  std::string id;
  std::string article_id;
  std::size_t caption_length = 0;  // bytes
};

struct Benchmark {
  PairedCorpus corpus;
  std::vector<ManifestRow> manifest;
  std::size_t skipped_no_figures = 0;
  std::size_t skipped_by_year = 0;
  std::size_t skipped_duplicate = 0;
};

inline std::string long_caption(const Figure& f) {
  std::string out;
  for (const auto& r : f.inline_references) {
    out += r;
    out += "\n\n";
  }
  return out + f.caption;
}

// One pair per article: a seeded figure choice whose caption is prefixed by its inline references.
inline Benchmark build_long_caption_benchmark(const std::vector<Article>& articles, const BenchmarkOptions& opt = {}) {
  Benchmark b;
  std::set<std::string> used;
  for (const auto& a : articles) {
    if (opt.min_year && a.year < *opt.min_year) {
      ++b.skipped_by_year;
      continue;
    }
    std::vector<const Figure*> usable;
    for (const auto& f : a.figures)
      if (!f.caption.empty()) usable.push_back(&f);
    if (usable.empty()) {
      ++b.skipped_no_figures;
      continue;
    }
    if (!used.insert(a.id).second) {
      ++b.skipped_duplicate;
      continue;
    }
    // Keyed by article id, so one article's pick does not depend on the rest of the list.
    const Figure& f = *usable[util::stream_seed(opt.seed, "benchmark/" + a.id) % usable.size()];
    PairRecord r;
    r.id = a.id + "-" + f.id;
    std::replace_if(r.id.begin(), r.id.end(), [](char c) { return c == '.' || c == '/' || c == ' '; }, '_');
    r.caption = long_caption(f);
    if (opt.features) r.image = opt.features(a, f);
    r.context = {{"article_id", a.id}, {"figure_id", f.id}, {"original_caption", f.caption}};
    if (!f.graphic.empty()) r.context["image_ref"] = f.graphic;
    if (a.year) r.context["year"] = std::to_string(a.year);
    b.manifest.push_back({r.id, a.id, r.caption.size()});
    b.corpus.add(std::move(r));
  }
  return b;
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestRow>& rows) {
  out << "id,article_id,caption_length\n";
  for (const auto& r : rows) out << r.id << ',' << r.article_id << ',' << r.caption_length << '\n';
}

}  // namespace longclip::data
