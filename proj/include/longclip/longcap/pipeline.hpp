#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "longclip/longcap/steps.hpp"

namespace longclip::longcap {

inline constexpr const char* kStageInput = "input";
inline constexpr const char* kStageAugment = "augment";
inline constexpr const char* kStageFeasibility = "feasibility";
inline constexpr const char* kStageRefine = "refine";
inline constexpr const char* kStageAcronyms = "acronyms";

struct RecordOutcome {
  std::string id;
  std::string image_ref;
  std::string original_caption;
  bool done = false;
  std::string failed_stage;  // empty when done
  std::string error;
  std::string augmented;
  FeasibilityReport report;
  std::string refined;
  std::string final_caption;
  std::size_t feasibility_repairs = 0;
  std::size_t refine_repairs = 0;
  bool low_content = false;
  std::string template_version;
  std::string backend;

  friend bool operator==(const RecordOutcome&, const RecordOutcome&) = default;
};

inline nlohmann::json to_json(const RecordOutcome& o) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : o.report.features)
    features.push_back({{"text", f.text}, {"label", label_name(f.label)}, {"rationale", f.rationale}});
  return {{"id", o.id},
          {"image_ref", o.image_ref},
          {"status", o.done ? "done" : "failed"},
          {"failed_stage", o.failed_stage},
          {"error", o.error},
          {"original_caption", o.original_caption},
          {"augmented", o.augmented},
          {"features", features},
          {"refined", o.refined},
          {"caption", o.final_caption},
          {"feasibility_repairs", o.feasibility_repairs},
          {"refine_repairs", o.refine_repairs},
          {"low_content", o.low_content},
          {"template_version", o.template_version},
          {"backend", o.backend}};
}

inline RecordOutcome outcome_from_json(const nlohmann::json& j) {
  RecordOutcome o;
  o.id = j.at("id").get<std::string>();
  o.image_ref = j.at("image_ref").get<std::string>();
  const auto status = j.at("status").get<std::string>();
  if (status != "done" && status != "failed") throw ParseError("", "bad status '" + status + "'");
  o.done = status == "done";
  o.failed_stage = j.at("failed_stage").get<std::string>();
  o.error = j.at("error").get<std::string>();
  o.original_caption = j.at("original_caption").get<std::string>();
  o.augmented = j.at("augmented").get<std::string>();
  for (const auto& f : j.at("features")) {
    const auto label = f.at("label").get<std::string>();
    if (label != "FEASIBLE" && label != "NOT_FEASIBLE") throw ParseError("", "bad label '" + label + "'");
    o.report.features.push_back({f.at("text").get<std::string>(),
                                 label == "FEASIBLE" ? Label::feasible : Label::not_feasible,
                                 f.at("rationale").get<std::string>()});
  }
  o.refined = j.at("refined").get<std::string>();
  o.final_caption = j.at("caption").get<std::string>();
  o.feasibility_repairs = j.at("feasibility_repairs").get<std::size_t>();
  o.refine_repairs = j.at("refine_repairs").get<std::size_t>();
  o.low_content = j.at("low_content").get<bool>();
  o.template_version = j.at("template_version").get<std::string>();
  o.backend = j.at("backend").get<std::string>();
  return o;
}

// The four steps in order. Step failures are recorded in the outcome; anything else propagates.
inline RecordOutcome process_record(const CaptionRecord& record, GenerationBackend& backend,
                                    const StepOptions& opt = {}) {
  RecordOutcome o;
  o.id = record.id;
  o.image_ref = record.image_ref;
  o.original_caption = record.caption;
  o.template_version = opt.templates.version;
  o.backend = backend.descriptor();
  std::string stage = kStageInput;
  try {
    record.validate();
    stage = kStageAugment;
    o.augmented = augment_caption(record, backend, opt);
    stage = kStageFeasibility;
    auto feas = assess_feasibility(record.image_ref, o.augmented, backend, opt);
    o.report = std::move(feas.report);
    o.feasibility_repairs = feas.repairs;
    stage = kStageRefine;
    auto ref = refine_caption(record.image_ref, o.augmented, o.report, backend, opt);
    o.refined = ref.caption;
    o.refine_repairs = ref.repairs;
    o.low_content = ref.low_content;
    stage = kStageAcronyms;
    o.final_caption = expand_acronyms(o.refined, record.acronym_map);
    o.done = true;
  } catch (const StepFailure& e) {
    o.failed_stage = e.stage();
    o.error = e.what();
    if (e.stage() == kStageFeasibility) o.feasibility_repairs = e.repairs();
    if (e.stage() == kStageRefine) o.refine_repairs = e.repairs();
  } catch (const UsageError& e) {
    o.failed_stage = stage;
    o.error = e.what();
  }
  return o;
}

// Append-only status log: one outcome per line, later lines win. A torn final line from an
// interrupted run is ignored; damage anywhere else is an error.
inline std::map<std::string, RecordOutcome> read_journal(const std::filesystem::path& path) {
  std::map<std::string, RecordOutcome> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      auto o = outcome_from_json(nlohmann::json::parse(lines[i]));
      out[o.id] = std::move(o);
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) break;
      throw ParseError(path.string() + ":" + std::to_string(i + 1), std::string("bad journal entry: ") + e.what());
    }
  }
  return out;
}

// Cuts a partially written last line so new entries start on a fresh line.
inline void drop_torn_tail(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size == 0) return;
  std::ifstream in(path, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), {});
  in.close();
  if (data.back() == '\n') return;
  const auto last = data.rfind('\n');
  std::filesystem::resize_file(path, last == std::string::npos ? 0 : last + 1);
}

struct PipelineOptions {
  StepOptions steps;
  std::size_t max_in_flight = 4;  // worker threads, so also the bound on concurrent backend requests
  std::filesystem::path journal;  // empty: no persistence and no resume
  std::function<void(const RecordOutcome&)> on_record;
};

struct LongCapCorpus {
  std::vector<RecordOutcome> records;  // sorted by id
  std::size_t resumed = 0;             // taken from the journal without new requests

  std::size_t done_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.done; }));
  }
  std::size_t failed_count() const { return records.size() - done_count(); }
  double failure_rate() const {
    return records.empty() ? 0.0 : static_cast<double>(failed_count()) / static_cast<double>(records.size());
  }
};

inline LongCapCorpus run_pipeline(const std::vector<CaptionRecord>& corpus, GenerationBackend& backend,
                                  const PipelineOptions& opt = {}) {
  if (corpus.empty()) throw UsageError("run_pipeline: corpus is empty");
  if (opt.max_in_flight == 0) throw UsageError("run_pipeline: max_in_flight must be at least 1");
  std::set<std::string> ids;
  for (const auto& r : corpus)
    if (!ids.insert(r.id).second) throw UsageError("run_pipeline: duplicate id '" + r.id + "'");

  std::map<std::string, RecordOutcome> finished;
  if (!opt.journal.empty()) {
    for (auto& [id, o] : read_journal(opt.journal))
      if (o.done && ids.count(id)) finished.emplace(id, std::move(o));
  }
  LongCapCorpus result;
  result.resumed = finished.size();

  std::vector<const CaptionRecord*> pending;
  for (const auto& r : corpus)
    if (!finished.count(r.id)) pending.push_back(&r);
  std::sort(pending.begin(), pending.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  std::ofstream journal;
  if (!opt.journal.empty()) {
    if (opt.journal.has_parent_path()) std::filesystem::create_directories(opt.journal.parent_path());
    drop_torn_tail(opt.journal);
    journal.open(opt.journal, std::ios::binary | std::ios::app);
    if (!journal) throw IoError("cannot append to journal " + opt.journal.string());
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr fatal;
  auto worker = [&] {
    while (!stop) {
      const std::size_t i = next++;
      if (i >= pending.size()) return;
      try {
        auto o = process_record(*pending[i], backend, opt.steps);
        std::lock_guard lock(mu);
        if (journal.is_open()) {
          journal << to_json(o).dump() << '\n';
          journal.flush();
        }
        if (opt.on_record) opt.on_record(o);
        finished.emplace(o.id, std::move(o));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        stop = true;
      }
    }
  };
  const std::size_t n_threads = std::min(opt.max_in_flight, pending.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  for (auto& [id, o] : finished) result.records.push_back(std::move(o));  // map order is id order
  return result;
}

inline void write_longcap_output(const LongCapCorpus& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : c.records) out << to_json(r).dump() << '\n';
}

}  // namespace longclip::longcap
