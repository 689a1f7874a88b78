#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "longclip/cli/config.hpp"
#include "longclip/data/benchmark.hpp"
#include "longclip/data/shards.hpp"
#include "longclip/data/synthetic.hpp"
#include "longclip/encoders/checkpoint.hpp"
#include "longclip/eval/retrieval.hpp"
#include "longclip/eval/zeroshot.hpp"
#include "longclip/experiment/ablation.hpp"
#include "longclip/longcap/http_backend.hpp"
#include "longclip/longcap/pipeline.hpp"
#include "longclip/tokenizer/token_stats.hpp"
#include "longclip/trainer/train.hpp"

namespace longclip::cli {

namespace fs = std::filesystem;

namespace detail {

// Every struct field reachable through a visitor becomes a key with the struct's default.
template <typename Config, typename Visit>
void add_struct_keys(std::vector<KeySpec>& keys, const Config& defaults, Visit visit, const std::string& help,
                     const std::set<std::string>& skip = {}) {
  for (const auto& [k, v] : util::to_kv(defaults, visit))
    if (!skip.count(k)) keys.push_back({k, v, help});
}

template <typename Config, typename Visit>
void apply_struct_keys(const RunConfig& cfg, Config& target, Visit visit) {
  visit(target, [&](const char* name, auto& field) {
    if (cfg.known(name)) field = cfg.get<std::remove_reference_t<decltype(field)>>(name);
  });
}

inline auto train_visit() {
  return [](auto& c, auto&& f) { trainer::visit_fields(c, f); };
}
inline auto synthetic_visit() {
  return [](auto& c, auto&& f) { data::visit_fields(c, f); };
}

inline void add_model_keys(std::vector<KeySpec>& keys, const encoders::TextEncoderConfig& t,
                    const encoders::ImageEncoderConfig& i) {
  keys.push_back({"embed_dim", std::to_string(t.embed_dim), "text transformer width"});
  keys.push_back({"num_layers", std::to_string(t.num_layers), "text transformer blocks"});
  keys.push_back({"num_heads", std::to_string(t.num_heads), "attention heads"});
  keys.push_back({"mlp_ratio", std::to_string(t.mlp_ratio), "feed-forward width multiple"});
  keys.push_back({"output_dim", std::to_string(t.output_dim), "shared embedding size"});
  keys.push_back({"image_hidden_dim", std::to_string(i.hidden_dim), "image tower width"});
  keys.push_back({"image_layers", std::to_string(i.num_layers), "image tower hidden layers"});
}

inline void apply_model_keys(const RunConfig& cfg, encoders::TextEncoderConfig& t, encoders::ImageEncoderConfig& i) {
  t.embed_dim = cfg.get<std::size_t>("embed_dim");
  t.num_layers = cfg.get<std::size_t>("num_layers");
  t.num_heads = cfg.get<std::size_t>("num_heads");
  t.mlp_ratio = cfg.get<std::size_t>("mlp_ratio");
  t.output_dim = cfg.get<std::size_t>("output_dim");
  i.hidden_dim = cfg.get<std::size_t>("image_hidden_dim");
  i.num_layers = cfg.get<std::size_t>("image_layers");
  i.output_dim = t.output_dim;
}

template <typename F>
void with_dtype(const RunConfig& cfg, F&& f) {
  const auto d = cfg.str("dtype");
  if (d == "float64") f.template operator()<double>();
  else if (d == "float32") f.template operator()<float>();
  else throw UsageError(cfg.origin("dtype") + ": '" + d + "' is not float32 or float64");
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline data::PairedCorpus load_corpus_key(const RunConfig& cfg, const std::string& key) {
  cfg.require_nonempty(key);
  data::CorpusFormat fmt;
  try {
    fmt = data::parse_corpus_format(cfg.str("format"));
  } catch (const UsageError& e) {
    throw UsageError(cfg.origin("format") + ": " + e.what());
  }
  return data::load_corpus(cfg.str(key), fmt);
}

// Loads --vocab when given; otherwise trains one on `captions`. Either way a copy lands in the run directory.
inline tokenizer::Vocab vocab_for(const RunConfig& cfg, std::span<const std::string> captions, const fs::path& out) {
  tokenizer::Vocab v = cfg.str("vocab").empty()
                           ? tokenizer::train_bpe(captions, cfg.get<std::size_t>("vocab_size"), cfg.get<std::uint64_t>("seed"))
                           : tokenizer::Vocab::load(cfg.str("vocab"));
  v.save(out / "vocab");
  return v;
}

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

struct Command {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
  std::function<void(const RunConfig&, const fs::path& out, std::ostream& log)> run;
};

inline Command tokenize_stats_command() {
  Command c{"tokenize-stats", "token-waste report for a caption corpus", {}, {}};
  c.keys = {{"corpus", "", "caption corpus", true},
            {"format", "records", "records, shards or text (one caption per line)"},
            {"vocab", "", "vocabulary directory; trained on the corpus when empty"},
            {"vocab_size", "8192", "size of a freshly trained vocabulary"},
            {"cutoff", "77", "context length whose truncation is measured"},
            {"seed", "0", "vocabulary training seed"}};
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.require_nonempty("corpus");
    std::vector<std::string> captions;
    if (cfg.str("format") == "text") captions = detail::read_lines(cfg.str("corpus"));
    else captions = detail::load_corpus_key(cfg, "corpus").captions();
    if (captions.empty()) throw UsageError("--corpus: " + cfg.str("corpus") + " holds no captions");
    const auto vocab = detail::vocab_for(cfg, captions, out);
    const auto cutoff = cfg.get<std::size_t>("cutoff");
    const auto lengths = tokenizer::caption_lengths(vocab, captions);
    const auto report = tokenizer::token_stats_from_lengths(lengths, cutoff);

    auto txt = detail::open_out(out / "token_stats.txt");
    tokenizer::write_report(txt, report);
    auto csv = detail::open_out(out / "token_stats.csv");
    csv << tokenizer::csv_header() << '\n';
    tokenizer::write_csv_row(csv, report);
    auto per = detail::open_out(out / "lengths.csv");
    per << "index,content_tokens,wasted_tokens\n";
    for (std::size_t i = 0; i < lengths.size(); ++i)
      per << i << ',' << lengths[i] << ',' << (lengths[i] > cutoff ? lengths[i] - cutoff : 0) << '\n';
    tokenizer::write_report(log, report);
  };
  return c;
}

inline Command train_command() {
  Command c{"train", "contrastive training on a paired corpus", {}, {}};
  c.keys = {{"corpus", "", "paired corpus", true},
            {"format", "records", "records or shards"},
            {"vocab", "", "vocabulary directory; trained on the corpus when empty"},
            {"vocab_size", "8192", "size of a freshly trained vocabulary"},
            {"dtype", "float64", "float64 or float32"}};
  detail::add_struct_keys(c.keys, trainer::TrainConfig{}, detail::train_visit(), "training setting");
  detail::add_model_keys(c.keys, encoders::TextEncoderConfig{}, encoders::ImageEncoderConfig{});
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto corpus = detail::load_corpus_key(cfg, "corpus");
    const auto captions = corpus.captions();
    const auto images = corpus.images();
    const auto vocab = detail::vocab_for(cfg, captions, out);
    trainer::TrainConfig tc;
    detail::apply_struct_keys(cfg, tc, detail::train_visit());
    encoders::TextEncoderConfig text;
    encoders::ImageEncoderConfig image;
    detail::apply_model_keys(cfg, text, image);
    text.context_length = tc.context_length;
    text.vocab_size = vocab.size();
    image.input_dim = corpus.image_dim();
    if (image.input_dim == 0) throw UsageError("--corpus: records carry no image features");

    detail::with_dtype(cfg, [&]<typename T>() {
      auto model = encoders::make_model<T>(text, image, tc.seed, tc.log_scale_init);
      const auto set = trainer::make_training_set(vocab, captions, images, tc.context_length);
      const auto res = trainer::train(tc, std::move(model), set);
      encoders::save_checkpoint(out / "checkpoint.bin", res.checkpoint);
      auto curve = detail::open_out(out / "loss_curve.csv");
      res.curve.write_csv(curve);
      const double threshold = std::log(static_cast<double>(tc.batch_size)) / 2.0;
      const auto reach = res.curve.steps_to_reach(threshold);
      const auto means = res.curve.epoch_means(res.steps_per_epoch);
      auto summary = detail::open_out(out / "train_summary.txt");
      for (auto* o : {static_cast<std::ostream*>(&summary), &log}) {
        *o << "steps = " << res.total_steps << '\n'
           << "steps_per_epoch = " << res.steps_per_epoch << '\n'
           << "warmup_steps = " << res.warmup_steps << '\n'
           << "first_epoch_loss = " << util::format_double(means.front()) << '\n'
           << "last_epoch_loss = " << util::format_double(means.back()) << '\n'
           << "loss_threshold = " << util::format_double(threshold) << '\n'
           << "steps_to_threshold = " << (reach ? std::to_string(*reach) : std::string("none")) << '\n';
      }
    });
  };
  return c;
}

inline Command eval_retrieval_command() {
  Command c{"eval-retrieval", "bidirectional Recall@K on a paired corpus", {}, {}};
  c.keys = {{"checkpoint", "", "trained checkpoint", true},
            {"vocab", "", "vocabulary directory used in training", true},
            {"corpus", "", "paired evaluation corpus", true},
            {"format", "records", "records or shards"},
            {"ks", "1,5,10", "comma-separated K values"},
            {"benchmark", "", "name in the result rows; defaults to the corpus file stem"},
            {"block_size", "256", "query rows per similarity block"},
            {"seed", "0", "recorded in the run directory name"}};
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.require_nonempty("checkpoint");
    cfg.require_nonempty("vocab");
    const auto ks = cfg.counts("ks");
    const auto corpus = detail::load_corpus_key(cfg, "corpus");
    const auto ckpt = encoders::load_checkpoint<double>(cfg.str("checkpoint"));
    const auto vocab = tokenizer::Vocab::load(cfg.str("vocab"));
    const std::string name = cfg.str("benchmark").empty() ? fs::path(cfg.str("corpus")).stem().string() : cfg.str("benchmark");
    const auto captions = corpus.captions();
    const auto images = corpus.images();
    const auto te = encoders::text_encode(ckpt.model, vocab, captions);
    const auto ie = encoders::image_encode(ckpt.model, std::span<const std::vector<double>>(images));
    const auto pair = eval::recall_pair(ie, te, ks, cfg.get<std::size_t>("block_size"));
    auto csv = detail::open_out(out / "retrieval.csv");
    eval::write_retrieval_csv_header(csv);
    eval::write_retrieval_csv(csv, name, pair.t2i);
    eval::write_retrieval_csv(csv, name, pair.i2t);
    auto summary = detail::open_out(out / "retrieval_summary.txt");
    eval::write_retrieval_summary(summary, name, pair);
    eval::write_retrieval_summary(log, name, pair);
  };
  return c;
}

inline Command eval_zeroshot_command() {
  Command c{"eval-zeroshot", "zero-shot multiple-choice accuracy", {}, {}};
  c.keys = {{"checkpoint", "", "trained checkpoint", true},
            {"vocab", "", "vocabulary directory used in training", true},
            {"tasks", "", "line-delimited items: image_ref, options, answer", true},
            {"images", "", "paired corpus whose record ids are the image refs", true},
            {"format", "records", "records or shards"},
            {"permute", "true", "shuffle each item's options before scoring"},
            {"seed", "0", "option permutation seed"}};
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.require_nonempty("checkpoint");
    cfg.require_nonempty("vocab");
    cfg.require_nonempty("tasks");
    const auto corpus = detail::load_corpus_key(cfg, "images");
    auto task = eval::read_zero_shot_tasks(cfg.str("tasks"));
    if (cfg.get<bool>("permute")) task = eval::permute_options(task, cfg.get<std::uint64_t>("seed"));
    const auto ckpt = encoders::load_checkpoint<double>(cfg.str("checkpoint"));
    const auto vocab = tokenizer::Vocab::load(cfg.str("vocab"));
    std::vector<std::vector<double>> feats;
    for (const auto& ref : task.image_refs) {
      const auto* r = corpus.find(ref);
      if (!r) throw UsageError("--images: no record with id '" + ref + "'");
      feats.push_back(r->image);
    }
    task.images = encoders::image_encode(ckpt.model, std::span<const std::vector<double>>(feats));
    const auto res = eval::zero_shot_classify(task, ckpt.model, vocab);
    auto pred = detail::open_out(out / "zeroshot_predictions.csv");
    pred << "image_ref,prediction,answer\n";
    for (std::size_t i = 0; i < task.size(); ++i)
      pred << task.image_refs[i] << ',' << res.predictions[i] << ',' << task.correct[i] << '\n';
    auto csv = detail::open_out(out / "zeroshot.csv");
    const std::string name = fs::path(cfg.str("tasks")).stem().string();
    csv << "task,items,accuracy\n" << name << ',' << task.size() << ',' << util::format_double(res.accuracy) << '\n';
    char line[96];
    std::snprintf(line, sizeof line, "%s: accuracy %.2f%% over %zu items\n", name.c_str(), 100.0 * res.accuracy, task.size());
    log << line;
  };
  return c;
}

inline Command longcap_command() {
  Command c{"longcap", "four-step caption augmentation against a generation backend", {}, {}};
  c.keys = {{"records", "", "line-delimited caption records", true},
            {"backend", "mock", "mock, or an http:// endpoint"},
            {"seed", "0", "mock backend seed"},
            {"max_in_flight", "4", "concurrent backend requests"},
            {"attempts", "3", "backend calls per request before the record fails"},
            {"timeout", "120", "HTTP timeout in seconds"},
            {"token_env", "LONGCLIP_BACKEND_TOKEN", "environment variable holding the bearer token"},
            {"prompts", "", "prompt template directory; built-in templates when empty"}};
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.require_nonempty("records");
    const auto records = longcap::read_caption_records(cfg.str("records"));
    std::unique_ptr<longcap::GenerationBackend> backend;
    const auto spec = cfg.str("backend");
    if (spec == "mock") {
      backend = std::make_unique<longcap::MockBackend>(cfg.get<std::uint64_t>("seed"));
    } else {
      try {
        backend = std::make_unique<longcap::HttpBackend>(
            longcap::HttpBackendOptions{spec, cfg.str("token_env"), cfg.get<double>("timeout")});
      } catch (const UsageError& e) {
        throw UsageError(cfg.origin("backend") + ": " + e.what());
      }
    }
    longcap::PipelineOptions opt;
    if (!cfg.str("prompts").empty()) opt.steps.templates = longcap::load_templates(cfg.str("prompts"));
    opt.steps.backend_attempts = cfg.get<std::size_t>("attempts");
    opt.max_in_flight = cfg.get<std::size_t>("max_in_flight");
    opt.journal = out / "journal.jsonl";
    longcap::save_templates(opt.steps.templates, out / "prompts");
    const auto result = longcap::run_pipeline(records, *backend, opt);
    longcap::write_longcap_output(result, out / "longcap.jsonl");

    double in_len = 0, out_len = 0;
    std::size_t n_done = 0;
    for (const auto& r : result.records) {
      if (!r.done) continue;
      in_len += static_cast<double>(r.original_caption.size());
      out_len += static_cast<double>(r.final_caption.size());
      ++n_done;
    }
    auto summary = detail::open_out(out / "longcap_summary.txt");
    for (auto* o : {static_cast<std::ostream*>(&summary), &log}) {
      *o << "records = " << result.records.size() << '\n'
         << "done = " << result.done_count() << '\n'
         << "failed = " << result.failed_count() << '\n'
         << "failure_rate = " << util::format_double(result.failure_rate()) << '\n'
         << "resumed = " << result.resumed << '\n'
         << "template_version = " << opt.steps.templates.version << '\n'
         << "backend = " << backend->descriptor() << '\n';
      if (n_done)
        *o << "mean_input_bytes = " << util::format_double(in_len / static_cast<double>(n_done)) << '\n'
           << "mean_output_bytes = " << util::format_double(out_len / static_cast<double>(n_done)) << '\n';
    }
    for (const auto& r : result.records)
      if (!r.done) log << "failed " << r.id << " at " << r.failed_stage << ": " << r.error << '\n';
  };
  return c;
}

inline Command make_synthetic_command() {
  Command c{"make-synthetic", "synthetic corpus whose class words lie beyond short context windows", {}, {}};
  c.keys = {{"seed", "0", "generator seed"},
            {"vocab_size", "8192", "vocabulary size trained on the captions"},
            {"galleries", "1", "held-out galleries with one item per class and detail"},
            {"format", "records", "records or shards"}};
  detail::add_struct_keys(c.keys, experiment::AblationConfig{}.spec, detail::synthetic_visit(), "synthetic corpus setting",
                          {"seed"});
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    data::SyntheticSpec spec;
    detail::apply_struct_keys(cfg, spec, detail::synthetic_visit());
    spec.seed = cfg.get<std::uint64_t>("seed");
    const auto d = data::generate_synthetic(spec);
    const auto vocab = data::synthetic_vocab(spec, d, cfg.get<std::size_t>("vocab_size"));
    vocab.save(out / "vocab");
    const auto fmt = data::parse_corpus_format(cfg.str("format"));
    if (fmt == data::CorpusFormat::records) data::save_records(d.corpus, out / "corpus.jsonl");
    else data::save_shards(d.corpus, out / "shards");
    const auto galleries = cfg.get<std::size_t>("galleries");
    for (std::size_t g = 0; g < galleries; ++g) {
      const auto gal = data::generate_synthetic_gallery(spec, g);
      char name[48];
      std::snprintf(name, sizeof name, "gallery-%03zu.jsonl", g);
      data::save_records(gal.corpus, out / name);
      if (g != 0) continue;
      // Zero-shot items over the first gallery: pick the class word among all class words.
      eval::ZeroShotTask task;
      std::vector<std::string> options;
      for (const auto& w : gal.words.classes) options.push_back(" " + w);
      for (std::size_t i = 0; i < gal.corpus.size(); ++i) {
        task.image_refs.push_back(gal.corpus.records()[i].id);
        task.options.push_back(options);
        task.correct.push_back(gal.class_labels[i]);
      }
      eval::write_zero_shot_tasks(task, out / "zeroshot_tasks.jsonl");
    }
    log << "pairs = " << d.corpus.size() << '\n'
        << "vocab_size = " << vocab.size() << '\n'
        << "caption_tokens = " << spec.caption_tokens() << '\n'
        << "galleries = " << galleries << '\n';
  };
  return c;
}

inline Command build_benchmark_command() {
  Command c{"build-benchmark", "one long-caption pair per article from article XML", {}, {}};
  c.keys = {{"articles", "", "directory of article XML files", true},
            {"seed", "0", "figure selection seed"},
            {"min_year", "0", "keep articles published in or after this year; 0 keeps all"}};
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.require_nonempty("articles");
    if (!fs::is_directory(cfg.str("articles"))) throw UsageError("--articles: " + cfg.str("articles") + " is not a directory");
    const auto articles = data::read_articles(cfg.str("articles"));
    data::BenchmarkOptions opt;
    opt.seed = cfg.get<std::uint64_t>("seed");
    if (const int y = cfg.get<int>("min_year"); y > 0) opt.min_year = y;
    const auto b = data::build_long_caption_benchmark(articles, opt);
    data::save_records(b.corpus, out / "benchmark.jsonl");
    auto manifest = detail::open_out(out / "manifest.csv");
    data::write_manifest(manifest, b.manifest);
    auto summary = detail::open_out(out / "benchmark_summary.txt");
    for (auto* o : {static_cast<std::ostream*>(&summary), &log}) {
      *o << "articles = " << articles.size() << '\n'
         << "pairs = " << b.corpus.size() << '\n'
         << "skipped_no_figures = " << b.skipped_no_figures << '\n'
         << "skipped_by_year = " << b.skipped_by_year << '\n'
         << "skipped_duplicate = " << b.skipped_duplicate << '\n';
    }
  };
  return c;
}

inline Command ablate_command() {
  const experiment::AblationConfig defaults;
  Command c{"ablate", "train and evaluate across context lengths on the synthetic corpus", {}, {}};
  c.keys = {{"seed", "0", "seed for data, initialization and batch order"},
            {"contexts", "77,154,512", "comma-separated context lengths"},
            {"ks", "1,5,10", "comma-separated K values"},
            {"eval_galleries", std::to_string(defaults.eval_galleries), "held-out galleries averaged per context"},
            {"vocab_size", std::to_string(defaults.vocab_size), "vocabulary size trained on the captions"},
            {"dtype", "float32", "float64 or float32"}};
  detail::add_struct_keys(c.keys, defaults.spec, detail::synthetic_visit(), "synthetic corpus setting", {"seed"});
  detail::add_struct_keys(c.keys, defaults.train, detail::train_visit(), "training setting", {"seed", "context_length"});
  detail::add_model_keys(c.keys, defaults.text, defaults.image);
  c.run = [](const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    experiment::AblationConfig ac;
    detail::apply_struct_keys(cfg, ac.spec, detail::synthetic_visit());
    detail::apply_struct_keys(cfg, ac.train, detail::train_visit());
    detail::apply_model_keys(cfg, ac.text, ac.image);
    ac.seed = cfg.get<std::uint64_t>("seed");
    ac.contexts = cfg.counts("contexts");
    ac.ks = cfg.counts("ks");
    ac.eval_galleries = cfg.get<std::size_t>("eval_galleries");
    ac.vocab_size = cfg.get<std::size_t>("vocab_size");
    ac.image.input_dim = ac.spec.image_dim;

    experiment::AblationHooks hooks;
    hooks.on_context_start = [&](std::size_t ctx) { log << "context " << ctx << ": training\n" << std::flush; };
    experiment::AblationResult r;
    detail::with_dtype(cfg, [&]<typename T>() { r = experiment::run_ablation<T>(ac, hooks); });

    auto cmp = detail::open_out(out / "comparison.csv");
    experiment::write_comparison_header(cmp);
    experiment::write_comparison_rows(cmp, r);
    auto conv = detail::open_out(out / "convergence.csv");
    experiment::write_convergence_header(conv);
    experiment::write_convergence_rows(conv, r);
    auto steps = detail::open_out(out / "steps_to_threshold.csv");
    experiment::write_steps_header(steps);
    experiment::write_steps_rows(steps, r);
    auto panel = detail::open_out(out / "panel.txt");
    experiment::write_panel(panel, r);
    experiment::write_panel(log, r);
  };
  return c;
}

inline std::vector<Command> commands() {
  return {tokenize_stats_command(), train_command(),         eval_retrieval_command(), eval_zeroshot_command(),
          longcap_command(),        make_synthetic_command(), build_benchmark_command(), ablate_command()};
}

inline std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

// Parses argv, runs one command and returns the process exit code: 0 on success,
// 2 for usage errors, 1 for anything else. Failures print one diagnostic line to `err`.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"longclip: long-context contrastive vision-language laboratory", "longclip"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  struct Bound {
    Command cmd;
    CLI::App* sub = nullptr;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string config;
    std::string out;
  };
  std::vector<Bound> bound;
  for (auto& cmd : commands()) bound.push_back({std::move(cmd)});
  for (auto& b : bound) {
    b.sub = app.add_subcommand(b.cmd.name, b.cmd.help);
    b.sub->add_option("--config", b.config, "flat key = value file; overridden by LONGCLIP_CFG_* and flags");
    b.sub->add_option("--out", b.out, "run directory; default runs/<command>-<timestamp>-seed<seed>");
    for (const auto& k : b.cmd.keys) {
      std::string help = k.help;
      if (!k.default_value.empty()) help += " (default " + k.default_value + ")";
      if (k.required) help += " (required)";
      b.options[k.name] = b.sub->add_option(flag_name(k.name), b.values[k.name], help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    log << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "longclip: error: " << one_line(e.what()) << '\n';
    return 2;
  }

  for (auto& b : bound) {
    if (!b.sub->parsed()) continue;
    try {
      RunConfig cfg(b.cmd.keys);
      std::map<std::string, std::string> flags;
      for (const auto& [name, opt] : b.options)
        if (opt->count() > 0) flags[name] = b.values[name];
      merge_config(cfg, b.config.empty() ? std::nullopt : std::optional<fs::path>(b.config), flags);
      for (const auto& k : b.cmd.keys)
        if (k.required) cfg.require_nonempty(k.name);
      const fs::path out = b.out.empty() ? default_run_dir(b.cmd.name, cfg.str("seed")) : fs::path(b.out);
      prepare_run_dir(out, cfg, b.cmd.name);
      b.cmd.run(cfg, out, log);
      log << "wrote " << out.string() << '\n';
      return 0;
    } catch (const UsageError& e) {
      err << "longclip " << b.cmd.name << ": error: " << one_line(e.what()) << '\n';
      return 2;
    } catch (const std::exception& e) {
      err << "longclip " << b.cmd.name << ": error: " << one_line(e.what()) << '\n';
      return 1;
    }
  }
  return 2;
}

}  // namespace longclip::cli
