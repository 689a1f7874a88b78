#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "longclip/cli/app.hpp"

using namespace longclip;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = LONGCLIP_FIXTURES;

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("longclip_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "longclip");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

util::KeyValues read_kv(const fs::path& p) { return util::read_kv_file(p); }

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Cli, TokenizeStatsMatchesRecount) {
  const auto dir = temp_dir("tokstats");
  const auto r = run({"tokenize-stats", "--corpus", (kFixtures / "captions.txt").string(), "--format", "text",
                      "--vocab-size", "400", "--cutoff", "20", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;

  // Recount from the saved vocabulary through encode() rather than the stats code path.
  const auto vocab = tokenizer::Vocab::load(dir / "vocab");
  std::size_t total = 0, wasted = 0, n = 0, lo = SIZE_MAX, hi = 0;
  for (const auto& line : lines_of(kFixtures / "captions.txt")) {
    const auto seq = tokenizer::encode(vocab, line, 4096);
    ASSERT_FALSE(seq.truncated);
    total += seq.full_length;
    wasted += seq.full_length > 20 ? seq.full_length - 20 : 0;
    lo = std::min(lo, seq.full_length);
    hi = std::max(hi, seq.full_length);
    ++n;
  }
  ASSERT_GT(wasted, 0u);
  const auto kv = read_kv(dir / "token_stats.txt");
  EXPECT_EQ(kv.at("captions"), std::to_string(n));
  EXPECT_EQ(kv.at("cutoff"), "20");
  EXPECT_EQ(kv.at("total_tokens"), std::to_string(total));
  EXPECT_EQ(kv.at("wasted_tokens"), std::to_string(wasted));
  EXPECT_EQ(std::stod(kv.at("waste_fraction")), static_cast<double>(wasted) / static_cast<double>(total));
  EXPECT_EQ(kv.at("min_length"), std::to_string(lo));
  EXPECT_EQ(kv.at("max_length"), std::to_string(hi));

  const auto csv = lines_of(dir / "token_stats.csv");
  ASSERT_EQ(csv.size(), 2u);
  EXPECT_EQ(csv[1].rfind("20," + std::to_string(n) + "," + std::to_string(total) + "," + std::to_string(wasted) + ",", 0), 0u);
}

TEST(Cli, RecordsCorpusTokenStats) {
  const auto dir = temp_dir("tokstats_records");
  const auto r = run({"tokenize-stats", "--corpus", (kFixtures / "corpus3.jsonl").string(), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_kv(dir / "token_stats.txt").at("captions"), "3");
}

TEST(Cli, WritesConfigAndVersion) {
  const auto dir = temp_dir("echo");
  ASSERT_EQ(run({"tokenize-stats", "--corpus", (kFixtures / "corpus3.jsonl").string(), "--cutoff", "33", "--out",
                 dir.string()})
                .code,
            0);
  EXPECT_EQ(slurp(dir / "VERSION"), std::string(kVersion) + "\n");
  const auto cfg = read_kv(dir / "config.txt");
  EXPECT_EQ(cfg.at("cutoff"), "33");
  EXPECT_EQ(cfg.at("vocab_size"), "8192");
  EXPECT_EQ(cfg.count("out"), 0u);
}

TEST(Cli, EchoedConfigReplays) {
  const auto a = temp_dir("replay_a");
  const auto b = temp_dir("replay_b");
  ASSERT_EQ(run({"tokenize-stats", "--corpus", (kFixtures / "captions.txt").string(), "--format", "text",
                 "--vocab-size", "300", "--cutoff", "12", "--out", a.string()})
                .code,
            0);
  ASSERT_EQ(run({"tokenize-stats", "--config", (a / "config.txt").string(), "--out", b.string()}).code, 0);
  EXPECT_EQ(slurp(a / "token_stats.txt"), slurp(b / "token_stats.txt"));
  EXPECT_EQ(slurp(a / "config.txt"), slurp(b / "config.txt"));
}

TEST(Cli, PrecedenceFileEnvFlag) {
  cli::RunConfig cfg({{"cutoff", "77", ""}, {"seed", "0", ""}, {"vocab_size", "8192", ""}});
  const auto dir = temp_dir("precedence");
  {
    std::ofstream f(dir / "c.cfg");
    f << "cutoff = 10\nseed = 1\nvocab_size = 300\n";
  }
  cli::merge_config(cfg, dir / "c.cfg", {{"cutoff", "30"}},
                    std::map<std::string, std::string>{{"LONGCLIP_CFG_CUTOFF", "20"}, {"LONGCLIP_CFG_SEED", "2"},
                                                       {"UNRELATED", "x"}});
  EXPECT_EQ(cfg.get<std::size_t>("cutoff"), 30u);   // flag beats env and file
  EXPECT_EQ(cfg.get<std::size_t>("seed"), 2u);      // env beats file
  EXPECT_EQ(cfg.get<std::size_t>("vocab_size"), 300u);  // file beats default
  EXPECT_EQ(cfg.origin("cutoff"), "--cutoff");
  EXPECT_EQ(cfg.origin("seed"), "LONGCLIP_CFG_SEED");
}

TEST(Cli, EnvironmentReachesCommands) {
  const auto dir = temp_dir("env");
  ::setenv("LONGCLIP_CFG_CUTOFF", "15", 1);
  const auto r = run({"tokenize-stats", "--corpus", (kFixtures / "corpus3.jsonl").string(), "--out", dir.string()});
  ::unsetenv("LONGCLIP_CFG_CUTOFF");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_kv(dir / "config.txt").at("cutoff"), "15");
}

TEST(Cli, UnknownKeysRejected) {
  const auto dir = temp_dir("unknown");
  {
    std::ofstream f(dir / "bad.cfg");
    f << "cutof = 10\n";
  }
  auto r = run({"tokenize-stats", "--corpus", "x", "--config", (dir / "bad.cfg").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown config key 'cutof'"), std::string::npos) << r.err;

  ::setenv("LONGCLIP_CFG_NOT_A_KEY", "1", 1);
  r = run({"tokenize-stats", "--corpus", "x", "--out", dir.string()});
  ::unsetenv("LONGCLIP_CFG_NOT_A_KEY");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("LONGCLIP_CFG_NOT_A_KEY"), std::string::npos) << r.err;

  r = run({"tokenize-stats", "--corpus", "x", "--not-a-flag", "1"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("--not-a-flag"), std::string::npos) << r.err;

  // A flag that belongs to another command is unknown here.
  r = run({"ablate", "--context-length", "77"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("--context-length"), std::string::npos) << r.err;
}

TEST(Cli, DiagnosticsNameTheFlag) {
  const auto dir = temp_dir("diag");
  auto r = run({"train", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err, "longclip train: error: missing required --corpus\n");

  r = run({"eval-retrieval", "--corpus", "c", "--vocab", "v", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);

  r = run({"tokenize-stats", "--corpus", (kFixtures / "corpus3.jsonl").string(), "--cutoff", "-3", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--cutoff"), std::string::npos);

  r = run({"eval-retrieval", "--checkpoint", "c", "--vocab", "v", "--corpus", "x", "--ks", "1,five", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--ks"), std::string::npos);

  r = run({"longcap", "--records", (kFixtures / "longcap10.jsonl").string(), "--backend", "https://example.org",
           "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--backend"), std::string::npos);

  r = run({"tokenize-stats", "--corpus", (dir / "missing.jsonl").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 1);

  r = run({});
  EXPECT_EQ(r.code, 2);
  for (const auto* e : {&r.err}) EXPECT_EQ(std::count(e->begin(), e->end(), '\n'), 1);
}

TEST(Cli, DefaultRunDirectoryName) {
  const auto p = cli::default_run_dir("ablate", "7");
  EXPECT_EQ(p.parent_path(), fs::path("runs"));
  EXPECT_TRUE(std::regex_match(p.filename().string(), std::regex(R"(ablate-\d{8}T\d{6}Z-seed7)"))) << p;
}

TEST(Cli, SyntheticTrainEvalComposeThroughFiles) {
  const auto dir = temp_dir("compose");
  ASSERT_EQ(run({"make-synthetic", "--samples-per-class", "8", "--galleries", "1", "--out", (dir / "syn").string()}).code, 0);
  const std::vector<std::string> train_args{"train",        "--corpus",      (dir / "syn/corpus.jsonl").string(),
                                            "--vocab",      (dir / "syn/vocab").string(),
                                            "--context-length", "170",   "--batch-size", "16",
                                            "--max-epochs", "2",         "--embed-dim",  "16",
                                            "--num-heads",  "2",         "--num-layers", "1",
                                            "--seed",       "3"};
  auto a = train_args, b = train_args;
  a.insert(a.end(), {"--out", (dir / "train_a").string()});
  b.insert(b.end(), {"--out", (dir / "train_b").string()});
  auto r = run(a);
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(run(b).code, 0);

  // Loss curves agree bit for bit apart from the wall-clock column.
  const auto ca = lines_of(dir / "train_a/loss_curve.csv");
  const auto cb = lines_of(dir / "train_b/loss_curve.csv");
  ASSERT_EQ(ca.size(), cb.size());
  EXPECT_EQ(ca.front(), "step,loss,lr,seconds");
  for (std::size_t i = 1; i < ca.size(); ++i)
    EXPECT_EQ(ca[i].substr(0, ca[i].rfind(',')), cb[i].substr(0, cb[i].rfind(',')));
  EXPECT_EQ(slurp(dir / "train_a/checkpoint.bin"), slurp(dir / "train_b/checkpoint.bin"));

  r = run({"eval-retrieval", "--checkpoint", (dir / "train_a/checkpoint.bin").string(), "--vocab",
           (dir / "train_a/vocab").string(), "--corpus", (dir / "syn/gallery-000.jsonl").string(), "--out",
           (dir / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(dir / "eval/retrieval.csv");
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], "benchmark,direction,K,recall");
  EXPECT_EQ(rows[1].rfind("gallery-000,t2i,1,", 0), 0u);

  r = run({"eval-zeroshot", "--checkpoint", (dir / "train_a/checkpoint.bin").string(), "--vocab",
           (dir / "train_a/vocab").string(), "--tasks", (dir / "syn/zeroshot_tasks.jsonl").string(), "--images",
           (dir / "syn/gallery-000.jsonl").string(), "--out", (dir / "zs").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines_of(dir / "zs/zeroshot_predictions.csv").size(), 41u);
}

TEST(Cli, AblateTwiceIdenticalTables) {
  const auto dir = temp_dir("ablate");
  const std::vector<std::string> args{"ablate",           "--contexts", "77,154", "--seed", "1", "--samples-per-class",
                                      "16",               "--max-epochs", "2",    "--eval-galleries", "1"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", (dir / "a").string()});
  b.insert(b.end(), {"--out", (dir / "b").string()});
  const auto r = run(a);
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(run(b).code, 0);
  for (const auto* f : {"comparison.csv", "convergence.csv", "steps_to_threshold.csv", "panel.txt"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  const auto cmp = lines_of(dir / "a/comparison.csv");
  EXPECT_EQ(cmp.size(), 1u + 2 * 2 * 3);
  EXPECT_EQ(cmp[0], "seed,context_length,direction,K,recall");
}

TEST(Cli, LongcapResumesInSameRunDirectory) {
  const auto dir = temp_dir("longcap");
  auto r = run({"longcap", "--records", (kFixtures / "longcap10.jsonl").string(), "--seed", "7", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto first = slurp(dir / "longcap.jsonl");
  EXPECT_NE(r.out.find("done = 10"), std::string::npos);
  r = run({"longcap", "--records", (kFixtures / "longcap10.jsonl").string(), "--seed", "7", "--out", dir.string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("resumed = 10"), std::string::npos);
  EXPECT_EQ(slurp(dir / "longcap.jsonl"), first);
  EXPECT_TRUE(fs::exists(dir / "prompts/VERSION"));
}

TEST(Cli, BuildBenchmark) {
  const auto dir = temp_dir("bench");
  const auto r = run({"build-benchmark", "--articles", (kFixtures / "articles").string(), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest = lines_of(dir / "manifest.csv");
  ASSERT_EQ(manifest.size(), 4u);  // header plus three articles with figures
  EXPECT_EQ(manifest[0], "id,article_id,caption_length");
  EXPECT_EQ(read_kv(dir / "benchmark_summary.txt").at("skipped_no_figures"), "1");
}

TEST(Cli, ExecutableExitCodes) {
  const std::string exe = LONGCLIP_CLI;
  EXPECT_EQ(std::system((exe + " --version > /dev/null").c_str()), 0);
  EXPECT_NE(std::system((exe + " train > /dev/null 2>&1").c_str()), 0);
  EXPECT_NE(std::system((exe + " no-such-command > /dev/null 2>&1").c_str()), 0);
}
