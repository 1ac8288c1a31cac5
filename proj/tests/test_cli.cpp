#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "idn/checkpoint.hpp"
#include "idn/commands.hpp"

using namespace idn;
namespace fs = std::filesystem;

namespace {

const fs::path kGolden = IDN_TEST_GOLDEN_DIR;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("idn_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code = -1;
  std::string out, err;
};

/// Runs the built tool with `args`, capturing stdout, stderr and the exit code.
Run idn_tool(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + IDN_CLI_PATH + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

/// Small, fast dataset settings: 3 classes, 8-dimensional features.
/// `extra` holds key=value lines that replace or add to the defaults.
fs::path write_config(const fs::path& dir, const std::string& extra = {}) {
  fs::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> keys{
      {"T", "5"},          {"hidden", "6"},         {"embed", "6"},
      {"batch_size", "16"}, {"lr", "0.1"},           {"epochs", "2"},
      {"classes", "3"},    {"feature_dim", "8"},    {"noise_sigma", "1"},
      {"sequence_length", "100"}, {"chunks", "600"}, {"min_run", "1"},
      {"max_run", "6"},    {"epoch_mcap", "false"}};
  std::istringstream in(extra);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    auto it = std::ranges::find(keys, k, &std::pair<std::string, std::string>::first);
    if (it == keys.end()) keys.emplace_back(k, v);
    else it->second = v;
  }
  const auto path = dir / "run.cfg";
  std::ofstream out(path);
  for (const auto& [k, v] : keys) out << k << '=' << v << '\n';
  return path;
}

std::set<std::string> param_names(const Model& m) {
  std::set<std::string> out;
  for (const auto& v : m.param_views()) out.emplace(v.name);
  return out;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    rows.push_back(f);
  }
  return rows;
}

}  // namespace

TEST(Gen, DefaultConfigWritesManifestWithBothSplits) {
  const auto dir = scratch("gen_default");
  const auto r = idn_tool("gen --out \"" + (dir / "data").string() + "\"", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_manifest(dir / "data" / "manifest.txt");
  ASSERT_EQ(m.files.size(), 2u);
  EXPECT_EQ(m.files[0].split, "train");
  EXPECT_EQ(m.files[1].split, "eval");
  EXPECT_EQ(m.chunks, SyntheticSpec{}.total_chunks);
  EXPECT_NE(r.out.find("wrote 5000 chunks"), std::string::npos) << r.out;
}

TEST(Gen, SameSeedGivesByteIdenticalFiles) {
  const auto dir = scratch("gen_twice");
  const auto cfg = write_config(dir);
  for (const char* sub : {"a", "b"}) {
    const auto r = idn_tool("gen --config \"" + cfg.string() + "\" --seed 9 --out \"" +
                                (dir / sub).string() + "\"",
                            dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"manifest.txt", "train.tsv", "eval.tsv"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  const auto r = idn_tool("gen --config \"" + cfg.string() + "\" --seed 10 --out \"" +
                              (dir / "c").string() + "\"",
                          dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(slurp(dir / "a" / "train.tsv"), slurp(dir / "c" / "train.tsv"));
}

TEST(Gen, ChunkCountSurvivesReparse) {
  const auto dir = scratch("gen_chunks");
  const auto r = idn_tool("gen --config \"" + write_config(dir).string() +
                              "\" --chunks 1000 --out \"" + (dir / "d").string() + "\"",
                          dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_manifest(dir / "d" / "manifest.txt").chunks, 1000u);
  EXPECT_EQ(load_features(dir / "d" / "manifest.txt").chunk_count(), 1000u);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  const auto dir = scratch("config");
  RunConfig c;
  EXPECT_THROW(c.set("hiden", "4"), ConfigError);
  EXPECT_THROW(c.set("noise_sigma", "loud"), ConfigError);
  EXPECT_THROW(c.set_pair("novalue"), ConfigError);
  c.set_pair("chunks = 77");
  EXPECT_EQ(c.synthetic.total_chunks, 77u);

  const auto bad = dir / "bad.cfg";
  std::ofstream(bad) << "T=3\ncolour=blue\n";
  try {
    read_run_config(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.cfg:2"), std::string::npos) << e.what();
  }
  const auto r = idn_tool("gen --config \"" + bad.string() + "\" --out \"" + dir.string() + "\"", dir);
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
  EXPECT_EQ(idn_tool("gen --out x --variant transformer", dir).code, cli::kConfig);
  EXPECT_EQ(idn_tool("frobnicate", dir).code, cli::kConfig);
}

TEST(Config, KeysRoundTrip) {
  RunConfig a;
  a.set("variant", "gru-ci");
  a.set("noise_sigma", "2.5");
  a.set("epoch_mcap", "false");
  RunConfig b;
  for (const auto& [k, v] : a.to_kv()) b.set(k, v);
  EXPECT_EQ(a.to_kv(), b.to_kv());
}

TEST(Train, VariantsDifferExactlyByTheirSpecificMatrices) {
  const auto dir = scratch("train_variants");
  const auto cfg = write_config(dir);
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  std::set<std::string> names[2];
  int i = 0;
  for (const char* v : {"gru", "idu"}) {
    const auto out = dir / v;
    const auto r = idn_tool("train --config \"" + cfg.string() + "\" --variant " + v +
                                " --data \"" + (dir / "d" / "manifest.txt").string() +
                                "\" --steps 3 --out \"" + out.string() + "\"",
                            dir);
    ASSERT_EQ(r.code, 0) << r.err;
    names[i++] = param_names(load_checkpoint(out / "checkpoint.bin"));
  }
  std::set<std::string> only_gru, only_idu;
  std::ranges::set_difference(names[0], names[1], std::inserter(only_gru, only_gru.end()));
  std::ranges::set_difference(names[1], names[0], std::inserter(only_idu, only_idu.end()));
  EXPECT_EQ(only_gru, (std::set<std::string>{"W_xr", "W_xz", "W_hz", "W_xh"}));
  EXPECT_EQ(only_idu, (std::set<std::string>{"W_xe", "W_ep", "b_e", "b_ep", "W_x0r", "W_xtz",
                                             "W_x0z", "W_xth"}));
}

TEST(Train, ZeroLearningRateKeepsInitialisation) {
  const auto dir = scratch("train_lr0");
  RunConfig cfg = read_run_config(write_config(dir));
  std::ostringstream log;
  cli::cmd_gen(cfg, dir / "d", log);
  cfg.data = dir / "d" / "manifest.txt";
  cfg.model.lr = 0.0;
  const Model trained = cli::cmd_train(cfg, {}, dir / "t", log);
  EXPECT_GT(trained.step, 0u);
  const Model loaded = load_checkpoint(dir / "t" / "checkpoint.bin");
  IdnConfig init_cfg = loaded.config;
  const Model init = Model::initialized(init_cfg);
  const auto a = loaded.param_views(), b = init.param_views();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(std::ranges::equal(a[i].values, b[i].values));
}

TEST(Train, SameSeedRunsAreByteIdentical) {
  const auto dir = scratch("train_det");
  const auto cfg = write_config(dir);
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  for (const char* sub : {"a", "b"}) {
    const auto r = idn_tool("train --config \"" + cfg.string() + "\" --data \"" +
                                (dir / "d" / "manifest.txt").string() + "\" --out \"" +
                                (dir / sub).string() + "\"",
                            dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"checkpoint.bin", "train_log.csv", "epochs.csv", "config.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(Train, ResumeContinuesTheStepCounter) {
  const auto dir = scratch("train_resume");
  const auto cfg = write_config(dir);
  const auto data = (dir / "d" / "manifest.txt").string();
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  const std::string base = "train --config \"" + cfg.string() + "\" --data \"" + data + "\" ";
  ASSERT_EQ(idn_tool(base + "--steps 10 --out \"" + (dir / "full").string() + "\"", dir).code, 0);
  ASSERT_EQ(idn_tool(base + "--steps 5 --out \"" + (dir / "half").string() + "\"", dir).code, 0);
  const auto r = idn_tool(base + "--steps 10 --resume \"" + (dir / "half" / "checkpoint.bin").string() +
                              "\" --out \"" + (dir / "rest").string() + "\"",
                          dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "rest" / "checkpoint.bin"), slurp(dir / "full" / "checkpoint.bin"));
  // The resumed log holds steps 6..10 of the uninterrupted log.
  const auto full = csv_rows(slurp(dir / "full" / "train_log.csv"));
  const auto rest = csv_rows(slurp(dir / "rest" / "train_log.csv"));
  ASSERT_EQ(rest.size(), 6u);
  for (std::size_t i = 1; i < rest.size(); ++i) EXPECT_EQ(rest[i], full[i + 5]);
}

TEST(Train, GoldenLogAtStep100) {
  const auto dir = scratch("train_golden");
  const auto cfg = write_config(dir);
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --seed 3 --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  const auto r = idn_tool("train --config \"" + cfg.string() + "\" --seed 3 --data \"" +
                              (dir / "d" / "manifest.txt").string() +
                              "\" --steps 100 --epochs 100 --out \"" + (dir / "t").string() + "\"",
                          dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto got = csv_rows(slurp(dir / "t" / "train_log.csv"));
  const auto want = csv_rows(slurp(kGolden / "train_log_step100.csv"));
  ASSERT_EQ(got.size(), 101u);
  ASSERT_EQ(want.size(), 101u) << "golden log missing or truncated";
  EXPECT_EQ(got[0], want[0]);
  for (std::size_t i = 1; i < got.size(); ++i) {
    ASSERT_EQ(got[i].size(), want[i].size());
    for (std::size_t j = 0; j < got[i].size(); ++j) {
      const double a = std::stod(got[i][j]), b = std::stod(want[i][j]);
      EXPECT_NEAR(a, b, 1e-9 * std::max(1.0, std::abs(b))) << "row " << i << " col " << j;
    }
  }
}

TEST(Train, NonFiniteLossExitsWithNumericCode) {
  const auto dir = scratch("train_nan");
  const auto cfg = write_config(dir);
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  const auto r = idn_tool("train --config \"" + cfg.string() + "\" --lr 1e300 --data \"" +
                              (dir / "d" / "manifest.txt").string() + "\" --out \"" +
                              (dir / "t").string() + "\"",
                          dir);
  EXPECT_EQ(r.code, cli::kNumeric);
  EXPECT_NE(r.err.find("non-finite loss"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("batch"), std::string::npos) << r.err;
}

TEST(Train, MissingDataIsAConfigError) {
  const auto dir = scratch("train_nodata");
  EXPECT_EQ(idn_tool("train --out \"" + dir.string() + "\"", dir).code, cli::kConfig);
  EXPECT_EQ(idn_tool("train --data /nonexistent/manifest.txt --out \"" + dir.string() + "\"", dir).code,
            cli::kData);
}

TEST(Eval, TrainedBeatsUntrainedInMostSeeds) {
  const auto dir = scratch("eval_sanity");
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig cfg = read_run_config(write_config(dir));
    cfg.model.seed = seed;
    cfg.model.epochs = 6;
    std::ostringstream log;
    cli::cmd_gen(cfg, dir / "d", log);
    cfg.data = dir / "d" / "manifest.txt";
    RunConfig untrained = cfg;
    untrained.model.lr = 0.0;
    untrained.model.epochs = 1;
    cli::cmd_train(untrained, {}, dir / "u", log);
    cli::cmd_train(cfg, {}, dir / "t", log);
    cfg.checkpoint = dir / "u" / "checkpoint.bin";
    const double before = cli::cmd_eval(cfg, "train", dir / "eu", log).mcap;
    cfg.checkpoint = dir / "t" / "checkpoint.bin";
    const double after = cli::cmd_eval(cfg, "train", dir / "et", log).mcap;
    wins += after > before ? 1 : 0;
  }
  EXPECT_GE(wins, 3);
}

TEST(Eval, WritesReportsDeterministically) {
  const auto dir = scratch("eval_files");
  const auto cfg = write_config(dir);
  const auto data = (dir / "d" / "manifest.txt").string();
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  ASSERT_EQ(idn_tool("train --config \"" + cfg.string() + "\" --data \"" + data + "\" --out \"" +
                         (dir / "t").string() + "\"",
                     dir).code,
            0);
  const std::string ev = "eval --config \"" + cfg.string() + "\" --data \"" + data +
                         "\" --checkpoint \"" + (dir / "t" / "checkpoint.bin").string() + "\" ";
  const auto r1 = idn_tool(ev + "--out \"" + (dir / "e1").string() + "\"", dir);
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(idn_tool(ev + "--out \"" + (dir / "e2").string() + "\"", dir).code, 0);
  for (const char* f : {"metrics.csv", "portion.csv", "scores.tsv"}) {
    EXPECT_EQ(slurp(dir / "e1" / f), slurp(dir / "e2" / f)) << f;
    EXPECT_FALSE(slurp(dir / "e1" / f).empty()) << f;
  }
  const auto metrics = csv_rows(slurp(dir / "e1" / "metrics.csv"));
  EXPECT_EQ(metrics.front(), (std::vector<std::string>{"class", "AP", "cAP"}));
  EXPECT_EQ(metrics.back().front(), "mean");
  const auto portion = csv_rows(slurp(dir / "e1" / "portion.csv"));
  EXPECT_EQ(portion.size(), 11u);
  // The score file re-scores to the same summary.
  const auto table = read_scores(dir / "e1" / "scores.tsv", 3);
  EXPECT_EQ(std::stod(metrics.back()[2]), evaluate(table).mcap);
}

TEST(Eval, RandomScoresSitAtChanceLevel) {
  const auto dir = scratch("eval_random");
  Rng rng(31);
  std::vector<FrameScore> frames;
  for (std::size_t i = 0; i < 20000; ++i) {
    Vec p{rng.uniform(), rng.uniform(), rng.uniform()};
    frames.push_back({0, i % 10 < 2 ? 1u : (i % 10 < 5 ? 2u : 0u), p});
  }
  {
    std::ofstream out(dir / "scores.tsv");
    write_scores(out, frames);
  }
  const auto report = evaluate(read_scores(dir / "scores.tsv", 2));
  ASSERT_EQ(report.classes.size(), 2u);
  // Random ranking: AP near the positive rate, calibrated AP near one half.
  EXPECT_NEAR(report.classes[0].ap, 0.2, 0.02);
  EXPECT_NEAR(report.classes[1].ap, 0.3, 0.02);
  for (const auto& c : report.classes) EXPECT_NEAR(c.cap, 0.5, 0.02);
}

TEST(Eval, EmptySplitAndMismatchedCheckpointFail) {
  const auto dir = scratch("eval_empty");
  const auto cfg = write_config(dir, "eval_fraction=0\n");
  const auto data = (dir / "d" / "manifest.txt").string();
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  ASSERT_EQ(idn_tool("train --config \"" + cfg.string() + "\" --steps 1 --data \"" + data +
                         "\" --out \"" + (dir / "t").string() + "\"",
                     dir).code,
            0);
  const auto ckpt = (dir / "t" / "checkpoint.bin").string();
  const auto r = idn_tool("eval --data \"" + data + "\" --checkpoint \"" + ckpt + "\" --out \"" +
                              (dir / "e").string() + "\"",
                          dir);
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("no chunks in split 'eval'"), std::string::npos) << r.err;

  const auto other = write_config(dir / "x", "feature_dim=5\n");
  ASSERT_EQ(idn_tool("gen --config \"" + other.string() + "\" --out \"" + (dir / "x" / "d").string() + "\"", dir).code, 0);
  const auto m = idn_tool("eval --data \"" + (dir / "x" / "d" / "manifest.txt").string() +
                              "\" --checkpoint \"" + ckpt + "\" --out \"" + (dir / "e").string() + "\"",
                          dir);
  EXPECT_EQ(m.code, cli::kData);
  EXPECT_NE(m.err.find("d_x"), std::string::npos) << m.err;
}

TEST(InspectGates, UntrainedModelSitsNearHalfAndCountsRows) {
  const auto dir = scratch("gates");
  RunConfig cfg = read_run_config(write_config(dir, "hidden=64\nembed=64\n"));
  std::ostringstream log;
  cli::cmd_gen(cfg, dir / "d", log);
  cfg.data = dir / "d" / "manifest.txt";
  cfg.model.lr = 0.0;
  cfg.model.epochs = 1;
  cli::cmd_train(cfg, {}, dir / "t", log);
  cfg.checkpoint = dir / "t" / "checkpoint.bin";
  const auto gap = cli::cmd_inspect_gates(cfg, "eval", dir / "g", log);
  const auto rows = csv_rows(slurp(dir / "g" / "gates.csv"));
  const auto data = load_features(cfg.data);
  EXPECT_EQ(rows.size() - 1, data.subset("eval").chunk_count() * (cfg.model.T + 1));
  EXPECT_EQ(rows.front(), (std::vector<std::string>{"window_id", "t", "mean_z", "mean_r", "relevance"}));
  double z = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) z += std::stod(rows[i][2]);
  EXPECT_NEAR(z / static_cast<double>(rows.size() - 1), 0.5, 0.05);
  EXPECT_NEAR(gap.relevant, 0.5, 0.1);
}

TEST(InspectGates, GatelessVariantsAreRejected) {
  const auto dir = scratch("gates_simple");
  const auto cfg = write_config(dir);
  const auto data = (dir / "d" / "manifest.txt").string();
  ASSERT_EQ(idn_tool("gen --config \"" + cfg.string() + "\" --out \"" + (dir / "d").string() + "\"", dir).code, 0);
  for (const char* v : {"simple", "lstm"}) {
    ASSERT_EQ(idn_tool("train --config \"" + cfg.string() + "\" --variant " + v +
                           " --steps 1 --data \"" + data + "\" --out \"" + (dir / v).string() + "\"",
                       dir).code,
              0);
    const auto r = idn_tool("inspect-gates --data \"" + data + "\" --checkpoint \"" +
                                (dir / v / "checkpoint.bin").string() + "\" --out \"" +
                                (dir / "g").string() + "\"",
                            dir);
    EXPECT_EQ(r.code, cli::kConfig) << v;
    EXPECT_NE(r.err.find("unsupported"), std::string::npos) << r.err;
  }
}

TEST(Gradcheck, AllVariantsPassAndReportIsDeterministic) {
  const auto dir = scratch("gradcheck");
  const auto a = idn_tool("gradcheck --out \"" + dir.string() + "\"", dir);
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("all "), std::string::npos);
  for (const char* v : {"simple,", "lstm,", "gru,", "gru-ci,", "idu,"}) {
    EXPECT_NE(a.out.find(std::string("\n") + v), std::string::npos) << v;
  }
  EXPECT_EQ(idn_tool("gradcheck", dir).out, a.out);
  EXPECT_NE(idn_tool("gradcheck --seed 8", dir).out, a.out);
}

TEST(Gradcheck, CorruptedBackwardFailsNamingTheMatrix) {
  const auto dir = scratch("gradcheck_tamper");
  const auto r = idn_tool("gradcheck --variant idu --tamper W_x0z", dir);
  EXPECT_EQ(r.code, cli::kNumeric);
  EXPECT_NE(r.out.find("idu,W_x0z,"), std::string::npos);
  const auto line_start = r.out.find("idu,W_x0z,");
  const auto line = r.out.substr(line_start, r.out.find('\n', line_start) - line_start);
  EXPECT_NE(line.find("FAIL"), std::string::npos) << line;
  EXPECT_NE(r.out.find("1 of "), std::string::npos) << r.out;
}

TEST(ParamCounts, ClosedFormAgreesWithTallyInEveryConvention) {
  const auto rows = cli::param_count_report(3072, 512, 512, 20);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.gru_closed, r.gru_tally) << r.convention;
    EXPECT_EQ(r.idu_closed, r.idu_tally) << r.convention;
  }
  EXPECT_EQ(rows[0].gru_closed, 5505024u);
  EXPECT_EQ(rows[0].idu_closed, 3156480u);
}

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), cli::kConfig);
  EXPECT_EQ(cli::exit_code_for(DataError("x")), cli::kData);
  EXPECT_EQ(cli::exit_code_for(CheckpointError("x")), cli::kData);
  EXPECT_EQ(cli::exit_code_for(NumericError("x")), cli::kNumeric);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), cli::kFailure);
}
