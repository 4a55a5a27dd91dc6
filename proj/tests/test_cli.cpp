#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mwt/commands.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mwt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               fs::path("mwt_cli_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::size_t line_count(const fs::path& p) {
    std::ifstream is(p);
    std::size_t n = 0;
    for (std::string line; std::getline(is, line);) ++n;
    return n;
}

const char* kToyTrain =
    "model.preset = toy\n"
    "model.seed = 11\n"
    "task.kind = single-classify\n"
    "task.size = 120\n"
    "task.dev_size = 60\n"
    "task.seed = 5\n"
    "regime = LayerNorms\n"
    "train.lr = 1e-3\n"
    "train.epochs = 2\n"
    "train.seeds = 1\n"
    "train.max_seq_len = 32\n";

}  // namespace

TEST_CASE("config parsing accepts comments and reports duplicate keys by line") {
    RunConfig ok = RunConfig::parse_string(
        "# a comment\n\nmodel.preset = toy\nregime = FullFT\n");
    CHECK(ok.has("regime"));
    CHECK(ok.get_or("regime", "") == "FullFT");
    CHECK(!ok.hash().empty());

    CHECK_THROWS_WITH_AS(
        RunConfig::parse_string("regime = FullFT\nregime = Freeze\n"),
        doctest::Contains("line 2"), std::runtime_error);
}

TEST_CASE("config parsing rejects unknown keys and malformed lines") {
    CHECK_THROWS_WITH_AS(RunConfig::parse_string("model.preset = toy\nbogus.key = 1\n"),
                         doctest::Contains("line 2"), std::runtime_error);
    CHECK_THROWS_WITH_AS(RunConfig::parse_string("model.preset = toy\nno equals sign\n"),
                         doctest::Contains("line 2"), std::runtime_error);
    CHECK_THROWS_AS(RunConfig::parse_file("/nonexistent/mwt.cfg"), std::runtime_error);
}

TEST_CASE("typed accessors materialize the documented defaults") {
    RunConfig cfg = RunConfig::parse_string("model.preset = toy\ntask.kind = pair-classify\n");
    ModelConfig mc = cfg.model_config();
    CHECK(mc.hidden == ModelConfig::toy_preset().hidden);
    TrainConfig tc = cfg.train_config();
    CHECK(tc.adam_eps == 1e-6);
    CHECK(tc.warmup_ratio == 0.10);
    CHECK(tc.seeds == std::vector<std::uint64_t>{1, 2, 3});
    TaskSpec ts = cfg.task_spec();
    CHECK(ts.kind == TaskKind::PairClassify);
    SelectionSpec sel = cfg.selection_spec();
    CHECK(sel.regime == Regime::FullFT);
}

TEST_CASE("task.kind accepts a comma list") {
    RunConfig cfg = RunConfig::parse_string(
        "model.preset = toy\ntask.kind = pair-classify, token-tag\n");
    auto specs = cfg.task_specs();
    REQUIRE(specs.size() == 2);
    CHECK(specs[0].kind == TaskKind::PairClassify);
    CHECK(specs[1].kind == TaskKind::TokenTag);
    CHECK_THROWS_AS(cfg.task_spec(), std::runtime_error);  // ambiguous as a single task
}

TEST_CASE("pretrain requires a checkpoint destination before any compute") {
    RunConfig cfg = RunConfig::parse_string(
        "model.preset = toy\ntask.kind = pretrain-mlm\ntask.size = 64\ntrain.epochs = 1\n");
    TempDir out;
    CommandOptions opt;
    opt.out_dir = out.str();
    CHECK_THROWS_AS(cmd_pretrain(cfg, opt), std::runtime_error);
}

TEST_CASE("finetune writes a self-describing run directory") {
    TempDir out;
    RunConfig cfg = RunConfig::parse_string(kToyTrain);
    CommandOptions opt;
    opt.out_dir = out.str();
    CHECK(cmd_finetune(cfg, opt) == 0);

    CHECK(slurp(out.path / "config.txt") == cfg.raw());
    CHECK(slurp(out.path / "config.hash").find(cfg.hash()) != std::string::npos);
    CHECK(fs::exists(out.path / "seeds.txt"));
    CHECK(line_count(out.path / "reports.jsonl") == 1);
    const std::string csv = slurp(out.path / "summary.csv");
    CHECK(csv.find("task,regime") != std::string::npos);
    CHECK(csv.find("single-classify") != std::string::npos);
}

TEST_CASE("rerunning an identical config reproduces the reports byte for byte") {
    TempDir a, b;
    RunConfig cfg = RunConfig::parse_string(kToyTrain);
    CommandOptions oa, ob;
    oa.out_dir = a.str();
    ob.out_dir = b.str();
    REQUIRE(cmd_finetune(cfg, oa) == 0);
    REQUIRE(cmd_finetune(cfg, ob) == 0);
    CHECK(slurp(a.path / "reports.jsonl") == slurp(b.path / "reports.jsonl"));
    CHECK(slurp(a.path / "summary.csv") == slurp(b.path / "summary.csv"));
}

TEST_CASE("seed override narrows the run to one seed") {
    TempDir out;
    std::string text = kToyTrain;
    text.replace(text.find("train.seeds = 1"), 15, "train.seeds = 1,2");
    RunConfig cfg = RunConfig::parse_string(text);
    CommandOptions opt;
    opt.out_dir = out.str();
    opt.seed = 2;
    REQUIRE(cmd_finetune(cfg, opt) == 0);
    CHECK(line_count(out.path / "reports.jsonl") == 1);
    CHECK(slurp(out.path / "seeds.txt").find("2") != std::string::npos);
}

TEST_CASE("pretrain then finetune round-trips through the checkpoint") {
    TempDir pre, fin;
    const std::string ckpt = (pre.path / "encoder.ckpt").string();
    RunConfig pre_cfg = RunConfig::parse_string(
        "model.preset = toy\n"
        "model.seed = 11\n"
        "task.kind = pretrain-mlm\n"
        "task.size = 96\n"
        "task.dev_size = 32\n"
        "task.seed = 5\n"
        "train.lr = 1e-3\n"
        "train.epochs = 1\n"
        "train.seeds = 1\n"
        "train.max_seq_len = 32\n"
        "io.checkpoint = " + ckpt + "\n");
    CommandOptions popt;
    popt.out_dir = pre.str();
    REQUIRE(cmd_pretrain(pre_cfg, popt) == 0);
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(pre.path / "checkpoint.hash"));

    RunConfig fin_cfg = RunConfig::parse_string(std::string(kToyTrain) +
                                                "io.checkpoint = " + ckpt + "\n");
    CommandOptions fopt;
    fopt.out_dir = fin.str();
    CHECK(cmd_finetune(fin_cfg, fopt) == 0);
    CHECK(line_count(fin.path / "reports.jsonl") == 1);
}

TEST_CASE("analyze emits stats, histograms, outliers, and the ratio table") {
    TempDir out;
    RunConfig cfg = RunConfig::parse_string(
        "model.preset = toy\n"
        "model.seed = 11\n"
        "analyze.sample_size = 500\n"
        "analyze.n_outliers = 4\n");
    CommandOptions opt;
    opt.out_dir = out.str();
    CHECK(cmd_analyze(cfg, opt) == 0);
    CHECK(fs::exists(out.path / "module_stats.jsonl"));
    CHECK(fs::exists(out.path / "outliers.json"));
    CHECK(fs::exists(out.path / "ratio_table.csv"));
    CHECK(line_count(out.path / "ratio_table.csv") == 15);
    bool any_hist = false;
    for (const auto& entry : fs::directory_iterator(out.path)) {
        if (entry.path().filename().string().starts_with("hist_")) any_hist = true;
    }
    CHECK(any_hist);
}
