#include "mwt/commands.hpp"

#include "mwt/analysis.hpp"
#include "mwt/sha256.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;

namespace mwt {

namespace {

std::string file_sha256(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    Sha256 h;
    char buf[65536];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        h.update(buf, static_cast<std::size_t>(is.gcount()));
    }
    return h.hex_digest();
}

fs::path prepare_out_dir(const RunConfig& cfg, const CommandOptions& opt) {
    const std::string dir = !opt.out_dir.empty() ? opt.out_dir : cfg.require("io.out_dir");
    fs::create_directories(dir);
    std::ofstream(fs::path(dir) / "config.txt", std::ios::binary) << cfg.raw();
    std::ofstream(fs::path(dir) / "config.hash") << cfg.hash() << '\n';
    std::ofstream seeds(fs::path(dir) / "seeds.txt");
    for (auto s : cfg.train_config().seeds) seeds << s << '\n';
    return dir;
}

TrainConfig effective_train_config(const RunConfig& cfg, const CommandOptions& opt) {
    TrainConfig tc = cfg.train_config();
    if (opt.seed) tc.seeds = {*opt.seed};
    return tc;
}

void write_reports(const fs::path& dir, const std::vector<RunReport>& reports,
                   const std::string& config_hash) {
    std::ofstream jsonl(dir / "reports.jsonl", std::ios::trunc);
    std::ofstream csv(dir / "summary.csv", std::ios::trunc);
    csv << RunReport::csv_header() << '\n';
    for (auto r : reports) {
        r.config_hash = config_hash;
        jsonl << r.to_jsonl() << '\n';
        csv << r.to_csv_row() << '\n';
    }
}

void note_checkpoint_hash(const fs::path& dir, const std::string& checkpoint) {
    std::ofstream(dir / "checkpoint.hash") << file_sha256(checkpoint) << "  " << checkpoint << '\n';
}

Dataset dataset_for(const TaskSpec& spec) {
    return spec.kind == TaskKind::PretrainMlm ? gen_pretrain(spec) : gen_downstream(spec);
}

/// Pretrain checkpoints carry the MLM head: token-tag over the full vocab.
/// Without io.checkpoint the commands start from a fresh seeded model.
Model load_pretrained(const RunConfig& cfg) {
    ModelConfig mc = cfg.model_config();
    mc.num_classes = mc.vocab_size;
    if (cfg.has("io.checkpoint")) {
        return Model::load_checkpoint(cfg.require("io.checkpoint"), mc, HeadKind::TokenTag);
    }
    return Model(mc, HeadKind::TokenTag, cfg.model_seed());
}

void note_checkpoint_hash_if_any(const fs::path& dir, const RunConfig& cfg) {
    if (cfg.has("io.checkpoint")) note_checkpoint_hash(dir, cfg.require("io.checkpoint"));
}

int exit_code_for(const std::vector<RunReport>& reports) {
    for (const auto& r : reports) {
        if (r.failed) return 1;
    }
    return 0;
}

}  // namespace

int cmd_pretrain(const RunConfig& cfg, const CommandOptions& opt) {
    const std::string checkpoint = cfg.require("io.checkpoint");  // before any compute
    const TaskSpec spec = cfg.task_spec();
    if (spec.kind != TaskKind::PretrainMlm) {
        throw std::runtime_error("pretrain requires task.kind=pretrain-mlm");
    }
    const fs::path dir = prepare_out_dir(cfg, opt);
    const TrainConfig tc = effective_train_config(cfg, opt);
    const Dataset data = gen_pretrain(spec);

    ModelConfig mc = cfg.model_config();
    mc.num_classes = mc.vocab_size;
    const Model model(mc, HeadKind::TokenTag, cfg.model_seed());

    SelectionSpec full;
    full.regime = Regime::FullFT;
    Model trained = model.clone();
    RunReport report = train(model, data, full, tc, tc.peak_lr, tc.seeds.front(), &trained);
    if (!report.failed) trained.save_checkpoint(checkpoint);

    std::vector<RunReport> reports{report};
    write_reports(dir, reports, cfg.hash());
    std::cout << "pretrain: " << report.metric_name << " best=" << report.best_metric
              << " (epoch " << report.best_epoch << ")\n";
    note_checkpoint_hash(dir, checkpoint);
    return exit_code_for(reports);
}

int cmd_finetune(const RunConfig& cfg, const CommandOptions& opt) {
    const fs::path dir = prepare_out_dir(cfg, opt);
    const TrainConfig tc = effective_train_config(cfg, opt);
    const SelectionSpec spec = cfg.selection_spec();
    const Model model = load_pretrained(cfg);
    note_checkpoint_hash_if_any(dir, cfg);

    std::vector<RunReport> reports;
    for (const auto& task : cfg.task_specs()) {
        const Dataset data = dataset_for(task);
        for (std::uint64_t seed : tc.seeds) {
            reports.push_back(train(model, data, spec, tc, tc.peak_lr, seed));
        }
    }
    write_reports(dir, reports, cfg.hash());
    return exit_code_for(reports);
}

int cmd_sweep(const RunConfig& cfg, const CommandOptions& opt) {
    const fs::path dir = prepare_out_dir(cfg, opt);
    const TrainConfig tc = effective_train_config(cfg, opt);
    const SelectionSpec spec = cfg.selection_spec();
    const Model model = load_pretrained(cfg);
    note_checkpoint_hash_if_any(dir, cfg);

    std::vector<RunReport> reports;
    std::ofstream best(dir / "best.csv", std::ios::trunc);
    best << "task,regime,best_lr,mean,std\n";
    for (const auto& task : cfg.task_specs()) {
        const Dataset data = dataset_for(task);
        SweepResult result = sweep(model, data, spec, tc);
        best << to_string(task.kind) << ',' << spec.describe() << ',' << result.best_lr << ','
             << result.best_mean << ',' << result.best_std << '\n';
        for (auto& r : result.grid) reports.push_back(std::move(r));
    }
    write_reports(dir, reports, cfg.hash());
    return exit_code_for(reports);
}

int cmd_benchmark(const RunConfig& cfg, const CommandOptions& opt) {
    const fs::path dir = prepare_out_dir(cfg, opt);
    const TrainConfig tc = effective_train_config(cfg, opt);
    const Model model = load_pretrained(cfg);
    note_checkpoint_hash_if_any(dir, cfg);

    std::size_t ln_budget = 0;
    for (const auto& g : model.registry()) {
        if (g.tag == ModuleTag::LN_Att || g.tag == ModuleTag::LN_FFN) {
            ln_budget += g.tensor->size();
        }
    }

    // Fixed battery order mirrors the benchmark table layout.
    std::vector<SelectionSpec> battery;
    for (Regime r : {Regime::FullFT, Regime::Freeze, Regime::MultiHead, Regime::FeedForward,
                     Regime::LayerNorms, Regime::LayerNormsAtt, Regime::LayerNormsFFN,
                     Regime::BitFit}) {
        SelectionSpec s;
        s.regime = r;
        battery.push_back(s);
    }
    {
        SelectionSpec s;
        s.regime = Regime::Rand;
        s.rand_budget = ln_budget;
        s.rand_seed = static_cast<std::uint64_t>(cfg.int_or("rand_seed", 0));
        battery.push_back(s);
    }
    for (std::size_t n : {4u, 16u, 64u, 256u}) {
        SelectionSpec s;
        s.regime = Regime::OutlierLN;
        s.n_outliers = n;
        battery.push_back(s);
    }

    std::vector<RunReport> reports;
    std::ofstream table(dir / "benchmark_table.csv", std::ios::trunc);
    table << "task,regime,trainable,ratio,best_lr,mean,std,failed_runs\n";
    bool any_failed = false;
    for (const auto& task : cfg.task_specs()) {
        const Dataset data = dataset_for(task);
        for (const auto& spec : battery) {
            SweepResult result = sweep(model, data, spec, tc);
            std::size_t failed = 0;
            for (const auto& r : result.grid) failed += r.failed;
            any_failed = any_failed || failed > 0;
            table << to_string(task.kind) << ',' << spec.describe() << ','
                  << result.grid.front().trainable << ',' << result.grid.front().ratio << ','
                  << result.best_lr << ',' << result.best_mean << ',' << result.best_std << ','
                  << failed << '\n';
            for (auto& r : result.grid) reports.push_back(std::move(r));
        }
    }
    write_reports(dir, reports, cfg.hash());
    return any_failed ? 1 : 0;
}

int cmd_analyze(const RunConfig& cfg, const CommandOptions& opt) {
    const fs::path dir = prepare_out_dir(cfg, opt);
    const Model model = load_pretrained(cfg);
    note_checkpoint_hash_if_any(dir, cfg);

    const auto seed = static_cast<std::uint64_t>(cfg.int_or("analyze.seed", 0));
    const bool trim = cfg.int_or("analyze.trim", 1) != 0;
    const auto requested = static_cast<std::size_t>(cfg.int_or("analyze.sample_size", 10000));

    auto population_of = [&](const std::string& tag) {
        std::size_t pop = 0;
        for (const auto& g : model.registry()) {
            const bool match = tag == "LayerNorms"
                                   ? (g.tag == ModuleTag::LN_Att || g.tag == ModuleTag::LN_FFN)
                                   : to_string(g.tag) == tag;
            if (match) pop += g.tensor->size();
        }
        return pop;
    };

    std::ofstream stats_json(dir / "module_stats.jsonl", std::ios::trunc);
    for (const std::string tag :
         {"MultiHead", "FeedForward", "LayerNorms", "LN_Att", "LN_FFN", "Embedding"}) {
        ModuleStats stats = module_weight_stats(
            model, tag, std::min(requested, population_of(tag)), seed, trim);
        stats_json << stats.to_json() << '\n';
        stats.write_histogram_csv((dir / ("hist_" + tag + ".csv")).string());
    }

    const auto n = static_cast<std::size_t>(cfg.int_or("analyze.n_outliers", 4));
    const auto outliers = outlier_report(model, n);
    std::ofstream outl(dir / "outliers.json", std::ios::trunc);
    nlohmann::json jarr = nlohmann::json::array();
    for (const auto& no : outliers) {
        nlohmann::json j;
        j["norm"] = no.norm_name;
        j["indices"] = no.indices;
        j["values"] = no.values;
        j["deviations"] = no.deviations;
        jarr.push_back(j);
    }
    outl << jarr.dump(2) << '\n';

    std::ofstream(dir / "ratio_table.csv") << ratio_table_csv(ratio_table(model.registry()));
    return 0;
}

}  // namespace mwt
