#include "mwt/config.hpp"

#include "mwt/sha256.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mwt {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "model.preset", "model.L", "model.H", "model.F", "model.A", "model.V", "model.P",
        "model.T", "model.C", "model.dropout", "model.seed",
        "task.kind", "task.size", "task.dev_size", "task.seed", "task.states", "task.noise",
        "regime", "layers", "n_outliers", "rand_budget", "rand_seed",
        "train.lr", "train.lr_sweep", "train.epochs", "train.batch", "train.warmup",
        "train.eps", "train.seeds", "train.max_seq_len", "train.weight_decay",
        "io.checkpoint", "io.out_dir",
        "analyze.sample_size", "analyze.seed", "analyze.n_outliers", "analyze.trim",
    };
    return keys;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

RunConfig RunConfig::parse_string(const std::string& text) {
    RunConfig cfg;
    cfg.raw_ = text;
    cfg.hash_ = Sha256::hash_string(text);

    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key=value, got '" + t + "'");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (!known_keys().count(key)) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": unknown key '" + key + "'");
        }
        if (cfg.kv_.count(key)) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": duplicate key '" + key + "'");
        }
        cfg.kv_[key] = value;
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return parse_string(os.str());
}

std::string RunConfig::require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("config is missing required key '" + key + "'");
    return it->second;
}

std::string RunConfig::get_or(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

long RunConfig::require_int(const std::string& key) const {
    return std::stol(require(key));
}

long RunConfig::int_or(const std::string& key, long fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stol(it->second);
}

double RunConfig::double_or(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stod(it->second);
}

ModelConfig RunConfig::model_config() const {
    ModelConfig c = ModelConfig::toy_preset();
    if (has("model.preset")) {
        auto preset = ModelConfig::preset(require("model.preset"));
        if (!preset) {
            throw std::runtime_error("unknown model preset '" + require("model.preset") + "'");
        }
        c = *preset;
    }
    c.num_layers = static_cast<int>(int_or("model.L", c.num_layers));
    c.hidden = static_cast<int>(int_or("model.H", c.hidden));
    c.ffn_dim = static_cast<int>(int_or("model.F", c.ffn_dim));
    c.num_heads = static_cast<int>(int_or("model.A", c.num_heads));
    c.vocab_size = static_cast<int>(int_or("model.V", c.vocab_size));
    c.max_positions = static_cast<int>(int_or("model.P", c.max_positions));
    c.type_vocab = static_cast<int>(int_or("model.T", c.type_vocab));
    c.num_classes = static_cast<int>(int_or("model.C", c.num_classes));
    c.dropout = double_or("model.dropout", c.dropout);
    c.validate();
    return c;
}

std::uint64_t RunConfig::model_seed() const {
    return static_cast<std::uint64_t>(int_or("model.seed", 42));
}

std::vector<TaskSpec> RunConfig::task_specs() const {
    std::vector<TaskSpec> specs;
    const ModelConfig mc = model_config();
    for (const auto& kind_str : split_list(require("task.kind"))) {
        auto kind = task_kind_from_string(kind_str);
        if (!kind) throw std::runtime_error("unknown task kind '" + kind_str + "'");
        TaskSpec spec;
        spec.kind = *kind;
        spec.train_size = static_cast<std::size_t>(int_or("task.size", 2000));
        spec.dev_size = static_cast<std::size_t>(
            int_or("task.dev_size", static_cast<long>(spec.train_size / 4)));
        spec.seed = static_cast<std::uint64_t>(int_or("task.seed", 0));
        spec.grammar_states = static_cast<int>(int_or("task.states", 6));
        spec.noise_rate = double_or("task.noise", 0.05);
        spec.max_seq_len = mc.max_positions;
        spec.validate();
        specs.push_back(spec);
    }
    if (specs.empty()) throw std::runtime_error("task.kind lists no tasks");
    return specs;
}

TaskSpec RunConfig::task_spec() const {
    const auto specs = task_specs();
    if (specs.size() != 1) throw std::runtime_error("expected exactly one task.kind");
    return specs[0];
}

TrainConfig RunConfig::train_config() const {
    TrainConfig tc;
    const ModelConfig mc = model_config();
    tc.max_seq_len = mc.max_positions;
    tc.peak_lr = double_or("train.lr", 1e-3);
    if (has("train.lr_sweep")) {
        tc.lr_sweep.clear();
        for (const auto& s : split_list(require("train.lr_sweep"))) {
            tc.lr_sweep.push_back(std::stod(s));
        }
    }
    tc.epochs = static_cast<int>(int_or("train.epochs", 10));
    tc.batch_size = static_cast<int>(int_or("train.batch", 16));
    tc.warmup_ratio = double_or("train.warmup", 0.10);
    tc.adam_eps = double_or("train.eps", 1e-6);
    tc.weight_decay = double_or("train.weight_decay", 0.0);
    if (has("train.seeds")) {
        tc.seeds.clear();
        for (const auto& s : split_list(require("train.seeds"))) {
            tc.seeds.push_back(static_cast<std::uint64_t>(std::stoul(s)));
        }
    }
    tc.max_seq_len = static_cast<int>(int_or("train.max_seq_len", tc.max_seq_len));
    tc.validate();
    return tc;
}

SelectionSpec RunConfig::selection_spec() const {
    SelectionSpec spec;
    const std::string name = get_or("regime", "FullFT");
    auto regime = regime_from_string(name);
    if (!regime) throw std::runtime_error("unknown regime '" + name + "'");
    spec.regime = *regime;
    if (has("layers")) {
        std::set<int> layers;
        for (const auto& s : split_list(require("layers"))) {
            layers.insert(static_cast<int>(std::stol(s)));
        }
        spec.layer_filter = layers;
    }
    if (has("n_outliers")) {
        spec.n_outliers = static_cast<std::size_t>(require_int("n_outliers"));
    }
    if (has("rand_budget")) {
        spec.rand_budget = static_cast<std::size_t>(require_int("rand_budget"));
    }
    spec.rand_seed = static_cast<std::uint64_t>(int_or("rand_seed", 0));
    spec.validate();
    return spec;
}

}  // namespace mwt
