#include "mwt/tasks.hpp"

#include "mwt/sha256.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mwt {

namespace {

std::string example_key(const Example& e) {
    std::string s;
    for (int t : e.tokens) {
        s += std::to_string(t);
        s += ',';
    }
    return s;
}

int coin(std::mt19937_64& rng) {
    return static_cast<int>(rng() & 1u);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng);
}

double uniform_real(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(rng);
}

int sample_categorical(std::mt19937_64& rng, const std::vector<double>& probs) {
    double u = uniform_real(rng);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        u -= probs[i];
        if (u <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::PretrainMlm: return "pretrain-mlm";
        case TaskKind::PairClassify: return "pair-classify";
        case TaskKind::SingleClassify: return "single-classify";
        case TaskKind::PairRegress: return "pair-regress";
        case TaskKind::TokenTag: return "token-tag";
    }
    return "?";
}

std::optional<TaskKind> task_kind_from_string(const std::string& s) {
    for (TaskKind k : {TaskKind::PretrainMlm, TaskKind::PairClassify, TaskKind::SingleClassify,
                       TaskKind::PairRegress, TaskKind::TokenTag}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

void TaskSpec::validate() const {
    if (train_size < 1 || dev_size < 1) throw std::invalid_argument("task sizes must be >= 1");
    if (noise_rate < 0.0 || noise_rate >= 0.5) {
        throw std::invalid_argument("noise rate must be in [0, 0.5)");
    }
    if (grammar_states < 2) throw std::invalid_argument("need at least 2 grammar states");
    if (max_seq_len < 8) throw std::invalid_argument("max_seq_len too small for CLS/SEP framing");
}

Grammar::Grammar(int num_states, int num_symbols, double noise_rate, std::uint64_t seed)
    : num_states_(num_states), num_symbols_(num_symbols), noise_rate_(noise_rate) {
    if (num_symbols < num_states) {
        throw std::invalid_argument("vocab too small for grammar states");
    }
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 1);

    // Mostly-cyclic transitions with one random jump per state.
    trans_.assign(static_cast<std::size_t>(num_states_),
                  std::vector<double>(static_cast<std::size_t>(num_states_), 0.0));
    for (int s = 0; s < num_states_; ++s) {
        const int jump = uniform_int(rng, 0, num_states_ - 1);
        for (int t = 0; t < num_states_; ++t) {
            trans_[s][t] = 0.1 / num_states_;
        }
        trans_[s][(s + 1) % num_states_] += 0.6;
        trans_[s][jump] += 0.3;
    }

    // Each (variant, state) prefers a window of symbols. Variant 1 offsets the
    // windows by half the alphabet and walks them in reversed state order, so
    // the cycle through states produces opposite symbol drifts: a pure shift
    // would leave the two variants indistinguishable once states are hidden.
    const int width = std::max(2, num_symbols_ / num_states_ + 1);
    emit_.assign(2, std::vector<std::vector<double>>(
                        static_cast<std::size_t>(num_states_),
                        std::vector<double>(static_cast<std::size_t>(num_symbols_), 0.0)));
    for (int v = 0; v < 2; ++v) {
        for (int s = 0; s < num_states_; ++s) {
            const int window_slot = v == 0 ? s : num_states_ - 1 - s;
            const int start =
                (window_slot * (num_symbols_ / num_states_) + v * (num_symbols_ / 2)) %
                num_symbols_;
            auto& e = emit_[static_cast<std::size_t>(v)][static_cast<std::size_t>(s)];
            for (int j = 0; j < num_symbols_; ++j) e[j] = noise_rate_ / num_symbols_;
            for (int j = 0; j < width; ++j) {
                e[(start + j) % num_symbols_] += (1.0 - noise_rate_) / width;
            }
        }
    }
}

double Grammar::emission_prob(int variant, int state, int symbol) const {
    return emit_[static_cast<std::size_t>(variant)][static_cast<std::size_t>(state)]
                [static_cast<std::size_t>(symbol)];
}

std::vector<int> Grammar::generate(std::mt19937_64& rng, int len, int variant,
                                   std::vector<int>* states) const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(len));
    if (states) states->clear();
    int s = uniform_int(rng, 0, num_states_ - 1);
    for (int i = 0; i < len; ++i) {
        const int sym = sample_categorical(
            rng, emit_[static_cast<std::size_t>(variant)][static_cast<std::size_t>(s)]);
        out.push_back(kFirstSymbol + sym);
        if (states) states->push_back(s);
        s = sample_categorical(rng, trans_[static_cast<std::size_t>(s)]);
    }
    return out;
}

double Grammar::log_likelihood(const std::vector<int>& symbols, int variant) const {
    const std::size_t k = static_cast<std::size_t>(num_states_);
    std::vector<double> alpha(k, 1.0 / num_states_);
    double log_scale = 0.0;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        const int sym = symbols[i] - kFirstSymbol;
        if (sym < 0 || sym >= num_symbols_) {
            throw std::out_of_range("symbol outside grammar alphabet");
        }
        std::vector<double> next(k, 0.0);
        if (i == 0) {
            next = alpha;  // initial state distribution
        } else {
            for (std::size_t s = 0; s < k; ++s) {
                const double p = alpha[s];
                if (p == 0.0) continue;
                for (std::size_t t = 0; t < k; ++t) next[t] += p * trans_[s][t];
            }
        }
        double total = 0.0;
        for (std::size_t s = 0; s < k; ++s) {
            next[s] *= emission_prob(variant, static_cast<int>(s), sym);
            total += next[s];
        }
        if (total <= 0.0) return -1e300;
        for (auto& v : next) v /= total;
        log_scale += std::log(total);
        alpha = std::move(next);
    }
    return log_scale;
}

double Grammar::variant_posterior(const std::vector<int>& symbols) const {
    const double l0 = log_likelihood(symbols, 0);
    const double l1 = log_likelihood(symbols, 1);
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    return e1 / (e0 + e1);
}

std::vector<int> Grammar::posterior_states(const std::vector<int>& symbols, int variant) const {
    const std::size_t k = static_cast<std::size_t>(num_states_);
    const std::size_t n = symbols.size();
    std::vector<std::vector<double>> alpha(n, std::vector<double>(k, 0.0));
    std::vector<std::vector<double>> beta(n, std::vector<double>(k, 1.0));

    for (std::size_t i = 0; i < n; ++i) {
        const int sym = symbols[i] - kFirstSymbol;
        double total = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
            double prior = 0.0;
            if (i == 0) {
                prior = 1.0 / num_states_;
            } else {
                for (std::size_t s = 0; s < k; ++s) prior += alpha[i - 1][s] * trans_[s][t];
            }
            alpha[i][t] = prior * emission_prob(variant, static_cast<int>(t), sym);
            total += alpha[i][t];
        }
        for (auto& v : alpha[i]) v /= std::max(total, 1e-300);
    }
    for (std::size_t i = n - 1; i-- > 0;) {
        const int sym = symbols[i + 1] - kFirstSymbol;
        double total = 0.0;
        for (std::size_t s = 0; s < k; ++s) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                acc += trans_[s][t] * emission_prob(variant, static_cast<int>(t), sym) *
                       beta[i + 1][t];
            }
            beta[i][s] = acc;
            total += acc;
        }
        for (auto& v : beta[i]) v /= std::max(total, 1e-300);
    }

    std::vector<int> states(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_p = -1.0;
        for (std::size_t s = 0; s < k; ++s) {
            const double p = alpha[i][s] * beta[i][s];
            if (p > best_p) {
                best_p = p;
                best = s;
            }
        }
        states[i] = static_cast<int>(best);
    }
    return states;
}

namespace {

Grammar grammar_for(const TaskSpec& spec) {
    // 24 symbols fit comfortably inside the toy vocab of 128. The grammar's
    // structural seed is fixed: every task with the same state count speaks
    // the same language, so pretraining transfers to downstream tasks.
    // spec.seed still drives example sampling.
    return Grammar(spec.grammar_states, 24, spec.noise_rate, 7);
}

Example frame_single(const std::vector<int>& body) {
    Example e;
    e.tokens.push_back(kClsId);
    e.tokens.insert(e.tokens.end(), body.begin(), body.end());
    e.tokens.push_back(kSepId);
    e.segments.assign(e.tokens.size(), 0);
    return e;
}

Example frame_pair(const std::vector<int>& a, const std::vector<int>& b) {
    Example e;
    e.tokens.push_back(kClsId);
    e.tokens.insert(e.tokens.end(), a.begin(), a.end());
    e.tokens.push_back(kSepId);
    const std::size_t first_len = e.tokens.size();
    e.tokens.insert(e.tokens.end(), b.begin(), b.end());
    e.tokens.push_back(kSepId);
    e.segments.assign(e.tokens.size(), 1);
    std::fill(e.segments.begin(), e.segments.begin() + static_cast<std::ptrdiff_t>(first_len), 0);
    return e;
}

/// Splits a framed example back into raw symbol runs (1 or 2).
std::vector<std::vector<int>> unframe(const Example& e) {
    std::vector<std::vector<int>> runs(1);
    for (std::size_t i = 1; i < e.tokens.size(); ++i) {
        if (e.tokens[i] == kSepId) {
            if (i + 1 < e.tokens.size()) runs.emplace_back();
        } else if (e.tokens[i] != kPadId) {
            runs.back().push_back(e.tokens[i]);
        }
    }
    return runs;
}

void fill_splits(const TaskSpec& spec, Dataset& data,
                 const std::function<Example(std::mt19937_64&)>& make) {
    std::mt19937_64 rng(spec.seed);
    std::unordered_set<std::string> train_keys;
    while (data.train.size() < spec.train_size) {
        Example e = make(rng);
        train_keys.insert(example_key(e));
        data.train.push_back(std::move(e));
    }
    std::size_t attempts = 0;
    while (data.dev.size() < spec.dev_size) {
        Example e = make(rng);
        if (train_keys.count(example_key(e))) {
            if (++attempts > spec.dev_size * 1000) {
                throw std::runtime_error("cannot generate a dev split disjoint from train");
            }
            continue;
        }
        data.dev.push_back(std::move(e));
    }
    data.provenance = to_string(spec.kind) + ":seed=" + std::to_string(spec.seed) +
                      ":train=" + std::to_string(spec.train_size) +
                      ":dev=" + std::to_string(spec.dev_size);
}

}  // namespace

Dataset gen_pretrain(const TaskSpec& spec) {
    spec.validate();
    if (spec.kind != TaskKind::PretrainMlm) {
        throw std::invalid_argument("gen_pretrain requires kind=pretrain-mlm");
    }
    const Grammar grammar = grammar_for(spec);
    Dataset data;
    data.kind = spec.kind;
    data.label_kind = LabelKind::PerTokenClass;
    data.vocab_size = 128;
    data.num_classes = 128;  // predict over the full toy vocab

    fill_splits(spec, data, [&](std::mt19937_64& rng) {
        const int len = uniform_int(rng, 8, spec.max_seq_len - 2);
        Example e = frame_single(grammar.generate(rng, len, coin(rng)));
        e.label_tokens.assign(e.tokens.size(), kIgnoreLabel);
        std::vector<std::size_t> masked;
        for (std::size_t i = 1; i + 1 < e.tokens.size(); ++i) {
            if (uniform_real(rng) < 0.15) masked.push_back(i);
        }
        if (masked.empty()) {
            masked.push_back(static_cast<std::size_t>(
                uniform_int(rng, 1, static_cast<int>(e.tokens.size()) - 2)));
        }
        for (std::size_t i : masked) {
            e.label_tokens[i] = e.tokens[i];
            e.tokens[i] = kMaskId;
        }
        return e;
    });
    return data;
}

Dataset gen_downstream(const TaskSpec& spec) {
    spec.validate();
    const Grammar grammar = grammar_for(spec);
    Dataset data;
    data.kind = spec.kind;
    data.vocab_size = 128;

    switch (spec.kind) {
        case TaskKind::SingleClassify: {
            data.label_kind = LabelKind::Class;
            data.num_classes = 2;
            fill_splits(spec, data, [&](std::mt19937_64& rng) {
                const int variant = coin(rng);
                const int len = uniform_int(rng, 8, spec.max_seq_len - 2);
                Example e = frame_single(grammar.generate(rng, len, variant));
                e.label_class = variant;
                return e;
            });
            break;
        }
        case TaskKind::PairClassify: {
            data.label_kind = LabelKind::Class;
            data.num_classes = 2;
            const int body = std::max(4, (spec.max_seq_len - 3) / 2);
            // Both segments are drawn from one variant and the label is that
            // variant: evidence accumulates across the pair, so the task is a
            // strictly easier sibling of single-classify rather than an
            // equality test between two latent variables.
            fill_splits(spec, data, [&](std::mt19937_64& rng) {
                const int variant = coin(rng);
                const int len1 = uniform_int(rng, 4, body);
                const int len2 = uniform_int(rng, 4, body);
                Example e = frame_pair(grammar.generate(rng, len1, variant),
                                       grammar.generate(rng, len2, variant));
                e.label_class = variant;
                return e;
            });
            break;
        }
        case TaskKind::PairRegress: {
            data.label_kind = LabelKind::Float;
            data.num_classes = 0;
            const int body = std::max(4, (spec.max_seq_len - 3) / 2);
            fill_splits(spec, data, [&](std::mt19937_64& rng) {
                const int variant = coin(rng);
                const int len = uniform_int(rng, 4, body);
                const auto a = grammar.generate(rng, len, variant);
                auto b = a;
                const double mutate = uniform_real(rng) * 0.9;
                for (auto& tok : b) {
                    if (uniform_real(rng) < mutate) {
                        tok = kFirstSymbol + uniform_int(rng, 0, grammar.num_symbols() - 1);
                    }
                }
                Example e = frame_pair(a, b);
                const std::size_t dist = edit_distance(a, b);
                e.label_float =
                    1.0 - static_cast<double>(dist) / static_cast<double>(std::max(a.size(), b.size()));
                return e;
            });
            break;
        }
        case TaskKind::TokenTag: {
            data.label_kind = LabelKind::PerTokenClass;
            data.num_classes = spec.grammar_states;
            fill_splits(spec, data, [&](std::mt19937_64& rng) {
                const int variant = coin(rng);
                const int len = uniform_int(rng, 8, spec.max_seq_len - 2);
                std::vector<int> states;
                Example e = frame_single(grammar.generate(rng, len, variant, &states));
                e.label_tokens.assign(e.tokens.size(), kIgnoreLabel);
                for (std::size_t i = 0; i < states.size(); ++i) {
                    e.label_tokens[i + 1] = states[i];
                }
                return e;
            });
            break;
        }
        case TaskKind::PretrainMlm:
            throw std::invalid_argument("use gen_pretrain for pretrain-mlm");
    }
    return data;
}

double bayes_dev_metric(const TaskSpec& spec, const Dataset& data) {
    const Grammar grammar = grammar_for(spec);
    std::size_t hit = 0, count = 0;
    for (const auto& e : data.dev) {
        const auto runs = unframe(e);
        switch (data.kind) {
            case TaskKind::SingleClassify: {
                const int pred = grammar.variant_posterior(runs[0]) >= 0.5 ? 1 : 0;
                hit += pred == e.label_class;
                ++count;
                break;
            }
            case TaskKind::PairClassify: {
                // Independent-segment posteriors combine by odds product.
                const double p1 = grammar.variant_posterior(runs[0]);
                const double p2 = grammar.variant_posterior(runs[1]);
                const double joint = p1 * p2;
                const double other = (1.0 - p1) * (1.0 - p2);
                const int pred = joint >= other ? 1 : 0;
                hit += pred == e.label_class;
                ++count;
                break;
            }
            case TaskKind::TokenTag: {
                const int v = grammar.variant_posterior(runs[0]) >= 0.5 ? 1 : 0;
                const auto states = grammar.posterior_states(runs[0], v);
                for (std::size_t i = 0; i < states.size(); ++i) {
                    if (e.label_tokens[i + 1] == kIgnoreLabel) continue;
                    hit += states[i] == e.label_tokens[i + 1];
                    ++count;
                }
                break;
            }
            default:
                throw std::invalid_argument("no Bayes accuracy oracle for " + to_string(data.kind));
        }
    }
    return count ? static_cast<double>(hit) / static_cast<double>(count) : 0.0;
}

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string Dataset::content_hash() const {
    Sha256 h;
    auto feed = [&h](const std::vector<Example>& split) {
        for (const auto& e : split) {
            h.update(e.tokens.data(), e.tokens.size() * sizeof(int));
            h.update(e.segments.data(), e.segments.size() * sizeof(int));
            h.update(&e.label_class, sizeof(e.label_class));
            h.update(&e.label_float, sizeof(e.label_float));
            h.update(e.label_tokens.data(), e.label_tokens.size() * sizeof(int));
        }
    };
    feed(train);
    feed(dev);
    return h.hex_digest();
}

void Dataset::export_jsonl(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    auto dump = [&](const std::vector<Example>& split, const char* name) {
        for (const auto& e : split) {
            nlohmann::json j;
            j["split"] = name;
            j["tokens"] = e.tokens;
            j["segments"] = e.segments;
            switch (label_kind) {
                case LabelKind::Class: j["label"] = e.label_class; break;
                case LabelKind::Float: j["label"] = e.label_float; break;
                case LabelKind::PerTokenClass: j["label"] = e.label_tokens; break;
            }
            os << j.dump() << '\n';
        }
    };
    dump(train, "train");
    dump(dev, "dev");
}

Dataset load_tsv(const std::string& path, const TsvSchema& schema) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open TSV file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty TSV file: " + path);

    auto split_tabs = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == '\t') {
                out.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur.push_back(c);
            }
        }
        out.push_back(cur);
        return out;
    };

    const auto header = split_tabs(line);
    auto col_index = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        throw std::runtime_error("TSV is missing column '" + name + "'");
    };
    const int c1 = col_index(schema.sentence_col);
    const int c2 = schema.sentence2_col.empty() ? -1 : col_index(schema.sentence2_col);
    const int cl = col_index(schema.label_col);

    struct Row {
        std::vector<std::string> s1, s2;
        int label_class = 0;
        double label_float = 0.0;
    };
    std::vector<Row> rows;
    std::size_t skipped = 0;
    auto tokenize = [](const std::string& s) {
        std::istringstream iss(s);
        std::vector<std::string> toks;
        std::string t;
        while (iss >> t) toks.push_back(t);
        return toks;
    };
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        const int needed = std::max({c1, c2, cl});
        if (static_cast<int>(cells.size()) <= needed) {
            ++skipped;
            continue;
        }
        Row r;
        r.s1 = tokenize(cells[static_cast<std::size_t>(c1)]);
        if (c2 >= 0) r.s2 = tokenize(cells[static_cast<std::size_t>(c2)]);
        try {
            if (schema.label_kind == LabelKind::Float) {
                r.label_float = std::stod(cells[static_cast<std::size_t>(cl)]);
            } else {
                r.label_class = std::stoi(cells[static_cast<std::size_t>(cl)]);
            }
        } catch (const std::exception&) {
            ++skipped;
            continue;
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::runtime_error("TSV has no usable rows: " + path);

    const std::size_t dev_count = static_cast<std::size_t>(
        static_cast<double>(rows.size()) * schema.dev_fraction);
    const std::size_t train_count = rows.size() - dev_count;

    // Frequency-capped vocab from the train split only; ties by token text.
    std::map<std::string, std::size_t> freq;
    for (std::size_t i = 0; i < train_count; ++i) {
        for (const auto& t : rows[i].s1) ++freq[t];
        for (const auto& t : rows[i].s2) ++freq[t];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::map<std::string, int> vocab;
    int next_id = kFirstSymbol;
    for (const auto& [tok, _] : ranked) {
        if (next_id >= schema.max_vocab) break;
        vocab[tok] = next_id++;
    }

    auto to_ids = [&](const std::vector<std::string>& toks) {
        std::vector<int> ids;
        ids.reserve(toks.size());
        for (const auto& t : toks) {
            auto it = vocab.find(t);
            ids.push_back(it == vocab.end() ? kUnkId : it->second);
        }
        return ids;
    };

    Dataset data;
    data.kind = c2 >= 0 ? (schema.label_kind == LabelKind::Float ? TaskKind::PairRegress
                                                                 : TaskKind::PairClassify)
                        : TaskKind::SingleClassify;
    data.label_kind = schema.label_kind;
    data.vocab_size = schema.max_vocab;
    data.num_classes = 0;
    if (schema.label_kind == LabelKind::Class) {
        for (const auto& r : rows) data.num_classes = std::max(data.num_classes, r.label_class + 1);
    }

    const std::size_t budget = static_cast<std::size_t>(schema.max_seq_len) - (c2 >= 0 ? 3 : 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto a = to_ids(rows[i].s1);
        auto b = to_ids(rows[i].s2);
        // Pair truncation: trim the longer sequence first, one token at a time.
        while (a.size() + b.size() > budget) {
            if (b.size() > a.size()) b.pop_back();
            else a.pop_back();
        }
        Example e = (c2 >= 0) ? frame_pair(a, b) : frame_single(a);
        e.label_class = rows[i].label_class;
        e.label_float = rows[i].label_float;
        auto& split = (i < train_count) ? data.train : data.dev;
        split.push_back(std::move(e));
    }
    data.provenance = "tsv:" + path + ":skipped=" + std::to_string(skipped);
    return data;
}

}  // namespace mwt
