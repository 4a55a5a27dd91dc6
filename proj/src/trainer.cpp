#include "mwt/trainer.hpp"

#include "mwt/sha256.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace mwt {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

HeadKind head_for(const Dataset& data) {
    switch (data.label_kind) {
        case LabelKind::Class: return HeadKind::SequenceClassify;
        case LabelKind::Float: return HeadKind::SequenceRegress;
        case LabelKind::PerTokenClass: return HeadKind::TokenTag;
    }
    return HeadKind::SequenceClassify;
}

struct LossBatch {
    Batch batch;
    std::vector<int> gold_class;      // per sequence or per token (flattened)
    std::vector<double> gold_float;   // regression
};

LossBatch make_batch(const std::vector<Example>& split, const std::vector<std::size_t>& idx,
                     std::size_t begin, std::size_t end, const Dataset& data, int max_seq_len) {
    LossBatch lb;
    int S = 0;
    for (std::size_t i = begin; i < end; ++i) {
        S = std::max(S, static_cast<int>(split[idx[i]].tokens.size()));
    }
    S = std::min(S, max_seq_len);
    const int B = static_cast<int>(end - begin);
    lb.batch.batch = B;
    lb.batch.seq_len = S;
    lb.batch.token_ids.assign(static_cast<std::size_t>(B * S), kPadId);
    lb.batch.segment_ids.assign(static_cast<std::size_t>(B * S), 0);
    lb.batch.attention_mask.assign(static_cast<std::size_t>(B * S), 0);
    const bool per_token = data.label_kind == LabelKind::PerTokenClass;
    if (per_token) lb.gold_class.assign(static_cast<std::size_t>(B * S), kIgnoreLabel);

    for (int b = 0; b < B; ++b) {
        const Example& e = split[idx[begin + static_cast<std::size_t>(b)]];
        const int len = std::min(S, static_cast<int>(e.tokens.size()));
        for (int s = 0; s < len; ++s) {
            lb.batch.token_ids[static_cast<std::size_t>(b * S + s)] = e.tokens[static_cast<std::size_t>(s)];
            lb.batch.segment_ids[static_cast<std::size_t>(b * S + s)] = e.segments[static_cast<std::size_t>(s)];
            lb.batch.attention_mask[static_cast<std::size_t>(b * S + s)] = 1;
            if (per_token) {
                lb.gold_class[static_cast<std::size_t>(b * S + s)] =
                    e.label_tokens[static_cast<std::size_t>(s)];
            }
        }
        if (data.label_kind == LabelKind::Class) lb.gold_class.push_back(e.label_class);
        if (data.label_kind == LabelKind::Float) lb.gold_float.push_back(e.label_float);
    }
    return lb;
}

TensorPtr batch_loss(Graph& g, const Model& model, const LossBatch& lb, const Dataset& data) {
    auto logits = model.forward(g, lb.batch);
    switch (data.label_kind) {
        case LabelKind::Class:
            return g.softmax_cross_entropy(logits, lb.gold_class);
        case LabelKind::Float: {
            auto flat = g.reshape(logits, {lb.batch.batch});
            return g.mse_loss(flat, lb.gold_float);
        }
        case LabelKind::PerTokenClass: {
            auto flat = g.reshape(logits, {lb.batch.batch * lb.batch.seq_len,
                                           logits->last_dim()});
            return g.softmax_cross_entropy(flat, lb.gold_class, kIgnoreLabel);
        }
    }
    throw std::logic_error("unreachable label kind");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = a * 0x9E3779B97F4A7C15ull;
    h ^= b + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h ^= c + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    return h;
}

}  // namespace

void TrainConfig::validate() const {
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
        throw std::invalid_argument("warmup_ratio must be in [0,1)");
    }
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    for (double lr : lr_sweep) {
        if (lr <= 0.0) throw std::invalid_argument("learning rates must be positive");
    }
    if (peak_lr <= 0.0) throw std::invalid_argument("peak_lr must be positive");
    if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
}

double lr_at(std::size_t step, std::size_t total_steps, double peak, double warmup_ratio) {
    if (step > total_steps) throw std::out_of_range("lr_at: step past total_steps");
    const auto warmup = static_cast<std::size_t>(
        std::llround(warmup_ratio * static_cast<double>(total_steps)));
    if (warmup > 0 && step <= warmup) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total_steps == warmup) return peak;
    return peak * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

AdamState::AdamState(const TrainMask& mask, const std::vector<ParamGroup>& registry) {
    if (mask.entries.size() != registry.size()) {
        throw std::invalid_argument("adam state: mask does not match registry");
    }
    slots_.resize(registry.size());
    for (std::size_t i = 0; i < registry.size(); ++i) {
        const std::size_t n = mask.entries[i].count(registry[i].tensor->size());
        slots_[i].m.assign(n, 0.0);
        slots_[i].v.assign(n, 0.0);
    }
}

std::size_t AdamState::cardinality() const {
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.m.size();
    return n;
}

void AdamState::apply(std::vector<ParamGroup>& registry, const TrainMask& mask, double lr,
                      const TrainConfig& tc) {
    if (mask.entries.size() != slots_.size() || registry.size() != slots_.size()) {
        throw std::invalid_argument("adam apply: mask/state/registry mismatch");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(step_));

    for (std::size_t gi = 0; gi < registry.size(); ++gi) {
        auto& entry = mask.entries[gi];
        if (entry.kind == MaskEntry::Kind::None) continue;
        auto& tensor = *registry[gi].tensor;
        auto& slot = slots_[gi];
        const std::size_t n = entry.count(tensor.size());
        if (slot.m.size() != n) {
            throw std::invalid_argument("adam apply: state cardinality mismatch at " +
                                        registry[gi].name);
        }
        auto update_one = [&](std::size_t slot_i, std::size_t param_i) {
            double g = tensor.grad[param_i];
            if (tc.weight_decay != 0.0) g += tc.weight_decay * tensor.values[param_i];
            slot.m[slot_i] = tc.adam_beta1 * slot.m[slot_i] + (1.0 - tc.adam_beta1) * g;
            slot.v[slot_i] = tc.adam_beta2 * slot.v[slot_i] + (1.0 - tc.adam_beta2) * g * g;
            const double mhat = slot.m[slot_i] / bc1;
            const double vhat = slot.v[slot_i] / bc2;
            tensor.values[param_i] -= lr * mhat / (std::sqrt(vhat) + tc.adam_eps);
        };
        if (entry.kind == MaskEntry::Kind::All) {
            for (std::size_t i = 0; i < n; ++i) update_one(i, i);
        } else {
            for (std::size_t i = 0; i < n; ++i) update_one(i, entry.indices[i]);
        }
    }
}

MetricKind default_metric(const Dataset& data) {
    switch (data.kind) {
        case TaskKind::PretrainMlm:
        case TaskKind::TokenTag:
            return MetricKind::TokenAccuracy;
        case TaskKind::PairRegress:
            return MetricKind::Pearson;
        default:
            return MetricKind::Accuracy;
    }
}

double evaluate(const Model& model, const std::vector<Example>& split, const Dataset& data,
                MetricKind metric, int batch_size, int max_seq_len) {
    if (split.empty()) throw std::invalid_argument("evaluate: empty split");
    std::vector<std::size_t> idx(split.size());
    std::iota(idx.begin(), idx.end(), 0u);

    std::vector<double> preds, golds;
    for (std::size_t begin = 0; begin < idx.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(idx.size(), begin + static_cast<std::size_t>(batch_size));
        const LossBatch lb = make_batch(split, idx, begin, end, data, max_seq_len);
        Graph g(false);
        auto logits = model.forward(g, lb.batch);
        const int C = logits->last_dim();
        switch (data.label_kind) {
            case LabelKind::Class: {
                for (int b = 0; b < lb.batch.batch; ++b) {
                    const double* row = logits->values.data() + b * C;
                    preds.push_back(static_cast<double>(
                        std::max_element(row, row + C) - row));
                    golds.push_back(lb.gold_class[static_cast<std::size_t>(b)]);
                }
                break;
            }
            case LabelKind::Float: {
                for (int b = 0; b < lb.batch.batch; ++b) {
                    preds.push_back(logits->values[static_cast<std::size_t>(b)]);
                    golds.push_back(lb.gold_float[static_cast<std::size_t>(b)]);
                }
                break;
            }
            case LabelKind::PerTokenClass: {
                const std::size_t rows = static_cast<std::size_t>(lb.batch.batch * lb.batch.seq_len);
                for (std::size_t r = 0; r < rows; ++r) {
                    if (lb.gold_class[r] == kIgnoreLabel) continue;
                    const double* row = logits->values.data() + r * static_cast<std::size_t>(C);
                    preds.push_back(static_cast<double>(std::max_element(row, row + C) - row));
                    golds.push_back(lb.gold_class[r]);
                }
                break;
            }
        }
    }
    return compute_metric(metric, preds, golds);
}

RunReport train(const Model& init_model, const Dataset& data, const SelectionSpec& spec,
                const TrainConfig& tc, double lr, std::uint64_t seed, Model* out_model) {
    tc.validate();
    if (data.train.empty() || data.dev.empty()) {
        throw std::invalid_argument("train: dataset has an empty split");
    }
    const auto t_start = std::chrono::steady_clock::now();

    Model model = init_model.clone();
    const int classes = data.label_kind == LabelKind::Float ? 0 : data.num_classes;
    model.reset_head(head_for(data), classes, mix_seed(seed, 0xBEEF, 0));

    const TrainMask mask = resolve(spec, model.registry());
    const MaskStats stats = mask_stats(mask, model.registry());
    AdamState state(mask, model.registry());

    RunReport report;
    report.task = to_string(data.kind);
    report.regime = to_string(spec.regime);
    if (spec.layer_filter) {
        for (int l : *spec.layer_filter) {
            if (!report.layers.empty()) report.layers += "+";
            report.layers += std::to_string(l);
        }
    }
    if (spec.n_outliers) report.n_outliers = std::to_string(*spec.n_outliers);
    report.lr = lr;
    report.seed = seed;
    report.trainable = stats.trainable;
    report.total = stats.total;
    report.ratio = stats.ratio;
    const MetricKind metric = default_metric(data);
    report.metric_name = to_string(metric);
    report.frozen_digest_before = frozen_digest(model.registry(), mask);

    const std::size_t steps_per_epoch =
        (data.train.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
        static_cast<std::size_t>(tc.batch_size);
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(tc.epochs);

    std::vector<std::size_t> idx(data.train.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::mt19937_64 shuffle_rng(mix_seed(seed, 0x5EED, 1));

    std::size_t step = 0;
    for (int epoch = 0; epoch < tc.epochs && !report.failed; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < idx.size();
             begin += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end =
                std::min(idx.size(), begin + static_cast<std::size_t>(tc.batch_size));
            const LossBatch lb = make_batch(data.train, idx, begin, end, data, tc.max_seq_len);
            model.zero_grads();
            Graph g(true, mix_seed(seed, static_cast<std::uint64_t>(epoch), step));
            auto loss = batch_loss(g, model, lb, data);
            if (!std::isfinite(loss->values[0])) {
                report.failed = true;
                report.fail_reason = "non-finite loss at step " + std::to_string(step);
                break;
            }
            g.backward(loss);
            ++step;
            state.apply(model.registry(), mask, lr_at(step, total_steps, lr, tc.warmup_ratio), tc);
        }
        if (!report.failed) {
            report.epoch_metrics.push_back(
                evaluate(model, data.dev, data, metric, tc.batch_size, tc.max_seq_len));
        }
    }

    if (!report.epoch_metrics.empty()) {
        const auto best = std::max_element(report.epoch_metrics.begin(), report.epoch_metrics.end());
        report.best_metric = *best;
        report.best_epoch = static_cast<int>(best - report.epoch_metrics.begin());
    }
    report.frozen_digest_after = frozen_digest(model.registry(), mask);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (out_model) *out_model = std::move(model);
    return report;
}

SweepResult sweep(const Model& init_model, const Dataset& data, const SelectionSpec& spec,
                  const TrainConfig& tc) {
    tc.validate();
    SweepResult result;
    bool have_best = false;
    for (double lr : tc.lr_sweep) {
        std::vector<double> metrics;
        for (std::uint64_t seed : tc.seeds) {
            RunReport r = train(init_model, data, spec, tc, lr, seed);
            if (!r.failed) metrics.push_back(r.best_metric);
            result.grid.push_back(std::move(r));
        }
        if (metrics.empty()) continue;
        const double mean = std::accumulate(metrics.begin(), metrics.end(), 0.0) /
                            static_cast<double>(metrics.size());
        double var = 0.0;
        for (double m : metrics) var += (m - mean) * (m - mean);
        const double sd = std::sqrt(var / static_cast<double>(metrics.size()));
        if (!have_best || mean > result.best_mean) {
            have_best = true;
            result.best_lr = lr;
            result.best_mean = mean;
            result.best_std = sd;
        }
    }
    if (!have_best) throw std::runtime_error("sweep: every run failed");
    return result;
}

std::string frozen_digest(const std::vector<ParamGroup>& registry, const TrainMask& mask) {
    Sha256 h;
    for (std::size_t gi = 0; gi < registry.size(); ++gi) {
        const auto& entry = mask.entries[gi];
        const auto& values = registry[gi].tensor->values;
        if (entry.kind == MaskEntry::Kind::All) continue;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (entry.kind == MaskEntry::Kind::Indices && entry.selects(static_cast<std::uint32_t>(i))) {
                continue;
            }
            const float f = static_cast<float>(values[i]);
            h.update(&f, sizeof(f));
        }
    }
    return h.hex_digest();
}

std::string RunReport::to_jsonl() const {
    nlohmann::json j;
    j["task"] = task;
    j["regime"] = regime;
    j["layers"] = layers;
    j["n_outliers"] = n_outliers;
    j["lr"] = lr;
    j["seed"] = seed;
    j["epoch_metrics"] = epoch_metrics;
    j["best_metric"] = best_metric;
    j["best_epoch"] = best_epoch;
    j["metric_name"] = metric_name;
    j["trainable"] = trainable;
    j["total"] = total;
    j["ratio"] = ratio;
    j["config_hash"] = config_hash;
    j["frozen_digest_before"] = frozen_digest_before;
    j["frozen_digest_after"] = frozen_digest_after;
    j["failed"] = failed;
    j["fail_reason"] = fail_reason;
    // wall_seconds stays out: report files must be byte-identical across reruns
    return j.dump();
}

std::string RunReport::csv_header() {
    return "task,regime,layers,n_outliers,lr,seed,epoch_best,metric_name,metric_value,"
           "trainable,total,ratio";
}

std::string RunReport::to_csv_row() const {
    std::string row;
    row += task + ',' + regime + ',' + layers + ',' + n_outliers + ',';
    row += fmt_double(lr) + ',' + std::to_string(seed) + ',' + std::to_string(best_epoch) + ',';
    row += metric_name + ',' + fmt_double(best_metric) + ',';
    row += std::to_string(trainable) + ',' + std::to_string(total) + ',' + fmt_double(ratio);
    return row;
}

}  // namespace mwt
