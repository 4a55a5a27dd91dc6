#pragma once

#include "mwt/metrics.hpp"
#include "mwt/model.hpp"
#include "mwt/selection.hpp"
#include "mwt/tasks.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mwt {

struct TrainConfig {
    double peak_lr = 1e-4;
    std::vector<double> lr_sweep = {1e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
    int epochs = 20;
    int batch_size = 16;
    double warmup_ratio = 0.10;
    double adam_eps = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double weight_decay = 0.0;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    int max_seq_len = 128;

    void validate() const;
};

/// Linear warmup to `peak` over round(warmup_ratio * total) steps, then
/// linear decay to zero at `total_steps`.
double lr_at(std::size_t step, std::size_t total_steps, double peak, double warmup_ratio);

/// First/second Adam moments, allocated only for masked-in indices.
class AdamState {
public:
    AdamState(const TrainMask& mask, const std::vector<ParamGroup>& registry);

    std::size_t step() const { return step_; }
    std::size_t cardinality() const;

    void apply(std::vector<ParamGroup>& registry, const TrainMask& mask, double lr,
               const TrainConfig& tc);

private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;  // parallel to registry
    std::size_t step_ = 0;
};

struct RunReport {
    std::string task;
    std::string regime;
    std::string layers;      // SingleLayerLN layer set, "" otherwise
    std::string n_outliers;  // OutlierLN n, "" otherwise
    double lr = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> epoch_metrics;
    double best_metric = 0.0;
    int best_epoch = -1;
    std::string metric_name;
    std::size_t trainable = 0;
    std::size_t total = 0;
    double ratio = 0.0;
    double wall_seconds = 0.0;
    std::string config_hash;
    std::string frozen_digest_before;
    std::string frozen_digest_after;
    bool failed = false;
    std::string fail_reason;

    std::string to_jsonl() const;
    static std::string csv_header();
    std::string to_csv_row() const;
};

MetricKind default_metric(const Dataset& data);

/// Runs the model on a split in eval mode and scores it.
double evaluate(const Model& model, const std::vector<Example>& split, const Dataset& data,
                MetricKind metric, int batch_size, int max_seq_len);

/// Fine-tunes a copy of `init_model` (head re-initialized from `seed`) and
/// reports the best dev epoch. The mask decides which parameters move.
/// When `out_model` is given it receives the final trained parameters.
RunReport train(const Model& init_model, const Dataset& data, const SelectionSpec& spec,
                const TrainConfig& tc, double lr, std::uint64_t seed,
                Model* out_model = nullptr);

struct SweepResult {
    std::vector<RunReport> grid;
    double best_lr = 0.0;
    double best_mean = 0.0;
    double best_std = 0.0;
};

/// |lr_sweep| x |seeds| runs from the same starting checkpoint; best lr by
/// mean dev metric across seeds (ties: first in sweep order). Failed runs are
/// excluded from means.
SweepResult sweep(const Model& init_model, const Dataset& data, const SelectionSpec& spec,
                  const TrainConfig& tc);

/// SHA-256 over the float32 bytes of all masked-out parameters.
std::string frozen_digest(const std::vector<ParamGroup>& registry, const TrainMask& mask);

}  // namespace mwt
