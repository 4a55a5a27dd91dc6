#pragma once

#include "mwt/model.hpp"
#include "mwt/selection.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mwt {

/// Distribution summary for one module population. The LayerNorms population
/// pools every block gamma and beta and also reports them separately.
struct ModuleStats {
    std::string tag;
    std::size_t population = 0;
    std::size_t sample_size = 0;
    double mean = 0.0;
    double std_dev = 0.0;
    double min = 0.0;
    double max = 0.0;
    double skewness = 0.0;
    double kurtosis = 0.0;           // non-excess: 3 for a normal sample
    double bimodality = 0.0;         // (skewness^2 + 1) / kurtosis
    bool bimodal = false;            // bimodality > 5/9
    std::vector<double> bin_edges;   // histogram over the (possibly trimmed) sample
    std::vector<std::size_t> counts;
    std::optional<double> gamma_mean;  // LN populations only
    std::optional<double> beta_mean;

    std::string to_json() const;
    void write_histogram_csv(const std::string& path) const;
};

constexpr double kBimodalityThreshold = 5.0 / 9.0;

/// `tag` is a ModuleTag name, or "LayerNorms" for the pooled block-LN
/// population. Sampling is uniform without replacement over a fixed global
/// indexing of the population; the bimodality coefficient is computed on the
/// untrimmed sample, the histogram on the trimmed one when requested
/// (values beyond 3*IQR from the median are dropped).
ModuleStats module_weight_stats(const Model& model, const std::string& tag,
                                std::size_t sample_size, std::uint64_t seed,
                                bool trim_outliers);

struct NormOutliers {
    std::string norm_name;              // group prefix, e.g. layer.3.ln_att
    std::vector<std::uint32_t> indices; // pooled gamma+beta indices, deviation desc
    std::vector<double> values;
    std::vector<double> deviations;
};

/// Per-norm outlier listing, sorted by |value - mean| descending.
std::vector<NormOutliers> outlier_report(const Model& model, std::size_t n);

struct RatioRow {
    std::string regime;
    std::size_t encoder_trainable = 0;  // selected outside the classifier
    std::size_t trainable = 0;          // including classifier head
    double encoder_ratio = 0.0;         // encoder_trainable / total
    double ratio = 0.0;                 // trainable / total
};

/// One row per fine-tuning regime, in the fixed benchmark order. Rand uses
/// the LayerNorms budget; OutlierLN appears for n in {4,16,64,256};
/// SingleLayerLN uses the middle layer L/2.
std::vector<RatioRow> ratio_table(const std::vector<ParamGroup>& registry);

std::string ratio_table_csv(const std::vector<RatioRow>& rows);

}  // namespace mwt
