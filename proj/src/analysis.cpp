#include "mwt/analysis.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace mwt {

namespace {

constexpr std::size_t kHistogramBins = 40;

struct PopulationRef {
    const ParamGroup* group;
    bool is_gamma;  // LN populations: gamma vs beta subvector
};

std::vector<std::uint64_t> sample_indices(std::uint64_t population, std::uint64_t k,
                                          std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(k) * 2);
    for (std::uint64_t i = population - k; i < population; ++i) {
        std::uniform_int_distribution<std::uint64_t> u(0, i);
        const std::uint64_t j = u(rng);
        if (!chosen.insert(j).second) chosen.insert(i);
    }
    std::vector<std::uint64_t> out(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

ModuleStats module_weight_stats(const Model& model, const std::string& tag,
                                std::size_t sample_size, std::uint64_t seed,
                                bool trim_outliers) {
    const bool pooled_ln = tag == "LayerNorms";
    std::optional<ModuleTag> single;
    if (!pooled_ln) {
        single = tag_from_string(tag);
        if (!single) throw std::invalid_argument("unknown module tag: " + tag);
    }

    std::vector<const ParamGroup*> groups;
    for (const auto& g : model.registry()) {
        const bool match = pooled_ln ? (g.tag == ModuleTag::LN_Att || g.tag == ModuleTag::LN_FFN)
                                     : g.tag == *single;
        if (match) groups.push_back(&g);
    }
    std::uint64_t population = 0;
    for (const auto* g : groups) population += g->tensor->size();
    if (population == 0) throw std::invalid_argument("empty population for tag " + tag);
    if (sample_size > population) {
        throw std::invalid_argument("sample_size exceeds population for tag " + tag);
    }

    const auto flat = sample_indices(population, sample_size, seed);
    std::vector<double> sample;
    sample.reserve(sample_size);
    double gamma_sum = 0.0, beta_sum = 0.0;
    std::size_t gamma_n = 0, beta_n = 0;
    {
        std::size_t fi = 0;
        std::uint64_t offset = 0;
        for (const auto* g : groups) {
            const std::uint64_t end = offset + g->tensor->size();
            const bool is_gamma = g->name.ends_with("gamma");
            while (fi < flat.size() && flat[fi] < end) {
                const double v = g->tensor->values[static_cast<std::size_t>(flat[fi] - offset)];
                sample.push_back(v);
                if (pooled_ln) {
                    if (is_gamma) {
                        gamma_sum += v;
                        ++gamma_n;
                    } else {
                        beta_sum += v;
                        ++beta_n;
                    }
                }
                ++fi;
            }
            offset = end;
        }
    }

    ModuleStats stats;
    stats.tag = tag;
    stats.population = population;
    stats.sample_size = sample.size();
    const double n = static_cast<double>(sample.size());
    stats.mean = std::accumulate(sample.begin(), sample.end(), 0.0) / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : sample) {
        const double d = v - stats.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    stats.std_dev = std::sqrt(m2);
    stats.min = *std::min_element(sample.begin(), sample.end());
    stats.max = *std::max_element(sample.begin(), sample.end());
    stats.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    stats.kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
    stats.bimodality = stats.kurtosis > 0.0
                           ? (stats.skewness * stats.skewness + 1.0) / stats.kurtosis
                           : 1.0;  // a point mass counts as degenerate-bimodal
    stats.bimodal = stats.bimodality > kBimodalityThreshold;
    if (pooled_ln) {
        if (gamma_n) stats.gamma_mean = gamma_sum / static_cast<double>(gamma_n);
        if (beta_n) stats.beta_mean = beta_sum / static_cast<double>(beta_n);
    }

    std::vector<double> hist_sample = sample;
    if (trim_outliers) {
        std::vector<double> sorted = sample;
        std::sort(sorted.begin(), sorted.end());
        const double median = quantile_sorted(sorted, 0.5);
        const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
        const double lo = median - 3.0 * iqr;
        const double hi = median + 3.0 * iqr;
        hist_sample.clear();
        for (double v : sample) {
            if (v >= lo && v <= hi) hist_sample.push_back(v);
        }
    }
    if (!hist_sample.empty()) {
        const double lo = *std::min_element(hist_sample.begin(), hist_sample.end());
        double hi = *std::max_element(hist_sample.begin(), hist_sample.end());
        if (hi == lo) hi = lo + 1e-12;
        const double width = (hi - lo) / static_cast<double>(kHistogramBins);
        stats.bin_edges.resize(kHistogramBins + 1);
        for (std::size_t i = 0; i <= kHistogramBins; ++i) {
            stats.bin_edges[i] = lo + width * static_cast<double>(i);
        }
        stats.counts.assign(kHistogramBins, 0);
        for (double v : hist_sample) {
            auto bin = static_cast<std::size_t>((v - lo) / width);
            bin = std::min(bin, kHistogramBins - 1);
            ++stats.counts[bin];
        }
    }
    return stats;
}

std::string ModuleStats::to_json() const {
    nlohmann::json j;
    j["tag"] = tag;
    j["population"] = population;
    j["sample_size"] = sample_size;
    j["mean"] = mean;
    j["std"] = std_dev;
    j["min"] = min;
    j["max"] = max;
    j["skewness"] = skewness;
    j["kurtosis"] = kurtosis;
    j["bimodality_coefficient"] = bimodality;
    j["bimodal"] = bimodal;
    if (gamma_mean) j["gamma_mean"] = *gamma_mean;
    if (beta_mean) j["beta_mean"] = *beta_mean;
    j["bin_edges"] = bin_edges;
    j["counts"] = counts;
    return j.dump();
}

void ModuleStats::write_histogram_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) {
        os << bin_edges[i] << ',' << bin_edges[i + 1] << ',' << counts[i] << '\n';
    }
}

std::vector<NormOutliers> outlier_report(const Model& model, std::size_t n) {
    if (n < 1) throw std::invalid_argument("outlier_report: n must be >= 1");
    std::vector<NormOutliers> report;
    const auto& registry = model.registry();
    for (std::size_t i = 0; i < registry.size(); ++i) {
        const auto& g = registry[i];
        if ((g.tag != ModuleTag::LN_Att && g.tag != ModuleTag::LN_FFN) ||
            !g.name.ends_with("gamma")) {
            continue;
        }
        const auto& gamma = g.tensor->values;
        const auto& beta = registry[i + 1].tensor->values;
        std::vector<double> pooled(gamma.begin(), gamma.end());
        pooled.insert(pooled.end(), beta.begin(), beta.end());
        const double mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) /
                            static_cast<double>(pooled.size());
        auto picked = select_outliers(pooled, n);
        NormOutliers no;
        no.norm_name = g.name.substr(0, g.name.size() - std::string(".gamma").size());
        std::sort(picked.begin(), picked.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double da = std::abs(pooled[a] - mean);
            const double db = std::abs(pooled[b] - mean);
            if (da != db) return da > db;
            return a < b;
        });
        for (std::uint32_t p : picked) {
            no.indices.push_back(p);
            no.values.push_back(pooled[p]);
            no.deviations.push_back(std::abs(pooled[p] - mean));
        }
        report.push_back(std::move(no));
    }
    return report;
}

std::vector<RatioRow> ratio_table(const std::vector<ParamGroup>& registry) {
    std::size_t ln_encoder = 0;
    for (const auto& g : registry) {
        if (g.tag == ModuleTag::LN_Att || g.tag == ModuleTag::LN_FFN) ln_encoder += g.tensor->size();
    }
    int num_layers = 0;
    for (const auto& g : registry) {
        if (g.layer_index) num_layers = std::max(num_layers, *g.layer_index + 1);
    }

    std::vector<SelectionSpec> specs;
    auto plain = [&](Regime r) {
        SelectionSpec s;
        s.regime = r;
        specs.push_back(s);
    };
    plain(Regime::FullFT);
    plain(Regime::Freeze);
    plain(Regime::MultiHead);
    plain(Regime::FeedForward);
    plain(Regime::LayerNorms);
    plain(Regime::LayerNormsAtt);
    plain(Regime::LayerNormsFFN);
    plain(Regime::BitFit);
    {
        SelectionSpec s;
        s.regime = Regime::Rand;
        s.rand_budget = ln_encoder;
        specs.push_back(s);
    }
    for (std::size_t n : {4u, 16u, 64u, 256u}) {
        SelectionSpec s;
        s.regime = Regime::OutlierLN;
        s.n_outliers = n;
        specs.push_back(s);
    }
    {
        SelectionSpec s;
        s.regime = Regime::SingleLayerLN;
        s.layer_filter = {num_layers / 2};
        specs.push_back(s);
    }

    std::vector<RatioRow> rows;
    for (const auto& spec : specs) {
        const TrainMask mask = resolve(spec, registry);
        const MaskStats stats = mask_stats(mask, registry);
        RatioRow row;
        row.regime = spec.describe();
        row.trainable = stats.trainable;
        std::size_t head = 0;
        for (std::size_t i = 0; i < registry.size(); ++i) {
            if (registry[i].tag == ModuleTag::Classifier) {
                head += mask.entries[i].count(registry[i].tensor->size());
            }
        }
        row.encoder_trainable = stats.trainable - head;
        row.ratio = stats.ratio;
        row.encoder_ratio = static_cast<double>(row.encoder_trainable) /
                            static_cast<double>(stats.total);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ratio_table_csv(const std::vector<RatioRow>& rows) {
    std::string out = "regime,encoder_trainable,trainable,encoder_ratio,ratio\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.6g,%.6g\n", r.regime.c_str(),
                      r.encoder_trainable, r.trainable, r.encoder_ratio, r.ratio);
        out += buf;
    }
    return out;
}

}  // namespace mwt
