#include "mwt/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace mwt {

std::string to_string(Regime r) {
    switch (r) {
        case Regime::FullFT: return "FullFT";
        case Regime::Freeze: return "Freeze";
        case Regime::MultiHead: return "MultiHead";
        case Regime::FeedForward: return "FeedForward";
        case Regime::LayerNorms: return "LayerNorms";
        case Regime::LayerNormsAtt: return "LayerNormsAtt";
        case Regime::LayerNormsFFN: return "LayerNormsFFN";
        case Regime::BitFit: return "BitFit";
        case Regime::Rand: return "Rand";
        case Regime::OutlierLN: return "OutlierLN";
        case Regime::SingleLayerLN: return "SingleLayerLN";
    }
    return "?";
}

std::optional<Regime> regime_from_string(const std::string& s) {
    for (Regime r : {Regime::FullFT, Regime::Freeze, Regime::MultiHead, Regime::FeedForward,
                     Regime::LayerNorms, Regime::LayerNormsAtt, Regime::LayerNormsFFN,
                     Regime::BitFit, Regime::Rand, Regime::OutlierLN, Regime::SingleLayerLN}) {
        if (to_string(r) == s) return r;
    }
    return std::nullopt;
}

void SelectionSpec::validate() const {
    if ((regime == Regime::OutlierLN) != n_outliers.has_value()) {
        throw std::invalid_argument("n_outliers is required iff regime=OutlierLN");
    }
    if ((regime == Regime::Rand) != rand_budget.has_value()) {
        throw std::invalid_argument("rand_budget is required iff regime=Rand");
    }
    if ((regime == Regime::SingleLayerLN) != layer_filter.has_value()) {
        throw std::invalid_argument("layer filter is required iff regime=SingleLayerLN");
    }
    if (n_outliers && *n_outliers < 1) throw std::invalid_argument("n_outliers must be >= 1");
    if (rand_budget && *rand_budget < 1) throw std::invalid_argument("rand_budget must be >= 1");
}

std::string SelectionSpec::describe() const {
    std::string s = to_string(regime);
    if (layer_filter) {
        s += ".layers=";
        bool first = true;
        for (int l : *layer_filter) {
            if (!first) s += "+";
            s += std::to_string(l);
            first = false;
        }
    }
    if (n_outliers) s += ".n=" + std::to_string(*n_outliers);
    if (rand_budget) s += ".budget=" + std::to_string(*rand_budget);
    return s;
}

bool MaskEntry::selects(std::uint32_t i) const {
    switch (kind) {
        case Kind::All: return true;
        case Kind::None: return false;
        case Kind::Indices:
            return std::binary_search(indices.begin(), indices.end(), i);
    }
    return false;
}

std::size_t TrainMask::trainable_count(const std::vector<ParamGroup>& registry) const {
    if (entries.size() != registry.size()) {
        throw std::invalid_argument("train mask does not match registry");
    }
    std::size_t n = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        n += entries[i].count(registry[i].tensor->size());
    }
    return n;
}

std::vector<std::uint32_t> select_outliers(const std::vector<double>& values, std::size_t n) {
    if (n < 1) throw std::invalid_argument("select_outliers: n must be >= 1");
    const std::size_t len = values.size();
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                        static_cast<double>(std::max<std::size_t>(len, 1));
    std::vector<std::uint32_t> idx(len);
    std::iota(idx.begin(), idx.end(), 0u);
    const std::size_t take = std::min(n, len);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          const double da = std::abs(values[a] - mean);
                          const double db = std::abs(values[b] - mean);
                          if (da != db) return da > db;
                          return a < b;
                      });
    std::vector<std::uint32_t> out(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::uint32_t> select_outliers(const Tensor& t, std::size_t n) {
    return select_outliers(std::vector<double>(t.values.begin(), t.values.end()), n);
}

namespace {

bool is_block_ln(const ParamGroup& g) {
    return g.tag == ModuleTag::LN_Att || g.tag == ModuleTag::LN_FFN;
}

/// Floyd's algorithm: k distinct uniform draws from [0, population).
std::vector<std::uint64_t> sample_without_replacement(std::uint64_t population, std::uint64_t k,
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

}  // namespace

TrainMask apply_outlier_regime(const std::vector<ParamGroup>& registry, std::size_t n,
                               bool include_classifier) {
    if (n < 1) throw std::invalid_argument("apply_outlier_regime: n must be >= 1");
    TrainMask mask;
    mask.entries.resize(registry.size());

    // Pool gamma then beta per norm; each norm is one 2H selection problem.
    for (std::size_t i = 0; i < registry.size(); ++i) {
        const auto& g = registry[i];
        if (g.tag == ModuleTag::Classifier) {
            mask.entries[i].kind = include_classifier ? MaskEntry::Kind::All : MaskEntry::Kind::None;
            continue;
        }
        if (!is_block_ln(g) || !g.name.ends_with("gamma")) continue;
        // Partner beta is the next registry entry by construction.
        if (i + 1 >= registry.size() || !registry[i + 1].name.ends_with("beta")) {
            throw std::logic_error("registry layout: gamma without adjacent beta at " + g.name);
        }
        const auto& gamma = g.tensor->values;
        const auto& beta = registry[i + 1].tensor->values;
        std::vector<double> pooled(gamma.begin(), gamma.end());
        pooled.insert(pooled.end(), beta.begin(), beta.end());
        const auto picked = select_outliers(pooled, n);
        const auto h = static_cast<std::uint32_t>(gamma.size());
        auto& ge = mask.entries[i];
        auto& be = mask.entries[i + 1];
        ge.kind = MaskEntry::Kind::Indices;
        be.kind = MaskEntry::Kind::Indices;
        for (std::uint32_t p : picked) {
            if (p < h) ge.indices.push_back(p);
            else be.indices.push_back(p - h);
        }
    }
    return mask;
}

TrainMask resolve(const SelectionSpec& spec, const std::vector<ParamGroup>& registry) {
    spec.validate();
    if (spec.regime == Regime::OutlierLN) {
        return apply_outlier_regime(registry, *spec.n_outliers, spec.include_classifier);
    }

    TrainMask mask;
    mask.entries.resize(registry.size());
    auto set_all = [&](std::size_t i) { mask.entries[i].kind = MaskEntry::Kind::All; };

    if (spec.regime == Regime::SingleLayerLN) {
        int max_layer = -1;
        for (const auto& g : registry) {
            if (g.layer_index) max_layer = std::max(max_layer, *g.layer_index);
        }
        for (int l : *spec.layer_filter) {
            if (l < 0 || l > max_layer) {
                throw std::out_of_range("layer index " + std::to_string(l) + " out of range");
            }
        }
    }

    for (std::size_t i = 0; i < registry.size(); ++i) {
        const auto& g = registry[i];
        if (g.tag == ModuleTag::Classifier) {
            if (spec.include_classifier || spec.regime == Regime::FullFT) set_all(i);
            continue;
        }
        switch (spec.regime) {
            case Regime::FullFT:
                set_all(i);
                break;
            case Regime::Freeze:
            case Regime::Rand:
                break;
            case Regime::MultiHead:
                if (g.tag == ModuleTag::MultiHead) set_all(i);
                break;
            case Regime::FeedForward:
                if (g.tag == ModuleTag::FeedForward) set_all(i);
                break;
            case Regime::LayerNorms:
                if (is_block_ln(g)) set_all(i);
                break;
            case Regime::LayerNormsAtt:
                if (g.tag == ModuleTag::LN_Att) set_all(i);
                break;
            case Regime::LayerNormsFFN:
                if (g.tag == ModuleTag::LN_FFN) set_all(i);
                break;
            case Regime::BitFit:
                // Biases of linear maps only; LayerNorm betas stay frozen.
                if (g.is_bias &&
                    (g.tag == ModuleTag::MultiHead || g.tag == ModuleTag::FeedForward)) {
                    set_all(i);
                }
                break;
            case Regime::SingleLayerLN:
                if (is_block_ln(g) && g.layer_index && spec.layer_filter->count(*g.layer_index)) {
                    set_all(i);
                }
                break;
            case Regime::OutlierLN:
                break;  // handled above
        }
    }

    if (spec.regime == Regime::Rand) {
        std::uint64_t population = 0;
        for (const auto& g : registry) {
            if (g.tag != ModuleTag::Classifier) population += g.tensor->size();
        }
        if (*spec.rand_budget > population) {
            throw std::out_of_range("rand_budget exceeds non-classifier parameter count");
        }
        const auto flat = sample_without_replacement(population, *spec.rand_budget, spec.rand_seed);
        std::size_t fi = 0;
        std::uint64_t offset = 0;
        for (std::size_t i = 0; i < registry.size(); ++i) {
            const auto& g = registry[i];
            if (g.tag == ModuleTag::Classifier) continue;
            const std::uint64_t end = offset + g.tensor->size();
            auto& e = mask.entries[i];
            while (fi < flat.size() && flat[fi] < end) {
                e.kind = MaskEntry::Kind::Indices;
                e.indices.push_back(static_cast<std::uint32_t>(flat[fi] - offset));
                ++fi;
            }
            offset = end;
        }
    }

    return mask;
}

MaskStats mask_stats(const TrainMask& mask, const std::vector<ParamGroup>& registry) {
    if (mask.entries.size() != registry.size()) {
        throw std::invalid_argument("mask does not match registry");
    }
    MaskStats stats;
    for (std::size_t i = 0; i < registry.size(); ++i) {
        const std::size_t sz = registry[i].tensor->size();
        const std::size_t sel = mask.entries[i].count(sz);
        stats.total += sz;
        stats.trainable += sel;
        if (sel > 0) stats.per_tag[to_string(registry[i].tag)] += sel;
    }
    stats.ratio = stats.total
                      ? static_cast<double>(stats.trainable) / static_cast<double>(stats.total)
                      : 0.0;
    return stats;
}

}  // namespace mwt
