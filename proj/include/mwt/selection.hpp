#pragma once

#include "mwt/model.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mwt {

enum class Regime {
    FullFT,
    Freeze,
    MultiHead,
    FeedForward,
    LayerNorms,
    LayerNormsAtt,
    LayerNormsFFN,
    BitFit,
    Rand,
    OutlierLN,
    SingleLayerLN,
};

std::string to_string(Regime r);
std::optional<Regime> regime_from_string(const std::string& s);

/// Declarative description of which parameters train.
struct SelectionSpec {
    Regime regime = Regime::FullFT;
    std::optional<std::set<int>> layer_filter;     // SingleLayerLN
    std::optional<std::size_t> n_outliers;         // OutlierLN
    std::optional<std::size_t> rand_budget;        // Rand
    std::uint64_t rand_seed = 0;
    bool include_classifier = true;

    void validate() const;
    std::string describe() const;
};

/// Exact per-tensor train mask: all, none, or a sorted index list into the
/// flattened tensor.
struct MaskEntry {
    enum class Kind { All, None, Indices } kind = Kind::None;
    std::vector<std::uint32_t> indices;  // Kind::Indices only, strictly increasing

    std::size_t count(std::size_t tensor_size) const {
        switch (kind) {
            case Kind::All: return tensor_size;
            case Kind::None: return 0;
            case Kind::Indices: return indices.size();
        }
        return 0;
    }
    bool selects(std::uint32_t i) const;
};

struct TrainMask {
    std::vector<MaskEntry> entries;  // parallel to the registry

    std::size_t trainable_count(const std::vector<ParamGroup>& registry) const;
};

struct MaskStats {
    std::size_t trainable = 0;
    std::size_t total = 0;
    double ratio = 0.0;
    std::map<std::string, std::size_t> per_tag;  // tag name -> selected count
};

TrainMask resolve(const SelectionSpec& spec, const std::vector<ParamGroup>& registry);

/// Indices of the min(n, size) values farthest from the tensor mean; ties go
/// to the lower index. Result is sorted ascending.
std::vector<std::uint32_t> select_outliers(const Tensor& t, std::size_t n);
std::vector<std::uint32_t> select_outliers(const std::vector<double>& values, std::size_t n);

TrainMask apply_outlier_regime(const std::vector<ParamGroup>& registry, std::size_t n,
                               bool include_classifier = true);

MaskStats mask_stats(const TrainMask& mask, const std::vector<ParamGroup>& registry);

}  // namespace mwt
