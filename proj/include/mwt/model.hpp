#pragma once

#include "mwt/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mwt {

enum class ModuleTag {
    MultiHead,
    FeedForward,
    LN_Att,
    LN_FFN,
    Embedding,
    EmbeddingLN,
    Classifier,
};

std::string to_string(ModuleTag tag);
std::optional<ModuleTag> tag_from_string(const std::string& s);

enum class HeadKind { SequenceClassify, SequenceRegress, TokenTag };

struct ModelConfig {
    int num_layers = 4;
    int hidden = 64;
    int ffn_dim = 256;
    int num_heads = 4;
    int vocab_size = 128;
    int max_positions = 32;
    int type_vocab = 2;
    int num_classes = 2;  // 0 => regression head with a single output
    double dropout = 0.1;
    double layer_norm_eps = 1e-12;

    void validate() const;
    int head_dim() const { return hidden / num_heads; }

    static ModelConfig base_preset();
    static ModelConfig toy_preset();
    static std::optional<ModelConfig> preset(const std::string& name);
};

/// One named parameter tensor plus its module role. Biases inside
/// MultiHead/FeedForward keep the host tag and set `is_bias`.
struct ParamGroup {
    std::string name;
    TensorPtr tensor;
    ModuleTag tag;
    std::optional<int> layer_index;
    bool is_bias = false;
};

struct Batch {
    std::vector<int> token_ids;    // [B,S] row-major
    std::vector<int> segment_ids;  // [B,S]
    std::vector<int> attention_mask;  // [B,S], 1 = attend
    int batch = 0;
    int seq_len = 0;
};

class Model {
public:
    Model(ModelConfig config, HeadKind head, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    HeadKind head() const { return head_; }
    const std::vector<ParamGroup>& registry() const { return registry_; }
    std::vector<ParamGroup>& registry() { return registry_; }

    const ParamGroup& group(const std::string& name) const;

    /// Runs the encoder plus head. Classify/regress: [B,C]; tag: [B,S,C]
    /// (C=1 for regression).
    TensorPtr forward(Graph& g, const Batch& batch) const;

    std::size_t total_params() const;
    void zero_grads();

    /// Deep copy; parameter tensors are cloned, never shared.
    Model clone() const;

    /// Replaces the classifier head, re-initialized from `seed`; encoder
    /// parameters are untouched.
    void reset_head(HeadKind head, int num_classes, std::uint64_t seed);

    void save_checkpoint(const std::string& path) const;
    static Model load_checkpoint(const std::string& path, const ModelConfig& config,
                                 HeadKind head);

    /// SHA-256 over the float32 bytes of every parameter, registry order.
    std::string param_digest() const;

private:
    Model(ModelConfig config, HeadKind head);  // uninitialized params
    void build_registry();
    void init_params(std::uint64_t seed);
    int head_classes() const;

    ModelConfig config_;
    HeadKind head_;
    std::vector<ParamGroup> registry_;
};

struct ParamCount {
    std::size_t selected = 0;
    std::size_t total = 0;
    double ratio = 0.0;  // selected / total, full model including head
};

ParamCount count_params(const std::vector<ParamGroup>& registry,
                        const std::function<bool(const ParamGroup&)>& filter);

}  // namespace mwt
