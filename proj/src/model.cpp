#include "mwt/model.hpp"

#include "mwt/sha256.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mwt {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint format error: truncated file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::vector<float> to_f32(const AlignedVec& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

double trunc_normal(std::mt19937_64& rng, double std_dev) {
    std::normal_distribution<double> n(0.0, std_dev);
    for (;;) {
        const double v = n(rng);
        if (std::abs(v) <= 2.0 * std_dev) return v;
    }
}

}  // namespace

std::string to_string(ModuleTag tag) {
    switch (tag) {
        case ModuleTag::MultiHead: return "MultiHead";
        case ModuleTag::FeedForward: return "FeedForward";
        case ModuleTag::LN_Att: return "LN_Att";
        case ModuleTag::LN_FFN: return "LN_FFN";
        case ModuleTag::Embedding: return "Embedding";
        case ModuleTag::EmbeddingLN: return "EmbeddingLN";
        case ModuleTag::Classifier: return "Classifier";
    }
    return "?";
}

std::optional<ModuleTag> tag_from_string(const std::string& s) {
    for (ModuleTag t : {ModuleTag::MultiHead, ModuleTag::FeedForward, ModuleTag::LN_Att,
                        ModuleTag::LN_FFN, ModuleTag::Embedding, ModuleTag::EmbeddingLN,
                        ModuleTag::Classifier}) {
        if (to_string(t) == s) return t;
    }
    return std::nullopt;
}

void ModelConfig::validate() const {
    if (num_layers < 1 || hidden < 1 || ffn_dim < 1 || num_heads < 1 || vocab_size < 1 ||
        max_positions < 1 || type_vocab < 1 || num_classes < 0) {
        throw std::invalid_argument("model config: all dimensions must be >= 1");
    }
    if (hidden % num_heads != 0) {
        throw std::invalid_argument("model config: hidden must be divisible by num_heads");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("model config: dropout must be in [0,1)");
    }
    if (layer_norm_eps <= 0.0) {
        throw std::invalid_argument("model config: layer_norm_eps must be positive");
    }
}

ModelConfig ModelConfig::base_preset() {
    ModelConfig c;
    c.num_layers = 12;
    c.hidden = 768;
    c.ffn_dim = 3072;
    c.num_heads = 12;
    c.vocab_size = 30522;
    c.max_positions = 512;
    c.type_vocab = 2;
    return c;
}

ModelConfig ModelConfig::toy_preset() {
    ModelConfig c;
    c.num_layers = 4;
    c.hidden = 64;
    c.ffn_dim = 256;
    c.num_heads = 4;
    c.vocab_size = 128;
    c.max_positions = 32;
    c.type_vocab = 2;
    return c;
}

std::optional<ModelConfig> ModelConfig::preset(const std::string& name) {
    if (name == "base") return base_preset();
    if (name == "toy") return toy_preset();
    return std::nullopt;
}

Model::Model(ModelConfig config, HeadKind head) : config_(std::move(config)), head_(head) {
    config_.validate();
    build_registry();
}

Model::Model(ModelConfig config, HeadKind head, std::uint64_t seed)
    : Model(std::move(config), head) {
    init_params(seed);
}

int Model::head_classes() const {
    if (head_ == HeadKind::SequenceRegress) return 1;
    return config_.num_classes > 0 ? config_.num_classes : 1;
}

void Model::build_registry() {
    registry_.clear();
    const int H = config_.hidden, F = config_.ffn_dim;
    auto add = [this](std::string name, std::vector<int> shape, ModuleTag tag,
                      std::optional<int> layer, bool bias) {
        registry_.push_back({std::move(name), make_param(std::move(shape)), tag, layer, bias});
    };

    add("embeddings.word", {config_.vocab_size, H}, ModuleTag::Embedding, std::nullopt, false);
    add("embeddings.position", {config_.max_positions, H}, ModuleTag::Embedding, std::nullopt, false);
    add("embeddings.token_type", {config_.type_vocab, H}, ModuleTag::Embedding, std::nullopt, false);
    add("embeddings.ln.gamma", {H}, ModuleTag::EmbeddingLN, std::nullopt, false);
    add("embeddings.ln.beta", {H}, ModuleTag::EmbeddingLN, std::nullopt, true);

    for (int l = 0; l < config_.num_layers; ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        for (const char* proj : {"query", "key", "value", "output"}) {
            add(p + "attn." + proj + ".weight", {H, H}, ModuleTag::MultiHead, l, false);
            add(p + "attn." + proj + ".bias", {H}, ModuleTag::MultiHead, l, true);
        }
        add(p + "ln_att.gamma", {H}, ModuleTag::LN_Att, l, false);
        add(p + "ln_att.beta", {H}, ModuleTag::LN_Att, l, true);
        add(p + "ffn.inner.weight", {H, F}, ModuleTag::FeedForward, l, false);
        add(p + "ffn.inner.bias", {F}, ModuleTag::FeedForward, l, true);
        add(p + "ffn.outer.weight", {F, H}, ModuleTag::FeedForward, l, false);
        add(p + "ffn.outer.bias", {H}, ModuleTag::FeedForward, l, true);
        add(p + "ln_ffn.gamma", {H}, ModuleTag::LN_FFN, l, false);
        add(p + "ln_ffn.beta", {H}, ModuleTag::LN_FFN, l, true);
    }

    const int C = head_classes();
    add("head.weight", {H, C}, ModuleTag::Classifier, std::nullopt, false);
    add("head.bias", {C}, ModuleTag::Classifier, std::nullopt, true);
}

void Model::init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> emb_dist(0.0, 0.02);
    for (auto& g : registry_) {
        auto& v = g.tensor->values;
        const bool is_ln = g.tag == ModuleTag::LN_Att || g.tag == ModuleTag::LN_FFN ||
                           g.tag == ModuleTag::EmbeddingLN;
        if (is_ln) {
            const bool is_gamma = g.name.size() >= 5 && g.name.ends_with("gamma");
            std::fill(v.begin(), v.end(), is_gamma ? 1.0 : 0.0);
        } else if (g.is_bias) {
            std::fill(v.begin(), v.end(), 0.0);
        } else if (g.tag == ModuleTag::Embedding) {
            for (auto& x : v) x = emb_dist(rng);
        } else {
            for (auto& x : v) x = trunc_normal(rng, 0.02);
        }
    }
}

const ParamGroup& Model::group(const std::string& name) const {
    for (const auto& g : registry_) {
        if (g.name == name) return g;
    }
    throw std::out_of_range("no parameter group named " + name);
}

std::size_t Model::total_params() const {
    std::size_t n = 0;
    for (const auto& g : registry_) n += g.tensor->size();
    return n;
}

void Model::zero_grads() {
    for (auto& g : registry_) g.tensor->zero_grad();
}

Model Model::clone() const {
    Model m(config_, head_);
    for (std::size_t i = 0; i < registry_.size(); ++i) {
        m.registry_[i].tensor->values = registry_[i].tensor->values;
    }
    return m;
}

void Model::reset_head(HeadKind head, int num_classes, std::uint64_t seed) {
    std::vector<AlignedVec> encoder_values;
    for (const auto& g : registry_) {
        if (g.tag != ModuleTag::Classifier) encoder_values.push_back(g.tensor->values);
    }
    head_ = head;
    config_.num_classes = num_classes;
    build_registry();
    std::size_t i = 0;
    std::mt19937_64 rng(seed);
    for (auto& g : registry_) {
        if (g.tag == ModuleTag::Classifier) {
            if (g.is_bias) {
                std::fill(g.tensor->values.begin(), g.tensor->values.end(), 0.0);
            } else {
                for (auto& x : g.tensor->values) x = trunc_normal(rng, 0.02);
            }
        } else {
            g.tensor->values = std::move(encoder_values[i++]);
        }
    }
}

TensorPtr Model::forward(Graph& g, const Batch& batch) const {
    const int B = batch.batch, S = batch.seq_len;
    const int H = config_.hidden, A = config_.num_heads, D = config_.head_dim();
    if (S > config_.max_positions) {
        throw std::invalid_argument("sequence length " + std::to_string(S) +
                                    " exceeds max positions " +
                                    std::to_string(config_.max_positions));
    }
    if (batch.token_ids.size() != static_cast<std::size_t>(B * S) ||
        batch.segment_ids.size() != batch.token_ids.size() ||
        batch.attention_mask.size() != batch.token_ids.size()) {
        throw std::invalid_argument("batch arrays must all be [B,S]");
    }

    std::vector<int> positions(static_cast<std::size_t>(B * S));
    for (int b = 0; b < B; ++b)
        for (int s = 0; s < S; ++s) positions[static_cast<std::size_t>(b * S + s)] = s;

    auto x = g.add(g.embed(group("embeddings.word").tensor, batch.token_ids, {B, S}),
                   g.embed(group("embeddings.position").tensor, positions, {B, S}));
    x = g.add(x, g.embed(group("embeddings.token_type").tensor, batch.segment_ids, {B, S}));
    x = g.layer_norm(x, group("embeddings.ln.gamma").tensor, group("embeddings.ln.beta").tensor,
                     config_.layer_norm_eps);
    x = g.dropout(x, config_.dropout);

    for (int l = 0; l < config_.num_layers; ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        auto proj = [&](const char* name) {
            auto h = g.matmul(x, group(p + "attn." + name + ".weight").tensor);
            h = g.add_bias(h, group(p + "attn." + name + ".bias").tensor);
            return g.swap_axes_1_2(g.reshape(h, {B, S, A, D}));
        };
        auto q = proj("query"), k = proj("key"), v = proj("value");
        auto scores = g.scale(g.matmul(q, g.transpose_last2(k)), 1.0 / std::sqrt(double(D)));
        scores = g.attention_mask_bias(scores, batch.attention_mask);
        auto probs = g.dropout(g.softmax(scores), config_.dropout);
        auto ctx = g.reshape(g.swap_axes_1_2(g.matmul(probs, v)), {B, S, H});
        auto att = g.add_bias(g.matmul(ctx, group(p + "attn.output.weight").tensor),
                              group(p + "attn.output.bias").tensor);
        x = g.layer_norm(g.add(x, g.dropout(att, config_.dropout)),
                         group(p + "ln_att.gamma").tensor, group(p + "ln_att.beta").tensor,
                         config_.layer_norm_eps);

        auto inner = g.gelu(g.add_bias(g.matmul(x, group(p + "ffn.inner.weight").tensor),
                                       group(p + "ffn.inner.bias").tensor));
        auto outer = g.add_bias(g.matmul(inner, group(p + "ffn.outer.weight").tensor),
                                group(p + "ffn.outer.bias").tensor);
        x = g.layer_norm(g.add(x, g.dropout(outer, config_.dropout)),
                         group(p + "ln_ffn.gamma").tensor, group(p + "ln_ffn.beta").tensor,
                         config_.layer_norm_eps);
    }

    const auto& hw = group("head.weight").tensor;
    const auto& hb = group("head.bias").tensor;
    if (head_ == HeadKind::TokenTag) {
        return g.add_bias(g.matmul(x, hw), hb);
    }
    return g.add_bias(g.matmul(g.select_token0(x), hw), hb);
}

std::string Model::param_digest() const {
    Sha256 h;
    for (const auto& g : registry_) {
        const auto f = to_f32(g.tensor->values);
        h.update(f.data(), f.size() * sizeof(float));
    }
    return h.hex_digest();
}

void Model::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write("MWT1", 4);
    write_u32(os, static_cast<std::uint32_t>(registry_.size()));
    for (const auto& g : registry_) {
        write_u32(os, static_cast<std::uint32_t>(g.name.size()));
        os.write(g.name.data(), static_cast<std::streamsize>(g.name.size()));
        write_u32(os, static_cast<std::uint32_t>(g.tensor->shape.size()));
        for (int d : g.tensor->shape) write_u32(os, static_cast<std::uint32_t>(d));
        const auto f = to_f32(g.tensor->values);
        os.write(reinterpret_cast<const char*>(f.data()),
                 static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Model Model::load_checkpoint(const std::string& path, const ModelConfig& config,
                             HeadKind head) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MWT1", 4) != 0) {
        throw std::runtime_error("checkpoint format error: bad magic in " + path);
    }
    Model m(config, head);
    const std::uint32_t count = read_u32(is);
    if (count != m.registry_.size()) {
        throw std::runtime_error("checkpoint mismatch: file has " + std::to_string(count) +
                                 " tensors, config expects " +
                                 std::to_string(m.registry_.size()) + "; first expected tensor is " +
                                 m.registry_[std::min<std::size_t>(count, m.registry_.size() - 1)].name);
    }
    for (auto& g : m.registry_) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("checkpoint format error: truncated file");
        if (name != g.name) {
            throw std::runtime_error("checkpoint mismatch: expected tensor " + g.name +
                                     ", found " + name);
        }
        const std::uint32_t rank = read_u32(is);
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(read_u32(is));
        if (dims != g.tensor->shape) {
            throw std::runtime_error("checkpoint mismatch: tensor " + g.name + " has shape " +
                                     shape_str(dims) + ", expected " +
                                     shape_str(g.tensor->shape));
        }
        std::vector<float> f(g.tensor->size());
        is.read(reinterpret_cast<char*>(f.data()),
                static_cast<std::streamsize>(f.size() * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint format error: truncated payload for " + g.name);
        for (std::size_t i = 0; i < f.size(); ++i) g.tensor->values[i] = f[i];
    }
    return m;
}

ParamCount count_params(const std::vector<ParamGroup>& registry,
                        const std::function<bool(const ParamGroup&)>& filter) {
    ParamCount c;
    for (const auto& g : registry) {
        c.total += g.tensor->size();
        if (filter(g)) c.selected += g.tensor->size();
    }
    c.ratio = c.total ? static_cast<double>(c.selected) / static_cast<double>(c.total) : 0.0;
    return c;
}

}  // namespace mwt
