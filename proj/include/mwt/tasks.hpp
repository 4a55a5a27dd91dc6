#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mwt {

// Special token ids shared by every synthetic task.
constexpr int kPadId = 0;
constexpr int kUnkId = 1;
constexpr int kClsId = 2;
constexpr int kSepId = 3;
constexpr int kMaskId = 4;
constexpr int kFirstSymbol = 5;
constexpr int kIgnoreLabel = -1;

enum class TaskKind {
    PretrainMlm,
    PairClassify,
    SingleClassify,
    PairRegress,
    TokenTag,
};

std::string to_string(TaskKind k);
std::optional<TaskKind> task_kind_from_string(const std::string& s);

enum class LabelKind { Class, Float, PerTokenClass };

struct Example {
    std::vector<int> tokens;
    std::vector<int> segments;
    int label_class = 0;
    double label_float = 0.0;
    std::vector<int> label_tokens;  // PerTokenClass; kIgnoreLabel on specials
};

struct Dataset {
    TaskKind kind = TaskKind::SingleClassify;
    LabelKind label_kind = LabelKind::Class;
    int vocab_size = 0;
    int num_classes = 0;  // Class / PerTokenClass
    std::vector<Example> train;
    std::vector<Example> dev;
    std::string provenance;

    std::string content_hash() const;
    void export_jsonl(const std::string& path) const;
};

struct TaskSpec {
    TaskKind kind = TaskKind::SingleClassify;
    std::size_t train_size = 2000;
    std::size_t dev_size = 500;
    std::uint64_t seed = 0;
    int grammar_states = 6;
    double noise_rate = 0.05;
    int max_seq_len = 32;

    void validate() const;
};

/// Seeded probabilistic regular grammar over the toy symbol range, with two
/// emission variants sharing one transition structure. Hidden state and
/// variant posteriors are exact, so every task has a Bayes-optimal reference.
class Grammar {
public:
    Grammar(int num_states, int num_symbols, double noise_rate, std::uint64_t seed);

    int num_states() const { return num_states_; }
    int num_symbols() const { return num_symbols_; }

    /// Generates a raw symbol sequence; fills `states` with the hidden state
    /// at each position.
    std::vector<int> generate(std::mt19937_64& rng, int len, int variant,
                              std::vector<int>* states = nullptr) const;

    /// Forward-algorithm log likelihood of a raw symbol sequence.
    double log_likelihood(const std::vector<int>& symbols, int variant) const;

    /// P(variant=1 | symbols) under a uniform prior.
    double variant_posterior(const std::vector<int>& symbols) const;

    /// Most probable hidden state per position (posterior marginals).
    std::vector<int> posterior_states(const std::vector<int>& symbols, int variant) const;

private:
    double emission_prob(int variant, int state, int symbol) const;

    int num_states_;
    int num_symbols_;
    double noise_rate_;
    std::vector<std::vector<double>> trans_;                  // [K][K]
    std::vector<std::vector<std::vector<double>>> emit_;      // [2][K][num_symbols]
};

Dataset gen_pretrain(const TaskSpec& spec);
Dataset gen_downstream(const TaskSpec& spec);

/// Bayes-optimal dev metric computed from the generator's hidden structure:
/// accuracy for classification kinds, token accuracy for tagging.
double bayes_dev_metric(const TaskSpec& spec, const Dataset& data);

/// Levenshtein distance on token sequences.
std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

struct TsvSchema {
    std::string sentence_col;
    std::string sentence2_col;  // empty for single-sentence files
    std::string label_col;
    LabelKind label_kind = LabelKind::Class;
    int max_vocab = 128;
    int max_seq_len = 32;
    double dev_fraction = 0.2;
};

Dataset load_tsv(const std::string& path, const TsvSchema& schema);

}  // namespace mwt
