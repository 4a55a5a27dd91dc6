#pragma once

#include "mwt/model.hpp"
#include "mwt/selection.hpp"
#include "mwt/tasks.hpp"
#include "mwt/trainer.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mwt {

/// Flat key=value run configuration. Unknown keys are rejected with the
/// offending line number; the raw byte copy and its hash travel with every
/// run directory.
class RunConfig {
public:
    static RunConfig parse_string(const std::string& text);
    static RunConfig parse_file(const std::string& path);

    const std::string& raw() const { return raw_; }
    const std::string& hash() const { return hash_; }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string require(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    long require_int(const std::string& key) const;
    long int_or(const std::string& key, long fallback) const;
    double double_or(const std::string& key, double fallback) const;

    ModelConfig model_config() const;
    std::uint64_t model_seed() const;
    TaskSpec task_spec() const;           // single-task form of task.kind
    std::vector<TaskSpec> task_specs() const;  // task.kind may be a comma list
    TrainConfig train_config() const;
    SelectionSpec selection_spec() const;

private:
    std::string raw_;
    std::string hash_;
    std::map<std::string, std::string> kv_;
};

std::vector<std::string> split_list(const std::string& s, char sep = ',');

}  // namespace mwt
