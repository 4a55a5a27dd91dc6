#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mwt {

enum class MetricKind { Accuracy, Mcc, F1, Pearson, Spearman, TokenAccuracy };

std::string to_string(MetricKind k);
std::optional<MetricKind> metric_from_string(const std::string& s);

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds);
/// Matthews correlation; any zero denominator factor yields 0.
double mcc(const std::vector<int>& preds, const std::vector<int>& golds);
/// Binary positive-class (label 1) F1.
double f1_score(const std::vector<int>& preds, const std::vector<int>& golds);
double pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);
/// Accuracy over positions whose gold label != ignore.
double token_accuracy(const std::vector<int>& preds, const std::vector<int>& golds,
                      int ignore = -1);

double compute_metric(MetricKind kind, const std::vector<double>& preds,
                      const std::vector<double>& golds);

}  // namespace mwt
