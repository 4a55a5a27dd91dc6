#include "mwt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mwt {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
    if (a != b) throw std::invalid_argument("metric inputs have different lengths");
    if (a == 0) throw std::invalid_argument("metric inputs are empty");
}

/// Average ranks (1-based); ties share the mean of their rank range.
std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::string to_string(MetricKind k) {
    switch (k) {
        case MetricKind::Accuracy: return "accuracy";
        case MetricKind::Mcc: return "mcc";
        case MetricKind::F1: return "f1";
        case MetricKind::Pearson: return "pearson";
        case MetricKind::Spearman: return "spearman";
        case MetricKind::TokenAccuracy: return "token-accuracy";
    }
    return "?";
}

std::optional<MetricKind> metric_from_string(const std::string& s) {
    for (MetricKind k : {MetricKind::Accuracy, MetricKind::Mcc, MetricKind::F1,
                         MetricKind::Pearson, MetricKind::Spearman, MetricKind::TokenAccuracy}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds) {
    check_lengths(preds.size(), golds.size());
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double mcc(const std::vector<int>& preds, const std::vector<int>& golds) {
    check_lengths(preds.size(), golds.size());
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (golds[i] == 1) {
            (preds[i] == 1 ? tp : fn) += 1;
        } else {
            (preds[i] == 1 ? fp : tn) += 1;
        }
    }
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

double f1_score(const std::vector<int>& preds, const std::vector<int>& golds) {
    check_lengths(preds.size(), golds.size());
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == 1 && golds[i] == 1) tp += 1;
        else if (preds[i] == 1) fp += 1;
        else if (golds[i] == 1) fn += 1;
    }
    if (2 * tp + fp + fn == 0.0) return 0.0;
    return 2 * tp / (2 * tp + fp + fn);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    check_lengths(x.size(), y.size());
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    check_lengths(x.size(), y.size());
    return pearson(average_ranks(x), average_ranks(y));
}

double token_accuracy(const std::vector<int>& preds, const std::vector<int>& golds, int ignore) {
    check_lengths(preds.size(), golds.size());
    std::size_t hit = 0, count = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (golds[i] == ignore) continue;
        hit += preds[i] == golds[i];
        ++count;
    }
    if (count == 0) throw std::invalid_argument("token_accuracy: every position is ignored");
    return static_cast<double>(hit) / static_cast<double>(count);
}

double compute_metric(MetricKind kind, const std::vector<double>& preds,
                      const std::vector<double>& golds) {
    check_lengths(preds.size(), golds.size());
    auto as_int = [](const std::vector<double>& v) {
        std::vector<int> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<int>(std::lround(v[i]));
        return out;
    };
    switch (kind) {
        case MetricKind::Accuracy: return accuracy(as_int(preds), as_int(golds));
        case MetricKind::Mcc: return mcc(as_int(preds), as_int(golds));
        case MetricKind::F1: return f1_score(as_int(preds), as_int(golds));
        case MetricKind::Pearson: return pearson(preds, golds);
        case MetricKind::Spearman: return spearman(preds, golds);
        case MetricKind::TokenAccuracy: return token_accuracy(as_int(preds), as_int(golds));
    }
    throw std::invalid_argument("unknown metric kind");
}

}  // namespace mwt
