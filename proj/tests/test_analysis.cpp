#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mwt/analysis.hpp"

#include <cmath>
#include <numeric>

using namespace mwt;

TEST_CASE("fresh LayerNorm population is flagged bimodal with exact subgroup means") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 17);
    ModuleStats st = module_weight_stats(m, "LayerNorms", 512, 1, false);
    CHECK(st.population == 1024u);  // 4 layers x 2 norms x (64 gammas + 64 betas)
    CHECK(st.sample_size == 512u);
    CHECK(st.bimodal);
    CHECK(st.bimodality > kBimodalityThreshold);
    REQUIRE(st.gamma_mean.has_value());
    REQUIRE(st.beta_mean.has_value());
    CHECK(*st.gamma_mean == 1.0);
    CHECK(*st.beta_mean == 0.0);
}

TEST_CASE("feed-forward weights look like the truncated normal they came from") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 17);
    ModuleStats st = module_weight_stats(m, "FeedForward", 10000, 1, false);
    CHECK(std::abs(st.mean) < 0.005);
    // truncation at 2 sigma shrinks the nominal 0.02 a little
    CHECK(std::abs(st.std_dev - 0.02) < 0.005);
    CHECK(!st.bimodal);
    CHECK(st.min >= -0.041);
    CHECK(st.max <= 0.041);
}

TEST_CASE("stats are deterministic in the sampling seed") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 17);
    ModuleStats a = module_weight_stats(m, "MultiHead", 2000, 9, true);
    ModuleStats b = module_weight_stats(m, "MultiHead", 2000, 9, true);
    CHECK(a.mean == b.mean);
    CHECK(a.counts == b.counts);
    ModuleStats c = module_weight_stats(m, "MultiHead", 2000, 10, true);
    CHECK(a.mean != c.mean);
}

TEST_CASE("histogram counts cover the whole sample when untrimmed") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 17);
    ModuleStats st = module_weight_stats(m, "MultiHead", 1500, 2, false);
    CHECK(std::accumulate(st.counts.begin(), st.counts.end(), std::size_t{0}) == 1500u);
    REQUIRE(st.bin_edges.size() == st.counts.size() + 1);
    for (std::size_t i = 1; i < st.bin_edges.size(); ++i) {
        CHECK(st.bin_edges[i] > st.bin_edges[i - 1]);
    }
}

TEST_CASE("trimming only drops values far from the median") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 17);
    // Plant one extreme value inside the attention population.
    for (auto& g : m.registry()) {
        if (g.tag == ModuleTag::MultiHead) {
            g.tensor->values[0] = 100.0;
            break;
        }
    }
    const auto pop = [&] {
        std::size_t n = 0;
        for (const auto& g : m.registry()) {
            if (g.tag == ModuleTag::MultiHead) n += g.tensor->size();
        }
        return n;
    }();
    ModuleStats trimmed = module_weight_stats(m, "MultiHead", pop, 2, true);
    ModuleStats raw = module_weight_stats(m, "MultiHead", pop, 2, false);
    CHECK(raw.max == 100.0);
    CHECK(trimmed.bin_edges.back() < 1.0);
    const std::size_t trimmed_total =
        std::accumulate(trimmed.counts.begin(), trimmed.counts.end(), std::size_t{0});
    CHECK(trimmed_total == pop - 1);
    // the coefficient itself is computed before trimming
    CHECK(trimmed.bimodality == raw.bimodality);
}

TEST_CASE("stats reject oversampling and unknown tags") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 17);
    CHECK_THROWS_AS(module_weight_stats(m, "LayerNorms", 999999, 1, false),
                    std::invalid_argument);
    CHECK_THROWS_AS(module_weight_stats(m, "NoSuchTag", 10, 1, false), std::invalid_argument);
}

TEST_CASE("outlier report agrees with the selection regime") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 23);
    const std::size_t n = 8;
    std::vector<NormOutliers> report = outlier_report(m, n);
    CHECK(report.size() == 8u);  // 4 layers x 2 norms
    TrainMask mask = apply_outlier_regime(m.registry(), n);

    for (const auto& norm : report) {
        CHECK(norm.indices.size() == n);
        for (std::size_t i = 1; i < norm.deviations.size(); ++i) {
            CHECK(norm.deviations[i] <= norm.deviations[i - 1]);
        }
        // every reported index appears in the regime's mask for that norm
        std::vector<std::uint32_t> selected;
        for (std::size_t gi = 0; gi < m.registry().size(); ++gi) {
            const auto& g = m.registry()[gi];
            if (g.name.rfind(norm.norm_name + ".", 0) == 0) {
                const std::uint32_t offset = g.name.ends_with("beta")
                    ? static_cast<std::uint32_t>(g.tensor->size()) : 0u;
                for (std::uint32_t idx : mask.entries[gi].indices) {
                    selected.push_back(idx + offset);
                }
            }
        }
        std::sort(selected.begin(), selected.end());
        std::vector<std::uint32_t> reported = norm.indices;
        std::sort(reported.begin(), reported.end());
        CHECK(reported == selected);
    }
}

TEST_CASE("ratio table covers the benchmark regimes with consistent counts") {
    Model m(ModelConfig::toy_preset(), HeadKind::SequenceClassify, 3);
    std::vector<RatioRow> rows = ratio_table(m.registry());
    REQUIRE(rows.size() == 14u);
    CHECK(rows[0].regime == "FullFT");
    CHECK(rows[1].regime == "Freeze");
    CHECK(rows[1].encoder_trainable == 0u);

    const std::size_t total = m.total_params();
    for (const auto& r : rows) {
        CHECK(r.trainable >= r.encoder_trainable);
        CHECK(r.ratio == doctest::Approx(static_cast<double>(r.trainable) / total));
        CHECK(r.encoder_ratio ==
              doctest::Approx(static_cast<double>(r.encoder_trainable) / total));
    }

    for (const auto& r : rows) {
        if (r.regime == "LayerNorms") CHECK(r.encoder_trainable == 1024u);
        if (r.regime == "Rand") CHECK(r.encoder_trainable == 1024u);
        if (r.regime == "OutlierLN(4)") CHECK(r.encoder_trainable == 8u * 4u);
    }

    const std::string csv = ratio_table_csv(rows);
    CHECK(csv.find("FullFT") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 15);  // header + 14 rows
}
