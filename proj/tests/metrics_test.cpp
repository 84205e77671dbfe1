#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "json.hpp"
#include "resident/metrics.hpp"
#include "resident/rng.hpp"

using namespace resident;
using Catch::Approx;

namespace {

// confusion matrix of closed run 3 on the 12-way test set; rows gold,
// columns predicted, diagonal sum 10185 of 12000
const std::vector<std::string> kLabels12 = {"es-ar", "es-es", "es-mx", "fr-ca", "fr-fr", "id",
                                            "my",    "pt-br", "pt-pt", "hr",    "bs",    "sr"};
const std::int64_t kRun3Counts[12][12] = {
    {824, 77, 94, 0, 1, 1, 0, 2, 1, 0, 0, 0},
    {90, 778, 127, 0, 1, 0, 0, 1, 2, 0, 1, 0},
    {210, 269, 520, 0, 0, 0, 0, 1, 0, 0, 0, 0},
    {0, 0, 0, 956, 44, 0, 0, 0, 0, 0, 0, 0},
    {0, 0, 0, 93, 905, 0, 0, 1, 0, 1, 0, 0},
    {0, 0, 0, 0, 0, 951, 48, 0, 0, 0, 0, 1},
    {0, 0, 0, 0, 0, 30, 970, 0, 0, 0, 0, 0},
    {0, 0, 1, 0, 0, 0, 0, 891, 107, 1, 0, 0},
    {0, 1, 0, 0, 0, 0, 0, 78, 920, 0, 1, 0},
    {0, 0, 0, 0, 0, 0, 0, 0, 0, 823, 150, 27},
    {0, 0, 0, 0, 1, 0, 0, 1, 0, 143, 730, 125},
    {0, 0, 0, 0, 1, 0, 0, 0, 0, 15, 67, 917},
};

ConfusionMatrix run3_fixture() {
    LabelVocab vocab = LabelVocab::from_ordered(kLabels12);
    ConfusionMatrix cm(vocab);
    for (std::size_t g = 0; g < 12; ++g)
        for (std::size_t p = 0; p < 12; ++p) cm.at(g, p) = kRun3Counts[g][p];
    return cm;
}

}  // namespace

TEST_CASE("confusion matrix construction") {
    LabelVocab vocab = LabelVocab::from_labels({"hr", "bs"});
    {
        ConfusionMatrix cm = confusion_matrix({"hr", "bs", "hr"}, {"hr", "bs", "hr"}, vocab);
        REQUIRE(cm.trace() == 3);
        REQUIRE(cm.at(vocab.index_of("hr"), vocab.index_of("hr")) == 2);
        REQUIRE(cm.at(vocab.index_of("bs"), vocab.index_of("bs")) == 1);
    }
    {
        ConfusionMatrix cm = confusion_matrix({"hr", "hr"}, {"bs", "hr"}, vocab);
        REQUIRE(cm.at(vocab.index_of("hr"), vocab.index_of("bs")) == 1);
        REQUIRE(cm.at(vocab.index_of("hr"), vocab.index_of("hr")) == 1);
    }
    REQUIRE_THROWS_AS(confusion_matrix({"hr"}, {"xx"}, vocab), ContractError);
    REQUIRE_THROWS_AS(confusion_matrix({"hr", "bs"}, {"hr"}, vocab), ContractError);
}

TEST_CASE("the run-3 confusion fixture yields its headline accuracy") {
    ConfusionMatrix cm = run3_fixture();
    REQUIRE(cm.total() == 12000);
    REQUIRE(cm.trace() == 10185);
    MetricsReport rep = metrics(cm);
    REQUIRE(rep.accuracy == Approx(0.84875).margin(1e-12));
    // the rounded headline number
    REQUIRE(std::abs(rep.accuracy - 0.8488) <= 5e-5);
    REQUIRE(rep.f1_micro == rep.accuracy);
}

TEST_CASE("micro F1 equals accuracy on random labelings, exactly") {
    Rng rng(1);
    LabelVocab vocab = LabelVocab::from_labels({"a", "b", "c", "d"});
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> golds, preds;
        const std::size_t n = 1 + rng.below(40);
        for (std::size_t i = 0; i < n; ++i) {
            golds.push_back(vocab.at(rng.below(4)));
            preds.push_back(vocab.at(rng.below(4)));
        }
        ConfusionMatrix cm = confusion_matrix(golds, preds, vocab);
        MetricsReport rep = metrics(cm);
        REQUIRE(rep.f1_micro == rep.accuracy);
        REQUIRE(rep.accuracy ==
                static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
    }
}

TEST_CASE("perfect predictions score 1.0 on all four aggregates") {
    LabelVocab vocab = LabelVocab::from_labels({"x", "y", "z"});
    ConfusionMatrix cm = confusion_matrix({"x", "y", "z", "x"}, {"x", "y", "z", "x"}, vocab);
    MetricsReport rep = metrics(cm);
    REQUIRE(rep.accuracy == 1.0);
    REQUIRE(rep.f1_micro == 1.0);
    REQUIRE(rep.f1_macro == 1.0);
    REQUIRE(rep.f1_weighted == 1.0);
}

TEST_CASE("hand-computed two-class case") {
    LabelVocab vocab = LabelVocab::from_labels({"a", "b"});
    ConfusionMatrix cm = confusion_matrix({"a", "a", "b"}, {"a", "b", "b"}, vocab);
    MetricsReport rep = metrics(cm);
    REQUIRE(rep.accuracy == Approx(2.0 / 3.0).margin(1e-12));
    const ClassMetrics& a = rep.per_class[vocab.index_of("a")];
    const ClassMetrics& b = rep.per_class[vocab.index_of("b")];
    REQUIRE(a.precision == Approx(1.0));
    REQUIRE(a.recall == Approx(0.5));
    REQUIRE(a.f1 == Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(b.precision == Approx(0.5));
    REQUIRE(b.recall == Approx(1.0));
    REQUIRE(b.f1 == Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(rep.f1_macro == Approx(2.0 / 3.0).margin(1e-12));
}

TEST_CASE("degenerate counts use the 0/0 = 0 convention") {
    LabelVocab vocab = LabelVocab::from_labels({"a", "b", "ghost"});
    ConfusionMatrix cm = confusion_matrix({"a", "b"}, {"a", "a"}, vocab);
    MetricsReport rep = metrics(cm);
    const ClassMetrics& ghost = rep.per_class[vocab.index_of("ghost")];
    REQUIRE(ghost.precision == 0.0);
    REQUIRE(ghost.recall == 0.0);
    REQUIRE(ghost.f1 == 0.0);
    REQUIRE(ghost.support == 0);
    // macro still averages over all three vocabulary classes
    const double macro_by_hand =
        (rep.per_class[0].f1 + rep.per_class[1].f1 + rep.per_class[2].f1) / 3.0;
    REQUIRE(rep.f1_macro == Approx(macro_by_hand).margin(1e-15));

    REQUIRE_THROWS_AS(metrics(ConfusionMatrix(vocab)), ContractError);
}

TEST_CASE("label permutation leaves aggregate metrics unchanged") {
    Rng rng(2);
    std::vector<std::string> codes{"p", "q", "r", "s"};
    std::vector<std::string> golds, preds;
    for (int i = 0; i < 200; ++i) {
        golds.push_back(codes[rng.below(4)]);
        preds.push_back(codes[rng.below(4)]);
    }
    MetricsReport a = metrics(confusion_matrix(golds, preds, LabelVocab::from_labels(codes)));
    // same data scored under a renamed (hence reordered) vocabulary
    auto rename = [](const std::string& c) { return "zz_" + c; };
    std::vector<std::string> golds2, preds2, codes2;
    for (const auto& c : codes) codes2.push_back(rename(c));
    for (const auto& c : golds) golds2.push_back(rename(c));
    for (const auto& c : preds) preds2.push_back(rename(c));
    MetricsReport b = metrics(confusion_matrix(golds2, preds2, LabelVocab::from_labels(codes2)));
    REQUIRE(a.accuracy == Approx(b.accuracy).margin(1e-12));
    REQUIRE(a.f1_micro == Approx(b.f1_micro).margin(1e-12));
    REQUIRE(a.f1_macro == Approx(b.f1_macro).margin(1e-12));
    REQUIRE(a.f1_weighted == Approx(b.f1_weighted).margin(1e-12));
}

TEST_CASE("weighted F1 lies between the extreme per-class F1 scores") {
    Rng rng(3);
    std::vector<std::string> codes{"u", "v", "w"};
    std::vector<std::string> golds, preds;
    for (int i = 0; i < 120; ++i) {
        golds.push_back(codes[rng.below(3)]);
        preds.push_back(codes[rng.below(3)]);
    }
    MetricsReport rep = metrics(confusion_matrix(golds, preds, LabelVocab::from_labels(codes)));
    double lo = 1.0, hi = 0.0;
    for (const ClassMetrics& m : rep.per_class) {
        lo = std::min(lo, m.f1);
        hi = std::max(hi, m.f1);
    }
    REQUIRE(rep.f1_weighted >= lo - 1e-12);
    REQUIRE(rep.f1_weighted <= hi + 1e-12);
    REQUIRE(rep.f1_macro <= 1.0);
}

TEST_CASE("group projection") {
    const std::set<std::string> b_group{"pt-br", "pt-pt", "hr", "bs", "sr"};
    REQUIRE(project_to_group("id", b_group, "hr") == "hr");
    REQUIRE(project_to_group("pt-br", b_group, "hr") == "pt-br");
    REQUIRE(project_to_group("fr-fr", b_group, "hr") == "hr");
    REQUIRE_THROWS_AS(project_to_group("id", b_group, "fr-fr"), ConfigError);
    // idempotent
    for (const char* pred : {"id", "pt-br", "fr-fr", "sr"}) {
        const std::string once = project_to_group(pred, b_group, "hr");
        REQUIRE(project_to_group(once, b_group, "hr") == once);
    }
}

TEST_CASE("baselines") {
    std::vector<std::string> balanced;
    for (int c = 0; c < 12; ++c)
        for (int i = 0; i < 10; ++i) balanced.push_back("lang" + std::to_string(c));
    REQUIRE(baseline_accuracy(balanced, BaselineKind::Uniform) == Approx(0.0833).margin(5e-5));

    REQUIRE(baseline_accuracy({"x", "x", "x"}, BaselineKind::Majority) == 1.0);
    REQUIRE(baseline_accuracy({"a", "a", "a", "b"}, BaselineKind::Majority) == Approx(0.75));
    REQUIRE_THROWS_AS(baseline_accuracy(std::vector<std::string>{}, BaselineKind::Uniform),
                      ContractError);
}

TEST_CASE("confusion TSV layout") {
    LabelVocab vocab = LabelVocab::from_labels({"hr", "bs"});
    ConfusionMatrix cm = confusion_matrix({"hr", "hr", "bs"}, {"hr", "bs", "bs"}, vocab);
    std::ostringstream out;
    write_confusion_tsv(cm, out);
    REQUIRE(out.str() == "\tbs\thr\nbs\t1\t0\nhr\t1\t1\n");
}

TEST_CASE("text report puts the aggregate columns in table order") {
    ConfusionMatrix cm = run3_fixture();
    MetricsReport rep = metrics(cm);
    std::ostringstream out;
    write_report_text(rep, out);
    const std::string text = out.str();
    const auto a = text.find("Accuracy");
    const auto mi = text.find("F1 (micro)");
    const auto ma = text.find("F1 (macro)");
    const auto w = text.find("F1 (weighted)");
    REQUIRE(a != std::string::npos);
    REQUIRE(a < mi);
    REQUIRE(mi < ma);
    REQUIRE(ma < w);
    REQUIRE(text.find("0.8488") != std::string::npos);
}

TEST_CASE("json report parses back") {
    ConfusionMatrix cm = run3_fixture();
    MetricsReport rep = metrics(cm);
    std::ostringstream out;
    write_report_json(rep, out);
    std::istringstream in(out.str());
    std::string line;
    REQUIRE(std::getline(in, line));
    nlohmann::json agg = nlohmann::json::parse(line);
    REQUIRE(agg.at("accuracy").get<double>() == Approx(0.84875));
    std::size_t classes = 0;
    while (std::getline(in, line)) {
        nlohmann::json c = nlohmann::json::parse(line);
        REQUIRE(c.contains("class"));
        ++classes;
    }
    REQUIRE(classes == 12);
}
