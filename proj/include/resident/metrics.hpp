#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "resident/data.hpp"

namespace resident {

// Gold-by-predicted count matrix: rows are true labels, columns predictions.
struct ConfusionMatrix {
    LabelVocab labels;
    std::vector<std::int64_t> counts;  // K x K row-major

    explicit ConfusionMatrix(LabelVocab v)
        : labels(std::move(v)), counts(labels.size() * labels.size(), 0) {}

    std::int64_t& at(std::size_t gold, std::size_t pred) {
        return counts[gold * labels.size() + pred];
    }
    std::int64_t at(std::size_t gold, std::size_t pred) const {
        return counts[gold * labels.size() + pred];
    }

    void add(const std::string& gold, const std::string& pred) {
        at(labels.index_of(gold), labels.index_of(pred)) += 1;
    }

    std::int64_t total() const {
        std::int64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }

    std::int64_t trace() const {
        std::int64_t t = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) t += at(i, i);
        return t;
    }

    std::int64_t gold_support(std::size_t cls) const {
        std::int64_t t = 0;
        for (std::size_t p = 0; p < labels.size(); ++p) t += at(cls, p);
        return t;
    }

    std::int64_t pred_support(std::size_t cls) const {
        std::int64_t t = 0;
        for (std::size_t g = 0; g < labels.size(); ++g) t += at(g, cls);
        return t;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::string>& golds,
                                        const std::vector<std::string>& preds,
                                        const LabelVocab& labels) {
    if (golds.size() != preds.size())
        throw ContractError("confusion_matrix: golds and preds differ in length");
    ConfusionMatrix cm(labels);
    for (std::size_t i = 0; i < golds.size(); ++i) cm.add(golds[i], preds[i]);
    return cm;
}

struct ClassMetrics {
    std::string label;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    std::int64_t support = 0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double f1_micro = 0.0, f1_macro = 0.0, f1_weighted = 0.0;
    std::vector<ClassMetrics> per_class;
};

// Accuracy plus micro / macro / weighted F1. 0/0 precision or recall is
// defined as 0; macro averages over every vocabulary class, zero-support
// ones included.
inline MetricsReport metrics(const ConfusionMatrix& cm) {
    const std::size_t k = cm.labels.size();
    const std::int64_t total = cm.total();
    if (total == 0) throw ContractError("metrics: empty confusion matrix");

    MetricsReport rep;
    const std::int64_t tp_total = cm.trace();
    rep.accuracy = static_cast<double>(tp_total) / static_cast<double>(total);

    double f1_sum = 0.0, f1_weighted_sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        ClassMetrics m;
        m.label = cm.labels.at(c);
        const std::int64_t tp = cm.at(c, c);
        m.support = cm.gold_support(c);
        const std::int64_t pred = cm.pred_support(c);
        m.precision = pred > 0 ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
        m.recall = m.support > 0 ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        f1_sum += m.f1;
        f1_weighted_sum += static_cast<double>(m.support) * m.f1;
        rep.per_class.push_back(std::move(m));
    }
    // global TP/FP/FN; in single-label evaluation FP == FN == total - trace,
    // so micro F1 reduces to exactly trace/total
    const std::int64_t fp = total - tp_total;
    const std::int64_t fn = total - tp_total;
    rep.f1_micro = 2.0 * static_cast<double>(tp_total) /
                   static_cast<double>(2 * tp_total + fp + fn);
    rep.f1_macro = f1_sum / static_cast<double>(k);
    rep.f1_weighted = f1_weighted_sum / static_cast<double>(total);
    return rep;
}

// Out-of-group predictions collapse to the fallback code.
inline std::string project_to_group(const std::string& pred, const std::set<std::string>& group,
                                    const std::string& fallback) {
    if (!group.count(fallback))
        throw ConfigError("fallback '" + fallback + "' is not a member of the group");
    return group.count(pred) ? pred : fallback;
}

enum class BaselineKind { Uniform, Majority };

inline double baseline_accuracy(const std::vector<std::string>& golds, BaselineKind kind) {
    if (golds.empty()) throw ContractError("baseline_accuracy: empty dataset");
    std::map<std::string, std::int64_t> support;
    for (const auto& g : golds) support[g] += 1;
    if (kind == BaselineKind::Uniform)
        return 1.0 / static_cast<double>(support.size());
    std::int64_t best = 0;
    for (const auto& [label, n] : support) best = std::max(best, n);
    return static_cast<double>(best) / static_cast<double>(golds.size());
}

inline double baseline_accuracy(const Dataset& data, BaselineKind kind) {
    std::vector<std::string> golds;
    golds.reserve(data.size());
    for (const Example& ex : data) golds.push_back(ex.label);
    return baseline_accuracy(golds, kind);
}

// ---------------------------------------------------------------------------
// report output
// ---------------------------------------------------------------------------

// TSV with predicted labels across the header and true labels down the side
inline void write_confusion_tsv(const ConfusionMatrix& cm, std::ostream& out) {
    const std::size_t k = cm.labels.size();
    for (std::size_t p = 0; p < k; ++p) out << '\t' << cm.labels.at(p);
    out << '\n';
    for (std::size_t g = 0; g < k; ++g) {
        out << cm.labels.at(g);
        for (std::size_t p = 0; p < k; ++p) out << '\t' << cm.at(g, p);
        out << '\n';
    }
}

// aligned text table; aggregate columns ordered Accuracy, F1 (micro),
// F1 (macro), F1 (weighted)
inline void write_report_text(const MetricsReport& rep, std::ostream& out) {
    out << std::left << std::setw(12) << "Accuracy" << std::setw(12) << "F1 (micro)"
        << std::setw(12) << "F1 (macro)" << std::setw(14) << "F1 (weighted)" << '\n';
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(12) << rep.accuracy << std::setw(12) << rep.f1_micro
        << std::setw(12) << rep.f1_macro << std::setw(14) << rep.f1_weighted << '\n';
    out << '\n';
    out << std::left << std::setw(10) << "class" << std::right << std::setw(10) << "precision"
        << std::setw(10) << "recall" << std::setw(10) << "f1" << std::setw(10) << "support"
        << '\n';
    for (const ClassMetrics& m : rep.per_class) {
        out << std::left << std::setw(10) << m.label << std::right << std::setw(10) << m.precision
            << std::setw(10) << m.recall << std::setw(10) << m.f1 << std::setw(10) << m.support
            << '\n';
    }
    out.unsetf(std::ios::floatfield);
    out << std::setprecision(6);
}

// single JSON object per line: one aggregate line, then one per class
inline void write_report_json(const MetricsReport& rep, std::ostream& out) {
    nlohmann::json agg{{"accuracy", rep.accuracy},
                       {"f1_micro", rep.f1_micro},
                       {"f1_macro", rep.f1_macro},
                       {"f1_weighted", rep.f1_weighted}};
    out << agg.dump() << '\n';
    for (const ClassMetrics& m : rep.per_class) {
        nlohmann::json line{{"class", m.label},
                            {"precision", m.precision},
                            {"recall", m.recall},
                            {"f1", m.f1},
                            {"support", m.support}};
        out << line.dump() << '\n';
    }
}

}  // namespace resident
