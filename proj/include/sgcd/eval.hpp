#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sgcd/catalog.hpp"
#include "sgcd/cp.hpp"
#include "sgcd/error.hpp"

namespace sgcd {

struct Interval {
    double low = 0;
    double high = 0;
};

/// Micro P/R/F1 with optional bootstrap intervals.
struct EvalReport {
    double precision = 0, recall = 0, f1 = 0;
    Interval ci_precision, ci_recall, ci_f1;
    std::size_t n_examples = 0;
    std::optional<double> validity_rate;

    std::size_t tp = 0, n_pred = 0, n_gold = 0;
    /// Set when the respective denominator was zero and the metric reported 0.
    bool precision_undefined = false, recall_undefined = false;
};

inline double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

/// Per-example counts feeding micro aggregation.
struct TripletCounts {
    std::size_t tp = 0, n_pred = 0, n_gold = 0;
};

inline std::vector<TripletCounts> triplet_counts(std::span<const TripletSet> preds, std::span<const TripletSet> golds) {
    if (preds.size() != golds.size())
        fail("ShapeMismatch", std::to_string(preds.size()) + " predictions vs " + std::to_string(golds.size()) + " golds");
    std::vector<TripletCounts> out(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        out[i].n_pred = preds[i].size();
        out[i].n_gold = golds[i].size();
        for (const auto& t : preds[i]) out[i].tp += golds[i].count(t);
    }
    return out;
}

enum class PrfMetric { Precision, Recall, F1 };

inline EvalReport micro_prf(std::span<const TripletCounts> counts) {
    EvalReport r;
    r.n_examples = counts.size();
    for (const auto& c : counts) {
        r.tp += c.tp;
        r.n_pred += c.n_pred;
        r.n_gold += c.n_gold;
    }
    r.precision_undefined = r.n_pred == 0;
    r.recall_undefined = r.n_gold == 0;
    r.precision = r.n_pred ? static_cast<double>(r.tp) / static_cast<double>(r.n_pred) : 0.0;
    r.recall = r.n_gold ? static_cast<double>(r.tp) / static_cast<double>(r.n_gold) : 0.0;
    r.f1 = f1_of(r.precision, r.recall);
    r.ci_precision = {r.precision, r.precision};
    r.ci_recall = {r.recall, r.recall};
    r.ci_f1 = {r.f1, r.f1};
    return r;
}

inline double prf_value(const EvalReport& r, PrfMetric m) {
    return m == PrfMetric::Precision ? r.precision : m == PrfMetric::Recall ? r.recall : r.f1;
}

/// Micro precision, recall and F1 over triplet sets (set semantics, so
/// duplicates have already collapsed).
inline EvalReport triplet_prf(std::span<const TripletSet> preds, std::span<const TripletSet> golds) {
    auto counts = triplet_counts(preds, golds);
    return micro_prf(counts);
}

struct BootstrapOptions {
    std::size_t n_resamples = 1000;
    std::uint64_t seed = 0;
    double level = 0.95;
};

namespace detail {

/// Uniform index in [0, n) by multiply-high; same sequence on every platform.
inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

/// Linear interpolation between closest ranks of a sorted sample.
inline double percentile_sorted(const std::vector<double>& v, double q) {
    const double h = (static_cast<double>(v.size()) - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Percentile bootstrap over example-level resampling.
template <class T>
Interval bootstrap_ci(std::span<const T> stats, const std::function<double(std::span<const T>)>& metric,
                      const BootstrapOptions& opts = {}) {
    if (stats.empty()) fail("EmptyEval", "bootstrap over zero examples");
    if (opts.n_resamples == 0) fail("BadOption", "n_resamples must be >= 1");
    if (!(opts.level > 0 && opts.level < 1)) fail("BadOption", "level must be in (0, 1)");
    std::mt19937_64 rng(opts.seed);
    std::vector<T> sample(stats.size());
    std::vector<double> values;
    values.reserve(opts.n_resamples);
    for (std::size_t b = 0; b < opts.n_resamples; ++b) {
        for (auto& s : sample) s = stats[detail::draw_index(rng, stats.size())];
        values.push_back(metric(std::span<const T>(sample)));
    }
    std::sort(values.begin(), values.end());
    const double alpha = (1 - opts.level) / 2;
    return {detail::percentile_sorted(values, alpha), detail::percentile_sorted(values, 1 - alpha)};
}

/// Widens an interval so it contains the point estimate.
inline Interval cover(Interval ci, double point) { return {std::min(ci.low, point), std::max(ci.high, point)}; }

/// triplet_prf plus bootstrap intervals for all three metrics.
inline EvalReport triplet_prf_with_ci(std::span<const TripletSet> preds, std::span<const TripletSet> golds,
                                      const BootstrapOptions& opts = {}) {
    auto counts = triplet_counts(preds, golds);
    auto report = micro_prf(counts);
    if (counts.empty()) return report;
    auto ci = [&](PrfMetric m) {
        std::function<double(std::span<const TripletCounts>)> fn = [m](std::span<const TripletCounts> s) {
            return prf_value(micro_prf(s), m);
        };
        return cover(bootstrap_ci(std::span<const TripletCounts>(counts), fn, opts), prf_value(report, m));
    };
    report.ci_precision = ci(PrfMetric::Precision);
    report.ci_recall = ci(PrfMetric::Recall);
    report.ci_f1 = ci(PrfMetric::F1);
    return report;
}

/// Labeled span over word positions [start, end).
struct Bracket {
    std::string label;
    std::size_t start = 0, end = 0;
    friend auto operator<=>(const Bracket&, const Bracket&) = default;
};

/// Internal-node brackets with function tags and indices stripped; leaves
/// (preterminals) are excluded.
inline std::vector<Bracket> brackets_of(const ParseTree& t, const TagInventory& tags = TagInventory{}) {
    std::vector<Bracket> out;
    std::size_t pos = 0;
    auto rec = [&](auto&& self, const ParseTree& n) -> void {
        if (n.is_leaf()) {
            ++pos;
            return;
        }
        std::size_t start = pos;
        for (const auto& c : n.children) self(self, c);
        out.push_back({base_label(n.label, tags), start, pos});
    };
    rec(rec, t);
    std::sort(out.begin(), out.end());
    return out;
}

struct BracketCounts {
    std::size_t matched = 0, n_pred = 0, n_gold = 0;
    std::size_t tags_correct = 0, n_tags = 0;

    BracketCounts& operator+=(const BracketCounts& o) {
        matched += o.matched;
        n_pred += o.n_pred;
        n_gold += o.n_gold;
        tags_correct += o.tags_correct;
        n_tags += o.n_tags;
        return *this;
    }
};

struct BracketReport {
    double precision = 0, recall = 0, f1 = 0, tag_accuracy = 0;
    /// Examples whose output carries only inventory tags.
    double tag_validity = 0;
    /// Examples whose output parses as a tree.
    double tree_validity = 0;
    BracketCounts counts;
    std::size_t n_examples = 0, n_scored = 0;
};

inline BracketReport bracket_report(const BracketCounts& c) {
    BracketReport r;
    r.counts = c;
    r.precision = c.n_pred ? static_cast<double>(c.matched) / static_cast<double>(c.n_pred) : 0.0;
    r.recall = c.n_gold ? static_cast<double>(c.matched) / static_cast<double>(c.n_gold) : 0.0;
    r.f1 = f1_of(r.precision, r.recall);
    r.tag_accuracy = c.n_tags ? static_cast<double>(c.tags_correct) / static_cast<double>(c.n_tags) : 0.0;
    return r;
}

inline BracketCounts bracket_counts(const ParseTree& pred, const ParseTree& gold, const TagInventory& tags = TagInventory{}) {
    auto pw = pred.yield(), gw = gold.yield();
    if (pw.size() != gw.size())
        fail("YieldMismatch", std::to_string(pw.size()) + " predicted words vs " + std::to_string(gw.size()) + " gold");
    auto pb = brackets_of(pred, tags), gb = brackets_of(gold, tags);
    std::vector<Bracket> common;
    std::set_intersection(pb.begin(), pb.end(), gb.begin(), gb.end(), std::back_inserter(common));
    BracketCounts c;
    c.matched = common.size();
    c.n_pred = pb.size();
    c.n_gold = gb.size();
    auto pp = pred.pos_tags(), gp = gold.pos_tags();
    c.n_tags = gp.size();
    for (std::size_t i = 0; i < gp.size(); ++i) c.tags_correct += pp[i] == gp[i];
    return c;
}

/// EVALB-style bracket precision/recall and POS accuracy for one tree pair.
inline BracketReport bracket_score(const ParseTree& pred, const ParseTree& gold, const TagInventory& tags = TagInventory{}) {
    auto r = bracket_report(bracket_counts(pred, gold, tags));
    r.n_examples = r.n_scored = 1;
    r.tag_validity = r.tree_validity = 1;
    return r;
}

struct ErrorFlags {
    bool invalid_tag = false;
    bool extra = false;
    bool imbal = false;
    bool missing = false;

    bool any() const { return invalid_tag || extra || imbal || missing; }
    friend bool operator==(const ErrorFlags&, const ErrorFlags&) = default;
};

/// Structural failure classes of a raw bracketed output: bracket-depth scan,
/// tag inventory membership, and word multiset difference against the input.
inline ErrorFlags classify_errors(std::string_view raw_output, std::string_view input_sentence, const TagInventory& tags,
                                  const BracketGlyphs& glyphs = {}) {
    ErrorFlags f;
    const auto pieces = split_bracketed(raw_output, tags, glyphs);
    const std::string open = glyphs.open_str(), close = glyphs.close_str();
    long depth = 0;
    std::map<std::string, long> words;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const auto& p = pieces[i];
        if (p == open) {
            ++depth;
            if (i + 1 >= pieces.size() || pieces[i + 1] == open || pieces[i + 1] == close) continue;
            const auto& label = pieces[++i];
            if (!tags.is_tag(label)) f.invalid_tag = true;
            if (tags.is_word(label)) continue;
            // function tags and index pieces glued to a phrase label
            while (i + 1 < pieces.size() && pieces[i + 1].size() > 1 && pieces[i + 1][0] == '-') {
                if (!tags.is_function(pieces[i + 1])) f.invalid_tag = true;
                ++i;
            }
            if (i + 2 < pieces.size() && pieces[i + 1] == "-" && detail::all_digits(pieces[i + 2])) {
                ++i;
                while (i + 1 < pieces.size() && pieces[i + 1].size() == 1 && detail::all_digits(pieces[i + 1])) ++i;
            }
        } else if (p == close) {
            if (--depth < 0) f.imbal = true;
        } else {
            ++words[p];
        }
    }
    if (depth != 0) f.imbal = true;
    for (const auto& w : split_whitespace(input_sentence)) --words[w];
    for (const auto& [_, n] : words) {
        if (n > 0) f.extra = true;
        if (n < 0) f.missing = true;
    }
    return f;
}

struct ErrorTaxonomy {
    std::size_t invalid_tag = 0, extra = 0, imbal = 0, missing = 0;
    std::size_t n = 0;

    void add(const ErrorFlags& f) {
        invalid_tag += f.invalid_tag;
        extra += f.extra;
        imbal += f.imbal;
        missing += f.missing;
        ++n;
    }
    double rate(std::size_t count) const { return n ? static_cast<double>(count) / static_cast<double>(n) : 0.0; }

    nlohmann::json to_json() const {
        return {{"InvalidTag", {{"count", invalid_tag}, {"rate", rate(invalid_tag)}}},
                {"Extra", {{"count", extra}, {"rate", rate(extra)}}},
                {"Imbal", {{"count", imbal}, {"rate", rate(imbal)}}},
                {"Missing", {{"count", missing}, {"rate", rate(missing)}}},
                {"n", n}};
    }
};

/// Fraction of outputs accepted by `validator`.
template <class T>
double validity_rate(std::span<const T> outputs, const std::function<bool(const T&)>& validator) {
    if (outputs.empty()) fail("EmptyEval", "validity over zero outputs");
    std::size_t ok = 0;
    for (const auto& o : outputs) ok += validator(o);
    return static_cast<double>(ok) / static_cast<double>(outputs.size());
}

/// Corpus-level CP metrics over raw outputs. Bracket metrics and tag accuracy
/// are computed only over examples whose output parses and covers as many
/// words as the gold tree.
struct CpEvaluation {
    BracketReport report;
    ErrorTaxonomy errors;
    std::vector<std::string> failures;  // per example: empty, or the parse error
};

inline CpEvaluation evaluate_cp(std::span<const std::string> outputs, std::span<const ParseTree> golds,
                                const TagInventory& tags, const BracketGlyphs& glyphs = {}) {
    if (outputs.size() != golds.size()) fail("ShapeMismatch", "outputs and golds differ in length");
    if (outputs.empty()) fail("EmptyEval", "no CP examples");
    CpEvaluation ev;
    BracketCounts total;
    std::size_t trees = 0, tag_ok = 0, scored = 0;
    ParseOptions po;
    po.glyphs = glyphs;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        std::string sentence;
        for (const auto& w : golds[i].yield()) sentence += (sentence.empty() ? "" : " ") + w;
        auto flags = classify_errors(outputs[i], sentence, tags, glyphs);
        ev.errors.add(flags);
        tag_ok += !flags.invalid_tag;
        std::string failure;
        try {
            auto tree = parse_linearized(outputs[i], tags, po);
            ++trees;
            try {
                total += bracket_counts(tree, golds[i], tags);
                ++scored;
            } catch (const Error& e) {
                failure = e.kind();
            }
        } catch (const Error& e) {
            failure = e.kind();
        }
        ev.failures.push_back(failure);
    }
    ev.report = bracket_report(total);
    const auto n = static_cast<double>(outputs.size());
    ev.report.n_examples = outputs.size();
    ev.report.n_scored = scored;
    ev.report.tree_validity = static_cast<double>(trees) / n;
    ev.report.tag_validity = static_cast<double>(tag_ok) / n;
    return ev;
}

namespace detail {

inline nlohmann::json metric_json(double value, Interval ci) {
    return {{"value", value}, {"ci_low", ci.low}, {"ci_high", ci.high}};
}

}  // namespace detail

/// {"metric": {"value", "ci_low", "ci_high"}, ..., "n": N, "seed": s}
inline nlohmann::json report_json(const EvalReport& r, std::uint64_t seed) {
    nlohmann::json j;
    j["precision"] = detail::metric_json(r.precision, r.ci_precision);
    j["recall"] = detail::metric_json(r.recall, r.ci_recall);
    j["f1"] = detail::metric_json(r.f1, r.ci_f1);
    j["counts"] = {{"tp", r.tp}, {"pred", r.n_pred}, {"gold", r.n_gold}};
    j["flags"] = {{"precision_undefined", r.precision_undefined}, {"recall_undefined", r.recall_undefined}};
    if (r.validity_rate) j["validity"] = detail::metric_json(*r.validity_rate, {*r.validity_rate, *r.validity_rate});
    j["n"] = r.n_examples;
    j["seed"] = seed;
    return j;
}

inline nlohmann::json report_json(const CpEvaluation& ev, std::uint64_t seed) {
    const auto& r = ev.report;
    auto point = [](double v) { return detail::metric_json(v, {v, v}); };
    nlohmann::json j;
    j["bracket_precision"] = point(r.precision);
    j["bracket_recall"] = point(r.recall);
    j["bracket_f1"] = point(r.f1);
    j["tag_accuracy"] = point(r.tag_accuracy);
    j["tag_validity"] = point(r.tag_validity);
    j["tree_validity"] = point(r.tree_validity);
    j["errors"] = ev.errors.to_json();
    j["n_scored"] = r.n_scored;
    j["n"] = r.n_examples;
    j["seed"] = seed;
    return j;
}

}  // namespace sgcd
