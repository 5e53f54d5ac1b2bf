#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sgcd/automaton.hpp"
#include "sgcd/error.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Next-token log-probabilities given a conditioning context and the tokens
/// decoded so far. Implementations must be callable from several threads.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::size_t vocab_size() const = 0;
    /// Length vocab_size(); entries finite or -inf.
    virtual std::vector<double> score_next(std::span<const TokenId> context, std::span<const TokenId> prefix) const = 0;
    /// True when every row exp-sums to 1 (within 1e-6).
    virtual bool normalized() const { return true; }
};

using ScorerPtr = std::shared_ptr<const Scorer>;

/// Wraps a callable; handy for fixtures and for scorers assembled at runtime.
class FunctionScorer final : public Scorer {
public:
    using Fn = std::function<std::vector<double>(std::span<const TokenId>, std::span<const TokenId>)>;
    FunctionScorer(std::size_t vocab_size, Fn fn, bool normalized = false)
        : vocab_size_(vocab_size), fn_(std::move(fn)), normalized_(normalized) {}

    std::size_t vocab_size() const override { return vocab_size_; }
    std::vector<double> score_next(std::span<const TokenId> context, std::span<const TokenId> prefix) const override {
        auto row = fn_(context, prefix);
        if (row.size() != vocab_size_) fail("BadScorer", "row has " + std::to_string(row.size()) + " entries");
        return row;
    }
    bool normalized() const override { return normalized_; }

private:
    std::size_t vocab_size_;
    Fn fn_;
    bool normalized_;
};

class UniformScorer final : public Scorer {
public:
    explicit UniformScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {
        if (vocab_size == 0) fail("BadVocabulary", "empty vocabulary");
    }
    std::size_t vocab_size() const override { return vocab_size_; }
    std::vector<double> score_next(std::span<const TokenId>, std::span<const TokenId>) const override {
        return std::vector<double>(vocab_size_, -std::log(static_cast<double>(vocab_size_)));
    }

private:
    std::size_t vocab_size_;
};

/// Probability rows keyed by the decoded prefix; the context is ignored.
/// Prefixes without a row fall back to the uniform distribution.
struct ScoreTable {
    std::size_t vocab_size = 0;
    std::map<std::vector<TokenId>, std::vector<double>> rows;
    /// Allow rows that do not sum to one (the scorer then reports
    /// normalized() == false).
    bool unnormalized = false;
};

class TableScorer final : public Scorer {
public:
    explicit TableScorer(ScoreTable table) : vocab_size_(table.vocab_size), normalized_(!table.unnormalized) {
        if (vocab_size_ == 0) fail("BadTable", "vocab_size is 0");
        for (auto& [prefix, row] : table.rows) {
            if (row.size() != vocab_size_) fail("BadTable", "row of wrong length");
            double sum = 0;
            for (double p : row) {
                if (!(p >= 0) || !std::isfinite(p)) fail("BadTable", "negative or non-finite probability");
                sum += p;
            }
            if (!table.unnormalized && std::abs(sum - 1.0) > 1e-6) fail("BadTable", "row sums to " + std::to_string(sum));
            std::vector<double> logs(row.size());
            std::transform(row.begin(), row.end(), logs.begin(), [](double p) { return p > 0 ? std::log(p) : kNegInf; });
            rows_.emplace(prefix, std::move(logs));
        }
    }

    std::size_t vocab_size() const override { return vocab_size_; }
    std::vector<double> score_next(std::span<const TokenId>, std::span<const TokenId> prefix) const override {
        auto it = rows_.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
        if (it != rows_.end()) return it->second;
        return std::vector<double>(vocab_size_, -std::log(static_cast<double>(vocab_size_)));
    }
    bool normalized() const override { return normalized_; }

private:
    std::size_t vocab_size_;
    bool normalized_;
    std::map<std::vector<TokenId>, std::vector<double>> rows_;
};

/// Add-k bigram model over token sequences, each implicitly closed by EOS.
/// The first token is conditioned on a begin marker. With k = 0 a history
/// never seen in training falls back to uniform.
class BigramScorer final : public Scorer {
public:
    BigramScorer(const std::vector<std::vector<TokenId>>& corpus, std::size_t vocab_size, TokenId eos, double k)
        : vocab_size_(vocab_size), k_(k), counts_(vocab_size + 1, std::vector<double>(vocab_size, 0.0)),
          totals_(vocab_size + 1, 0.0) {
        if (vocab_size == 0) fail("BadVocabulary", "empty vocabulary");
        if (!(k >= 0)) fail("BadSmoothing", "smoothing must be >= 0");
        for (const auto& sent : corpus) {
            std::size_t prev = vocab_size_;  // begin marker row
            auto bump = [&](TokenId t) {
                if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) fail("BadToken", std::to_string(t));
                counts_[prev][t] += 1;
                totals_[prev] += 1;
                prev = static_cast<std::size_t>(t);
            };
            for (TokenId t : sent) bump(t);
            bump(eos);
        }
    }

    std::size_t vocab_size() const override { return vocab_size_; }
    std::vector<double> score_next(std::span<const TokenId>, std::span<const TokenId> prefix) const override {
        std::size_t prev = prefix.empty() ? vocab_size_ : static_cast<std::size_t>(prefix.back());
        std::vector<double> out(vocab_size_);
        const double denom = totals_[prev] + k_ * static_cast<double>(vocab_size_);
        if (denom <= 0) return std::vector<double>(vocab_size_, -std::log(static_cast<double>(vocab_size_)));
        for (std::size_t t = 0; t < vocab_size_; ++t) {
            double num = counts_[prev][t] + k_;
            out[t] = num > 0 ? std::log(num / denom) : kNegInf;
        }
        return out;
    }

private:
    std::size_t vocab_size_;
    double k_;
    std::vector<std::vector<double>> counts_;
    std::vector<double> totals_;
};

inline ScorerPtr make_table_scorer(ScoreTable table) { return std::make_shared<TableScorer>(std::move(table)); }
inline ScorerPtr make_uniform_scorer(const Vocabulary& vocab) { return std::make_shared<UniformScorer>(vocab.size()); }
inline ScorerPtr make_uniform_scorer(std::size_t vocab_size) { return std::make_shared<UniformScorer>(vocab_size); }
inline ScorerPtr make_bigram_scorer(const std::vector<std::vector<TokenId>>& corpus, const Vocabulary& vocab,
                                    double smoothing) {
    return std::make_shared<BigramScorer>(corpus, vocab.size(), vocab.eos_id(), smoothing);
}

struct DecodeConfig {
    std::size_t beam_size = 1;
    /// Tokens excluding EOS. At length max_len only EOS may follow.
    std::size_t max_len = 128;
    std::uint64_t seed = 0;
    /// Scorer calls of one beam step may run on this many threads.
    std::size_t num_threads = 1;
    /// Stop once no active hypothesis can beat the completed pool. Only
    /// honored for normalized scorers, where scores never increase.
    bool early_stop = false;

    void validate() const {
        if (beam_size < 1) fail("BadConfig", "beam_size must be >= 1");
        if (max_len < 1) fail("BadConfig", "max_len must be >= 1");
        if (num_threads < 1) fail("BadConfig", "num_threads must be >= 1");
    }
};

/// tokens never include EOS; for finished hypotheses log_score includes the
/// EOS step.
struct Hypothesis {
    std::vector<TokenId> tokens;
    double log_score = 0;
    State state = 0;
    bool finished = false;
};

namespace detail {

/// NaN scores would break the ordering; they rank like -inf.
inline double sane(double x) { return std::isnan(x) ? kNegInf : x; }

struct Candidate {
    double score;
    TokenId token;
    std::size_t parent;
};

/// Higher score first, then lower token id, then lower parent index.
inline bool better(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.token != b.token) return a.token < b.token;
    return a.parent < b.parent;
}

inline void check_vocab(const Scorer& scorer, const ConstraintAutomaton& a) {
    if (scorer.vocab_size() != a.vocab_size())
        fail("VocabMismatch", "scorer has " + std::to_string(scorer.vocab_size()) + " tokens, automaton " +
                                  std::to_string(a.vocab_size()));
}

/// Allowed continuations under the length cap.
inline std::vector<TokenId> next_tokens(const ConstraintAutomaton& a, const Hypothesis& h, std::size_t max_len) {
    if (h.tokens.size() >= max_len) {
        if (a.accepting(h.state)) return {a.eos_id()};
        return {};
    }
    auto allowed = a.allowed_tokens(h.state);
    if (allowed.empty()) fail("DeadEnd", "automaton is not trim: no continuation after " +
                                             std::to_string(h.tokens.size()) + " tokens");
    return allowed;
}

inline std::vector<std::vector<double>> score_all(const Scorer& scorer, std::span<const TokenId> context,
                                                  const std::vector<Hypothesis>& hyps, std::size_t threads) {
    std::vector<std::vector<double>> rows(hyps.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) rows[i] = scorer.score_next(context, hyps[i].tokens);
    };
    threads = std::min(threads, hyps.size());
    if (threads <= 1) {
        work(0, hyps.size());
        return rows;
    }
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (hyps.size() + threads - 1) / threads;
    for (std::size_t b = 0; b < hyps.size(); b += chunk)
        jobs.push_back(std::async(std::launch::async, work, b, std::min(hyps.size(), b + chunk)));
    for (auto& j : jobs) j.get();
    return rows;
}

inline bool pool_order(const Hypothesis& a, const Hypothesis& b) {
    if (a.log_score != b.log_score) return a.log_score > b.log_score;
    return a.tokens < b.tokens;
}

}  // namespace detail

/// Constrained beam search with a completed pool: every candidate whose token
/// is EOS leaves the beam as a finished hypothesis; search continues until no
/// active hypothesis is left. Returns at most beam_size finished hypotheses,
/// best first. No length normalization.
inline std::vector<Hypothesis> constrained_beam(const Scorer& scorer, const ConstraintAutomaton& automaton,
                                                std::span<const TokenId> context, const DecodeConfig& cfg) {
    cfg.validate();
    detail::check_vocab(scorer, automaton);
    const TokenId eos = automaton.eos_id();
    std::vector<Hypothesis> active{{{}, 0.0, automaton.start(), false}};
    std::vector<Hypothesis> pool;
    const bool early = cfg.early_stop && scorer.normalized();

    while (!active.empty()) {
        auto rows = detail::score_all(scorer, context, active, cfg.num_threads);
        std::vector<detail::Candidate> cands;
        for (std::size_t p = 0; p < active.size(); ++p) {
            const auto& row = rows[p];
            if (row.size() != automaton.vocab_size()) fail("BadScorer", "row of wrong length");
            for (TokenId t : detail::next_tokens(automaton, active[p], cfg.max_len))
                cands.push_back({active[p].log_score + detail::sane(row[t]), t, p});
        }
        const std::size_t keep = std::min(cfg.beam_size, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), detail::better);
        cands.resize(keep);

        std::vector<Hypothesis> next;
        for (const auto& c : cands) {
            const auto& parent = active[c.parent];
            if (c.token == eos) {
                pool.push_back({parent.tokens, c.score, kFinished, true});
                continue;
            }
            Hypothesis h{parent.tokens, c.score, automaton.advance(parent.state, c.token), false};
            h.tokens.push_back(c.token);
            next.push_back(std::move(h));
        }
        active = std::move(next);

        if (early && pool.size() >= cfg.beam_size && !active.empty()) {
            std::sort(pool.begin(), pool.end(), detail::pool_order);
            pool.resize(cfg.beam_size);
            double best_active = kNegInf;
            for (const auto& h : active) best_active = std::max(best_active, h.log_score);
            if (best_active < pool.back().log_score) break;
        }
    }
    if (pool.empty()) fail("MaxLenExceeded", "no hypothesis finished within " + std::to_string(cfg.max_len) + " tokens");
    std::stable_sort(pool.begin(), pool.end(), detail::pool_order);
    if (pool.size() > cfg.beam_size) pool.resize(cfg.beam_size);
    return pool;
}

/// Step-wise argmax over the allowed tokens. Returns the finished hypothesis.
inline Hypothesis constrained_greedy_hypothesis(const Scorer& scorer, const ConstraintAutomaton& automaton,
                                                std::span<const TokenId> context, const DecodeConfig& cfg) {
    cfg.validate();
    detail::check_vocab(scorer, automaton);
    Hypothesis h{{}, 0.0, automaton.start(), false};
    for (;;) {
        auto allowed = detail::next_tokens(automaton, h, cfg.max_len);
        if (allowed.empty())
            fail("MaxLenExceeded", "not accepting after " + std::to_string(cfg.max_len) + " tokens");
        auto row = scorer.score_next(context, h.tokens);
        if (row.size() != automaton.vocab_size()) fail("BadScorer", "row of wrong length");
        detail::Candidate best{kNegInf, allowed.front(), 0};
        bool first = true;
        for (TokenId t : allowed) {
            detail::Candidate c{h.log_score + detail::sane(row[t]), t, 0};
            if (first || detail::better(c, best)) best = c;
            first = false;
        }
        h.log_score = best.score;
        if (best.token == automaton.eos_id()) {
            h.state = kFinished;
            h.finished = true;
            return h;
        }
        h.state = automaton.advance(h.state, best.token);
        h.tokens.push_back(best.token);
    }
}

inline std::vector<TokenId> constrained_greedy(const Scorer& scorer, const ConstraintAutomaton& automaton,
                                               std::span<const TokenId> context, const DecodeConfig& cfg) {
    return constrained_greedy_hypothesis(scorer, automaton, context, cfg).tokens;
}

/// Sum of score_next along `tokens`, plus the EOS step when `finished`.
inline double rescore(const Scorer& scorer, std::span<const TokenId> context, std::span<const TokenId> tokens,
                      TokenId eos, bool finished = true) {
    double total = 0;
    for (std::size_t i = 0; i <= tokens.size(); ++i) {
        if (i == tokens.size() && !finished) break;
        auto row = scorer.score_next(context, tokens.first(i));
        total += detail::sane(row[i == tokens.size() ? eos : tokens[i]]);
    }
    return total;
}

/// Unconstrained argmax decoding (lowest id on ties) up to EOS.
inline std::vector<TokenId> unconstrained_greedy(const Scorer& scorer, std::span<const TokenId> context, TokenId eos,
                                                 const DecodeConfig& cfg) {
    cfg.validate();
    std::vector<TokenId> out;
    for (;;) {
        auto row = scorer.score_next(context, out);
        TokenId best = 0;
        for (std::size_t t = 1; t < row.size(); ++t)
            if (detail::sane(row[t]) > detail::sane(row[best])) best = static_cast<TokenId>(t);
        if (best == eos) return out;
        if (out.size() >= cfg.max_len) fail("MaxLenExceeded", "no EOS within " + std::to_string(cfg.max_len) + " tokens");
        out.push_back(best);
    }
}

/// Ancestral sampling seeded by cfg.seed. Unnormalized rows are renormalized.
inline std::vector<TokenId> unconstrained_sample(const Scorer& scorer, std::span<const TokenId> context, TokenId eos,
                                                 const DecodeConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::vector<TokenId> out;
    for (;;) {
        auto row = scorer.score_next(context, out);
        double m = kNegInf;
        for (double x : row) m = std::max(m, detail::sane(x));
        if (m == kNegInf) fail("DeadEnd", "scorer gives every token zero probability");
        std::vector<double> cum(row.size());
        double acc = 0;
        for (std::size_t t = 0; t < row.size(); ++t) cum[t] = acc += std::exp(detail::sane(row[t]) - m);
        // 53 random bits, portable across standard libraries
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * acc;
        auto pos = static_cast<TokenId>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
        if (pos >= static_cast<TokenId>(row.size())) pos = static_cast<TokenId>(row.size() - 1);
        while (detail::sane(row[pos]) == kNegInf && pos > 0) --pos;
        if (pos == eos) return out;
        if (out.size() >= cfg.max_len) fail("MaxLenExceeded", "no EOS within " + std::to_string(cfg.max_len) + " tokens");
        out.push_back(pos);
    }
}

}  // namespace sgcd
