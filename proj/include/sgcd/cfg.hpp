#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sgcd/automaton.hpp"
#include "sgcd/error.hpp"
#include "sgcd/grammar.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

/// Context-free grammar lowered to the token level: every terminal string is
/// spelled out as its token sequence inside the productions, which makes the
/// Earley dot inside a multi-token terminal act as a trie cursor.
class CompiledCfg {
public:
    struct Sym {
        enum class Kind : std::uint8_t { Token, Wildcard, Nonterminal };
        Kind kind;
        std::int32_t value;  // token id or nonterminal index
    };
    struct Rule {
        std::int32_t lhs;
        std::vector<Sym> rhs;
    };

    CompiledCfg(const GrammarSpec& spec, const Tokenizer& tok)
        : eos_(tok.vocab().eos_id()), vocab_size_(tok.vocab().size()) {
        spec.validate();
        auto terms = TokenizedTerminals::build(spec, tok);
        wildcard_ = terms.wildcard;
        std::map<std::string, std::int32_t> index;
        for (const auto& nt : spec.nonterminals) {
            index.emplace(nt, static_cast<std::int32_t>(names_.size()));
            names_.push_back(nt);
        }
        std::vector<Rule> rules;
        for (const auto& p : spec.productions) {
            Rule r{index.at(p.lhs), {}};
            for (const auto& s : p.rhs) {
                if (s.is_nonterminal()) {
                    r.rhs.push_back({Sym::Kind::Nonterminal, index.at(s.name)});
                } else if (s.is_wildcard()) {
                    r.rhs.push_back({Sym::Kind::Wildcard, 0});
                } else {
                    for (TokenId t : terms.terminals.at(s.name)) r.rhs.push_back({Sym::Kind::Token, t});
                }
            }
            rules.push_back(std::move(r));
        }
        start_ = index.at(spec.start);

        // Drop rules that mention unproductive nonterminals, so every Earley
        // item that survives can still be completed.
        std::vector<bool> productive(names_.size(), false);
        for (bool changed = true; changed;) {
            changed = false;
            for (const auto& r : rules) {
                if (productive[static_cast<std::size_t>(r.lhs)]) continue;
                bool ok = std::all_of(r.rhs.begin(), r.rhs.end(), [&](const Sym& s) {
                    return s.kind != Sym::Kind::Nonterminal || productive[static_cast<std::size_t>(s.value)];
                });
                if (ok) {
                    productive[static_cast<std::size_t>(r.lhs)] = true;
                    changed = true;
                }
            }
        }
        if (!productive[static_cast<std::size_t>(start_)]) fail("EmptyLanguage", "start symbol is unproductive");
        for (auto& r : rules) {
            bool ok = std::all_of(r.rhs.begin(), r.rhs.end(), [&](const Sym& s) {
                return s.kind != Sym::Kind::Nonterminal || productive[static_cast<std::size_t>(s.value)];
            });
            if (ok) rules_.push_back(std::move(r));
        }

        by_lhs_.resize(names_.size());
        for (std::size_t i = 0; i < rules_.size(); ++i) by_lhs_[static_cast<std::size_t>(rules_[i].lhs)].push_back(i);

        nullable_.assign(names_.size(), false);
        for (bool changed = true; changed;) {
            changed = false;
            for (const auto& r : rules_) {
                if (nullable_[static_cast<std::size_t>(r.lhs)]) continue;
                bool ok = std::all_of(r.rhs.begin(), r.rhs.end(), [&](const Sym& s) {
                    return s.kind == Sym::Kind::Nonterminal && nullable_[static_cast<std::size_t>(s.value)];
                });
                if (ok) {
                    nullable_[static_cast<std::size_t>(r.lhs)] = true;
                    changed = true;
                }
            }
        }
    }

    const std::vector<Rule>& rules() const noexcept { return rules_; }
    const std::vector<std::size_t>& rules_for(std::int32_t nt) const { return by_lhs_[static_cast<std::size_t>(nt)]; }
    bool nullable(std::int32_t nt) const { return nullable_[static_cast<std::size_t>(nt)]; }
    std::int32_t start() const noexcept { return start_; }
    TokenId eos_id() const noexcept { return eos_; }
    std::size_t vocab_size() const noexcept { return vocab_size_; }
    const std::vector<TokenId>& wildcard() const noexcept { return wildcard_; }
    bool wildcard_matches(TokenId t) const { return std::binary_search(wildcard_.begin(), wildcard_.end(), t); }

private:
    TokenId eos_;
    std::size_t vocab_size_;
    std::vector<std::string> names_;
    std::vector<Rule> rules_;
    std::vector<std::vector<std::size_t>> by_lhs_;
    std::vector<bool> nullable_;
    std::vector<TokenId> wildcard_;
    std::int32_t start_ = 0;
};

/// One Earley item set. Immutable once built and shared between every chart
/// state that extends the same prefix.
struct EarleyColumn {
    struct Item {
        std::uint32_t rule;
        std::uint32_t dot;
        std::uint32_t origin;
    };
    std::vector<Item> items;
    std::unordered_map<std::int32_t, std::vector<std::uint32_t>> waiting;  // nonterminal -> item indices
    std::vector<std::uint32_t> scanners;                                    // items before a token or wildcard
    std::vector<TokenId> allowed;                                           // sorted, without EOS
    bool accepting = false;
};

/// Earley chart after consuming some tokens. Columns are shared with the
/// ancestors the state was advanced from.
struct CfgChartState {
    std::shared_ptr<const CompiledCfg> grammar;
    std::vector<std::shared_ptr<const EarleyColumn>> columns;

    std::size_t consumed() const noexcept { return columns.empty() ? 0 : columns.size() - 1; }
    const EarleyColumn& last() const { return *columns.back(); }
};

namespace detail {

inline std::uint64_t item_key(const EarleyColumn::Item& it) {
    return (std::uint64_t{it.rule} << 40) ^ (std::uint64_t{it.dot} << 24) ^ std::uint64_t{it.origin};
}

inline std::shared_ptr<const EarleyColumn> build_column(const CompiledCfg& g,
                                                        const std::vector<std::shared_ptr<const EarleyColumn>>& prev,
                                                        std::vector<EarleyColumn::Item> seed) {
    using Kind = CompiledCfg::Sym::Kind;
    auto col = std::make_shared<EarleyColumn>();
    const auto here = static_cast<std::uint32_t>(prev.size());
    std::unordered_set<std::uint64_t> seen;
    auto add = [&](EarleyColumn::Item it) {
        if (seen.insert(item_key(it)).second) col->items.push_back(it);
    };
    for (const auto& it : seed) add(it);

    bool wildcard_open = false;
    std::set<TokenId> tokens;
    for (std::size_t i = 0; i < col->items.size(); ++i) {
        const auto it = col->items[i];
        const auto& rule = g.rules()[it.rule];
        if (it.dot < rule.rhs.size()) {
            const auto& sym = rule.rhs[it.dot];
            if (sym.kind == Kind::Nonterminal) {
                col->waiting[sym.value].push_back(static_cast<std::uint32_t>(i));
                for (auto r : g.rules_for(sym.value)) add({static_cast<std::uint32_t>(r), 0, here});
                if (g.nullable(sym.value)) add({it.rule, it.dot + 1, it.origin});
            } else {
                col->scanners.push_back(static_cast<std::uint32_t>(i));
                if (sym.kind == Kind::Token) tokens.insert(sym.value);
                else wildcard_open = true;
            }
        } else if (it.origin < here) {
            const auto& origin = *prev[it.origin];
            if (auto w = origin.waiting.find(rule.lhs); w != origin.waiting.end()) {
                for (auto idx : w->second) {
                    const auto& parent = origin.items[idx];
                    add({parent.rule, parent.dot + 1, parent.origin});
                }
            }
        }
        // completions with origin == here are covered by the nullable advance above
        if (it.dot == rule.rhs.size() && it.origin == 0 && rule.lhs == g.start()) col->accepting = true;
    }
    if (wildcard_open) tokens.insert(g.wildcard().begin(), g.wildcard().end());
    col->allowed.assign(tokens.begin(), tokens.end());
    return col;
}

}  // namespace detail

inline CfgChartState cfg_start(std::shared_ptr<const CompiledCfg> grammar) {
    CfgChartState s{std::move(grammar), {}};
    std::vector<EarleyColumn::Item> seed;
    for (auto r : s.grammar->rules_for(s.grammar->start())) seed.push_back({static_cast<std::uint32_t>(r), 0, 0});
    s.columns.push_back(detail::build_column(*s.grammar, s.columns, std::move(seed)));
    return s;
}

inline CfgChartState cfg_start(const GrammarSpec& spec, const Tokenizer& tok) {
    return cfg_start(std::make_shared<const CompiledCfg>(spec, tok));
}

inline bool cfg_accepting(const CfgChartState& s) { return s.last().accepting; }

/// Allowed next tokens, including EOS when the chart completes the start symbol.
inline std::vector<TokenId> cfg_allowed(const CfgChartState& s) {
    auto out = s.last().allowed;
    if (s.last().accepting) out.insert(std::lower_bound(out.begin(), out.end(), s.grammar->eos_id()), s.grammar->eos_id());
    return out;
}

/// nullopt when no item can scan `t`. EOS is handled by callers.
inline std::optional<CfgChartState> cfg_try_advance(const CfgChartState& s, TokenId t) {
    using Kind = CompiledCfg::Sym::Kind;
    const auto& g = *s.grammar;
    const auto& col = s.last();
    std::vector<EarleyColumn::Item> seed;
    for (auto idx : col.scanners) {
        const auto& it = col.items[idx];
        const auto& sym = g.rules()[it.rule].rhs[it.dot];
        bool match = sym.kind == Kind::Token ? sym.value == t : g.wildcard_matches(t);
        if (match) seed.push_back({it.rule, it.dot + 1, it.origin});
    }
    if (seed.empty()) return std::nullopt;
    CfgChartState next{s.grammar, s.columns};
    next.columns.push_back(detail::build_column(g, s.columns, std::move(seed)));
    return next;
}

inline CfgChartState cfg_advance(const CfgChartState& s, TokenId t) {
    auto next = cfg_try_advance(s, t);
    if (!next) fail("TokenRejected", "chart position " + std::to_string(s.consumed()) + ", token " + std::to_string(t));
    return std::move(*next);
}

/// Recognizes a whole token sequence from scratch.
inline bool cfg_recognize(std::shared_ptr<const CompiledCfg> grammar, std::span<const TokenId> tokens) {
    auto s = cfg_start(std::move(grammar));
    for (TokenId t : tokens) {
        auto next = cfg_try_advance(s, t);
        if (!next) return false;
        s = std::move(*next);
    }
    return cfg_accepting(s);
}

/// Presents the Earley recognizer as a (possibly infinite-state) automaton.
/// Chart states are interned on first visit; handles stay valid for the life
/// of the automaton. Safe for concurrent readers: lookups take a shared lock,
/// expansion takes the exclusive one.
class CfgAutomaton final : public ConstraintAutomaton {
public:
    explicit CfgAutomaton(std::shared_ptr<const CompiledCfg> grammar) : grammar_(std::move(grammar)) {
        states_.push_back(cfg_start(grammar_));
    }
    CfgAutomaton(const GrammarSpec& spec, const Tokenizer& tok)
        : CfgAutomaton(std::make_shared<const CompiledCfg>(spec, tok)) {}

    State start() const override { return 0; }
    TokenId eos_id() const override { return grammar_->eos_id(); }
    std::size_t vocab_size() const override { return grammar_->vocab_size(); }

    bool accepting(State s) const override {
        if (s == kFinished) return false;
        return cfg_accepting(chart(s));
    }

    std::vector<TokenId> allowed_tokens(State s) const override {
        if (s == kFinished) return {};
        return cfg_allowed(chart(s));
    }

    std::optional<State> step(State s, TokenId t) const override {
        if (s == kFinished) return std::nullopt;
        if (t == grammar_->eos_id()) return accepting(s) ? std::optional<State>(kFinished) : std::nullopt;
        {
            std::shared_lock lock(mutex_);
            auto it = edges_.find(edge_key(s, t));
            if (it != edges_.end()) return it->second;
        }
        CfgChartState current = chart(s);
        auto next = cfg_try_advance(current, t);
        std::unique_lock lock(mutex_);
        auto it = edges_.find(edge_key(s, t));
        if (it != edges_.end()) return it->second;
        std::optional<State> handle;
        if (next) {
            handle = states_.size();
            states_.push_back(std::move(*next));
        }
        edges_.emplace(edge_key(s, t), handle);
        return handle;
    }

    std::size_t materialized_states() const {
        std::shared_lock lock(mutex_);
        return states_.size();
    }

    CfgChartState chart(State s) const {
        std::shared_lock lock(mutex_);
        if (s >= states_.size()) fail("BadState", std::to_string(s));
        return states_[s];
    }

private:
    std::uint64_t edge_key(State s, TokenId t) const {
        return s * grammar_->vocab_size() + static_cast<std::uint64_t>(t);
    }

    std::shared_ptr<const CompiledCfg> grammar_;
    mutable std::shared_mutex mutex_;
    mutable std::vector<CfgChartState> states_;
    mutable std::unordered_map<std::uint64_t, std::optional<State>> edges_;
};

}  // namespace sgcd
