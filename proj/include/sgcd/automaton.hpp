#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sgcd/error.hpp"
#include "sgcd/grammar.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

/// Opaque automaton state handle. Lazy automata pack their state into the
/// handle or intern it; callers only compare and pass handles back.
using State = std::uint64_t;

/// Sink reached by consuming EOS in an accepting state.
inline constexpr State kFinished = ~State{0};

/// Token-level acceptor behind every constraint. Implementations keep the
/// trim invariant: every state reachable from start() can still reach an
/// accepting state, so a masked search never dead-ends.
///
/// EOS is an ordinary transition that exists exactly at accepting states and
/// leads to kFinished.
class ConstraintAutomaton {
public:
    virtual ~ConstraintAutomaton() = default;

    virtual State start() const = 0;
    virtual bool accepting(State s) const = 0;
    /// Sorted ascending; contains eos_id() iff accepting(s).
    virtual std::vector<TokenId> allowed_tokens(State s) const = 0;
    /// nullopt when t is not allowed in s.
    virtual std::optional<State> step(State s, TokenId t) const = 0;
    virtual TokenId eos_id() const = 0;
    virtual std::size_t vocab_size() const = 0;

    State advance(State s, TokenId t) const {
        auto next = step(s, t);
        if (!next) fail("TokenRejected", "state " + std::to_string(s) + ", token " + std::to_string(t));
        return *next;
    }

    /// Consumes `tokens` (no EOS) from start(); nullopt if some token is rejected.
    std::optional<State> run(std::span<const TokenId> tokens) const {
        State s = start();
        for (TokenId t : tokens) {
            auto next = step(s, t);
            if (!next) return std::nullopt;
            s = *next;
        }
        return s;
    }

    bool accepts(std::span<const TokenId> tokens) const {
        auto s = run(tokens);
        return s && accepting(*s);
    }
};

/// Explicit deterministic automaton with sorted per-state edge lists.
class Dfa final : public ConstraintAutomaton {
public:
    struct Edge {
        TokenId token;
        std::uint32_t target;
        friend bool operator==(const Edge&, const Edge&) = default;
    };

    Dfa(std::size_t vocab_size, TokenId eos) : vocab_size_(vocab_size), eos_(eos) {}

    std::uint32_t add_state(bool is_accepting = false) {
        edges_.emplace_back();
        accepting_.push_back(is_accepting);
        return static_cast<std::uint32_t>(edges_.size() - 1);
    }

    void set_accepting(std::uint32_t s, bool v = true) { accepting_.at(s) = v; }
    void set_start(std::uint32_t s) {
        check_state(s);
        start_ = s;
    }

    void add_edge(std::uint32_t from, TokenId token, std::uint32_t to) {
        check_state(from);
        check_state(to);
        if (token == eos_) fail("BadEdge", "EOS is implicit at accepting states");
        if (token < 0 || static_cast<std::size_t>(token) >= vocab_size_) fail("BadTokenId", std::to_string(token));
        auto& list = edges_[from];
        auto it = std::lower_bound(list.begin(), list.end(), token,
                                   [](const Edge& e, TokenId t) { return e.token < t; });
        if (it != list.end() && it->token == token) {
            if (it->target != to) fail("NonDeterministic", "state " + std::to_string(from));
            return;
        }
        list.insert(it, Edge{token, to});
    }

    std::size_t num_states() const noexcept { return edges_.size(); }
    std::size_t num_transitions() const noexcept {
        std::size_t n = 0;
        for (const auto& l : edges_) n += l.size();
        return n;
    }
    std::size_t num_accepting() const noexcept {
        return static_cast<std::size_t>(std::count(accepting_.begin(), accepting_.end(), true));
    }
    std::span<const Edge> edges(std::uint32_t s) const { return edges_.at(s); }
    std::uint32_t start_index() const noexcept { return start_; }

    State start() const override { return start_; }
    bool accepting(State s) const override { return s != kFinished && s < edges_.size() && accepting_[s]; }
    TokenId eos_id() const override { return eos_; }
    std::size_t vocab_size() const override { return vocab_size_; }

    std::vector<TokenId> allowed_tokens(State s) const override {
        std::vector<TokenId> out;
        if (s == kFinished || s >= edges_.size()) return out;
        out.reserve(edges_[s].size() + 1);
        for (const auto& e : edges_[s]) out.push_back(e.token);
        if (accepting_[s]) out.insert(std::lower_bound(out.begin(), out.end(), eos_), eos_);
        return out;
    }

    std::optional<State> step(State s, TokenId t) const override {
        if (s == kFinished || s >= edges_.size()) return std::nullopt;
        if (t == eos_) return accepting_[s] ? std::optional<State>(kFinished) : std::nullopt;
        const auto& list = edges_[s];
        auto it = std::lower_bound(list.begin(), list.end(), t, [](const Edge& e, TokenId v) { return e.token < v; });
        if (it == list.end() || it->token != t) return std::nullopt;
        return it->target;
    }

    nlohmann::json to_json() const {
        nlohmann::json edges = nlohmann::json::array();
        for (std::uint32_t s = 0; s < edges_.size(); ++s)
            for (const auto& e : edges_[s]) edges.push_back({s, e.token, e.target});
        nlohmann::json acc = nlohmann::json::array();
        for (std::uint32_t s = 0; s < accepting_.size(); ++s)
            if (accepting_[s]) acc.push_back(s);
        return {{"vocab_size", vocab_size_}, {"eos", eos_},      {"states", edges_.size()},
                {"start", start_},           {"accepting", acc}, {"edges", edges}};
    }

    static Dfa from_json(const nlohmann::json& j) {
        Dfa d(j.at("vocab_size").get<std::size_t>(), j.at("eos").get<TokenId>());
        auto n = j.at("states").get<std::size_t>();
        for (std::size_t i = 0; i < n; ++i) d.add_state();
        for (const auto& a : j.at("accepting")) d.set_accepting(a.get<std::uint32_t>());
        for (const auto& e : j.at("edges")) d.add_edge(e.at(0).get<std::uint32_t>(), e.at(1).get<TokenId>(), e.at(2).get<std::uint32_t>());
        d.set_start(j.at("start").get<std::uint32_t>());
        return d;
    }

private:
    void check_state(std::uint32_t s) const {
        if (s >= edges_.size()) fail("BadState", std::to_string(s));
    }

    std::size_t vocab_size_;
    TokenId eos_;
    std::vector<std::vector<Edge>> edges_;
    std::vector<bool> accepting_;
    std::uint32_t start_ = 0;
};

namespace detail {

/// States of `d` in BFS order from start, restricted to `keep`; edges visited
/// in token order so numbering is canonical.
inline Dfa renumber_bfs(const Dfa& d, const std::vector<bool>& keep) {
    std::vector<std::int64_t> id(d.num_states(), -1);
    std::vector<std::uint32_t> order;
    std::deque<std::uint32_t> queue{d.start_index()};
    id[d.start_index()] = 0;
    order.push_back(d.start_index());
    while (!queue.empty()) {
        auto s = queue.front();
        queue.pop_front();
        for (const auto& e : d.edges(s)) {
            if (!keep[e.target] || id[e.target] >= 0) continue;
            id[e.target] = static_cast<std::int64_t>(order.size());
            order.push_back(e.target);
            queue.push_back(e.target);
        }
    }
    Dfa out(d.vocab_size(), d.eos_id());
    for (auto s : order) out.add_state(d.accepting(s));
    for (auto s : order)
        for (const auto& e : d.edges(s))
            if (keep[e.target])
                out.add_edge(static_cast<std::uint32_t>(id[s]), e.token, static_cast<std::uint32_t>(id[e.target]));
    out.set_start(0);
    return out;
}

}  // namespace detail

/// Removes every state that is unreachable from start or cannot reach an
/// accepting state. The result accepts the same language.
inline Dfa trim(const Dfa& d) {
    const auto n = d.num_states();
    if (n == 0) fail("EmptyLanguage", "automaton has no states");
    std::vector<std::vector<std::uint32_t>> reverse(n);
    for (std::uint32_t s = 0; s < n; ++s)
        for (const auto& e : d.edges(s)) reverse[e.target].push_back(s);

    std::vector<bool> live(n, false);
    std::deque<std::uint32_t> queue;
    for (std::uint32_t s = 0; s < n; ++s)
        if (d.accepting(s)) {
            live[s] = true;
            queue.push_back(s);
        }
    while (!queue.empty()) {
        auto s = queue.front();
        queue.pop_front();
        for (auto p : reverse[s])
            if (!live[p]) {
                live[p] = true;
                queue.push_back(p);
            }
    }
    if (!live[d.start_index()]) fail("EmptyLanguage");
    return detail::renumber_bfs(d, live);
}

/// Moore partition refinement over a trim automaton (missing edges go to an
/// implicit dead class).
inline Dfa minimize(const Dfa& input) {
    Dfa d = trim(input);
    const auto n = d.num_states();
    std::vector<std::uint32_t> cls(n);
    for (std::uint32_t s = 0; s < n; ++s) cls[s] = d.accepting(s) ? 1 : 0;
    std::size_t num_classes = 0;
    for (;;) {
        std::map<std::vector<std::int64_t>, std::uint32_t> sig_ids;
        std::vector<std::uint32_t> next(n);
        for (std::uint32_t s = 0; s < n; ++s) {
            std::vector<std::int64_t> sig{cls[s]};
            for (const auto& e : d.edges(s)) {
                sig.push_back(e.token);
                sig.push_back(cls[e.target]);
            }
            auto [it, _] = sig_ids.emplace(std::move(sig), static_cast<std::uint32_t>(sig_ids.size()));
            next[s] = it->second;
        }
        cls = std::move(next);
        if (sig_ids.size() == num_classes) break;
        num_classes = sig_ids.size();
    }
    Dfa q(d.vocab_size(), d.eos_id());
    for (std::size_t c = 0; c < num_classes; ++c) q.add_state();
    for (std::uint32_t s = 0; s < n; ++s) {
        q.set_accepting(cls[s], d.accepting(s));
        for (const auto& e : d.edges(s)) q.add_edge(cls[s], e.token, cls[e.target]);
    }
    q.set_start(cls[d.start_index()]);
    return detail::renumber_bfs(q, std::vector<bool>(num_classes, true));
}

/// Resolves grammar terminals to token sequences and the wildcard to its
/// token set, shared by the regular compiler and the Earley recognizer.
struct TokenizedTerminals {
    std::map<std::string, std::vector<TokenId>> terminals;
    std::vector<TokenId> wildcard;  // sorted

    static TokenizedTerminals build(const GrammarSpec& spec, const Tokenizer& tok) {
        TokenizedTerminals out;
        for (const auto& t : spec.terminals) out.terminals[t] = tok.tokenize_strict(t);
        if (spec.uses_wildcard()) {
            std::set<TokenId> reserved{tok.vocab().eos_id()};
            if (auto u = tok.vocab().unk_id()) reserved.insert(*u);
            for (const auto& r : spec.reserved_terminals()) {
                auto ids = tok.tokenize_strict(r);
                reserved.insert(ids.begin(), ids.end());
            }
            for (std::size_t i = 0; i < tok.vocab().size(); ++i)
                if (!reserved.count(static_cast<TokenId>(i))) out.wildcard.push_back(static_cast<TokenId>(i));
            if (out.wildcard.empty()) fail("EmptyLanguage", "wildcard matches no token");
        }
        return out;
    }
};

namespace detail {

/// Tarjan SCCs over the nonterminal reference graph.
inline std::map<std::string, int> nonterminal_sccs(const GrammarSpec& spec) {
    std::map<std::string, std::vector<std::string>> graph;
    for (const auto& p : spec.productions)
        for (const auto& s : p.rhs)
            if (s.is_nonterminal()) graph[p.lhs].push_back(s.name);

    std::map<std::string, int> index, low, comp;
    std::vector<std::string> stack;
    std::set<std::string> on_stack;
    int counter = 0, ncomp = 0;
    std::function<void(const std::string&)> visit = [&](const std::string& v) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on_stack.insert(v);
        for (const auto& w : graph[v]) {
            if (!index.count(w)) {
                visit(w);
                low[v] = std::min(low[v], low[w]);
            } else if (on_stack.count(w)) {
                low[v] = std::min(low[v], index[w]);
            }
        }
        if (low[v] == index[v]) {
            for (;;) {
                auto w = stack.back();
                stack.pop_back();
                on_stack.erase(w);
                comp[w] = ncomp;
                if (w == v) break;
            }
            ++ncomp;
        }
    };
    for (const auto& nt : spec.nonterminals)
        if (!index.count(nt)) visit(nt);
    return comp;
}

class RegularCompiler {
public:
    RegularCompiler(const GrammarSpec& spec, const Tokenizer& tok, std::size_t max_states)
        : spec_(spec), tok_(tok), max_states_(max_states), terms_(TokenizedTerminals::build(spec, tok)),
          scc_(nonterminal_sccs(spec)) {
        for (const auto& p : spec.productions) {
            by_lhs_[p.lhs].push_back(&p);
            if (p.rhs.empty()) continue;
            for (std::size_t i = 0; i + 1 < p.rhs.size(); ++i)
                if (p.rhs[i].is_nonterminal() && scc_.at(p.rhs[i].name) == scc_.at(p.lhs))
                    fail("NotRegular", "recursive '" + p.rhs[i].name + "' in non-tail position of a '" + p.lhs +
                                           "' production");
        }
    }

    Dfa compile() {
        std::uint32_t final_state = new_state();
        auto entry = instantiate(scc_.at(spec_.start), final_state);
        return determinize(entry.at(spec_.start), final_state);
    }

private:
    std::uint32_t new_state() {
        if (eps_.size() >= max_states_) fail("GrammarTooLarge", "NFA exceeds " + std::to_string(max_states_) + " states");
        eps_.emplace_back();
        tok_edges_.emplace_back();
        return static_cast<std::uint32_t>(eps_.size() - 1);
    }

    std::map<std::string, std::uint32_t> instantiate(int comp, std::uint32_t exit) {
        std::map<std::string, std::uint32_t> entry;
        for (const auto& [nt, c] : scc_)
            if (c == comp) entry[nt] = new_state();
        for (const auto& [nt, state] : entry) {
            for (const Production* p : by_lhs_[nt]) {
                std::uint32_t cur = state;
                std::size_t body = p->rhs.size();
                std::uint32_t tail = exit;
                if (body > 0 && p->rhs.back().is_nonterminal() && scc_.at(p->rhs.back().name) == comp) {
                    tail = entry.at(p->rhs.back().name);
                    --body;
                }
                for (std::size_t i = 0; i < body; ++i) {
                    std::uint32_t next = new_state();
                    walk(p->rhs[i], cur, next);
                    cur = next;
                }
                eps_[cur].push_back(tail);
            }
        }
        return entry;
    }

    void walk(const Symbol& sym, std::uint32_t from, std::uint32_t to) {
        switch (sym.kind) {
        case Symbol::Kind::Terminal: {
            const auto& ids = terms_.terminals.at(sym.name);
            std::uint32_t cur = from;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                std::uint32_t next = k + 1 == ids.size() ? to : new_state();
                tok_edges_[cur].emplace_back(ids[k], next);
                cur = next;
            }
            if (ids.empty()) eps_[from].push_back(to);
            break;
        }
        case Symbol::Kind::Wildcard:
            for (TokenId t : terms_.wildcard) tok_edges_[from].emplace_back(t, to);
            break;
        case Symbol::Kind::Nonterminal: {
            auto sub = instantiate(scc_.at(sym.name), to);
            eps_[from].push_back(sub.at(sym.name));
            break;
        }
        }
    }

    std::vector<std::uint32_t> closure(std::vector<std::uint32_t> set) const {
        std::vector<std::uint32_t> stack = set;
        std::set<std::uint32_t> seen(set.begin(), set.end());
        while (!stack.empty()) {
            auto s = stack.back();
            stack.pop_back();
            for (auto t : eps_[s])
                if (seen.insert(t).second) stack.push_back(t);
        }
        return {seen.begin(), seen.end()};
    }

    Dfa determinize(std::uint32_t nfa_start, std::uint32_t final_state) {
        Dfa d(tok_.vocab().size(), tok_.vocab().eos_id());
        std::map<std::vector<std::uint32_t>, std::uint32_t> ids;
        std::deque<std::vector<std::uint32_t>> queue;
        auto intern = [&](std::vector<std::uint32_t> set) {
            auto [it, inserted] = ids.emplace(set, 0);
            if (inserted) {
                if (ids.size() > max_states_) fail("GrammarTooLarge", "DFA exceeds state limit");
                it->second = d.add_state(std::binary_search(set.begin(), set.end(), final_state));
                queue.push_back(std::move(set));
            }
            return it->second;
        };
        d.set_start(intern(closure({nfa_start})));
        while (!queue.empty()) {
            auto set = std::move(queue.front());
            queue.pop_front();
            std::uint32_t from = ids.at(set);
            std::map<TokenId, std::vector<std::uint32_t>> moves;
            for (auto s : set)
                for (const auto& [t, target] : tok_edges_[s]) moves[t].push_back(target);
            for (auto& [t, targets] : moves) d.add_edge(from, t, intern(closure(std::move(targets))));
        }
        return d;
    }

    const GrammarSpec& spec_;
    const Tokenizer& tok_;
    std::size_t max_states_;
    TokenizedTerminals terms_;
    std::map<std::string, int> scc_;
    std::map<std::string, std::vector<const Production*>> by_lhs_;
    std::vector<std::vector<std::uint32_t>> eps_;
    std::vector<std::vector<std::pair<TokenId, std::uint32_t>>> tok_edges_;
};

}  // namespace detail

struct CompileOptions {
    bool minimize = true;
    std::size_t max_states = 2'000'000;
};

/// Compiles a grammar whose recursion only ever sits in tail position (right
/// linear within each strongly connected group of nonterminals; lower groups
/// are inlined) into a trim deterministic automaton over token ids.
inline Dfa compile_regular(const GrammarSpec& spec, const Tokenizer& tok, CompileOptions opts = {}) {
    spec.validate();
    detail::RegularCompiler compiler(spec, tok, opts.max_states);
    Dfa raw = compiler.compile();
    return opts.minimize ? minimize(raw) : trim(raw);
}

}  // namespace sgcd
