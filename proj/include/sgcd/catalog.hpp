#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgcd/automaton.hpp"
#include "sgcd/error.hpp"
#include "sgcd/grammar.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

enum class CatalogKind { Entity, Relation };

struct CatalogEntry {
    std::string id;
    std::string surface;
};

/// Identifier -> surface form table for entities (KG items) or relations
/// (KG properties). Entries keep file order.
class Catalog {
public:
    explicit Catalog(CatalogKind kind = CatalogKind::Entity) : kind_(kind) {}

    void add(std::string id, std::string surface) {
        if (id.empty() || surface.empty()) fail("BadCatalogRow", "empty id or surface");
        if (by_id_.count(id)) fail("DuplicateId", id);
        by_id_.emplace(id, entries_.size());
        entries_.push_back({std::move(id), std::move(surface)});
    }

    CatalogKind kind() const noexcept { return kind_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<CatalogEntry>& entries() const noexcept { return entries_; }
    bool contains(const std::string& id) const { return by_id_.count(id) > 0; }

    const std::string& surface(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) fail("UnknownId", id);
        return entries_[it->second].surface;
    }

    /// `id<TAB>surface` per line; blank lines are skipped.
    static Catalog parse(std::istream& in, CatalogKind kind) {
        Catalog c(kind);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos || tab == 0 ||
                tab + 1 == line.size())
                fail("BadCatalogRow", "line " + std::to_string(lineno));
            c.add(line.substr(0, tab), line.substr(tab + 1));
        }
        return c;
    }

    static Catalog load(const std::string& path, CatalogKind kind) {
        std::ifstream in(path);
        if (!in) fail("IoError", "cannot open catalog " + path);
        return parse(in, kind);
    }

private:
    CatalogKind kind_;
    std::vector<CatalogEntry> entries_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Prefix tree over tokenized surface forms. Terminal nodes carry the sorted
/// ids of every entry whose surface tokenizes to that path (homonyms share one).
class TokenTrie {
public:
    static constexpr std::uint32_t kRoot = 0;

    TokenTrie() : nodes_(1) {}

    void insert(std::span<const TokenId> tokens, const std::string& id) {
        if (tokens.empty()) fail("BadCatalogRow", "surface of '" + id + "' has no tokens");
        std::uint32_t cur = kRoot;
        for (TokenId t : tokens) {
            auto next = child(cur, t);
            if (!next) {
                nodes_.emplace_back();
                next = static_cast<std::uint32_t>(nodes_.size() - 1);
                auto& ch = nodes_[cur].children;
                ch.insert(std::lower_bound(ch.begin(), ch.end(), t, [](const auto& e, TokenId v) { return e.first < v; }),
                          {t, *next});
            }
            cur = *next;
        }
        auto& ids = nodes_[cur].ids;
        auto pos = std::lower_bound(ids.begin(), ids.end(), id);
        if (pos != ids.end() && *pos == id) fail("DuplicateId", id);
        ids.insert(pos, id);
        ++entries_;
    }

    std::optional<std::uint32_t> child(std::uint32_t node, TokenId t) const {
        const auto& ch = nodes_.at(node).children;
        auto it = std::lower_bound(ch.begin(), ch.end(), t, [](const auto& e, TokenId v) { return e.first < v; });
        if (it == ch.end() || it->first != t) return std::nullopt;
        return it->second;
    }

    std::vector<TokenId> child_tokens(std::uint32_t node) const {
        std::vector<TokenId> out;
        for (const auto& [t, _] : nodes_.at(node).children) out.push_back(t);
        return out;
    }

    const std::vector<std::pair<TokenId, std::uint32_t>>& children(std::uint32_t node) const {
        return nodes_.at(node).children;
    }

    bool terminal(std::uint32_t node) const { return !nodes_.at(node).ids.empty(); }
    const std::vector<std::string>& ids(std::uint32_t node) const { return nodes_.at(node).ids; }

    /// Ids for an exact tokenized surface; empty when absent.
    std::vector<std::string> find(std::span<const TokenId> tokens) const {
        std::uint32_t cur = kRoot;
        for (TokenId t : tokens) {
            auto next = child(cur, t);
            if (!next) return {};
            cur = *next;
        }
        return nodes_[cur].ids;
    }

    std::size_t num_entries() const noexcept { return entries_; }
    std::size_t num_nodes() const noexcept { return nodes_.size(); }
    bool empty() const noexcept { return entries_ == 0; }

private:
    struct Node {
        std::vector<std::pair<TokenId, std::uint32_t>> children;
        std::vector<std::string> ids;
    };
    std::vector<Node> nodes_;
    std::size_t entries_ = 0;
};

inline TokenTrie build_trie(const Catalog& c, const Tokenizer& tok) {
    TokenTrie trie;
    for (const auto& e : c.entries()) trie.insert(tok.tokenize_strict(e.surface), e.id);
    return trie;
}

struct IeMarkers {
    std::string subject = "[s]";
    std::string relation = "[r]";
    std::string object = "[o]";
    std::string end = "[e]";

    std::array<std::string, 4> all() const { return {subject, relation, object, end}; }
};

struct Triplet {
    std::string subject;
    std::string relation;
    std::string object;
    friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

using TripletSet = std::set<Triplet>;

/// Accepts zero or more "[s] ENTITY [r] RELATION [o] ENTITY [e]" groups, where
/// each slot is a complete path of the matching trie. Lazy: a state is packed
/// into its handle as (phase, marker position, trie node), nothing is expanded
/// ahead of time, so million-entry catalogs cost only their tries.
class IeAutomaton final : public ConstraintAutomaton {
public:
    IeAutomaton(std::shared_ptr<const TokenTrie> entities, std::shared_ptr<const TokenTrie> relations,
                const IeMarkers& markers, const Tokenizer& tok)
        : entities_(std::move(entities)), relations_(std::move(relations)), eos_(tok.vocab().eos_id()),
          vocab_size_(tok.vocab().size()) {
        if (!entities_ || entities_->empty()) fail("EmptyCatalog", "entity catalog");
        if (!relations_ || relations_->empty()) fail("EmptyCatalog", "relation catalog");
        auto names = markers.all();
        std::set<TokenId> marker_tokens;
        for (std::size_t m = 0; m < 4; ++m) {
            markers_[m] = tok.tokenize_strict(names[m]);
            if (markers_[m].empty()) fail("BadMarker", "marker '" + names[m] + "' has no tokens");
            if (markers_[m].size() >= (1u << 12)) fail("BadMarker", "marker too long");
            marker_tokens.insert(markers_[m].begin(), markers_[m].end());
        }
        for (const auto* trie : {entities_.get(), relations_.get()})
            for (std::uint32_t n = 0; n < trie->num_nodes(); ++n)
                for (const auto& [t, _] : trie->children(n))
                    if (marker_tokens.count(t)) fail("MarkerInSurface", tok.vocab().token(t));
    }

    State start() const override { return pack(kBoundary, 0, 0); }
    bool accepting(State s) const override { return s != kFinished && phase(s) == kBoundary; }
    TokenId eos_id() const override { return eos_; }
    std::size_t vocab_size() const override { return vocab_size_; }

    std::vector<TokenId> allowed_tokens(State s) const override {
        std::vector<TokenId> out;
        if (s == kFinished) return out;
        const auto ph = phase(s);
        if (ph == kBoundary) {
            out = {markers_[0][0], eos_};
        } else if (ph <= kMarkerLast) {
            out = {markers_[ph - kMarkerFirst][pos(s)]};
        } else {
            const auto slot = ph - kTrieFirst;
            const auto& t = trie(slot);
            out = t.child_tokens(node(s));
            if (t.terminal(node(s))) out.push_back(markers_[slot + 1][0]);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::optional<State> step(State s, TokenId t) const override {
        if (s == kFinished) return std::nullopt;
        const auto ph = phase(s);
        if (ph == kBoundary) {
            if (t == eos_) return kFinished;
            if (t == markers_[0][0]) return after_marker(0, 1);
            return std::nullopt;
        }
        if (ph <= kMarkerLast) {
            const auto m = ph - kMarkerFirst;
            if (t == markers_[m][pos(s)]) return after_marker(m, pos(s) + 1);
            return std::nullopt;
        }
        const auto slot = ph - kTrieFirst;
        const auto& tr = trie(slot);
        if (auto c = tr.child(node(s), t)) return pack(ph, 0, *c);
        if (tr.terminal(node(s)) && t == markers_[slot + 1][0]) return after_marker(slot + 1, 1);
        return std::nullopt;
    }

    /// Trie nodes completed for (subject, relation, object) of each group, in
    /// order of appearance; nullopt unless `tokens` is accepted.
    std::optional<std::vector<std::array<std::uint32_t, 3>>> parse(std::span<const TokenId> tokens) const {
        std::vector<std::array<std::uint32_t, 3>> groups;
        std::array<std::uint32_t, 3> cur{};
        State s = start();
        for (TokenId t : tokens) {
            if (t == eos_) break;
            auto next = step(s, t);
            if (!next) return std::nullopt;
            const auto ph = phase(s);
            if (ph >= kTrieFirst && phase(*next) != ph) cur[ph - kTrieFirst] = node(s);
            if (phase(*next) == kBoundary) groups.push_back(cur);
            s = *next;
        }
        if (!accepting(s)) return std::nullopt;
        return groups;
    }

    const TokenTrie& entities() const noexcept { return *entities_; }
    const TokenTrie& relations() const noexcept { return *relations_; }
    const TokenTrie& trie(std::uint32_t slot) const { return slot == 1 ? *relations_ : *entities_; }

private:
    static constexpr std::uint32_t kBoundary = 0;
    static constexpr std::uint32_t kMarkerFirst = 1;  // 1..4: inside marker m = phase - 1
    static constexpr std::uint32_t kMarkerLast = 4;
    static constexpr std::uint32_t kTrieFirst = 5;  // 5..7: inside slot k = phase - 5

    static State pack(std::uint32_t ph, std::uint32_t p, std::uint64_t n) {
        return (State{ph} << 60) | (State{p} << 48) | n;
    }
    static std::uint32_t phase(State s) { return static_cast<std::uint32_t>(s >> 60); }
    static std::uint32_t pos(State s) { return static_cast<std::uint32_t>((s >> 48) & 0xfff); }
    static std::uint32_t node(State s) { return static_cast<std::uint32_t>(s & 0xffffffffffffULL); }

    State after_marker(std::uint32_t m, std::uint32_t p) const {
        if (p < markers_[m].size()) return pack(kMarkerFirst + m, p, 0);
        if (m == 3) return pack(kBoundary, 0, 0);
        return pack(kTrieFirst + m, 0, TokenTrie::kRoot);
    }

    std::shared_ptr<const TokenTrie> entities_;
    std::shared_ptr<const TokenTrie> relations_;
    std::array<std::vector<TokenId>, 4> markers_;
    TokenId eos_;
    std::size_t vocab_size_;
};

inline IeAutomaton build_ie_automaton(const TokenTrie& entities, const TokenTrie& relations, const IeMarkers& markers,
                                      const Tokenizer& tok) {
    return IeAutomaton(std::make_shared<const TokenTrie>(entities), std::make_shared<const TokenTrie>(relations),
                       markers, tok);
}

/// Catalog ids expressed by an accepted triplet string. Homonymous surfaces
/// resolve to their smallest id unless `all_homonyms` asks for every
/// combination.
inline TripletSet extract_triplets(std::span<const TokenId> tokens, const IeAutomaton& automaton,
                                   bool all_homonyms = false) {
    auto groups = automaton.parse(tokens);
    if (!groups) fail("InvalidTripletString");
    TripletSet out;
    for (const auto& g : *groups) {
        const auto& subj = automaton.entities().ids(g[0]);
        const auto& rel = automaton.relations().ids(g[1]);
        const auto& obj = automaton.entities().ids(g[2]);
        if (!all_homonyms) {
            out.insert({subj.front(), rel.front(), obj.front()});
            continue;
        }
        for (const auto& s : subj)
            for (const auto& r : rel)
                for (const auto& o : obj) out.insert({s, r, o});
    }
    return out;
}

/// Surface rendering of a triplet set, groups in set order.
inline std::string render_triplets(const TripletSet& triplets, const Catalog& entities, const Catalog& relations,
                                   const IeMarkers& markers = {}) {
    std::string out;
    for (const auto& t : triplets) {
        if (!out.empty()) out += ' ';
        out += markers.subject + ' ' + entities.surface(t.subject) + ' ' + markers.relation + ' ' +
               relations.surface(t.relation) + ' ' + markers.object + ' ' + entities.surface(t.object) + ' ' +
               markers.end;
    }
    return out;
}

/// The closed-IE grammar as productions: S -> T S | eps, T -> A B C [e],
/// A -> [s] E, B -> [r] R, C -> [o] E, with E and R listing catalog surfaces.
inline GrammarSpec ie_grammar_spec(const Catalog& entities, const Catalog& relations, const IeMarkers& markers = {}) {
    if (entities.empty()) fail("EmptyCatalog", "entity catalog");
    if (relations.empty()) fail("EmptyCatalog", "relation catalog");
    GrammarSpec g;
    using S = Symbol;
    g.add("S", {S::n("T"), S::n("S")});
    g.add("S", {});
    g.add("T", {S::n("A"), S::n("B"), S::n("C"), S::t(markers.end)});
    g.add("A", {S::t(markers.subject), S::n("E")});
    g.add("B", {S::t(markers.relation), S::n("R")});
    g.add("C", {S::t(markers.object), S::n("E")});
    std::set<std::string> seen;
    for (const auto& e : entities.entries())
        if (seen.insert(e.surface).second) g.add("E", {S::t(e.surface)});
    seen.clear();
    for (const auto& r : relations.entries())
        if (seen.insert(r.surface).second) g.add("R", {S::t(r.surface)});
    g.start = "S";
    return g;
}

/// Best-effort reading of free text in the triplet format, for scoring
/// unconstrained outputs. Surfaces missing from a catalog keep a "?"-prefixed
/// pseudo id so they count as predictions that can never match gold.
inline TripletSet parse_unconstrained_triplets(std::string_view text, const Catalog& entities,
                                               const Catalog& relations, const IeMarkers& markers = {}) {
    auto index = [](const Catalog& c) {
        std::unordered_map<std::string, std::string> m;
        for (const auto& e : c.entries()) {
            auto [it, inserted] = m.emplace(e.surface, e.id);
            if (!inserted && e.id < it->second) it->second = e.id;
        }
        return m;
    };
    const auto ent = index(entities);
    const auto rel = index(relations);
    auto ground = [](const std::unordered_map<std::string, std::string>& m, const std::string& surface) {
        auto it = m.find(surface);
        return it == m.end() ? "?" + surface : it->second;
    };

    TripletSet out;
    auto words = split_whitespace(text);
    enum Slot { None, Subj, Rel, Obj } slot = None;
    std::array<std::string, 3> parts;
    auto flush = [&] {
        if (slot == Obj && !parts[0].empty() && !parts[1].empty() && !parts[2].empty())
            out.insert({ground(ent, parts[0]), ground(rel, parts[1]), ground(ent, parts[2])});
        slot = None;
        parts = {};
    };
    for (const auto& w : words) {
        if (w == markers.subject) {
            flush();
            slot = Subj;
        } else if (w == markers.relation && slot == Subj) {
            slot = Rel;
        } else if (w == markers.object && slot == Rel) {
            slot = Obj;
        } else if (w == markers.end) {
            flush();
        } else if (slot != None) {
            auto& p = parts[slot - 1];
            if (!p.empty()) p += ' ';
            p += w;
        }
    }
    flush();
    return out;
}

}  // namespace sgcd
