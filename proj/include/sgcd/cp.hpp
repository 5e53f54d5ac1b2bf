#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sgcd/automaton.hpp"
#include "sgcd/catalog.hpp"
#include "sgcd/error.hpp"
#include "sgcd/grammar.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

/// Penn Treebank style label inventories. Function tags are stored with their
/// leading dash ("-SBJ").
struct TagInventory {
    std::vector<std::string> clause;
    std::vector<std::string> phrase;
    std::vector<std::string> word;
    std::vector<std::string> function;

    bool is_clause(std::string_view t) const { return has(clause, t); }
    bool is_phrase(std::string_view t) const { return has(phrase, t); }
    bool is_word(std::string_view t) const { return has(word, t); }
    bool is_function(std::string_view t) const { return has(function, t); }
    bool is_tag(std::string_view t) const { return is_clause(t) || is_phrase(t) || is_word(t); }

    /// Clause, phrase and word tags in that order.
    std::vector<std::string> all() const {
        std::vector<std::string> out = clause;
        out.insert(out.end(), phrase.begin(), phrase.end());
        out.insert(out.end(), word.begin(), word.end());
        return out;
    }

    /// Sections `[CLAUSE]`, `[PHRASE]`, `[WORD]` and optionally `[FUNCTION]`,
    /// one tag per line. No comment syntax: "#" is a POS tag.
    static TagInventory parse(std::istream& in) {
        TagInventory t;
        std::vector<std::string>* section = nullptr;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto words = split_whitespace(line);
            if (words.empty()) continue;
            if (words.size() != 1) fail("BadTagFile", "line " + std::to_string(lineno));
            const auto& w = words[0];
            if (w == "[CLAUSE]") section = &t.clause;
            else if (w == "[PHRASE]") section = &t.phrase;
            else if (w == "[WORD]") section = &t.word;
            else if (w == "[FUNCTION]") section = &t.function;
            else if (!section) fail("BadTagFile", "line " + std::to_string(lineno) + ": tag outside a section");
            else section->push_back(section == &t.function && w[0] != '-' ? "-" + w : w);
        }
        return t;
    }

    static TagInventory load(const std::string& path) {
        std::ifstream in(path);
        if (!in) fail("IoError", "cannot open tag inventory " + path);
        return parse(in);
    }

private:
    static bool has(const std::vector<std::string>& v, std::string_view t) {
        return std::find(v.begin(), v.end(), t) != v.end();
    }
};

struct BracketGlyphs {
    char open = '[';
    char close = ']';
    std::string open_str() const { return std::string(1, open); }
    std::string close_str() const { return std::string(1, close); }
};

namespace detail {

inline bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

/// "NP-SBJ-12" -> NP, -SBJ, -, 1, 2. Labels that are inventory tags as a whole
/// ("-LRB-") stay one piece.
inline void split_label(std::string_view label, const TagInventory& tags, std::vector<std::string>& out) {
    if (tags.is_tag(label)) {
        out.emplace_back(label);
        return;
    }
    auto dash = label.find('-', 1);
    if (dash == std::string_view::npos) {
        out.emplace_back(label);
        return;
    }
    out.emplace_back(label.substr(0, dash));
    while (dash != std::string_view::npos) {
        auto next = label.find('-', dash + 1);
        auto part = label.substr(dash + 1, next == std::string_view::npos ? std::string_view::npos : next - dash - 1);
        if (all_digits(part)) {
            out.emplace_back("-");
            for (char c : part) out.emplace_back(1, c);
        } else {
            out.push_back("-" + std::string(part));
        }
        dash = next;
    }
}

}  // namespace detail

/// Cuts bracketed trees into bracket glyphs, labels (split into tag, function
/// tags and index digits) and words.
inline std::vector<std::string> split_bracketed(std::string_view text, const TagInventory& tags,
                                                const BracketGlyphs& glyphs = {}) {
    std::vector<std::string> out;
    bool label_next = false;
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == glyphs.open || c == glyphs.close) {
            out.emplace_back(1, c);
            label_next = c == glyphs.open;
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != glyphs.open &&
               text[j] != glyphs.close)
            ++j;
        auto chunk = text.substr(i, j - i);
        if (label_next) detail::split_label(chunk, tags, out);
        else out.emplace_back(chunk);
        label_next = false;
        i = j;
    }
    return out;
}

/// Canonical rendering of bracketed pieces: "[" hugs the label, "]" hugs what
/// precedes it, label parts are glued back ("NP-SBJ-1"), everything else is
/// separated by one space.
inline std::string join_bracketed(std::span<const std::string> pieces, const TagInventory& tags,
                                  const BracketGlyphs& glyphs = {}) {
    std::string out;
    bool after_open = false, label_mode = false, in_index = false;
    for (std::size_t k = 0; k < pieces.size(); ++k) {
        const auto& p = pieces[k];
        if (p.size() == 1 && p[0] == glyphs.open) {
            if (!out.empty() && out.back() != glyphs.open) out += ' ';
            out += p;
            after_open = true;
            label_mode = in_index = false;
            continue;
        }
        if (p.size() == 1 && p[0] == glyphs.close) {
            out += p;
            after_open = label_mode = in_index = false;
            continue;
        }
        if (after_open) {
            out += p;
            after_open = false;
            label_mode = !tags.is_word(p);
            in_index = false;
            continue;
        }
        if (label_mode) {
            bool next_digit = k + 1 < pieces.size() && pieces[k + 1].size() == 1 && detail::all_digits(pieces[k + 1]);
            if (!in_index && p.size() > 1 && p[0] == '-' && tags.is_function(p)) {
                out += p;
                continue;
            }
            if (!in_index && p == "-" && next_digit) {
                out += p;
                in_index = true;
                continue;
            }
            if (in_index && p.size() == 1 && detail::all_digits(p)) {
                out += p;
                continue;
            }
        }
        label_mode = in_index = false;
        if (!out.empty() && out.back() != glyphs.open) out += ' ';
        out += p;
    }
    return out;
}

class BracketTokenizer final : public Tokenizer {
public:
    BracketTokenizer(std::shared_ptr<const Vocabulary> vocab, TagInventory tags, BracketGlyphs glyphs = {})
        : Tokenizer(std::move(vocab)), tags_(std::move(tags)), glyphs_(glyphs) {}

    std::vector<std::string> split(std::string_view text) const override { return split_bracketed(text, tags_, glyphs_); }
    std::string join(std::span<const std::string> pieces) const override { return join_bracketed(pieces, tags_, glyphs_); }

    const TagInventory& tags() const noexcept { return tags_; }
    const BracketGlyphs& glyphs() const noexcept { return glyphs_; }

private:
    TagInventory tags_;
    BracketGlyphs glyphs_;
};

/// Glyphs, every tag and function tag, index pieces ("-", digits) and every
/// word of `sentences`, EOS last.
inline Vocabulary build_cp_vocab(const TagInventory& tags, std::span<const std::string> sentences,
                                 const BracketGlyphs& glyphs = {}, bool with_unk = false) {
    VocabularyBuilder b;
    b.add(glyphs.open_str()).add(glyphs.close_str());
    b.add_all(tags.all()).add_all(tags.function).add("-");
    for (char d = '0'; d <= '9'; ++d) b.add(std::string(1, d));
    for (const auto& s : sentences) b.add_words(s);
    return b.build(with_unk);
}

/// Internal node (label + children) or leaf (POS label + one word).
struct ParseTree {
    std::string label;
    std::string word;
    std::vector<ParseTree> children;

    static ParseTree leaf(std::string tag, std::string w) { return {std::move(tag), std::move(w), {}}; }
    static ParseTree node(std::string label, std::vector<ParseTree> kids) { return {std::move(label), {}, std::move(kids)}; }

    bool is_leaf() const noexcept { return !word.empty(); }

    void collect_yield(std::vector<std::string>& out) const {
        if (is_leaf()) out.push_back(word);
        for (const auto& c : children) c.collect_yield(out);
    }
    std::vector<std::string> yield() const {
        std::vector<std::string> out;
        collect_yield(out);
        return out;
    }
    void collect_pos(std::vector<std::string>& out) const {
        if (is_leaf()) out.push_back(label);
        for (const auto& c : children) c.collect_pos(out);
    }
    std::vector<std::string> pos_tags() const {
        std::vector<std::string> out;
        collect_pos(out);
        return out;
    }

    friend bool operator==(const ParseTree&, const ParseTree&) = default;
};

/// Pre-order bracketed string: "[S [NP [PRP I]] [VP ...]]".
inline std::string linearize(const ParseTree& t, const BracketGlyphs& glyphs = {}) {
    std::string out;
    auto rec = [&](auto&& self, const ParseTree& n) -> void {
        out += glyphs.open;
        out += n.label;
        if (n.is_leaf()) {
            out += ' ';
            out += n.word;
        }
        for (const auto& c : n.children) {
            out += ' ';
            self(self, c);
        }
        out += glyphs.close;
    };
    rec(rec, t);
    return out;
}

/// "NP-SBJ-1" -> "NP"; inventory tags containing dashes are kept whole.
inline std::string base_label(std::string_view label, const TagInventory& tags) {
    if (tags.is_tag(label)) return std::string(label);
    auto dash = label.find('-', 1);
    return std::string(label.substr(0, dash));
}

struct ParseOptions {
    BracketGlyphs glyphs;
    bool reject_childless = true;
    bool check_tags = true;
};

/// Reads a linearized tree. Failures are reported as Error kinds, checked in
/// this order: Imbalanced (bracket depth scan), MalformedNode / EmptyNode /
/// TrailingInput (structure), InvalidTag (inventory and position).
inline ParseTree parse_linearized(std::string_view text, const TagInventory& tags, const ParseOptions& opts = {}) {
    const auto pieces = split_bracketed(text, tags, opts.glyphs);
    const std::string open = opts.glyphs.open_str(), close = opts.glyphs.close_str();
    {
        long depth = 0;
        for (const auto& p : pieces) {
            if (p == open) ++depth;
            else if (p == close && --depth < 0) fail("Imbalanced", "unmatched close bracket");
        }
        if (depth != 0) fail("Imbalanced", std::to_string(depth) + " unclosed bracket(s)");
    }
    if (pieces.empty()) fail("EmptyNode", "empty input");

    std::size_t i = 0;
    std::vector<std::string> bad_tags;
    auto is_glyph = [&](const std::string& p) { return p == open || p == close; };
    auto rec = [&](auto&& self) -> ParseTree {
        if (pieces[i] != open) fail("MalformedNode", "expected '" + open + "' before '" + pieces[i] + "'");
        ++i;
        if (is_glyph(pieces[i])) fail("EmptyNode", "node without a label");
        std::string label = pieces[i++];
        const bool word_label = tags.is_word(label);
        if (!word_label) {
            while (i < pieces.size() && !is_glyph(pieces[i]) && pieces[i][0] == '-' &&
                   (pieces[i].size() > 1 || (i + 1 < pieces.size() && detail::all_digits(pieces[i + 1])))) {
                const bool index = pieces[i] == "-";
                label += pieces[i++];
                if (index)
                    while (i < pieces.size() && pieces[i].size() == 1 && detail::all_digits(pieces[i])) label += pieces[i++];
                if (index) break;
            }
        }
        ParseTree node;
        node.label = label;
        if (pieces[i] == close) {
            if (opts.reject_childless) fail("EmptyNode", "'" + label + "' has no children");
            ++i;
            return node;
        }
        if (!is_glyph(pieces[i])) {
            node.word = pieces[i++];
            if (pieces[i] != close) fail("MalformedNode", "'" + label + "' mixes a word with more material");
            ++i;
            if (opts.check_tags && !tags.is_word(label)) bad_tags.push_back(label);
            return node;
        }
        while (pieces[i] == open) node.children.push_back(self(self));
        if (pieces[i] != close) fail("MalformedNode", "bare word '" + pieces[i] + "' beside bracketed children");
        ++i;
        if (opts.check_tags) {
            auto base = base_label(label, tags);
            bool ok = tags.is_clause(base) || tags.is_phrase(base);
            for (std::size_t p = base.size(); ok && p < label.size();) {
                auto next = label.find('-', p + 1);
                auto part = label.substr(p, next == std::string::npos ? std::string::npos : next - p);
                ok = part.size() > 1 && (detail::all_digits(part.substr(1)) || tags.is_function(part));
                p = next == std::string::npos ? label.size() : next;
            }
            if (!ok) bad_tags.push_back(label);
        }
        return node;
    };
    ParseTree root = rec(rec);
    if (i < pieces.size()) fail("TrailingInput", "material after the root node");
    if (!bad_tags.empty()) fail("InvalidTag", bad_tags.front());
    return root;
}

struct LiteCfgOptions {
    BracketGlyphs glyphs;
    /// The table's `node*` admits childless clause/phrase nodes; off by default.
    bool allow_childless = false;
};

/// Lite context-free grammar for bracketed trees: clause/phrase nodes take a
/// tag, optional function tags and index, then child nodes; word nodes take a
/// POS tag and one open-class token.
inline GrammarSpec build_lite_cfg(const TagInventory& tags, const LiteCfgOptions& opts = {}) {
    if (tags.clause.empty() || tags.phrase.empty() || tags.word.empty()) fail("EmptyTags");
    using S = Symbol;
    GrammarSpec g;
    g.add("root", {S::n("tree")});
    g.add("tree", {S::n("node")});
    g.add("node", {S::n("clause")});
    g.add("node", {S::n("phrase")});
    g.add("node", {S::n("word")});

    // node* (or node+) and function_tag*, right recursive
    g.add("children", {S::n("node"), S::n("children")});
    g.add("children", opts.allow_childless ? std::vector<S>{} : std::vector<S>{S::n("node")});
    const bool has_function = !tags.function.empty();
    if (has_function) {
        g.add("function_tags", {S::n("function_tag"), S::n("function_tags")});
        g.add("function_tags", {});
    }
    g.add("index_opt", {S::n("index")});
    g.add("index_opt", {});

    for (const char* kind : {"clause", "phrase"}) {
        std::vector<S> rhs{S::n("spaced_open_parenthesis"), S::n("space"), S::n(std::string(kind) + "_tag")};
        if (has_function) rhs.push_back(S::n("function_tags"));
        rhs.push_back(S::n("index_opt"));
        rhs.push_back(S::n("children"));
        rhs.push_back(S::n("spaced_close_parenthesis"));
        g.add(kind, rhs);
    }
    g.add("word", {S::n("spaced_open_parenthesis"), S::n("space"), S::n("word_tag"), S::n("space"),
                   S::n("actual_word"), S::n("spaced_close_parenthesis")});

    for (const auto& t : tags.clause) g.add("clause_tag", {S::t(t)});
    for (const auto& t : tags.phrase) g.add("phrase_tag", {S::t(t)});
    for (const auto& t : tags.word) g.add("word_tag", {S::t(t)});
    for (const auto& t : tags.function) g.add("function_tag", {S::t(t)});
    g.add("actual_word", {S::any()});

    g.add("index", {S::t("-"), S::n("nonzero_digit"), S::n("digits")});
    for (char d = '1'; d <= '9'; ++d) g.add("nonzero_digit", {S::t(std::string(1, d))});
    g.add("digits", {S::n("digit"), S::n("digits")});
    g.add("digits", {});
    for (char d = '0'; d <= '9'; ++d) g.add("digit", {S::t(std::string(1, d))});

    g.add("spaced_open_parenthesis", {S::n("space"), S::t(opts.glyphs.open_str())});
    g.add("spaced_close_parenthesis", {S::n("space"), S::t(opts.glyphs.close_str())});
    g.add("space", {S::t(" ")});

    std::set<std::string> reserved{opts.glyphs.open_str(), opts.glyphs.close_str()};
    for (const auto& t : tags.all()) reserved.insert(t);
    reserved.insert(tags.function.begin(), tags.function.end());
    g.wildcard_reserved = reserved;
    g.start = "root";
    return g;
}

struct SophisticatedOptions {
    std::uint32_t max_depth = 64;
    /// Drop B_{i,0} for i > 0: the tree may not close its root early and
    /// start a second one.
    bool single_root = false;
};

/// Input-dependent regular grammar over one sentence x_0..x_{n-1}:
///
///   S -> B_{0,0}
///   B_{i,j} -> [ alpha (B_{i,j+1} | C_{i,j+1})
///   C_{i,j} -> x_i (C_{i+1,j} | E_{i+1,j});   C_{n,j} -> E_{n,j}
///   E_{i,j+1} -> ] (E_{i,j} | B_{i,j});       E_{n,j+1} -> ] E_{n,j}
///   E_{n,0} -> eps
///
/// i counts emitted words and j open brackets. Handles pack
/// (phase, i, j, sub-position) so no state is ever stored.
class SophisticatedAutomaton final : public ConstraintAutomaton {
public:
    SophisticatedAutomaton(const std::vector<std::string>& words, const TagInventory& tag_inventory,
                           const Tokenizer& tok, SophisticatedOptions opts = {})
        : eos_(tok.vocab().eos_id()), vocab_size_(tok.vocab().size()), opts_(opts) {
        if (words.empty()) fail("EmptySentence");
        if (words.size() >= (1u << 16)) fail("SentenceTooLong");
        if (opts_.max_depth < 1 || opts_.max_depth > 255) fail("BadOption", "max_depth must be in 1..255");
        auto glyph = [&](std::string_view g) {
            auto id = tok.vocab().find(g);
            if (!id) fail("UnknownToken", std::string(g));
            return *id;
        };
        const BracketGlyphs glyphs;
        const auto* bt = dynamic_cast<const BracketTokenizer*>(&tok);
        const auto& gl = bt ? bt->glyphs() : glyphs;
        open_ = glyph(gl.open_str());
        close_ = glyph(gl.close_str());
        for (const auto& w : words) {
            auto ids = tok.tokenize_strict(w);
            if (ids.empty()) fail("UnknownToken", w);
            for (TokenId t : ids)
                if (t == open_ || t == close_) fail("BadWord", "word '" + w + "' contains a bracket");
            words_.push_back(std::move(ids));
        }
        std::set<TokenId> first_word_tokens;
        for (const auto& w : words_) first_word_tokens.insert(w.front());
        for (const auto& tag : tag_inventory.all()) {
            auto ids = tok.tokenize_strict(tag);
            for (TokenId t : ids)
                if (t == open_ || t == close_) fail("BadTag", tag);
            // the trie rejects duplicate ids, and tag strings are unique
            if (tags_.find(ids).empty()) tags_.insert(ids, tag);
        }
        if (tags_.empty()) fail("EmptyTags");
        for (std::uint32_t n = 0; n < tags_.num_nodes(); ++n) {
            if (!tags_.terminal(n)) continue;
            for (const auto& [t, _] : tags_.children(n))
                if (first_word_tokens.count(t)) fail("AmbiguousTags", "tag continuation collides with a word");
        }
    }

    std::size_t num_words() const noexcept { return words_.size(); }

    State start() const override { return pack(kOpen, 0, 0, 0); }
    TokenId eos_id() const override { return eos_; }
    std::size_t vocab_size() const override { return vocab_size_; }

    bool accepting(State s) const override {
        return s != kFinished && phase(s) == kAfterClose && wi(s) == n() && depth(s) == 0;
    }

    std::vector<TokenId> allowed_tokens(State s) const override {
        std::vector<TokenId> out;
        if (s == kFinished) return out;
        const auto i = wi(s), j = depth(s), sub = subpos(s);
        switch (phase(s)) {
        case kOpen:
            out.push_back(open_);
            break;
        case kTag:
            out = tags_.child_tokens(sub);
            if (tags_.terminal(sub)) {
                if (j < opts_.max_depth) out.push_back(open_);
                if (i < n()) out.push_back(words_[i].front());
                else out.push_back(close_);
            }
            break;
        case kWord:
            out.push_back(words_[i][sub]);
            break;
        case kAfterWord:
            if (i < n()) out.push_back(words_[i].front());
            if (can_close(i, j)) out.push_back(close_);
            break;
        case kAfterClose:
            if (can_close(i, j)) out.push_back(close_);
            if (can_reopen(i, j)) out.push_back(open_);
            if (i == n() && j == 0) out.push_back(eos_);
            break;
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    std::optional<State> step(State s, TokenId t) const override {
        if (s == kFinished) return std::nullopt;
        const auto i = wi(s), j = depth(s), sub = subpos(s);
        switch (phase(s)) {
        case kOpen:
            if (t == open_) return pack(kTag, i, j + 1, TokenTrie::kRoot);
            return std::nullopt;
        case kTag:
            if (auto c = tags_.child(sub, t)) return pack(kTag, i, j, *c);
            if (!tags_.terminal(sub)) return std::nullopt;
            if (t == open_ && j < opts_.max_depth) return pack(kTag, i, j + 1, TokenTrie::kRoot);
            if (i < n() && t == words_[i].front()) return word_step(i, j, 1);
            if (i == n() && t == close_) return after_close(i, j - 1);
            return std::nullopt;
        case kWord:
            if (t == words_[i][sub]) return word_step(i, j, sub + 1);
            return std::nullopt;
        case kAfterWord:
            if (i < n() && t == words_[i].front()) return word_step(i, j, 1);
            if (t == close_ && can_close(i, j)) return after_close(i, j - 1);
            return std::nullopt;
        case kAfterClose:
            if (t == close_ && can_close(i, j)) return after_close(i, j - 1);
            if (t == open_ && can_reopen(i, j)) return pack(kTag, i, j + 1, TokenTrie::kRoot);
            if (t == eos_ && i == n() && j == 0) return kFinished;
            return std::nullopt;
        }
        return std::nullopt;
    }

private:
    enum Phase : std::uint32_t { kOpen = 0, kTag = 1, kWord = 2, kAfterWord = 3, kAfterClose = 4 };

    static State pack(std::uint32_t ph, std::uint32_t i, std::uint32_t j, std::uint32_t sub) {
        return (State{ph} << 56) | (State{i} << 40) | (State{j} << 32) | State{sub};
    }
    static std::uint32_t phase(State s) { return static_cast<std::uint32_t>(s >> 56); }
    static std::uint32_t wi(State s) { return static_cast<std::uint32_t>((s >> 40) & 0xffff); }
    static std::uint32_t depth(State s) { return static_cast<std::uint32_t>((s >> 32) & 0xff); }
    static std::uint32_t subpos(State s) { return static_cast<std::uint32_t>(s & 0xffffffffu); }

    std::uint32_t n() const { return static_cast<std::uint32_t>(words_.size()); }

    State word_step(std::uint32_t i, std::uint32_t j, std::uint32_t sub) const {
        if (sub < words_[i].size()) return pack(kWord, i, j, sub);
        return pack(kAfterWord, i + 1, j, 0);
    }
    State after_close(std::uint32_t i, std::uint32_t j) const { return pack(kAfterClose, i, j, 0); }

    /// E_{i,j} has a close rule iff j >= 1; with single_root the root may only
    /// close once every word is out.
    bool can_close(std::uint32_t i, std::uint32_t j) const {
        if (j == 0) return false;
        if (opts_.single_root && j == 1 && i < n()) return false;
        return true;
    }
    /// B_{i,j} after a close exists only while words remain.
    bool can_reopen(std::uint32_t i, std::uint32_t j) const {
        if (i >= n() || j >= opts_.max_depth) return false;
        if (opts_.single_root && j == 0 && i > 0) return false;
        return true;
    }

    std::vector<std::vector<TokenId>> words_;
    TokenTrie tags_;
    TokenId open_ = 0, close_ = 0, eos_;
    std::size_t vocab_size_;
    SophisticatedOptions opts_;
};

}  // namespace sgcd
