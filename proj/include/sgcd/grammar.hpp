#pragma once

#include <cctype>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sgcd/error.hpp"

namespace sgcd {

struct Symbol {
    /// Wildcard matches any single token outside the grammar's reserved set;
    /// it stands in for open-class lexical material.
    enum class Kind { Terminal, Nonterminal, Wildcard };

    Kind kind = Kind::Terminal;
    std::string name;

    static Symbol t(std::string s) { return {Kind::Terminal, std::move(s)}; }
    static Symbol n(std::string s) { return {Kind::Nonterminal, std::move(s)}; }
    static Symbol any() { return {Kind::Wildcard, "."}; }

    bool is_terminal() const noexcept { return kind == Kind::Terminal; }
    bool is_nonterminal() const noexcept { return kind == Kind::Nonterminal; }
    bool is_wildcard() const noexcept { return kind == Kind::Wildcard; }

    friend bool operator==(const Symbol&, const Symbol&) = default;
};

struct Production {
    std::string lhs;
    std::vector<Symbol> rhs;
};

/// Declarative grammar over terminal strings. Terminals are tokenized when the
/// grammar is compiled against a vocabulary, so "Mona Lisa" is one terminal
/// spanning two tokens and " " is an empty terminal under whitespace tokenizers.
struct GrammarSpec {
    std::set<std::string> nonterminals;
    std::set<std::string> terminals;
    std::vector<Production> productions;
    std::string start;
    /// Terminal strings whose tokens the wildcard never matches. Unset means
    /// every terminal of the grammar is reserved.
    std::optional<std::set<std::string>> wildcard_reserved;

    GrammarSpec& add(std::string lhs, std::vector<Symbol> rhs) {
        if (start.empty()) start = lhs;
        nonterminals.insert(lhs);
        for (const auto& s : rhs)
            if (s.is_terminal()) terminals.insert(s.name);
        productions.push_back({std::move(lhs), std::move(rhs)});
        return *this;
    }

    bool uses_wildcard() const {
        for (const auto& p : productions)
            for (const auto& s : p.rhs)
                if (s.is_wildcard()) return true;
        return false;
    }

    std::set<std::string> reserved_terminals() const { return wildcard_reserved ? *wildcard_reserved : terminals; }

    void validate() const {
        if (start.empty() || !nonterminals.count(start)) fail("UndefinedSymbol", "start symbol '" + start + "'");
        for (const auto& p : productions) {
            if (!nonterminals.count(p.lhs)) fail("UndefinedSymbol", p.lhs);
            for (const auto& s : p.rhs) {
                if (s.is_nonterminal() && !nonterminals.count(s.name)) fail("UndefinedSymbol", s.name);
                if (s.is_terminal() && !terminals.count(s.name)) fail("UndefinedSymbol", "\"" + s.name + "\"");
            }
        }
    }
};

namespace detail {

class GrammarParser {
public:
    explicit GrammarParser(GrammarSpec& out) : out_(out) {}

    void line(std::string_view text, int lineno) {
        src_ = text;
        pos_ = 0;
        lineno_ = lineno;
        skip_ws();
        if (at_end() || peek() == '#') return;
        if (peek() == '%') return directive();

        std::string lhs = ident();
        skip_ws();
        if (src_.substr(pos_, 3) != "::=") error("expected '::='");
        pos_ += 3;
        auto alts = alternatives(lhs);
        skip_ws();
        if (!at_end() && peek() == ';') ++pos_;
        skip_ws();
        if (!at_end() && peek() != '#') error("unexpected trailing text");
        for (auto& rhs : alts) out_.add(lhs, std::move(rhs));
    }

    void finish() {
        if (start_) out_.start = *start_;
        if (reserved_) out_.wildcard_reserved = reserved_;
        if (out_.productions.empty()) fail("GrammarParse", "grammar has no productions");
        out_.validate();
    }

private:
    [[noreturn]] void error(const std::string& what) const {
        fail("GrammarParse", "line " + std::to_string(lineno_) + ": " + what);
    }

    bool at_end() const { return pos_ >= src_.size(); }
    char peek() const { return src_[pos_]; }
    void skip_ws() {
        while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
    }

    std::string ident() {
        std::size_t b = pos_;
        while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) ++pos_;
        if (b == pos_) error("expected identifier");
        return std::string(src_.substr(b, pos_ - b));
    }

    std::string quoted() {
        ++pos_;  // opening quote
        std::string s;
        while (!at_end() && peek() != '"') {
            if (peek() == '\\') {
                ++pos_;
                if (at_end()) break;
            }
            s += peek();
            ++pos_;
        }
        if (at_end()) error("unterminated string");
        ++pos_;
        return s;
    }

    void directive() {
        ++pos_;
        std::string name = ident();
        skip_ws();
        if (name == "start") {
            start_ = ident();
        } else if (name == "reserved") {
            reserved_.emplace();
            for (skip_ws(); !at_end() && peek() == '"'; skip_ws()) reserved_->insert(quoted());
        } else {
            error("unknown directive %" + name);
        }
    }

    std::vector<std::vector<Symbol>> alternatives(const std::string& owner) {
        std::vector<std::vector<Symbol>> alts(1);
        for (;;) {
            skip_ws();
            if (at_end() || peek() == ';' || peek() == ')' || peek() == '#') break;
            if (peek() == '|') {
                ++pos_;
                alts.emplace_back();
                continue;
            }
            std::optional<Symbol> sym = atom(owner);
            skip_ws();
            while (!at_end() && (peek() == '*' || peek() == '+' || peek() == '?')) {
                char op = peek();
                ++pos_;
                if (!sym) error("operator without operand");
                sym = suffix(owner, *sym, op);
                skip_ws();
            }
            if (sym) alts.back().push_back(*sym);
        }
        return alts;
    }

    /// Returns nullopt for the empty terminal "".
    std::optional<Symbol> atom(const std::string& owner) {
        char c = peek();
        if (c == '"') {
            std::string s = quoted();
            if (s.empty()) return std::nullopt;
            return Symbol::t(s);
        }
        if (c == '.') {
            ++pos_;
            return Symbol::any();
        }
        if (c == '(') {
            ++pos_;
            auto alts = alternatives(owner);
            if (at_end() || peek() != ')') error("expected ')'");
            ++pos_;
            std::string name = fresh(owner, "grp");
            for (auto& rhs : alts) out_.add(name, std::move(rhs));
            return Symbol::n(name);
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return Symbol::n(ident());
        error(std::string("unexpected character '") + c + "'");
    }

    Symbol suffix(const std::string& owner, const Symbol& sym, char op) {
        std::string name = fresh(owner, op == '*' ? "star" : op == '+' ? "plus" : "opt");
        Symbol self = Symbol::n(name);
        switch (op) {
        case '*':
            out_.add(name, {sym, self});
            out_.add(name, {});
            break;
        case '+':
            out_.add(name, {sym, self});
            out_.add(name, {sym});
            break;
        default:
            out_.add(name, {sym});
            out_.add(name, {});
        }
        return self;
    }

    std::string fresh(const std::string& owner, const char* tag) {
        return owner + "__" + tag + std::to_string(++counter_);
    }

    GrammarSpec& out_;
    std::string_view src_;
    std::size_t pos_ = 0;
    int lineno_ = 0;
    int counter_ = 0;
    std::optional<std::string> start_;
    std::optional<std::set<std::string>> reserved_;
};

}  // namespace detail

/// EBNF-like text: one `lhs ::= alt1 | alt2 ;` per line, double-quoted
/// terminals, `.` for the wildcard, `*` `?` `+` suffixes and parenthesized
/// groups (desugared into fresh nonterminals). `%start X` overrides the start
/// symbol, which otherwise is the first lhs; `%reserved "a" "b"` sets the
/// strings the wildcard must not match.
inline GrammarSpec parse_grammar(std::string_view text) {
    GrammarSpec spec;
    detail::GrammarParser parser(spec);
    // the desugaring adds helper productions before the owner's own, so the
    // start symbol is pinned to the first lhs seen in the text
    std::optional<std::string> first_lhs;
    int lineno = 0;
    std::size_t b = 0;
    while (b <= text.size()) {
        std::size_t e = text.find('\n', b);
        if (e == std::string_view::npos) e = text.size();
        auto line = text.substr(b, e - b);
        ++lineno;
        if (!first_lhs) {
            auto p = line.find("::=");
            if (p != std::string_view::npos) {
                std::string lhs(line.substr(0, p));
                while (!lhs.empty() && std::isspace(static_cast<unsigned char>(lhs.back()))) lhs.pop_back();
                while (!lhs.empty() && std::isspace(static_cast<unsigned char>(lhs.front()))) lhs.erase(0, 1);
                if (!lhs.empty() && lhs[0] != '#') first_lhs = lhs;
            }
        }
        parser.line(line, lineno);
        b = e + 1;
    }
    if (first_lhs) spec.start = *first_lhs;
    parser.finish();
    return spec;
}

inline GrammarSpec load_grammar(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("IoError", "cannot open grammar " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_grammar(ss.str());
}

}  // namespace sgcd
