#include <gtest/gtest.h>

#include "sgcd/grammar.hpp"

using namespace sgcd;

namespace {

std::string parse_error(const std::string& text) {
    try {
        parse_grammar(text);
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

std::size_t count_lhs(const GrammarSpec& g, const std::string& lhs) {
    std::size_t n = 0;
    for (const auto& p : g.productions) n += p.lhs == lhs;
    return n;
}

}  // namespace

TEST(GrammarParse, AlternativesTerminalsAndStart) {
    auto g = parse_grammar("# comment\nS ::= \"a\" T | \"b\" ;\nT ::= \"Mona Lisa\" | \"\"\n");
    EXPECT_EQ(g.start, "S");
    EXPECT_EQ(g.nonterminals, (std::set<std::string>{"S", "T"}));
    EXPECT_EQ(g.terminals, (std::set<std::string>{"a", "b", "Mona Lisa"}));
    ASSERT_EQ(count_lhs(g, "T"), 2u);
    // "" is the empty string
    EXPECT_TRUE(g.productions.back().rhs.empty());
}

TEST(GrammarParse, EscapesWildcardAndDirectives) {
    auto g = parse_grammar("%start B\nA ::= \"x\"\nB ::= \"say \\\"hi\\\"\" . A\n%reserved \"x\"\n");
    EXPECT_EQ(g.start, "B");
    EXPECT_TRUE(g.terminals.count("say \"hi\""));
    EXPECT_TRUE(g.uses_wildcard());
    ASSERT_TRUE(g.wildcard_reserved);
    EXPECT_EQ(*g.wildcard_reserved, std::set<std::string>{"x"});
}

TEST(GrammarParse, ReservedDefaultsToAllTerminals) {
    auto g = parse_grammar("S ::= \"a\" . \"b\"");
    EXPECT_EQ(g.reserved_terminals(), (std::set<std::string>{"a", "b"}));
}

TEST(GrammarParse, SuffixesDesugarToFreshNonterminals) {
    auto g = parse_grammar("S ::= \"a\"* (\"b\" | \"c\")+ \"d\"?");
    EXPECT_EQ(g.start, "S");
    ASSERT_EQ(count_lhs(g, "S"), 1u);
    const auto& rhs = g.productions.back().rhs;
    ASSERT_EQ(rhs.size(), 3u);
    for (const auto& s : rhs) EXPECT_TRUE(s.is_nonterminal());
    const auto& star = rhs[0].name;
    ASSERT_EQ(count_lhs(g, star), 2u);
    // X* -> a X | eps
    bool has_eps = false, has_rec = false;
    for (const auto& p : g.productions) {
        if (p.lhs != star) continue;
        has_eps |= p.rhs.empty();
        has_rec |= p.rhs.size() == 2 && p.rhs[1].name == star;
    }
    EXPECT_TRUE(has_eps && has_rec);
}

TEST(GrammarParse, ErrorsCarryLineNumbers) {
    EXPECT_NE(parse_error("S ::= \"a\"\nT = \"b\"").find("line 2"), std::string::npos);
    EXPECT_NE(parse_error("S ::= \"a").find("unterminated"), std::string::npos);
    EXPECT_NE(parse_error("S ::= ( \"a\"").find("expected ')'"), std::string::npos);
    EXPECT_NE(parse_error("S ::= \"a\" $").find("line 1"), std::string::npos);
    EXPECT_NE(parse_error("# nothing\n").find("no productions"), std::string::npos);
    EXPECT_NE(parse_error("%bogus X\nS ::= \"a\"").find("unknown directive"), std::string::npos);
}

TEST(GrammarParse, UndefinedSymbol) {
    try {
        parse_grammar("S ::= T");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), "UndefinedSymbol");
    }
}

TEST(GrammarSpec, AddSetsStartOnce) {
    GrammarSpec g;
    g.add("A", {Symbol::t("x")}).add("B", {Symbol::n("A")});
    EXPECT_EQ(g.start, "A");
    EXPECT_NO_THROW(g.validate());
}
