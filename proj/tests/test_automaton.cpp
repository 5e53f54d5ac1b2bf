#include <gtest/gtest.h>

#include <queue>
#include <random>

#include "sgcd/automaton.hpp"
#include "sgcd/catalog.hpp"
#include "support/oracles.hpp"

using namespace sgcd;

namespace {

std::shared_ptr<WhitespaceTokenizer> make_tok(std::vector<std::string> words) {
    words.push_back("</s>");
    return std::make_shared<WhitespaceTokenizer>(share(Vocabulary::from_tokens(words)));
}

std::vector<TokenId> ids(const Tokenizer& tok, const std::string& s) { return tok.tokenize(s); }

std::string kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return "";
}

/// Every state reachable from start can reach an accepting state.
bool is_trim(const Dfa& d) {
    const auto n = d.num_states();
    std::vector<std::vector<std::uint32_t>> rev(n);
    std::vector<bool> reach(n, false), co(n, false);
    std::queue<std::uint32_t> q;
    q.push(d.start_index());
    reach[d.start_index()] = true;
    while (!q.empty()) {
        auto s = q.front();
        q.pop();
        for (const auto& [t, to] : d.edges(s)) {
            rev[to].push_back(s);
            if (!reach[to]) {
                reach[to] = true;
                q.push(to);
            }
        }
    }
    for (std::uint32_t s = 0; s < n; ++s)
        if (d.accepting(s)) {
            co[s] = true;
            q.push(s);
        }
    while (!q.empty()) {
        auto s = q.front();
        q.pop();
        for (auto p : rev[s])
            if (!co[p]) {
                co[p] = true;
                q.push(p);
            }
    }
    for (std::uint32_t s = 0; s < n; ++s)
        if (reach[s] && !co[s]) return false;
    return true;
}

}  // namespace

TEST(CompileRegular, RightRecursiveExample) {
    auto tok = make_tok({"a", "b"});
    auto d = compile_regular(parse_grammar("S ::= \"a\" S | \"b\""), *tok);
    EXPECT_TRUE(d.accepts(ids(*tok, "a a b")));
    EXPECT_TRUE(d.accepts(ids(*tok, "b")));
    EXPECT_FALSE(d.accepts(ids(*tok, "b a")));
    EXPECT_FALSE(d.accepts(ids(*tok, "a")));
    // enumeration up to length 4: a^k b
    auto lang = oracle::automaton_language(d, 4);
    EXPECT_EQ(lang.size(), 4u);
    EXPECT_EQ(lang, oracle::grammar_language(parse_grammar("S ::= \"a\" S | \"b\""), *tok, 4));
}

TEST(CompileRegular, EpsilonOnly) {
    auto tok = make_tok({"a"});
    auto d = compile_regular(parse_grammar("S ::= \"\""), *tok);
    EXPECT_TRUE(d.accepting(d.start()));
    EXPECT_EQ(d.allowed_tokens(d.start()), std::vector<TokenId>{tok->vocab().eos_id()});
    EXPECT_EQ(d.step(d.start(), tok->vocab().eos_id()), kFinished);
}

TEST(CompileRegular, MultiTokenTerminalsSharePrefixes) {
    auto tok = make_tok({"New", "York", "Zealand", "in"});
    auto g = parse_grammar("S ::= X \"in\" X\nX ::= \"New York\" | \"New Zealand\"");
    auto d = compile_regular(g, *tok);
    EXPECT_TRUE(d.accepts(ids(*tok, "New York in New Zealand")));
    EXPECT_FALSE(d.accepts(ids(*tok, "New in New York")));
    // deterministic: one "New" edge from start
    EXPECT_EQ(d.allowed_tokens(d.start()), ids(*tok, "New"));
    EXPECT_EQ(oracle::automaton_language(d, 6), oracle::grammar_language(g, *tok, 6));
}

TEST(CompileRegular, IeSkeletonFromCatalogs) {
    Catalog ents(CatalogKind::Entity), rels(CatalogKind::Relation);
    ents.add("E1", "e1");
    ents.add("E2", "e2");
    rels.add("R1", "r1");
    auto tok = make_tok({"[s]", "[r]", "[o]", "[e]", "e1", "e2", "r1"});
    auto d = compile_regular(ie_grammar_spec(ents, rels), *tok);
    EXPECT_TRUE(d.accepts(ids(*tok, "[s] e1 [r] r1 [o] e2 [e]")));
    EXPECT_TRUE(d.accepts({}));
    EXPECT_FALSE(d.accepts(ids(*tok, "[s] e1 [r] r1 [o] e2")));
    EXPECT_TRUE(is_trim(d));
}

TEST(CompileRegular, Errors) {
    auto tok = make_tok({"a", "b"});
    EXPECT_EQ(kind_of([&] { compile_regular(parse_grammar("S ::= S \"a\" | \"b\""), *tok); }), "NotRegular");
    EXPECT_EQ(kind_of([&] { compile_regular(parse_grammar("S ::= \"a\" S \"b\" | \"\""), *tok); }), "NotRegular");
    EXPECT_EQ(kind_of([&] { compile_regular(parse_grammar("S ::= \"c\""), *tok); }), "UnknownToken");
    EXPECT_EQ(kind_of([&] { compile_regular(parse_grammar("S ::= \"a\" S"), *tok); }), "EmptyLanguage");
    CompileOptions small;
    small.max_states = 2;
    EXPECT_EQ(kind_of([&] { compile_regular(parse_grammar("S ::= \"a\" \"b\" \"a\" \"b\""), *tok, small); }),
              "GrammarTooLarge");
}

TEST(CompileRegular, LowerComponentsAreInlinedInAnyPosition) {
    auto tok = make_tok({"a", "b", "c"});
    // T is not recursive with S, so it may appear before the tail
    auto g = parse_grammar("S ::= T T S | \"c\"\nT ::= \"a\" | \"b\" T");
    auto d = compile_regular(g, *tok);
    EXPECT_EQ(oracle::automaton_language(d, 6), oracle::grammar_language(g, *tok, 6));
}

TEST(CompileRegular, WildcardExcludesReservedTokens) {
    auto tok = make_tok({"x", "y", "z"});
    auto g = parse_grammar("S ::= \"x\" . \n%reserved \"x\" \"z\"");
    auto d = compile_regular(g, *tok);
    auto after_x = d.advance(d.start(), 0);
    EXPECT_EQ(d.allowed_tokens(after_x), std::vector<TokenId>{1});
}

TEST(CompileRegular, RandomGrammarsMatchExpansionOracle) {
    std::mt19937_64 rng(7);
    auto tok = make_tok({"a", "b", "c", "d"});
    const std::vector<std::string> alphabet{"a", "b", "c", "d", "a b", "c a d"};
    int compiled = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto g = trial % 2 ? oracle::random_regular_grammar(rng, alphabet) : oracle::random_finite_grammar(rng, alphabet);
        Dfa d(0, 0);
        try {
            d = compile_regular(g, *tok);
        } catch (const Error& e) {
            ASSERT_EQ(e.kind(), "EmptyLanguage");
            EXPECT_TRUE(oracle::grammar_language(g, *tok, 12).empty());
            continue;
        }
        ++compiled;
        EXPECT_EQ(oracle::automaton_language(d, 6), oracle::grammar_language(g, *tok, 6)) << "trial " << trial;
        EXPECT_TRUE(is_trim(d));
        // minimal: minimizing again changes nothing
        EXPECT_EQ(minimize(d).num_states(), d.num_states());
        CompileOptions raw;
        raw.minimize = false;
        auto t = compile_regular(g, *tok, raw);
        EXPECT_GE(t.num_states(), d.num_states());
        EXPECT_EQ(oracle::automaton_language(t, 6), oracle::automaton_language(d, 6));
    }
    EXPECT_GT(compiled, 30);
}

TEST(Dfa, MaskIsSoundAndComplete) {
    auto tok = make_tok({"a", "b", "c"});
    auto d = compile_regular(parse_grammar("S ::= \"a\" S | \"b\" \"c\" | \"c\" T\nT ::= \"a\" | \"\""), *tok);
    for (std::uint32_t s = 0; s < d.num_states(); ++s) {
        auto allowed = d.allowed_tokens(s);
        std::vector<TokenId> stepping;
        for (TokenId t = 0; t < static_cast<TokenId>(d.vocab_size()); ++t)
            if (d.step(s, t)) stepping.push_back(t);
        EXPECT_EQ(allowed, stepping);
        bool has_eos = std::find(allowed.begin(), allowed.end(), d.eos_id()) != allowed.end();
        EXPECT_EQ(has_eos, d.accepting(s));
    }
}

TEST(Dfa, BuildErrorsAndAdvance) {
    Dfa d(3, 2);
    auto s0 = d.add_state();
    auto s1 = d.add_state(true);
    d.set_start(s0);
    d.add_edge(s0, 0, s1);
    EXPECT_EQ(kind_of([&] { d.add_edge(s0, 0, s0); }), "NonDeterministic");
    EXPECT_EQ(kind_of([&] { d.add_edge(s0, 2, s1); }), "BadEdge");
    EXPECT_EQ(kind_of([&] { d.advance(d.start(), 1); }), "TokenRejected");
    EXPECT_EQ(d.advance(s1, 2), kFinished);
    EXPECT_TRUE(d.allowed_tokens(kFinished).empty());
}

TEST(Trim, RemovesDeadBranchAndKeepsLanguage) {
    Dfa d(3, 2);
    auto s0 = d.add_state();
    auto s1 = d.add_state(true);
    auto dead = d.add_state();
    auto unreachable = d.add_state(true);
    d.set_start(s0);
    d.add_edge(s0, 0, s1);
    d.add_edge(s0, 1, dead);
    d.add_edge(dead, 1, dead);
    d.add_edge(unreachable, 0, s1);
    EXPECT_FALSE(is_trim(d));
    auto t = trim(d);
    EXPECT_EQ(t.num_states(), 2u);
    EXPECT_TRUE(is_trim(t));
    EXPECT_EQ(oracle::automaton_language(t, 5), oracle::Lang{{0}});
    EXPECT_EQ(trim(t).num_states(), t.num_states());
}

TEST(Trim, UnreachableAcceptIsEmptyLanguage) {
    Dfa d(2, 1);
    auto s0 = d.add_state();
    d.add_state(true);
    d.set_start(s0);
    EXPECT_EQ(kind_of([&] { trim(d); }), "EmptyLanguage");
}

TEST(Dfa, JsonRoundTrip) {
    auto tok = make_tok({"a", "b"});
    auto d = compile_regular(parse_grammar("S ::= \"a\" S | \"b\""), *tok);
    auto e = Dfa::from_json(d.to_json());
    EXPECT_EQ(e.num_states(), d.num_states());
    EXPECT_EQ(e.num_transitions(), d.num_transitions());
    EXPECT_EQ(oracle::automaton_language(e, 5), oracle::automaton_language(d, 5));
}
