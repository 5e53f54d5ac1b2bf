#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sgcd/cli.hpp"
#include "sgcd/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace sgcd;
namespace fs = std::filesystem;

namespace {

std::string kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return "";
}

std::string sample(const std::string& rel) { return std::string(SGCD_SOURCE_DIR) + "/samples/" + rel; }

/// Fresh scratch directory per test.
fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("sgcd_pipeline_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

PromptBundle two_demo_bundle() {
    PromptBundle b;
    b.instruction = "Extract facts.";
    b.demonstrations = {{"a b", "[s] a"}, {"c", "[s] c"}};
    b.refine_instruction = "Fix it.";
    b.refine_demonstrations = {{"a b", "[s] aa", "[s] a"}};
    return b;
}

}  // namespace

TEST(Prompts, SketchPromptLayout) {
    auto b = two_demo_bundle();
    EXPECT_EQ(render_sketch_prompt(b, "x y"),
              "Extract facts.\n\nInput: a b\nOutput: [s] a\n\nInput: c\nOutput: [s] c\n\nInput: x y\nOutput:");
    b.demonstrations.resize(1);
    EXPECT_EQ(render_sketch_prompt(b, "q"), "Extract facts.\n\nInput: a b\nOutput: [s] a\n\nInput: q\nOutput:");
}

TEST(Prompts, ZeroShotAndDemoOrder) {
    PromptBundle b;
    b.zero_shot = true;
    EXPECT_NO_THROW(b.validate());
    EXPECT_EQ(render_sketch_prompt(b, "q"), "Input: q\nOutput:");
    for (int i = 0; i < 4; ++i) b.demonstrations.push_back({"in" + std::to_string(i), "out" + std::to_string(i)});
    auto p = render_sketch_prompt(b, "q");
    std::size_t last = 0;
    for (int i = 0; i < 4; ++i) {
        auto at = p.find("Input: in" + std::to_string(i) + "\nOutput: out" + std::to_string(i) + "\n\n");
        ASSERT_NE(at, std::string::npos);
        EXPECT_GE(at, last);
        last = at;
    }
    EXPECT_EQ(MockSketchClient::last_input(p), "q");
}

TEST(Prompts, RefinePromptWithAndWithoutInput) {
    auto b = two_demo_bundle();
    EXPECT_EQ(render_refine_prompt(b, "x", "[s] y"),
              "Fix it.\n\nInput: a b\nDraft: [s] aa\nOutput: [s] a\n\nInput: x\nDraft: [s] y\nOutput:");
    b.include_input = false;
    EXPECT_EQ(render_refine_prompt(b, "x", "[s] y"), "Fix it.\n\nDraft: [s] aa\nOutput: [s] a\n\nDraft: [s] y\nOutput:");
}

TEST(Prompts, BundleValidation) {
    PromptBundle b;
    EXPECT_EQ(kind_of([&] { b.validate(); }), "BadBundle");
    b.demonstrations.push_back({"a", "b"});
    EXPECT_EQ(kind_of([&] { b.validate(); }), "BadBundle");
    EXPECT_EQ(kind_of([] { PromptBundle::from_json({{"demonstrations", {{{"input", "a"}}}}}); }), "BadBundle");
    auto loaded = PromptBundle::load(sample("ie/prompts.json"));
    EXPECT_EQ(loaded.demonstrations.size(), 2u);
    EXPECT_EQ(loaded.refine_demonstrations.size(), 2u);
    EXPECT_TRUE(loaded.include_input);
    EXPECT_EQ(kind_of([] { PromptBundle::load("/nonexistent/prompts.json"); }), "IoError");
}

TEST(Sketcher, MockClients) {
    auto canned = MockSketchClient::canned("[s] a b");
    auto s = canned.complete("Input: whatever\nOutput:");
    EXPECT_EQ(s.text, "[s] a b");
    EXPECT_EQ(s.provenance, "mock");
    EXPECT_EQ(s.completion_tokens, 3u);

    auto table = MockSketchClient::by_input({{"x y", "found"}});
    EXPECT_EQ(table.complete("Input: demo\nOutput: d\n\nInput: x y\nOutput:").text, "found");
    EXPECT_EQ(table.complete("Input: other\nOutput:").text, "");
}

TEST(Sketcher, RetriesRateLimitThenSucceeds) {
    std::vector<int> statuses{429, 200};
    std::size_t calls = 0;
    std::vector<double> sleeps;
    HttpTransport transport = [&](const std::string& body) {
        auto j = nlohmann::json::parse(body);
        EXPECT_EQ(j["model"], "m");
        EXPECT_EQ(j["messages"][0]["content"], "hello");
        int st = statuses[std::min(calls++, statuses.size() - 1)];
        if (st != 200) return HttpResponse{st, "{}"};
        return HttpResponse{200, R"({"choices":[{"message":{"content":"[s] a"}}],
                                     "usage":{"prompt_tokens":12,"completion_tokens":3}})"};
    };
    HttpSketchOptions o;
    o.model = "m";
    HttpSketchClient client(o, transport, nullptr, [&](double s) { sleeps.push_back(s); }, "test-endpoint");
    auto s = client.complete("hello");
    EXPECT_EQ(calls, 2u);
    EXPECT_EQ(s.text, "[s] a");
    EXPECT_EQ(s.prompt_tokens, 12u);
    EXPECT_EQ(s.completion_tokens, 3u);
    EXPECT_EQ(s.provenance, "test-endpoint");
    ASSERT_EQ(sleeps.size(), 1u);
    EXPECT_DOUBLE_EQ(sleeps[0], 0.5);
}

TEST(Sketcher, ServerErrorsExhaustAttempts) {
    std::size_t calls = 0;
    std::vector<double> sleeps;
    HttpSketchOptions o;
    o.max_attempts = 4;
    o.backoff_max_s = 1.5;
    HttpSketchClient client(
        o, [&](const std::string&) { return ++calls, HttpResponse{503, ""}; }, nullptr,
        [&](double s) { sleeps.push_back(s); });
    EXPECT_EQ(kind_of([&] { client.complete("p"); }), "HttpError");
    EXPECT_EQ(calls, 4u);
    EXPECT_EQ(sleeps, (std::vector<double>{0.5, 1.0, 1.5}));

    calls = 0;
    HttpSketchClient bad(o, [&](const std::string&) { return ++calls, HttpResponse{400, ""}; }, nullptr, [](double) {});
    EXPECT_EQ(kind_of([&] { bad.complete("p"); }), "HttpError");
    EXPECT_EQ(calls, 1u);

    HttpSketchClient timeouts(o, [](const std::string&) -> HttpResponse { fail("Timeout", "slow"); }, nullptr,
                              [](double) {});
    EXPECT_EQ(kind_of([&] { timeouts.complete("p"); }), "Timeout");
    HttpSketchClient limited(o, [](const std::string&) { return HttpResponse{429, ""}; }, nullptr, [](double) {});
    EXPECT_EQ(kind_of([&] { limited.complete("p"); }), "RateLimited");
    HttpSketchClient garbage(o, [](const std::string&) { return HttpResponse{200, "not json"}; }, nullptr, [](double) {});
    EXPECT_EQ(kind_of([&] { garbage.complete("p"); }), "BadResponse");
    o.max_attempts = 0;
    EXPECT_EQ(kind_of([&] { HttpSketchClient(o, nullptr); }), "BadConfig");
}

TEST(Sketcher, RateLimiterReservesSlots) {
    RateLimiter off;
    EXPECT_EQ(off.reserve(), 0.0);
    EXPECT_EQ(off.reserve(), 0.0);
    RateLimiter limiter(10, 1);
    EXPECT_EQ(limiter.reserve(), 0.0);
    double w1 = limiter.reserve(), w2 = limiter.reserve();
    EXPECT_GT(w1, 0.05);
    EXPECT_LE(w1, 0.1);
    EXPECT_GT(w2, w1);
}

TEST(Sketcher, HttpTransportRejectsBadEndpoints) {
    EXPECT_EQ(kind_of([] { make_http_transport("localhost:8080", "", 1); }), "BadEndpoint");
    EXPECT_EQ(kind_of([] { make_http_transport("ftp://host/x", "", 1); }), "BadEndpoint");
}

namespace {

/// Mona Lisa catalogs with a vocabulary large enough for refine prompts.
struct CopySetup {
    fixture::MonaLisa ml;
    PromptBundle bundle;
    std::shared_ptr<WhitespaceTokenizer> tok;
    std::shared_ptr<IeAutomaton> automaton;
    std::shared_ptr<CopyScorer> scorer;

    CopySetup() {
        bundle.zero_shot = true;
        std::vector<Example> rows{{"1", "Mona Lisa is in the Louvre Museum", {}}};
        auto vocab = share(build_ie_run_vocab(ml.entities, ml.relations, IeMarkers{}, bundle, rows));
        tok = std::make_shared<WhitespaceTokenizer>(vocab);
        automaton = std::make_shared<IeAutomaton>(std::make_shared<const TokenTrie>(build_trie(ml.entities, *tok)),
                                                  std::make_shared<const TokenTrie>(build_trie(ml.relations, *tok)),
                                                  IeMarkers{}, *tok);
        scorer = std::make_shared<CopyScorer>(*vocab);
    }
};

}  // namespace

TEST(CopyScorer, RowsAreNormalizedAndFollowTheDraft) {
    CopySetup s;
    auto ctx = s.tok->tokenize(render_refine_prompt(s.bundle, "Mona Lisa is here", "[s] Mona Lisa"));
    EXPECT_EQ(s.tok->detokenize(s.scorer->source(ctx)), "[s] Mona Lisa");
    std::vector<TokenId> prefix;
    for (const std::string& want : {"[s]", "Mona", "Lisa"}) {
        auto row = s.scorer->score_next(ctx, prefix);
        double mass = 0;
        for (double v : row) mass += std::exp(v);
        EXPECT_NEAR(mass, 1.0, 1e-9);
        auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
        EXPECT_EQ(s.tok->vocab().token(best), want);
        prefix.push_back(best);
    }
    auto end = s.scorer->score_next(ctx, prefix);
    EXPECT_EQ(std::max_element(end.begin(), end.end()) - end.begin(), s.tok->vocab().eos_id());
    EXPECT_EQ(kind_of([&] { CopyScorer(s.tok->vocab(), CopyWeights{0.9, 0, 0, 0, 3}); }), "BadOption");
}

TEST(Refine, ValidSketchIsAFixpoint) {
    CopySetup s;
    DecodeConfig cfg;
    cfg.beam_size = 2;
    const std::string valid = "[s] Mona Lisa [r] located in [o] Louvre Museum [e]";
    ASSERT_TRUE(s.automaton->accepts(s.tok->tokenize(valid)));
    auto z = refine(*s.scorer, *s.automaton, *s.tok, s.bundle, "Mona Lisa is in the Louvre Museum", valid, cfg);
    EXPECT_EQ(s.tok->detokenize(z), valid);
}

TEST(Refine, GroundsAShortenedSurface) {
    CopySetup s;
    DecodeConfig cfg;
    cfg.beam_size = 2;
    auto z = refine(*s.scorer, *s.automaton, *s.tok, s.bundle, "Mona Lisa is in the Louvre Museum",
                    "[s] Mona Lisa [r] located in [o] the Louvre [e]", cfg);
    EXPECT_EQ(s.tok->detokenize(z), "[s] Mona Lisa [r] located in [o] Louvre Museum [e]");
    EXPECT_TRUE(s.automaton->accepts(z));
}

TEST(Refine, EmptySketchGivesEmptyOutput) {
    CopySetup s;
    DecodeConfig cfg;
    cfg.beam_size = 2;
    auto z = refine(*s.scorer, *s.automaton, *s.tok, s.bundle, "Mona Lisa is in the Louvre Museum", "", cfg);
    EXPECT_TRUE(z.empty());
    EXPECT_TRUE(s.automaton->accepts(z));
}

TEST(Refine, DirectConstrainedIsDeterministic) {
    CopySetup s;
    DecodeConfig cfg;
    cfg.beam_size = 3;
    cfg.max_len = 20;
    auto a = direct_constrained(*s.scorer, *s.automaton, *s.tok, s.bundle, "Mona Lisa is in the Louvre Museum", cfg);
    cfg.num_threads = 4;
    auto b = direct_constrained(*s.scorer, *s.automaton, *s.tok, s.bundle, "Mona Lisa is in the Louvre Museum", cfg);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(s.automaton->accepts(a));
}

namespace {

PreparedRun prepared(const std::string& config, const fs::path& dir) {
    auto run = prepare_run(RunConfig::load(sample(config)));
    run.options.transcript_path = (dir / "transcript.jsonl").string();
    return run;
}

}  // namespace

TEST(Run, ToyIeEndToEnd) {
    auto dir = scratch("ie");
    auto run = prepared("ie/run.toml", dir);
    auto r = run_sgcd(run.task, run.dataset, *run.client, run.options);
    ASSERT_EQ(r.records.size(), 10u);
    EXPECT_EQ(r.processed, 10u);
    EXPECT_EQ(r.skipped, 0u);
    EXPECT_EQ(r.failures, 0u);
    for (const auto& rec : r.records) EXPECT_TRUE(rec.valid) << rec.id;
    EXPECT_DOUBLE_EQ(r.report["validity"]["value"].get<double>(), 1.0);
    EXPECT_GT(r.report["f1"]["value"].get<double>(), r.report["sketch_baseline"]["f1"]["value"].get<double>());
    EXPECT_EQ(read_transcript(run.options.transcript_path).size(), 10u);

    auto again = run_sgcd(run.task, run.dataset, *run.client, run.options);
    EXPECT_EQ(again.processed, 0u);
    EXPECT_EQ(again.skipped, 10u);
    EXPECT_EQ(again.report["f1"], r.report["f1"]);
    EXPECT_EQ(read_transcript(run.options.transcript_path).size(), 10u);
}

TEST(Run, ParallelSketchingMatchesSequential) {
    auto dir = scratch("par");
    auto seq = prepared("ie/run.toml", dir);
    seq.options.transcript_path.clear();
    auto a = run_sgcd(seq.task, seq.dataset, *seq.client, seq.options);
    seq.options.parallelism = 4;
    auto b = run_sgcd(seq.task, seq.dataset, *seq.client, seq.options);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].to_json(), b.records[i].to_json());
    EXPECT_EQ(a.report, b.report);
}

TEST(Run, ResumesAfterPartialTranscript) {
    auto dir = scratch("resume");
    auto run = prepared("ie/run.toml", dir);
    Dataset first;
    first.rows.assign(run.dataset.rows.begin(), run.dataset.rows.begin() + 4);
    run_sgcd(run.task, first, *run.client, run.options);
    {
        std::ofstream torn(run.options.transcript_path, std::ios::app);
        torn << R"({"id": "ie-05", "input": "Leon)";
    }
    auto rest = run_sgcd(run.task, run.dataset, *run.client, run.options);
    EXPECT_EQ(rest.skipped, 4u);
    EXPECT_EQ(rest.processed, 6u);
    EXPECT_DOUBLE_EQ(rest.report["validity"]["value"].get<double>(), 1.0);
}

TEST(Run, MalformedRowsAreReportedNotFatal) {
    auto dir = scratch("bad");
    auto run = prepared("ie/run.toml", dir);
    std::istringstream in(
        "{\"id\": \"a\", \"input\": \"The Mona Lisa hangs in the Louvre Museum .\", \"gold\": [[\"Q12418\", \"P276\", "
        "\"Q19675\"]]}\n"
        "{\"id\": \"b\", \"input\": \"broken\"\n"
        "{\"id\": \"c\", \"input\": \"Paris lies in the north of France .\", \"gold\": [[\"Q90\", \"P276\", "
        "\"Q142\"]]}\n");
    auto ds = parse_dataset(in, Task::Ie);
    ASSERT_EQ(ds.rows.size(), 2u);
    ASSERT_EQ(ds.failures.size(), 1u);
    EXPECT_EQ(ds.failures[0].line, 2u);
    auto r = run_sgcd(run.task, ds, *run.client, run.options);
    EXPECT_EQ(r.records.size(), 2u);
    EXPECT_EQ(r.failures, 1u);
    EXPECT_EQ(r.report["failures"]["count"], 1);
    EXPECT_EQ(r.report["failures"]["items"][0]["line"], 2);
}

TEST(Run, SketcherErrorsBecomeRecordErrors) {
    auto dir = scratch("err");
    auto run = prepared("ie/run.toml", dir);
    run.options.transcript_path.clear();
    MockSketchClient failing([](const std::string&) -> std::string { fail("HttpError", "500"); });
    auto r = run_sgcd(run.task, run.dataset, failing, run.options);
    EXPECT_EQ(r.failures, 10u);
    for (const auto& rec : r.records) {
        ASSERT_TRUE(rec.error.has_value());
        EXPECT_FALSE(rec.valid);
    }
}

TEST(Run, ToyCpEndToEnd) {
    auto dir = scratch("cp");
    auto run = prepared("cp/run.toml", dir);
    auto r = run_sgcd(run.task, run.dataset, *run.client, run.options);
    ASSERT_EQ(r.records.size(), 4u);
    for (const auto& rec : r.records) EXPECT_TRUE(rec.valid) << rec.id;
    EXPECT_EQ(r.report["errors"]["InvalidTag"]["count"], 0);
    EXPECT_EQ(r.report["errors"]["Imbal"]["count"], 0);
    EXPECT_DOUBLE_EQ(r.report["tag_validity"]["value"].get<double>(), 1.0);
    EXPECT_GT(r.report["sketch_baseline"]["errors"]["Imbal"]["count"].get<int>(), 0);
}

TEST(Transcript, TornLastLineIgnoredCorruptMiddleRejected) {
    auto dir = scratch("transcript");
    auto path = (dir / "t.jsonl").string();
    TranscriptRecord a{"1", "x", "s", "o", true, std::nullopt};
    TranscriptRecord b{"2", "y", "s", "", false, std::string("boom")};
    {
        std::ofstream out(path);
        out << a.to_json().dump() << '\n' << b.to_json().dump() << '\n' << a.to_json().dump() << '\n' << "{\"id\": ";
    }
    auto recs = read_transcript(path);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[1].error, std::optional<std::string>("boom"));
    {
        std::ofstream out(path);
        out << "garbage\n" << a.to_json().dump() << '\n';
    }
    EXPECT_EQ(kind_of([&] { read_transcript(path); }), "BadTranscript");
    EXPECT_TRUE(read_transcript((dir / "missing.jsonl").string()).empty());
}

TEST(Transcript, AtomicWriteReplacesContent) {
    auto dir = scratch("atomic");
    auto path = (dir / "sub" / "r.json").string();
    write_file_atomic(path, "one");
    write_file_atomic(path, "two");
    std::ifstream in(path);
    std::string s((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(s, "two");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "sub")) ++files;
    EXPECT_EQ(files, 1u);
}

TEST(Dataset, RowErrors) {
    std::istringstream in("\n{\"id\": 1, \"input\": \"a\", \"gold\": []}\n"
                          "{\"id\": \"1\", \"input\": \"b\", \"gold\": []}\n"
                          "{\"id\": \"2\", \"input\": \"c\"}\n"
                          "{\"id\": \"3\", \"input\": \"d\", \"gold\": [[\"Q1\", \"P1\"]]}\n"
                          "{\"id\": \"4\", \"input\": \"e\", \"gold\": [[\"Q1\", \"P1\", \"Q2\"]]}\n");
    auto ds = parse_dataset(in, Task::Ie);
    ASSERT_EQ(ds.rows.size(), 2u);
    EXPECT_EQ(ds.rows[0].id, "1");
    EXPECT_EQ(ds.rows[1].id, "4");
    ASSERT_EQ(ds.failures.size(), 3u);
    EXPECT_EQ(ds.failures[0].line, 3u);
    EXPECT_NE(ds.failures[0].error.find("DuplicateId"), std::string::npos);
    EXPECT_EQ(ds.failures[1].line, 4u);
    EXPECT_EQ(ds.failures[2].line, 5u);

    auto tags = TagInventory::load(std::string(SGCD_SOURCE_DIR) + "/data/ptb_tags.txt");
    std::istringstream cp("{\"id\": \"a\", \"input\": \"x\", \"gold_tree\": \"[S [NN x]]\"}\n"
                          "{\"id\": \"b\", \"input\": \"x\", \"gold_tree\": \"[S [ZZ x]]\"}\n");
    auto cds = parse_dataset(cp, Task::Cp, &tags);
    EXPECT_EQ(cds.rows.size(), 1u);
    ASSERT_EQ(cds.failures.size(), 1u);
    EXPECT_NE(cds.failures[0].error.find("InvalidTag"), std::string::npos);
    EXPECT_EQ(kind_of([] { parse_task("ner"); }), "BadConfig");
}

TEST(Cost, HandComputedValues) {
    auto r = iterative_api_cost({50, 100, 0, 0, 1});
    EXPECT_EQ(r.iterative.calls, 100u);
    EXPECT_EQ(r.iterative.input_tokens, 9950u);
    EXPECT_EQ(r.iterative.output_tokens, 100u);
    EXPECT_EQ(r.sketch.calls, 1u);
    EXPECT_EQ(r.sketch.input_tokens, 50u);
    EXPECT_EQ(r.speculative.input_tokens, r.iterative.input_tokens);

    auto small = iterative_api_cost({10, 5, 0.5, 2, 1});
    EXPECT_EQ(small.iterative.input_tokens, 60u);  // 10+11+12+13+14
    EXPECT_DOUBLE_EQ(small.iterative.price, 60 * 0.5 + 5 * 2);
    EXPECT_DOUBLE_EQ(small.sketch.price, 10 * 0.5 + 5 * 2);

    // calls see 0, 2, 4 accepted tokens on top of the context
    auto spec = iterative_api_cost({10, 5, 0, 0, 2});
    EXPECT_EQ(spec.speculative.calls, 3u);
    EXPECT_EQ(spec.speculative.input_tokens, 10u + 12u + 14u);

    auto zero = iterative_api_cost({50, 0, 1, 1, 1});
    EXPECT_EQ(zero.iterative.calls, 0u);
    EXPECT_EQ(zero.iterative.input_tokens, 0u);
    EXPECT_EQ(zero.sketch.calls, 0u);
    EXPECT_EQ(kind_of([] { iterative_api_cost({1, 1, 0, 0, 0}); }), "BadOption");
    EXPECT_EQ(kind_of([] { iterative_api_cost({1, 1, -1, 0, 1}); }), "BadOption");
}

TEST(Cost, ClosedFormMatchesLoop) {
    for (std::uint64_t c : {0u, 7u, 50u}) {
        std::uint64_t loop = 0;
        for (std::uint64_t n = 1; n <= 2000; ++n) {
            loop += c + (n - 1);
            auto r = iterative_api_cost({c, n, 0, 0, 1});
            ASSERT_EQ(r.iterative.input_tokens, loop) << n;
            ASSERT_EQ(r.iterative.input_tokens - r.sketch.input_tokens, n * c + n * (n - 1) / 2 - c);
        }
    }
    for (std::uint64_t k : {2u, 3u, 8u}) {
        for (std::uint64_t n = 1; n <= 300; ++n) {
            std::uint64_t calls = 0, input = 0;
            for (std::uint64_t done = 0; done < n; done += k, ++calls) input += 11 + done;
            auto r = iterative_api_cost({11, n, 0, 0, k});
            ASSERT_EQ(r.speculative.calls, calls);
            ASSERT_EQ(r.speculative.input_tokens, input);
        }
    }
}

TEST(Config, KeyValueParsing) {
    std::istringstream in("top = 3\n# comment\n[a]\nname = \"x # not a comment\" # trailing\nflag = true\n"
                          "ratio = 0.25\n");
    auto kv = KeyValueConfig::parse(in);
    EXPECT_EQ(kv.get_int("top", 0), 3);
    EXPECT_EQ(kv.get_string("a.name"), "x # not a comment");
    EXPECT_TRUE(kv.get_bool("a.flag", false));
    EXPECT_DOUBLE_EQ(kv.get_double("a.ratio", 0), 0.25);
    EXPECT_EQ(kv.get_int("a.missing", 9), 9);

    auto bad = [](const std::string& text) {
        return kind_of([&] {
            std::istringstream s(text);
            KeyValueConfig::parse(s);
        });
    };
    EXPECT_EQ(bad("[a\n"), "ConfigError");
    EXPECT_EQ(bad("k\n"), "ConfigError");
    EXPECT_EQ(bad("k = \"open\n"), "ConfigError");
    EXPECT_EQ(bad("k = 1\nk = 2\n"), "ConfigError");
    EXPECT_EQ(kind_of([] {
                  std::istringstream s("k = abc\n");
                  KeyValueConfig::parse(s).get_int("k", 0);
              }),
              "ConfigError");
}

TEST(Config, RunConfigResolvesPathsAndChecksValues) {
    auto cfg = RunConfig::load(sample("ie/run.toml"));
    EXPECT_EQ(cfg.task, "ie");
    EXPECT_TRUE(fs::path(cfg.entities).is_absolute());
    EXPECT_TRUE(fs::exists(cfg.dataset));
    EXPECT_EQ(cfg.beam_size, 2u);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.sketcher.mode, "mock");

    auto dir = scratch("cfg");
    auto write = [&](const std::string& body) {
        auto p = (dir / "run.toml").string();
        std::ofstream(p) << body;
        return p;
    };
    const std::string base = "task = \"ie\"\n[paths]\nentities = \"" + sample("ie/entities.tsv") + "\"\nrelations = \"" +
                             sample("ie/relations.tsv") + "\"\nprompts = \"" + sample("ie/prompts.json") +
                             "\"\ndataset = \"" + sample("ie/dataset.jsonl") + "\"\nsketches = \"" +
                             sample("ie/sketches.jsonl") + "\"\ntranscript = \"t.jsonl\"\nreport = \"r.json\"\n";
    EXPECT_NO_THROW(RunConfig::load(write(base)));
    EXPECT_EQ(kind_of([&] { RunConfig::load(write(base + "[decode]\nbeam_size = 0\n")); }), "ConfigError");
    EXPECT_EQ(kind_of([&] { RunConfig::load(write(base + "[decode]\nbeem_size = 2\n")); }), "ConfigError");
    EXPECT_EQ(kind_of([&] { RunConfig::load(write(base + "[sketcher]\nmode = \"http\"\n")); }), "ConfigError");
    EXPECT_EQ(kind_of([&] { RunConfig::load(write("task = \"ie\"\n")); }), "ConfigError");
    EXPECT_EQ(kind_of([&] { RunConfig::load(write(base + "task2 = 1\n")); }), "ConfigError");
}

TEST(Config, HttpModeNeedsCredentials) {
    auto dir = scratch("creds");
    auto p = (dir / "run.toml").string();
    std::ofstream(p) << "task = \"ie\"\n[paths]\nentities = \"" << sample("ie/entities.tsv") << "\"\nrelations = \""
                     << sample("ie/relations.tsv") << "\"\nprompts = \"" << sample("ie/prompts.json")
                     << "\"\ndataset = \"" << sample("ie/dataset.jsonl")
                     << "\"\ntranscript = \"t.jsonl\"\nreport = \"r.json\"\n[sketcher]\nmode = \"http\"\n"
                        "endpoint = \"http://127.0.0.1:9/v1/chat/completions\"\napi_key_env = "
                        "\"SGCD_TEST_KEY_THAT_IS_UNSET\"\n";
    auto cfg = RunConfig::load(p);
    EXPECT_EQ(kind_of([&] { prepare_run(cfg); }), "ConfigError");
}
