#pragma once

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgcd/automaton.hpp"
#include "sgcd/catalog.hpp"
#include "sgcd/cfg.hpp"
#include "sgcd/config.hpp"
#include "sgcd/cp.hpp"
#include "sgcd/error.hpp"
#include "sgcd/eval.hpp"
#include "sgcd/grammar.hpp"
#include "sgcd/pipeline.hpp"
#include "sgcd/sketcher.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

/// 2 for problems with the user's inputs (files, config, grammar), 1 otherwise.
inline int exit_code_for(const Error& e) {
    static const std::set<std::string> usage{
        "ConfigError",   "GrammarParse", "EmptyLanguage", "UndefinedSymbol", "IoError",      "BadVocabFile",
        "BadCatalogRow", "BadTagFile",   "BadBundle",     "BadEndpoint",     "NotRegular",   "DuplicateId",
        "BadConfig",     "EmptyTags",    "EmptyCatalog",  "DuplicateToken",  "BadVocabulary", "BadOption"};
    return usage.count(e.kind()) ? 2 : 1;
}

/// Resources assembled from a run config.
struct PreparedRun {
    SgcdTask task;
    Dataset dataset;
    std::unique_ptr<SketchClient> client;
    RunOptions options;
};

inline std::map<std::string, std::string> load_mock_sketches(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("IoError", "cannot open sketches " + path);
    std::map<std::string, std::string> table;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (split_whitespace(line).empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            table[j.at("input").get<std::string>()] = j.at("sketch").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            fail("ConfigError", path + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return table;
}

/// Builds the task, dataset and sketcher for `cfg`. Credentials are checked
/// here, before anything is sent.
inline PreparedRun prepare_run(const RunConfig& cfg) {
    PreparedRun run;
    auto& t = run.task;
    t.task = parse_task(cfg.task);
    t.bundle = PromptBundle::load(cfg.prompts);
    t.bundle.include_input = cfg.include_input;
    t.decode.beam_size = cfg.beam_size;
    t.decode.max_len = cfg.max_len;
    t.decode.seed = cfg.seed;
    t.decode.num_threads = cfg.num_threads;

    std::shared_ptr<const Vocabulary> vocab;
    if (t.task == Task::Ie) {
        run.dataset = load_dataset(cfg.dataset, t.task);
        IeResources ie;
        ie.entities = Catalog::load(cfg.entities, CatalogKind::Entity);
        ie.relations = Catalog::load(cfg.relations, CatalogKind::Relation);
        vocab = share(build_ie_run_vocab(ie.entities, ie.relations, ie.markers, t.bundle, run.dataset.rows));
        t.tok = std::make_shared<WhitespaceTokenizer>(vocab);
        ie.automaton = std::make_shared<IeAutomaton>(std::make_shared<const TokenTrie>(build_trie(ie.entities, *t.tok)),
                                                     std::make_shared<const TokenTrie>(build_trie(ie.relations, *t.tok)),
                                                     ie.markers, *t.tok);
        t.ie = std::move(ie);
    } else {
        CpResources cp;
        cp.tags = TagInventory::load(cfg.tags);
        run.dataset = load_dataset(cfg.dataset, t.task, &cp.tags);
        cp.grammar = cfg.cp_grammar == "lite" ? CpGrammar::Lite : CpGrammar::Sophisticated;
        cp.sophisticated.single_root = cfg.single_root;
        vocab = share(build_cp_run_vocab(cp.tags, cp.glyphs, t.bundle, run.dataset.rows));
        t.tok = std::make_shared<BracketTokenizer>(vocab, cp.tags, cp.glyphs);
        if (cp.grammar == CpGrammar::Lite) {
            LiteCfgOptions lo;
            lo.glyphs = cp.glyphs;
            cp.lite = std::make_shared<CfgAutomaton>(build_lite_cfg(cp.tags, lo), *t.tok);
        }
        t.cp = std::move(cp);
    }
    if (cfg.scorer == "uniform") t.scorer = make_uniform_scorer(*vocab);
    else t.scorer = std::make_shared<CopyScorer>(*vocab);

    if (cfg.sketcher.mode == "mock") {
        run.client = std::make_unique<MockSketchClient>(MockSketchClient::by_input(load_mock_sketches(cfg.sketches)));
    } else {
        const char* key = std::getenv(cfg.sketcher.api_key_env.c_str());
        if (!key || !*key) fail("ConfigError", "environment variable " + cfg.sketcher.api_key_env + " is not set");
        HttpSketchOptions ho;
        ho.model = cfg.sketcher.model;
        ho.max_attempts = cfg.sketcher.max_attempts;
        ho.max_tokens = cfg.sketcher.max_tokens;
        auto limiter = std::make_shared<RateLimiter>(cfg.sketcher.rate_limit, 1.0);
        run.client = std::make_unique<HttpSketchClient>(
            ho, make_http_transport(cfg.sketcher.endpoint, key, cfg.sketcher.timeout_s), limiter, real_sleeper(),
            cfg.sketcher.endpoint);
    }
    run.options.transcript_path = cfg.transcript;
    run.options.parallelism = cfg.sketcher.parallelism;
    run.options.bootstrap.seed = cfg.seed;
    run.options.bootstrap.n_resamples = cfg.n_resamples;
    return run;
}

namespace detail {

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("IoError", "cannot open " + path);
    std::vector<nlohmann::json> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (split_whitespace(line).empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            fail("IoError", path + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::string row_id(const nlohmann::json& j) {
    if (!j.contains("id")) fail("IoError", "row without id");
    return j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
}

struct EvalArgs {
    std::string task, pred, gold, out, entities, relations, tags;
    std::uint64_t seed = 0;
    std::size_t n_resamples = 1000;
};

inline nlohmann::json run_eval(const EvalArgs& a) {
    auto preds = read_jsonl(a.pred);
    std::map<std::string, nlohmann::json> by_id;
    for (auto& p : preds) by_id[row_id(p)] = p;
    BootstrapOptions boot;
    boot.seed = a.seed;
    boot.n_resamples = a.n_resamples;

    if (parse_task(a.task) == Task::Ie) {
        auto gold = load_dataset(a.gold, Task::Ie);
        if (!gold.failures.empty()) fail("IoError", a.gold + ": malformed row at line " + std::to_string(gold.failures[0].line));
        std::optional<Catalog> ent, rel;
        if (!a.entities.empty()) ent = Catalog::load(a.entities, CatalogKind::Entity);
        if (!a.relations.empty()) rel = Catalog::load(a.relations, CatalogKind::Relation);
        std::vector<TripletSet> p, g;
        for (const auto& ex : gold.rows) {
            g.push_back(triplets_from_json(ex.gold));
            TripletSet s;
            auto it = by_id.find(ex.id);
            if (it != by_id.end()) {
                const auto& row = it->second;
                if (row.contains("pred")) {
                    s = triplets_from_json(row["pred"]);
                } else if (row.contains("output")) {
                    if (!ent || !rel) fail("ConfigError", "text predictions need --entities and --relations");
                    s = parse_unconstrained_triplets(row["output"].get<std::string>(), *ent, *rel);
                } else {
                    fail("IoError", "prediction " + ex.id + " has neither pred nor output");
                }
            }
            p.push_back(std::move(s));
        }
        return report_json(triplet_prf_with_ci(p, g, boot), a.seed);
    }
    if (a.tags.empty()) fail("ConfigError", "--tags is required for cp");
    auto tags = TagInventory::load(a.tags);
    auto gold = load_dataset(a.gold, Task::Cp, &tags);
    if (!gold.failures.empty()) fail("IoError", a.gold + ": malformed row at line " + std::to_string(gold.failures[0].line));
    std::vector<std::string> outputs;
    std::vector<ParseTree> trees;
    for (const auto& ex : gold.rows) {
        trees.push_back(parse_linearized(ex.gold.get<std::string>(), tags));
        auto it = by_id.find(ex.id);
        outputs.push_back(it == by_id.end() ? std::string() : it->second.value("output", std::string()));
    }
    return report_json(evaluate_cp(outputs, trees, tags), a.seed);
}

inline void emit_json(const nlohmann::json& j, const std::string& out_path, std::ostream& out) {
    if (out_path.empty()) out << j.dump(2) << '\n';
    else write_file_atomic(out_path, j.dump(2) + "\n");
}

inline void print_cost(const CostReport& r, std::uint64_t k, std::ostream& out) {
    auto row = [&](const std::string& name, const CallCost& c) {
        out << std::left << std::setw(18) << name << std::right << std::setw(10) << c.calls << std::setw(16)
            << c.input_tokens << std::setw(16) << c.output_tokens << std::setw(14) << std::setprecision(6) << c.price
            << '\n';
    };
    out << std::left << std::setw(18) << "method" << std::right << std::setw(10) << "calls" << std::setw(16)
        << "input_tokens" << std::setw(16) << "output_tokens" << std::setw(14) << "price" << '\n';
    row("iterative", r.iterative);
    row("speculative k=" + std::to_string(k), r.speculative);
    row("sketch", r.sketch);
}

inline nlohmann::json cost_json(const CostReport& r) {
    auto one = [](const CallCost& c) {
        return nlohmann::json{{"calls", c.calls}, {"input_tokens", c.input_tokens}, {"output_tokens", c.output_tokens},
                              {"price", c.price}};
    };
    return {{"iterative", one(r.iterative)}, {"speculative", one(r.speculative)}, {"sketch", one(r.sketch)}};
}

}  // namespace detail

/// Entry point of the `sgcd` tool; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Grammar-constrained refinement of model drafts"};
    app.require_subcommand(1);

    std::string grammar_path, vocab_path, compile_out, compile_tags;
    bool as_cfg = false, no_minimize = false;
    auto* compile = app.add_subcommand("compile", "Compile a grammar against a vocabulary and summarize the automaton");
    compile->add_option("--grammar", grammar_path, "Grammar file")->required()->check(CLI::ExistingFile);
    compile->add_option("--vocab", vocab_path, "Vocabulary file")->required()->check(CLI::ExistingFile);
    compile->add_option("--out", compile_out, "Write the automaton as JSON (regular grammars only)");
    compile->add_option("--tags", compile_tags, "Tag inventory; selects the bracket tokenizer")->check(CLI::ExistingFile);
    compile->add_flag("--cfg", as_cfg, "Treat the grammar as context-free (Earley) instead of regular");
    compile->add_flag("--no-minimize", no_minimize, "Skip state minimization");

    std::string config_path;
    auto* run = app.add_subcommand("run", "Sketch and refine a dataset as described by a run config");
    run->add_option("--config", config_path, "Run config (key = value file)")->required()->check(CLI::ExistingFile);

    detail::EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Score predictions against gold data");
    eval->add_option("--task", ea.task, "ie or cp")->required()->check(CLI::IsMember({"ie", "cp"}));
    eval->add_option("--pred", ea.pred, "Predictions JSONL (id + pred triplets, or id + output text)")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--gold", ea.gold, "Gold dataset JSONL")->required()->check(CLI::ExistingFile);
    eval->add_option("--seed", ea.seed, "Bootstrap seed");
    eval->add_option("--resamples", ea.n_resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
    eval->add_option("--entities", ea.entities, "Entity catalog, to ground text predictions")->check(CLI::ExistingFile);
    eval->add_option("--relations", ea.relations, "Relation catalog, to ground text predictions")->check(CLI::ExistingFile);
    eval->add_option("--tags", ea.tags, "Tag inventory (cp)")->check(CLI::ExistingFile);
    eval->add_option("--out", ea.out, "Write the report here instead of stdout");

    CostModelParams cp;
    bool cost_json = false;
    auto* cost = app.add_subcommand("cost", "Compare per-token API decoding with a single sketch call");
    cost->add_option("--n", cp.output_tokens, "Output tokens")->required();
    cost->add_option("--context", cp.context_tokens, "Context (prompt) tokens")->required();
    cost->add_option("--price-in", cp.price_in, "Price per input token")->check(CLI::NonNegativeNumber);
    cost->add_option("--price-out", cp.price_out, "Price per output token")->check(CLI::NonNegativeNumber);
    cost->add_option("--spec", cp.speculation, "Tokens accepted per call under speculation")->check(CLI::PositiveNumber);
    cost->add_flag("--json", cost_json, "Print JSON instead of a table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*compile) {
            auto vocab = share(Vocabulary::load(vocab_path));
            std::unique_ptr<Tokenizer> tok;
            if (!compile_tags.empty()) tok = std::make_unique<BracketTokenizer>(vocab, TagInventory::load(compile_tags));
            else tok = std::make_unique<WhitespaceTokenizer>(vocab);
            auto spec = load_grammar(grammar_path);
            if (as_cfg) {
                auto g = std::make_shared<const CompiledCfg>(spec, *tok);
                out << "kind cfg\nproductions " << spec.productions.size() << "\nnonterminals "
                    << spec.nonterminals.size() << "\nstart_tokens " << cfg_allowed(cfg_start(g)).size() << '\n';
                if (!compile_out.empty()) err << "--out is ignored for context-free grammars\n";
                return 0;
            }
            CompileOptions co;
            co.minimize = !no_minimize;
            auto dfa = compile_regular(spec, *tok, co);
            out << "kind regular\nstates " << dfa.num_states() << "\ntransitions " << dfa.num_transitions()
                << "\naccepting " << dfa.num_accepting() << "\ntrim yes\n";
            if (!compile_out.empty()) write_file_atomic(compile_out, dfa.to_json().dump() + "\n");
            return 0;
        }
        if (*run) {
            auto cfg = RunConfig::load(config_path);
            auto prepared = prepare_run(cfg);
            prepared.options.log = &err;
            auto result = run_sgcd(prepared.task, prepared.dataset, *prepared.client, prepared.options);
            write_file_atomic(cfg.report, result.report.dump(2) + "\n");
            out << "processed " << result.processed << ", skipped " << result.skipped << ", failures "
                << result.failures << "\nreport " << cfg.report << '\n';
            return 0;
        }
        if (*eval) {
            detail::emit_json(detail::run_eval(ea), ea.out, out);
            return 0;
        }
        if (*cost) {
            auto r = iterative_api_cost(cp);
            if (cost_json) out << detail::cost_json(r).dump(2) << '\n';
            else detail::print_cost(r, cp.speculation, out);
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace sgcd
