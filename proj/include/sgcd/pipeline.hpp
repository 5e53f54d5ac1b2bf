#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sgcd/catalog.hpp"
#include "sgcd/cfg.hpp"
#include "sgcd/cp.hpp"
#include "sgcd/decoder.hpp"
#include "sgcd/error.hpp"
#include "sgcd/eval.hpp"
#include "sgcd/sketcher.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

struct Demonstration {
    std::string input;
    std::string output;
};

struct RefineDemonstration {
    std::string input;
    std::string sketch;
    std::string output;
};

struct PromptBundle {
    std::string instruction;
    std::vector<Demonstration> demonstrations;
    std::string refine_instruction;
    std::vector<RefineDemonstration> refine_demonstrations;
    bool include_input = true;
    /// Permit prompting without demonstrations.
    bool zero_shot = false;

    void validate() const {
        if (zero_shot) return;
        if (demonstrations.empty()) fail("BadBundle", "no sketch demonstrations (set zero_shot to allow)");
        if (refine_demonstrations.empty()) fail("BadBundle", "no refine demonstrations (set zero_shot to allow)");
    }

    static PromptBundle from_json(const nlohmann::json& j) {
        PromptBundle b;
        try {
            b.instruction = j.value("instruction", "");
            b.refine_instruction = j.value("refine_instruction", "");
            b.include_input = j.value("include_input", true);
            b.zero_shot = j.value("zero_shot", false);
            for (const auto& d : j.value("demonstrations", nlohmann::json::array()))
                b.demonstrations.push_back({d.at("input").get<std::string>(), d.at("output").get<std::string>()});
            for (const auto& d : j.value("refine_demonstrations", nlohmann::json::array()))
                b.refine_demonstrations.push_back({d.at("input").get<std::string>(), d.at("sketch").get<std::string>(),
                                                   d.at("output").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            fail("BadBundle", e.what());
        }
        b.validate();
        return b;
    }

    static PromptBundle load(const std::string& path) {
        std::ifstream in(path);
        if (!in) fail("IoError", "cannot open prompt bundle " + path);
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            fail("BadBundle", e.what());
        }
    }

    /// Every text the bundle can contribute to a prompt.
    std::vector<std::string> texts() const {
        std::vector<std::string> out{instruction, refine_instruction, "Input:", "Draft:", "Output:"};
        for (const auto& d : demonstrations) out.insert(out.end(), {d.input, d.output});
        for (const auto& d : refine_demonstrations) out.insert(out.end(), {d.input, d.sketch, d.output});
        return out;
    }
};

inline std::string render_sketch_prompt(const PromptBundle& b, const std::string& x) {
    std::string out;
    if (!b.instruction.empty()) out += b.instruction + "\n\n";
    for (const auto& d : b.demonstrations) out += "Input: " + d.input + "\nOutput: " + d.output + "\n\n";
    out += "Input: " + x + "\nOutput:";
    return out;
}

inline std::string render_refine_prompt(const PromptBundle& b, const std::string& x, const std::string& sketch_text) {
    std::string out;
    if (!b.refine_instruction.empty()) out += b.refine_instruction + "\n\n";
    for (const auto& d : b.refine_demonstrations) {
        if (b.include_input) out += "Input: " + d.input + "\n";
        out += "Draft: " + d.sketch + "\nOutput: " + d.output + "\n\n";
    }
    if (b.include_input) out += "Input: " + x + "\n";
    out += "Draft: " + sketch_text + "\nOutput:";
    return out;
}

inline std::string render_refine_prompt(const PromptBundle& b, const std::string& x, const Sketch& s) {
    return render_refine_prompt(b, x, s.text);
}

/// Probability masses of the copy scorer's mixture components. A component
/// with no candidate tokens hands its mass to the others pro rata.
struct CopyWeights {
    /// The draft token aligned with the next output position.
    double next = 0.85;
    /// Draft tokens shortly after the aligned one, for skipping over a draft
    /// token the constraints rule out.
    double ahead = 0.05;
    /// Tokens that follow the previous output token somewhere in the input.
    double follow = 0.09;
    /// Spread over the vocabulary except EOS.
    double rest = 0.01;
    std::size_t window = 3;
};

/// Local stand-in for the constrained decoder's language model: it prefers to
/// copy the draft, and to complete a phrase the way the input spells it. The
/// draft is the text after the last "Draft:" marker up to the following
/// "Output:" (the last "Input:" segment when there is no draft); the input is
/// the last "Input:" segment. The decoded prefix is aligned to the draft left
/// to right, skipping draft tokens that were not emitted.
class CopyScorer final : public Scorer {
public:
    explicit CopyScorer(const Vocabulary& vocab, CopyWeights w = {})
        : vocab_size_(vocab.size()), eos_(vocab.eos_id()), w_(w), input_(vocab.find("Input:")),
          draft_(vocab.find("Draft:")), output_(vocab.find("Output:")) {
        if (!(w.rest > 0) || w.next < 0 || w.ahead < 0 || w.follow < 0)
            fail("BadOption", "copy masses must be non-negative and rest positive");
    }

    std::size_t vocab_size() const override { return vocab_size_; }

    /// The draft segment of `context`.
    std::vector<TokenId> source(std::span<const TokenId> context) const {
        auto begin = last(context, draft_);
        if (!begin) begin = last(context, input_);
        return segment(context, begin);
    }

    std::vector<double> score_next(std::span<const TokenId> context, std::span<const TokenId> prefix) const override {
        auto src = source(context);
        src.push_back(eos_);
        std::size_t pos = 0;
        for (TokenId t : prefix) {
            if (pos < src.size() && src[pos] == t) {
                ++pos;
                continue;
            }
            auto it = std::find(src.begin() + static_cast<std::ptrdiff_t>(pos), src.end(), t);
            if (it != src.end()) pos = static_cast<std::size_t>(it - src.begin()) + 1;
        }

        std::set<TokenId> next, follow;
        if (pos < src.size()) next.insert(src[pos]);
        // nearer lookahead tokens weigh more: 1, 1/2, 1/4, ...
        std::map<TokenId, double> ahead;
        double step = 1;
        for (std::size_t i = pos + 1; i < src.size() && i <= pos + w_.window; ++i, step /= 2)
            if (!next.count(src[i])) ahead[src[i]] += step;
        if (!prefix.empty()) {
            auto in = segment(context, last(context, input_));
            for (std::size_t i = 0; i + 1 < in.size(); ++i)
                if (in[i] == prefix.back()) follow.insert(in[i + 1]);
        }

        std::vector<double> p(vocab_size_, 0.0);
        double used = w_.rest;
        auto share = [&](const std::set<TokenId>& ts, double mass) {
            if (ts.empty() || mass <= 0) return;
            used += mass;
            for (TokenId t : ts) p[static_cast<std::size_t>(t)] += mass / static_cast<double>(ts.size());
        };
        share(next, w_.next);
        share(follow, w_.follow);
        if (!ahead.empty() && w_.ahead > 0) {
            double total = 0;
            for (const auto& [t, a] : ahead) total += a;
            used += w_.ahead;
            for (const auto& [t, a] : ahead) p[static_cast<std::size_t>(t)] += w_.ahead * a / total;
        }
        // The floor skips EOS: the scorer only stops where the draft does.
        const double floor = vocab_size_ > 1 ? w_.rest / static_cast<double>(vocab_size_ - 1) : 0.0;
        std::vector<double> out(vocab_size_);
        for (std::size_t t = 0; t < vocab_size_; ++t)
            out[t] = std::log((p[t] + (static_cast<TokenId>(t) == eos_ ? 0.0 : floor)) / used);
        return out;
    }

private:
    std::optional<std::size_t> last(std::span<const TokenId> context, std::optional<TokenId> marker) const {
        if (!marker) return std::nullopt;
        for (std::size_t i = context.size(); i-- > 0;)
            if (context[i] == *marker) return i;
        return std::nullopt;
    }

    /// Tokens after position `begin` up to the next prompt marker.
    std::vector<TokenId> segment(std::span<const TokenId> context, std::optional<std::size_t> begin) const {
        std::vector<TokenId> seg;
        if (!begin) return seg;
        for (std::size_t i = *begin + 1; i < context.size(); ++i) {
            if ((output_ && context[i] == *output_) || (draft_ && context[i] == *draft_)) break;
            seg.push_back(context[i]);
        }
        return seg;
    }

    std::size_t vocab_size_;
    TokenId eos_;
    CopyWeights w_;
    std::optional<TokenId> input_, draft_, output_;
};

/// Constrained rewrite of a sketch: beam search over the refine prompt.
inline std::vector<TokenId> refine(const Scorer& scorer, const ConstraintAutomaton& automaton, const Tokenizer& tok,
                                   const PromptBundle& b, const std::string& x, const std::string& sketch_text,
                                   const DecodeConfig& cfg) {
    auto context = tok.tokenize(render_refine_prompt(b, x, sketch_text));
    return constrained_beam(scorer, automaton, context, cfg).front().tokens;
}

/// Sketch-free baseline: beam search over the few-shot prompt itself.
inline std::vector<TokenId> direct_constrained(const Scorer& scorer, const ConstraintAutomaton& automaton,
                                               const Tokenizer& tok, const PromptBundle& b, const std::string& x,
                                               const DecodeConfig& cfg) {
    auto context = tok.tokenize(render_sketch_prompt(b, x));
    return constrained_beam(scorer, automaton, context, cfg).front().tokens;
}

enum class Task { Ie, Cp };

inline Task parse_task(const std::string& s) {
    if (s == "ie") return Task::Ie;
    if (s == "cp") return Task::Cp;
    fail("BadConfig", "task must be ie or cp, got '" + s + "'");
}

struct Example {
    std::string id;
    std::string input;
    nlohmann::json gold;
};

struct RowFailure {
    std::size_t line = 0;
    std::string error;
};

struct Dataset {
    std::vector<Example> rows;
    std::vector<RowFailure> failures;
};

inline TripletSet triplets_from_json(const nlohmann::json& gold) {
    TripletSet out;
    if (!gold.is_array()) fail("BadRow", "gold must be an array of triplets");
    for (const auto& t : gold) {
        if (!t.is_array() || t.size() != 3) fail("BadRow", "triplet must have three ids");
        out.insert({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
    }
    return out;
}

/// JSONL rows {"id", "input", "gold"} (ie) or {"id", "input", "gold_tree"}
/// (cp). Malformed rows are collected as failures and skipped.
inline Dataset parse_dataset(std::istream& in, Task task, const TagInventory* tags = nullptr) {
    Dataset ds;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (split_whitespace(line).empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            Example ex;
            ex.id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
            ex.input = j.at("input").get<std::string>();
            if (task == Task::Ie) {
                ex.gold = j.at("gold");
                triplets_from_json(ex.gold);
            } else {
                ex.gold = j.at("gold_tree").get<std::string>();
                if (tags) parse_linearized(ex.gold.get<std::string>(), *tags);
            }
            if (!ids.insert(ex.id).second) fail("DuplicateId", ex.id);
            ds.rows.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            ds.failures.push_back({lineno, std::string("BadRow: ") + e.what()});
        } catch (const Error& e) {
            ds.failures.push_back({lineno, e.what()});
        }
    }
    return ds;
}

inline Dataset load_dataset(const std::string& path, Task task, const TagInventory* tags = nullptr) {
    std::ifstream in(path);
    if (!in) fail("IoError", "cannot open dataset " + path);
    return parse_dataset(in, task, tags);
}

struct TranscriptRecord {
    std::string id;
    std::string input;
    std::string sketch;
    std::string output;
    bool valid = false;
    std::optional<std::string> error;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"id", id}, {"input", input}, {"sketch", sketch}, {"output", output}, {"valid", valid}};
        if (error) j["error"] = *error;
        return j;
    }
    static TranscriptRecord from_json(const nlohmann::json& j) {
        TranscriptRecord r;
        r.id = j.at("id").get<std::string>();
        r.input = j.at("input").get<std::string>();
        r.sketch = j.at("sketch").get<std::string>();
        r.output = j.at("output").get<std::string>();
        r.valid = j.at("valid").get<bool>();
        if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
        return r;
    }
};

/// Reads an existing transcript. A torn final line (interrupted write) is
/// ignored; later duplicates of an id are ignored too.
inline std::vector<TranscriptRecord> read_transcript(const std::string& path) {
    std::vector<TranscriptRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (split_whitespace(line).empty()) continue;
        try {
            auto r = TranscriptRecord::from_json(nlohmann::json::parse(line));
            if (seen.insert(r.id).second) out.push_back(std::move(r));
        } catch (const nlohmann::json::exception&) {
            if (in.peek() != std::char_traits<char>::eof()) fail("BadTranscript", path + ": corrupt line");
        }
    }
    return out;
}

/// Writes `content` to a sibling temp file and renames it over `path`.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail("IoError", "cannot write " + tmp.string());
        out << content;
        if (!out.flush()) fail("IoError", "cannot write " + tmp.string());
    }
    fs::rename(tmp, target);
}

struct IeResources {
    Catalog entities{CatalogKind::Entity};
    Catalog relations{CatalogKind::Relation};
    IeMarkers markers;
    std::shared_ptr<const IeAutomaton> automaton;
};

enum class CpGrammar { Sophisticated, Lite };

struct CpResources {
    TagInventory tags;
    BracketGlyphs glyphs;
    CpGrammar grammar = CpGrammar::Sophisticated;
    SophisticatedOptions sophisticated;
    /// Built once for the lite grammar; the sophisticated one depends on the input.
    std::shared_ptr<const CfgAutomaton> lite;
};

/// Everything a run needs besides the dataset and the sketcher.
struct SgcdTask {
    Task task = Task::Ie;
    std::shared_ptr<const Tokenizer> tok;
    ScorerPtr scorer;
    PromptBundle bundle;
    DecodeConfig decode;
    std::optional<IeResources> ie;
    std::optional<CpResources> cp;

    std::shared_ptr<const ConstraintAutomaton> automaton_for(const std::string& input) const {
        if (task == Task::Ie) return ie->automaton;
        if (cp->grammar == CpGrammar::Lite) return cp->lite;
        return std::make_shared<SophisticatedAutomaton>(split_whitespace(input), cp->tags, *tok, cp->sophisticated);
    }
};

/// Vocabulary covering catalogs, markers, prompt texts and dataset inputs,
/// with an unknown token for anything else a sketch may contain.
inline Vocabulary build_ie_run_vocab(const Catalog& entities, const Catalog& relations, const IeMarkers& markers,
                                     const PromptBundle& bundle, const std::vector<Example>& rows) {
    VocabularyBuilder b;
    b.add_all(markers.all());
    for (const auto& e : entities.entries()) b.add_words(e.surface);
    for (const auto& r : relations.entries()) b.add_words(r.surface);
    for (const auto& t : bundle.texts()) b.add_words(t);
    for (const auto& ex : rows) b.add_words(ex.input);
    return b.build(true);
}

inline Vocabulary build_cp_run_vocab(const TagInventory& tags, const BracketGlyphs& glyphs, const PromptBundle& bundle,
                                     const std::vector<Example>& rows) {
    std::vector<std::string> sentences;
    for (const auto& ex : rows) sentences.push_back(ex.input);
    VocabularyBuilder b;
    b.add_all(build_cp_vocab(tags, sentences, glyphs).tokens());
    for (const auto& t : bundle.texts()) b.add_all(split_bracketed(t, tags, glyphs));
    for (const auto& ex : rows) b.add_all(split_bracketed(ex.gold.get<std::string>(), tags, glyphs));
    return b.build(true);
}

struct RunOptions {
    std::string transcript_path;
    std::size_t parallelism = 1;
    BootstrapOptions bootstrap;
    std::ostream* log = nullptr;
};

struct RunResult {
    /// Dataset order, including records carried over from a previous run.
    std::vector<TranscriptRecord> records;
    std::size_t processed = 0;
    std::size_t skipped = 0;
    std::size_t failures = 0;
    nlohmann::json report;
};

namespace detail {

inline TranscriptRecord process_example(const SgcdTask& t, SketchClient& client, const Example& ex) {
    TranscriptRecord r;
    r.id = ex.id;
    r.input = ex.input;
    try {
        r.sketch = client.complete(render_sketch_prompt(t.bundle, ex.input)).text;
        auto automaton = t.automaton_for(ex.input);
        auto z = refine(*t.scorer, *automaton, *t.tok, t.bundle, ex.input, r.sketch, t.decode);
        r.valid = automaton->accepts(z);
        r.output = t.tok->detokenize(z);
    } catch (const Error& e) {
        r.error = e.what();
    } catch (const std::exception& e) {
        r.error = std::string("Internal: ") + e.what();
    }
    return r;
}

inline nlohmann::json ie_report(const SgcdTask& t, const std::vector<Example>& rows,
                                const std::vector<TranscriptRecord>& recs, const BootstrapOptions& boot) {
    const auto& ie = *t.ie;
    std::vector<TripletSet> preds, sketches, golds;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        golds.push_back(triplets_from_json(rows[i].gold));
        TripletSet pred;
        if (recs[i].valid) {
            pred = extract_triplets(t.tok->tokenize(recs[i].output), *ie.automaton);
            ++valid;
        } else if (!recs[i].error) {
            pred = parse_unconstrained_triplets(recs[i].output, ie.entities, ie.relations, ie.markers);
        }
        preds.push_back(std::move(pred));
        sketches.push_back(parse_unconstrained_triplets(recs[i].sketch, ie.entities, ie.relations, ie.markers));
    }
    auto main = triplet_prf_with_ci(preds, golds, boot);
    main.validity_rate = rows.empty() ? 0.0 : static_cast<double>(valid) / static_cast<double>(rows.size());
    auto base = triplet_prf_with_ci(sketches, golds, boot);
    auto j = report_json(main, boot.seed);
    j["sketch_baseline"] = report_json(base, boot.seed);
    return j;
}

inline nlohmann::json cp_report(const SgcdTask& t, const std::vector<Example>& rows,
                                const std::vector<TranscriptRecord>& recs, const BootstrapOptions& boot) {
    const auto& cp = *t.cp;
    std::vector<std::string> outputs, sketches;
    std::vector<ParseTree> golds;
    std::size_t valid = 0;
    ParseOptions po;
    po.glyphs = cp.glyphs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        golds.push_back(parse_linearized(rows[i].gold.get<std::string>(), cp.tags, po));
        outputs.push_back(recs[i].output);
        sketches.push_back(recs[i].sketch);
        valid += recs[i].valid;
    }
    if (rows.empty()) return {{"n", 0}, {"seed", boot.seed}};
    auto j = report_json(evaluate_cp(outputs, golds, cp.tags, cp.glyphs), boot.seed);
    double v = static_cast<double>(valid) / static_cast<double>(rows.size());
    j["validity"] = {{"value", v}, {"ci_low", v}, {"ci_high", v}};
    j["sketch_baseline"] = report_json(evaluate_cp(sketches, golds, cp.tags, cp.glyphs), boot.seed);
    return j;
}

}  // namespace detail

/// Sketch then refine every dataset row not already in the transcript, append
/// records as they complete, then evaluate over the whole transcript.
inline RunResult run_sgcd(const SgcdTask& task, const Dataset& dataset, SketchClient& client, const RunOptions& opts) {
    if (!task.tok || !task.scorer) fail("BadConfig", "task needs a tokenizer and a scorer");
    if ((task.task == Task::Ie && !task.ie) || (task.task == Task::Cp && !task.cp))
        fail("BadConfig", "task resources missing");
    task.decode.validate();
    if (opts.parallelism < 1) fail("BadConfig", "parallelism must be >= 1");

    std::map<std::string, TranscriptRecord> done;
    if (!opts.transcript_path.empty())
        for (auto& r : read_transcript(opts.transcript_path)) done.emplace(r.id, std::move(r));

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < dataset.rows.size(); ++i)
        if (!done.count(dataset.rows[i].id)) pending.push_back(i);

    RunResult result;
    result.skipped = dataset.rows.size() - pending.size();
    std::vector<TranscriptRecord> fresh(dataset.rows.size());

    std::ofstream transcript;
    if (!opts.transcript_path.empty()) {
        namespace fs = std::filesystem;
        fs::path p(opts.transcript_path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        transcript.open(p, std::ios::app | std::ios::binary);
        if (!transcript) fail("IoError", "cannot open transcript " + opts.transcript_path);
    }
    std::mutex writer;
    std::atomic<std::size_t> next{0}, finished{0};
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < pending.size();) {
            const auto& ex = dataset.rows[pending[k]];
            auto rec = detail::process_example(task, client, ex);
            std::lock_guard lock(writer);
            if (transcript.is_open()) {
                transcript << rec.to_json().dump() << '\n';
                transcript.flush();
            }
            if (opts.log)
                *opts.log << '[' << ++finished << '/' << pending.size() << "] " << ex.id << ' '
                          << (rec.error ? "error: " + *rec.error : rec.valid ? "valid" : "invalid") << '\n';
            fresh[pending[k]] = std::move(rec);
        }
    };
    const std::size_t n_threads = std::min(opts.parallelism, std::max<std::size_t>(pending.size(), 1));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    }
    result.processed = pending.size();

    for (std::size_t i = 0; i < dataset.rows.size(); ++i) {
        auto it = done.find(dataset.rows[i].id);
        result.records.push_back(it != done.end() ? it->second : std::move(fresh[i]));
        if (result.records.back().error) ++result.failures;
    }
    result.failures += dataset.failures.size();

    result.report = task.task == Task::Ie ? detail::ie_report(task, dataset.rows, result.records, opts.bootstrap)
                                          : detail::cp_report(task, dataset.rows, result.records, opts.bootstrap);
    nlohmann::json failed = nlohmann::json::array();
    for (const auto& f : dataset.failures) failed.push_back({{"line", f.line}, {"error", f.error}});
    for (const auto& r : result.records)
        if (r.error) failed.push_back({{"id", r.id}, {"error", *r.error}});
    result.report["failures"] = {{"count", result.failures}, {"items", failed}};
    return result;
}

struct CostModelParams {
    std::uint64_t context_tokens = 0;  // c
    std::uint64_t output_tokens = 0;   // n
    double price_in = 0;               // per input token
    double price_out = 0;              // per output token
    /// Tokens accepted per call under speculative batching.
    std::uint64_t speculation = 1;
};

struct CallCost {
    std::uint64_t calls = 0;
    std::uint64_t input_tokens = 0;
    std::uint64_t output_tokens = 0;
    double price = 0;
};

struct CostReport {
    CallCost iterative;
    CallCost speculative;
    CallCost sketch;
};

/// Token-by-token decoding through a blackbox API: call t re-sends the context
/// plus the t-1 tokens generated so far and bills one output token. With
/// speculation k a call emits up to k tokens, so ceil(n/k) calls. A sketch is
/// one call with input c and output n. Nothing is billed when n = 0.
inline CostReport iterative_api_cost(const CostModelParams& p) {
    if (p.speculation < 1) fail("BadOption", "speculation must be >= 1");
    if (p.price_in < 0 || p.price_out < 0) fail("BadOption", "prices must be >= 0");
    const std::uint64_t n = p.output_tokens, c = p.context_tokens, k = p.speculation;
    auto priced = [&](CallCost cc) {
        cc.price = static_cast<double>(cc.input_tokens) * p.price_in + static_cast<double>(cc.output_tokens) * p.price_out;
        return cc;
    };
    CostReport r;
    if (n == 0) return r;
    r.iterative = priced({n, n * c + n * (n - 1) / 2, n, 0});
    const std::uint64_t calls = (n + k - 1) / k;
    // call m (0-based) re-sends the m*k tokens accepted before it
    r.speculative = priced({calls, calls * c + k * (calls * (calls - 1) / 2), n, 0});
    r.sketch = priced({1, c, n, 0});
    return r;
}

}  // namespace sgcd
