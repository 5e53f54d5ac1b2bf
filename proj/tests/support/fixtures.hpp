#pragma once
// Shared hand-built fixtures.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sgcd/catalog.hpp"
#include "sgcd/decoder.hpp"

namespace fixture {

/// Three museums-and-paintings entities, one relation. The scorer prefers
/// "Musée" over "Louvre" at the object slot, but inside the catalog "Musée"
/// only continues as "d'Orsay", which the scorer finds very unlikely.
struct MonaLisa {
    sgcd::Catalog entities{sgcd::CatalogKind::Entity};
    sgcd::Catalog relations{sgcd::CatalogKind::Relation};
    std::shared_ptr<sgcd::WhitespaceTokenizer> tok;
    std::shared_ptr<sgcd::IeAutomaton> automaton;
    std::shared_ptr<const sgcd::Scorer> scorer;
    std::string louvre = "[s] Mona Lisa [r] located in [o] Louvre Museum [e]";
    std::string orsay = "[s] Mona Lisa [r] located in [o] Musée d'Orsay [e]";

    MonaLisa() {
        entities.add("Q12418", "Mona Lisa");
        entities.add("Q19675", "Louvre Museum");
        entities.add("Q23402", "Musée d'Orsay");
        relations.add("P276", "located in");
        auto vocab = sgcd::share(sgcd::Vocabulary::from_tokens({"[s]", "[r]", "[o]", "[e]", "Mona", "Lisa", "located",
                                                                "in", "Louvre", "Museum", "Musée", "d'Orsay", "du",
                                                                "</s>"}));
        tok = std::make_shared<sgcd::WhitespaceTokenizer>(vocab);
        automaton = std::make_shared<sgcd::IeAutomaton>(
            std::make_shared<const sgcd::TokenTrie>(sgcd::build_trie(entities, *tok)),
            std::make_shared<const sgcd::TokenTrie>(sgcd::build_trie(relations, *tok)), sgcd::IeMarkers{}, *tok);

        sgcd::ScoreTable table;
        table.vocab_size = vocab->size();
        auto row = [&](const std::string& prefix, std::map<std::string, double> mass) {
            std::vector<double> r(vocab->size(), 0.0);
            double used = 0;
            for (const auto& [t, p] : mass) {
                r[static_cast<std::size_t>(vocab->find(t).value_or(vocab->eos_id()))] = p;
                used += p;
            }
            const double rest = (1.0 - used) / static_cast<double>(vocab->size() - mass.size());
            for (std::size_t i = 0; i < r.size(); ++i) {
                bool named = false;
                for (const auto& [t, _] : mass) named |= vocab->token(static_cast<sgcd::TokenId>(i)) == t;
                if (!named) r[i] = rest;
            }
            table.rows[tok->tokenize(prefix)] = r;
        };
        const std::string head = "[s] Mona Lisa [r] located in [o]";
        row("", {{"[s]", 0.9}, {"</s>", 0.05}});
        row("[s]", {{"Mona", 0.9}});
        row("[s] Mona", {{"Lisa", 0.9}});
        row("[s] Mona Lisa", {{"[r]", 0.9}});
        row("[s] Mona Lisa [r]", {{"located", 0.9}});
        row("[s] Mona Lisa [r] located", {{"in", 0.9}});
        row("[s] Mona Lisa [r] located in", {{"[o]", 0.9}});
        row(head, {{"Musée", 0.5}, {"Louvre", 0.4}});
        row(head + " Musée", {{"du", 0.9}, {"d'Orsay", 0.001}});
        row(head + " Louvre", {{"Museum", 0.9}});
        row(head + " Musée d'Orsay", {{"[e]", 0.9}});
        row(head + " Louvre Museum", {{"[e]", 0.9}});
        row(louvre, {{"</s>", 0.9}});
        row(orsay, {{"</s>", 0.9}});
        scorer = sgcd::make_table_scorer(std::move(table));
    }
};

}  // namespace fixture
