#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sgcd/error.hpp"

namespace sgcd {

using TokenId = std::int32_t;

inline constexpr std::string_view kDefaultEos = "</s>";
inline constexpr std::string_view kDefaultUnk = "<unk>";

/// Dense token inventory. Ids are 0..size()-1, each string maps to exactly one
/// id, and the EOS string is reserved: tokenizers never emit it for text.
///
/// An optional unknown-token entry turns out-of-vocabulary lookups into that id
/// instead of an UnknownToken error. Prompt contexts need it; grammar terminals
/// never go through it.
class Vocabulary {
public:
    Vocabulary() = default;

    /// `eos` must be one of `tokens`; `unk`, if given, too.
    static Vocabulary from_tokens(std::vector<std::string> tokens, std::string_view eos = kDefaultEos,
                                  std::optional<std::string_view> unk = std::nullopt) {
        Vocabulary v;
        v.tokens_ = std::move(tokens);
        for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
            auto [it, inserted] = v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i));
            if (!inserted) fail("DuplicateToken", v.tokens_[i]);
        }
        auto e = v.find(eos);
        if (!e) fail("BadVocabulary", "eos string '" + std::string(eos) + "' is not a token");
        v.eos_ = *e;
        if (unk) {
            auto u = v.find(*unk);
            if (!u) fail("BadVocabulary", "unk string '" + std::string(*unk) + "' is not a token");
            if (*u == v.eos_) fail("BadVocabulary", "unk and eos must differ");
            v.unk_ = *u;
        }
        return v;
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    TokenId eos_id() const noexcept { return eos_; }
    std::optional<TokenId> unk_id() const noexcept { return unk_; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    const std::string& token(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) fail("BadTokenId", std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::optional<TokenId> find(std::string_view s) const {
        auto it = index_.find(std::string(s));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool contains(std::string_view s) const { return find(s).has_value(); }

    /// File layout: `#eos <string>` on the first line, an optional `#unk <string>`
    /// on the second, then one token per line; ids count token lines from 0.
    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) fail("IoError", "cannot open vocabulary " + path);
        return parse(in);
    }

    static Vocabulary parse(std::istream& in) {
        std::string line;
        if (!std::getline(in, line) || line.rfind("#eos ", 0) != 0)
            fail("BadVocabFile", "line 1: expected '#eos <string>'");
        std::string eos = line.substr(5);
        std::optional<std::string> unk;
        std::vector<std::string> tokens;
        bool first_token_line = true;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (first_token_line && tokens.empty() && line.rfind("#unk ", 0) == 0) {
                unk = line.substr(5);
                first_token_line = false;
                continue;
            }
            first_token_line = false;
            tokens.push_back(line);
        }
        if (unk) return from_tokens(std::move(tokens), eos, std::string_view(*unk));
        return from_tokens(std::move(tokens), eos);
    }

    void save(std::ostream& out) const {
        out << "#eos " << tokens_[static_cast<std::size_t>(eos_)] << '\n';
        if (unk_) out << "#unk " << tokens_[static_cast<std::size_t>(*unk_)] << '\n';
        for (const auto& t : tokens_) out << t << '\n';
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId eos_ = 0;
    std::optional<TokenId> unk_;
};

inline std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Maps text to token ids and back; concrete tokenizers decide how text is cut
/// into pieces and glued together again. detokenize(tokenize(t)) == normalize(t).
class Tokenizer {
public:
    explicit Tokenizer(std::shared_ptr<const Vocabulary> vocab) : vocab_(std::move(vocab)) {
        if (!vocab_) fail("BadVocabulary", "null vocabulary");
    }
    virtual ~Tokenizer() = default;

    virtual std::vector<std::string> split(std::string_view text) const = 0;
    virtual std::string join(std::span<const std::string> pieces) const = 0;

    const Vocabulary& vocab() const noexcept { return *vocab_; }
    std::shared_ptr<const Vocabulary> vocab_ptr() const noexcept { return vocab_; }

    std::vector<TokenId> tokenize(std::string_view text) const {
        std::vector<TokenId> ids;
        for (const auto& piece : split(text)) ids.push_back(lookup(piece));
        return ids;
    }

    /// Like tokenize but never falls back to the unknown token. Grammar
    /// terminals and catalog surfaces use this.
    std::vector<TokenId> tokenize_strict(std::string_view text) const {
        std::vector<TokenId> ids;
        for (const auto& piece : split(text)) {
            auto id = vocab_->find(piece);
            if (!id || *id == vocab_->eos_id() || id == vocab_->unk_id()) fail("UnknownToken", piece);
            ids.push_back(*id);
        }
        return ids;
    }

    std::string detokenize(std::span<const TokenId> ids) const {
        std::vector<std::string> pieces;
        pieces.reserve(ids.size());
        for (TokenId id : ids) {
            if (id == vocab_->eos_id()) continue;
            pieces.push_back(vocab_->token(id));
        }
        return join(pieces);
    }

    std::string normalize(std::string_view text) const {
        auto pieces = split(text);
        return join(pieces);
    }

private:
    TokenId lookup(const std::string& piece) const {
        auto id = vocab_->find(piece);
        if (id && *id != vocab_->eos_id()) return *id;
        if (vocab_->unk_id()) return *vocab_->unk_id();
        fail("UnknownToken", piece);
    }

    std::shared_ptr<const Vocabulary> vocab_;
};

/// One token per whitespace-separated word; normalization collapses whitespace
/// runs to single spaces and trims both ends.
class WhitespaceTokenizer final : public Tokenizer {
public:
    using Tokenizer::Tokenizer;

    std::vector<std::string> split(std::string_view text) const override { return split_whitespace(text); }

    std::string join(std::span<const std::string> pieces) const override {
        std::string out;
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            if (i) out += ' ';
            out += pieces[i];
        }
        return out;
    }
};

/// Collects pieces in first-seen order; used to assemble vocabularies from
/// several sources before sealing them with EOS (and optionally UNK) last.
class VocabularyBuilder {
public:
    VocabularyBuilder& add(std::string_view piece) {
        if (piece == eos_ || piece == unk_) return *this;
        if (seen_.emplace(piece, tokens_.size()).second) tokens_.emplace_back(piece);
        return *this;
    }

    VocabularyBuilder& add_words(std::string_view text) {
        for (const auto& w : split_whitespace(text)) add(w);
        return *this;
    }

    template <class Range>
    VocabularyBuilder& add_all(const Range& pieces) {
        for (const auto& p : pieces) add(p);
        return *this;
    }

    Vocabulary build(bool with_unk = false) const {
        auto tokens = tokens_;
        if (with_unk) tokens.push_back(unk_);
        tokens.push_back(eos_);
        if (with_unk) return Vocabulary::from_tokens(std::move(tokens), eos_, std::string_view(unk_));
        return Vocabulary::from_tokens(std::move(tokens), eos_);
    }

private:
    std::string eos_{kDefaultEos};
    std::string unk_{kDefaultUnk};
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> seen_;
};

/// Every whitespace token of the corpus in first-seen order, EOS last.
inline Vocabulary build_whitespace_vocab(std::span<const std::string> corpus) {
    if (corpus.empty()) fail("EmptyCorpus");
    VocabularyBuilder b;
    for (const auto& text : corpus) b.add_words(text);
    return b.build();
}

inline std::shared_ptr<const Vocabulary> share(Vocabulary v) {
    return std::make_shared<const Vocabulary>(std::move(v));
}

}  // namespace sgcd
