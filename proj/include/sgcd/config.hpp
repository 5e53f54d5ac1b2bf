#pragma once

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "sgcd/error.hpp"

namespace sgcd {

/// Minimal TOML-style file: `[section]` headers, `key = value` lines, values
/// quoted strings, integers, floats or true/false, `#` comments outside
/// strings. Keys are addressed as "section.key" (top-level keys bare).
class KeyValueConfig {
public:
    struct Value {
        std::string text;
        bool quoted = false;
        int line = 0;
    };

    static KeyValueConfig parse(std::istream& in) {
        KeyValueConfig c;
        std::string section, raw;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            std::string line = strip(strip_comment(raw));
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') c.error(lineno, "unterminated section header");
                section = strip(line.substr(1, line.size() - 2));
                if (section.empty()) c.error(lineno, "empty section name");
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) c.error(lineno, "expected key = value");
            std::string key = strip(line.substr(0, eq));
            std::string val = strip(line.substr(eq + 1));
            if (key.empty()) c.error(lineno, "empty key");
            Value v{val, false, lineno};
            if (!val.empty() && val.front() == '"') {
                if (val.size() < 2 || val.back() != '"') c.error(lineno, "unterminated string");
                v.text = unescape(val.substr(1, val.size() - 2));
                v.quoted = true;
            } else if (val.empty()) {
                c.error(lineno, "missing value");
            }
            std::string full = section.empty() ? key : section + "." + key;
            if (!c.values_.emplace(full, v).second) c.error(lineno, "duplicate key " + full);
        }
        return c;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) fail("ConfigError", "cannot open config " + path);
        return parse(in);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& def = {}) const {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (!it->second.quoted) error(it->second.line, key + " must be a quoted string");
        return it->second.text;
    }

    long long get_int(const std::string& key, long long def) const {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            std::size_t pos = 0;
            long long v = std::stoll(it->second.text, &pos);
            if (pos != it->second.text.size() || it->second.quoted) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            error(it->second.line, key + " must be an integer");
        }
    }

    double get_double(const std::string& key, double def) const {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            std::size_t pos = 0;
            double v = std::stod(it->second.text, &pos);
            if (pos != it->second.text.size() || it->second.quoted) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            error(it->second.line, key + " must be a number");
        }
    }

    bool get_bool(const std::string& key, bool def) const {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (!it->second.quoted && it->second.text == "true") return true;
        if (!it->second.quoted && it->second.text == "false") return false;
        error(it->second.line, key + " must be true or false");
    }

    /// Fails on keys no getter asked for, which are almost always typos.
    void reject_unused() const {
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) error(v.line, "unknown key " + k);
    }

private:
    [[noreturn]] void error(int line, const std::string& what) const {
        fail("ConfigError", "line " + std::to_string(line) + ": " + what);
    }

    static std::string strip(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    static std::string strip_comment(const std::string& s) {
        bool in_str = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '\\' && in_str) {
                ++i;
                continue;
            }
            if (s[i] == '"') in_str = !in_str;
            if (s[i] == '#' && !in_str) return s.substr(0, i);
        }
        return s;
    }

    static std::string unescape(const std::string& s) {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] != '\\' || i + 1 == s.size()) {
                out += s[i];
                continue;
            }
            char c = s[++i];
            out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
        }
        return out;
    }

    std::map<std::string, Value> values_;
    mutable std::set<std::string> used_;
};

struct SketcherConfig {
    std::string mode = "mock";  // mock | http
    std::string endpoint;
    std::string model;
    std::string api_key_env = "SGCD_API_KEY";
    std::size_t parallelism = 1;
    double rate_limit = 0;  // requests per second, 0 = unlimited
    std::size_t max_attempts = 5;
    double timeout_s = 60;
    std::size_t max_tokens = 512;
};

/// Contents of a run config. Paths are absolute after loading.
struct RunConfig {
    std::string task = "ie";
    std::string entities, relations, tags, prompts, dataset, transcript, report, sketches;
    std::size_t beam_size = 2;
    std::size_t max_len = 256;
    std::uint64_t seed = 0;
    std::size_t num_threads = 1;
    std::size_t n_resamples = 1000;
    SketcherConfig sketcher;
    bool include_input = true;
    bool single_root = false;
    std::string cp_grammar = "sophisticated";
    std::string scorer = "copy";

    /// Reads and checks a config; relative paths resolve against the config's
    /// directory and inputs must exist.
    static RunConfig load(const std::string& path) {
        namespace fs = std::filesystem;
        auto kv = KeyValueConfig::load(path);
        const fs::path base = fs::absolute(fs::path(path)).parent_path();
        RunConfig c;
        auto resolve = [&](const std::string& key, bool must_exist, bool required) {
            std::string v = kv.get_string(key);
            if (v.empty()) {
                if (required) fail("ConfigError", "missing " + key);
                return v;
            }
            fs::path p(v);
            if (p.is_relative()) p = base / p;
            p = p.lexically_normal();
            if (must_exist && !fs::exists(p)) fail("ConfigError", key + ": no such file " + p.string());
            return p.string();
        };
        auto positive = [&](const std::string& key, long long def) {
            long long v = kv.get_int(key, def);
            if (v < 1) fail("ConfigError", key + " must be >= 1");
            return static_cast<std::size_t>(v);
        };

        c.task = kv.get_string("task", c.task);
        if (c.task != "ie" && c.task != "cp") fail("ConfigError", "task must be \"ie\" or \"cp\"");
        const bool ie = c.task == "ie";
        c.entities = resolve("paths.entities", true, ie);
        c.relations = resolve("paths.relations", true, ie);
        c.tags = resolve("paths.tags", true, !ie);
        c.prompts = resolve("paths.prompts", true, true);
        c.dataset = resolve("paths.dataset", true, true);
        c.transcript = resolve("paths.transcript", false, true);
        c.report = resolve("paths.report", false, true);

        c.beam_size = positive("decode.beam_size", static_cast<long long>(c.beam_size));
        c.max_len = positive("decode.max_len", static_cast<long long>(c.max_len));
        long long seed = kv.get_int("decode.seed", 0);
        if (seed < 0) fail("ConfigError", "decode.seed must be >= 0");
        c.seed = static_cast<std::uint64_t>(seed);
        c.num_threads = positive("decode.num_threads", 1);
        c.n_resamples = positive("eval.n_resamples", static_cast<long long>(c.n_resamples));
        c.scorer = kv.get_string("decode.scorer", c.scorer);
        if (c.scorer != "copy" && c.scorer != "uniform") fail("ConfigError", "decode.scorer must be copy or uniform");

        auto& s = c.sketcher;
        s.mode = kv.get_string("sketcher.mode", s.mode);
        if (s.mode != "mock" && s.mode != "http") fail("ConfigError", "sketcher.mode must be mock or http");
        c.sketches = resolve("paths.sketches", true, s.mode == "mock");
        s.endpoint = kv.get_string("sketcher.endpoint");
        s.model = kv.get_string("sketcher.model");
        s.api_key_env = kv.get_string("sketcher.api_key_env", s.api_key_env);
        s.parallelism = positive("sketcher.parallelism", 1);
        s.rate_limit = kv.get_double("sketcher.rate_limit", 0);
        s.max_attempts = positive("sketcher.max_attempts", 5);
        s.timeout_s = kv.get_double("sketcher.timeout_s", 60);
        s.max_tokens = positive("sketcher.max_tokens", 512);
        if (s.rate_limit < 0) fail("ConfigError", "sketcher.rate_limit must be >= 0");
        if (s.mode == "http" && s.endpoint.empty()) fail("ConfigError", "sketcher.endpoint is required in http mode");

        c.include_input = kv.get_bool("flags.include_input", true);
        c.single_root = kv.get_bool("flags.single_root", false);
        c.cp_grammar = kv.get_string("flags.cp_grammar", c.cp_grammar);
        if (c.cp_grammar != "sophisticated" && c.cp_grammar != "lite")
            fail("ConfigError", "flags.cp_grammar must be sophisticated or lite");
        kv.reject_unused();
        return c;
    }
};

}  // namespace sgcd
