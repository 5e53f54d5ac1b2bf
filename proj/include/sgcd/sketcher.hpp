#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "sgcd/error.hpp"
#include "sgcd/vocab.hpp"

namespace sgcd {

/// Unconstrained draft from the blackbox generator.
struct Sketch {
    std::string text;
    std::string provenance;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

class SketchClient {
public:
    virtual ~SketchClient() = default;
    virtual Sketch complete(const std::string& prompt) = 0;
};

inline Sketch sketch(SketchClient& client, const std::string& prompt) { return client.complete(prompt); }

/// Scripted completions. Usage is counted in whitespace words.
class MockSketchClient final : public SketchClient {
public:
    using Fn = std::function<std::string(const std::string& prompt)>;
    explicit MockSketchClient(Fn fn) : fn_(std::move(fn)) {}
    MockSketchClient(MockSketchClient&& other) noexcept : fn_(std::move(other.fn_)) {}

    /// Always returns `text`.
    static MockSketchClient canned(std::string text) {
        return MockSketchClient([t = std::move(text)](const std::string&) { return t; });
    }

    /// Looks up the query input, i.e. the text after the last "Input: " of
    /// the prompt up to the end of that line. Unknown inputs get "".
    static MockSketchClient by_input(std::map<std::string, std::string> table) {
        return MockSketchClient([t = std::move(table)](const std::string& prompt) {
            auto it = t.find(last_input(prompt));
            return it == t.end() ? std::string() : it->second;
        });
    }

    static std::string last_input(const std::string& prompt) {
        auto p = prompt.rfind("Input: ");
        if (p == std::string::npos) return {};
        p += 7;
        auto e = prompt.find('\n', p);
        return prompt.substr(p, e == std::string::npos ? std::string::npos : e - p);
    }

    Sketch complete(const std::string& prompt) override {
        Sketch s;
        {
            std::lock_guard lock(mu_);
            s.text = fn_(prompt);
        }
        s.provenance = "mock";
        s.prompt_tokens = split_whitespace(prompt).size();
        s.completion_tokens = split_whitespace(s.text).size();
        return s;
    }

private:
    Fn fn_;
    std::mutex mu_;
};

/// Token bucket shared by concurrent callers. rate <= 0 disables limiting.
class RateLimiter {
public:
    using Clock = std::chrono::steady_clock;
    explicit RateLimiter(double per_second = 0, double burst = 1)
        : rate_(per_second), burst_(std::max(1.0, burst)), tokens_(burst_), last_(Clock::now()) {}

    /// Seconds the caller has to wait before its request may go out; the
    /// caller's slot is reserved immediately.
    double reserve() {
        if (rate_ <= 0) return 0;
        std::lock_guard lock(mu_);
        auto now = Clock::now();
        tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
        last_ = now;
        tokens_ -= 1;
        return tokens_ >= 0 ? 0.0 : -tokens_ / rate_;
    }

private:
    double rate_;
    double burst_;
    double tokens_;
    Clock::time_point last_;
    std::mutex mu_;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Posts a JSON body and returns the response. Throws Error("Timeout") when
/// the request timed out and Error("ConnectionFailed") when no response came.
using HttpTransport = std::function<HttpResponse(const std::string& body)>;
using Sleeper = std::function<void(double seconds)>;

inline Sleeper real_sleeper() {
    return [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
}

/// httplib-backed transport for "http://host[:port]/path" endpoints. https
/// requires building with CPPHTTPLIB_OPENSSL_SUPPORT.
inline HttpTransport make_http_transport(const std::string& endpoint, std::string api_key, double timeout_s) {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) fail("BadEndpoint", endpoint);
    const std::string scheme = endpoint.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") fail("BadEndpoint", "unsupported scheme " + scheme);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https") fail("BadEndpoint", "https endpoints need a build with OpenSSL support");
#endif
    auto path_begin = endpoint.find('/', scheme_end + 3);
    const std::string host = endpoint.substr(0, path_begin);
    const std::string path = path_begin == std::string::npos ? "/" : endpoint.substr(path_begin);
    return [host, path, key = std::move(api_key), timeout_s](const std::string& body) {
        httplib::Client cli(host);
        auto secs = std::chrono::duration<double>(timeout_s);
        cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
        cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
        cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
        httplib::Headers headers;
        if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
        auto res = cli.Post(path, headers, body, "application/json");
        if (!res) {
            auto err = res.error();
            if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) fail("Timeout", host + path);
            fail("ConnectionFailed", httplib::to_string(err));
        }
        return HttpResponse{res->status, res->body};
    };
}

struct HttpSketchOptions {
    std::string model;
    double temperature = 0;
    std::size_t max_tokens = 512;
    std::size_t max_attempts = 5;
    double backoff_initial_s = 0.5;
    double backoff_factor = 2;
    double backoff_max_s = 30;
};

/// Chat-completion client. 429, 5xx, timeouts and connection failures are
/// retried with exponential backoff; other statuses fail at once.
class HttpSketchClient final : public SketchClient {
public:
    HttpSketchClient(HttpSketchOptions opts, HttpTransport transport, std::shared_ptr<RateLimiter> limiter = nullptr,
                     Sleeper sleeper = real_sleeper(), std::string provenance = "http")
        : opts_(std::move(opts)), transport_(std::move(transport)), limiter_(std::move(limiter)),
          sleep_(std::move(sleeper)), provenance_(std::move(provenance)) {
        if (opts_.max_attempts < 1) fail("BadConfig", "max_attempts must be >= 1");
    }

    std::string request_body(const std::string& prompt) const {
        nlohmann::json j = {{"model", opts_.model},
                            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                            {"temperature", opts_.temperature},
                            {"max_tokens", opts_.max_tokens}};
        return j.dump();
    }

    Sketch complete(const std::string& prompt) override {
        const std::string body = request_body(prompt);
        std::string kind, detail;
        double delay = opts_.backoff_initial_s;
        for (std::size_t attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
            if (attempt > 1) {
                sleep_(std::min(delay, opts_.backoff_max_s));
                delay *= opts_.backoff_factor;
            }
            if (limiter_)
                if (double w = limiter_->reserve(); w > 0) sleep_(w);
            HttpResponse res;
            try {
                res = transport_(body);
            } catch (const Error& e) {
                if (e.kind() != "Timeout" && e.kind() != "ConnectionFailed") throw;
                kind = e.kind();
                detail = e.detail();
                continue;
            }
            if (res.status == 200) return parse(res.body);
            if (res.status == 429) {
                kind = "RateLimited";
                detail = "status 429";
                continue;
            }
            if (res.status >= 500) {
                kind = "HttpError";
                detail = std::to_string(res.status);
                continue;
            }
            fail("HttpError", std::to_string(res.status));
        }
        fail(kind, detail + " after " + std::to_string(opts_.max_attempts) + " attempts");
    }

private:
    Sketch parse(const std::string& body) const {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            fail("BadResponse", e.what());
        }
        Sketch s;
        s.provenance = provenance_;
        try {
            s.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (j.contains("usage")) {
                s.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
                s.completion_tokens = j["usage"].value("completion_tokens", std::size_t{0});
            }
        } catch (const nlohmann::json::exception& e) {
            fail("BadResponse", e.what());
        }
        return s;
    }

    HttpSketchOptions opts_;
    HttpTransport transport_;
    std::shared_ptr<RateLimiter> limiter_;
    Sleeper sleep_;
    std::string provenance_;
};

}  // namespace sgcd
