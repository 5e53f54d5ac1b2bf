#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sgcd {

/// Every failure in the library surfaces as an Error carrying a stable kind
/// string ("UnknownToken", "EmptyLanguage", ...) plus a human readable detail.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? kind : kind + ": " + detail),
          kind_(std::move(kind)), detail_(detail) {}

    const std::string& kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string kind_;
    std::string detail_;
};

[[noreturn]] inline void fail(std::string kind, const std::string& detail = {}) {
    throw Error(std::move(kind), detail);
}

}  // namespace sgcd
