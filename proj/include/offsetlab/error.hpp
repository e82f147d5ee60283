#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace offsetlab {

// All failures carry a stable machine-readable code ("ShapeMismatch",
// "BadConfig", ...) next to the human-readable detail, so callers can
// dispatch without parsing message text.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail)
        : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

}  // namespace offsetlab
