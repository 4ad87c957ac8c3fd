#pragma once

#include <stdexcept>
#include <string>

namespace scoretd {

/// Failure category. The CLI maps these onto process exit codes.
enum class ErrorKind {
    invalid_argument,  ///< bad parameters or shape mismatch (exit 1)
    numeric,           ///< non-finite values, divergence, non-convergence (exit 2)
    io,                ///< unreadable / malformed files (exit 3)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

namespace detail {

inline void require(bool cond, ErrorKind kind, const std::string& msg)
{
    if (!cond) {
        throw Error(kind, msg);
    }
}

inline void require_arg(bool cond, const std::string& msg) { require(cond, ErrorKind::invalid_argument, msg); }

}  // namespace detail

}  // namespace scoretd
