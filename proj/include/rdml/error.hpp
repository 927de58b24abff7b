#pragma once

#include <stdexcept>
#include <string>

namespace rdml {

enum class ErrorKind {
    InvalidArgument,
    ShapeMismatch,
    NumericFailure,
    Resample,  // batch lacks the tuples a metric loss needs; draw another one
    Io,
    Config,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace rdml
