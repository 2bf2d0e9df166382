#pragma once

#include <stdexcept>
#include <string>

namespace lporec {

// Validation errors (bad input, bad config) map to CLI exit code 2;
// runtime errors (numerical failures, IO) map to exit code 3. Every
// error carries a short machine-parsable class name.
class Error : public std::runtime_error {
public:
    Error(std::string cls, const std::string& msg)
        : std::runtime_error(cls + ": " + msg), cls_(std::move(cls)) {}
    const std::string& error_class() const { return cls_; }

private:
    std::string cls_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class RuntimeFailure : public Error {
public:
    using Error::Error;
};

}  // namespace lporec
