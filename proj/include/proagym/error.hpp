#pragma once

#include <stdexcept>
#include <string>

namespace proagym {

/// Base for every domain failure raised by the library. The CLI maps these to
/// exit status 1; anything else escaping is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class TransportError : public Error {
public:
    using Error::Error;
};

class FixtureMismatch : public Error {
public:
    FixtureMismatch(std::string digest, const std::string& what)
        : Error(what), digest_(std::move(digest)) {}
    const std::string& digest() const noexcept { return digest_; }

private:
    std::string digest_;
};

class ExtractionError : public Error {
public:
    ExtractionError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

/// A model-driven stage (scenario, event, state, prediction, judgment) produced
/// output that could not be used.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace proagym
