#pragma once

#include <stdexcept>
#include <string>

namespace kgcal {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input line; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class VocabularyError : public Error {
public:
    using Error::Error;
};

class DuplicateTripleError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

class FitError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t epoch, std::size_t batch, const std::string& what)
        : Error("diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + what),
          epoch_(epoch), batch_(batch) {}
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace kgcal
