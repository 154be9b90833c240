#pragma once

#include <stdexcept>
#include <string>

namespace lpcalib {

// Every library failure derives from Error. The category decides the CLI exit
// code: configuration problems, unreadable or inconsistent data, or a
// calibration stage that could not produce an estimate.
enum class ErrorCategory { Config, Data, Stage };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}
    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorCategory::Data, what) {}
};

class StageFailure : public Error {
public:
    StageFailure(std::string stage, const std::string& what)
        : Error(ErrorCategory::Stage, stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// data_io
class ParseError : public DataError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class NonMonotonicTimestamps : public DataError {
public:
    using DataError::DataError;
};

class InvalidQuaternion : public DataError {
public:
    using DataError::DataError;
};

class TooFewFiducials : public DataError {
public:
    using DataError::DataError;
};

class EmptyOverlap : public DataError {
public:
    using DataError::DataError;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

// geometry
class OutOfRange : public DataError {
public:
    using DataError::DataError;
};

class NearPiRotation : public DataError {
public:
    using DataError::DataError;
};

// plane_features
class DegenerateSet : public DataError {
public:
    using DataError::DataError;
};

// rough_calibration
class InsufficientCorrespondences : public StageFailure {
public:
    InsufficientCorrespondences(std::size_t found, std::size_t required)
        : StageFailure("rough", "insufficient correspondences: " + std::to_string(found) + " < " +
                                    std::to_string(required)),
          found_(found) {}
    std::size_t found() const noexcept { return found_; }

private:
    std::size_t found_;
};

class SingularHessian : public StageFailure {
public:
    explicit SingularHessian(double condition_number)
        : StageFailure("rough", "singular normal equations, condition number " +
                                    std::to_string(condition_number)),
          condition_number_(condition_number) {}
    double condition_number() const noexcept { return condition_number_; }

private:
    double condition_number_;
};

}  // namespace lpcalib
