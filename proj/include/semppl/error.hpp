#pragma once

#include <stdexcept>
#include <string>

namespace semppl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes do not agree for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A row to be normalised has (near) zero norm.
class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

class BatchTooSmallError : public Error {
public:
    using Error::Error;
};

/// backward() was asked for a gradient of something that is not a scalar.
class RankError : public Error {
public:
    using Error::Error;
};

/// A tensor belongs to a tape pass that has already been consumed by backward().
class StaleTapeError : public Error {
public:
    using Error::Error;
};

/// Invalid network / dataset / loss / optimizer specification.
class SpecError : public Error {
public:
    using Error::Error;
};

/// Violated caller contract (non-unit embedding, bad index, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class QueryError : public Error {
public:
    using Error::Error;
};

/// Malformed input file (CSV, checkpoint, config).
class FormatError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// User-facing configuration problem; maps to exit code 2 in the CLI.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace semppl
