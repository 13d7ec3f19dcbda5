#pragma once

#include <stdexcept>
#include <string>

namespace gaqp {

/// Base class for every error raised by the library. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data: CSV cells, schema configs, out-of-domain values.
class DataError : public Error
{
public:
    using Error::Error;
};

class SchemaError : public DataError
{
public:
    using DataError::DataError;
};

/// A persisted file failed its integrity checks (magic, version, checksum, truncation).
class IntegrityError : public DataError
{
public:
    using DataError::DataError;
};

/// Query text could not be parsed. `offset` is the byte offset of the offending token.
class SyntaxError : public Error
{
public:
    SyntaxError(const std::string &what, std::size_t offset)
        : Error(what + " at offset " + std::to_string(offset))
        , offset_(offset)
    {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Training produced a non-finite objective or activation.
class DivergenceError : public Error
{
public:
    DivergenceError(const std::string &what, int epoch)
        : Error(what)
        , epoch_(epoch)
    {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// The calibration loop could not certify a sample within its iteration budget.
class CertificationError : public Error
{
public:
    using Error::Error;
};

} // namespace gaqp
