#pragma once

#include <stdexcept>
#include <string>

namespace hipseg {

// Every failure the library reports derives from Error so callers can catch
// the whole family at stage boundaries.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class SeedViolationError : public Error {
public:
    using Error::Error;
};

class NoCandidateError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class InitialSliceError : public Error {
public:
    using Error::Error;
};

class MissingCorrectionError : public Error {
public:
    using Error::Error;
};

class DatasetMismatchError : public Error {
public:
    using Error::Error;
};

class StartupError : public Error {
public:
    using Error::Error;
};

} // namespace hipseg
