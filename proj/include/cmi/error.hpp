#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmi {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    DimensionMismatch(const std::string& what, std::size_t expected, std::size_t actual)
        : Error(what + ": expected " + std::to_string(expected) + ", got " + std::to_string(actual)) {}
    using Error::Error;
};

/// A class with no samples where a centroid is required.
class EmptyClass : public Error {
public:
    explicit EmptyClass(std::size_t cls)
        : Error("class " + std::to_string(cls) + " has no samples"), cls_(cls) {}
    std::size_t cls() const noexcept { return cls_; }

private:
    std::size_t cls_;
};

/// Separation is zero, so NCMI is undefined.
class DegenerateSeparation : public Error {
public:
    DegenerateSeparation() : Error("separation (gamma) is zero; NCMI undefined") {}
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed file content. `location` is a byte offset (binary formats) or
/// a 1-based line number (text formats), as named by `unit`.
class FormatError : public Error {
public:
    FormatError(const std::string& path, const std::string& unit, std::size_t location,
                const std::string& what)
        : Error(path + " (" + unit + " " + std::to_string(location) + "): " + what),
          location_(location) {}
    explicit FormatError(const std::string& what) : Error(what) {}
    std::size_t location() const noexcept { return location_; }

private:
    std::size_t location_ = 0;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace cmi
