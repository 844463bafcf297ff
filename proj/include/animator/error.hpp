#pragma once

#include <stdexcept>
#include <string>

namespace animator {

// Base for every error the library raises. Subclasses tag the failure family
// so callers (and the CLI exit-code mapping) can tell them apart.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format error: " + what) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error("parse error: " + what) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("validation error: " + what) {}
};

class ProjectionError : public Error {
public:
    explicit ProjectionError(const std::string& what) : Error("projection error: " + what) {}
};

class DegeneratePoseError : public Error {
public:
    explicit DegeneratePoseError(const std::string& what) : Error("degenerate pose: " + what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& what) : Error("training error: " + what) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error("usage error: " + what) {}
};

}  // namespace animator
