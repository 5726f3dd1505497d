#pragma once

#include <stdexcept>
#include <string>

namespace gnnmapf {

// Base class for every failure the toolkit reports. `code()` is the stable
// machine-readable name written by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define GNNMAPF_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(#Name, what) {}    \
  }

GNNMAPF_DEFINE_ERROR(InfeasibleCase);
GNNMAPF_DEFINE_ERROR(OutOfBounds);
GNNMAPF_DEFINE_ERROR(Timeout);
GNNMAPF_DEFINE_ERROR(Infeasible);
GNNMAPF_DEFINE_ERROR(TooLarge);
GNNMAPF_DEFINE_ERROR(ShapeMismatch);
GNNMAPF_DEFINE_ERROR(NonFiniteGradient);
GNNMAPF_DEFINE_ERROR(EmptyInput);
GNNMAPF_DEFINE_ERROR(ConfigError);
GNNMAPF_DEFINE_ERROR(VersionMismatch);
GNNMAPF_DEFINE_ERROR(IoError);

#undef GNNMAPF_DEFINE_ERROR

// Malformed input file; carries the 1-based line and the offending field.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, std::string field,
             const std::string& detail)
      : Error("ParseError", file + ":" + std::to_string(line) + ": field '" +
                                field + "': " + detail),
        file_(std::move(file)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string file_;
  std::size_t line_;
  std::string field_;
};

}  // namespace gnnmapf
