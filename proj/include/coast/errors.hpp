#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coast {

enum class ErrorCode {
  kInvalidArgument = 1,
  kIo,
  kParse,
  kDimension,
  kNumericDomain,
  kContract,
  kConfig,
  kDegenerateOutput,
  kDivergence,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define COAST_DEFINE_ERROR(Name, Code)                                      \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

COAST_DEFINE_ERROR(InvalidArgumentError, kInvalidArgument)
COAST_DEFINE_ERROR(IoError, kIo)
COAST_DEFINE_ERROR(DimensionError, kDimension)
COAST_DEFINE_ERROR(NumericDomainError, kNumericDomain)
COAST_DEFINE_ERROR(ContractError, kContract)
COAST_DEFINE_ERROR(ConfigError, kConfig)
COAST_DEFINE_ERROR(DegenerateOutputError, kDegenerateOutput)
COAST_DEFINE_ERROR(DivergenceError, kDivergence)

#undef COAST_DEFINE_ERROR

// Carries the 1-based line number of the offending input row.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(ErrorCode::kParse, file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace coast
