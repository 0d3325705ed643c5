#pragma once
// Error taxonomy shared by every xlat component.  Each failure mode gets its
// own exception type so callers (and tests) can react to the exact condition;
// all of them carry a stable code name for the CLI's machine-parsable output.

#include <stdexcept>
#include <string>

namespace xlat {

enum class ErrorCode {
  ShapeMismatch,
  NonFiniteInput,
  DomainError,
  NotScalar,
  TapeConsumed,
  NonDeterministicFunction,
  UnknownVariable,
  OverlappingSets,
  InvalidModel,
  TooLargeToEnumerate,
  DimMismatch,
  ConfigError,
  UnknownLanguage,
  UnknownToken,
  ParseError,
  DuplicateId,
  MalformedSequence,
  TooFewLanguages,
  MissingInstance,
  EmptyPool,
  AllPresent,
  LengthMismatch,
  EmptyCorpus,
  NoPairs,
  BadFlags,
  IoError,
  VerificationFailed,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::TapeConsumed: return "TapeConsumed";
    case ErrorCode::NonDeterministicFunction: return "NonDeterministicFunction";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::OverlappingSets: return "OverlappingSets";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::TooLargeToEnumerate: return "TooLargeToEnumerate";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::UnknownLanguage: return "UnknownLanguage";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::MalformedSequence: return "MalformedSequence";
    case ErrorCode::TooFewLanguages: return "TooFewLanguages";
    case ErrorCode::MissingInstance: return "MissingInstance";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::AllPresent: return "AllPresent";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NoPairs: return "NoPairs";
    case ErrorCode::BadFlags: return "BadFlags";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::VerificationFailed: return "VerificationFailed";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg),
        code_(code) {}
  ErrorCode code() const { return code_; }
  const char* code_name() const { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

#define XLAT_DEFINE_ERROR(Name)                  \
  struct Name : Error {                          \
    explicit Name(const std::string& msg)        \
        : Error(ErrorCode::Name, msg) {}         \
  };

XLAT_DEFINE_ERROR(ShapeMismatch)
XLAT_DEFINE_ERROR(NonFiniteInput)
XLAT_DEFINE_ERROR(DomainError)
XLAT_DEFINE_ERROR(NotScalar)
XLAT_DEFINE_ERROR(TapeConsumed)
XLAT_DEFINE_ERROR(NonDeterministicFunction)
XLAT_DEFINE_ERROR(UnknownVariable)
XLAT_DEFINE_ERROR(OverlappingSets)
XLAT_DEFINE_ERROR(InvalidModel)
XLAT_DEFINE_ERROR(TooLargeToEnumerate)
XLAT_DEFINE_ERROR(DimMismatch)
XLAT_DEFINE_ERROR(ConfigError)
XLAT_DEFINE_ERROR(UnknownLanguage)
XLAT_DEFINE_ERROR(UnknownToken)
XLAT_DEFINE_ERROR(ParseError)
XLAT_DEFINE_ERROR(DuplicateId)
XLAT_DEFINE_ERROR(MalformedSequence)
XLAT_DEFINE_ERROR(TooFewLanguages)
XLAT_DEFINE_ERROR(MissingInstance)
XLAT_DEFINE_ERROR(EmptyPool)
XLAT_DEFINE_ERROR(AllPresent)
XLAT_DEFINE_ERROR(LengthMismatch)
XLAT_DEFINE_ERROR(EmptyCorpus)
XLAT_DEFINE_ERROR(NoPairs)
XLAT_DEFINE_ERROR(BadFlags)
XLAT_DEFINE_ERROR(IoError)
XLAT_DEFINE_ERROR(VerificationFailed)

#undef XLAT_DEFINE_ERROR

}  // namespace xlat
