#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace s2conv {

// Broad failure classes. The CLI maps each to an exit code and the service
// maps them onto HTTP statuses.
enum class ErrorCategory {
    Validation,
    Backend,
    Io,
    Protocol,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, std::string code, const std::string& message)
        : std::runtime_error(message), category_(category), code_(std::move(code)) {}

    ErrorCategory category() const noexcept { return category_; }
    // Stable machine-readable identifier, e.g. "invalid_mbti".
    const std::string& code() const noexcept { return code_; }

private:
    ErrorCategory category_;
    std::string code_;
};

#define S2CONV_DEFINE_ERROR(Name, category, code_str)                 \
    class Name : public Error {                                       \
    public:                                                           \
        explicit Name(const std::string& message)                     \
            : Error(ErrorCategory::category, code_str, message) {}    \
    };

S2CONV_DEFINE_ERROR(InvalidMbti, Validation, "invalid_mbti")
S2CONV_DEFINE_ERROR(EmptyInput, Validation, "empty_input")
S2CONV_DEFINE_ERROR(SchemaError, Validation, "schema_error")
S2CONV_DEFINE_ERROR(InvalidProfile, Validation, "invalid_profile")
S2CONV_DEFINE_ERROR(DimensionMismatch, Validation, "dimension_mismatch")
S2CONV_DEFINE_ERROR(LengthMismatch, Validation, "length_mismatch")
S2CONV_DEFINE_ERROR(ZeroVariance, Validation, "zero_variance")
S2CONV_DEFINE_ERROR(EmptyMemory, Validation, "empty_memory")
S2CONV_DEFINE_ERROR(EmptyContext, Validation, "empty_context")
S2CONV_DEFINE_ERROR(EmptyBank, Validation, "empty_bank")
S2CONV_DEFINE_ERROR(UnknownCharacter, Validation, "unknown_character")
S2CONV_DEFINE_ERROR(UnknownSupporter, Validation, "unknown_supporter")
S2CONV_DEFINE_ERROR(NonFiniteLoss, Validation, "non_finite_loss")
S2CONV_DEFINE_ERROR(TemplateError, Validation, "template_error")
S2CONV_DEFINE_ERROR(MalformedOutput, Backend, "malformed_output")
S2CONV_DEFINE_ERROR(MalformedJudgeOutput, Backend, "malformed_judge_output")
S2CONV_DEFINE_ERROR(ProtocolError, Protocol, "protocol_error")
S2CONV_DEFINE_ERROR(ClosedSession, Protocol, "closed_session")
S2CONV_DEFINE_ERROR(NotFound, Validation, "not_found")
S2CONV_DEFINE_ERROR(IoError, Io, "io_error")

#undef S2CONV_DEFINE_ERROR

enum class BackendErrorKind { Transport, Auth, RateLimit, Overflow };

std::string_view to_string(BackendErrorKind kind);

class BackendError : public Error {
public:
    BackendError(BackendErrorKind kind, const std::string& message)
        : Error(ErrorCategory::Backend, "backend_error", message), kind_(kind) {}

    BackendErrorKind kind() const noexcept { return kind_; }

private:
    BackendErrorKind kind_;
};

// A role-played agent fell back to its assistant identity mid-conversation.
class ExpirationDetected : public Error {
public:
    ExpirationDetected(std::size_t turn_index, const std::string& message)
        : Error(ErrorCategory::Backend, "expiration_detected", message), turn_index_(turn_index) {}

    std::size_t turn_index() const noexcept { return turn_index_; }

private:
    std::size_t turn_index_;
};

}  // namespace s2conv
