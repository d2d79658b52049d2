#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace segpower {

/// Machine-readable failure categories. The string forms double as API error codes.
enum class ErrorCode {
    dimension,
    rank,
    degrees_of_freedom,
    convergence,
    boundary,
    domain,
    degenerate_series,
    series_size,
    unsupported_alpha,
    degenerate_covariate,
    non_identifiable,
    degenerate_dispersion,
    psi_out_of_range,
    parse,
    unreachable,
    target_below_size,
    configuration,
    ingestion,
    not_psd,
    flat_fit,
    invalid_request,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::dimension: return "dimension";
        case ErrorCode::rank: return "rank_deficient";
        case ErrorCode::degrees_of_freedom: return "degrees_of_freedom";
        case ErrorCode::convergence: return "convergence";
        case ErrorCode::boundary: return "boundary";
        case ErrorCode::domain: return "domain";
        case ErrorCode::degenerate_series: return "degenerate_series";
        case ErrorCode::series_size: return "series_size";
        case ErrorCode::unsupported_alpha: return "unsupported_alpha";
        case ErrorCode::degenerate_covariate: return "degenerate_covariate";
        case ErrorCode::non_identifiable: return "non_identifiable";
        case ErrorCode::degenerate_dispersion: return "degenerate_dispersion";
        case ErrorCode::psi_out_of_range: return "psi_out_of_range";
        case ErrorCode::parse: return "parse_error";
        case ErrorCode::unreachable: return "unreachable";
        case ErrorCode::target_below_size: return "target_below_size";
        case ErrorCode::configuration: return "configuration";
        case ErrorCode::ingestion: return "ingestion";
        case ErrorCode::not_psd: return "not_psd";
        case ErrorCode::flat_fit: return "flat_fit";
        case ErrorCode::invalid_request: return "invalid_request";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by the covariate-spec grammar; `position` is a 0-based character offset.
class ParseError : public Error {
public:
    ParseError(std::size_t position, const std::string& message)
        : Error(ErrorCode::parse, message + " at position " + std::to_string(position)),
          position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// IRLS gave up; carries the last coefficient iterate.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& message, std::vector<double> last_iterate)
        : Error(ErrorCode::convergence, message), last_iterate_(std::move(last_iterate)) {}

    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

private:
    std::vector<double> last_iterate_;
};

/// CSV ingestion failure. Row is 1-based counting the header as row 1; 0 when not tied to a row.
class IngestionError : public Error {
public:
    IngestionError(std::size_t row, std::string column, const std::string& message)
        : Error(ErrorCode::ingestion, message), row_(row), column_(std::move(column)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

}  // namespace segpower
