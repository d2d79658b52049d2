#pragma once

// JSON API behind the web explorer. Handlers are plain functions of (path, body) so they
// can be exercised without sockets; serve() only adds transport and CORS headers.
//
// Every response is an envelope {ok, error: {code, message, field?} | null, payload | null}.

#include <json.hpp>

#include <string>
#include <string_view>

#include "segpower/errors.hpp"
#include "segpower/power.hpp"
#include "segpower/tfcp.hpp"

namespace segpower {

/// A request field that is missing, mistyped or out of its domain.
class FieldError : public Error {
public:
    FieldError(ErrorCode code, std::string field, const std::string& message)
        : Error(code, message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

struct ApiResponse {
    int status = 200;
    nlohmann::ordered_json body;
};

/// POST endpoints: /api/power, /api/samplesize, /api/test, /api/preview.
ApiResponse handle_api(std::string_view path, std::string_view body);

/// Request decoders shared with the command line; they raise Error with a field name in the message.
PowerRequest power_request_from_json(const nlohmann::json& j, bool sample_size);
Series<double> series_from_json(const nlohmann::json& j);

/// SEGPOWER_PORT, else 8080.
int default_port();

/// Blocks until the server stops.
void serve(const std::string& host, int port);

}  // namespace segpower
