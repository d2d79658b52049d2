#include "segpower/service.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>

#include "segpower/report.hpp"
#include "segpower/rng.hpp"

namespace segpower {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

void only_fields(const json& j, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw FieldError(ErrorCode::invalid_request, "", "request body must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw FieldError(ErrorCode::invalid_request, key, "unknown field '" + key + "'");
    }
}

std::optional<double> number(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw FieldError(ErrorCode::invalid_request, key, std::string(key) + " must be a number");
    const double v = it->get<double>();
    if (!std::isfinite(v)) throw FieldError(ErrorCode::invalid_request, key, std::string(key) + " must be finite");
    return v;
}

std::optional<long long> integer(const json& j, const char* key) {
    const auto v = number(j, key);
    if (!v) return std::nullopt;
    if (*v != std::floor(*v) || std::abs(*v) > 9e15) {
        throw FieldError(ErrorCode::invalid_request, key, std::string(key) + " must be an integer");
    }
    return static_cast<long long>(*v);
}

std::optional<std::string> text(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw FieldError(ErrorCode::invalid_request, key, std::string(key) + " must be a string");
    return it->get<std::string>();
}

template <typename Parse>
auto parse_field(const char* key, const std::string& value, Parse parse) {
    try {
        return parse(value);
    } catch (const Error& e) {
        throw FieldError(ErrorCode::invalid_request, key, e.what());
    }
}

Eigen::VectorXd vector_field(const json& j, const char* key) {
    const json& a = j.at(key);
    if (!a.is_array()) throw FieldError(ErrorCode::invalid_request, key, std::string(key) + " must be an array of numbers");
    Eigen::VectorXd v(static_cast<Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number() || !std::isfinite(a[i].get<double>())) {
            throw FieldError(ErrorCode::invalid_request, key,
                             std::string(key) + "[" + std::to_string(i) + "] must be a finite number");
        }
        v(static_cast<Index>(i)) = a[i].get<double>();
    }
    return v;
}

CovariateSpec z_spec_field(const json& j) {
    const std::string t = text(j, "z_spec").value_or("equispaced");
    try {
        return parse_covariate_spec(t);
    } catch (const ParseError& e) {
        throw FieldError(ErrorCode::invalid_request, "z_spec",
                         std::string(e.what()) + " (at character " + std::to_string(e.position()) + ")");
    }
}

double alpha_field(const json& j, double fallback) {
    const double a = number(j, "alpha").value_or(fallback);
    if (!(a > 0.0 && a < 1.0)) throw FieldError(ErrorCode::invalid_request, "alpha", "alpha must lie in (0, 1)");
    return a;
}

Alternative alternative_field(const json& j) {
    const auto a = text(j, "alternative");
    return a ? parse_field("alternative", *a, parse_alternative) : Alternative::two_sided;
}

TestOptions test_options_from_json(const json& j) {
    TestOptions o;
    if (const auto m = text(j, "method")) o.method = parse_field("method", *m, parse_test_method);
    o.alpha = alpha_field(j, 0.05);
    o.alternative = alternative_field(j);
    if (const auto k = text(j, "kind")) o.kind = parse_field("kind", *k, parse_term_kind);
    o.l_critical = number(j, "l_critical");
    return o;
}

ojson preview(const json& j) {
    only_fields(j, {"n", "z_spec", "psi", "delta", "sigma", "seed"});
    const auto n = integer(j, "n").value_or(100);
    if (n < 8 || n > 100000) throw FieldError(ErrorCode::invalid_request, "n", "n must lie in 8..100000");
    const CovariateSpec spec = z_spec_field(j);
    const double psi = number(j, "psi").value_or(0.5);
    const double delta = number(j, "delta").value_or(0.0);
    const double sigma = number(j, "sigma").value_or(1.0);
    if (sigma < 0.0) throw FieldError(ErrorCode::invalid_request, "sigma", "sigma must be >= 0");
    const auto seed = integer(j, "seed").value_or(1);
    if (seed < 0) throw FieldError(ErrorCode::invalid_request, "seed", "seed must be >= 0");

    Eigen::VectorXd z;
    try {
        z = realize_covariate(spec, static_cast<Index>(n));
    } catch (const Error& e) {
        throw FieldError(ErrorCode::invalid_request, "z_spec", e.what());
    }
    if (!(psi > z.minCoeff() && psi < z.maxCoeff())) {
        throw FieldError(ErrorCode::psi_out_of_range, "psi", "psi must lie strictly inside the realized z range");
    }
    Stream rng(static_cast<std::uint64_t>(seed), 0);
    Eigen::VectorXd y(z.size());
    for (Index i = 0; i < z.size(); ++i) y(i) = delta * std::max(z(i) - psi, 0.0) + sigma * rng.normal();

    const ProfileFit fit = profile_segmented(y, null_design(z), z);
    const double b0 = fit.beta_hat(0), b1 = fit.beta_hat(1);
    const double lo = z.minCoeff(), hi = z.maxCoeff();
    const double at_psi = b0 + b1 * fit.psi_hat;
    ojson segments = ojson::array();
    segments.push_back({{"z_start", lo}, {"y_start", b0 + b1 * lo}, {"z_end", fit.psi_hat}, {"y_end", at_psi}});
    segments.push_back({{"z_start", fit.psi_hat},
                        {"y_start", at_psi},
                        {"z_end", hi},
                        {"y_end", at_psi + (b1 + fit.delta_hat) * (hi - fit.psi_hat)}});

    ojson out;
    out["n"] = n;
    out["seed"] = seed;
    out["z"] = std::vector<double>(z.data(), z.data() + z.size());
    out["y"] = std::vector<double>(y.data(), y.data() + y.size());
    out["fit"] = {{"psi_hat", fit.psi_hat},
                  {"delta_hat", fit.delta_hat},
                  {"intercept", b0},
                  {"slope_left", b1},
                  {"slope_right", b1 + fit.delta_hat},
                  {"segments", segments}};
    return out;
}

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_request:
        case ErrorCode::configuration:
        case ErrorCode::domain:
        case ErrorCode::parse:
        case ErrorCode::psi_out_of_range:
        case ErrorCode::target_below_size:
        case ErrorCode::unsupported_alpha:
        case ErrorCode::series_size:
        case ErrorCode::dimension:
            return 400;
        default:
            return 422;
    }
}

ApiResponse failure(int status, std::string_view code, const std::string& message, const std::string& field = {}) {
    ojson err = {{"code", code}, {"message", message}};
    if (!field.empty()) err["field"] = field;
    return {status, {{"ok", false}, {"error", err}, {"payload", nullptr}}};
}

}  // namespace

PowerRequest power_request_from_json(const json& j, bool sample_size) {
    if (sample_size) {
        only_fields(j, {"target_power", "z_spec", "psi", "delta", "sigma", "alpha", "alternative"});
    } else {
        only_fields(j, {"n", "z_spec", "psi", "delta", "sigma", "alpha", "alternative"});
    }
    PowerRequest req;
    if (sample_size) {
        req.target_power = number(j, "target_power");
        if (!req.target_power) throw FieldError(ErrorCode::invalid_request, "target_power", "target_power is required");
        if (!(*req.target_power > 0.0 && *req.target_power < 1.0)) {
            throw FieldError(ErrorCode::invalid_request, "target_power", "target_power must lie in (0, 1)");
        }
    } else {
        const auto n = integer(j, "n");
        if (!n) throw FieldError(ErrorCode::invalid_request, "n", "n is required");
        if (*n < 5 || *n > 10000000) throw FieldError(ErrorCode::invalid_request, "n", "n must lie in 5..10000000");
        req.n = static_cast<Index>(*n);
    }
    req.z_spec = z_spec_field(j);
    req.psi = number(j, "psi").value_or(0.5);
    req.delta = number(j, "delta").value_or(0.0);
    req.sigma = number(j, "sigma").value_or(1.0);
    if (!(req.sigma > 0.0)) throw FieldError(ErrorCode::invalid_request, "sigma", "sigma must be > 0");
    req.alpha = alpha_field(j, 0.01);
    req.alternative = alternative_field(j);
    req.validate();
    return req;
}

Series<double> series_from_json(const json& j) {
    if (!j.is_object()) throw FieldError(ErrorCode::invalid_request, "", "request body must be a JSON object");
    if (!j.contains("y")) throw FieldError(ErrorCode::invalid_request, "y", "y is required");
    auto s = Series<double>::from_values(vector_field(j, "y"));
    if (s.size() < 4) throw FieldError(ErrorCode::series_size, "y", "y needs at least 4 values");
    auto same_length = [&](const char* key, Index len) {
        if (len != s.size()) throw FieldError(ErrorCode::invalid_request, key, std::string(key) + " must have the length of y");
    };
    if (j.contains("z") && !j["z"].is_null()) {
        s.z = vector_field(j, "z");
        same_length("z", s.z->size());
    }
    if (j.contains("b") && !j["b"].is_null()) {
        s.b = vector_field(j, "b");
        same_length("b", s.b->size());
    }
    if (j.contains("labels") && !j["labels"].is_null()) {
        const json& a = j["labels"];
        if (!a.is_array()) throw FieldError(ErrorCode::invalid_request, "labels", "labels must be an array");
        for (const auto& v : a) s.labels.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        same_length("labels", static_cast<Index>(s.labels.size()));
    }
    return s;
}

ApiResponse handle_api(std::string_view path, std::string_view body) {
    json in;
    try {
        in = json::parse(body);
    } catch (const json::parse_error& e) {
        return failure(400, to_string(ErrorCode::parse), std::string("body is not valid JSON: ") + e.what());
    }
    try {
        ojson payload;
        if (path == "/api/power") {
            const PowerRequest req = power_request_from_json(in, false);
            payload = power_json(req, compute_power(req));
        } else if (path == "/api/samplesize") {
            const PowerRequest req = power_request_from_json(in, true);
            payload = sample_size_json(req, sample_size(req));
        } else if (path == "/api/test") {
            only_fields(in, {"y", "z", "b", "labels", "method", "alpha", "alternative", "kind", "l_critical"});
            const TestOptions opts = test_options_from_json(in);
            payload = to_json(run_tests(series_from_json(in), opts));
        } else if (path == "/api/preview") {
            payload = preview(in);
        } else {
            return failure(404, "not_found", "no endpoint " + std::string(path));
        }
        return {200, {{"ok", true}, {"error", nullptr}, {"payload", payload}}};
    } catch (const FieldError& e) {
        return failure(status_for(e.code()), to_string(e.code()), e.what(), e.field());
    } catch (const Error& e) {
        return failure(status_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::exception& e) {
        return failure(500, "internal", e.what());
    }
}

int default_port() {
    if (const char* p = std::getenv("SEGPOWER_PORT")) {
        char* end = nullptr;
        const long v = std::strtol(p, &end, 10);
        if (end == p || *end != '\0' || v < 1 || v > 65535) {
            throw Error(ErrorCode::configuration, std::string("SEGPOWER_PORT '") + p + "' is not a port number");
        }
        return static_cast<int>(v);
    }
    return 8080;
}

void serve(const std::string& host, int port) {
    httplib::Server svr;
    svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "POST, GET, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    svr.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"ok":true,"error":null,"payload":{"status":"up"}})", "application/json");
    });
    for (const char* path : {"/api/power", "/api/samplesize", "/api/test", "/api/preview"}) {
        svr.Post(path, [path](const httplib::Request& req, httplib::Response& res) {
            const ApiResponse r = handle_api(path, req.body);
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
        });
    }
    if (!svr.listen(host, port)) {
        throw Error(ErrorCode::configuration, "cannot listen on " + host + ":" + std::to_string(port));
    }
}

}  // namespace segpower
