#include "segpower/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <iterator>
#include <cerrno>
#include <optional>

#include "segpower/errors.hpp"
#include "segpower/report.hpp"
#include "segpower/series_io.hpp"
#include "segpower/service.hpp"
#include "segpower/simlab.hpp"

namespace segpower {
namespace {

using ojson = nlohmann::ordered_json;

struct Usage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::configuration:
        case ErrorCode::domain:
        case ErrorCode::parse:
        case ErrorCode::psi_out_of_range:
        case ErrorCode::target_below_size:
        case ErrorCode::unsupported_alpha:
        case ErrorCode::invalid_request:
            return kExitUsage;
        default:
            return kExitData;
    }
}

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("SEGPOWER_SEED");
    if (!s || !*s) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*s == '-' || *end != '\0' || errno == ERANGE) throw Usage(std::string("SEGPOWER_SEED '") + s + "' is not a seed");
    return v;
}

void emit(std::ostream& out, const std::string& format, const std::string& command, ojson report) {
    if (format == "json") {
        ojson j = {{"command", command}};
        j.update(report);
        out << j.dump(2) << '\n';
    } else if (format == "csv") {
        out << render_csv(report);
    } else {
        out << render_text(report);
    }
}

struct PowerFlags {
    std::optional<long long> n;
    std::optional<double> target;
    std::string z = "equispaced";
    double psi = 0.5;
    double delta = 0.0;
    double sigma = 1.0;
    double alpha = 0.01;
    std::string alternative = "two-sided";

    void add(CLI::App* cmd, bool sample_size) {
        if (sample_size) {
            cmd->add_option("--power", target, "target power in (0, 1)")->required();
        } else {
            cmd->add_option("--n", n, "sample size (>= 5)")->required();
        }
        cmd->add_option("--z", z, "covariate: equispaced, normal(m,s), uniform(a,b), exponential(r), beta(a,b), or a list")
            ->capture_default_str();
        cmd->add_option("--psi", psi, "changepoint on the z scale")->capture_default_str();
        cmd->add_option("--delta", delta, "slope difference")->capture_default_str();
        cmd->add_option("--sigma", sigma, "error standard deviation")->capture_default_str();
        cmd->add_option("--alpha", alpha, "significance level")->capture_default_str();
        cmd->add_option("--alternative", alternative, "two-sided, greater or less")->capture_default_str();
    }

    PowerRequest request() const {
        PowerRequest req;
        if (n) {
            if (*n < 5) throw Error(ErrorCode::domain, "--n must be >= 5");
            req.n = static_cast<Index>(*n);
        }
        req.target_power = target;
        try {
            req.z_spec = parse_covariate_spec(z);
        } catch (const ParseError& e) {
            throw Error(ErrorCode::parse, "--z: " + std::string(e.what()) + " (at character " +
                                              std::to_string(e.position()) + ")");
        }
        req.psi = psi;
        req.delta = delta;
        req.sigma = sigma;
        req.alpha = alpha;
        req.alternative = parse_alternative(alternative);
        req.validate();
        return req;
    }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Changepoint tests and power analysis for segmented models", "segpower"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string format = "text";
    app.add_option("--output", format, "text, json or csv")
        ->check(CLI::IsMember({"text", "json", "csv"}))
        ->capture_default_str();

    // test
    auto* test = app.add_subcommand("test", "run W / L / P.Score on a series from a CSV file");
    std::string test_input;
    std::string method = "both", test_alt = "two-sided", kind = "jump";
    double test_alpha = 0.05;
    std::optional<double> l_critical;
    test->add_option("input", test_input, "CSV with column y and optional z, label, b")->required();
    test->add_option("--method", method, "w, l, pscore or both")->capture_default_str();
    test->add_option("--alpha", test_alpha, "significance level")->capture_default_str();
    test->add_option("--alternative", test_alt, "P.Score alternative")->capture_default_str();
    test->add_option("--kind", kind, "P.Score term: jump or broken-line")->capture_default_str();
    test->add_option("--l-critical", l_critical, "L critical value (default 8.85 at alpha 0.05)");

    // power / samplesize
    auto* power = app.add_subcommand("power", "analytic power of the P.Score test");
    PowerFlags pf;
    pf.add(power, false);
    auto* ss = app.add_subcommand("samplesize", "smallest n reaching a target power");
    PowerFlags sf;
    sf.add(ss, true);

    // posthoc
    auto* posthoc = app.add_subcommand("posthoc", "power at the estimates of a fitted broken-line model");
    std::string posthoc_input;
    double posthoc_alpha = 0.01;
    std::string posthoc_alt = "two-sided";
    std::optional<int> ci_draws;
    std::optional<std::uint64_t> posthoc_seed;
    posthoc->add_option("input", posthoc_input, "CSV with columns y and z")->required();
    posthoc->add_option("--alpha", posthoc_alpha, "significance level")->capture_default_str();
    posthoc->add_option("--alternative", posthoc_alt, "two-sided, greater or less")->capture_default_str();
    posthoc->add_option("--ci-draws", ci_draws, "draws for a percentile interval")->check(CLI::PositiveNumber);
    posthoc->add_option("--seed", posthoc_seed, "seed for the interval draws (else SEGPOWER_SEED, else 1)");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo rejection rates from a scenario file");
    std::string config_path;
    std::optional<int> reps;
    std::optional<std::uint64_t> sim_seed;
    std::optional<unsigned> workers;
    simulate->add_option("--config", config_path, "scenario file, e.g. scenarios/table2.cfg")->required();
    simulate->add_option("--reps", reps, "replicates per cell")->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim_seed, "base seed (else the file's seed, else SEGPOWER_SEED, else 1)");
    simulate->add_option("--workers", workers, "worker threads (0 = all cores)");

    // serve / api
    auto* serve_cmd = app.add_subcommand("serve", "start the HTTP JSON API");
    std::string host = "127.0.0.1";
    std::optional<int> port;
    serve_cmd->add_option("--host", host, "bind address")->capture_default_str();
    serve_cmd->add_option("--port", port, "port (else SEGPOWER_PORT, else 8080)")->check(CLI::Range(1, 65535));

    auto* api = app.add_subcommand("api", "answer one API request offline and print the response envelope");
    std::string api_path;
    std::optional<std::string> api_body;
    api->add_option("path", api_path, "endpoint, e.g. /api/power")->required();
    api->add_option("--body", api_body, "request JSON (default: read stdin)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "segpower: " << e.what() << '\n';
        if (app.get_subcommands().empty()) err << "run 'segpower --help' for usage\n";
        return kExitUsage;
    }

    try {
        if (test->parsed()) {
            TestOptions o;
            o.method = parse_test_method(method);
            o.alpha = test_alpha;
            o.alternative = parse_alternative(test_alt);
            o.kind = parse_term_kind(kind);
            o.l_critical = l_critical;
            const auto series = ingest_series(test_input);
            emit(out, format, "test", to_json(run_tests(series, o)));
        } else if (power->parsed()) {
            const PowerRequest req = pf.request();
            emit(out, format, "power", power_json(req, compute_power(req)));
        } else if (ss->parsed()) {
            const PowerRequest req = sf.request();
            emit(out, format, "samplesize", sample_size_json(req, sample_size(req)));
        } else if (posthoc->parsed()) {
            if (!(posthoc_alpha > 0.0 && posthoc_alpha < 1.0)) throw Usage("--alpha must lie in (0, 1)");
            PosthocOptions o;
            o.alpha = posthoc_alpha;
            o.alternative = parse_alternative(posthoc_alt);
            o.ci_draws = ci_draws;
            o.seed = posthoc_seed ? *posthoc_seed : env_seed().value_or(1);
            const auto series = ingest_series(posthoc_input);
            const Eigen::VectorXd& z = series.covariate();
            const auto x = null_design(z);
            const SegmentedFit fit = fit_segmented(series.y, x, z);
            emit(out, format, "posthoc", posthoc_json(fit, o, posthoc_power(fit, z, x, o)));
        } else if (simulate->parsed()) {
            SimulationConfig cfg = load_simulation_config(config_path);
            if (sim_seed) {
                cfg.options.seed = *sim_seed;
            } else if (!cfg.seed_in_file) {
                cfg.options.seed = env_seed().value_or(cfg.options.seed);
            }
            if (reps) cfg.options.reps = *reps;
            if (workers) cfg.options.workers = *workers;
            const RejectionTable table = rejection_rates(cfg.scenarios, cfg.tests, cfg.options);
            if (format == "csv") {
                out << table.to_csv();
            } else if (format == "json") {
                ojson j = {{"command", "simulate"}};
                j.update(to_json(table));
                out << j.dump(2) << '\n';
            } else {
                out << render_text(table);
            }
        } else if (serve_cmd->parsed()) {
            const int p = port ? *port : default_port();
            err << "segpower: serving on http://" << host << ":" << p << '\n';
            serve(host, p);
        } else if (api->parsed()) {
            std::string body;
            if (api_body) {
                body = *api_body;
            } else {
                body.assign(std::istreambuf_iterator<char>(std::cin), {});
            }
            const ApiResponse r = handle_api(api_path, body);
            out << r.body.dump(2) << '\n';
            if (r.status >= 500 || r.status == 422) return kExitData;
            return r.status == 200 ? kExitOk : kExitUsage;
        }
    } catch (const Usage& e) {
        err << "segpower: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IngestionError& e) {
        err << "segpower: " << e.what() << '\n';
        return kExitData;
    } catch (const Error& e) {
        err << "segpower: " << to_string(e.code()) << ": " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "segpower: " << e.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

}  // namespace segpower
