#include "segpower/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <vector>

#include "segpower/errors.hpp"
#include "segpower/format.hpp"

namespace segpower {

using json = nlohmann::ordered_json;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string regime_label(const Series<double>& s, double first_after) {
    const auto& z = s.covariate();
    for (Index i = 0; i < z.size(); ++i) {
        if (z(i) == first_after) return s.label(i);
    }
    return shortest(first_after);
}

// Nonfinite numbers have no JSON form; they only arise from exact fits and read better as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json request_echo(const PowerRequest& req) {
    return {{"z_spec", req.z_spec.text()}, {"psi", req.psi},     {"delta", req.delta},
            {"sigma", req.sigma},          {"alpha", req.alpha}, {"alternative", to_string(req.alternative)}};
}

std::string scalar_text(const json& v) {
    if (v.is_number_float()) return shortest(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return "NA";
    return v.dump();
}

void text_lines(const json& obj, int depth, std::ostringstream& out) {
    const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    for (const auto& [key, v] : obj.items()) {
        if (v.is_object()) {
            out << pad << key << ":\n";
            text_lines(v, depth + 1, out);
        } else if (v.is_array()) {
            out << pad << key << ": [" << v.size() << " values]\n";
        } else {
            out << pad << key << ": " << scalar_text(v) << '\n';
        }
    }
}

void flatten(const json& obj, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
    for (const auto& [key, v] : obj.items()) {
        const std::string name = prefix.empty() ? key : prefix + "." + key;
        if (v.is_object()) {
            flatten(v, name, out);
        } else if (!v.is_array()) {
            out.emplace_back(name, scalar_text(v));
        }
    }
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (const char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + '"';
}

}  // namespace

std::string_view to_string(TestMethod m) {
    switch (m) {
        case TestMethod::w: return "w";
        case TestMethod::l: return "l";
        case TestMethod::pscore: return "pscore";
        case TestMethod::both: return "both";
    }
    return "both";
}

TestMethod parse_test_method(std::string_view s) {
    const std::string t = lower(s);
    if (t == "w") return TestMethod::w;
    if (t == "l") return TestMethod::l;
    if (t == "pscore") return TestMethod::pscore;
    if (t == "both") return TestMethod::both;
    throw Error(ErrorCode::configuration, "unknown method '" + std::string(s) + "' (w, l, pscore, both)");
}

std::string_view to_string(Alternative a) {
    switch (a) {
        case Alternative::two_sided: return "two-sided";
        case Alternative::greater: return "greater";
        case Alternative::less: return "less";
    }
    return "two-sided";
}

Alternative parse_alternative(std::string_view s) {
    const std::string t = lower(s);
    if (t == "two-sided" || t == "two_sided" || t == "two.sided") return Alternative::two_sided;
    if (t == "greater") return Alternative::greater;
    if (t == "less") return Alternative::less;
    throw Error(ErrorCode::configuration, "unknown alternative '" + std::string(s) + "' (two-sided, greater, less)");
}

std::string_view to_string(TermKind k) { return k == TermKind::jump ? "jump" : "broken-line"; }

TermKind parse_term_kind(std::string_view s) {
    const std::string t = lower(s);
    if (t == "jump") return TermKind::jump;
    if (t == "broken-line" || t == "broken_line") return TermKind::broken_line;
    throw Error(ErrorCode::configuration, "unknown term kind '" + std::string(s) + "' (jump, broken-line)");
}

TestReport run_tests(const Series<double>& series, const TestOptions& opts) {
    series.validate();
    if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw Error(ErrorCode::configuration, "alpha must lie in (0, 1)");
    const Index n = series.size();
    if (n < 4) throw Error(ErrorCode::series_size, "need at least 4 observations");
    if (series.y.maxCoeff() == series.y.minCoeff()) {
        throw Error(ErrorCode::degenerate_series, "the response is constant; there is no change to detect");
    }

    TestReport r;
    r.n = n;
    r.binary = series.b.has_value();
    r.options = opts;
    if (r.binary) {
        for (Index i = 0; i < n; ++i) {
            if (series.y(i) != 0.0 && series.y(i) != 1.0) {
                throw Error(ErrorCode::domain, "responses must be 0/1 when item difficulties are given");
            }
        }
    }

    const bool want_w = opts.method == TestMethod::w || (opts.method == TestMethod::both && !r.binary);
    const bool want_l = opts.method == TestMethod::l || (opts.method == TestMethod::both && r.binary);
    const bool want_p = opts.method == TestMethod::pscore || opts.method == TestMethod::both;
    if (want_w && r.binary) throw Error(ErrorCode::configuration, "W applies to Gaussian sequences; use L for item data");
    if (want_l && !r.binary) throw Error(ErrorCode::configuration, "L needs item difficulties (column b)");

    if (want_w) {
        r.w = w_max_test(series, opts.alpha);
        r.w_changepoint = series.label(r.w->j_hat);
    }
    if (want_l) {
        LmaxConfig cfg;
        if (opts.l_critical) {
            cfg.critical_value = *opts.l_critical;
        } else if (std::abs(opts.alpha - 0.05) > 1e-12) {
            throw Error(ErrorCode::unsupported_alpha, "the default L critical value 8.85 is for alpha = 0.05; supply one");
        }
        r.l = l_max_binary(series.y, *series.b, cfg);
        r.l_changepoint = series.label(r.l->j_hat);
    }
    if (want_p) {
        const Eigen::VectorXd& z = series.covariate();
        std::vector<Eigen::VectorXd> cols;
        if (opts.kind == TermKind::broken_line) cols.push_back(z);
        const auto x = build_design<double>(n, cols, true);
        PScoreOptions<double> po;
        po.alternative = opts.alternative;
        if (r.binary) {
            po.family = Family::binomial_logit;
            po.offset = -*series.b;
        }
        PScoreReport p;
        p.kind = opts.kind;
        p.result = pscore_statistic(series.y, x, make_term_spec(z, opts.kind), po);
        p.estimate = estimate_changepoint(series.y, x, z, opts.kind, po);
        p.result.psi_hat = p.estimate.psi_hat;
        p.changepoint = regime_label(series, p.estimate.first_after);
        r.pscore = std::move(p);
    }
    return r;
}

json to_json(const TestReport& r) {
    json j = {{"n", r.n},
              {"family", r.binary ? "binary" : "gaussian"},
              {"method", to_string(r.options.method)},
              {"alpha", r.options.alpha}};
    if (r.w) {
        const auto& d = *r.w->decision;
        j["w"] = {{"t_max", num(r.w->t_max)},
                  {"w_max", num(r.w->w_max)},
                  {"critical_value", d.critical.value},
                  {"critical_extrapolated", d.critical.extrapolated},
                  {"reject", d.reject},
                  {"split_after", r.w->j_hat},
                  {"changepoint", r.w_changepoint}};
    }
    if (r.l) {
        j["l"] = {{"l_max", r.l->l_max},
                  {"critical_value", r.l->critical_value},
                  {"reject", r.l->reject},
                  {"trim", r.l->n1},
                  {"split_after", r.l->j_hat},
                  {"theta1_hat", r.l->theta1_hat},
                  {"theta2_hat", r.l->theta2_hat},
                  {"changepoint", r.l_changepoint}};
    }
    if (r.pscore) {
        const auto& p = *r.pscore;
        j["pscore"] = {{"s0", p.result.s0},
                       {"p_value", p.result.p_value},
                       {"alternative", to_string(p.result.alternative)},
                       {"kind", to_string(p.kind)},
                       {"reject", p.result.p_value < r.options.alpha},
                       {"dispersion", p.result.dispersion_used},
                       {"psi_hat", p.estimate.psi_hat},
                       {"changepoint", p.changepoint}};
    }
    return j;
}

json power_json(const PowerRequest& req, const PowerResult& r) {
    json j = {{"n", r.n_used}, {"power", r.power}, {"e1", r.e1}};
    j.update(request_echo(req));
    return j;
}

json sample_size_json(const PowerRequest& req, const SampleSizeResult& r) {
    json j = {{"n", r.n}, {"power_at_n", r.power_at_n}, {"target_power", req.target_power.value_or(0.0)}};
    j.update(request_echo(req));
    return j;
}

json posthoc_json(const SegmentedFit& fit, const PosthocOptions& opts, const PowerResult& r) {
    json j = {{"n", r.n_used},
              {"power", r.power},
              {"e1", r.e1},
              {"alpha", opts.alpha},
              {"alternative", to_string(opts.alternative)},
              {"fit",
               {{"psi_hat", fit.psi_hat},
                {"delta_hat", fit.delta_hat},
                {"sigma_hat", fit.sigma_hat},
                {"se_delta", num(std::sqrt(fit.cov_delta_psi(0, 0)))},
                {"se_psi", num(std::sqrt(fit.cov_delta_psi(1, 1)))}}}};
    if (r.interval) {
        j["interval"] = {{"lower", r.interval->lower},
                         {"upper", r.interval->upper},
                         {"draws", r.interval->draws},
                         {"seed", opts.seed}};
    }
    return j;
}

json to_json(const RejectionTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows) {
        rows.push_back({{"scenario", r.scenario_id},
                        {"test", to_string(r.test)},
                        {"n", r.n},
                        {"delta", r.delta},
                        {"rate", r.rate},
                        {"reps", r.reps},
                        {"seed", r.seed}});
    }
    return {{"alpha", t.alpha}, {"rows", rows}};
}

std::string render_text(const json& report) {
    std::ostringstream out;
    text_lines(report, 0, out);
    return out.str();
}

std::string render_csv(const json& report) {
    std::vector<std::pair<std::string, std::string>> cells;
    flatten(report, "", cells);
    std::string head, row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        head += (i ? "," : "") + csv_field(cells[i].first);
        row += (i ? "," : "") + csv_field(cells[i].second);
    }
    return head + '\n' + row + '\n';
}

std::string render_text(const RejectionTable& t) {
    std::ostringstream out;
    out << std::left << std::setw(20) << "scenario" << std::setw(8) << "test" << std::right << std::setw(5) << "n"
        << std::setw(8) << "delta" << std::setw(8) << "rate" << std::setw(7) << "reps" << '\n';
    for (const auto& r : t.rows) {
        out << std::left << std::setw(20) << r.scenario_id << std::setw(8) << to_string(r.test) << std::right
            << std::setw(5) << r.n << std::setw(8) << shortest(r.delta) << std::setw(8) << shortest(r.rate)
            << std::setw(7) << r.reps << '\n';
    }
    out << "alpha " << shortest(t.alpha) << ", seed " << (t.rows.empty() ? 0 : t.rows.front().seed) << '\n';
    return out.str();
}

}  // namespace segpower
