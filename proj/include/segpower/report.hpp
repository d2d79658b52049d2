#pragma once

// Report model shared by the command line and the HTTP service. Both front ends build the
// same JSON objects; text and CSV are renderings of that JSON so every mode prints the
// same numbers.

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>

#include "segpower/power.hpp"
#include "segpower/pscore.hpp"
#include "segpower/simlab.hpp"
#include "segpower/tfcp.hpp"

namespace segpower {

enum class TestMethod { w, l, pscore, both };

std::string_view to_string(TestMethod m);
TestMethod parse_test_method(std::string_view s);
std::string_view to_string(Alternative a);
Alternative parse_alternative(std::string_view s);
std::string_view to_string(TermKind k);
TermKind parse_term_kind(std::string_view s);

struct TestOptions {
    TestMethod method = TestMethod::both;
    double alpha = 0.05;
    Alternative alternative = Alternative::two_sided;
    TermKind kind = TermKind::jump;
    /// Replaces the L critical value; required for L at alpha other than 0.05.
    std::optional<double> l_critical;
};

struct PScoreReport {
    PScoreResult<double> result;
    ChangepointEstimate<double> estimate;
    TermKind kind = TermKind::jump;
    std::string changepoint;
};

struct TestReport {
    Index n = 0;
    /// Item difficulties were supplied: binomial P.Score and L instead of W.
    bool binary = false;
    TestOptions options;
    std::optional<TmaxResult<double>> w;
    std::string w_changepoint;
    std::optional<LmaxResult<double>> l;
    std::string l_changepoint;
    std::optional<PScoreReport> pscore;
};

/// Runs the requested statistics on one series. Changepoints are reported as the label of the
/// first observation of the new regime.
TestReport run_tests(const Series<double>& series, const TestOptions& opts);

nlohmann::ordered_json to_json(const TestReport& r);
nlohmann::ordered_json power_json(const PowerRequest& req, const PowerResult& r);
nlohmann::ordered_json sample_size_json(const PowerRequest& req, const SampleSizeResult& r);
nlohmann::ordered_json posthoc_json(const SegmentedFit& fit, const PosthocOptions& opts, const PowerResult& r);
nlohmann::ordered_json to_json(const RejectionTable& t);

/// Indented "key: value" lines; nested objects become sections.
std::string render_text(const nlohmann::ordered_json& report);
/// Header row of dotted keys plus one value row. Arrays are skipped.
std::string render_csv(const nlohmann::ordered_json& report);
/// Aligned table for rejection-rate rows.
std::string render_text(const RejectionTable& t);

}  // namespace segpower
