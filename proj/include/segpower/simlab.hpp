#pragma once

// Monte Carlo rejection rates for the Gaussian jump design and the Rasch item
// sequence design. Every replicate draws from its own counter-derived stream, and
// all tests in a cell see the same replicate data.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "segpower/tfcp.hpp"

namespace segpower {

struct NormalScenario {
    Index n = 50;
    double beta = 2.0;
    double delta = 0.0;
    /// Jump location on the z = (1..n)/n scale.
    double psi = 0.5;
    double sigma = 0.3;

    void validate() const;
};

struct BinaryScenario {
    Index n = 50;
    double delta = 0.0;
    /// First item (1-based) answered with the shifted ability.
    std::optional<Index> changepoint_item;

    /// 11, 15, 21, 25 for n = 20, 30, 40, 50; ceil(n/2) + 1 otherwise.
    Index changepoint() const;
    void validate() const;
};

using Scenario = std::variant<NormalScenario, BinaryScenario>;

enum class TestName { pscore, w, l };

std::string_view to_string(TestName t);
TestName parse_test_name(std::string_view s);

/// "normal-n50-d1", "binary-n20-d3".
std::string scenario_id(const Scenario& s);

struct RaschDraw {
    Eigen::VectorXd y;
    Eigen::VectorXd b;
    double theta1 = 0;
    double theta2 = 0;
};

/// y_i = beta + delta I(z_i > psi) + sigma eps_i with z_i = i / n.
Series<double> simulate_normal_jump(const NormalScenario& s, std::uint64_t seed, std::uint64_t replicate = 0);

/// b_i ~ N(0,1), theta1 ~ N(0,1), theta2 = theta1 + delta, y_i ~ Bernoulli(logistic(theta - b_i)).
RaschDraw simulate_rasch(const BinaryScenario& s, std::uint64_t seed, std::uint64_t replicate = 0);

struct RejectionRow {
    std::string scenario_id;
    TestName test = TestName::pscore;
    Index n = 0;
    double delta = 0;
    double rate = 0;
    int reps = 0;
    std::uint64_t seed = 0;
};

struct RejectionTable {
    std::vector<RejectionRow> rows;
    double alpha = 0.05;

    /// One line per cell; rates printed with shortest round-trip formatting.
    std::string to_csv() const;
};

struct SimulationOptions {
    int reps = 1000;
    double alpha = 0.05;
    std::uint64_t seed = 1;
    /// 0 picks the hardware concurrency.
    unsigned workers = 0;
    LmaxConfig lmax;
    /// Set when lmax.critical_value was chosen for this alpha on purpose.
    bool lmax_critical_overridden = false;
};

RejectionTable rejection_rates(const std::vector<Scenario>& scenarios, const std::vector<TestName>& tests,
                               const SimulationOptions& opts);

/// Flat key = value scenario file. List-valued keys (n, delta, changepoint) expand to a grid.
///
///   family = normal | binary
///   n = 20, 30, 40, 50
///   delta = 0, 0.25, 0.5, 1
///   sigma, beta, psi            (normal)
///   changepoint = 11, 15, 21, 25 (binary; paired with n)
///   tests = pscore, w | pscore, l
///   reps, alpha, seed, workers, l_critical
struct SimulationConfig {
    std::vector<Scenario> scenarios;
    std::vector<TestName> tests;
    SimulationOptions options;
    /// The file set `seed`; front ends let it outrank environment fallbacks.
    bool seed_in_file = false;
};

SimulationConfig parse_simulation_config(std::string_view text);
SimulationConfig load_simulation_config(const std::string& path);

}  // namespace segpower
