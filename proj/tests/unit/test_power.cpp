#include <doctest.h>

#include <cmath>
#include <random>

#include "segpower/power.hpp"
#include "segpower/rng.hpp"

using namespace segpower;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

PowerRequest anchor() {
    PowerRequest r;
    r.n = 100;
    r.z_spec = parse_covariate_spec("equispaced");
    r.psi = 0.6;
    r.delta = 0.5;
    r.sigma = 0.1;
    r.alpha = 0.01;
    return r;
}

double power_of(PowerRequest r) { return compute_power(r).power; }

}  // namespace

TEST_CASE("power_from_e1") {
    CHECK(power_from_e1(0.0, 0.05, Alternative::two_sided) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(power_from_e1(0.0, 0.01, Alternative::greater) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(power_from_e1(0.0, 0.01, Alternative::less) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(power_from_e1(20.0, 0.01, Alternative::two_sided) >= 1 - 1e-12);
    CHECK(power_from_e1(-20.0, 0.01, Alternative::two_sided) >= 1 - 1e-12);
    CHECK(power_from_e1(20.0, 0.01, Alternative::greater) >= 1 - 1e-12);
    CHECK(power_from_e1(-20.0, 0.01, Alternative::less) >= 1 - 1e-12);
    CHECK_THROWS_AS(power_from_e1(1.0, 1.0, Alternative::two_sided), Error);
}

TEST_CASE("expected_s0 is linear in delta") {
    const VectorXd z = VectorXd::LinSpaced(40, 0.025, 1.0);
    const auto x = null_design(z);
    CHECK(expected_s0(z, 0.4, 0.0, 0.3, x) == 0.0);
    const double e = expected_s0(z, 0.4, 0.7, 0.3, x);
    CHECK(expected_s0(z, 0.4, 1.4, 0.3, x) == doctest::Approx(2 * e).epsilon(1e-14));
    CHECK_THROWS_AS(expected_s0(z, 1.0, 1.0, 0.3, x), Error);
}

TEST_CASE("expected_s0 closed form with explicit hat matrix") {
    const Index n = 30;
    const VectorXd z = VectorXd::LinSpaced(n, 1.0 / n, 1.0);
    const auto x = null_design(z);
    const MatrixXd& xv = x.values;
    const MatrixXd m = MatrixXd::Identity(n, n) - xv * (xv.transpose() * xv).inverse() * xv.transpose();
    const VectorXd pb = phi_bar(make_term_spec(z, TermKind::broken_line));
    const VectorXd h = (z.array() - 0.5).max(0.0).matrix();
    const double oracle = 1.0 * pb.dot(m * h) / std::sqrt(0.09 * pb.dot(m * pb));
    CHECK(expected_s0(z, 0.5, 1.0, 0.3, x) == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("compute_power anchors") {
    CHECK(std::abs(power_of(anchor()) - 0.749) < 0.005);
    auto r = anchor();
    r.delta = 0;
    CHECK(power_of(r) == doctest::Approx(0.01).epsilon(1e-12));

    r = anchor();
    r.psi = 2.0;
    try {
        compute_power(r);
        FAIL("expected psi_out_of_range");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::psi_out_of_range);
    }
    r = anchor();
    r.target_power = 0.8;
    CHECK_THROWS_AS(compute_power(r), Error);
}

TEST_CASE("power monotonicity and symmetry") {
    double prev = 0;
    for (Index n = 20; n <= 300; n += 7) {
        auto r = anchor();
        r.n = n;
        const double p = power_of(r);
        CHECK(p >= prev - 0.002);
        prev = std::max(prev, p);
    }
    prev = 0;
    for (double d = 0.05; d < 1.5; d += 0.05) {
        auto r = anchor();
        r.delta = d;
        const double p = power_of(r);
        CHECK(p > prev);
        prev = p;
        r.delta = -d;
        CHECK(std::abs(power_of(r) - p) < 1e-12);
    }
    prev = 1.1;
    for (double s = 0.05; s < 1.0; s += 0.05) {
        auto r = anchor();
        r.sigma = s;
        const double p = power_of(r);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("power falls toward the covariate boundaries") {
    auto r = anchor();
    r.delta = 0.3;
    r.psi = 0.5;
    const double mid = power_of(r);
    r.psi = 0.1;
    const double low = power_of(r);
    r.psi = 0.9;
    const double high = power_of(r);
    CHECK(low <= mid + 1e-9);
    CHECK(high <= mid + 1e-9);
}

// E1 = <M phibar, M h> / |M phibar| can tick up when a column is added (the angle
// between the projected vectors may shrink), so the pointwise claim is false. What
// does hold: the bound |M h| delta / sigma never grows, and on average over
// independent noise columns power does not rise.
TEST_CASE("noise covariates and analytic power") {
    auto r = anchor();
    r.delta = 0.3;
    const double base = power_of(r);
    const VectorXd z = realize_covariate(r.z_spec, 100);
    const VectorXd h = (z.array() - r.psi).max(0.0).matrix();
    const double bound = Annihilator<double>(null_design(z).values).quadratic(h);
    double sum = 0;
    const int draws = 200;
    for (int s = 0; s < draws; ++s) {
        Stream rng(77, static_cast<std::uint64_t>(s));
        MatrixXd extra(100, 1);
        for (Index i = 0; i < 100; ++i) extra(i, 0) = rng.normal();
        r.extra_covariates = extra;
        sum += power_of(r);
        CHECK(Annihilator<double>(null_design(z, extra).values).quadratic(h) <= bound + 1e-12);
    }
    CHECK(sum / draws <= base + 1e-9);
}

TEST_CASE("sample size bracketing across covariate families") {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> u;
    const char* specs[] = {"equispaced", "normal(5,1.5)", "uniform(0,10)", "exponential(1)", "beta(2,2)"};
    for (int t = 0; t < 10; ++t) {
        PowerRequest r;
        r.z_spec = parse_covariate_spec(specs[t % 5]);
        const VectorXd z = realize_covariate(r.z_spec, 1000);
        r.psi = z(300 + static_cast<Index>(u(gen) * 400));
        r.delta = (0.5 + u(gen)) / (z(999) - z(0));
        r.sigma = 0.05 + 0.1 * u(gen);
        r.alpha = t % 2 ? 0.05 : 0.01;
        const double target = 0.6 + 0.35 * u(gen);
        r.target_power = target;
        const auto ss = sample_size(r);

        PowerRequest at = r;
        at.target_power.reset();
        at.n = ss.n;
        CHECK(power_of(at) == ss.power_at_n);
        CHECK(ss.power_at_n >= target);
        if (ss.n > 5) {
            at.n = ss.n - 1;
            double p = 0;
            try {
                p = power_of(at);
            } catch (const Error&) {
            }
            CHECK(p < target);
        }
    }
}

TEST_CASE("sample size meets its target and the predecessor does not") {
    std::mt19937_64 gen(99);
    std::uniform_real_distribution<double> u;
    for (int t = 0; t < 15; ++t) {
        PowerRequest r;
        r.z_spec = parse_covariate_spec(t % 2 ? "equispaced" : "normal(0,1)");
        r.psi = t % 2 ? 0.3 + 0.4 * u(gen) : -0.8 + 1.6 * u(gen);
        r.delta = 0.3 + 2 * u(gen);
        r.sigma = 0.3 + u(gen);
        const double target = 0.5 + 0.45 * u(gen);
        r.target_power = target;
        const auto ss = sample_size(r);
        CHECK(ss.power_at_n >= target);
        if (ss.n > 5) {
            PowerRequest prev = r;
            prev.target_power.reset();
            prev.n = ss.n - 1;
            double p = 0;
            try {
                p = power_of(prev);
            } catch (const Error&) {
            }
            CHECK(p < target);
        }
    }
}

TEST_CASE("sample size floors and errors") {
    PowerRequest r;
    r.z_spec = parse_covariate_spec("equispaced");
    r.psi = 0.5;
    r.delta = 50;
    r.sigma = 0.1;
    r.alpha = 0.01;
    r.target_power = 0.01 + 1e-6;
    CHECK(sample_size(r).n == 5);

    r.target_power = 0.01;
    try {
        sample_size(r);
        FAIL("expected target_below_size");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::target_below_size);
    }
    r.target_power = 0.8;
    r.delta = 0;
    try {
        sample_size(r);
        FAIL("expected unreachable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unreachable);
    }
}

TEST_CASE("fit_segmented recovers a noiseless broken line") {
    const Index n = 100;
    const VectorXd z = VectorXd::LinSpaced(n, 0.01, 1.0);
    const VectorXd y = (1.0 + 0.5 * (z.array() - 0.6).max(0.0)).matrix();
    const auto x = null_design(z);
    const auto prof = profile_segmented(y, x, z);
    CHECK(std::abs(prof.delta_hat - 0.5) < 1e-6);
    CHECK(std::abs(prof.psi_hat - 0.6) <= 0.01);
    VectorXd noisy = y;
    noisy(3) += 1e-3;
    const auto fit = fit_segmented(noisy, x, z);
    CHECK((fit.cov_delta_psi - fit.cov_delta_psi.transpose()).norm() < 1e-15);
    CHECK(fit.cov_delta_psi.determinant() >= -1e-20);

    try {
        fit_segmented(VectorXd::Constant(n, 2.0), x, z);
        FAIL("expected flat fit");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::flat_fit);
    }
}

// The delta-method covariance is an asymptotic statement; at delta / sigma = 10 and
// n = 100 the bootstrap psi_hat has heavy tails (its IQR-based sd still agrees), so
// the oracle instance is a well-identified one.
TEST_CASE("fit_segmented covariance against a parametric bootstrap") {
    const Index n = 100;
    const VectorXd z = VectorXd::LinSpaced(n, 0.01, 1.0);
    const auto x = null_design(z);
    auto simulate = [&](std::uint64_t seed, double psi, double delta, double sigma, const VectorXd& beta) {
        Stream rng(seed, 0);
        VectorXd y(n);
        for (Index i = 0; i < n; ++i) {
            y(i) = beta(0) + beta(1) * z(i) + delta * std::max(0.0, z(i) - psi) + sigma * rng.normal();
        }
        return y;
    };
    const VectorXd truth = (VectorXd(2) << 0.0, 0.0).finished();
    const auto fit = fit_segmented(simulate(123, 0.5, 1.0, 0.03, truth), x, z);

    const int reps = 500;
    std::vector<Eigen::Vector2d> draws;
    for (int b = 0; b < reps; ++b) {
        const auto f = fit_segmented(simulate(1000 + b, fit.psi_hat, fit.delta_hat, fit.sigma_hat, fit.beta_hat), x, z);
        draws.emplace_back(f.delta_hat, f.psi_hat);
    }
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& d : draws) mean += d;
    mean /= reps;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& d : draws) cov += (d - mean) * (d - mean).transpose();
    cov /= reps - 1;
    MESSAGE("linearized sd(delta) " << std::sqrt(fit.cov_delta_psi(0, 0)) << " bootstrap " << std::sqrt(cov(0, 0)));
    MESSAGE("linearized sd(psi) " << std::sqrt(fit.cov_delta_psi(1, 1)) << " bootstrap " << std::sqrt(cov(1, 1)));
    CHECK(std::abs(fit.cov_delta_psi(0, 0) / cov(0, 0) - 1) < 0.25);
    CHECK(std::abs(fit.cov_delta_psi(1, 1) / cov(1, 1) - 1) < 0.25);
}

TEST_CASE("posthoc interval") {
    const Index n = 100;
    const VectorXd z = VectorXd::LinSpaced(n, 0.01, 1.0);
    const auto x = null_design(z);
    SegmentedFit fit;
    fit.psi_hat = 0.6;
    fit.delta_hat = 0.5;
    fit.sigma_hat = 0.1;
    fit.beta_hat = VectorXd::Zero(2);

    PosthocOptions o;
    o.ci_draws = 200;
    const auto point = posthoc_power(fit, z, x, o);
    REQUIRE(point.interval);
    CHECK(point.interval->lower == doctest::Approx(point.power).epsilon(1e-12));
    CHECK(point.interval->upper == doctest::Approx(point.power).epsilon(1e-12));

    fit.cov_delta_psi << 0.04, 0.001, 0.001, 0.004;
    const auto a = posthoc_power(fit, z, x, o);
    const auto b = posthoc_power(fit, z, x, o);
    CHECK(a.interval->lower == b.interval->lower);
    CHECK(a.interval->upper == b.interval->upper);
    CHECK(a.interval->lower < a.power);
    CHECK(a.interval->upper > a.power);

    fit.cov_delta_psi << 0.04, 0.1, 0.1, 0.004;
    try {
        posthoc_power(fit, z, x, o);
        FAIL("expected not_psd");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::not_psd);
    }
}
