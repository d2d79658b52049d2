#include <doctest.h>

#include <cmath>
#include <random>

#include "segpower/pscore.hpp"

using namespace segpower;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd seq(std::initializer_list<double> v) {
    VectorXd out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

DesignMatrix<double> intercept_only(Index n) { return build_design<double>(n, {}, true); }

DesignMatrix<double> with_z(const VectorXd& z) {
    const std::vector<VectorXd> cols{z};
    return build_design<double>(z.size(), cols, true);
}

VectorXd seeded_normal(Index n, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = nd(gen);
    return v;
}

}  // namespace

TEST_CASE("phi kinds") {
    const VectorXd z = seq({1, 2, 3, 4});
    CHECK(phi(z, 2.5, TermKind::jump) == seq({0, 0, 1, 1}));
    CHECK(phi(z, 2.5, TermKind::broken_line) == seq({0, 0, 0.5, 1.5}));
    try {
        phi(z, 1.0, TermKind::jump);
        FAIL("expected psi_out_of_range");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::psi_out_of_range);
    }
}

TEST_CASE("candidate psis") {
    const VectorXd z10 = VectorXd::LinSpaced(10, 0.1, 1.0);
    const VectorXd one = candidate_psis(z10, 1);
    REQUIRE(one.size() == 1);
    CHECK(one(0) == doctest::Approx(0.55));

    const VectorXd z9 = VectorXd::LinSpaced(9, 1.0 / 9, 1.0);
    const VectorXd nine = candidate_psis(z9, 9);
    CHECK(nine.size() <= 9);
    CHECK(nine.minCoeff() > z9.minCoeff());
    CHECK(nine.maxCoeff() < z9.maxCoeff());

    const VectorXd z100 = VectorXd::LinSpaced(100, 0.01, 1.0);
    const VectorXd ten = candidate_psis(z100, 10);
    CHECK(ten.size() == 10);
    for (Index k = 1; k < 10; ++k) CHECK(ten(k) > ten(k - 1));

    try {
        candidate_psis<double>(VectorXd::Ones(12), 10);
        FAIL("expected degenerate covariate");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_covariate);
    }
}

TEST_CASE("phi_bar") {
    SegmentedTermSpec<double> s;
    s.kind = TermKind::jump;
    s.z = seq({0.1, 0.5, 0.9});
    s.psis = seq({0.25, 0.75});
    CHECK(phi_bar(s).isApprox(seq({0, 0.5, 1.0})));

    s.psis = seq({0.3});
    CHECK(phi_bar(s) == phi(s.z, 0.3, TermKind::jump));

    const VectorXd z = VectorXd::LinSpaced(20, 0.05, 1.0);
    const auto spec = make_term_spec(z, TermKind::broken_line);
    VectorXd oracle = VectorXd::Zero(20);
    for (Index i = 0; i < 20; ++i) {
        for (Index k = 0; k < spec.K(); ++k) oracle(i) += std::max(0.0, z(i) - spec.psis(k));
        oracle(i) /= double(spec.K());
    }
    CHECK((phi_bar(spec) - oracle).cwiseAbs().maxCoeff() < 1e-12);

    SegmentedTermSpec<double> bad = s;
    bad.psis = seq({0.6, 0.4});
    CHECK_THROWS_AS(phi_bar(bad), Error);
}

TEST_CASE("s0 vanishes for responses in the null column space") {
    const VectorXd z = VectorXd::LinSpaced(10, 1, 10);
    PScoreOptions<double> o;
    o.dispersion = 1.0;
    const auto r = pscore_statistic<double>(VectorXd::Constant(10, 3.0), intercept_only(10),
                                            make_term_spec(z, TermKind::jump), o);
    CHECK(std::abs(r.s0) < 1e-12);
    CHECK(r.p_value == doctest::Approx(1.0));
    CHECK(r.dispersion_source == DispersionSource::supplied);

    try {
        pscore_statistic<double>(VectorXd::Constant(10, 3.0), intercept_only(10), make_term_spec(z, TermKind::jump));
        FAIL("expected degenerate dispersion");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_dispersion);
    }
}

TEST_CASE("s0 matches the closed form on a gaussian null") {
    const Index n = 25;
    const VectorXd z = VectorXd::LinSpaced(n, 0.04, 1.0);
    const VectorXd y = seeded_normal(n, 4);
    const auto x = with_z(z);
    const auto spec = make_term_spec(z, TermKind::broken_line);
    const auto r = pscore_statistic(y, x, spec);

    const MatrixXd& xv = x.values;
    const MatrixXd a = xv * (xv.transpose() * xv).inverse() * xv.transpose();
    const MatrixXd m = MatrixXd::Identity(n, n) - a;
    const VectorXd pb = phi_bar(spec);
    const double s2 = y.dot(m * y) / double(n - 2);
    CHECK(r.s0 == doctest::Approx(pb.dot(m * y) / std::sqrt(s2 * pb.dot(m * pb))).epsilon(1e-10));
    CHECK(r.dispersion_used == doctest::Approx(s2).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(2 * normal_cdf(-std::abs(r.s0))).epsilon(1e-12));
}

TEST_CASE("location invariance and scale equivariance") {
    const Index n = 30;
    const VectorXd z = VectorXd::LinSpaced(n, 1, double(n));
    const auto spec = make_term_spec(z, TermKind::jump);
    for (unsigned s = 0; s < 10; ++s) {
        const VectorXd y = seeded_normal(n, 300 + s);
        const auto base = pscore_statistic(y, intercept_only(n), spec);
        const auto shifted = pscore_statistic((y.array() + 17.0).matrix().eval(), intercept_only(n), spec);
        CHECK(std::abs(base.s0 - shifted.s0) < 1e-9);
        const double b = s % 2 ? -2.5 : 0.4;
        const auto scaled = pscore_statistic((b * y).eval(), intercept_only(n), spec);
        CHECK(std::abs(scaled.s0 - (b > 0 ? 1 : -1) * base.s0) < 1e-9);
    }
}

TEST_CASE("p-value alternatives") {
    for (double s0 : {-3.0, -0.4, 0.0, 1.1, 5.0}) {
        CHECK(std::abs(p_value(s0, Alternative::greater) + p_value(s0, Alternative::less) - 1.0) < 1e-12);
        CHECK(p_value(s0, Alternative::two_sided) <= 1.0);
    }
    CHECK(p_value(0.0, Alternative::two_sided) == doctest::Approx(1.0));
}

TEST_CASE("non-identifiable when phibar lies in the null column space") {
    const VectorXd z = VectorXd::LinSpaced(12, 1, 12);
    const auto spec = make_term_spec(z, TermKind::jump);
    const std::vector<VectorXd> cols{phi_bar(spec)};
    const auto x = build_design<double>(12, cols, true);
    try {
        pscore_statistic(seeded_normal(12, 1), x, spec);
        FAIL("expected non_identifiable");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::non_identifiable);
    }
}

TEST_CASE("alt-fit dispersion is the best single split RSS") {
    const Index n = 16;
    const VectorXd z = VectorXd::LinSpaced(n, 1, double(n));
    VectorXd y = seeded_normal(n, 8);
    y.tail(6).array() += 2.0;
    PScoreOptions<double> o;
    o.estimate_dispersion_under = DispersionSource::alt_fit;
    const auto r = pscore_statistic(y, intercept_only(n), make_term_spec(z, TermKind::jump), o);
    CHECK(r.dispersion_source == DispersionSource::alt_fit);

    double best = 1e300;
    for (Index j = 1; j < n; ++j) {
        const double m1 = y.head(j).mean(), m2 = y.tail(n - j).mean();
        const double rss = (y.head(j).array() - m1).square().sum() + (y.tail(n - j).array() - m2).square().sum();
        best = std::min(best, rss);
    }
    CHECK(r.dispersion_used == doctest::Approx(best / double(n - 2)).epsilon(1e-10));
}

TEST_CASE("binomial s0 on the working scale") {
    const Index n = 30;
    const VectorXd z = VectorXd::LinSpaced(n, 1, double(n));
    const VectorXd b = seeded_normal(n, 12);
    std::mt19937_64 gen(13);
    std::uniform_real_distribution<double> u;
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) y(i) = u(gen) < 1.0 / (1.0 + std::exp(b(i) - (i >= 15 ? 1.0 : 0.0))) ? 1 : 0;

    PScoreOptions<double> o;
    o.family = Family::binomial_logit;
    o.offset = -b;
    const auto spec = make_term_spec(z, TermKind::jump);
    const auto r = pscore_statistic(y, intercept_only(n), spec, o);

    const auto fit = fit_null_binomial<double>(y, intercept_only(n), -b);
    const VectorXd w = fit.weights;
    const VectorXd pb = phi_bar(spec);
    const MatrixXd x = MatrixXd::Ones(n, 1);
    const MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
    const double var = pb.dot(w.asDiagonal() * pb) -
                       (pb.transpose() * w.asDiagonal() * x * xtwx.inverse() * x.transpose() * w.asDiagonal() * pb)(0, 0);
    CHECK(r.s0 == doctest::Approx(pb.dot(y - fit.fitted) / std::sqrt(var)).epsilon(1e-9));
    CHECK(r.dispersion_used == 1.0);
}

TEST_CASE("estimate_changepoint") {
    SUBCASE("noiseless jump") {
        const Index n = 50;
        const VectorXd z = VectorXd::LinSpaced(n, 0.02, 1.0);
        const VectorXd y = (z.array() > 0.5).cast<double>();
        const auto e = estimate_changepoint(y, intercept_only(n), z, TermKind::jump);
        CHECK(e.psi_hat >= 0.48);
        CHECK(e.psi_hat <= 0.52);
    }
    SUBCASE("exhaustive split oracle") {
        for (unsigned s = 0; s < 10; ++s) {
            const Index n = 12;
            const VectorXd z = VectorXd::LinSpaced(n, 1, double(n));
            VectorXd y = seeded_normal(n, 40 + s);
            y.tail(5).array() += 1.0;
            // single jump after observation j, intercept-only null
            Index best_j = 0;
            double best = -1;
            for (Index j = 1; j < n; ++j) {
                const double m = double(n - j);
                const double num = (y.tail(n - j).array() - y.mean()).sum();
                const double stat = std::abs(num) / std::sqrt(m - m * m / double(n));
                if (stat > best + 1e-12) {
                    best = stat;
                    best_j = j;
                }
            }
            const auto e = estimate_changepoint(y, intercept_only(n), z, TermKind::jump);
            CHECK(e.first_after == z(best_j));
            CHECK(std::abs(e.statistic) == doctest::Approx(best).epsilon(1e-9));
        }
    }
    SUBCASE("grid for long series uses quantiles") {
        const VectorXd z = VectorXd::LinSpaced(500, 0, 1);
        CHECK(detail::changepoint_grid(z, 0).size() == 200);
        CHECK(detail::changepoint_grid(VectorXd::LinSpaced(50, 0, 1).eval(), 0).size() == 49);
    }
}
