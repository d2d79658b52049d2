#include "segpower/power.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "segpower/normal.hpp"
#include "segpower/rng.hpp"

namespace segpower {

namespace {

constexpr Index kMinSampleSize = 5;
constexpr Index kMaxSampleSize = 10'000'000;
constexpr int kRippleScan = 4;

bool psi_interior(const Eigen::VectorXd& z, double psi) { return psi > z.minCoeff() && psi < z.maxCoeff(); }

Eigen::VectorXd hinge(const Eigen::VectorXd& z, double psi) { return (z.array() - psi).max(0.0).matrix(); }

// Power at a trial n, with configurations the covariate cannot support counted as failures.
std::optional<PowerResult> power_at(PowerRequest req, Index n) {
    req.n = n;
    req.target_power.reset();
    try {
        return compute_power(req);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::psi_out_of_range || e.code() == ErrorCode::non_identifiable ||
            e.code() == ErrorCode::degenerate_covariate) {
            return std::nullopt;
        }
        throw;
    }
}

}  // namespace

void PowerRequest::validate() const {
    if (n.has_value() == target_power.has_value()) {
        throw Error(ErrorCode::configuration, "exactly one of n and target power must be set");
    }
    if (n && *n < kMinSampleSize) throw Error(ErrorCode::domain, "n must be >= 5");
    if (target_power && !(*target_power > 0.0 && *target_power < 1.0)) {
        throw Error(ErrorCode::domain, "target power must lie in (0, 1)");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::domain, "alpha must lie in (0, 1)");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::domain, "sigma must be > 0");
    if (!std::isfinite(psi) || !std::isfinite(delta)) throw Error(ErrorCode::domain, "psi and delta must be finite");
    if (extra_covariates && !extra_covariates->allFinite()) {
        throw Error(ErrorCode::domain, "extra covariates must be finite");
    }
}

DesignMatrix<double> null_design(const Eigen::VectorXd& z, const std::optional<Eigen::MatrixXd>& extras) {
    std::vector<Eigen::VectorXd> cols{z};
    std::vector<std::string> names{"z"};
    if (extras) {
        if (extras->rows() != z.size()) throw Error(ErrorCode::dimension, "extra covariates need one row per observation");
        for (Index j = 0; j < extras->cols(); ++j) {
            cols.emplace_back(extras->col(j));
            names.push_back("x" + std::to_string(j + 1));
        }
    }
    return build_design<double>(z.size(), cols, true, names);
}

PowerKernel::PowerKernel(const Eigen::VectorXd& z, const DesignMatrix<double>& x, TermKind kind, int candidates)
    : z_(z) {
    if (x.rows() != z.size()) throw Error(ErrorCode::dimension, "design rows do not match z");
    phi_bar_ = segpower::phi_bar(make_term_spec(z, kind, candidates));
    const Annihilator<double> ann(x.values);
    residual_phi_ = ann.apply(phi_bar_);
    quad_ = phi_bar_.dot(residual_phi_);
    if (detail::variance_negligible(quad_, phi_bar_)) {
        throw Error(ErrorCode::non_identifiable, "averaged segmented term lies in the null column space");
    }
}

double PowerKernel::e1(double psi, double delta, double sigma) const {
    if (!psi_interior(z_, psi)) throw Error(ErrorCode::psi_out_of_range, "psi must lie strictly inside the z range");
    if (!(sigma > 0.0)) throw Error(ErrorCode::domain, "sigma must be > 0");
    return delta * residual_phi_.dot(hinge(z_, psi)) / (sigma * std::sqrt(quad_));
}

double expected_s0(const Eigen::VectorXd& z, double psi, double delta, double sigma, const DesignMatrix<double>& x) {
    if (!psi_interior(z, psi)) throw Error(ErrorCode::psi_out_of_range, "psi must lie strictly inside the z range");
    return PowerKernel(z, x).e1(psi, delta, sigma);
}

double power_from_e1(double e1, double alpha, Alternative alternative) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::domain, "alpha must lie in (0, 1)");
    switch (alternative) {
        case Alternative::greater: return normal_cdf(-normal_quantile(1.0 - alpha) + e1);
        case Alternative::less: return normal_cdf(-normal_quantile(1.0 - alpha) - e1);
        case Alternative::two_sided: break;
    }
    const double c = normal_quantile(1.0 - alpha / 2.0);
    return std::min(1.0, normal_cdf(-c + e1) + normal_cdf(-c - e1));
}

PowerResult compute_power(const PowerRequest& req) {
    req.validate();
    if (!req.n) throw Error(ErrorCode::configuration, "compute_power needs n");
    PowerResult r;
    r.n_used = *req.n;
    r.z_realized = realize_covariate(req.z_spec, r.n_used);
    if (!psi_interior(r.z_realized, req.psi)) {
        throw Error(ErrorCode::psi_out_of_range, "psi must lie strictly inside the realized z range");
    }
    const auto x = null_design(r.z_realized, req.extra_covariates);
    r.e1 = PowerKernel(r.z_realized, x).e1(req.psi, req.delta, req.sigma);
    r.power = power_from_e1(r.e1, req.alpha, req.alternative);
    return r;
}

SampleSizeResult sample_size(const PowerRequest& req) {
    req.validate();
    if (!req.target_power) throw Error(ErrorCode::configuration, "sample_size needs a target power");
    if (req.extra_covariates) throw Error(ErrorCode::configuration, "extra covariates fix n; sample size search is undefined");
    if (req.z_spec.source == CovariateSpec::Source::explicit_values) {
        throw Error(ErrorCode::configuration, "an explicit covariate fixes n; sample size search is undefined");
    }
    const double target = *req.target_power;
    if (target <= req.alpha) throw Error(ErrorCode::target_below_size, "target power must exceed alpha");
    if (req.delta == 0.0) throw Error(ErrorCode::unreachable, "delta = 0: power equals alpha for every n");

    auto passes = [&](Index n, double* power) {
        const auto r = power_at(req, n);
        if (r && power) *power = r->power;
        return r && r->power >= target;
    };

    double power = 0;
    Index lo = 0;
    Index hi = kMinSampleSize;
    while (!passes(hi, &power)) {
        if (hi >= kMaxSampleSize) {
            throw Error(ErrorCode::unreachable, "target power not reached below n = 10^7");
        }
        lo = hi;
        hi = std::min(hi * 2, kMaxSampleSize);
    }
    while (lo > 0 && hi - lo > 1) {
        const Index mid = lo + (hi - lo) / 2;
        if (passes(mid, nullptr)) hi = mid;
        else lo = mid;
    }
    // Power is not exactly monotone in n because the candidate psis move with the
    // quantile grid; scan a few sizes below for an earlier crossing.
    int misses = 0;
    for (Index m = hi - 1; m >= kMinSampleSize && misses < kRippleScan; --m) {
        if (passes(m, nullptr)) {
            hi = m;
            misses = 0;
        } else {
            ++misses;
        }
    }
    SampleSizeResult out;
    out.n = hi;
    passes(hi, &out.power_at_n);
    return out;
}

ProfileFit profile_segmented(const Eigen::VectorXd& y, const DesignMatrix<double>& x, const Eigen::VectorXd& z) {
    const Index n = y.size();
    const Index p = x.cols();
    if (z.size() != n || x.rows() != n) throw Error(ErrorCode::dimension, "y, z and design must have equal length");
    if (n < 8) throw Error(ErrorCode::series_size, "segmented fit needs n >= 8");
    if (n <= p + 2) throw Error(ErrorCode::degrees_of_freedom, "no residual degrees of freedom for the segmented fit");

    std::vector<double> sorted(z.data(), z.data() + n);
    std::sort(sorted.begin(), sorted.end());
    if (!(sorted.back() > sorted.front())) throw Error(ErrorCode::degenerate_covariate, "segmented covariate is constant");

    std::set<double> grid;
    for (int k = 1; k < 200; ++k) grid.insert(quantile_type7(sorted, k / 200.0));
    if (n <= 1000) grid.insert(sorted.begin(), sorted.end());

    ProfileFit best;
    best.rss = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd aug(n, p + 1);
    aug.leftCols(p) = x.values;
    for (const double psi : grid) {
        const auto left = std::upper_bound(sorted.begin(), sorted.end(), psi) - sorted.begin();
        if (left < 3 || n - left < 3) continue;
        aug.col(p) = hinge(z, psi);
        const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(aug);
        if (qr.rank() < p + 1) continue;
        const Eigen::VectorXd coef = qr.solve(y);
        const double rss = (y - aug * coef).squaredNorm();
        if (rss < best.rss) {
            best.rss = rss;
            best.psi_hat = psi;
            best.delta_hat = coef(p);
            best.beta_hat = coef.head(p);
        }
    }
    if (!std::isfinite(best.rss)) throw Error(ErrorCode::non_identifiable, "no admissible changepoint on the profile grid");
    return best;
}

SegmentedFit fit_segmented(const Eigen::VectorXd& y, const DesignMatrix<double>& x, const Eigen::VectorXd& z) {
    const ProfileFit prof = profile_segmented(y, x, z);
    const Index n = y.size();
    const Index p = x.cols();

    SegmentedFit fit;
    fit.psi_hat = prof.psi_hat;
    fit.delta_hat = prof.delta_hat;
    fit.beta_hat = prof.beta_hat;
    fit.rss = prof.rss;
    fit.sigma_hat = std::sqrt(prof.rss / static_cast<double>(n - p - 2));
    if (std::abs(fit.delta_hat) < 1e-8) {
        throw Error(ErrorCode::flat_fit, "slope difference is zero; Var(psi_hat) is undefined");
    }

    // y ~ X + U + V with U = (z - psi)_+, V = -I(z > psi): psi = psi_hat + gamma / delta.
    Eigen::MatrixXd m(n, p + 2);
    m.leftCols(p) = x.values;
    m.col(p) = hinge(z, fit.psi_hat);
    for (Index i = 0; i < n; ++i) m(i, p + 1) = z(i) > fit.psi_hat ? -1.0 : 0.0;
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    if (qr.rank() < p + 2) throw Error(ErrorCode::rank, "linearized segmented design is rank deficient");
    const Eigen::VectorXd coef = qr.solve(y);
    const double delta = coef(p);
    const double gamma = coef(p + 1);
    if (std::abs(delta) < 1e-8) throw Error(ErrorCode::flat_fit, "slope difference is zero; Var(psi_hat) is undefined");

    const Eigen::MatrixXd mtm_inv = (m.transpose() * m).ldlt().solve(Eigen::MatrixXd::Identity(p + 2, p + 2));
    const Eigen::Matrix2d s = fit.sigma_hat * fit.sigma_hat * mtm_inv.block(p, p, 2, 2);
    Eigen::Matrix2d jac;
    jac << 1.0, 0.0, -gamma / (delta * delta), 1.0 / delta;
    const Eigen::Matrix2d cov = jac * s * jac.transpose();
    fit.cov_delta_psi = 0.5 * (cov + cov.transpose());
    return fit;
}

PowerResult posthoc_power(const SegmentedFit& fit, const Eigen::VectorXd& z, const DesignMatrix<double>& x,
                          const PosthocOptions& opts) {
    if (!(fit.sigma_hat > 0.0)) throw Error(ErrorCode::degenerate_dispersion, "fitted sigma is zero");
    const PowerKernel kernel(z, x);
    PowerResult r;
    r.n_used = z.size();
    r.z_realized = z;
    r.e1 = kernel.e1(fit.psi_hat, fit.delta_hat, fit.sigma_hat);
    r.power = power_from_e1(r.e1, opts.alpha, opts.alternative);
    if (!opts.ci_draws) return r;
    if (*opts.ci_draws < 1) throw Error(ErrorCode::domain, "ci draws must be >= 1");

    const Eigen::Matrix2d& c = fit.cov_delta_psi;
    if (!c.allFinite() || std::abs(c(0, 1) - c(1, 0)) > 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff())) {
        throw Error(ErrorCode::not_psd, "covariance of (delta, psi) is not symmetric");
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(c);
    const Eigen::Vector2d lambda = eig.eigenvalues();
    if (lambda.minCoeff() < -1e-10 * std::max(1.0, lambda.cwiseAbs().maxCoeff())) {
        throw Error(ErrorCode::not_psd, "covariance of (delta, psi) is not positive semidefinite");
    }
    const Eigen::Matrix2d root = eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();

    std::vector<double> sorted(z.data(), z.data() + z.size());
    std::sort(sorted.begin(), sorted.end());
    const double psi_lo = quantile_type7(sorted, 0.02);
    const double psi_hi = quantile_type7(sorted, 0.98);

    std::vector<double> powers(static_cast<std::size_t>(*opts.ci_draws));
    for (int i = 0; i < *opts.ci_draws; ++i) {
        Stream rng(opts.seed, static_cast<std::uint64_t>(i));
        const double u0 = rng.normal();
        const Eigen::Vector2d draw = Eigen::Vector2d(fit.delta_hat, fit.psi_hat) + root * Eigen::Vector2d(u0, rng.normal());
        const double psi = std::clamp(draw(1), psi_lo, psi_hi);
        powers[static_cast<std::size_t>(i)] =
            power_from_e1(kernel.e1(psi, draw(0), fit.sigma_hat), opts.alpha, opts.alternative);
    }
    PowerInterval ci;
    ci.lower = quantile_type7(powers, 0.025);
    ci.upper = quantile_type7(powers, 0.975);
    ci.draws = *opts.ci_draws;
    r.interval = ci;
    return r;
}

}  // namespace segpower
