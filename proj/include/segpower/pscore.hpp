#pragma once

// Pseudo-score test for a single changepoint in a segmented covariate.
//
// The segmented term phi(z, psi) is averaged over K fixed candidate psis and the
// statistic is the standardized linear form
//
//   s0 = phibar^T (I - A) y / sqrt(sigma^2 * phibar^T (I - A) phibar),
//
// with A the null-model hat matrix. For binomial-logit nulls the same form is
// evaluated on the converged IRLS working scale, which reduces to
// phibar^T (y - mu) over sqrt(phibar^T W (I - A) phibar).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "segpower/model_core.hpp"
#include "segpower/normal.hpp"

namespace segpower {

enum class TermKind { jump, broken_line };
enum class Alternative { two_sided, greater, less };
enum class DispersionSource { supplied, null_fit, alt_fit };

inline constexpr int kDefaultCandidateCount = 10;

template <typename Scalar = double>
struct SegmentedTermSpec {
    TermKind kind = TermKind::jump;
    Vector<Scalar> psis;
    Vector<Scalar> z;

    Index K() const { return psis.size(); }

    void validate() const {
        if (psis.size() < 1) throw Error(ErrorCode::domain, "need at least one candidate psi");
        if (z.size() < 2) throw Error(ErrorCode::dimension, "segmented covariate needs at least 2 values");
        const Scalar lo = z.minCoeff(), hi = z.maxCoeff();
        for (Index k = 0; k < psis.size(); ++k) {
            if (!(psis(k) > lo && psis(k) < hi)) {
                throw Error(ErrorCode::psi_out_of_range, "candidate psi must lie strictly inside the z range");
            }
            if (k > 0 && !(psis(k) > psis(k - 1))) {
                throw Error(ErrorCode::domain, "candidate psis must be strictly increasing");
            }
        }
    }
};

template <typename Scalar = double>
struct PScoreResult {
    Scalar s0 = 0;
    Scalar p_value = 1;
    Alternative alternative = Alternative::two_sided;
    Scalar dispersion_used = 0;
    DispersionSource dispersion_source = DispersionSource::null_fit;
    std::optional<Scalar> psi_hat;
    Vector<Scalar> phi_bar;
};

template <typename Scalar = double>
struct PScoreOptions {
    Family family = Family::gaussian_identity;
    /// Known linear-predictor offset (binomial only); zeros when absent.
    std::optional<Vector<Scalar>> offset;
    /// Supplied sigma^2. When absent the dispersion comes from `estimate_dispersion_under`.
    std::optional<Scalar> dispersion;
    DispersionSource estimate_dispersion_under = DispersionSource::null_fit;
    Alternative alternative = Alternative::two_sided;
    bool estimate_psi = false;
    int grid_size = 0;
    FitOptions fit;
};

template <typename Scalar = double>
struct ChangepointEstimate {
    Scalar psi_hat = 0;
    /// Single-psi score statistic at psi_hat.
    Scalar statistic = 0;
    /// Smallest z above psi_hat: the first covariate value of the new regime.
    Scalar first_after = 0;
};

/// Segmented term: jump I(z > psi) or hinge (z - psi) I(z > psi).
template <typename Scalar>
Vector<Scalar> phi(const Vector<Scalar>& z, Scalar psi, TermKind kind) {
    if (z.size() < 2) throw Error(ErrorCode::dimension, "segmented covariate needs at least 2 values");
    if (!(psi > z.minCoeff() && psi < z.maxCoeff())) {
        throw Error(ErrorCode::psi_out_of_range, "psi must lie strictly inside the z range");
    }
    Vector<Scalar> out(z.size());
    for (Index i = 0; i < z.size(); ++i) {
        const bool above = z(i) > psi;
        out(i) = kind == TermKind::jump ? Scalar(above ? 1 : 0) : (above ? z(i) - psi : Scalar(0));
    }
    return out;
}

/// Sample quantile by linear interpolation of order statistics:
/// h = (n - 1) p, q = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h]).
template <typename Scalar>
Scalar quantile_type7(std::vector<Scalar> sorted_or_not, Scalar p) {
    std::sort(sorted_or_not.begin(), sorted_or_not.end());
    const auto& x = sorted_or_not;
    const Scalar h = Scalar(x.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= x.size()) return x.back();
    return x[lo] + (h - Scalar(lo)) * (x[lo + 1] - x[lo]);
}

/// K interior quantiles of z at probabilities k/(K+1), duplicates and boundary values dropped.
template <typename Scalar>
Vector<Scalar> candidate_psis(const Vector<Scalar>& z, int K = kDefaultCandidateCount) {
    if (K < 1) throw Error(ErrorCode::domain, "K must be >= 1");
    if (z.size() < 3) throw Error(ErrorCode::dimension, "need at least 3 covariate values");
    std::vector<Scalar> sorted(z.data(), z.data() + z.size());
    std::sort(sorted.begin(), sorted.end());
    const Scalar lo = sorted.front(), hi = sorted.back();
    if (!(hi > lo)) throw Error(ErrorCode::degenerate_covariate, "segmented covariate is constant");

    std::vector<Scalar> out;
    for (int k = 1; k <= K; ++k) {
        const Scalar q = quantile_type7(sorted, Scalar(k) / Scalar(K + 1));
        if (q > lo && q < hi && (out.empty() || q > out.back())) out.push_back(q);
    }
    if (out.empty()) throw Error(ErrorCode::degenerate_covariate, "no interior candidate psi");
    return Eigen::Map<Vector<Scalar>>(out.data(), static_cast<Index>(out.size()));
}

template <typename Scalar>
SegmentedTermSpec<Scalar> make_term_spec(const Vector<Scalar>& z, TermKind kind, int K = kDefaultCandidateCount) {
    SegmentedTermSpec<Scalar> spec;
    spec.kind = kind;
    spec.z = z;
    spec.psis = candidate_psis(z, K);
    return spec;
}

template <typename Scalar>
Vector<Scalar> phi_bar(const SegmentedTermSpec<Scalar>& spec) {
    spec.validate();
    Vector<Scalar> acc = Vector<Scalar>::Zero(spec.z.size());
    for (Index k = 0; k < spec.K(); ++k) acc += phi(spec.z, spec.psis(k), spec.kind);
    return acc / Scalar(spec.K());
}

template <typename Scalar>
Scalar p_value(Scalar s0, Alternative alternative) {
    switch (alternative) {
        case Alternative::greater: return normal_cdf(-s0);
        case Alternative::less: return normal_cdf(s0);
        case Alternative::two_sided: break;
    }
    return std::min(Scalar(1), Scalar(2) * normal_cdf(-std::abs(s0)));
}

/// Numerator and variance pieces of the score form for a given null fit.
template <typename Scalar = double>
class ScoreKernel {
public:
    explicit ScoreKernel(const NullFit<Scalar>& fit, const Vector<Scalar>& y)
        : basis_(fit.basis), sqrt_w_(fit.weights.array().sqrt()), residual_(y - fit.fitted) {}

    /// phi^T (y - fitted): equals phi^T (I - A) y on the Gaussian scale and
    /// phi^T (I - A)^T W (z_w - X beta) on the IRLS working scale.
    Scalar numerator(const Vector<Scalar>& term) const { return term.dot(residual_); }

    /// phi^T W (I - A) phi.
    Scalar variance(const Vector<Scalar>& term) const {
        const Vector<Scalar> u = sqrt_w_.cwiseProduct(term);
        return u.squaredNorm() - (basis_.transpose() * u).squaredNorm();
    }

    const Vector<Scalar>& residual() const { return residual_; }

private:
    Matrix<Scalar> basis_;
    Vector<Scalar> sqrt_w_;
    Vector<Scalar> residual_;
};

namespace detail {

template <typename Scalar>
NullFit<Scalar> fit_null(const Vector<Scalar>& y, const DesignMatrix<Scalar>& x, const PScoreOptions<Scalar>& opts) {
    if (opts.family == Family::gaussian_identity) return fit_null_gaussian(y, x);
    const Vector<Scalar> offset = opts.offset ? *opts.offset : Vector<Scalar>::Zero(y.size());
    return fit_null_binomial(y, x, offset, opts.fit);
}

template <typename Scalar>
bool variance_negligible(Scalar var, const Vector<Scalar>& term) {
    return var <= Scalar(1e-12) * std::max(Scalar(1), term.squaredNorm());
}

/// Grid for the single-psi scan: midpoints between consecutive distinct z values
/// (every split is a candidate) or, for n > 200, 200 interior quantiles.
template <typename Scalar>
std::vector<Scalar> changepoint_grid(const Vector<Scalar>& z, int grid_size) {
    std::vector<Scalar> sorted(z.data(), z.data() + z.size());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.size() < 2) throw Error(ErrorCode::degenerate_covariate, "segmented covariate is constant");

    std::vector<Scalar> grid;
    const bool use_midpoints = grid_size <= 0 ? z.size() <= 200 : static_cast<std::size_t>(grid_size) + 1 >= sorted.size();
    if (use_midpoints) {
        for (std::size_t i = 0; i + 1 < sorted.size(); ++i) grid.push_back(Scalar(0.5) * (sorted[i] + sorted[i + 1]));
        return grid;
    }
    const int g = grid_size <= 0 ? 200 : grid_size;
    std::vector<Scalar> all(z.data(), z.data() + z.size());
    std::sort(all.begin(), all.end());
    for (int k = 1; k <= g; ++k) {
        const Scalar q = quantile_type7(all, Scalar(k) / Scalar(g + 1));
        if (q > sorted.front() && q < sorted.back() && (grid.empty() || q > grid.back())) grid.push_back(q);
    }
    return grid;
}

template <typename Scalar>
Scalar alt_fit_dispersion(const Vector<Scalar>& y, const DesignMatrix<Scalar>& x, const Vector<Scalar>& z,
                          TermKind kind) {
    const Index n = x.rows(), p = x.cols();
    if (n <= p + 1) throw Error(ErrorCode::degrees_of_freedom, "no residual degrees of freedom under the alternative");
    Scalar best = std::numeric_limits<Scalar>::infinity();
    Matrix<Scalar> aug(n, p + 1);
    aug.leftCols(p) = x.values;
    for (const Scalar psi : changepoint_grid(z, 0)) {
        aug.col(p) = phi(z, psi, kind);
        Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(aug);
        if (qr.rank() < p + 1) continue;
        const Scalar rss = (y - aug * qr.solve(y)).squaredNorm();
        best = std::min(best, rss);
    }
    if (!std::isfinite(static_cast<double>(best))) {
        throw Error(ErrorCode::non_identifiable, "no split is identifiable under the alternative");
    }
    return best / Scalar(n - p - 1);
}

}  // namespace detail

/// Grid estimate of the changepoint: argmax over the grid of |single-psi score statistic|,
/// smallest maximizer on ties.
template <typename Scalar>
ChangepointEstimate<Scalar> estimate_changepoint(const Vector<Scalar>& y, const DesignMatrix<Scalar>& x,
                                                 const Vector<Scalar>& z, TermKind kind,
                                                 const PScoreOptions<Scalar>& opts = {}) {
    if (z.size() != y.size()) throw Error(ErrorCode::dimension, "z length does not match response");
    const auto grid = detail::changepoint_grid(z, opts.grid_size);
    const NullFit<Scalar> fit = detail::fit_null(y, x, opts);
    const ScoreKernel<Scalar> kernel(fit, y);

    ChangepointEstimate<Scalar> best;
    Scalar best_abs = -1;
    for (const Scalar psi : grid) {
        const Vector<Scalar> term = phi(z, psi, kind);
        const Scalar var = kernel.variance(term);
        if (detail::variance_negligible(var, term)) continue;
        const Scalar stat = kernel.numerator(term) / std::sqrt(var);
        if (std::abs(stat) > best_abs) {
            best_abs = std::abs(stat);
            best.psi_hat = psi;
            best.statistic = stat;
        }
    }
    if (best_abs < 0) throw Error(ErrorCode::non_identifiable, "every candidate split lies in the null column space");

    Scalar first = std::numeric_limits<Scalar>::infinity();
    for (Index i = 0; i < z.size(); ++i) {
        if (z(i) > best.psi_hat) first = std::min(first, z(i));
    }
    best.first_after = first;
    return best;
}

template <typename Scalar>
PScoreResult<Scalar> pscore_statistic(const Vector<Scalar>& y, const DesignMatrix<Scalar>& x,
                                      const SegmentedTermSpec<Scalar>& spec, const PScoreOptions<Scalar>& opts = {}) {
    if (spec.z.size() != y.size()) throw Error(ErrorCode::dimension, "z length does not match response");
    const NullFit<Scalar> fit = detail::fit_null(y, x, opts);
    const ScoreKernel<Scalar> kernel(fit, y);

    PScoreResult<Scalar> r;
    r.alternative = opts.alternative;
    r.phi_bar = phi_bar(spec);

    const Scalar var = kernel.variance(r.phi_bar);
    if (detail::variance_negligible(var, r.phi_bar)) {
        throw Error(ErrorCode::non_identifiable, "averaged segmented term lies in the null column space");
    }

    if (opts.dispersion) {
        r.dispersion_used = *opts.dispersion;
        r.dispersion_source = DispersionSource::supplied;
    } else if (opts.family == Family::binomial_logit) {
        r.dispersion_used = fit.dispersion;
        r.dispersion_source = DispersionSource::null_fit;
    } else if (opts.estimate_dispersion_under == DispersionSource::alt_fit) {
        r.dispersion_used = detail::alt_fit_dispersion(y, x, spec.z, spec.kind);
        r.dispersion_source = DispersionSource::alt_fit;
    } else {
        r.dispersion_used = fit.dispersion;
        r.dispersion_source = DispersionSource::null_fit;
    }
    if (!(r.dispersion_used > Scalar(0))) {
        throw Error(ErrorCode::degenerate_dispersion, "dispersion is zero; the response is fitted exactly");
    }

    r.s0 = kernel.numerator(r.phi_bar) / std::sqrt(r.dispersion_used * var);
    r.p_value = p_value(r.s0, opts.alternative);
    if (opts.estimate_psi) r.psi_hat = estimate_changepoint(y, x, spec.z, spec.kind, opts).psi_hat;
    return r;
}

}  // namespace segpower
