#pragma once

// Benchmark tests for a change point: the maximal two-sample t statistic for
// Gaussian sequences (with Worsley's W scale and critical values) and the
// trimmed likelihood-ratio statistic for binary Rasch-scored sequences.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "segpower/model_core.hpp"

namespace segpower {

/// An ordered response sequence plus the optional columns the tests can use.
template <typename Scalar = double>
struct Series {
    Vector<Scalar> y;
    Vector<Scalar> time_index;
    std::vector<std::string> labels;
    std::optional<Vector<Scalar>> z;
    std::optional<Vector<Scalar>> b;

    static Series from_values(Vector<Scalar> values) {
        Series s;
        s.time_index = Vector<Scalar>::LinSpaced(values.size(), Scalar(1), Scalar(values.size()));
        s.y = std::move(values);
        return s;
    }

    Index size() const { return y.size(); }

    /// Segmented covariate: `z` when present, the time index otherwise.
    const Vector<Scalar>& covariate() const { return z ? *z : time_index; }

    /// Display label for observation i (0-based).
    std::string label(Index i) const {
        if (!labels.empty()) return labels[static_cast<std::size_t>(i)];
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.15g", static_cast<double>(time_index(i)));
        return buf;
    }

    void validate() const {
        if (time_index.size() != y.size()) throw Error(ErrorCode::dimension, "time_index length mismatch");
        if (!labels.empty() && static_cast<Index>(labels.size()) != y.size()) {
            throw Error(ErrorCode::dimension, "labels length mismatch");
        }
        if (z && z->size() != y.size()) throw Error(ErrorCode::dimension, "z length mismatch");
        if (b && b->size() != y.size()) throw Error(ErrorCode::dimension, "b length mismatch");
        for (Index i = 1; i < time_index.size(); ++i) {
            if (!(time_index(i) > time_index(i - 1))) {
                throw Error(ErrorCode::domain, "time_index must be strictly increasing");
            }
        }
    }
};

struct WorsleyCritical {
    double value = 0.0;
    /// n fell outside the tabulated 10..50 range and the nearest endpoint was used.
    bool extrapolated = false;
};

template <typename Scalar = double>
struct TmaxResult {
    Scalar t_max = 0;
    Scalar w_max = 0;
    /// t_jn for j = 1..n-1 (entry j-1).
    Vector<Scalar> per_j;
    /// Split after observation j_hat (1-based); the new regime starts at index j_hat (0-based).
    Index j_hat = 0;

    struct Decision {
        double alpha = 0.05;
        WorsleyCritical critical;
        bool reject = false;
    };
    std::optional<Decision> decision;
};

struct LmaxConfig {
    double trim_fraction = 0.15;
    double critical_value = 8.85;
    double theta_clamp = 6.0;

    /// Andrews trimming: n1 = nearest integer to trim_fraction * n.
    Index trim(Index n) const { return static_cast<Index>(std::lround(trim_fraction * static_cast<double>(n))); }

    void validate(Index n) const {
        if (!(trim_fraction > 0.0 && trim_fraction < 0.5)) {
            throw Error(ErrorCode::domain, "trim_fraction must lie in (0, 0.5)");
        }
        if (!(theta_clamp > 0.0)) throw Error(ErrorCode::domain, "theta_clamp must be positive");
        const Index n1 = trim(n);
        if (n1 < 1 || n - n1 <= n1) {
            throw Error(ErrorCode::series_size, "trimmed split range is empty for n = " + std::to_string(n));
        }
    }
};

template <typename Scalar = double>
struct LmaxResult {
    Scalar l_max = 0;
    /// L_jn for j = n1..n-n1 (entry j-n1).
    Vector<Scalar> per_j;
    Index n1 = 0;
    Index j_hat = 0;
    Scalar theta1_hat = 0;
    Scalar theta2_hat = 0;
    Scalar theta0_hat = 0;
    double critical_value = 8.85;
    bool reject = false;
};

namespace detail {

inline constexpr std::array<int, 9> kWorsleyN{10, 15, 20, 25, 30, 35, 40, 45, 50};
inline constexpr std::array<double, 3> kWorsleyAlpha{0.10, 0.05, 0.01};
inline constexpr std::array<std::array<double, 3>, 9> kWorsleyTable{{
    {3.14, 3.66, 4.93},
    {2.97, 3.36, 4.32},
    {2.90, 3.28, 4.13},
    {2.89, 3.23, 3.94},
    {2.86, 3.19, 3.86},
    {2.88, 3.21, 3.87},
    {2.88, 3.17, 3.77},
    {2.86, 3.18, 3.79},
    {2.87, 3.16, 3.79},
}};

/// log P(y | theta, b) under the Rasch model, summed over [begin, end).
template <typename Scalar>
Scalar rasch_loglik(const Vector<Scalar>& y, const Vector<Scalar>& b, Scalar theta, Index begin, Index end) {
    Scalar ll = 0;
    for (Index i = begin; i < end; ++i) {
        const Scalar eta = theta - b(i);
        // log(logistic(eta)) = -log1p(exp(-eta)); log(1 - logistic(eta)) = -log1p(exp(eta))
        const Scalar x = y(i) > Scalar(0.5) ? -eta : eta;
        ll -= x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return ll;
}

template <typename Scalar>
Scalar rasch_theta_mle_range(const Vector<Scalar>& y, const Vector<Scalar>& b, Index begin, Index end,
                             Scalar clamp) {
    Scalar correct = 0;
    for (Index i = begin; i < end; ++i) correct += y(i);
    if (correct <= Scalar(0)) return -clamp;
    if (correct >= Scalar(end - begin)) return clamp;

    // Score is strictly decreasing in theta.
    auto score = [&](Scalar th, Scalar* info) {
        Scalar g = 0, h = 0;
        for (Index i = begin; i < end; ++i) {
            const Scalar p = logistic(th - b(i));
            g += y(i) - p;
            h += p * (Scalar(1) - p);
        }
        if (info) *info = h;
        return g;
    };

    Scalar lo = -clamp, hi = clamp;
    if (score(lo, nullptr) <= Scalar(0)) return lo;
    if (score(hi, nullptr) >= Scalar(0)) return hi;

    Scalar th = std::clamp(std::log(correct / (Scalar(end - begin) - correct)) + b.segment(begin, end - begin).mean(),
                           lo, hi);
    for (int it = 0; it < 200; ++it) {
        Scalar info = 0;
        const Scalar g = score(th, &info);
        if (g > Scalar(0)) lo = th; else hi = th;
        Scalar next = th + g / info;
        if (!(next > lo && next < hi)) next = Scalar(0.5) * (lo + hi);
        if (std::abs(next - th) < Scalar(1e-12) * (Scalar(1) + std::abs(th)) || hi - lo < Scalar(1e-14)) {
            return next;
        }
        th = next;
    }
    return th;
}

}  // namespace detail

/// Two-sample pooled t statistics at every split j = 1..n-1 and their maximum in absolute value.
///
/// When a split has zero pooled variance but distinct segment means its statistic is infinite.
template <typename Scalar>
TmaxResult<Scalar> t_max(const Series<Scalar>& series) {
    series.validate();
    const Index n = series.size();
    if (n < 4) throw Error(ErrorCode::series_size, "T_max needs at least 4 observations");
    const Vector<Scalar>& y = series.y;

    const Scalar scale = (y.array() - y.mean()).square().sum();

    TmaxResult<Scalar> r;
    r.per_j.resize(n - 1);
    bool any_spread = false;
    for (Index j = 1; j < n; ++j) {
        const Scalar nj = Scalar(j), mj = Scalar(n - j);
        const auto head = y.head(j).array();
        const auto tail = y.tail(n - j).array();
        const Scalar mean1 = head.mean();
        const Scalar mean2 = tail.mean();
        const Scalar ss = (head - mean1).square().sum() + (tail - mean2).square().sum();
        const Scalar diff = mean1 - mean2;
        Scalar t;
        if (ss > Scalar(1e-24) * std::max(scale, Scalar(1e-300))) {
            any_spread = true;
            t = std::sqrt(nj * mj / Scalar(n)) * diff / std::sqrt(ss / Scalar(n - 2));
        } else {
            t = diff == Scalar(0) ? Scalar(0) : std::copysign(std::numeric_limits<Scalar>::infinity(), diff);
        }
        r.per_j(j - 1) = t;
    }
    if (!any_spread) throw Error(ErrorCode::degenerate_series, "pooled variance is zero at every split");

    Index best = 0;
    for (Index k = 1; k < r.per_j.size(); ++k) {
        if (std::abs(r.per_j(k)) > std::abs(r.per_j(best))) best = k;
    }
    r.j_hat = best + 1;
    r.t_max = std::abs(r.per_j(best));

    // Worsley's W is defined on the correlation-scale statistic t* = T / sqrt(n - 2 + T^2).
    if (std::isinf(static_cast<double>(r.t_max))) {
        r.w_max = r.t_max;
    } else {
        const Scalar df = Scalar(n - 2);
        const Scalar t_star = r.t_max / std::sqrt(df + r.t_max * r.t_max);
        r.w_max = std::sqrt(df) * t_star / std::sqrt(Scalar(1) - t_star * t_star);
    }
    return r;
}

/// Critical value of W_max from Worsley's table, linearly interpolated in n between rows.
inline WorsleyCritical worsley_critical(Index n, double alpha) {
    std::size_t col = detail::kWorsleyAlpha.size();
    for (std::size_t c = 0; c < detail::kWorsleyAlpha.size(); ++c) {
        if (std::abs(alpha - detail::kWorsleyAlpha[c]) < 1e-12) col = c;
    }
    if (col == detail::kWorsleyAlpha.size()) {
        throw Error(ErrorCode::unsupported_alpha, "W critical values exist only for alpha in {0.10, 0.05, 0.01}");
    }
    const auto& ns = detail::kWorsleyN;
    const auto& tab = detail::kWorsleyTable;
    if (n <= ns.front()) return {tab.front()[col], n < ns.front()};
    if (n >= ns.back()) return {tab.back()[col], n > ns.back()};
    std::size_t row = 0;
    while (ns[row + 1] < n) ++row;
    const double f = static_cast<double>(n - ns[row]) / static_cast<double>(ns[row + 1] - ns[row]);
    return {tab[row][col] + f * (tab[row + 1][col] - tab[row][col]), false};
}

template <typename Scalar>
TmaxResult<Scalar> w_max_test(const Series<Scalar>& series, double alpha) {
    TmaxResult<Scalar> r = t_max(series);
    typename TmaxResult<Scalar>::Decision d;
    d.alpha = alpha;
    d.critical = worsley_critical(series.size(), alpha);
    d.reject = static_cast<double>(r.w_max) > d.critical.value;
    r.decision = d;
    return r;
}

/// Rasch ability MLE on [-clamp, clamp]; all-correct/all-wrong patterns return the boundary.
template <typename Scalar>
Scalar rasch_theta_mle(const Vector<Scalar>& y, const Vector<Scalar>& b, Scalar clamp = Scalar(6)) {
    if (y.size() != b.size() || y.size() < 1) throw Error(ErrorCode::dimension, "y and b must have equal length >= 1");
    return detail::rasch_theta_mle_range(y, b, Index(0), y.size(), clamp);
}

template <typename Scalar>
LmaxResult<Scalar> l_max_binary(const Vector<Scalar>& y, const Vector<Scalar>& b, const LmaxConfig& cfg = {}) {
    const Index n = y.size();
    if (b.size() != n) throw Error(ErrorCode::dimension, "y and b must have equal length");
    if (n < 7) throw Error(ErrorCode::series_size, "L_max needs at least 7 items");
    cfg.validate(n);
    for (Index i = 0; i < n; ++i) {
        if (y(i) != Scalar(0) && y(i) != Scalar(1)) throw Error(ErrorCode::domain, "responses must be 0/1");
    }
    const Scalar clamp = Scalar(cfg.theta_clamp);
    const Index n1 = cfg.trim(n);

    LmaxResult<Scalar> r;
    r.n1 = n1;
    r.critical_value = cfg.critical_value;
    r.theta0_hat = detail::rasch_theta_mle_range(y, b, Index(0), n, clamp);
    const Scalar l0 = detail::rasch_loglik(y, b, r.theta0_hat, Index(0), n);

    const Scalar total = y.sum();
    const bool constant = total == Scalar(0) || total == Scalar(n);

    r.per_j.resize(n - 2 * n1 + 1);
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Index j = n1; j <= n - n1; ++j) {
        const Scalar t1 = detail::rasch_theta_mle_range(y, b, Index(0), j, clamp);
        const Scalar t2 = detail::rasch_theta_mle_range(y, b, j, n, clamp);
        Scalar l = Scalar(2) * (detail::rasch_loglik(y, b, t1, Index(0), j) +
                                detail::rasch_loglik(y, b, t2, j, n) - l0);
        if (constant) l = Scalar(0);
        r.per_j(j - n1) = l;
        if (l > best) {
            best = l;
            r.j_hat = j;
            r.theta1_hat = t1;
            r.theta2_hat = t2;
        }
    }
    r.l_max = best;
    r.reject = static_cast<double>(r.l_max) > cfg.critical_value;
    return r;
}

}  // namespace segpower
