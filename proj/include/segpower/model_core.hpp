#pragma once

// Null-model regression: design matrices, OLS, binomial-logit IRLS and the
// (weighted) hat matrices the score statistics are built on.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "segpower/errors.hpp"

namespace segpower {

using Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar = double>
struct DesignMatrix {
    Matrix<Scalar> values;
    std::vector<std::string> column_names;
    bool has_intercept = false;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
};

enum class Family { gaussian_identity, binomial_logit };

struct FitOptions {
    int max_irls_iter = 50;
    /// Relative deviance change |dev - dev_old| / (|dev| + 0.1) that stops IRLS.
    double irls_tol = 1e-9;
    double theta_clamp = 6.0;

    void validate() const {
        if (max_irls_iter < 1) throw Error(ErrorCode::domain, "max_irls_iter must be >= 1");
        if (!(irls_tol > 0.0)) throw Error(ErrorCode::domain, "irls_tol must be > 0");
    }
};

/// Fitted no-changepoint model.
///
/// `basis` is an orthonormal basis (n x p) of the column space of W^{1/2} X, so that
/// W^{1/2} (I - A) W^{-1/2} = I - basis * basis^T. It lets callers apply the
/// annihilator in O(np) without touching the materialized n x n `hat`.
template <typename Scalar = double>
struct NullFit {
    Vector<Scalar> beta_hat;
    Matrix<Scalar> hat;
    Scalar dispersion = Scalar(0);
    Vector<Scalar> weights;
    Vector<Scalar> working_response;
    Vector<Scalar> fitted;
    Vector<Scalar> offset;
    Matrix<Scalar> basis;
    Family family = Family::gaussian_identity;
    int iterations = 0;

    Index n() const { return fitted.size(); }
    Index p() const { return beta_hat.size(); }
};

namespace detail {

template <typename Scalar>
void require_full_rank(const Matrix<Scalar>& x) {
    Eigen::JacobiSVD<Matrix<Scalar>> svd(x);
    const auto& sv = svd.singularValues();
    const Scalar largest = sv.size() > 0 ? sv(0) : Scalar(0);
    if (!(largest > Scalar(0)) || sv(sv.size() - 1) < Scalar(1e-10) * largest) {
        throw Error(ErrorCode::rank, "design matrix is rank deficient");
    }
}

template <typename Scalar>
Matrix<Scalar> thin_q(const Eigen::HouseholderQR<Matrix<Scalar>>& qr, Index rows, Index cols) {
    return qr.householderQ() * Matrix<Scalar>::Identity(rows, cols);
}

template <typename Scalar>
Scalar logistic(Scalar eta) {
    if (eta >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-eta));
    const Scalar e = std::exp(eta);
    return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar binomial_deviance(const Vector<Scalar>& y, const Vector<Scalar>& mu) {
    Scalar dev = 0;
    for (Index i = 0; i < y.size(); ++i) {
        dev -= Scalar(2) * (y(i) > Scalar(0.5) ? std::log(mu(i)) : std::log1p(-mu(i)));
    }
    return dev;
}

}  // namespace detail

/// Stacks covariates column-wise, optionally behind a column of ones. Rank is checked at fit time.
template <typename Scalar = double>
DesignMatrix<Scalar> build_design(Index n, std::span<const Vector<Scalar>> covariates,
                                  bool include_intercept,
                                  std::vector<std::string> names = {}) {
    if (n < 2) throw Error(ErrorCode::dimension, "design needs at least 2 rows");
    if (!names.empty() && names.size() != covariates.size()) {
        throw Error(ErrorCode::dimension, "one name per covariate required");
    }
    for (const auto& c : covariates) {
        if (c.size() != n) throw Error(ErrorCode::dimension, "covariate length mismatch");
    }
    const Index p = static_cast<Index>(covariates.size()) + (include_intercept ? 1 : 0);
    if (p == 0) throw Error(ErrorCode::dimension, "design has no columns");

    DesignMatrix<Scalar> d;
    d.values.resize(n, p);
    d.has_intercept = include_intercept;
    Index col = 0;
    if (include_intercept) {
        d.values.col(col++).setOnes();
        d.column_names.emplace_back("(Intercept)");
    }
    for (std::size_t k = 0; k < covariates.size(); ++k) {
        d.values.col(col++) = covariates[k];
        d.column_names.push_back(names.empty() ? "x" + std::to_string(k + 1) : names[k]);
    }
    return d;
}

template <typename Scalar>
NullFit<Scalar> fit_null_gaussian(const Vector<Scalar>& y, const DesignMatrix<Scalar>& x) {
    const Index n = x.rows();
    const Index p = x.cols();
    if (y.size() != n) throw Error(ErrorCode::dimension, "response length does not match design");
    if (n <= p) throw Error(ErrorCode::degrees_of_freedom, "need more observations than columns");
    detail::require_full_rank(x.values);

    Eigen::HouseholderQR<Matrix<Scalar>> qr(x.values);
    NullFit<Scalar> fit;
    fit.family = Family::gaussian_identity;
    fit.beta_hat = qr.solve(y);
    fit.basis = detail::thin_q(qr, n, p);
    fit.hat = fit.basis * fit.basis.transpose();
    fit.fitted = x.values * fit.beta_hat;
    const Vector<Scalar> resid = y - fit.fitted;
    fit.dispersion = resid.squaredNorm() / Scalar(n - p);
    fit.weights = Vector<Scalar>::Ones(n);
    fit.working_response = y;
    fit.offset = Vector<Scalar>::Zero(n);
    fit.iterations = 1;
    return fit;
}

template <typename Scalar>
NullFit<Scalar> fit_null_binomial(const Vector<Scalar>& y, const DesignMatrix<Scalar>& x,
                                  const Vector<Scalar>& offset, const FitOptions& opts = {}) {
    opts.validate();
    const Index n = x.rows();
    const Index p = x.cols();
    if (y.size() != n || offset.size() != n) {
        throw Error(ErrorCode::dimension, "response/offset length does not match design");
    }
    for (Index i = 0; i < n; ++i) {
        if (y(i) != Scalar(0) && y(i) != Scalar(1)) {
            throw Error(ErrorCode::domain, "binomial response must be 0/1");
        }
        if (!std::isfinite(static_cast<double>(offset(i)))) {
            throw Error(ErrorCode::domain, "offset must be finite");
        }
    }
    if (n <= p) throw Error(ErrorCode::degrees_of_freedom, "need more observations than columns");
    detail::require_full_rank(x.values);

    const Scalar total = y.sum();
    if (x.has_intercept && (total == Scalar(0) || total == Scalar(n))) {
        throw Error(ErrorCode::boundary, "all-0 or all-1 response: intercept MLE is infinite");
    }

    Vector<Scalar> mu = (y.array() + Scalar(0.5)) / Scalar(2);
    Vector<Scalar> eta = (mu.array() / (Scalar(1) - mu.array())).log();
    Vector<Scalar> beta = Vector<Scalar>::Zero(p);
    Scalar dev_old = detail::binomial_deviance(y, mu);
    bool converged = false;
    int iter = 0;

    auto to_std = [](const Vector<Scalar>& v) {
        std::vector<double> out(static_cast<std::size_t>(v.size()));
        for (Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(v(i));
        return out;
    };

    while (iter < opts.max_irls_iter) {
        ++iter;
        const Vector<Scalar> w = mu.array() * (Scalar(1) - mu.array());
        const Vector<Scalar> sw = w.array().sqrt();
        const Vector<Scalar> z = (eta - offset).array() + (y - mu).array() / w.array();
        const Matrix<Scalar> xw = sw.asDiagonal() * x.values;
        beta = xw.householderQr().solve(sw.cwiseProduct(z));
        eta = x.values * beta + offset;
        for (Index i = 0; i < n; ++i) mu(i) = detail::logistic(eta(i));
        const Scalar dev = detail::binomial_deviance(y, mu);
        if (!std::isfinite(static_cast<double>(dev)) || !beta.allFinite()) {
            throw ConvergenceError("IRLS diverged", to_std(beta));
        }
        if (std::abs(dev - dev_old) / (std::abs(dev) + Scalar(0.1)) < Scalar(opts.irls_tol)) {
            converged = true;
            break;
        }
        dev_old = dev;
    }
    if (!converged) {
        throw ConvergenceError("IRLS did not converge in " + std::to_string(opts.max_irls_iter) +
                                   " iterations",
                               to_std(beta));
    }

    const Vector<Scalar> w = mu.array() * (Scalar(1) - mu.array());
    if (w.minCoeff() < Scalar(1e-12)) {
        throw ConvergenceError("fitted probabilities numerically 0 or 1 (separation)", to_std(beta));
    }
    const Vector<Scalar> sw = w.array().sqrt();
    Eigen::HouseholderQR<Matrix<Scalar>> qr(sw.asDiagonal() * x.values);

    NullFit<Scalar> fit;
    fit.family = Family::binomial_logit;
    fit.beta_hat = beta;
    fit.basis = detail::thin_q(qr, n, p);
    // A = W^{-1/2} Q Q^T W^{1/2} = X (X^T W X)^{-1} X^T W
    fit.hat = sw.cwiseInverse().asDiagonal() * (fit.basis * fit.basis.transpose()) * sw.asDiagonal();
    fit.dispersion = Scalar(1);
    fit.weights = w;
    fit.fitted = mu;
    fit.offset = offset;
    fit.working_response = (eta - offset).array() + (y - mu).array() / w.array();
    fit.iterations = iter;
    return fit;
}

/// Applies the OLS annihilator I - X(X^T X)^{-1} X^T without forming it.
template <typename Scalar = double>
class Annihilator {
public:
    explicit Annihilator(const Matrix<Scalar>& x) {
        if (x.rows() <= x.cols()) {
            throw Error(ErrorCode::degrees_of_freedom, "need more observations than columns");
        }
        detail::require_full_rank(x);
        Eigen::HouseholderQR<Matrix<Scalar>> qr(x);
        basis_ = detail::thin_q(qr, x.rows(), x.cols());
    }

    Vector<Scalar> apply(const Vector<Scalar>& v) const {
        return v - basis_ * (basis_.transpose() * v);
    }

    /// v^T (I - A) v
    Scalar quadratic(const Vector<Scalar>& v) const {
        return v.squaredNorm() - (basis_.transpose() * v).squaredNorm();
    }

    const Matrix<Scalar>& basis() const { return basis_; }

private:
    Matrix<Scalar> basis_;
};

}  // namespace segpower
