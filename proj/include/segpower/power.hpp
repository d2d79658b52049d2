#pragma once

// Analytic power of the pseudo-score test under a broken-line alternative
//
//   y = X beta + delta (z - psi)_+ + sigma eps,
//
// where s0 is Normal with unit variance and mean
//
//   E1 = delta phibar^T (I - A) (z - psi)_+ / sqrt(sigma^2 phibar^T (I - A) phibar).
//
// The null design X always carries the intercept and the linear z term; extra
// covariates are appended after them.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

#include "segpower/covariate_spec.hpp"
#include "segpower/model_core.hpp"
#include "segpower/pscore.hpp"

namespace segpower {

struct PowerRequest {
    std::optional<Index> n;
    std::optional<double> target_power;
    CovariateSpec z_spec;
    double psi = 0.5;
    double delta = 0.0;
    double sigma = 1.0;
    double alpha = 0.01;
    Alternative alternative = Alternative::two_sided;
    /// n x q matrix of covariates beyond intercept and z.
    std::optional<Eigen::MatrixXd> extra_covariates;

    void validate() const;
};

struct PowerInterval {
    double lower = 0;
    double upper = 0;
    int draws = 0;
};

struct PowerResult {
    double power = 0;
    double e1 = 0;
    Index n_used = 0;
    Eigen::VectorXd z_realized;
    std::optional<PowerInterval> interval;
};

struct SampleSizeResult {
    Index n = 0;
    double power_at_n = 0;
};

/// [1 | z | extras].
DesignMatrix<double> null_design(const Eigen::VectorXd& z, const std::optional<Eigen::MatrixXd>& extras = {});

/// E1 for a fixed covariate and null design, reusable across (psi, delta, sigma).
class PowerKernel {
public:
    PowerKernel(const Eigen::VectorXd& z, const DesignMatrix<double>& x, TermKind kind = TermKind::broken_line,
                int candidates = kDefaultCandidateCount);

    double e1(double psi, double delta, double sigma) const;

    const Eigen::VectorXd& phi_bar() const { return phi_bar_; }

private:
    Eigen::VectorXd z_;
    Eigen::VectorXd phi_bar_;
    Eigen::VectorXd residual_phi_;  // (I - A) phibar
    double quad_ = 0;
};

double expected_s0(const Eigen::VectorXd& z, double psi, double delta, double sigma, const DesignMatrix<double>& x);

double power_from_e1(double e1, double alpha, Alternative alternative);

PowerResult compute_power(const PowerRequest& req);

/// Smallest n >= 5 whose power reaches req.target_power.
SampleSizeResult sample_size(const PowerRequest& req);

struct ProfileFit {
    double psi_hat = 0;
    double delta_hat = 0;
    Eigen::VectorXd beta_hat;
    double rss = 0;
};

struct SegmentedFit {
    double psi_hat = 0;
    double delta_hat = 0;
    Eigen::VectorXd beta_hat;
    double sigma_hat = 0;
    /// Var of (delta_hat, psi_hat), in that order.
    Eigen::Matrix2d cov_delta_psi = Eigen::Matrix2d::Zero();
    double rss = 0;
};

/// RSS profile over interior z quantiles (plus the observed z values for n <= 1000),
/// keeping at least 3 observations on each side of psi.
ProfileFit profile_segmented(const Eigen::VectorXd& y, const DesignMatrix<double>& x, const Eigen::VectorXd& z);

/// Profile fit followed by one linearization step for Var(delta_hat, psi_hat).
SegmentedFit fit_segmented(const Eigen::VectorXd& y, const DesignMatrix<double>& x, const Eigen::VectorXd& z);

struct PosthocOptions {
    double alpha = 0.01;
    Alternative alternative = Alternative::two_sided;
    std::optional<int> ci_draws;
    std::uint64_t seed = 1;
};

/// Power at the fitted (delta, psi, sigma); optionally a resampling interval from
/// Normal draws of (delta, psi) with sigma held fixed.
PowerResult posthoc_power(const SegmentedFit& fit, const Eigen::VectorXd& z, const DesignMatrix<double>& x,
                          const PosthocOptions& opts = {});

}  // namespace segpower
