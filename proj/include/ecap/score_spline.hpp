#pragma once

// Penalized natural-cubic-spline estimate of the scaled score function
// g(p) = p (1 - p) d/dp log f(p) of the marginal density of the estimates.
//
// The spline lives on the flipped scale [0, 0.5]. Its knots are the data knots
// plus the constraint point 0.5, which is also the right boundary knot: every
// basis function vanishes there, and the natural boundary condition g''(0.5) = 0
// is the one an odd-symmetric score satisfies. Internally the basis is a
// clamped cubic B-spline basis with the three linear constraints
// g''(t_0) = 0, g''(0.5) = 0, g(0.5) = 0 eliminated locally, so every basis
// function has compact support and the normal equations are banded.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace ecap {

/// Nonzero basis functions at one abscissa: indices first, first+1, ...
struct BasisRow {
    std::size_t first = 0;
    int count = 0;
    std::array<double, 4> value{};
    std::array<double, 4> d1{};
    std::array<double, 4> d2{};
};

class SplineBasis {
public:
    static constexpr double kCenter = 0.5;

    SplineBasis() = default;

    /// Basis from explicit data knots: strictly increasing, at least two, all in [0, 0.5).
    static SplineBasis from_knots(std::vector<double> knots);

    const std::vector<double>& knots() const noexcept { return knots_; }
    double center() const noexcept { return kCenter; }
    std::size_t dimension() const noexcept { return knots_.size(); }

    /// Basis values and first two derivatives at x. Outside [min knot, 0.5] the
    /// basis is extended linearly.
    BasisRow evaluate(double x) const;

    /// Dense vectors b(x), b'(x), b''(x); convenient for tests and small problems.
    Eigen::VectorXd values(double x) const;
    Eigen::VectorXd first_derivatives(double x) const;
    Eigen::VectorXd second_derivatives(double x) const;

private:
    struct BSplineEval {
        std::size_t span = 0;  // B-splines span-3 .. span are nonzero
        std::array<double, 4> value{};
        std::array<double, 4> d1{};
        std::array<double, 4> d2{};
    };

    BSplineEval eval_bsplines(double x) const;
    BasisRow evaluate_inside(double x) const;

    std::vector<double> knots_;       // data knots, strictly below 0.5
    std::vector<double> full_knots_;  // clamped knot vector for the B-spline basis
    double left_c1_ = 0.0;            // c_0 = left_c1_ * eta_0 + left_c2_ * eta_1
    double left_c2_ = 0.0;
    double right_c_ = 0.0;            // c_{m+1} = right_c_ * eta_{m-1}
};

/// Knots from flipped values: the distinct values below 0.5, thinned to
/// `max_knots` quantiles (always keeping min and max) when there are more.
/// Throws InsufficientDataError for fewer than four distinct values.
SplineBasis build_basis(std::span<const double> flipped_values, std::size_t max_knots = 400);

/// Omega_jk = integral of b_j'' b_k'' over [0, 1], exact.
Eigen::SparseMatrix<double> penalty_matrix(const SplineBasis& basis);

struct GValue {
    double g = 0.0;
    double g_prime = 0.0;
};

struct ScoreSplineFit {
    SplineBasis basis;
    Eigen::VectorXd eta;
    double lambda = 0.0;
};

/// Closed-form minimizer of the penalized empirical risk for one lambda.
/// Values above 0.5 are flipped first.
ScoreSplineFit fit_g(std::span<const double> values, const SplineBasis& basis, double lambda);

/// g and g' at any p in [0, 1], using g(p) = -g(1 - p) above 0.5.
GValue evaluate_g(const ScoreSplineFit& fit, double p_tilde);

/// Second derivative on the flipped scale (for diagnostics and tests).
double evaluate_g_second(const ScoreSplineFit& fit, double p_tilde_flipped);

/// Integral of g''^2 over [0, 1] for the fitted spline on the flipped scale.
double curvature_penalty(const ScoreSplineFit& fit);

/// Penalized criterion Q_n(eta) on `values` (flipped internally).
double penalized_criterion(std::span<const double> values, const SplineBasis& basis,
                           const Eigen::VectorXd& eta, double lambda);

using ScoreFunction = std::function<GValue(double)>;

/// (1/n) sum g^2 + (2/n) sum [g (1 - 2p) + p (1 - p) g'].
double empirical_risk(const ScoreFunction& g, std::span<const double> values);
double empirical_risk(const ScoreSplineFit& fit, std::span<const double> values);

struct CvConfig {
    int num_folds = 10;
    std::vector<double> lambda_grid;  // empty means default_lambda_grid()
    std::uint64_t rng_seed = 0;
    std::size_t max_knots = 400;
};

/// 40 log-spaced values on [1e-8, 1e2].
std::vector<double> default_lambda_grid();

struct CvResult {
    double lambda_hat = 0.0;
    std::vector<std::pair<double, double>> risk_curve;  // (lambda, R_lambda)
};

/// Fold assignment: seeded shuffle of 0..n-1 cut into contiguous, near-even blocks.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int num_folds, std::uint64_t seed);

/// K-fold cross-validated choice of lambda. Each training fold builds its own
/// basis (capped at config.max_knots); held-out risks are summed per fold and
/// divided by n. Ties go to the larger lambda.
CvResult cross_validate_lambda(std::span<const double> values, const CvConfig& config);

/// CV to pick lambda, then one fit on all values with a basis built from them.
ScoreSplineFit fit_g_cv(std::span<const double> values, const CvConfig& config,
                        CvResult* cv_out = nullptr);

}  // namespace ecap
