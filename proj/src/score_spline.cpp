#include "ecap/score_spline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/SparseCholesky>

#include "ecap/core_model.hpp"
#include "ecap/errors.hpp"
#include "ecap/rng.hpp"

namespace ecap {

namespace {

constexpr int kDegree = 3;

// Cox-de Boor basis functions and derivatives up to order 2 for a cubic
// B-spline (Piegl & Tiller, algorithm A2.3).
void bspline_derivatives(std::size_t span, double u, const std::vector<double>& U,
                         double ders[3][4]) {
    double ndu[4][4];
    double left[4];
    double right[4];
    ndu[0][0] = 1.0;
    for (int j = 1; j <= kDegree; ++j) {
        left[j] = u - U[span + 1 - j];
        right[j] = U[span + j] - u;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu[j][r] = right[r + 1] + left[j - r];
            const double temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    for (int j = 0; j <= kDegree; ++j) ders[0][j] = ndu[j][kDegree];

    double a[2][4];
    for (int r = 0; r <= kDegree; ++r) {
        int s1 = 0;
        int s2 = 1;
        a[0][0] = 1.0;
        for (int k = 1; k <= 2; ++k) {
            double d = 0.0;
            const int rk = r - k;
            const int pk = kDegree - k;
            if (r >= k) {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            const int j1 = (rk >= -1) ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : kDegree - r;
            for (int j = j1; j <= j2; ++j) {
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                d += a[s2][j] * ndu[rk + j][pk];
            }
            if (r <= pk) {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::swap(s1, s2);
        }
    }
    double factor = kDegree;
    for (int k = 1; k <= 2; ++k) {
        for (int j = 0; j <= kDegree; ++j) ders[k][j] *= factor;
        factor *= (kDegree - k);
    }
}

// Flipped copy of the input; values must be probabilities.
std::vector<double> flipped_copy(std::span<const double> values) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw DomainError("score spline: value " + std::to_string(v) + " outside [0, 1]");
        }
        out.push_back(flip(v).value);
    }
    return out;
}

// Gram matrix, linear term and penalty of the quadratic criterion for one sample.
class NormalEquations {
public:
    NormalEquations(std::span<const double> flipped, const SplineBasis& basis)
        : n_(flipped.size()), omega_(penalty_matrix(basis)) {
        const auto m = static_cast<Eigen::Index>(basis.dimension());
        rhs_ = Eigen::VectorXd::Zero(m);
        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(flipped.size() * 16);
        for (double p : flipped) {
            const BasisRow row = basis.evaluate(p);
            const double w = 1.0 - 2.0 * p;
            const double v = p * (1.0 - p);
            for (int a = 0; a < row.count; ++a) {
                const auto ia = static_cast<Eigen::Index>(row.first + a);
                rhs_[ia] += w * row.value[a] + v * row.d1[a];
                for (int b = 0; b < row.count; ++b) {
                    triplets.emplace_back(ia, static_cast<Eigen::Index>(row.first + b),
                                          row.value[a] * row.value[b]);
                }
            }
        }
        gram_.resize(m, m);
        gram_.setFromTriplets(triplets.begin(), triplets.end());
        pattern_ = gram_ + omega_;
        solver_.analyzePattern(pattern_);
    }

    Eigen::VectorXd solve(double lambda) {
        if (!(lambda > 0.0)) throw DomainError("fit_g: lambda must be positive");
        Eigen::SparseMatrix<double> system = gram_ + (static_cast<double>(n_) * lambda) * omega_;
        solver_.factorize(system);
        if (solver_.info() != Eigen::Success) {
            double trace = 0.0;
            for (Eigen::Index i = 0; i < system.rows(); ++i) trace += system.coeff(i, i);
            const double jitter = 1e-10 * trace / static_cast<double>(system.rows());
            Eigen::SparseMatrix<double> identity(system.rows(), system.cols());
            identity.setIdentity();
            system += jitter * identity;
            solver_.factorize(system);
            if (solver_.info() != Eigen::Success) {
                throw NumericError("fit_g: normal equations are singular after ridge jitter");
            }
        }
        Eigen::VectorXd eta = -solver_.solve(rhs_);
        if (solver_.info() != Eigen::Success || !eta.allFinite()) {
            throw NumericError("fit_g: solve failed");
        }
        return eta;
    }

    const Eigen::SparseMatrix<double>& gram() const { return gram_; }
    const Eigen::VectorXd& rhs() const { return rhs_; }
    const Eigen::SparseMatrix<double>& omega() const { return omega_; }
    std::size_t size() const { return n_; }

private:
    std::size_t n_;
    Eigen::SparseMatrix<double> gram_;
    Eigen::VectorXd rhs_;
    Eigen::SparseMatrix<double> omega_;
    Eigen::SparseMatrix<double> pattern_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

double row_dot(const BasisRow& row, const std::array<double, 4>& column,
               const Eigen::VectorXd& eta) {
    double s = 0.0;
    for (int a = 0; a < row.count; ++a) s += column[a] * eta[static_cast<Eigen::Index>(row.first + a)];
    return s;
}

}  // namespace

SplineBasis SplineBasis::from_knots(std::vector<double> knots) {
    if (knots.size() < 2) {
        throw InsufficientDataError("SplineBasis: need at least two knots");
    }
    for (std::size_t i = 0; i < knots.size(); ++i) {
        if (!(knots[i] >= 0.0 && knots[i] < kCenter)) {
            throw DomainError("SplineBasis: knots must lie in [0, 0.5)");
        }
        if (i > 0 && !(knots[i] > knots[i - 1])) {
            throw DomainError("SplineBasis: knots must be strictly increasing");
        }
    }

    SplineBasis basis;
    basis.knots_ = std::move(knots);
    const double t0 = basis.knots_.front();
    auto& U = basis.full_knots_;
    U.assign(kDegree + 1, t0);
    U.insert(U.end(), basis.knots_.begin() + 1, basis.knots_.end());
    U.insert(U.end(), kDegree + 1, kCenter);

    // Natural condition at the left boundary: c_0 follows from c_1, c_2.
    const BSplineEval left = basis.eval_bsplines(t0);
    basis.left_c1_ = -left.d2[1] / left.d2[0];
    basis.left_c2_ = -left.d2[2] / left.d2[0];
    // Natural condition at 0.5 with the last coefficient pinned to zero.
    const BSplineEval right = basis.eval_bsplines(kCenter);
    basis.right_c_ = -right.d2[1] / right.d2[2];
    return basis;
}

SplineBasis::BSplineEval SplineBasis::eval_bsplines(double x) const {
    const std::size_t num_bsplines = full_knots_.size() - kDegree - 1;
    BSplineEval out;
    if (x >= full_knots_[num_bsplines]) {
        out.span = num_bsplines - 1;
    } else {
        // Largest index with U[span] <= x, restricted to [degree, num_bsplines - 1].
        const auto begin = full_knots_.begin() + kDegree;
        const auto end = full_knots_.begin() + static_cast<std::ptrdiff_t>(num_bsplines);
        auto it = std::upper_bound(begin, end, x);
        out.span = static_cast<std::size_t>(std::distance(full_knots_.begin(), it)) - 1;
        out.span = std::max<std::size_t>(out.span, kDegree);
    }
    double ders[3][4];
    bspline_derivatives(out.span, x, full_knots_, ders);
    for (int k = 0; k < 4; ++k) {
        out.value[k] = ders[0][k];
        out.d1[k] = ders[1][k];
        out.d2[k] = ders[2][k];
    }
    return out;
}

BasisRow SplineBasis::evaluate_inside(double x) const {
    const BSplineEval e = eval_bsplines(x);
    const std::size_t m = knots_.size();
    const std::size_t first = e.span >= 4 ? e.span - 4 : 0;
    BasisRow row;
    row.first = first;
    std::size_t last = first;
    auto add = [&](std::size_t eta_index, double scale, int k) {
        const std::size_t slot = eta_index - first;
        row.value[slot] += scale * e.value[k];
        row.d1[slot] += scale * e.d1[k];
        row.d2[slot] += scale * e.d2[k];
        last = std::max(last, eta_index);
    };
    for (int k = 0; k < 4; ++k) {
        const std::size_t l = e.span - 3 + static_cast<std::size_t>(k);
        if (l == 0) {
            add(0, left_c1_, k);
            add(1, left_c2_, k);
        } else if (l <= m) {
            add(l - 1, 1.0, k);
        } else if (l == m + 1) {
            add(m - 1, right_c_, k);
        }
        // l == m + 2 carries the pinned zero coefficient.
    }
    row.count = static_cast<int>(last - first + 1);
    return row;
}

BasisRow SplineBasis::evaluate(double x) const {
    const double lo = knots_.front();
    if (x < lo || x > kCenter) {
        const double edge = x < lo ? lo : kCenter;
        BasisRow row = evaluate_inside(edge);
        for (int a = 0; a < row.count; ++a) {
            row.value[a] += row.d1[a] * (x - edge);
            row.d2[a] = 0.0;
        }
        return row;
    }
    return evaluate_inside(x);
}

Eigen::VectorXd SplineBasis::values(double x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension()));
    const BasisRow row = evaluate(x);
    for (int a = 0; a < row.count; ++a) out[static_cast<Eigen::Index>(row.first + a)] = row.value[a];
    return out;
}

Eigen::VectorXd SplineBasis::first_derivatives(double x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension()));
    const BasisRow row = evaluate(x);
    for (int a = 0; a < row.count; ++a) out[static_cast<Eigen::Index>(row.first + a)] = row.d1[a];
    return out;
}

Eigen::VectorXd SplineBasis::second_derivatives(double x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension()));
    const BasisRow row = evaluate(x);
    for (int a = 0; a < row.count; ++a) out[static_cast<Eigen::Index>(row.first + a)] = row.d2[a];
    return out;
}

SplineBasis build_basis(std::span<const double> flipped_values, std::size_t max_knots) {
    std::vector<double> distinct;
    distinct.reserve(flipped_values.size());
    for (double v : flipped_values) {
        if (!(v >= 0.0 && v <= SplineBasis::kCenter)) {
            throw DomainError("build_basis: flipped values must lie in [0, 0.5]");
        }
        if (v < SplineBasis::kCenter) distinct.push_back(v);
    }
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 4) {
        throw InsufficientDataError("build_basis: need at least 4 distinct values below 0.5, got " +
                                    std::to_string(distinct.size()));
    }
    if (max_knots < 4) throw ConfigurationError("build_basis: max_knots must be at least 4");
    if (distinct.size() <= max_knots) return SplineBasis::from_knots(std::move(distinct));

    std::vector<double> knots(max_knots);
    const double step = static_cast<double>(distinct.size() - 1) / static_cast<double>(max_knots - 1);
    for (std::size_t j = 0; j < max_knots; ++j) {
        knots[j] = distinct[static_cast<std::size_t>(std::llround(step * static_cast<double>(j)))];
    }
    return SplineBasis::from_knots(std::move(knots));
}

Eigen::SparseMatrix<double> penalty_matrix(const SplineBasis& basis) {
    // b'' is linear between knots, so Simpson's rule integrates b_j'' b_k'' exactly.
    std::vector<double> nodes = basis.knots();
    nodes.push_back(SplineBasis::kCenter);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(nodes.size() * 48);
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        const double a = nodes[i];
        const double b = nodes[i + 1];
        const double h = b - a;
        const double xs[3] = {a, 0.5 * (a + b), b};
        const double ws[3] = {h / 6.0, 4.0 * h / 6.0, h / 6.0};
        // Evaluate on this segment's span so the midpoint rule sees one polynomial.
        for (int q = 0; q < 3; ++q) {
            const BasisRow row = basis.evaluate(xs[q]);
            for (int r = 0; r < row.count; ++r) {
                for (int c = 0; c < row.count; ++c) {
                    triplets.emplace_back(static_cast<Eigen::Index>(row.first + r),
                                          static_cast<Eigen::Index>(row.first + c),
                                          ws[q] * (row.d2[r] * row.d2[c]));
                }
            }
        }
    }
    const auto m = static_cast<Eigen::Index>(basis.dimension());
    Eigen::SparseMatrix<double> omega(m, m);
    omega.setFromTriplets(triplets.begin(), triplets.end());
    return omega;
}

ScoreSplineFit fit_g(std::span<const double> values, const SplineBasis& basis, double lambda) {
    const std::vector<double> flipped = flipped_copy(values);
    if (flipped.empty()) throw InsufficientDataError("fit_g: empty sample");
    NormalEquations system(flipped, basis);
    return ScoreSplineFit{basis, system.solve(lambda), lambda};
}

GValue evaluate_g(const ScoreSplineFit& fit, double p_tilde) {
    const FlippedValue f = flip(p_tilde);
    const BasisRow row = fit.basis.evaluate(f.value);
    const double g = row_dot(row, row.value, fit.eta);
    const double gp = row_dot(row, row.d1, fit.eta);
    if (f.flipped) return {-g, gp};
    return {g, gp};
}

double evaluate_g_second(const ScoreSplineFit& fit, double p_tilde_flipped) {
    const BasisRow row = fit.basis.evaluate(p_tilde_flipped);
    return row_dot(row, row.d2, fit.eta);
}

double curvature_penalty(const ScoreSplineFit& fit) {
    const Eigen::SparseMatrix<double> omega = penalty_matrix(fit.basis);
    return fit.eta.dot(omega * fit.eta);
}

double penalized_criterion(std::span<const double> values, const SplineBasis& basis,
                           const Eigen::VectorXd& eta, double lambda) {
    const std::vector<double> flipped = flipped_copy(values);
    NormalEquations system(flipped, basis);
    const double n = static_cast<double>(flipped.size());
    return eta.dot(system.gram() * eta) / n + 2.0 * system.rhs().dot(eta) / n +
           lambda * eta.dot(system.omega() * eta);
}

double empirical_risk(const ScoreFunction& g, std::span<const double> values) {
    if (values.empty()) return 0.0;
    double squares = 0.0;
    double cross = 0.0;
    for (double p : values) {
        const GValue v = g(p);
        squares += v.g * v.g;
        cross += v.g * (1.0 - 2.0 * p) + p * (1.0 - p) * v.g_prime;
    }
    const double n = static_cast<double>(values.size());
    return squares / n + 2.0 * cross / n;
}

double empirical_risk(const ScoreSplineFit& fit, std::span<const double> values) {
    return empirical_risk([&fit](double p) { return evaluate_g(fit, p); }, values);
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid(40);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = std::pow(10.0, -8.0 + 10.0 * static_cast<double>(i) / 39.0);
    }
    return grid;
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int num_folds, std::uint64_t seed) {
    if (num_folds < 2) throw ConfigurationError("cross-validation needs at least 2 folds");
    if (static_cast<std::size_t>(num_folds) > n) {
        throw InsufficientDataError("cross-validation: more folds than observations");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    shuffle(order, rng);
    const std::size_t k = static_cast<std::size_t>(num_folds);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        pos += size;
    }
    return folds;
}

CvResult cross_validate_lambda(std::span<const double> values, const CvConfig& config) {
    const std::vector<double> grid =
        config.lambda_grid.empty() ? default_lambda_grid() : config.lambda_grid;
    for (double l : grid) {
        if (!(l > 0.0)) throw ConfigurationError("lambda grid values must be positive");
    }
    const std::vector<double> flipped = flipped_copy(values);
    const auto folds = make_folds(flipped.size(), config.num_folds, config.rng_seed);

    std::vector<double> totals(grid.size(), 0.0);
    std::vector<char> held_out(flipped.size(), 0);
    std::vector<double> train;
    for (const auto& fold : folds) {
        std::fill(held_out.begin(), held_out.end(), 0);
        for (std::size_t i : fold) held_out[i] = 1;
        train.clear();
        for (std::size_t i = 0; i < flipped.size(); ++i) {
            if (!held_out[i]) train.push_back(flipped[i]);
        }
        const SplineBasis basis = build_basis(train, config.max_knots);
        NormalEquations system(train, basis);

        std::vector<BasisRow> rows;
        rows.reserve(fold.size());
        for (std::size_t i : fold) rows.push_back(basis.evaluate(flipped[i]));

        for (std::size_t li = 0; li < grid.size(); ++li) {
            const Eigen::VectorXd eta = system.solve(grid[li]);
            double risk = 0.0;
            for (std::size_t r = 0; r < fold.size(); ++r) {
                const double p = flipped[fold[r]];
                const double h = row_dot(rows[r], rows[r].value, eta);
                const double hp = row_dot(rows[r], rows[r].d1, eta);
                risk += h * h + 2.0 * ((1.0 - 2.0 * p) * h + p * (1.0 - p) * hp);
            }
            totals[li] += risk;
        }
    }

    CvResult result;
    const double n = static_cast<double>(flipped.size());
    std::size_t best = 0;
    for (std::size_t li = 0; li < grid.size(); ++li) {
        const double r = totals[li] / n;
        result.risk_curve.emplace_back(grid[li], r);
        const double best_r = totals[best] / n;
        if (r < best_r || (r == best_r && grid[li] > grid[best])) best = li;
    }
    result.lambda_hat = grid[best];
    return result;
}

ScoreSplineFit fit_g_cv(std::span<const double> values, const CvConfig& config, CvResult* cv_out) {
    CvResult cv = cross_validate_lambda(values, config);
    const std::vector<double> flipped = flipped_copy(values);
    const SplineBasis basis = build_basis(flipped, config.max_knots);
    ScoreSplineFit fit = fit_g(flipped, basis, cv.lambda_hat);
    if (cv_out) *cv_out = std::move(cv);
    return fit;
}

}  // namespace ecap
