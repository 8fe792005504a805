#pragma once

// Reference computations shared by unit and acceptance tests. Each one is
// deliberately independent of the code path it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ecap/score_spline.hpp"
#include "ecap/simulation.hpp"

namespace ecap::testing {

// Discrete law of p on a grid.
struct Posterior {
    std::vector<double> p;
    std::vector<double> w;

    ConditionalMoments moments() const {
        double m = 0.0, s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) m += w[i] * p[i];
        for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * (p[i] - m) * (p[i] - m);
        return {m, s};
    }
    double second_moment() const {
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * p[i] * p[i];
        return s;
    }
    // Expected squared excess certainty of the estimate a.
    double loss(double a) const {
        const double d = std::min(a, 1.0 - a);
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * (p[i] - a) * (p[i] - a);
        return s / (d * d);
    }
};

// 10^4 grid points on (0, 1) with random weights concentrated below `center`.
inline Posterior random_posterior(std::mt19937_64& rng, double center, double spread) {
    Posterior post;
    std::uniform_real_distribution<double> u(0.5, 1.5);
    const int n = 10000;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = (i + 0.5) / n;
        const double z = (x - center) / spread;
        const double w = std::exp(-0.5 * z * z) * u(rng);
        post.p.push_back(x);
        post.w.push_back(w);
        total += w;
    }
    for (auto& w : post.w) w /= total;
    return post;
}

using Objective = std::function<double(const Eigen::VectorXd&)>;

// Quasi-Newton minimizer using only function values (central-difference
// gradients, BFGS update, backtracking line search).
inline Eigen::VectorXd bfgs_minimize(const Objective& f, Eigen::VectorXd x, int max_iter = 500) {
    const Eigen::Index d = x.size();
    auto grad = [&](const Eigen::VectorXd& at) {
        Eigen::VectorXd g(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(at[i]));
            Eigen::VectorXd a = at, b = at;
            a[i] += h;
            b[i] -= h;
            g[i] = (f(a) - f(b)) / (2.0 * h);
        }
        return g;
    };
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
    double fx = f(x);
    Eigen::VectorXd g = grad(x);
    for (int it = 0; it < max_iter && g.norm() > 1e-11; ++it) {
        Eigen::VectorXd dir = -H * g;
        if (dir.dot(g) >= 0.0) {
            H.setIdentity();
            dir = -g;
        }
        double step = 1.0;
        Eigen::VectorXd next = x + step * dir;
        double fn = f(next);
        while (fn > fx + 1e-4 * step * g.dot(dir) && step > 1e-20) {
            step *= 0.5;
            next = x + step * dir;
            fn = f(next);
        }
        if (!(fn < fx)) break;
        const Eigen::VectorXd gn = grad(next);
        const Eigen::VectorXd s = next - x;
        const Eigen::VectorXd y = gn - g;
        const double sy = s.dot(y);
        if (sy > 1e-300) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
            H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
        }
        x = next;
        fx = fn;
        g = gn;
    }
    return x;
}

// Omega by adaptive quadrature of b_j'' b_k'' between consecutive knots.
inline Eigen::MatrixXd penalty_by_quadrature(const SplineBasis& basis) {
    using boost::math::quadrature::gauss_kronrod;
    const auto d = static_cast<Eigen::Index>(basis.dimension());
    std::vector<double> pts = basis.knots();
    pts.push_back(0.5);
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index k = j; k < d; ++k) {
            double total = 0.0;
            for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
                total += gauss_kronrod<double, 15>::integrate(
                    [&](double x) {
                        const Eigen::VectorXd b2 = basis.second_derivatives(x);
                        return b2[j] * b2[k];
                    },
                    pts[s], pts[s + 1], 10, 1e-13);
            }
            omega(j, k) = omega(k, j) = total;
        }
    }
    return omega;
}

// Q_n(eta) assembled from pointwise basis evaluations and a quadrature Omega.
inline double criterion_reference(const std::vector<double>& flipped, const SplineBasis& basis,
                                  const Eigen::MatrixXd& omega, const Eigen::VectorXd& eta, double lambda) {
    double total = 0.0;
    for (double p : flipped) {
        const double g = basis.values(p).dot(eta);
        const double gp = basis.first_derivatives(p).dot(eta);
        total += g * g + 2.0 * ((1.0 - 2.0 * p) * g + p * (1.0 - p) * gp);
    }
    return total / static_cast<double>(flipped.size()) + lambda * eta.dot(omega * eta);
}

// Marginal density of p~ under the beta model by composite trapezoid on a
// uniform grid in m. Used to cross-check the adaptive quadrature oracle.
inline double marginal_density_trapezoid(const PriorSpec& prior, double gamma, double p_tilde, int points) {
    double total = 0.0;
    for (int i = 1; i < points; ++i) {
        const double m = static_cast<double>(i) / points;
        const double a = m / gamma;
        const double b = (1.0 - m) / gamma;
        const double log_pdf = (a - 1.0) * std::log(p_tilde) + (b - 1.0) * std::log1p(-p_tilde) -
                               (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
        total += std::exp(log_pdf) * prior.density(m);
    }
    return total / points;
}

// Pure beta-model data: q = 0, theta = 0.
inline std::vector<DataPoint> pure_beta_data(const PriorSpec& prior, double gamma, std::size_t n,
                                             std::uint64_t seed) {
    ExperimentSpec spec;
    spec.prior = prior;
    spec.gamma_star = gamma;
    spec.q = 0.0;
    spec.theta_star = 0.0;
    spec.n = n;
    spec.replicates = 1;
    spec.rng_seed = seed;
    return draw_dataset(spec, 0, DatasetRole::Train);
}

}  // namespace ecap::testing
