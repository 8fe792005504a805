#include "ecap/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ecap/errors.hpp"

namespace ecap {

Probability::Probability(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) {
        throw DomainError("Probability: value " + std::to_string(value) + " outside [0, 1]");
    }
}

BiasLinkParam::BiasLinkParam(double theta) : theta_(theta) {
    if (!(theta >= kMin && theta <= kMax)) {
        throw DomainError("BiasLinkParam: theta " + std::to_string(theta) +
                          " outside the invertible range [-4, 2]");
    }
}

double excess_certainty(double p_true, double p_est) {
    const double denom = std::min(p_est, 1.0 - p_est);
    if (!(denom > 0.0)) {
        throw DomainError("excess_certainty: estimate must lie strictly inside (0, 1)");
    }
    return (p_true - p_est) / denom;
}

Probability oracle_adjust(const ConditionalMoments& moments, bool side_le_half) {
    const double mean = moments.mean;
    const double var = moments.variance;
    if (side_le_half) {
        if (mean == 0.0) throw DomainError("oracle_adjust: conditional mean is zero");
        return Probability(std::clamp(std::min(mean + var / mean, 0.5), 0.0, 1.0));
    }
    if (mean == 1.0) throw DomainError("oracle_adjust: conditional mean is one");
    return Probability(std::clamp(std::max(0.5, mean - var / (1.0 - mean)), 0.0, 1.0));
}

double oracle_loss_gap_bound(double p_prime, double p0, double second_moment) {
    if (p_prime <= 0.0 || p_prime >= 1.0) {
        throw DomainError("oracle_loss_gap_bound: p' must lie strictly inside (0, 1)");
    }
    if (p0 <= 0.5) {
        const double d = 1.0 / p_prime - 1.0 / p0;
        return second_moment * d * d;
    }
    const double d = 1.0 / (1.0 - p_prime) - 1.0 / (1.0 - p0);
    return second_moment * d * d;
}

double h_theta(double x, BiasLinkParam theta) {
    const double t = theta.value();
    return (1.0 - 0.5 * t) * x - t * (x * x * x - 1.5 * x * x);
}

double h_theta_derivative(double x, BiasLinkParam theta) {
    const double t = theta.value();
    return (1.0 - 0.5 * t) - t * (3.0 * x * x - 3.0 * x);
}

namespace {

// Root of h(x) = y on [0, 0.5] for y in [0, 0.5]; h is nondecreasing there.
double invert_lower_half(double y, BiasLinkParam theta) {
    double lo = 0.0;
    double hi = 0.5;
    double x = y;  // exact when theta == 0
    for (int iter = 0; iter < 200; ++iter) {
        const double fx = h_theta(x, theta) - y;
        if (fx == 0.0) return x;
        if (fx < 0.0) lo = x; else hi = x;
        if (hi - lo <= 1e-15) break;
        const double d = h_theta_derivative(x, theta);
        double next = (d > 0.0) ? x - fx / d : lo - 1.0;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

}  // namespace

double h_theta_inverse(double y, BiasLinkParam theta) {
    if (!(y >= 0.0 && y <= 1.0)) {
        throw DomainError("h_theta_inverse: y outside [0, 1]");
    }
    if (theta.value() == 0.0 || y == 0.5 || y == 0.0 || y == 1.0) return y;
    if (y > 0.5) return 1.0 - invert_lower_half(1.0 - y, theta);
    return invert_lower_half(y, theta);
}

FlippedValue flip(double p) {
    if (p > 0.5) return {1.0 - p, true};
    return {p, false};
}

double unflip(const FlippedValue& v) { return v.flipped ? 1.0 - v.value : v.value; }

}  // namespace ecap
