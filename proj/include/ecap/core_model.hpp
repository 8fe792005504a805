#pragma once

// Scalar mathematics of the probability-estimate model: excess certainty,
// the oracle shrinkage rule, the cubic bias link and the flip transform.

namespace ecap {

/// A value in [0, 1]; construction outside that range throws DomainError.
class Probability {
public:
    Probability() = default;
    explicit Probability(double value);

    double value() const noexcept { return value_; }
    operator double() const noexcept { return value_; }

private:
    double value_ = 0.0;
};

/// Conditional mean and variance of the true probability given an estimate.
struct ConditionalMoments {
    double mean = 0.5;
    double variance = 0.0;
};

/// Bias link parameter, restricted to the invertible range [-4, 2].
class BiasLinkParam {
public:
    static constexpr double kMin = -4.0;
    static constexpr double kMax = 2.0;

    BiasLinkParam() = default;
    explicit BiasLinkParam(double theta);

    double value() const noexcept { return theta_; }

private:
    double theta_ = 0.0;
};

struct FlippedValue {
    double value = 0.0;  // always <= 0.5
    bool flipped = false;
};

/// (p_true - p_est) / min(p_est, 1 - p_est). Throws DomainError for p_est in {0, 1}.
double excess_certainty(double p_true, double p_est);

/// Oracle estimate minimizing expected squared excess certainty.
///
/// On the lower side returns min(mean + var/mean, 0.5); on the upper side
/// max(0.5, mean - var/(1 - mean)). Throws DomainError when the divisor is zero.
Probability oracle_adjust(const ConditionalMoments& moments, bool side_le_half);

/// Lower bound on L(p') - L(p0). `second_moment` is E(p^2 | p~) when p0 <= 0.5
/// and E((1-p)^2 | p~) otherwise.
double oracle_loss_gap_bound(double p_prime, double p0, double second_moment);

/// Cubic bias link (1 - theta/2) x - theta (x^3 - 1.5 x^2).
double h_theta(double x, BiasLinkParam theta);
double h_theta_derivative(double x, BiasLinkParam theta);

/// Unique x in [0, 1] with h_theta(x) = y, by safeguarded Newton/bisection.
double h_theta_inverse(double y, BiasLinkParam theta);

FlippedValue flip(double p);
double unflip(const FlippedValue& v);

}  // namespace ecap
