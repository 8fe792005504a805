#pragma once

// Synthetic (p, p~, Z) generation, the James-Stein baseline, the factorial
// experiments comparing adjustment methods, and a quadrature reference for the
// true score function.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecap/core_model.hpp"
#include "ecap/estimator.hpp"
#include "ecap/rng.hpp"
#include "ecap/score_spline.hpp"

namespace ecap {

struct BetaShape {
    double a = 1.0;
    double b = 1.0;
};

/// Prior on the true probability: one beta or an equal mixture of two.
class PriorSpec {
public:
    enum class Kind { Beta, EqualMixture };

    PriorSpec() = default;
    static PriorSpec beta(double a, double b);
    static PriorSpec equal_mixture(BetaShape first, BetaShape second);

    Kind kind() const noexcept { return kind_; }
    const std::vector<BetaShape>& components() const noexcept { return components_; }

    double sample(Rng& rng) const;
    double density(double p) const;
    double cdf(double p) const;

private:
    Kind kind_ = Kind::Beta;
    std::vector<BetaShape> components_{BetaShape{1.0, 1.0}};
};

enum class Method { Unadjusted, EcapOpt, EcapMle, JsOpt, JsMle };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct ExperimentSpec {
    PriorSpec prior;
    double gamma_star = 0.005;
    double q = 0.0;
    double theta_star = 0.0;
    std::size_t n = 1000;
    int replicates = 100;
    std::uint64_t rng_seed = 0;
    std::vector<Method> methods{Method::Unadjusted, Method::EcapOpt, Method::EcapMle,
                                Method::JsOpt, Method::JsMle};
    // Tuning used by the ECAP methods; theta_grid {0} disables bias correction.
    EcapConfig ecap = unbiased_ecap_config();
    std::vector<double> js_grid = default_js_grid();

    void validate() const;

    /// Default EcapConfig with theta fixed at 0.
    static EcapConfig unbiased_ecap_config();
    /// 0, 0.01, ..., 1.
    static std::vector<double> default_js_grid();
};

struct DataPoint {
    double p = 0.0;
    double p_tilde = 0.0;
    int z = 0;
};

enum class DatasetRole : std::uint64_t { Train = 0, Test = 1 };

/// m ~ prior, p = h_theta*(m), p~ = m + min(m, 1-m)^q (p~o - m) with
/// p~o ~ Beta(m/gamma*, (1-m)/gamma*), Z ~ Bernoulli(p).
/// Deterministic in (spec.rng_seed, replicate_index, role).
std::vector<DataPoint> draw_dataset(const ExperimentSpec& spec, std::uint64_t replicate_index,
                                    DatasetRole role = DatasetRole::Train);

/// Beta(a, b) variate via two gamma draws.
double sample_beta(Rng& rng, double a, double b);

/// Shrink flipped values toward their mean by factor c, then flip back.
std::vector<double> james_stein_adjust(std::span<const double> values, double c);

/// Same rule with an externally supplied (flipped-scale) center.
std::vector<double> james_stein_apply(std::span<const double> values, double c, double center);

/// Mean of the flipped values.
double flipped_mean(std::span<const double> values);

enum class JsMode { Opt, Mle };

/// Grid search for c. Opt minimizes mean EC^2 against `side` = true p;
/// Mle maximizes the Bernoulli likelihood with `side` = outcomes.
/// Ties go to the smaller c.
double tune_js(std::span<const double> values, JsMode mode, std::span<const double> side,
               const std::vector<double>& c_grid, double likelihood_clamp = 1e-6);

struct MethodOutcome {
    std::optional<double> mean_ec2;  // empty when the method failed
    std::string error;
    std::optional<double> gamma_hat;
    std::optional<double> theta_hat;
    std::optional<double> c_hat;
};

struct ReplicateRecord {
    int index = 0;
    std::map<Method, MethodOutcome> outcomes;
};

struct MethodSummary {
    Method method = Method::Unadjusted;
    double mean = 0.0;
    std::optional<double> standard_error;  // absent with fewer than two replicates
    int replicates_ok = 0;
    int replicates_failed = 0;
};

struct ExperimentResult {
    std::vector<MethodSummary> summary;
    std::vector<ReplicateRecord> replicates;

    const MethodSummary& of(Method m) const;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

/// Mean squared excess certainty of `estimates` against `truth`.
double mean_squared_excess_certainty(std::span<const double> truth, std::span<const double> estimates);

/// Posterior expectation E[phi(m) | p~] when m has density `density` on (0, 1)
/// and p~ | m ~ Beta(m/gamma, (1-m)/gamma). Adaptive Gauss-Kronrod quadrature.
double posterior_expectation(const std::function<double(double)>& density, double gamma,
                             double p_tilde, const std::function<double(double)>& phi);

/// Exact E(m | p~) and Var(m | p~) by quadrature.
ConditionalMoments posterior_moments(const std::function<double(double)>& density, double gamma,
                                     double p_tilde);

/// g*(p~) = p~(1-p~) f'(p~)/f(p~) for the marginal under `prior`, with g*' by
/// central differences. Throws DomainError outside (0, 1).
GValue true_score_numeric(const PriorSpec& prior, double gamma_star, double p_tilde);

/// Kolmogorov-Smirnov distance between a sample and the prior CDF.
double ks_distance(std::span<const double> sample, const PriorSpec& prior);

}  // namespace ecap
