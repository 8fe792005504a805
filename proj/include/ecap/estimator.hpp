#pragma once

// The full adjustment pipeline: flip, estimate the score spline, form plug-in
// conditional moments (optionally bias-corrected and/or under a beta mixture),
// apply the oracle rule and tune (gamma, theta) on a grid.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ecap/core_model.hpp"
#include "ecap/score_spline.hpp"

namespace ecap {

/// One raw estimate with optional realized outcome and (in simulations) truth.
struct ProbabilitySample {
    double p_tilde = 0.5;
    std::optional<int> z;
    std::optional<double> p_true;
};

/// Mixture of beta kernels with weights w_k and scales c_k,
/// sum w_k = 1 and sum w_k c_k = 1.
struct MixtureSpec {
    std::vector<double> weights;
    std::vector<double> scales;

    void validate() const;
    double inverse_scale_sum() const;          // sum w_k / c_k
    double inverse_scale_square_sum() const;   // sum w_k / c_k^2
};

enum class VarianceFloorKind { Absolute, Theoretical };

/// sigma^2 floor: a fixed epsilon, or c * sqrt(r_n s_n) with
/// r_n = n^{-4/7}/lambda + n^{-2/7} + lambda and s_n = 1 + n^{-4/7}/lambda^2.
struct VarianceFloorPolicy {
    VarianceFloorKind kind = VarianceFloorKind::Absolute;
    double epsilon = 1e-12;
    double c = 1.0;
    std::optional<double> lambda_n;  // defaults to the cross-validated lambda

    double resolve(std::size_t n, double lambda_hat) const;
};

enum class MleMode { InSample, SplitSample };

struct EcapConfig {
    std::vector<double> gamma_grid = default_gamma_grid();
    std::vector<double> theta_grid = default_theta_grid();
    CvConfig cv;
    VarianceFloorPolicy variance_floor;
    double likelihood_clamp = 1e-6;
    std::optional<MixtureSpec> mixture;
    MleMode mle_mode = MleMode::InSample;

    void validate() const;

    /// 30 log-spaced values on [1e-4, 0.1].
    static std::vector<double> default_gamma_grid();
    /// -4.0, -3.9, ..., 2.0.
    static std::vector<double> default_theta_grid();
};

/// Floor for sigma^2 and the clamp keeping the mean inside (eps, 1 - eps).
struct MomentPolicy {
    double variance_floor = 1e-12;
    double mean_clamp = 1e-6;
};

struct EcapModel {
    ScoreSplineFit spline;
    double gamma_hat = 0.0;
    double theta_hat = 0.0;
    std::optional<MixtureSpec> mixture;
    EcapConfig config;
    MomentPolicy policy;
    std::size_t n_train = 0;
};

struct AdjustedProbability {
    double p_tilde = 0.0;
    double p_hat = 0.0;
    double mu_hat = 0.0;
    double sigma2_hat = 0.0;
    bool flipped = false;
};

/// mu = p + gamma (g + 1 - 2p), sigma^2 = gamma p(1-p) + gamma^2 p(1-p)(g' - 2),
/// then floored/clamped per `policy`. `p_flipped` lies in [0, 0.5].
ConditionalMoments plug_in_moments(double p_flipped, GValue g, double gamma,
                                   const MomentPolicy& policy = {});
ConditionalMoments plug_in_moments(double p_flipped, const ScoreSplineFit& fit, double gamma,
                                   const MomentPolicy& policy = {});

/// Second-order correction of the moments for the cubic bias link.
ConditionalMoments bias_corrected_moments(const ConditionalMoments& moments, BiasLinkParam theta,
                                          const MomentPolicy& policy = {});

/// Moments under the beta-mixture model.
ConditionalMoments mixture_moments(const ConditionalMoments& moments, const MixtureSpec& spec);

/// Full chain on the flipped scale: plug-in -> bias correction -> mixture.
ConditionalMoments model_moments(double p_flipped, GValue g, double gamma, double theta,
                                 const std::optional<MixtureSpec>& mixture,
                                 const MomentPolicy& policy);

AdjustedProbability adjust(const EcapModel& model, double p_tilde);

/// Fit by maximum likelihood over the (gamma, theta) grid. Outcomes are
/// required unless both grids are singletons.
EcapModel fit(std::span<const ProbabilitySample> samples, const EcapConfig& config);

/// Same as fit, but (gamma, theta) minimize the mean squared excess certainty
/// against the known true probabilities (simulation only).
EcapModel fit_opt(std::span<const ProbabilitySample> samples, const EcapConfig& config);

enum class TuningObjective { Likelihood, TrueLoss };

/// Grid search for (gamma, theta) with a fixed score spline.
EcapModel tune_parameters(const ScoreSplineFit& spline, std::span<const ProbabilitySample> samples,
                          const EcapConfig& config, TuningObjective objective);

/// Sum of Z log p_hat + (1 - Z) log(1 - p_hat) with p_hat clamped.
double log_likelihood(const EcapModel& model, std::span<const ProbabilitySample> samples);

/// Mean of EC(p_hat)^2 against p_true.
double mean_squared_ec(const EcapModel& model, std::span<const ProbabilitySample> samples);

}  // namespace ecap
