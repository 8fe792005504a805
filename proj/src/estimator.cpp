#include "ecap/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ecap/errors.hpp"
#include "ecap/rng.hpp"

namespace ecap {

void MixtureSpec::validate() const {
    if (weights.empty() || weights.size() != scales.size()) {
        throw ConfigurationError("mixture: weights and scales must be nonempty and equally long");
    }
    double sw = 0.0;
    double swc = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (!(weights[k] > 0.0) || !(scales[k] > 0.0)) {
            throw ConfigurationError("mixture: weights and scales must be positive");
        }
        sw += weights[k];
        swc += weights[k] * scales[k];
    }
    if (std::abs(sw - 1.0) > 1e-12 || std::abs(swc - 1.0) > 1e-12) {
        throw ConfigurationError("mixture: need sum w = 1 and sum w*c = 1");
    }
}

double MixtureSpec::inverse_scale_sum() const {
    double s = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] / scales[k];
    return s;
}

double MixtureSpec::inverse_scale_square_sum() const {
    double s = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] / (scales[k] * scales[k]);
    return s;
}

double VarianceFloorPolicy::resolve(std::size_t n, double lambda_hat) const {
    if (kind == VarianceFloorKind::Absolute) return epsilon;
    const double lambda = lambda_n.value_or(lambda_hat);
    if (!(lambda > 0.0) || n == 0) {
        throw ConfigurationError("theoretical variance floor needs n > 0 and lambda > 0");
    }
    const double nn = static_cast<double>(n);
    const double a = std::pow(nn, -4.0 / 7.0);
    const double r = a / lambda + std::pow(nn, -2.0 / 7.0) + lambda;
    const double s = 1.0 + a / (lambda * lambda);
    return c * std::sqrt(r * s);
}

std::vector<double> EcapConfig::default_gamma_grid() {
    std::vector<double> grid(30);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = std::pow(10.0, -4.0 + 3.0 * static_cast<double>(i) / 29.0);
    }
    return grid;
}

std::vector<double> EcapConfig::default_theta_grid() {
    std::vector<double> grid(61);
    for (int i = 0; i < 61; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i - 40) / 10.0;
    return grid;
}

void EcapConfig::validate() const {
    if (gamma_grid.empty()) throw ConfigurationError("gamma_grid must be nonempty");
    for (double g : gamma_grid) {
        if (!(g > 0.0)) throw ConfigurationError("gamma_grid values must be positive");
    }
    if (theta_grid.empty()) throw ConfigurationError("theta_grid must be nonempty");
    for (double t : theta_grid) (void)BiasLinkParam(t);
    if (!(likelihood_clamp > 0.0 && likelihood_clamp <= 0.01)) {
        throw ConfigurationError("likelihood_clamp must lie in (0, 0.01]");
    }
    if (variance_floor.kind == VarianceFloorKind::Absolute && !(variance_floor.epsilon >= 0.0)) {
        throw ConfigurationError("variance floor epsilon must be nonnegative");
    }
    if (variance_floor.kind == VarianceFloorKind::Theoretical && !(variance_floor.c > 0.0)) {
        throw ConfigurationError("variance floor constant c must be positive");
    }
    if (mixture) mixture->validate();
}

namespace {

ConditionalMoments apply_policy(ConditionalMoments m, const MomentPolicy& policy) {
    m.variance = std::max(m.variance, policy.variance_floor);
    m.mean = std::clamp(m.mean, policy.mean_clamp, 1.0 - policy.mean_clamp);
    return m;
}

// Per-observation data on the flipped scale, shared by every grid point.
struct PreparedSample {
    double p = 0.0;
    GValue g;
    double target = 0.0;  // flipped outcome or flipped true probability
};

std::vector<PreparedSample> prepare(const ScoreSplineFit& spline,
                                    std::span<const ProbabilitySample> samples,
                                    TuningObjective objective) {
    std::vector<PreparedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const FlippedValue f = flip(Probability(s.p_tilde));
        PreparedSample ps;
        ps.p = f.value;
        ps.g = evaluate_g(spline, f.value);
        if (objective == TuningObjective::Likelihood) {
            if (!s.z) throw ConfigurationError("likelihood tuning requires outcomes z for every sample");
            if (*s.z != 0 && *s.z != 1) throw DomainError("outcome z must be 0 or 1");
            ps.target = f.flipped ? 1.0 - *s.z : *s.z;
        } else {
            if (!s.p_true) throw ConfigurationError("loss tuning requires true probabilities");
            const double p = Probability(*s.p_true);
            ps.target = f.flipped ? 1.0 - p : p;
        }
        out.push_back(ps);
    }
    return out;
}

double adjusted_flipped(const PreparedSample& s, double gamma, double theta,
                        const std::optional<MixtureSpec>& mixture, const MomentPolicy& policy) {
    const ConditionalMoments m = model_moments(s.p, s.g, gamma, theta, mixture, policy);
    return oracle_adjust(m, true).value();
}

// Objective where larger is better.
double grid_score(std::span<const PreparedSample> data, double gamma, double theta,
                  const EcapConfig& config, const MomentPolicy& policy, TuningObjective objective) {
    if (objective == TuningObjective::Likelihood) {
        const double eps = config.likelihood_clamp;
        double ll = 0.0;
        for (const auto& s : data) {
            const double p = std::clamp(adjusted_flipped(s, gamma, theta, config.mixture, policy), eps,
                                        1.0 - eps);
            ll += s.target * std::log(p) + (1.0 - s.target) * std::log1p(-p);
        }
        return ll;
    }
    double loss = 0.0;
    for (const auto& s : data) {
        const double ec = excess_certainty(s.target, adjusted_flipped(s, gamma, theta, config.mixture, policy));
        loss += ec * ec;
    }
    return -loss / static_cast<double>(data.size());
}

MomentPolicy make_policy(const EcapConfig& config, std::size_t n, double lambda_hat) {
    return MomentPolicy{config.variance_floor.resolve(n, lambda_hat), config.likelihood_clamp};
}

bool grids_trivial(const EcapConfig& config) {
    return config.gamma_grid.size() == 1 && config.theta_grid.size() == 1;
}

void check_samples(std::span<const ProbabilitySample> samples) {
    if (samples.size() < 20) {
        throw InsufficientDataError("fit: need at least 20 samples, got " + std::to_string(samples.size()));
    }
    for (const auto& s : samples) (void)Probability(s.p_tilde);
}

std::vector<double> raw_values(std::span<const ProbabilitySample> samples) {
    std::vector<double> v;
    v.reserve(samples.size());
    for (const auto& s : samples) v.push_back(s.p_tilde);
    return v;
}

}  // namespace

ConditionalMoments plug_in_moments(double p_flipped, GValue g, double gamma, const MomentPolicy& policy) {
    if (!(gamma > 0.0)) throw DomainError("plug_in_moments: gamma must be positive");
    const double p = p_flipped;
    const double v = p * (1.0 - p);
    ConditionalMoments m;
    m.mean = p + gamma * (g.g + 1.0 - 2.0 * p);
    m.variance = gamma * v + gamma * gamma * v * (g.g_prime - 2.0);
    return apply_policy(m, policy);
}

ConditionalMoments plug_in_moments(double p_flipped, const ScoreSplineFit& fit, double gamma,
                                   const MomentPolicy& policy) {
    return plug_in_moments(p_flipped, evaluate_g(fit, p_flipped), gamma, policy);
}

ConditionalMoments bias_corrected_moments(const ConditionalMoments& moments, BiasLinkParam theta,
                                          const MomentPolicy& policy) {
    const double t = theta.value();
    const double mu = moments.mean;
    const double s2 = moments.variance;
    ConditionalMoments out;
    out.mean = mu + 0.5 * t * (3.0 * s2 - 6.0 * mu * s2 + 3.0 * mu * mu - mu - 2.0 * mu * mu * mu);
    const double a = 1.0 - 0.5 * t;
    const double w = mu * (1.0 - mu);
    out.variance = a * a * s2 + t * s2 * (3.0 * w * (3.0 * t * w - 0.5 * t + 1.0));
    return apply_policy(out, policy);
}

ConditionalMoments mixture_moments(const ConditionalMoments& moments, const MixtureSpec& spec) {
    const double s1 = spec.inverse_scale_sum();
    const double s2 = spec.inverse_scale_square_sum();
    const double mu = moments.mean;
    ConditionalMoments out;
    out.mean = mu * s1;
    out.variance = (moments.variance + mu * mu) * s2 - mu * mu * s1 * s1;
    return out;
}

ConditionalMoments model_moments(double p_flipped, GValue g, double gamma, double theta,
                                 const std::optional<MixtureSpec>& mixture, const MomentPolicy& policy) {
    ConditionalMoments m = plug_in_moments(p_flipped, g, gamma, policy);
    if (theta != 0.0) m = bias_corrected_moments(m, BiasLinkParam(theta), policy);
    if (mixture) m = apply_policy(mixture_moments(m, *mixture), policy);
    return m;
}

AdjustedProbability adjust(const EcapModel& model, double p_tilde) {
    const FlippedValue f = flip(Probability(p_tilde));
    const GValue g = evaluate_g(model.spline, f.value);
    const ConditionalMoments m =
        model_moments(f.value, g, model.gamma_hat, model.theta_hat, model.mixture, model.policy);
    const double p_hat = oracle_adjust(m, true).value();
    AdjustedProbability out;
    out.p_tilde = p_tilde;
    out.p_hat = unflip({p_hat, f.flipped});
    out.mu_hat = m.mean;
    out.sigma2_hat = m.variance;
    out.flipped = f.flipped;
    return out;
}

EcapModel tune_parameters(const ScoreSplineFit& spline, std::span<const ProbabilitySample> samples,
                          const EcapConfig& config, TuningObjective objective) {
    config.validate();
    EcapModel model;
    model.spline = spline;
    model.mixture = config.mixture;
    model.config = config;
    model.n_train = samples.size();
    model.policy = make_policy(config, samples.size(), spline.lambda);
    model.gamma_hat = config.gamma_grid.front();
    model.theta_hat = config.theta_grid.front();
    if (grids_trivial(config)) return model;

    const std::vector<PreparedSample> data = prepare(spline, samples, objective);
    double best = -std::numeric_limits<double>::infinity();
    bool have_best = false;
    for (double theta : config.theta_grid) {
        for (double gamma : config.gamma_grid) {
            const double score = grid_score(data, gamma, theta, config, model.policy, objective);
            bool better = !have_best || score > best;
            if (have_best && score == best) {
                const double at = std::abs(theta);
                const double ab = std::abs(model.theta_hat);
                better = at < ab || (at == ab && gamma < model.gamma_hat);
            }
            if (better) {
                best = score;
                have_best = true;
                model.gamma_hat = gamma;
                model.theta_hat = theta;
            }
        }
    }
    return model;
}

EcapModel fit(std::span<const ProbabilitySample> samples, const EcapConfig& config) {
    config.validate();
    check_samples(samples);
    const bool trivial = grids_trivial(config);
    if (!trivial) {
        for (const auto& s : samples) {
            if (!s.z) {
                throw ConfigurationError(
                    "fit: outcomes z are required when gamma_grid or theta_grid has more than one value");
            }
        }
    }
    const std::vector<double> values = raw_values(samples);

    if (trivial || config.mle_mode == MleMode::InSample) {
        const ScoreSplineFit spline = fit_g_cv(values, config.cv);
        return tune_parameters(spline, samples, config, TuningObjective::Likelihood);
    }

    // Split-sample: spline and lambda from one half, (gamma, theta) from the other,
    // then the spline is refit on everything at that lambda.
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(stream_seed(config.cv.rng_seed, 0x5e1ec7ULL));
    shuffle(order, rng);
    const std::size_t half = samples.size() / 2;
    std::vector<double> first_values;
    std::vector<ProbabilitySample> second;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < half) first_values.push_back(samples[order[i]].p_tilde);
        else second.push_back(samples[order[i]]);
    }
    const ScoreSplineFit half_spline = fit_g_cv(first_values, config.cv);
    EcapModel tuned = tune_parameters(half_spline, second, config, TuningObjective::Likelihood);

    std::vector<double> flipped;
    flipped.reserve(values.size());
    for (double v : values) flipped.push_back(flip(v).value);
    tuned.spline = fit_g(flipped, build_basis(flipped, config.cv.max_knots), half_spline.lambda);
    tuned.n_train = samples.size();
    tuned.policy = make_policy(config, samples.size(), tuned.spline.lambda);
    return tuned;
}

EcapModel fit_opt(std::span<const ProbabilitySample> samples, const EcapConfig& config) {
    config.validate();
    check_samples(samples);
    for (const auto& s : samples) {
        if (!s.p_true) throw ConfigurationError("fit_opt: true probabilities are required");
    }
    const ScoreSplineFit spline = fit_g_cv(raw_values(samples), config.cv);
    return tune_parameters(spline, samples, config, TuningObjective::TrueLoss);
}

double log_likelihood(const EcapModel& model, std::span<const ProbabilitySample> samples) {
    const double eps = model.config.likelihood_clamp;
    double ll = 0.0;
    for (const auto& s : samples) {
        if (!s.z) throw ConfigurationError("log_likelihood: outcome missing");
        const double p = std::clamp(adjust(model, s.p_tilde).p_hat, eps, 1.0 - eps);
        ll += (*s.z == 1) ? std::log(p) : std::log1p(-p);
    }
    return ll;
}

double mean_squared_ec(const EcapModel& model, std::span<const ProbabilitySample> samples) {
    if (samples.empty()) throw InsufficientDataError("mean_squared_ec: empty sample");
    double total = 0.0;
    for (const auto& s : samples) {
        if (!s.p_true) throw ConfigurationError("mean_squared_ec: true probability missing");
        const double ec = excess_certainty(*s.p_true, adjust(model, s.p_tilde).p_hat);
        total += ec * ec;
    }
    return total / static_cast<double>(samples.size());
}

}  // namespace ecap
