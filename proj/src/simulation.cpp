#include "ecap/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "ecap/errors.hpp"

namespace ecap {

// ---------------------------------------------------------------- priors

PriorSpec PriorSpec::beta(double a, double b) {
    if (!(a > 0.0 && b > 0.0)) throw ConfigurationError("beta prior shapes must be positive");
    PriorSpec p;
    p.kind_ = Kind::Beta;
    p.components_ = {BetaShape{a, b}};
    return p;
}

PriorSpec PriorSpec::equal_mixture(BetaShape first, BetaShape second) {
    if (!(first.a > 0.0 && first.b > 0.0 && second.a > 0.0 && second.b > 0.0)) {
        throw ConfigurationError("beta prior shapes must be positive");
    }
    PriorSpec p;
    p.kind_ = Kind::EqualMixture;
    p.components_ = {first, second};
    return p;
}

double sample_beta(Rng& rng, double a, double b) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    if (x + y == 0.0) {
        // Both draws underflowed; the mass sits at one endpoint.
        return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < a / (a + b) ? 1.0 : 0.0;
    }
    return x / (x + y);
}

double PriorSpec::sample(Rng& rng) const {
    std::size_t k = 0;
    if (components_.size() > 1) k = static_cast<std::size_t>(uniform_index(rng, components_.size()));
    return sample_beta(rng, components_[k].a, components_[k].b);
}

namespace {

double beta_density(double p, const BetaShape& s) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    const double log_b = std::lgamma(s.a) + std::lgamma(s.b) - std::lgamma(s.a + s.b);
    return std::exp((s.a - 1.0) * std::log(p) + (s.b - 1.0) * std::log1p(-p) - log_b);
}

}  // namespace

double PriorSpec::density(double p) const {
    double d = 0.0;
    for (const auto& c : components_) d += beta_density(p, c);
    return d / static_cast<double>(components_.size());
}

double PriorSpec::cdf(double p) const {
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return 1.0;
    double F = 0.0;
    for (const auto& c : components_) F += boost::math::ibeta(c.a, c.b, p);
    return F / static_cast<double>(components_.size());
}

// ---------------------------------------------------------------- spec

std::string method_name(Method m) {
    switch (m) {
        case Method::Unadjusted: return "Unadjusted";
        case Method::EcapOpt: return "ECAP-Opt";
        case Method::EcapMle: return "ECAP-MLE";
        case Method::JsOpt: return "JS-Opt";
        case Method::JsMle: return "JS-MLE";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    for (Method m : {Method::Unadjusted, Method::EcapOpt, Method::EcapMle, Method::JsOpt, Method::JsMle}) {
        if (method_name(m) == name) return m;
    }
    throw ConfigurationError("unknown method '" + name + "'");
}

EcapConfig ExperimentSpec::unbiased_ecap_config() {
    EcapConfig c;
    c.theta_grid = {0.0};
    return c;
}

std::vector<double> ExperimentSpec::default_js_grid() {
    std::vector<double> grid(101);
    for (int i = 0; i <= 100; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / 100.0;
    return grid;
}

void ExperimentSpec::validate() const {
    if (n < 20) throw ConfigurationError("experiment: n must be at least 20");
    if (replicates < 1) throw ConfigurationError("experiment: replicates must be at least 1");
    if (!(gamma_star > 0.0)) throw ConfigurationError("experiment: gamma_star must be positive");
    if (!(q >= 0.0)) throw ConfigurationError("experiment: q must be nonnegative");
    (void)BiasLinkParam(theta_star);
    if (methods.empty()) throw ConfigurationError("experiment: no methods requested");
    if (js_grid.empty()) throw ConfigurationError("experiment: js_grid must be nonempty");
    for (double c : js_grid) {
        if (!(c >= 0.0 && c <= 1.0)) throw ConfigurationError("experiment: js_grid values must lie in [0, 1]");
    }
    ecap.validate();
}

const MethodSummary& ExperimentResult::of(Method m) const {
    for (const auto& s : summary) {
        if (s.method == m) return s;
    }
    throw std::out_of_range("method not part of the experiment: " + method_name(m));
}

// ---------------------------------------------------------------- data

std::vector<DataPoint> draw_dataset(const ExperimentSpec& spec, std::uint64_t replicate_index,
                                    DatasetRole role) {
    Rng rng(stream_seed(spec.rng_seed, 2 * replicate_index + static_cast<std::uint64_t>(role)));
    const BiasLinkParam theta(spec.theta_star);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<DataPoint> out(spec.n);
    for (auto& d : out) {
        // The prior describes m = E(p~ | p); the truth is p = h_theta(m).
        const double m = spec.prior.sample(rng);
        d.p = spec.theta_star == 0.0 ? m : h_theta(m, theta);
        const double raw = sample_beta(rng, m / spec.gamma_star, (1.0 - m) / spec.gamma_star);
        // Noise contraction by min(m, 1 - m)^q keeps both tails symmetric.
        const double scale = spec.q == 0.0 ? 1.0 : std::pow(std::min(m, 1.0 - m), spec.q);
        d.p_tilde = std::clamp(m + scale * (raw - m), 0.0, 1.0);
        d.z = unif(rng) < d.p ? 1 : 0;
    }
    return out;
}

// ---------------------------------------------------------------- James-Stein

double flipped_mean(std::span<const double> values) {
    if (values.empty()) throw InsufficientDataError("flipped_mean: empty sample");
    double s = 0.0;
    for (double v : values) s += flip(v).value;
    return s / static_cast<double>(values.size());
}

std::vector<double> james_stein_apply(std::span<const double> values, double c, double center) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) {
        const FlippedValue f = flip(v);
        out.push_back(unflip({center + (1.0 - c) * (f.value - center), f.flipped}));
    }
    return out;
}

std::vector<double> james_stein_adjust(std::span<const double> values, double c) {
    if (values.empty()) return {};
    return james_stein_apply(values, c, flipped_mean(values));
}

double mean_squared_excess_certainty(std::span<const double> truth, std::span<const double> estimates) {
    if (truth.size() != estimates.size() || truth.empty()) {
        throw InsufficientDataError("mean_squared_excess_certainty: need equally sized nonempty inputs");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double ec = excess_certainty(truth[i], estimates[i]);
        total += ec * ec;
    }
    return total / static_cast<double>(truth.size());
}

double tune_js(std::span<const double> values, JsMode mode, std::span<const double> side,
               const std::vector<double>& c_grid, double likelihood_clamp) {
    if (c_grid.empty()) throw ConfigurationError("tune_js: empty grid");
    if (c_grid.size() == 1) return c_grid.front();
    if (side.size() != values.size()) {
        throw ConfigurationError(mode == JsMode::Opt ? "tune_js: true probabilities required"
                                                     : "tune_js: outcomes required");
    }
    const double center = flipped_mean(values);
    double best_c = c_grid.front();
    double best = std::numeric_limits<double>::infinity();
    for (double c : c_grid) {
        const std::vector<double> est = james_stein_apply(values, c, center);
        double loss = 0.0;
        for (std::size_t i = 0; i < est.size(); ++i) {
            if (mode == JsMode::Opt) {
                const double denom = std::min(est[i], 1.0 - est[i]);
                if (!(denom > 0.0)) {
                    loss = std::numeric_limits<double>::infinity();
                    break;
                }
                const double ec = (side[i] - est[i]) / denom;
                loss += ec * ec;
            } else {
                const double p = std::clamp(est[i], likelihood_clamp, 1.0 - likelihood_clamp);
                loss -= side[i] * std::log(p) + (1.0 - side[i]) * std::log1p(-p);
            }
        }
        if (loss < best || (loss == best && c < best_c)) {
            best = loss;
            best_c = c;
        }
    }
    return best_c;
}

// ---------------------------------------------------------------- experiments

namespace {

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const std::size_t workers =
        std::min<std::size_t>(count, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) fn(i);
        });
    }
}

bool wants(const ExperimentSpec& spec, Method m) {
    return std::find(spec.methods.begin(), spec.methods.end(), m) != spec.methods.end();
}

template <class Fn>
void record(ReplicateRecord& rec, Method m, Fn&& fn) {
    MethodOutcome out;
    try {
        fn(out);
    } catch (const std::exception& e) {
        out.mean_ec2.reset();
        out.error = e.what();
    }
    rec.outcomes[m] = std::move(out);
}

ReplicateRecord run_replicate(const ExperimentSpec& spec, int r) {
    const auto index = static_cast<std::uint64_t>(r);
    const std::vector<DataPoint> train = draw_dataset(spec, index, DatasetRole::Train);
    const std::vector<DataPoint> test = draw_dataset(spec, index, DatasetRole::Test);

    std::vector<double> train_pt, train_p, train_z, test_pt, test_p;
    for (const auto& d : train) {
        train_pt.push_back(d.p_tilde);
        train_p.push_back(d.p);
        train_z.push_back(d.z);
    }
    for (const auto& d : test) {
        test_pt.push_back(d.p_tilde);
        test_p.push_back(d.p);
    }

    ReplicateRecord rec;
    rec.index = r;

    if (wants(spec, Method::Unadjusted)) {
        record(rec, Method::Unadjusted,
               [&](MethodOutcome& o) { o.mean_ec2 = mean_squared_excess_certainty(test_p, test_pt); });
    }

    if (wants(spec, Method::EcapOpt) || wants(spec, Method::EcapMle)) {
        std::vector<ProbabilitySample> samples;
        samples.reserve(train.size());
        for (const auto& d : train) samples.push_back({d.p_tilde, d.z, d.p});
        EcapConfig config = spec.ecap;
        config.cv.rng_seed = stream_seed(spec.rng_seed ^ 0xc5c5c5c5ULL, index);

        std::optional<ScoreSplineFit> spline;
        std::string spline_error;
        try {
            spline = fit_g_cv(train_pt, config.cv);
        } catch (const std::exception& e) {
            spline_error = e.what();
        }
        auto run = [&](Method m, TuningObjective objective) {
            if (!wants(spec, m)) return;
            record(rec, m, [&](MethodOutcome& o) {
                if (!spline) throw NumericError(spline_error);
                const EcapModel model = tune_parameters(*spline, samples, config, objective);
                std::vector<double> est;
                est.reserve(test_pt.size());
                for (double p : test_pt) est.push_back(adjust(model, p).p_hat);
                o.mean_ec2 = mean_squared_excess_certainty(test_p, est);
                o.gamma_hat = model.gamma_hat;
                o.theta_hat = model.theta_hat;
            });
        };
        run(Method::EcapOpt, TuningObjective::TrueLoss);
        run(Method::EcapMle, TuningObjective::Likelihood);
    }

    auto run_js = [&](Method m, JsMode mode, const std::vector<double>& side) {
        if (!wants(spec, m)) return;
        record(rec, m, [&](MethodOutcome& o) {
            const double c = tune_js(train_pt, mode, side, spec.js_grid, spec.ecap.likelihood_clamp);
            const double center = flipped_mean(train_pt);
            o.mean_ec2 = mean_squared_excess_certainty(test_p, james_stein_apply(test_pt, c, center));
            o.c_hat = c;
        });
    };
    run_js(Method::JsOpt, JsMode::Opt, train_p);
    run_js(Method::JsMle, JsMode::Mle, train_z);
    return rec;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    ExperimentResult result;
    result.replicates.resize(static_cast<std::size_t>(spec.replicates));
    parallel_for(result.replicates.size(), [&](std::size_t r) {
        result.replicates[r] = run_replicate(spec, static_cast<int>(r));
    });

    for (Method m : spec.methods) {
        MethodSummary s;
        s.method = m;
        std::vector<double> means;
        for (const auto& rec : result.replicates) {
            const MethodOutcome& o = rec.outcomes.at(m);
            if (o.mean_ec2) means.push_back(*o.mean_ec2);
            else ++s.replicates_failed;
        }
        s.replicates_ok = static_cast<int>(means.size());
        if (!means.empty()) {
            s.mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
        } else {
            s.mean = std::numeric_limits<double>::quiet_NaN();
        }
        if (means.size() >= 2) {
            double ss = 0.0;
            for (double v : means) ss += (v - s.mean) * (v - s.mean);
            const double k = static_cast<double>(means.size());
            s.standard_error = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
        }
        result.summary.push_back(s);
    }
    return result;
}

// ---------------------------------------------------------------- quadrature

namespace {

// log of the Beta(m/gamma, (1-m)/gamma) density at p~, up to a constant in m.
double log_likelihood_in_mean(double m, double gamma, double log_odds) {
    const double a = m / gamma;
    const double b = (1.0 - m) / gamma;
    return a * log_odds - std::lgamma(a) - std::lgamma(b);
}

std::vector<double> breakpoints(double p_tilde, double gamma) {
    const double s = std::sqrt(gamma * std::max(p_tilde * (1.0 - p_tilde), gamma));
    std::vector<double> pts{0.0, 1.0};
    for (double k : {-30.0, -12.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0, 12.0, 30.0}) {
        const double x = p_tilde + k * s;
        if (x > 0.0 && x < 1.0) pts.push_back(x);
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

struct WeightedIntegrand {
    const std::function<double(double)>& density;
    double gamma;
    double log_odds;
    double reference;

    double weight(double m) const {
        if (m <= 0.0 || m >= 1.0) return 0.0;
        const double log_w = log_likelihood_in_mean(m, gamma, log_odds) - reference;
        // Flush before exp reaches the subnormal range, where the error estimate is noise.
        if (log_w < -600.0) return 0.0;
        const double d = density(m);
        if (!(d > 0.0)) return 0.0;
        return std::exp(log_w) * d;
    }
};

WeightedIntegrand make_integrand(const std::function<double(double)>& density, double gamma, double p_tilde) {
    if (!(p_tilde > 0.0 && p_tilde < 1.0)) {
        throw DomainError("posterior quadrature: p~ must lie strictly inside (0, 1)");
    }
    if (!(gamma > 0.0)) throw DomainError("posterior quadrature: gamma must be positive");
    const double log_odds = std::log(p_tilde) - std::log1p(-p_tilde);
    // Reference level: maximum of the log-likelihood over a coarse grid.
    double reference = -std::numeric_limits<double>::infinity();
    for (int i = 1; i < 400; ++i) {
        const double m = static_cast<double>(i) / 400.0;
        reference = std::max(reference, log_likelihood_in_mean(m, gamma, log_odds));
    }
    for (double m : breakpoints(p_tilde, gamma)) {
        if (m > 0.0 && m < 1.0) reference = std::max(reference, log_likelihood_in_mean(m, gamma, log_odds));
    }
    return WeightedIntegrand{density, gamma, log_odds, reference};
}

double integrate(const WeightedIntegrand& w, double p_tilde, const std::function<double(double)>& phi) {
    using boost::math::quadrature::gauss_kronrod;
    const std::vector<double> pts = breakpoints(p_tilde, w.gamma);
    const auto f = [&](double m) { return phi(m) * w.weight(m); };
    const auto abs_f = [&](double m) { return std::abs(f(m)); };
    // A single Kronrod pass per segment sizes the total; segments that are
    // negligible against it keep the coarse value.
    std::vector<double> coarse(pts.size() - 1);
    double scale = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        coarse[i] = gauss_kronrod<double, 31>::integrate(f, pts[i], pts[i + 1], 0);
        scale += gauss_kronrod<double, 31>::integrate(abs_f, pts[i], pts[i + 1], 0);
    }
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double seg = gauss_kronrod<double, 31>::integrate(abs_f, pts[i], pts[i + 1], 0);
        if (seg <= 1e-17 * scale) {
            total += coarse[i];
            continue;
        }
        total += gauss_kronrod<double, 31>::integrate(f, pts[i], pts[i + 1], 12, 1e-10);
        if (!std::isfinite(total)) throw NumericError("posterior quadrature did not converge");
    }
    return total;
}

}  // namespace

double posterior_expectation(const std::function<double(double)>& density, double gamma, double p_tilde,
                             const std::function<double(double)>& phi) {
    const WeightedIntegrand w = make_integrand(density, gamma, p_tilde);
    const double mass = integrate(w, p_tilde, [](double) { return 1.0; });
    if (!(mass > 0.0)) throw NumericError("posterior quadrature: zero marginal density");
    return integrate(w, p_tilde, phi) / mass;
}

ConditionalMoments posterior_moments(const std::function<double(double)>& density, double gamma,
                                     double p_tilde) {
    const WeightedIntegrand w = make_integrand(density, gamma, p_tilde);
    const double mass = integrate(w, p_tilde, [](double) { return 1.0; });
    if (!(mass > 0.0)) throw NumericError("posterior quadrature: zero marginal density");
    const double mean = integrate(w, p_tilde, [](double m) { return m; }) / mass;
    const double var = integrate(w, p_tilde, [mean](double m) { return (m - mean) * (m - mean); }) / mass;
    return {mean, var};
}

namespace {

double score_at(const std::function<double(double)>& density, double gamma, double p_tilde) {
    // p(1-p) f'/f = E[(alpha-1)(1-p~) - (beta-1) p~ | p~] = E[(m - p~)/gamma | p~] - 1 + 2 p~.
    const double shift = posterior_expectation(density, gamma, p_tilde,
                                               [&](double m) { return (m - p_tilde) / gamma; });
    return shift - 1.0 + 2.0 * p_tilde;
}

}  // namespace

GValue true_score_numeric(const PriorSpec& prior, double gamma_star, double p_tilde) {
    const std::function<double(double)> density = [&prior](double p) { return prior.density(p); };
    const double g = score_at(density, gamma_star, p_tilde);
    const double h = std::min({1e-5, 0.5 * p_tilde, 0.5 * (1.0 - p_tilde)});
    const double gp = (score_at(density, gamma_star, p_tilde + h) - score_at(density, gamma_star, p_tilde - h)) /
                      (2.0 * h);
    return {g, gp};
}

double ks_distance(std::span<const double> sample, const PriorSpec& prior) {
    std::vector<double> s(sample.begin(), sample.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double F = prior.cdf(s[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
    }
    return d;
}

}  // namespace ecap
