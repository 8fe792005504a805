#pragma once

// Windowed empirical excess certainty for archives of forecasts with realized
// outcomes, with percentile bootstrap intervals.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ecap {

struct ForecastRecord {
    double p_tilde = 0.5;
    int z = 0;
    std::optional<std::string> group;
    std::optional<double> weight;
};

/// Closed window [lower, upper] on the flipped scale, 0 <= lower < upper <= 0.5.
struct Window {
    double lower = 0.0;
    double upper = 0.02;

    void validate() const;
    bool contains(double flipped) const noexcept { return flipped >= lower && flipped <= upper; }
};

/// Number of records whose flipped p~ lands in the window.
std::size_t window_count(std::span<const ForecastRecord> records, const Window& window);

/// (pbar - mean adjusted) / mean adjusted over the records inside the window,
/// after flipping p~ > 0.5 together with Z and the adjusted value.
/// Weighted means when every selected record carries a weight.
double empirical_ec(std::span<const ForecastRecord> records, std::span<const double> adjusted,
                    const Window& window);

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

/// Percentile interval of empirical_ec over `draws` resamples (with
/// replacement) of the in-window pairs.
Interval bootstrap_ci(std::span<const ForecastRecord> records, std::span<const double> adjusted,
                      const Window& window, double level = 0.9, int draws = 2000,
                      std::uint64_t seed = 0);

struct GroupEc {
    std::string key;
    std::size_t n_delta = 0;
    std::optional<double> ec;  // empty when n_delta < 2
    std::optional<double> lower;
    std::optional<double> upper;
    std::string note;
};

/// empirical_ec and bootstrap_ci per group, in order of first appearance.
/// Records without a group share the key "".
std::vector<GroupEc> grouped_ec_curve(std::span<const ForecastRecord> records,
                                      std::span<const double> adjusted, const Window& window,
                                      double level = 0.9, int draws = 2000, std::uint64_t seed = 0);

/// Type-7 sample quantile of unsorted data.
double sample_quantile(std::vector<double> values, double prob);

}  // namespace ecap
