#include "ecap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "ecap/core_model.hpp"
#include "ecap/errors.hpp"
#include "ecap/rng.hpp"

namespace ecap {

void Window::validate() const {
    if (!(lower >= 0.0 && lower < upper && upper <= 0.5)) {
        throw ConfigurationError("window must satisfy 0 <= lower < upper <= 0.5");
    }
}

namespace {

struct Selected {
    double outcome;
    double adjusted;
    double weight;
};

std::vector<Selected> select(std::span<const ForecastRecord> records, std::span<const double> adjusted,
                             const Window& window) {
    window.validate();
    if (records.size() != adjusted.size()) {
        throw ConfigurationError("records and adjusted values differ in length");
    }
    std::vector<Selected> out;
    bool all_weighted = true;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const ForecastRecord& r = records[i];
        if (r.z != 0 && r.z != 1) throw DomainError("outcome must be 0 or 1");
        const FlippedValue f = flip(r.p_tilde);
        if (!window.contains(f.value)) continue;
        const double a = Probability(adjusted[i]);
        Selected s;
        s.outcome = f.flipped ? 1.0 - r.z : r.z;
        s.adjusted = f.flipped ? 1.0 - a : a;
        s.weight = r.weight.value_or(1.0);
        if (!r.weight) all_weighted = false;
        if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) throw DomainError("weights must be nonnegative");
        out.push_back(s);
    }
    if (!all_weighted) {
        for (auto& s : out) s.weight = 1.0;
    }
    return out;
}

double ec_of(const std::vector<Selected>& sel, const std::vector<std::size_t>* index) {
    double w = 0.0, zbar = 0.0, abar = 0.0;
    const std::size_t count = index ? index->size() : sel.size();
    for (std::size_t k = 0; k < count; ++k) {
        const Selected& s = sel[index ? (*index)[k] : k];
        w += s.weight;
        zbar += s.weight * s.outcome;
        abar += s.weight * s.adjusted;
    }
    if (!(w > 0.0)) throw DomainError("empirical EC: zero total weight in window");
    zbar /= w;
    abar /= w;
    if (!(abar > 0.0)) throw DomainError("empirical EC: mean adjusted probability is zero");
    return (zbar - abar) / abar;
}

}  // namespace

std::size_t window_count(std::span<const ForecastRecord> records, const Window& window) {
    std::size_t n = 0;
    for (const auto& r : records) {
        if (window.contains(flip(r.p_tilde).value)) ++n;
    }
    return n;
}

double empirical_ec(std::span<const ForecastRecord> records, std::span<const double> adjusted,
                    const Window& window) {
    const std::vector<Selected> sel = select(records, adjusted, window);
    if (sel.empty()) throw InsufficientDataError("empirical EC: no records inside the window");
    return ec_of(sel, nullptr);
}

double sample_quantile(std::vector<double> values, double prob) {
    if (values.empty()) throw InsufficientDataError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(prob, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Interval bootstrap_ci(std::span<const ForecastRecord> records, std::span<const double> adjusted,
                      const Window& window, double level, int draws, std::uint64_t seed) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigurationError("bootstrap level must lie in (0, 1)");
    if (draws < 1) throw ConfigurationError("bootstrap draws must be positive");
    const std::vector<Selected> sel = select(records, adjusted, window);
    if (sel.size() < 2) throw InsufficientDataError("bootstrap needs at least two records in the window");

    Rng rng(stream_seed(seed, 0));
    std::vector<std::size_t> index(sel.size());
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(draws));
    for (int b = 0; b < draws; ++b) {
        for (auto& i : index) i = static_cast<std::size_t>(uniform_index(rng, sel.size()));
        try {
            stats.push_back(ec_of(sel, &index));
        } catch (const DomainError&) {
            // Resample with zero adjusted mass; EC undefined for this draw.
        }
    }
    if (stats.empty()) throw DomainError("bootstrap: EC undefined in every resample");
    const double tail = 0.5 * (1.0 - level);
    return {sample_quantile(stats, tail), sample_quantile(stats, 1.0 - tail)};
}

std::vector<GroupEc> grouped_ec_curve(std::span<const ForecastRecord> records,
                                      std::span<const double> adjusted, const Window& window,
                                      double level, int draws, std::uint64_t seed) {
    window.validate();
    if (records.size() != adjusted.size()) {
        throw ConfigurationError("records and adjusted values differ in length");
    }
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string key = records[i].group.value_or("");
        auto [it, inserted] = members.try_emplace(key);
        if (inserted) order.push_back(key);
        it->second.push_back(i);
    }

    std::vector<GroupEc> out;
    out.reserve(order.size());
    for (std::size_t g = 0; g < order.size(); ++g) {
        const auto& idx = members[order[g]];
        std::vector<ForecastRecord> rec;
        std::vector<double> adj;
        rec.reserve(idx.size());
        adj.reserve(idx.size());
        for (std::size_t i : idx) {
            rec.push_back(records[i]);
            adj.push_back(adjusted[i]);
        }
        GroupEc row;
        row.key = order[g];
        row.n_delta = window_count(rec, window);
        if (row.n_delta < 2) {
            row.note = row.n_delta == 0 ? "no records in window" : "fewer than two records in window";
        } else {
            try {
                row.ec = empirical_ec(rec, adj, window);
                const Interval ci = bootstrap_ci(rec, adj, window, level, draws, stream_seed(seed, g));
                row.lower = ci.lower;
                row.upper = ci.upper;
            } catch (const std::exception& e) {
                row.ec.reset();
                row.lower.reset();
                row.upper.reset();
                row.note = e.what();
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace ecap
