#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ecap/errors.hpp"
#include "ecap/evaluation.hpp"

using namespace ecap;

namespace {

struct Archive {
    std::vector<ForecastRecord> records;
    std::vector<double> adjusted;
};

// p uniform on [lo, hi], reported as p / ratio, outcome Bernoulli(p).
Archive archive(std::size_t n, double lo, double hi, double ratio, std::uint64_t seed, const std::string& group = "") {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Archive a;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = lo + (hi - lo) * u(rng);
        ForecastRecord r;
        r.p_tilde = p / ratio;
        r.z = u(rng) < p ? 1 : 0;
        if (!group.empty()) r.group = group;
        a.records.push_back(r);
        a.adjusted.push_back(r.p_tilde);
    }
    return a;
}

ForecastRecord rec(double p, int z) { return ForecastRecord{p, z, std::nullopt, std::nullopt}; }

}  // namespace

TEST_CASE("empirical EC examples") {
    const Window w{0.0, 0.02};
    SUBCASE("four times the stated risk") {
        // 1000 forecasts at 0.001 with 4 events.
        std::vector<ForecastRecord> r(1000, rec(0.001, 0));
        for (int i = 0; i < 4; ++i) r[static_cast<std::size_t>(i)].z = 1;
        const std::vector<double> adj(r.size(), 0.001);
        CHECK(empirical_ec(r, adj, w) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("calibrated") {
        std::vector<ForecastRecord> r(100, rec(0.01, 0));
        r[0].z = 1;
        const std::vector<double> adj(r.size(), 0.01);
        CHECK(std::abs(empirical_ec(r, adj, w)) <= 1e-12);
    }
    SUBCASE("no events") {
        const std::vector<ForecastRecord> r{rec(0.005, 0), rec(0.015, 0)};
        CHECK(empirical_ec(r, std::vector<double>{0.01, 0.01}, w) == -1.0);
    }
    SUBCASE("records outside the window are ignored") {
        const std::vector<ForecastRecord> r{rec(0.01, 1), rec(0.3, 1), rec(0.7, 0)};
        CHECK(empirical_ec(r, std::vector<double>{0.5, 0.3, 0.7}, w) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("weights") {
        std::vector<ForecastRecord> r{rec(0.01, 1), rec(0.01, 0)};
        r[0].weight = 1.0;
        r[1].weight = 3.0;
        // pbar = 0.25, mean adjusted = 0.1.
        CHECK(empirical_ec(r, std::vector<double>{0.1, 0.1}, w) == doctest::Approx(1.5).epsilon(1e-12));
    }
}

TEST_CASE("empirical EC errors") {
    const Window w{0.0, 0.02};
    const std::vector<ForecastRecord> r{rec(0.3, 1), rec(0.6, 0)};
    CHECK_THROWS_AS(empirical_ec(r, std::vector<double>{0.3, 0.6}, w), InsufficientDataError);
    const std::vector<ForecastRecord> s{rec(0.01, 1)};
    CHECK_THROWS_AS(empirical_ec(s, std::vector<double>{0.0}, w), DomainError);
    CHECK_THROWS_AS(empirical_ec(s, std::vector<double>{0.01, 0.02}, w), ConfigurationError);
    CHECK_THROWS_AS(empirical_ec(s, std::vector<double>{0.01}, Window{0.1, 0.05}), ConfigurationError);
    CHECK_THROWS_AS(empirical_ec(s, std::vector<double>{0.01}, Window{0.0, 0.6}), ConfigurationError);
    CHECK_THROWS_AS(bootstrap_ci(s, std::vector<double>{0.01}, w), InsufficientDataError);
}

TEST_CASE("EC is bounded below and flip consistent") {
    const Archive a = archive(500, 0.0, 0.05, 0.8, 1);
    const Window w{0.0, 0.05};
    const double ec = empirical_ec(a.records, a.adjusted, w);
    CHECK(ec >= -1.0);
    std::vector<ForecastRecord> complement = a.records;
    std::vector<double> adj = a.adjusted;
    for (std::size_t i = 0; i < complement.size(); ++i) {
        complement[i].p_tilde = 1.0 - complement[i].p_tilde;
        complement[i].z = 1 - complement[i].z;
        adj[i] = 1.0 - adj[i];
    }
    CHECK(empirical_ec(complement, adj, w) == doctest::Approx(ec).epsilon(1e-12));
    const Interval x = bootstrap_ci(a.records, a.adjusted, w, 0.9, 500, 3);
    const Interval y = bootstrap_ci(complement, adj, w, 0.9, 500, 3);
    CHECK(x.lower == doctest::Approx(y.lower).epsilon(1e-12));
    CHECK(x.upper == doctest::Approx(y.upper).epsilon(1e-12));
}

TEST_CASE("type 7 quantiles") {
    std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
    CHECK(sample_quantile(v, 0.05) == doctest::Approx(1.45).epsilon(1e-14));
    CHECK(sample_quantile(v, 0.95) == doctest::Approx(9.55).epsilon(1e-14));
    CHECK(sample_quantile(v, 0.0) == 1.0);
    CHECK(sample_quantile(v, 1.0) == 10.0);
    CHECK(sample_quantile({2.5}, 0.3) == 2.5);
}

TEST_CASE("bootstrap interval") {
    const Archive a = archive(400, 0.0, 0.1, 1.0, 2);
    const Window w{0.0, 0.1};
    SUBCASE("deterministic in the seed") {
        const Interval x = bootstrap_ci(a.records, a.adjusted, w, 0.9, 300, 7);
        const Interval y = bootstrap_ci(a.records, a.adjusted, w, 0.9, 300, 7);
        CHECK(x.lower == y.lower);
        CHECK(x.upper == y.upper);
        const Interval z = bootstrap_ci(a.records, a.adjusted, w, 0.9, 300, 8);
        CHECK((z.lower != x.lower || z.upper != x.upper));
    }
    SUBCASE("wider at higher level and brackets the point estimate") {
        const Interval n90 = bootstrap_ci(a.records, a.adjusted, w, 0.9, 1000, 4);
        const Interval n99 = bootstrap_ci(a.records, a.adjusted, w, 0.99, 1000, 4);
        CHECK(n90.lower <= n90.upper);
        CHECK(n99.lower <= n90.lower);
        CHECK(n99.upper >= n90.upper);
        const double ec = empirical_ec(a.records, a.adjusted, w);
        CHECK(n90.lower <= ec);
        CHECK(ec <= n90.upper);
    }
    SUBCASE("identical records give a point") {
        const std::vector<ForecastRecord> r(20, rec(0.01, 1));
        const Interval x = bootstrap_ci(r, std::vector<double>(20, 0.01), Window{}, 0.9, 200, 1);
        CHECK(x.lower == x.upper);
        CHECK(x.lower == doctest::Approx(99.0).epsilon(1e-12));
    }
    SUBCASE("invalid arguments") {
        CHECK_THROWS_AS(bootstrap_ci(a.records, a.adjusted, w, 1.0, 100, 0), ConfigurationError);
        CHECK_THROWS_AS(bootstrap_ci(a.records, a.adjusted, w, 0.9, 0, 0), ConfigurationError);
    }
}

TEST_CASE("bootstrap coverage on calibrated data") {
    const Window w{0.0, 0.2};
    int covered = 0;
    const int trials = 500;
    for (int t = 0; t < trials; ++t) {
        const Archive a = archive(1000, 0.0, 0.2, 1.0, 1000 + static_cast<std::uint64_t>(t));
        const Interval ci = bootstrap_ci(a.records, a.adjusted, w, 0.9, 1000, static_cast<std::uint64_t>(t));
        if (ci.lower <= 0.0 && 0.0 <= ci.upper) ++covered;
    }
    const double rate = static_cast<double>(covered) / trials;
    MESSAGE("coverage " << rate);
    CHECK(rate >= 0.86);
    CHECK(rate <= 0.94);
}

TEST_CASE("grouped curve") {
    const Window w{0.0, 0.1};
    const Archive a = archive(300, 0.0, 0.1, 1.0, 5, "early");
    const Archive b = archive(300, 0.0, 0.1, 2.0, 6, "late");
    SUBCASE("single group equals direct calls") {
        const auto curve = grouped_ec_curve(a.records, a.adjusted, w, 0.9, 400, 9);
        REQUIRE(curve.size() == 1);
        CHECK(curve[0].key == "early");
        CHECK(curve[0].n_delta == 300);
        CHECK(*curve[0].ec == empirical_ec(a.records, a.adjusted, w));
        CHECK(curve[0].lower.has_value());
    }
    SUBCASE("groups are independent and ordered") {
        Archive both = a;
        both.records.insert(both.records.end(), b.records.begin(), b.records.end());
        both.adjusted.insert(both.adjusted.end(), b.adjusted.begin(), b.adjusted.end());
        const auto curve = grouped_ec_curve(both.records, both.adjusted, w, 0.9, 400, 9);
        REQUIRE(curve.size() == 2);
        CHECK(curve[0].key == "early");
        CHECK(curve[1].key == "late");
        CHECK(*curve[0].ec == empirical_ec(a.records, a.adjusted, w));
        CHECK(*curve[1].ec == empirical_ec(b.records, b.adjusted, w));
        // Changing the late group leaves the early result untouched.
        Archive changed = both;
        for (std::size_t i = 300; i < changed.records.size(); ++i) changed.records[i].z = 0;
        const auto again = grouped_ec_curve(changed.records, changed.adjusted, w, 0.9, 400, 9);
        CHECK(*again[0].ec == *curve[0].ec);
        CHECK(*again[0].lower == *curve[0].lower);
        CHECK(*again[0].upper == *curve[0].upper);
    }
    SUBCASE("miscalibrated group") {
        // True probabilities are twice the stated ones.
        const Archive big = archive(20000, 0.0, 0.1, 2.0, 7, "late");
        const auto curve = grouped_ec_curve(big.records, big.adjusted, Window{0.0, 0.05}, 0.9, 200, 1);
        CHECK(*curve[0].ec == doctest::Approx(1.0).epsilon(0.1));
    }
    SUBCASE("sparse group is reported, not fatal") {
        std::vector<ForecastRecord> r = a.records;
        std::vector<double> adj = a.adjusted;
        ForecastRecord lone = rec(0.05, 1);
        lone.group = "lone";
        r.push_back(lone);
        adj.push_back(0.05);
        ForecastRecord far = rec(0.4, 1);
        far.group = "far";
        r.push_back(far);
        adj.push_back(0.4);
        const auto curve = grouped_ec_curve(r, adj, w, 0.9, 100, 1);
        REQUIRE(curve.size() == 3);
        CHECK(curve[1].key == "lone");
        CHECK(curve[1].n_delta == 1);
        CHECK_FALSE(curve[1].ec.has_value());
        CHECK_FALSE(curve[1].note.empty());
        CHECK(curve[2].n_delta == 0);
        CHECK_FALSE(curve[2].ec.has_value());
    }
}
