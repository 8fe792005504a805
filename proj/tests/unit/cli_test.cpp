#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "ecap/cli.hpp"
#include "ecap/estimator.hpp"
#include "ecap/io.hpp"
#include "ecap/simulation.hpp"

namespace fs = std::filesystem;
using namespace ecap;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "ecap");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("ecap_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

void write(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<DataPoint> sample_data(std::size_t n, std::uint64_t seed) {
    ExperimentSpec s;
    s.prior = PriorSpec::beta(4, 4);
    s.gamma_star = 0.005;
    s.q = 0.05;
    s.n = n;
    s.rng_seed = seed;
    return draw_dataset(s, 0);
}

std::string forecast_csv(const std::vector<DataPoint>& d, bool with_z) {
    std::string s = with_z ? "p_tilde,z\n" : "p_tilde\n";
    for (const auto& x : d) {
        s += io::format_double(x.p_tilde);
        if (with_z) s += "," + std::to_string(x.z);
        s += "\n";
    }
    return s;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

const char* kSmallConfig = R"({"gamma_grid": [0.001, 0.005, 0.02], "theta_grid": [0]})";

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"bogus"}).code == 2);
    CHECK(run({"fit"}).code == 2);
    CHECK(run({"fit", "--input", "/nonexistent/file.csv"}).code == 2);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("fit needs outcomes and enough rows") {
    TempDir dir;
    const auto d = sample_data(100, 1);
    write(dir.file("noz.csv"), forecast_csv(d, false));
    const Run a = run({"fit", "--input", dir.file("noz.csv")});
    CHECK(a.code == 2);
    CHECK(a.err.find("z") != std::string::npos);

    write(dir.file("tiny.csv"), forecast_csv(sample_data(10, 1), true));
    CHECK(run({"fit", "--input", dir.file("tiny.csv")}).code == 2);
}

TEST_CASE("malformed rows are listed") {
    TempDir dir;
    write(dir.file("bad.csv"), "p_tilde,z\n0.2,1\n1.5,0\n0.3,2\nabc,1\n");
    const Run r = run({"adjust", "--input", dir.file("bad.csv"), "--model", dir.file("none.json")});
    CHECK(r.code == 2);
    write(dir.file("cfg.json"), kSmallConfig);
    const Run f = run({"fit", "--input", dir.file("bad.csv"), "--config", dir.file("cfg.json")});
    CHECK(f.code == 2);
    CHECK(f.err.find("row 3") != std::string::npos);
    CHECK(f.err.find("row 4") != std::string::npos);
    CHECK(f.err.find("row 5") != std::string::npos);
}

TEST_CASE("fit then adjust reproduces the library pipeline") {
    TempDir dir;
    const auto d = sample_data(400, 2);
    write(dir.file("train.csv"), forecast_csv(d, true));
    write(dir.file("cfg.json"), kSmallConfig);
    const Run f = run({"fit", "--input", dir.file("train.csv"), "--config", dir.file("cfg.json"), "--seed", "5",
                       "--output", dir.file("model.json")});
    REQUIRE(f.code == 0);

    const Run a = run({"adjust", "--input", dir.file("train.csv"), "--model", dir.file("model.json")});
    REQUIRE(a.code == 0);
    const auto rows = lines(a.out);
    REQUIRE(rows.size() == d.size() + 1);
    CHECK(rows[0] == "p_tilde,p_hat,mu_hat,sigma2_hat,flipped");

    // Same data through the library.
    std::vector<ProbabilitySample> samples;
    for (const auto& x : d) samples.push_back({std::stod(io::format_double(x.p_tilde)), x.z, std::nullopt});
    EcapConfig config = io::config_from_json(nlohmann::json::parse(kSmallConfig));
    config.cv.rng_seed = 5;
    const EcapModel model = fit(samples, config);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const AdjustedProbability p = adjust(model, samples[i].p_tilde);
        std::istringstream cells(rows[i + 1]);
        std::string pt, ph;
        std::getline(cells, pt, ',');
        std::getline(cells, ph, ',');
        CHECK(std::stod(ph) == p.p_hat);
    }

    // Determinism: the same command writes the same bytes.
    const Run again = run({"fit", "--input", dir.file("train.csv"), "--config", dir.file("cfg.json"), "--seed", "5"});
    CHECK(again.out == slurp(dir.file("model.json")));
    const Run json = run({"adjust", "--input", dir.file("train.csv"), "--model", dir.file("model.json"), "--format",
                          "json"});
    CHECK(json.code == 0);
    CHECK(nlohmann::json::parse(json.out).size() == d.size());
}

TEST_CASE("model file checks") {
    TempDir dir;
    write(dir.file("train.csv"), forecast_csv(sample_data(200, 3), true));
    write(dir.file("cfg.json"), kSmallConfig);
    REQUIRE(run({"fit", "--input", dir.file("train.csv"), "--config", dir.file("cfg.json"), "--output",
                 dir.file("model.json")})
                .code == 0);
    nlohmann::json m = nlohmann::json::parse(slurp(dir.file("model.json")));
    CHECK(m["schema_version"] == io::kModelSchemaVersion);

    const EcapModel restored = io::model_from_json(m);
    CHECK(io::model_to_json(restored) == m);

    m["schema_version"] = 99;
    write(dir.file("future.json"), m.dump());
    CHECK(run({"adjust", "--input", dir.file("train.csv"), "--model", dir.file("future.json")}).code == 2);
    write(dir.file("broken.json"), "{not json");
    CHECK(run({"adjust", "--input", dir.file("train.csv"), "--model", dir.file("broken.json")}).code == 2);
}

TEST_CASE("config round trip and validation") {
    EcapConfig c;
    c.gamma_grid = {0.001, 0.01};
    c.theta_grid = {-1.0, 0.0, 0.5};
    c.cv.num_folds = 5;
    c.cv.rng_seed = 77;
    c.variance_floor.kind = VarianceFloorKind::Theoretical;
    c.variance_floor.c = 0.5;
    c.mixture = MixtureSpec{{0.5, 0.5}, {0.5, 1.5}};
    c.mle_mode = MleMode::SplitSample;
    const nlohmann::json j = io::config_to_json(c);
    CHECK(io::config_to_json(io::config_from_json(j)) == j);

    TempDir dir;
    write(dir.file("train.csv"), forecast_csv(sample_data(100, 4), true));
    write(dir.file("unknown.json"), R"({"gamma_grid": [0.01], "bogus": 1})");
    CHECK(run({"fit", "--input", dir.file("train.csv"), "--config", dir.file("unknown.json")}).code == 2);
    write(dir.file("negative.json"), R"({"gamma_grid": [-0.01]})");
    CHECK(run({"fit", "--input", dir.file("train.csv"), "--config", dir.file("negative.json")}).code == 2);
}

TEST_CASE("simulate") {
    TempDir dir;
    write(dir.file("exp.json"), R"({"prior": {"type": "beta", "a": 4, "b": 4}, "gamma_star": 0.005, "q": 0.05,
        "n": 100, "replicates": 2, "methods": ["Unadjusted", "JS-Opt"]})");
    SUBCASE("seed is required") { CHECK(run({"simulate", "--config", dir.file("exp.json")}).code == 2); }
    SUBCASE("same seed, same bytes") {
        const Run a = run({"simulate", "--config", dir.file("exp.json"), "--seed", "9", "--detail", dir.file("d1.csv")});
        const Run b = run({"simulate", "--config", dir.file("exp.json"), "--seed", "9", "--detail", dir.file("d2.csv")});
        REQUIRE(a.code == 0);
        CHECK(a.out == b.out);
        CHECK(slurp(dir.file("d1.csv")) == slurp(dir.file("d2.csv")));
        const auto rows = lines(a.out);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0] == "method,mean_ec2,se,replicates_ok,replicates_failed");
        CHECK(rows[1].rfind("Unadjusted,", 0) == 0);
        CHECK(lines(slurp(dir.file("d1.csv"))).size() == 5);
        const Run c = run({"simulate", "--config", dir.file("exp.json"), "--seed", "10"});
        CHECK(c.out != a.out);
    }
    SUBCASE("one replicate leaves the standard error empty") {
        write(dir.file("one.json"), R"({"prior": {"type": "beta", "a": 4, "b": 4}, "n": 100, "replicates": 1,
            "methods": ["Unadjusted"]})");
        const Run r = run({"simulate", "--config", dir.file("one.json"), "--seed", "1"});
        REQUIRE(r.code == 0);
        const auto row = lines(r.out)[1];
        CHECK(row.find(",,1,0") != std::string::npos);
        const Run j = run({"simulate", "--config", dir.file("one.json"), "--seed", "1", "--format", "json"});
        CHECK(nlohmann::json::parse(j.out)[0]["se"].is_null());
    }
    SUBCASE("invalid experiment") {
        write(dir.file("bad.json"), R"({"prior": {"type": "beta", "a": 4, "b": 4}, "n": 5})");
        CHECK(run({"simulate", "--config", dir.file("bad.json"), "--seed", "1"}).code == 2);
        write(dir.file("bad2.json"), R"({"prior": {"type": "gamma"}})");
        CHECK(run({"simulate", "--config", dir.file("bad2.json"), "--seed", "1"}).code == 2);
    }
}

TEST_CASE("evaluate") {
    TempDir dir;
    const auto d = sample_data(3000, 6);
    write(dir.file("data.csv"), forecast_csv(d, true));
    SUBCASE("exactly one source") {
        CHECK(run({"evaluate", "--input", dir.file("data.csv")}).code == 2);
    }
    SUBCASE("empty window exits with 3") {
        const Run r = run({"evaluate", "--input", dir.file("data.csv"), "--unadjusted", "--window", "0,0.0001"});
        CHECK(r.code == 3);
        CHECK_FALSE(r.err.empty());
    }
    SUBCASE("deterministic output") {
        const std::vector<std::string> args{"evaluate", "--input", dir.file("data.csv"), "--unadjusted",
                                            "--window", "0,0.2", "--draws", "300", "--seed", "4"};
        const Run a = run(args);
        const Run b = run(args);
        REQUIRE(a.code == 0);
        CHECK(a.out == b.out);
        const auto rows = lines(a.out);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0] == "group,ec,lo,hi,n_delta");
    }
    SUBCASE("groups") {
        std::string csv = "p_tilde,z,period\n";
        for (std::size_t i = 0; i < d.size(); ++i) {
            csv += io::format_double(d[i].p_tilde) + "," + std::to_string(d[i].z) + "," + (i % 2 ? "b" : "a") + "\n";
        }
        csv += "0.45,1,c\n";
        write(dir.file("grouped.csv"), csv);
        const Run r = run({"evaluate", "--input", dir.file("grouped.csv"), "--unadjusted", "--window", "0,0.3",
                           "--group-by", "period", "--draws", "200"});
        REQUIRE(r.code == 0);
        const auto rows = lines(r.out);
        REQUIRE(rows.size() == 4);
        CHECK(rows[1].rfind("a,", 0) == 0);
        CHECK(rows[2].rfind("b,", 0) == 0);
        CHECK(rows[3] == "c,,,,0");
        CHECK(r.err.find("warning") != std::string::npos);
    }
}
