#include "ecap/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ecap/errors.hpp"

namespace ecap::io {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& text) {
    const std::string t = trim(text);
    if (t.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = t.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace

ForecastTable read_forecasts(std::istream& in, const std::optional<std::string>& group_column) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        header = split_csv_line(line);
        break;
    }
    if (header.empty()) throw ConfigurationError("input: missing header row");

    int col_p = -1, col_z = -1, col_w = -1, col_g = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string name = trim(header[i]);
        const int idx = static_cast<int>(i);
        if (name == "p_tilde") col_p = idx;
        else if (name == "z") col_z = idx;
        else if (name == "weight") col_w = idx;
        if (group_column && name == *group_column) col_g = idx;
    }
    if (col_p < 0) throw ConfigurationError("input: required column 'p_tilde' not found in header");
    if (group_column && col_g < 0) {
        throw ConfigurationError("input: group column '" + *group_column + "' not found in header");
    }

    ForecastTable table;
    table.has_outcomes = col_z >= 0;
    std::vector<std::string> problems;
    std::size_t problem_count = 0;
    auto complain = [&](std::size_t row, const std::string& what) {
        ++problem_count;
        if (problems.size() < 20) problems.push_back("row " + std::to_string(row) + ": " + what);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != header.size()) {
            complain(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                  std::to_string(f.size()));
            continue;
        }
        ForecastRecord r;
        bool ok = true;
        const auto p = parse_double(f[static_cast<std::size_t>(col_p)]);
        if (!p) {
            complain(line_no, "p_tilde '" + f[static_cast<std::size_t>(col_p)] + "' is not a number");
            ok = false;
        } else if (*p < 0.0 || *p > 1.0) {
            complain(line_no, "p_tilde " + trim(f[static_cast<std::size_t>(col_p)]) + " outside [0, 1]");
            ok = false;
        } else {
            r.p_tilde = *p;
        }
        if (col_z >= 0) {
            const std::string z = trim(f[static_cast<std::size_t>(col_z)]);
            if (z == "0" || z == "1") {
                r.z = z == "1" ? 1 : 0;
            } else {
                complain(line_no, "z '" + z + "' must be 0 or 1");
                ok = false;
            }
        }
        if (col_w >= 0) {
            const auto w = parse_double(f[static_cast<std::size_t>(col_w)]);
            if (!w || *w < 0.0) {
                complain(line_no, "weight '" + trim(f[static_cast<std::size_t>(col_w)]) +
                                      "' must be a nonnegative number");
                ok = false;
            } else {
                r.weight = *w;
            }
        }
        if (col_g >= 0) r.group = f[static_cast<std::size_t>(col_g)];
        if (ok) table.records.push_back(std::move(r));
    }

    if (problem_count > 0) {
        std::ostringstream msg;
        msg << "input: " << problem_count << " invalid row(s)";
        for (const auto& p : problems) msg << "\n  " << p;
        if (problem_count > problems.size()) msg << "\n  ...";
        throw ConfigurationError(msg.str());
    }
    return table;
}

ForecastTable read_forecasts_file(const std::string& path, const std::optional<std::string>& group_column) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open input file '" + path + "'");
    return read_forecasts(in, group_column);
}

std::string format_double(double x) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigurationError("'" + path + "' is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------- config

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigurationError(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigurationError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigurationError(where + "." + key + ": " + e.what());
    }
}

template <class T>
void get_if(const json& j, const std::string& key, T& target, const std::string& where) {
    if (j.contains(key)) target = get<T>(j, key, where);
}

json mixture_to_json(const MixtureSpec& m) {
    return json{{"weights", m.weights}, {"scales", m.scales}};
}

MixtureSpec mixture_from_json(const json& j, const std::string& where) {
    check_keys(j, {"weights", "scales"}, where);
    MixtureSpec m;
    m.weights = get<std::vector<double>>(j, "weights", where);
    m.scales = get<std::vector<double>>(j, "scales", where);
    return m;
}

}  // namespace

json config_to_json(const EcapConfig& c) {
    json floor{{"kind", c.variance_floor.kind == VarianceFloorKind::Absolute ? "absolute" : "theoretical"},
               {"epsilon", c.variance_floor.epsilon},
               {"c", c.variance_floor.c}};
    if (c.variance_floor.lambda_n) floor["lambda_n"] = *c.variance_floor.lambda_n;
    json j{{"gamma_grid", c.gamma_grid},
           {"theta_grid", c.theta_grid},
           {"cv",
            {{"num_folds", c.cv.num_folds},
             {"lambda_grid", c.cv.lambda_grid.empty() ? default_lambda_grid() : c.cv.lambda_grid},
             {"rng_seed", c.cv.rng_seed},
             {"max_knots", c.cv.max_knots}}},
           {"variance_floor", floor},
           {"likelihood_clamp", c.likelihood_clamp},
           {"mle_mode", c.mle_mode == MleMode::InSample ? "in_sample" : "split_sample"}};
    j["mixture"] = c.mixture ? mixture_to_json(*c.mixture) : json(nullptr);
    return j;
}

EcapConfig config_from_json(const json& j) {
    const std::string where = "config";
    check_keys(j, {"gamma_grid", "theta_grid", "cv", "variance_floor", "likelihood_clamp", "mixture",
                   "mle_mode"},
               where);
    EcapConfig c;
    get_if(j, "gamma_grid", c.gamma_grid, where);
    get_if(j, "theta_grid", c.theta_grid, where);
    if (j.contains("cv")) {
        const json& cv = j.at("cv");
        check_keys(cv, {"num_folds", "lambda_grid", "rng_seed", "max_knots"}, "config.cv");
        get_if(cv, "num_folds", c.cv.num_folds, "config.cv");
        get_if(cv, "lambda_grid", c.cv.lambda_grid, "config.cv");
        get_if(cv, "rng_seed", c.cv.rng_seed, "config.cv");
        get_if(cv, "max_knots", c.cv.max_knots, "config.cv");
    }
    if (j.contains("variance_floor")) {
        const json& f = j.at("variance_floor");
        check_keys(f, {"kind", "epsilon", "c", "lambda_n"}, "config.variance_floor");
        if (f.contains("kind")) {
            const auto kind = get<std::string>(f, "kind", "config.variance_floor");
            if (kind == "absolute") c.variance_floor.kind = VarianceFloorKind::Absolute;
            else if (kind == "theoretical") c.variance_floor.kind = VarianceFloorKind::Theoretical;
            else throw ConfigurationError("config.variance_floor.kind must be 'absolute' or 'theoretical'");
        }
        get_if(f, "epsilon", c.variance_floor.epsilon, "config.variance_floor");
        get_if(f, "c", c.variance_floor.c, "config.variance_floor");
        if (f.contains("lambda_n") && !f.at("lambda_n").is_null()) {
            c.variance_floor.lambda_n = get<double>(f, "lambda_n", "config.variance_floor");
        }
    }
    get_if(j, "likelihood_clamp", c.likelihood_clamp, where);
    if (j.contains("mixture") && !j.at("mixture").is_null()) {
        c.mixture = mixture_from_json(j.at("mixture"), "config.mixture");
    }
    if (j.contains("mle_mode")) {
        const auto mode = get<std::string>(j, "mle_mode", where);
        if (mode == "in_sample") c.mle_mode = MleMode::InSample;
        else if (mode == "split_sample") c.mle_mode = MleMode::SplitSample;
        else throw ConfigurationError("config.mle_mode must be 'in_sample' or 'split_sample'");
    }
    if (c.cv.num_folds < 2) throw ConfigurationError("config.cv.num_folds must be at least 2");
    for (double l : c.cv.lambda_grid) {
        if (!(l > 0.0)) throw ConfigurationError("config.cv.lambda_grid values must be positive");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- model

json model_to_json(const EcapModel& m) {
    const std::vector<double> eta(m.spline.eta.data(), m.spline.eta.data() + m.spline.eta.size());
    json j{{"schema_version", kModelSchemaVersion},
           {"library_version", kLibraryVersion},
           {"spline", {{"knots", m.spline.basis.knots()}, {"eta", eta}, {"lambda", m.spline.lambda}}},
           {"gamma_hat", m.gamma_hat},
           {"theta_hat", m.theta_hat},
           {"policy", {{"variance_floor", m.policy.variance_floor}, {"mean_clamp", m.policy.mean_clamp}}},
           {"n_train", m.n_train},
           {"config", config_to_json(m.config)}};
    j["mixture"] = m.mixture ? mixture_to_json(*m.mixture) : json(nullptr);
    return j;
}

EcapModel model_from_json(const json& j) {
    const std::string where = "model";
    if (!j.is_object() || !j.contains("schema_version")) {
        throw ConfigurationError("model: missing schema_version");
    }
    const int version = get<int>(j, "schema_version", where);
    if (version != kModelSchemaVersion) {
        throw ConfigurationError("model: unsupported schema_version " + std::to_string(version));
    }
    check_keys(j, {"schema_version", "library_version", "spline", "gamma_hat", "theta_hat", "policy", "n_train",
                   "config", "mixture"},
               where);
    EcapModel m;
    const json& s = j.at("spline");
    check_keys(s, {"knots", "eta", "lambda"}, "model.spline");
    m.spline.basis = SplineBasis::from_knots(get<std::vector<double>>(s, "knots", "model.spline"));
    const auto eta = get<std::vector<double>>(s, "eta", "model.spline");
    if (eta.size() != m.spline.basis.dimension()) {
        throw ConfigurationError("model.spline: eta and knots differ in length");
    }
    m.spline.eta = Eigen::Map<const Eigen::VectorXd>(eta.data(), static_cast<Eigen::Index>(eta.size()));
    m.spline.lambda = get<double>(s, "lambda", "model.spline");
    m.gamma_hat = get<double>(j, "gamma_hat", where);
    m.theta_hat = get<double>(j, "theta_hat", where);
    (void)BiasLinkParam(m.theta_hat);
    if (!(m.gamma_hat > 0.0)) throw ConfigurationError("model.gamma_hat must be positive");
    const json& p = j.at("policy");
    check_keys(p, {"variance_floor", "mean_clamp"}, "model.policy");
    m.policy.variance_floor = get<double>(p, "variance_floor", "model.policy");
    m.policy.mean_clamp = get<double>(p, "mean_clamp", "model.policy");
    m.n_train = get<std::size_t>(j, "n_train", where);
    m.config = config_from_json(j.at("config"));
    if (j.contains("mixture") && !j.at("mixture").is_null()) {
        m.mixture = mixture_from_json(j.at("mixture"), "model.mixture");
        m.mixture->validate();
    }
    return m;
}

// ---------------------------------------------------------------- experiments

json experiment_to_json(const ExperimentSpec& spec) {
    json prior;
    const auto& comps = spec.prior.components();
    if (spec.prior.kind() == PriorSpec::Kind::Beta) {
        prior = {{"type", "beta"}, {"a", comps[0].a}, {"b", comps[0].b}};
    } else {
        json list = json::array();
        for (const auto& c : comps) list.push_back({{"a", c.a}, {"b", c.b}});
        prior = {{"type", "mixture"}, {"components", list}};
    }
    json methods = json::array();
    for (Method m : spec.methods) methods.push_back(method_name(m));
    return json{{"prior", prior},          {"gamma_star", spec.gamma_star}, {"q", spec.q},
                {"theta_star", spec.theta_star}, {"n", spec.n},             {"replicates", spec.replicates},
                {"methods", methods},      {"ecap", config_to_json(spec.ecap)}, {"js_grid", spec.js_grid}};
}

ExperimentSpec experiment_from_json(const json& j, std::uint64_t seed) {
    const std::string where = "experiment";
    check_keys(j, {"prior", "gamma_star", "q", "theta_star", "n", "replicates", "methods", "ecap", "js_grid"},
               where);
    ExperimentSpec spec;
    spec.rng_seed = seed;
    if (j.contains("prior")) {
        const json& p = j.at("prior");
        const auto type = get<std::string>(p, "type", "experiment.prior");
        if (type == "beta") {
            check_keys(p, {"type", "a", "b"}, "experiment.prior");
            spec.prior = PriorSpec::beta(get<double>(p, "a", "experiment.prior"),
                                         get<double>(p, "b", "experiment.prior"));
        } else if (type == "mixture") {
            check_keys(p, {"type", "components"}, "experiment.prior");
            const json& c = p.at("components");
            if (!c.is_array() || c.size() != 2) {
                throw ConfigurationError("experiment.prior.components must list exactly two beta shapes");
            }
            auto shape = [](const json& s) {
                check_keys(s, {"a", "b"}, "experiment.prior.components");
                return BetaShape{get<double>(s, "a", "experiment.prior.components"),
                                 get<double>(s, "b", "experiment.prior.components")};
            };
            spec.prior = PriorSpec::equal_mixture(shape(c[0]), shape(c[1]));
        } else {
            throw ConfigurationError("experiment.prior.type must be 'beta' or 'mixture'");
        }
    }
    get_if(j, "gamma_star", spec.gamma_star, where);
    get_if(j, "q", spec.q, where);
    get_if(j, "theta_star", spec.theta_star, where);
    get_if(j, "n", spec.n, where);
    get_if(j, "replicates", spec.replicates, where);
    if (j.contains("methods")) {
        spec.methods.clear();
        for (const auto& name : get<std::vector<std::string>>(j, "methods", where)) {
            spec.methods.push_back(method_from_name(name));
        }
    }
    if (j.contains("ecap")) {
        spec.ecap = config_from_json(j.at("ecap"));
        // Bias correction is off unless a theta grid is given explicitly.
        if (!j.at("ecap").contains("theta_grid")) spec.ecap.theta_grid = {0.0};
    }
    get_if(j, "js_grid", spec.js_grid, where);
    spec.validate();
    return spec;
}

}  // namespace ecap::io
