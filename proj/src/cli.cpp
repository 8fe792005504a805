#include "ecap/cli.hpp"

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecap/errors.hpp"
#include "ecap/estimator.hpp"
#include "ecap/evaluation.hpp"
#include "ecap/io.hpp"
#include "ecap/simulation.hpp"

namespace ecap::cli {

using nlohmann::json;
using io::format_double;

namespace {

class EmptyResult : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string input;
    std::string model;
    std::string config;
    std::string output;
    std::string detail;
    std::optional<std::uint64_t> seed;
    std::vector<double> window{0.0, 0.02};
    std::string group_by;
    std::string format = "csv";
    bool unadjusted = false;
    double level = 0.9;
    int draws = 2000;
};

void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigurationError("cannot write '" + path + "'");
    f << text;
    if (!f) throw ConfigurationError("error writing '" + path + "'");
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<ProbabilitySample> to_samples(const io::ForecastTable& table) {
    std::vector<ProbabilitySample> samples;
    samples.reserve(table.records.size());
    for (const auto& r : table.records) {
        ProbabilitySample s;
        s.p_tilde = r.p_tilde;
        if (table.has_outcomes) s.z = r.z;
        samples.push_back(s);
    }
    return samples;
}

void cmd_fit(const Options& o, std::ostream& out) {
    EcapConfig config = o.config.empty() ? EcapConfig{} : io::config_from_json(io::read_json_file(o.config));
    if (o.seed) config.cv.rng_seed = *o.seed;
    const io::ForecastTable table = io::read_forecasts_file(o.input);
    const EcapModel model = fit(to_samples(table), config);
    emit(io::model_to_json(model).dump(2) + "\n", o.output, out);
}

void cmd_adjust(const Options& o, std::ostream& out) {
    const EcapModel model = io::model_from_json(io::read_json_file(o.model));
    const io::ForecastTable table = io::read_forecasts_file(o.input);
    std::vector<AdjustedProbability> rows;
    rows.reserve(table.records.size());
    for (const auto& r : table.records) rows.push_back(adjust(model, r.p_tilde));

    std::ostringstream s;
    if (o.format == "json") {
        json arr = json::array();
        for (const auto& a : rows) {
            arr.push_back({{"p_tilde", a.p_tilde},
                           {"p_hat", a.p_hat},
                           {"mu_hat", a.mu_hat},
                           {"sigma2_hat", a.sigma2_hat},
                           {"flipped", a.flipped}});
        }
        s << arr.dump(2) << "\n";
    } else {
        s << "p_tilde,p_hat,mu_hat,sigma2_hat,flipped\n";
        for (const auto& a : rows) {
            s << format_double(a.p_tilde) << ',' << format_double(a.p_hat) << ',' << format_double(a.mu_hat)
              << ',' << format_double(a.sigma2_hat) << ',' << (a.flipped ? 1 : 0) << '\n';
        }
    }
    emit(s.str(), o.output, out);
}

void cmd_simulate(const Options& o, std::ostream& out) {
    if (!o.seed) throw ConfigurationError("simulate: --seed is required");
    const ExperimentSpec spec = io::experiment_from_json(io::read_json_file(o.config), *o.seed);
    const ExperimentResult result = run_experiment(spec);

    std::ostringstream s;
    if (o.format == "json") {
        json arr = json::array();
        for (const auto& m : result.summary) {
            arr.push_back({{"method", method_name(m.method)},
                           {"mean_ec2", m.replicates_ok > 0 ? json(m.mean) : json(nullptr)},
                           {"se", optional_json(m.standard_error)},
                           {"replicates_ok", m.replicates_ok},
                           {"replicates_failed", m.replicates_failed}});
        }
        s << arr.dump(2) << "\n";
    } else {
        s << "method,mean_ec2,se,replicates_ok,replicates_failed\n";
        for (const auto& m : result.summary) {
            s << method_name(m.method) << ',' << (m.replicates_ok > 0 ? format_double(m.mean) : "") << ','
              << optional_cell(m.standard_error) << ',' << m.replicates_ok << ',' << m.replicates_failed << '\n';
        }
    }
    emit(s.str(), o.output, out);

    if (!o.detail.empty()) {
        std::ostringstream d;
        d << "replicate,method,mean_ec2,gamma_hat,theta_hat,c_hat,error\n";
        for (const auto& rec : result.replicates) {
            for (Method m : spec.methods) {
                const MethodOutcome& x = rec.outcomes.at(m);
                d << rec.index << ',' << method_name(m) << ',' << optional_cell(x.mean_ec2) << ','
                  << optional_cell(x.gamma_hat) << ',' << optional_cell(x.theta_hat) << ','
                  << optional_cell(x.c_hat) << ',' << csv_escape(x.error) << '\n';
            }
        }
        emit(d.str(), o.detail, out);
    }
}

void cmd_evaluate(const Options& o, std::ostream& out, std::ostream& warn) {
    if (o.unadjusted == !o.model.empty()) {
        throw ConfigurationError("evaluate: give exactly one of --model or --unadjusted");
    }
    const Window window{o.window[0], o.window[1]};
    window.validate();
    const std::optional<std::string> group =
        o.group_by.empty() ? std::nullopt : std::optional<std::string>(o.group_by);
    const io::ForecastTable table = io::read_forecasts_file(o.input, group);
    if (!table.has_outcomes) throw ConfigurationError("evaluate: input needs a 'z' column");

    std::vector<double> adjusted;
    adjusted.reserve(table.records.size());
    if (o.unadjusted) {
        for (const auto& r : table.records) adjusted.push_back(r.p_tilde);
    } else {
        const EcapModel model = io::model_from_json(io::read_json_file(o.model));
        for (const auto& r : table.records) adjusted.push_back(adjust(model, r.p_tilde).p_hat);
    }

    if (window_count(table.records, window) == 0) {
        throw EmptyResult("evaluate: no forecasts fall inside the window [" + format_double(window.lower) + ", " +
                          format_double(window.upper) + "]");
    }
    const std::vector<GroupEc> curve =
        grouped_ec_curve(table.records, adjusted, window, o.level, o.draws, o.seed.value_or(0));
    bool any = false;
    for (const auto& g : curve) any = any || g.ec.has_value();
    if (!any) throw EmptyResult("evaluate: no group has at least two forecasts inside the window");

    std::ostringstream s;
    if (o.format == "json") {
        json arr = json::array();
        for (const auto& g : curve) {
            json row{{"group", g.key},
                     {"ec", optional_json(g.ec)},
                     {"lo", optional_json(g.lower)},
                     {"hi", optional_json(g.upper)},
                     {"n_delta", g.n_delta}};
            if (!g.note.empty()) row["note"] = g.note;
            arr.push_back(row);
        }
        s << arr.dump(2) << "\n";
    } else {
        s << "group,ec,lo,hi,n_delta\n";
        for (const auto& g : curve) {
            s << csv_escape(g.key) << ',' << optional_cell(g.ec) << ',' << optional_cell(g.lower) << ','
              << optional_cell(g.upper) << ',' << g.n_delta << '\n';
        }
    }
    emit(s.str(), o.output, out);
    for (const auto& g : curve) {
        if (!g.note.empty()) warn << "warning: group '" << g.key << "': " << g.note << "\n";
    }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Excess-certainty adjustment of probability estimates"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed_value = 0;

    auto add_format = [&](CLI::App* c) {
        c->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    };
    auto add_seed = [&](CLI::App* c, const std::string& help) {
        c->add_option("--seed", seed_value, help);
    };

    CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a model from forecasts with outcomes");
    fit_cmd->add_option("--input", o.input, "Forecast CSV")->required();
    fit_cmd->add_option("--config", o.config, "Estimator configuration JSON");
    fit_cmd->add_option("--output", o.output, "Model JSON (default stdout)");
    add_seed(fit_cmd, "Seed for the cross-validation folds");

    CLI::App* adjust_cmd = app.add_subcommand("adjust", "Adjust forecasts with a fitted model");
    adjust_cmd->add_option("--input", o.input, "Forecast CSV")->required();
    adjust_cmd->add_option("--model", o.model, "Model JSON")->required();
    adjust_cmd->add_option("--output", o.output, "Output file (default stdout)");
    add_format(adjust_cmd);

    CLI::App* sim_cmd = app.add_subcommand("simulate", "Run a simulation experiment");
    sim_cmd->add_option("--config", o.config, "Experiment JSON")->required();
    sim_cmd->add_option("--output", o.output, "Summary output (default stdout)");
    sim_cmd->add_option("--detail", o.detail, "Per-replicate CSV");
    add_seed(sim_cmd, "Master seed (required)");
    add_format(sim_cmd);

    CLI::App* eval_cmd = app.add_subcommand("evaluate", "Empirical excess certainty inside a window");
    eval_cmd->add_option("--input", o.input, "Forecast CSV with outcomes")->required();
    eval_cmd->add_option("--model", o.model, "Model JSON");
    eval_cmd->add_flag("--unadjusted", o.unadjusted, "Evaluate the raw forecasts");
    eval_cmd->add_option("--window", o.window, "Window lo,hi on the flipped scale")
        ->delimiter(',')
        ->expected(2);
    eval_cmd->add_option("--group-by", o.group_by, "Column holding the group key");
    eval_cmd->add_option("--output", o.output, "Output file (default stdout)");
    eval_cmd->add_option("--level", o.level, "Bootstrap interval level");
    eval_cmd->add_option("--draws", o.draws, "Bootstrap draws");
    add_seed(eval_cmd, "Bootstrap seed");
    add_format(eval_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInputError;
    }

    for (CLI::App* c : {fit_cmd, sim_cmd, eval_cmd}) {
        if (c->parsed() && c->count("--seed") > 0) o.seed = seed_value;
    }

    try {
        if (fit_cmd->parsed()) cmd_fit(o, out);
        else if (adjust_cmd->parsed()) cmd_adjust(o, out);
        else if (sim_cmd->parsed()) cmd_simulate(o, out);
        else cmd_evaluate(o, out, err);
    } catch (const EmptyResult& e) {
        err << "error: " << e.what() << "\n";
        return kEmptyResult;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumericFailure;
    } catch (const ConfigurationError& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const InsufficientDataError& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kNumericFailure;
    }
    return kOk;
}

}  // namespace ecap::cli
