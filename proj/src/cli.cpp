#include "numasim/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "numasim/error.hpp"
#include "numasim/scenario.hpp"

namespace numasim {

namespace fs = std::filesystem;

const std::vector<std::string>& sweep_parameters() {
    static const std::vector<std::string> params{"nodes", "replicas", "threshold", "remote_factor", "antagonist_threads"};
    return params;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open scenario file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

struct Output {
    std::string name;
    std::string content;
};

// Everything is rendered before the first byte hits the disk, and each file
// goes through a temporary name, so a failed run leaves no partial CSV.
void write_outputs(const fs::path& dir, const std::vector<Output>& files) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
    for (const auto& f : files) {
        const fs::path final_path = dir / f.name;
        const fs::path tmp = dir / (f.name + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << f.content;
            out.flush();
            if (!out) throw std::runtime_error("cannot write " + tmp.string());
        }
        fs::rename(tmp, final_path, ec);
        if (ec) throw std::runtime_error("cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

std::string manifest(const std::string& command, const std::string& scenario_path, const Scenario& sc,
                     const std::vector<std::string>& policies, const std::vector<std::string>& overrides,
                     const std::vector<Output>& outputs, const nlohmann::json& extra = nullptr) {
    nlohmann::json j;
    j["tool"] = "numasim";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["scenario"] = scenario_path;
    j["fingerprint"] = sc.fingerprint;
    j["seed"] = sc.seed;
    j["policies"] = policies;
    j["overrides"] = overrides;
    j["outputs"] = nlohmann::json::array();
    for (const auto& o : outputs) j["outputs"].push_back(o.name);
    if (!extra.is_null()) j["sweep"] = extra;
    return j.dump(2) + "\n";
}

struct CommonFlags {
    std::string scenario;
    std::string out_dir;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    double threshold = 0.0;
    bool timeseries = false;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* threshold_opt = nullptr;

    void attach(CLI::App* app) {
        app->add_option("scenario", scenario, "Scenario JSON file")->required();
        app->add_option("--out,-o", out_dir, "Output directory (default: $NUMASIM_OUT_DIR or numasim_out)");
        app->add_option("--set,-s", sets, "Dotted override, e.g. policy.window=5")->take_all();
        seed_opt = app->add_option("--seed", seed, "Override run.seed");
        threshold_opt = app->add_option("--threshold", threshold, "Override policy.threshold");
        app->add_flag("--timeseries", timeseries, "Also write per-quantum counters");
    }

    std::vector<std::string> overrides() const {
        std::vector<std::string> o = sets;
        if (seed_opt->count()) o.push_back("run.seed=" + std::to_string(seed));
        if (threshold_opt->count()) {
            std::ostringstream v;
            v.precision(17);
            v << threshold;
            o.push_back("policy.threshold=" + v.str());
        }
        if (timeseries) o.push_back("run.timeseries=true");
        return o;
    }

    fs::path output_dir() const {
        if (!out_dir.empty()) return out_dir;
        if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
        return "numasim_out";
    }
};

int cmd_run(const CommonFlags& f, const std::string& policy, std::ostream& out) {
    auto overrides = f.overrides();
    if (!policy.empty()) overrides.push_back("policy.kind=\"" + policy + "\"");
    const Scenario sc = load_scenario(read_file(f.scenario), f.scenario, overrides);
    const MetricsReport r = run_scenario(sc);

    std::vector<Output> files{{"report.csv", to_csv(r.rows)}, {"events.csv", events_csv(r.events)}};
    if (sc.timeseries) files.push_back({"timeseries.csv", timeseries_csv(r.timeseries)});
    files.push_back({"manifest.json", manifest("run", f.scenario, sc, {r.policy}, overrides, files)});
    write_outputs(f.output_dir(), files);
    for (const auto& o : files) out << (f.output_dir() / o.name).string() << "\n";
    return kExitOk;
}

int cmd_compare(const CommonFlags& f, const std::vector<std::string>& policies, const std::string& baseline,
                std::ostream& out) {
    if (policies.size() < 2) throw UsageError("compare needs at least two policies (--policy linux,mitosis)");
    const std::string text = read_file(f.scenario);
    const auto base_overrides = f.overrides();
    std::vector<Scenario> runs;
    for (const auto& p : policies) {
        auto o = base_overrides;
        o.push_back("policy.kind=\"" + p + "\"");
        runs.push_back(load_scenario(text, f.scenario, o));
    }
    std::size_t base_idx = 0;
    if (!baseline.empty()) {
        const auto it = std::find(policies.begin(), policies.end(), baseline);
        if (it == policies.end()) throw UsageError("baseline '" + baseline + "' is not among the compared policies");
        base_idx = static_cast<std::size_t>(it - policies.begin());
    }
    const auto reports = run_batch_parallel(runs);
    const auto table = compare(reports, base_idx);

    std::vector<Output> files;
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const int n = ++seen[policies[i]];
        const std::string suffix = n == 1 ? "" : "_" + std::to_string(n);
        files.push_back({"report_" + policies[i] + suffix + ".csv", to_csv(reports[i].rows)});
    }
    files.push_back({"comparison.csv", comparison_csv(table)});
    files.push_back({"manifest.json", manifest("compare", f.scenario, runs.front(), policies, base_overrides, files)});
    write_outputs(f.output_dir(), files);
    out << comparison_csv(table);
    return kExitOk;
}

int cmd_sweep(const CommonFlags& f, const std::string& parameter, const std::string& values_text,
              const std::string& policy, std::ostream& out) {
    const auto values = split_list(values_text);
    auto overrides = f.overrides();
    if (!policy.empty()) overrides.push_back("policy.kind=\"" + policy + "\"");
    const auto runs = expand_sweep(read_file(f.scenario), f.scenario, overrides, parameter, values);
    const auto reports = run_batch_parallel(runs);

    std::vector<Output> files{{"sweep.csv", sweep_csv(parameter, values, reports)},
                              {"sweep_summary.csv", sweep_summary_csv(parameter, values, reports)}};
    nlohmann::json extra = {{"parameter", parameter}, {"values", values}, {"fingerprints", nlohmann::json::array()}};
    for (const auto& r : runs) extra["fingerprints"].push_back(r.fingerprint);
    files.push_back({"manifest.json", manifest("sweep", f.scenario, runs.front(), {to_string(runs.front().policy.kind)},
                                               overrides, files, extra)});
    write_outputs(f.output_dir(), files);
    out << files[1].content;
    return kExitOk;
}

}  // namespace

std::vector<Scenario> expand_sweep(const std::string& scenario_text, const std::string& source_name,
                                   const std::vector<std::string>& overrides, const std::string& parameter,
                                   const std::vector<std::string>& values) {
    const auto& params = sweep_parameters();
    if (std::find(params.begin(), params.end(), parameter) == params.end())
        throw UsageError("unknown sweep parameter '" + parameter + "' (expected nodes, replicas, threshold, "
                         "remote_factor or antagonist_threads)");
    if (values.empty()) throw UsageError("sweep needs at least one value");

    std::vector<std::string> targets;
    if (parameter == "nodes") targets = {"machine.nodes"};
    else if (parameter == "replicas") targets = {"policy.replicas"};
    else if (parameter == "threshold") targets = {"policy.threshold"};
    else if (parameter == "remote_factor") targets = {"machine.remote_factor"};
    else {
        const Scenario base = load_scenario(scenario_text, source_name, overrides);
        for (std::size_t i = 0; i < base.workloads.size(); ++i)
            if (base.workloads[i].spec.priority == Priority::Low)
                targets.push_back("workloads." + std::to_string(i) + ".threads");
        if (targets.empty()) throw ConfigError(source_name + ": antagonist_threads sweep needs a low-priority workload");
    }

    std::vector<Scenario> out;
    for (const auto& v : values) {
        auto o = overrides;
        for (const auto& t : targets) o.push_back(t + "=" + v);
        out.push_back(load_scenario(scenario_text, source_name, o));
    }
    return out;
}

std::string sweep_csv(const std::string& parameter, const std::vector<std::string>& values,
                      const std::vector<MetricsReport>& reports) {
    std::string out = "parameter,value";
    for (const auto& c : csv_columns()) out += "," + c;
    out += "\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const std::string body = to_csv(reports[i].rows);
        std::istringstream lines(body);
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line))
            if (!line.empty()) out += parameter + "," + values[i] + "," + line + "\n";
    }
    return out;
}

std::string sweep_summary_csv(const std::string& parameter, const std::vector<std::string>& values,
                              const std::vector<MetricsReport>& reports) {
    std::string out =
        "parameter,value,policy,total_cycles,pagewalk_cycles,stall_cycles,replica_update_cycles,shootdown_cycles,"
        "dtlb_misses,replicate_actions,throttle_actions,first_replicate_quantum,normalized_total_cycles\n";
    const double base = reports.empty() ? 0.0 : static_cast<double>(reports.front().total().total_cycles);
    char buf[512];
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        const auto& t = r.total();
        int first = -1;
        for (const auto& e : r.events)
            if (e.kind == "replicate") {
                first = e.quantum;
                break;
            }
        const double norm = base > 0.0 ? static_cast<double>(t.total_cycles) / base : 1.0;
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%llu,%llu,%llu,%llu,%llu,%llu,%zu,%zu,%d,%.4f\n", parameter.c_str(),
                      values[i].c_str(), r.policy.c_str(), static_cast<unsigned long long>(t.total_cycles),
                      static_cast<unsigned long long>(t.pagewalk_cycles), static_cast<unsigned long long>(t.stall_cycles),
                      static_cast<unsigned long long>(t.replica_update_cycles),
                      static_cast<unsigned long long>(t.shootdown_cycles), static_cast<unsigned long long>(t.dtlb_misses),
                      r.count_events("replicate"), r.count_events("throttle"), first, norm);
        out += buf;
    }
    return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"NUMA page-table replication simulator", "numasim"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    CommonFlags run_flags, cmp_flags, sweep_flags;
    std::string run_policy, sweep_policy, baseline, parameter, values;
    std::vector<std::string> cmp_policies;

    auto* run = app.add_subcommand("run", "Run one scenario and write report.csv");
    run_flags.attach(run);
    run->add_option("--policy,-p", run_policy, "Override policy.kind")->check(CLI::IsMember({"linux", "mitosis", "phoenix"}));

    auto* cmp = app.add_subcommand("compare", "Run a scenario under several policies and compare");
    cmp_flags.attach(cmp);
    cmp->add_option("--policy,-p", cmp_policies, "Policies to compare (comma separated, at least two)")
        ->delimiter(',')
        ->required()
        ->check(CLI::IsMember({"linux", "mitosis", "phoenix"}));
    cmp->add_option("--baseline", baseline, "Policy the others are normalized to (default: the first)");

    auto* sweep = app.add_subcommand("sweep", "Run a scenario once per parameter value");
    sweep_flags.attach(sweep);
    sweep->add_option("--param", parameter, "nodes, replicas, threshold, remote_factor or antagonist_threads")->required();
    sweep->add_option("--values", values, "Comma separated values")->required();
    sweep->add_option("--policy,-p", sweep_policy, "Override policy.kind")->check(CLI::IsMember({"linux", "mitosis", "phoenix"}));

    std::vector<std::string> argv_store{"numasim"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*run) return cmd_run(run_flags, run_policy, out);
        if (*cmp) return cmd_compare(cmp_flags, cmp_policies, baseline, out);
        return cmd_sweep(sweep_flags, parameter, values, sweep_policy, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace numasim
