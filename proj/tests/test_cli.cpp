#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "numasim/cli.hpp"
#include "numasim/error.hpp"
#include "numasim/scenario.hpp"

using namespace numasim;
namespace fs = std::filesystem;

namespace {

const std::string kSmall = R"({
  "machine": { "nodes": 2, "cores_per_node": 4 },
  "workloads": [
    { "preset": "gups_like", "threads": 3, "accesses_per_quantum": 1500 },
    { "preset": "stream_like", "threads": 2, "accesses_per_quantum": 1500 }
  ],
  "policy": { "kind": "phoenix" },
  "run": { "duration": 12, "seed": 3 }
})";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct Dir {
    fs::path path;
    explicit Dir(const std::string& name) : path(fs::current_path() / ("cli_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~Dir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(path / name) << text;
        return path / name;
    }
};

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

std::string error_of(const std::string& text) {
    try {
        load_scenario(text, "s.json");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("scenario parsing") {
    const Scenario s = load_scenario(kSmall, "small.json");
    CHECK(s.machine.nodes == 2);
    REQUIRE(s.workloads.size() == 2);
    CHECK(s.workloads[0].spec.thread_count == 3);
    CHECK(s.workloads[1].spec.priority == Priority::Low);
    CHECK(s.policy.kind == PolicyKind::Phoenix);
    CHECK(s.fingerprint.size() == 16);
}

TEST_CASE("scenario errors name the line") {
    const std::string bad_window = "{\n\"machine\": {\"nodes\": 2, \"cores_per_node\": 4},\n"
                                   "\"workloads\": [{\"preset\": \"gups_like\"}],\n\"policy\": {\"kind\": \"linux\",\n\"window\": 0},\n"
                                   "\"run\": {\"duration\": 5}\n}";
    const std::string e = error_of(bad_window);
    CHECK(e.find("s.json:5:") == 0);
    CHECK(e.find("policy.window") != std::string::npos);

    const std::string unknown = "{\n\"machine\": {\"nodes\": 2, \"cores_per_node\": 4, \"colour\": 1},\n"
                                "\"workloads\": [{\"preset\": \"gups_like\"}], \"policy\": {\"kind\": \"linux\"}, \"run\": {\"duration\": 5}}";
    const std::string u = error_of(unknown);
    CHECK(u.find("s.json:2:") == 0);
    CHECK(u.find("colour") != std::string::npos);

    CHECK(error_of("{\n\"machine\": {\n").find("s.json:") == 0);
    CHECK(error_of(R"({"machine": {"nodes": 2, "cores_per_node": 4}, "workloads": [{"preset": "gups_like"}],
                       "policy": {"kind": "bsd"}, "run": {"duration": 5}})")
              .find("policy.kind") != std::string::npos);
    CHECK_FALSE(error_of(R"({"machine": {"nodes": 2}, "workloads": [], "policy": {"kind": "linux"},
                             "run": {"duration": 5}})")
                    .empty());
}

TEST_CASE("overrides") {
    const Scenario s = load_scenario(kSmall, "small.json", {"policy.threshold=0.25", "workloads.1.threads=4"});
    CHECK(s.policy.threshold_pw_ratio == doctest::Approx(0.25));
    CHECK(s.workloads[1].spec.thread_count == 4);
    CHECK_THROWS_AS(load_scenario(kSmall, "small.json", {"policy.window=0"}), ConfigError);
    CHECK_THROWS_AS(load_scenario(kSmall, "small.json", {"nonsense"}), ConfigError);
}

TEST_CASE("fingerprint ignores the policy and defaults") {
    const Scenario a = load_scenario(kSmall, "a.json");
    const Scenario b = load_scenario(kSmall, "a.json", {"policy.kind=linux"});
    const Scenario c = load_scenario(kSmall, "a.json", {"machine.local_latency=100"});
    const Scenario d = load_scenario(kSmall, "a.json", {"run.seed=4"});
    CHECK(a.fingerprint == b.fingerprint);
    CHECK(a.fingerprint == c.fingerprint);
    CHECK(a.fingerprint != d.fingerprint);
    CHECK(canonical_json(a) == canonical_json(c));
}

TEST_CASE("run writes the report and manifest") {
    Dir d("run");
    const auto sc = d.write("s.json", kSmall);
    const auto out = d.path / "out";
    const Result r = cli({"run", sc.string(), "--out", out.string(), "--seed", "42"});
    REQUIRE(r.code == kExitOk);
    const std::string report = slurp(out / "report.csv");
    // header + 5 tasks + 2 nodes + total
    CHECK(count_lines(report) == 9);
    const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(m["seed"] == 42);
    CHECK(m["command"] == "run");
    CHECK(m["fingerprint"] == load_scenario(kSmall, "s.json", {"run.seed=42"}).fingerprint);
    CHECK(fs::exists(out / "events.csv"));
    CHECK_FALSE(fs::exists(out / "timeseries.csv"));

    const Result again = cli({"run", sc.string(), "--out", (d.path / "out2").string(), "--seed", "42"});
    REQUIRE(again.code == kExitOk);
    CHECK(slurp(d.path / "out2" / "report.csv") == report);
    CHECK(slurp(d.path / "out2" / "events.csv") == slurp(out / "events.csv"));
}

TEST_CASE("run with timeseries and policy flag") {
    Dir d("ts");
    const auto sc = d.write("s.json", kSmall);
    const Result r = cli({"run", sc.string(), "-o", d.path.string(), "--policy", "linux", "--timeseries"});
    REQUIRE(r.code == kExitOk);
    CHECK(fs::exists(d.path / "timeseries.csv"));
    CHECK(slurp(d.path / "report.csv").find(",linux,") != std::string::npos);
}

TEST_CASE("invalid input leaves no output") {
    Dir d("bad");
    const auto sc = d.write("s.json", "{\n\"machine\": {\"nodes\": 0, \"cores_per_node\": 4},\n\"workloads\": [{\"preset\": \"gups_like\"}],"
                                      "\"policy\": {\"kind\": \"linux\"}, \"run\": {\"duration\": 5}}");
    const auto out = d.path / "out";
    const Result r = cli({"run", sc.string(), "--out", out.string()});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("s.json:2:") != std::string::npos);
    CHECK_FALSE(fs::exists(out / "report.csv"));
    CHECK(cli({"run", (d.path / "missing.json").string(), "--out", out.string()}).code == kExitValidation);
    CHECK(cli({"frobnicate"}).code == kExitValidation);
}

TEST_CASE("compare") {
    Dir d("cmp");
    const auto sc = d.write("s.json", kSmall);
    const Result one = cli({"compare", sc.string(), "-o", d.path.string(), "--policy", "linux"});
    CHECK(one.code == kExitValidation);

    const Result same = cli({"compare", sc.string(), "-o", d.path.string(), "--policy", "linux,linux"});
    REQUIRE(same.code == kExitOk);
    const std::string table = slurp(d.path / "comparison.csv");
    CHECK(count_lines(table) == 3);
    CHECK(table.find(",1.0000,1.0000,1.0000,1.0000,1.0000,1.0000,1.0000") != std::string::npos);
    CHECK(fs::exists(d.path / "report_linux.csv"));
    CHECK(fs::exists(d.path / "report_linux_2.csv"));

    const Result all = cli({"compare", sc.string(), "-o", d.path.string(), "--policy", "linux,mitosis,phoenix",
                            "--baseline", "linux"});
    REQUIRE(all.code == kExitOk);
    CHECK(all.out == slurp(d.path / "comparison.csv"));
    const auto m = nlohmann::json::parse(slurp(d.path / "manifest.json"));
    CHECK(m["policies"].size() == 3);
}

TEST_CASE("sweep") {
    Dir d("sweep");
    const auto sc = d.write("s.json", kSmall);
    const Result r = cli({"sweep", sc.string(), "-o", d.path.string(), "--param", "replicas", "--values", "1,2,3,4",
                          "--policy", "mitosis", "--set", "machine.nodes=4"});
    REQUIRE(r.code == kExitOk);
    const std::string summary = slurp(d.path / "sweep_summary.csv");
    CHECK(count_lines(summary) == 5);
    CHECK(summary.rfind("parameter,value,policy,total_cycles", 0) == 0);
    const auto m = nlohmann::json::parse(slurp(d.path / "manifest.json"));
    CHECK(m["sweep"]["fingerprints"].size() == 4);

    CHECK(cli({"sweep", sc.string(), "-o", d.path.string(), "--param", "replicas", "--values", ""}).code ==
          kExitValidation);
    CHECK(cli({"sweep", sc.string(), "-o", d.path.string(), "--param", "colour", "--values", "1"}).code ==
          kExitValidation);
    CHECK(cli({"sweep", sc.string(), "-o", d.path.string(), "--param", "nodes", "--values", "0"}).code ==
          kExitValidation);
}

TEST_CASE("higher thresholds replicate later") {
    const auto scenarios =
        expand_sweep(kSmall, "s.json", {"run.duration=40", "workloads.0.threads=6"}, "threshold", {"0.02", "0.5"});
    REQUIRE(scenarios.size() == 2);
    CHECK(scenarios[0].policy.threshold_pw_ratio == doctest::Approx(0.02));
    const auto low = run_scenario(scenarios[0]);
    const auto high = run_scenario(scenarios[1]);
    auto first = [](const MetricsReport& r) {
        for (const auto& e : r.events)
            if (e.kind == "replicate") return e.quantum;
        return 1 << 30;
    };
    CHECK(first(low) < 40);
    CHECK(first(low) < first(high));
}

TEST_CASE("antagonist sweep touches every low priority workload") {
    const auto s = expand_sweep(kSmall, "s.json", {}, "antagonist_threads", {"1", "3"});
    CHECK(s[0].workloads[1].spec.thread_count == 1);
    CHECK(s[1].workloads[1].spec.thread_count == 3);
    CHECK(s[1].workloads[0].spec.thread_count == 3);
}

TEST_CASE("output directory from the environment") {
    Dir d("env");
    const auto sc = d.write("s.json", kSmall);
    const auto out = d.path / "from_env";
    ::setenv(kOutDirEnv, out.string().c_str(), 1);
    const Result r = cli({"run", sc.string()});
    ::unsetenv(kOutDirEnv);
    REQUIRE(r.code == kExitOk);
    CHECK(fs::exists(out / "report.csv"));
}

TEST_CASE("shipped scenarios load") {
    const fs::path dir = fs::path(NUMASIM_SOURCE_DIR) / "scenarios";
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        CAPTURE(e.path().string());
        CHECK_NOTHROW(load_scenario_file(e.path().string()));
        ++n;
    }
    CHECK(n >= 5);
}
