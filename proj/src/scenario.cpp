#include "numasim/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "numasim/error.hpp"

namespace numasim {

namespace {

using nlohmann::json;

// Line of every key and array element in a JSON text, keyed by dotted path
// ("policy.window", "workloads.1.pin.0"). Only run on text nlohmann accepted.
class LineIndex {
public:
    explicit LineIndex(const std::string& text) : text_(text) {
        skip_ws();
        if (pos_ < text_.size()) value("");
    }

    int line_of(const std::string& path) const {
        for (std::string p = path;;) {
            auto it = lines_.find(p);
            if (it != lines_.end()) return it->second;
            const auto dot = p.rfind('.');
            if (dot == std::string::npos) return p.empty() ? 1 : line_of("");
            p.resize(dot);
        }
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            if (text_[pos_] == '\n') ++line_;
            ++pos_;
        }
    }

    std::string string_token() {
        std::string out;
        ++pos_;  // opening quote
        while (pos_ < text_.size() && text_[pos_] != '"') {
            if (text_[pos_] == '\\') ++pos_;
            if (pos_ < text_.size()) out += text_[pos_++];
        }
        ++pos_;
        return out;
    }

    static std::string join(const std::string& base, const std::string& key) {
        return base.empty() ? key : base + "." + key;
    }

    void value(const std::string& path) {
        lines_.emplace(path, line_);
        const char c = text_[pos_];
        if (c == '{') {
            ++pos_;
            skip_ws();
            while (pos_ < text_.size() && text_[pos_] != '}') {
                const int key_line = line_;
                const std::string key = string_token();
                skip_ws();
                ++pos_;  // colon
                skip_ws();
                const std::string child = join(path, key);
                value(child);
                lines_[child] = key_line;
                skip_ws();
                if (text_[pos_] == ',') {
                    ++pos_;
                    skip_ws();
                }
            }
            ++pos_;
        } else if (c == '[') {
            ++pos_;
            skip_ws();
            for (int i = 0; pos_ < text_.size() && text_[pos_] != ']'; ++i) {
                value(join(path, std::to_string(i)));
                skip_ws();
                if (text_[pos_] == ',') {
                    ++pos_;
                    skip_ws();
                }
            }
            ++pos_;
        } else if (c == '"') {
            string_token();
        } else {
            while (pos_ < text_.size() && std::string_view(",]} \t\r\n").find(text_[pos_]) == std::string_view::npos) ++pos_;
        }
    }

    const std::string& text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    std::map<std::string, int> lines_;
};

// Wraps a JSON object with its path and rejects keys that were never read.
class Section {
public:
    Section(const json& obj, std::string path, const LineIndex& lines, const std::string& source)
        : obj_(obj), path_(std::move(path)), lines_(lines), source_(source) {
        if (!obj_.is_object()) fail(path_, "must be an object");
    }

    [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
        throw ConfigError(source_ + ":" + std::to_string(lines_.line_of(path)) + ": " + path + " " + msg);
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        known_.insert(key);
        return obj_.contains(key);
    }

    const json& raw(const std::string& key) {
        known_.insert(key);
        return obj_.at(key);
    }

    Section sub(const std::string& key) { return Section(raw(key), child(key), lines_, source_); }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        const json& v = obj_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(child(key), "must be true or false");
            out = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(child(key), "must be a string");
            out = v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(child(key), "must be a number");
            out = v.get<T>();
        } else {
            static_assert(std::is_integral_v<T>);
            if (!v.is_number_integer() && !v.is_number_unsigned()) fail(child(key), "must be an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_integer() && v.get<std::int64_t>() < 0) fail(child(key), "must be non-negative");
                out = v.get<T>();
            } else {
                const auto x = v.get<std::int64_t>();
                if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
                    fail(child(key), "is out of range");
                out = static_cast<T>(x);
            }
        }
    }

    template <class T>
    void require(const std::string& key, T& out) {
        if (!obj_.contains(key)) fail(child(key), "is required");
        get(key, out);
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items())
            if (!known_.count(key)) fail(child(key), "is not a recognized key");
    }

    const std::string& path() const { return path_; }

private:
    const json& obj_;
    std::string path_;
    const LineIndex& lines_;
    const std::string& source_;
    std::set<std::string> known_;
};

Pattern parse_pattern(const Section& s, const std::string& path, const std::string& v) {
    if (v == "uniform") return Pattern::UniformRandom;
    if (v == "zipfian") return Pattern::Zipfian;
    if (v == "sequential") return Pattern::Sequential;
    s.fail(path, "must be one of uniform, zipfian, sequential");
}

const char* pattern_key(Pattern p) {
    switch (p) {
        case Pattern::UniformRandom: return "uniform";
        case Pattern::Zipfian: return "zipfian";
        case Pattern::Sequential: return "sequential";
    }
    return "?";
}

void read_machine(Section m, MachineConfig& out) {
    m.require("nodes", out.nodes);
    m.require("cores_per_node", out.cores_per_node);
    m.get("smt", out.smt);
    m.get("local_latency", out.local_latency);
    m.get("remote_factor", out.remote_factor);
    if (m.has("remote_factors")) {
        const json& rows = m.raw("remote_factors");
        const std::string path = m.child("remote_factors");
        if (!rows.is_array()) m.fail(path, "must be a matrix of numbers");
        out.remote_factors.clear();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i].is_array()) m.fail(path + "." + std::to_string(i), "must be a row of numbers");
            std::vector<double> row;
            for (std::size_t j = 0; j < rows[i].size(); ++j) {
                if (!rows[i][j].is_number())
                    m.fail(path + "." + std::to_string(i) + "." + std::to_string(j), "must be a number");
                row.push_back(rows[i][j].get<double>());
            }
            out.remote_factors.push_back(std::move(row));
        }
    }
    m.get("node_bandwidth", out.node_bandwidth);
    m.get("link_bandwidth", out.link_bandwidth);
    m.get("memory_pages_per_node", out.memory_pages_per_node);
    m.finish();
}

WorkloadInstance read_workload(Section w) {
    WorkloadInstance inst;
    WorkloadSpec& s = inst.spec;
    if (w.has("preset")) {
        std::string name;
        w.get("preset", name);
        try {
            s = preset(name);
        } catch (const ConfigError&) {
            w.fail(w.child("preset"), "names an unknown preset '" + name + "'");
        }
    }
    w.get("name", s.name);
    w.get("threads", s.thread_count);
    w.get("footprint_pages", s.footprint_pages);
    if (w.has("pattern")) {
        std::string p;
        w.get("pattern", p);
        s.pattern = parse_pattern(w, w.child("pattern"), p);
    }
    w.get("zipf_theta", s.zipf_theta);
    w.get("accesses_per_quantum", s.accesses_per_quantum_per_thread);
    w.get("vm_ops_per_kilo_access", s.vm_ops_per_kilo_access);
    if (w.has("vm_mix")) {
        Section mix = w.sub("vm_mix");
        s.vm_mix = VmOpMix{};
        mix.get("map", s.vm_mix.map);
        mix.get("unmap", s.vm_mix.unmap);
        mix.get("protect", s.vm_mix.protect);
        mix.get("remap", s.vm_mix.remap);
        mix.finish();
    }
    w.get("vm_op_mean_pages", s.vm_op_mean_pages);
    if (w.has("priority")) {
        std::string p;
        w.get("priority", p);
        if (p == "high") s.priority = Priority::High;
        else if (p == "low") s.priority = Priority::Low;
        else w.fail(w.child("priority"), "must be high or low");
    }
    if (w.has("sharing")) {
        std::string p;
        w.get("sharing", p);
        if (p == "shared") s.sharing = Sharing::Shared;
        else if (p == "private") s.sharing = Sharing::Private;
        else w.fail(w.child("sharing"), "must be shared or private");
    }
    w.get("llc_miss_probability", s.llc_miss_probability);
    w.get("write_fraction", s.write_fraction);
    w.get("start", inst.start_quantum);
    if (w.has("stop")) {
        int stop = 0;
        w.get("stop", stop);
        inst.stop_quantum = stop;
    }
    if (w.has("pin")) {
        const json& pins = w.raw("pin");
        if (!pins.is_array()) w.fail(w.child("pin"), "must be a list of core ids");
        for (std::size_t i = 0; i < pins.size(); ++i) {
            if (!pins[i].is_number_integer()) w.fail(w.child("pin") + "." + std::to_string(i), "must be a core id");
            inst.pin_cores.push_back(pins[i].get<int>());
        }
    }
    w.get("prefault", inst.prefault);
    w.finish();
    try {
        s.validate();
    } catch (const ConfigError& e) {
        w.fail(w.path(), std::string("is invalid: ") + e.what());
    }
    return inst;
}

void read_policy(Section p, PolicyConfig& out) {
    std::string kind;
    p.require("kind", kind);
    try {
        out.kind = parse_policy_kind(kind);
    } catch (const ConfigError&) {
        p.fail(p.child("kind"), "must be one of linux, mitosis, phoenix");
    }
    p.get("threshold", out.threshold_pw_ratio);
    p.get("tolerance", out.imbalance_tolerance);
    p.get("window", out.window_ticks);
    p.get("rebalance_interval", out.rebalance_interval);
    p.get("replicas", out.mitosis_replicas);
    if (p.has("autonuma")) {
        if (p.raw("autonuma").is_boolean()) {
            p.get("autonuma", out.autonuma);
        } else {
            Section a = p.sub("autonuma");
            a.get("enabled", out.autonuma);
            a.get("scan_period", out.autonuma_scan_period);
            a.get("migrate_threshold", out.autonuma_migrate_threshold);
            a.finish();
        }
    }
    if (p.has("mba")) {
        if (p.raw("mba").is_boolean()) {
            p.get("mba", out.mba);
        } else {
            Section a = p.sub("mba");
            a.get("enabled", out.mba);
            a.get("min_cap", out.mba_min_cap);
            a.finish();
        }
    }
    p.finish();
}

void read_run(Section r, Scenario& sc) {
    r.require("duration", sc.duration_quanta);
    r.get("seed", sc.seed);
    r.get("quantum", sc.quantum_cycles);
    r.get("timeseries", sc.timeseries);
    r.finish();
}

void read_mmu(Section m, Scenario& sc) {
    m.get("tlb_entries", sc.mmu.tlb_entries);
    if (m.has("pwc_entries")) {
        const json& v = m.raw("pwc_entries");
        if (!v.is_array() || v.size() != 3) m.fail(m.child("pwc_entries"), "must list 3 sizes (pgd, pud, pmd)");
        for (std::size_t i = 0; i < 3; ++i) {
            if (!v[i].is_number_unsigned()) m.fail(m.child("pwc_entries") + "." + std::to_string(i), "must be a size");
            sc.mmu.pwc_entries[i] = v[i].get<std::size_t>();
        }
    }
    m.get("tlb_hit", sc.mmu.tlb_hit_cycles);
    m.get("ipi_base", sc.mmu.ipi_base_cycles);
    m.get("arity", sc.pt_arity);
    m.finish();
}

void read_contention(Section c, ContentionParams& out) {
    c.get("knee", out.knee);
    c.get("slope", out.slope);
    c.get("max_multiplier", out.max_multiplier);
    c.finish();
}

void read_costs(Section c, EngineCosts& out) {
    c.get("page_fault", out.page_fault);
    c.get("syscall", out.syscall);
    c.get("llc_hit", out.llc_hit);
    c.get("cacheline_bytes", out.cacheline_bytes);
    c.get("page_bytes", out.page_bytes);
    c.get("context_switch", out.context_switch);
    c.finish();
}

void apply_override(json& doc, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + spec + "': expected path=value");
    const std::string path = spec.substr(0, eq);
    const std::string text = spec.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::stringstream ss(path);
    std::vector<std::string> parts;
    for (std::string part; std::getline(ss, part, '.');) {
        if (part.empty()) throw ConfigError("override '" + spec + "': empty path component");
        parts.push_back(part);
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const bool last = i + 1 == parts.size();
        const std::string& part = parts[i];
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                std::size_t used = 0;
                idx = std::stoul(part, &used);
                if (used != part.size()) throw std::invalid_argument(part);
            } catch (const std::exception&) {
                throw ConfigError("override '" + spec + "': '" + part + "' is not an index");
            }
            if (idx >= node->size()) throw ConfigError("override '" + spec + "': index " + part + " out of range");
            node = &(*node)[idx];
        } else if (node->is_object() || node->is_null()) {
            node = &(*node)[part];
        } else {
            throw ConfigError("override '" + spec + "': '" + part + "' is below a scalar");
        }
        if (last) *node = value;
    }
}

// Messages from Scenario::validate start with a section path; anchor them there.
std::string anchor_path(const std::string& msg) {
    if (msg.rfind("workloads[", 0) == 0) {
        const auto close = msg.find(']');
        return "workloads." + msg.substr(10, close - 10);
    }
    const auto end = msg.find_first_of(" :");
    return msg.substr(0, end);
}

}  // namespace

Scenario load_scenario(const std::string& text, const std::string& source_name, const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto ? upto - 1 : 0), '\n');
        std::string what = e.what();
        const auto colon = what.find("syntax error");
        throw ConfigError(source_name + ":" + std::to_string(line) + ": malformed JSON: " +
                          (colon == std::string::npos ? what : what.substr(colon)));
    }
    const LineIndex lines(text);
    for (const auto& o : overrides) apply_override(doc, o);

    Scenario sc;
    Section root(doc, "", lines, source_name);
    for (const char* key : {"machine", "workloads", "policy", "run"})
        if (!doc.is_object() || !doc.contains(key)) root.fail(key, "section is required");

    read_machine(root.sub("machine"), sc.machine);
    const json& ws = root.raw("workloads");
    if (!ws.is_array() || ws.empty()) root.fail("workloads", "must be a non-empty list");
    for (std::size_t i = 0; i < ws.size(); ++i)
        sc.workloads.push_back(read_workload(Section(ws[i], "workloads." + std::to_string(i), lines, source_name)));
    read_policy(root.sub("policy"), sc.policy);
    read_run(root.sub("run"), sc);
    if (root.has("mmu")) read_mmu(root.sub("mmu"), sc);
    if (root.has("contention")) read_contention(root.sub("contention"), sc.contention);
    if (root.has("costs")) read_costs(root.sub("costs"), sc.costs);
    root.finish();

    try {
        sc.validate();
    } catch (const ConfigError& e) {
        const std::string path = anchor_path(e.what());
        throw ConfigError(source_name + ":" + std::to_string(lines.line_of(path)) + ": " + e.what());
    } catch (const TopologyError& e) {
        throw ConfigError(source_name + ":" + std::to_string(lines.line_of("machine")) + ": machine: " + e.what());
    }
    sc.fingerprint = scenario_fingerprint(sc);
    return sc;
}

Scenario load_scenario_file(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open scenario file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_scenario(buf.str(), path, overrides);
}

namespace {

json to_json(const Scenario& sc) {
    json j;
    const auto& m = sc.machine;
    j["machine"] = {{"nodes", m.nodes},
                    {"cores_per_node", m.cores_per_node},
                    {"smt", m.smt},
                    {"local_latency", m.local_latency},
                    {"remote_factor", m.remote_factor},
                    {"remote_factors", m.remote_factors},
                    {"node_bandwidth", m.node_bandwidth},
                    {"link_bandwidth", m.link_bandwidth},
                    {"memory_pages_per_node", m.memory_pages_per_node}};
    j["workloads"] = json::array();
    for (const auto& w : sc.workloads) {
        const auto& s = w.spec;
        json wj = {{"name", s.name},
                   {"threads", s.thread_count},
                   {"footprint_pages", s.footprint_pages},
                   {"pattern", pattern_key(s.pattern)},
                   {"zipf_theta", s.zipf_theta},
                   {"accesses_per_quantum", s.accesses_per_quantum_per_thread},
                   {"vm_ops_per_kilo_access", s.vm_ops_per_kilo_access},
                   {"vm_mix",
                    {{"map", s.vm_mix.map}, {"unmap", s.vm_mix.unmap}, {"protect", s.vm_mix.protect}, {"remap", s.vm_mix.remap}}},
                   {"vm_op_mean_pages", s.vm_op_mean_pages},
                   {"priority", s.priority == Priority::High ? "high" : "low"},
                   {"sharing", s.sharing == Sharing::Shared ? "shared" : "private"},
                   {"llc_miss_probability", s.llc_miss_probability},
                   {"write_fraction", s.write_fraction},
                   {"start", w.start_quantum},
                   {"pin", w.pin_cores},
                   {"prefault", w.prefault}};
        wj["stop"] = w.stop_quantum ? json(*w.stop_quantum) : json(nullptr);
        j["workloads"].push_back(std::move(wj));
    }
    const auto& p = sc.policy;
    j["policy"] = {{"kind", to_string(p.kind)},
                   {"threshold", p.threshold_pw_ratio},
                   {"tolerance", p.imbalance_tolerance},
                   {"window", p.window_ticks},
                   {"rebalance_interval", p.rebalance_interval},
                   {"replicas", p.mitosis_replicas},
                   {"autonuma",
                    {{"enabled", p.autonuma},
                     {"scan_period", p.autonuma_scan_period},
                     {"migrate_threshold", p.autonuma_migrate_threshold}}},
                   {"mba", {{"enabled", p.mba}, {"min_cap", p.mba_min_cap}}}};
    j["run"] = {{"duration", sc.duration_quanta},
                {"seed", sc.seed},
                {"quantum", sc.quantum_cycles},
                {"timeseries", sc.timeseries}};
    j["mmu"] = {{"tlb_entries", sc.mmu.tlb_entries},
                {"pwc_entries", sc.mmu.pwc_entries},
                {"tlb_hit", sc.mmu.tlb_hit_cycles},
                {"ipi_base", sc.mmu.ipi_base_cycles},
                {"arity", sc.pt_arity}};
    j["contention"] = {{"knee", sc.contention.knee},
                       {"slope", sc.contention.slope},
                       {"max_multiplier", sc.contention.max_multiplier}};
    j["costs"] = {{"page_fault", sc.costs.page_fault},
                  {"syscall", sc.costs.syscall},
                  {"llc_hit", sc.costs.llc_hit},
                  {"cacheline_bytes", sc.costs.cacheline_bytes},
                  {"page_bytes", sc.costs.page_bytes},
                  {"context_switch", sc.costs.context_switch}};
    return j;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::string canonical_json(const Scenario& scenario) { return to_json(scenario).dump(); }

std::string scenario_fingerprint(const Scenario& scenario) {
    json j = to_json(scenario);
    j["policy"].erase("kind");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

}  // namespace numasim
