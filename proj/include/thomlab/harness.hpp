#pragma once

// Scenario configuration, the built-in catalog, analyzers, and a threaded
// runner that writes per-scenario CSV files and a JSON report.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "thomlab/asymptotics.hpp"
#include "thomlab/flow.hpp"
#include "thomlab/gauge.hpp"
#include "thomlab/lattice.hpp"
#include "thomlab/reduction.hpp"
#include "thomlab/secant.hpp"

namespace thomlab::harness {

using json = nlohmann::json;

enum class Kind { flow, gauge_toy, lattice };
enum class Status { pass, fail, skipped };

inline const char* to_string(Kind k) {
    switch (k) {
        case Kind::flow: return "flow";
        case Kind::gauge_toy: return "gauge_toy";
        case Kind::lattice: return "lattice";
    }
    return "?";
}

inline const char* to_string(Status s) {
    switch (s) {
        case Status::pass: return "pass";
        case Status::fail: return "fail";
        case Status::skipped: return "skipped";
    }
    return "?";
}

struct AnalysisRequest {
    std::string name;
    bool required = true;
};

/// Known analytic facts about a scenario; absent values are not checked.
struct Expectations {
    std::optional<double> degree;    // homogeneous of this degree
    std::optional<double> rho;       // Lojasiewicz exponent
    double rho_tol = 0.02;
    std::optional<double> loj_c;     // constant in |E'| >= c |E|^rho
    std::optional<double> l;         // characteristic exponent
    double l_tol = 0.05;
    std::vector<double> L;           // candidate exponents for W^eps_l labels
    std::optional<double> a0;        // asymptotic critical value
    double a0_tol = 0.01;
    bool bound_equal = false;        // l = 1/(1 - rho)
    bool quadratic = false;          // nondegenerate Hessian at the limit
    std::optional<double> weps_below;  // W^eps_l membership in every decade below this r
};

struct Scenario {
    std::string name;
    Kind kind = Kind::flow;
    std::string field;
    std::vector<double> start;
    // flow overrides
    double r_floor = 1e-6;
    double grad_floor = 1e-30;
    double rel_tol = 1e-10;
    double thinning = 0.95;
    long max_steps = 50'000'000;
    Parameterization param = Parameterization::arclength;
    WepsParams weps;
    double monitor_window = 1e-2;  // E-monitor uses samples with r at or below this
    Expectations expect;
    // gauge toy
    std::vector<std::array<int, 2>> planes;
    std::vector<double> x_inf;
    double wobble_amplitude = 0.3;
    double wobble_frequency = 5.0;
    // lattice
    std::vector<int> dims{2, 2, 2, 2};
    double amplitude = 0.3;
    double dt = 1e-3;
    long steps = 400'000;
    long record_every = 500;
    double min_distance = 1e-6;

    std::vector<AnalysisRequest> analyses;
    std::optional<std::uint64_t> seed;
};

/// Analyzer names accepted for each scenario kind.
inline const std::map<Kind, std::vector<std::string>>& analyzer_names() {
    static const std::map<Kind, std::vector<std::string>> names{
        {Kind::flow,
         {"secant", "euler", "lojasiewicz", "exponent_bound", "char_exponent", "e_monitor", "sigma_ratio", "reduction",
          "bochnak", "length_bound"}},
        {Kind::gauge_toy, {"invariance", "gauge_fix", "wobble", "quotient", "secant"}},
        {Kind::lattice, {"lattice_flow", "lattice_invariance", "h1_secant"}},
    };
    return names;
}

inline std::vector<AnalysisRequest> default_analyses(Kind k) {
    std::vector<AnalysisRequest> out;
    for (const auto& n : analyzer_names().at(k)) out.push_back({n, true});
    return out;
}

// ---------------------------------------------------------------- catalog

inline std::vector<Scenario> catalog() {
    std::vector<Scenario> c;
    auto flow = [&](std::string name, std::string field, std::vector<double> start) -> Scenario& {
        Scenario s;
        s.name = std::move(name);
        s.field = std::move(field);
        s.start = std::move(start);
        s.analyses = default_analyses(Kind::flow);
        c.push_back(std::move(s));
        return c.back();
    };
    {
        auto& s = flow("x2_y2", "x^2 + y^2", {0.8, 0.6});
        s.expect.degree = 2, s.expect.rho = 0.5, s.expect.rho_tol = 0.01, s.expect.loj_c = 2, s.expect.l = 2;
        s.expect.quadratic = true;
    }
    {
        auto& s = flow("x2_4y2", "x^2 + 4*y^2", {1.0, 1.0});
        s.expect.degree = 2, s.expect.rho = 0.5, s.expect.l = 2, s.expect.a0 = 1.0, s.expect.quadratic = true;
    }
    {
        auto& s = flow("r4", "(x^2 + y^2)^2", {0.6, 0.8});
        s.expect.degree = 4, s.expect.rho = 0.75, s.expect.rho_tol = 0.02, s.expect.loj_c = 4, s.expect.l = 4;
        s.expect.bound_equal = true;
    }
    {
        auto& s = flow("x4_y2", "x^4 + y^2", {1.0, 1.0});
        s.r_floor = 1e-4;
        s.expect.l = 4;
    }
    {
        auto& s = flow("x2_y4", "x^2 + y^4", {0.8, 1.0});
        s.r_floor = 1e-4;
        s.expect.l = 4, s.expect.L = {2, 4}, s.expect.weps_below = 1e-2;
    }
    {
        auto& s = flow("x4_y4", "x^4 + y^4", {1.0, 0.5});
        s.expect.degree = 4, s.expect.l = 4;
    }
    {
        auto& s = flow("r4_x4", "(x^2 + y^2)^2 + x^4", {0.6, 0.8});
        s.expect.degree = 4, s.expect.l = 4;
    }
    {
        auto& s = flow("x4_y2_y3", "x^4 + y^2 + y^3", {0.8, 0.3});
        s.r_floor = 1e-4;
        s.expect.l = 4;
    }
    {
        Scenario s;
        s.name = "so2_toy";
        s.kind = Kind::gauge_toy;
        s.field = "(x1^2 + x2^2 - 1)^2 + x3^2";
        s.planes = {{0, 1}};
        s.x_inf = {std::cos(0.7), std::sin(0.7), 0.0};
        s.start = {1.3 * std::cos(0.7), 1.3 * std::sin(0.7), 0.3};
        s.r_floor = 1e-4;  // below this the decade lengths reach the integration noise
        s.analyses = default_analyses(Kind::gauge_toy);
        s.seed = 7;
        c.push_back(std::move(s));
    }
    {
        Scenario s;
        s.name = "lattice_2x4";
        s.kind = Kind::lattice;
        s.analyses = default_analyses(Kind::lattice);
        s.seed = 11;
        c.push_back(std::move(s));
    }
    return c;
}

// ----------------------------------------------------------- config I/O

namespace detail {

struct Reader {
    const json& j;
    std::string path;
    std::set<std::string> seen;

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError(path + "." + key + ": " + what);
    }
    bool has(const std::string& key) {
        if (!j.contains(key)) return false;
        seen.insert(key);
        return true;
    }
    double number(const std::string& key) {
        if (!j.at(key).is_number()) fail(key, "expected a number");
        return j.at(key).get<double>();
    }
    long integer(const std::string& key) {
        if (!j.at(key).is_number_integer()) fail(key, "expected an integer");
        return j.at(key).get<long>();
    }
    std::string string(const std::string& key) {
        if (!j.at(key).is_string()) fail(key, "expected a string");
        return j.at(key).get<std::string>();
    }
    std::vector<double> numbers(const std::string& key) {
        const json& a = j.at(key);
        if (!a.is_array()) fail(key, "expected an array of numbers");
        std::vector<double> v;
        for (const auto& e : a) {
            if (!e.is_number()) fail(key, "expected an array of numbers");
            v.push_back(e.get<double>());
        }
        return v;
    }
    void opt(const std::string& key, double& out) {
        if (has(key)) out = number(key);
    }
    void opt(const std::string& key, std::optional<double>& out) {
        if (has(key)) out = number(key);
    }
    void opt(const std::string& key, long& out) {
        if (has(key)) out = integer(key);
    }
    void opt(const std::string& key, bool& out) {
        if (!has(key)) return;
        if (!j.at(key).is_boolean()) fail(key, "expected a boolean");
        out = j.at(key).get<bool>();
    }
    void finish() const {
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!seen.count(it.key())) fail(it.key(), "unknown field");
    }
};

inline Reader object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    return Reader{j, path, {}};
}

inline Kind parse_kind(const std::string& s, const std::string& path) {
    if (s == "flow") return Kind::flow;
    if (s == "gauge_toy") return Kind::gauge_toy;
    if (s == "lattice") return Kind::lattice;
    throw ConfigError(path + ": unknown kind '" + s + "'");
}

inline void apply(Scenario& s, const json& j, const std::string& path) {
    auto r = object(j, path);
    if (r.has("catalog")) r.string("catalog");  // consumed by the caller
    if (r.has("name")) s.name = r.string("name");
    if (r.has("kind")) s.kind = parse_kind(r.string("kind"), path + ".kind");
    if (r.has("field")) s.field = r.string("field");
    if (r.has("start")) s.start = r.numbers("start");
    if (r.has("seed")) {
        if (!j.at("seed").is_number_unsigned()) r.fail("seed", "expected a non-negative integer");
        s.seed = j.at("seed").get<std::uint64_t>();
    }
    if (r.has("flow")) {
        auto f = object(j.at("flow"), path + ".flow");
        f.opt("r_floor", s.r_floor);
        f.opt("grad_floor", s.grad_floor);
        f.opt("rel_tol", s.rel_tol);
        f.opt("thinning", s.thinning);
        f.opt("max_steps", s.max_steps);
        if (f.has("param")) {
            const auto p = f.string("param");
            if (p == "arclength") s.param = Parameterization::arclength;
            else if (p == "time") s.param = Parameterization::time;
            else f.fail("param", "expected 'arclength' or 'time'");
        }
        f.finish();
    }
    if (r.has("weps")) {
        auto w = object(j.at("weps"), path + ".weps");
        w.opt("epsilon", s.weps.epsilon);
        w.opt("delta", s.weps.delta);
        w.opt("omega", s.weps.omega);
        w.opt("alpha", s.weps.alpha);
        w.finish();
    }
    if (r.has("monitor")) {
        auto m = object(j.at("monitor"), path + ".monitor");
        m.opt("r_window", s.monitor_window);
        m.finish();
    }
    if (r.has("expect")) {
        auto e = object(j.at("expect"), path + ".expect");
        auto& x = s.expect;
        e.opt("degree", x.degree);
        e.opt("rho", x.rho);
        e.opt("rho_tol", x.rho_tol);
        e.opt("loj_c", x.loj_c);
        e.opt("l", x.l);
        e.opt("l_tol", x.l_tol);
        if (e.has("L")) x.L = e.numbers("L");
        e.opt("a0", x.a0);
        e.opt("a0_tol", x.a0_tol);
        e.opt("bound_equal", x.bound_equal);
        e.opt("quadratic", x.quadratic);
        e.opt("weps_below", x.weps_below);
        e.finish();
    }
    if (r.has("generators")) {
        const json& g = j.at("generators");
        if (!g.is_array()) r.fail("generators", "expected an array of index pairs");
        s.planes.clear();
        for (const auto& p : g) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer())
                r.fail("generators", "expected an array of index pairs");
            s.planes.push_back({p[0].get<int>(), p[1].get<int>()});
        }
    }
    if (r.has("x_inf")) s.x_inf = r.numbers("x_inf");
    if (r.has("wobble")) {
        auto w = object(j.at("wobble"), path + ".wobble");
        w.opt("amplitude", s.wobble_amplitude);
        w.opt("frequency", s.wobble_frequency);
        w.finish();
    }
    if (r.has("lattice")) {
        auto l = object(j.at("lattice"), path + ".lattice");
        if (l.has("dims")) {
            s.dims.clear();
            for (double d : l.numbers("dims")) {
                if (d != std::floor(d) || d < 2) l.fail("dims", "extents must be integers >= 2");
                s.dims.push_back(static_cast<int>(d));
            }
        }
        l.opt("amplitude", s.amplitude);
        l.opt("dt", s.dt);
        l.opt("steps", s.steps);
        l.opt("record_every", s.record_every);
        l.opt("min_distance", s.min_distance);
        l.finish();
    }
    if (r.has("analyses")) {
        const json& a = j.at("analyses");
        if (!a.is_array()) r.fail("analyses", "expected an array");
        s.analyses.clear();
        const auto& known = analyzer_names().at(s.kind);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::string ap = path + ".analyses[" + std::to_string(i) + "]";
            AnalysisRequest req;
            if (a[i].is_string()) {
                req.name = a[i].get<std::string>();
            } else {
                auto q = object(a[i], ap);
                if (!q.has("name")) throw ConfigError(ap + ".name: missing");
                req.name = q.string("name");
                q.opt("required", req.required);
                q.finish();
            }
            if (std::find(known.begin(), known.end(), req.name) == known.end())
                throw ConfigError(ap + ": unknown analysis '" + req.name + "' for kind " + to_string(s.kind));
            for (const auto& prev : s.analyses)
                if (prev.name == req.name) throw ConfigError(ap + ": analysis '" + req.name + "' listed twice");
            s.analyses.push_back(req);
        }
    }
    r.finish();
}

inline void validate(const Scenario& s, const std::string& path) {
    if (s.name.empty()) throw ConfigError(path + ".name: missing");
    if (s.kind != Kind::lattice) {
        if (s.field.empty()) throw ConfigError(path + ".field: missing");
        try {
            const auto f = AnalyticField::parse(s.field);
            if (static_cast<int>(s.start.size()) != f.dim())
                throw ConfigError(path + ".start: expected " + std::to_string(f.dim()) + " coordinates");
        } catch (const ParseError& e) {
            throw ConfigError(path + ".field: " + e.what());
        }
    }
    if (s.kind == Kind::gauge_toy) {
        if (s.planes.empty()) throw ConfigError(path + ".generators: missing");
        if (s.x_inf.size() != s.start.size()) throw ConfigError(path + ".x_inf: dimension differs from start");
        for (const auto& p : s.planes)
            if (p[0] < 0 || p[1] < 0 || p[0] == p[1] || p[0] >= static_cast<int>(s.start.size()) ||
                p[1] >= static_cast<int>(s.start.size()))
                throw ConfigError(path + ".generators: index out of range");
    }
    if (s.kind == Kind::lattice) {
        if (!(s.dt > 0.0)) throw ConfigError(path + ".lattice.dt: must be positive");
        if (s.record_every < 1 || s.steps < 1) throw ConfigError(path + ".lattice: steps and record_every must be >= 1");
    }
    try {
        s.weps.validate();
    } catch (const PreconditionError& e) {
        throw ConfigError(path + ".weps: " + e.what());
    }
}

}  // namespace detail

struct Config {
    std::optional<std::uint64_t> seed;
    std::vector<Scenario> scenarios;
};

/// Parses a run configuration: {"seed"?: u64, "scenarios": [...]}. A scenario
/// with "catalog": "<name>" starts from that catalog entry.
inline Config parse_config(const json& j) {
    auto r = detail::object(j, "config");
    Config cfg;
    if (r.has("seed")) {
        if (!j.at("seed").is_number_unsigned()) r.fail("seed", "expected a non-negative integer");
        cfg.seed = j.at("seed").get<std::uint64_t>();
    }
    if (!r.has("scenarios")) throw ConfigError("config.scenarios: missing");
    const json& arr = j.at("scenarios");
    if (!arr.is_array()) throw ConfigError("config.scenarios: expected an array");
    r.finish();
    const auto cat = catalog();
    std::set<std::string> names;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = "scenarios[" + std::to_string(i) + "]";
        Scenario s;
        const json& e = arr[i];
        if (e.is_object() && e.contains("catalog")) {
            if (!e.at("catalog").is_string()) throw ConfigError(path + ".catalog: expected a string");
            const auto want = e.at("catalog").get<std::string>();
            auto it = std::find_if(cat.begin(), cat.end(), [&](const Scenario& c) { return c.name == want; });
            if (it == cat.end()) throw ConfigError(path + ".catalog: unknown catalog entry '" + want + "'");
            s = *it;
        } else if (e.is_object() && e.contains("kind") && e.at("kind").is_string()) {
            s.kind = detail::parse_kind(e.at("kind").get<std::string>(), path + ".kind");
            s.analyses = default_analyses(s.kind);
        } else if (e.is_object()) {
            s.analyses = default_analyses(Kind::flow);
        }
        detail::apply(s, e, path);
        detail::validate(s, path);
        if (!names.insert(s.name).second) throw ConfigError(path + ".name: duplicate scenario name '" + s.name + "'");
        cfg.scenarios.push_back(std::move(s));
    }
    return cfg;
}

inline Config load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// Serializes a scenario in the config schema.
inline json to_json(const Scenario& s) {
    json j;
    j["name"] = s.name;
    j["kind"] = to_string(s.kind);
    if (s.kind != Kind::lattice) {
        j["field"] = s.field;
        j["start"] = s.start;
        j["flow"] = {{"r_floor", s.r_floor},
                     {"grad_floor", s.grad_floor},
                     {"rel_tol", s.rel_tol},
                     {"thinning", s.thinning},
                     {"max_steps", s.max_steps},
                     {"param", s.param == Parameterization::arclength ? "arclength" : "time"}};
        j["weps"] = {{"epsilon", s.weps.epsilon}, {"delta", s.weps.delta}, {"omega", s.weps.omega}, {"alpha", s.weps.alpha}};
        j["monitor"] = {{"r_window", s.monitor_window}};
        json e = json::object();
        const auto& x = s.expect;
        if (x.degree) e["degree"] = *x.degree;
        if (x.rho) e["rho"] = *x.rho, e["rho_tol"] = x.rho_tol;
        if (x.loj_c) e["loj_c"] = *x.loj_c;
        if (x.l) e["l"] = *x.l, e["l_tol"] = x.l_tol;
        if (!x.L.empty()) e["L"] = x.L;
        if (x.a0) e["a0"] = *x.a0, e["a0_tol"] = x.a0_tol;
        if (x.bound_equal) e["bound_equal"] = true;
        if (x.quadratic) e["quadratic"] = true;
        if (x.weps_below) e["weps_below"] = *x.weps_below;
        j["expect"] = e;
    }
    if (s.kind == Kind::gauge_toy) {
        json g = json::array();
        for (const auto& p : s.planes) g.push_back({p[0], p[1]});
        j["generators"] = g;
        j["x_inf"] = s.x_inf;
        j["wobble"] = {{"amplitude", s.wobble_amplitude}, {"frequency", s.wobble_frequency}};
    }
    if (s.kind == Kind::lattice) {
        j["lattice"] = {{"dims", s.dims},
                        {"amplitude", s.amplitude},
                        {"dt", s.dt},
                        {"steps", s.steps},
                        {"record_every", s.record_every},
                        {"min_distance", s.min_distance}};
    }
    json a = json::array();
    for (const auto& r : s.analyses) a.push_back({{"name", r.name}, {"required", r.required}});
    j["analyses"] = a;
    if (s.seed) j["seed"] = *s.seed;
    return j;
}

// --------------------------------------------------------------- results

struct AnalysisResult {
    std::string name;
    bool required = true;
    Status status = Status::skipped;
    std::string message;
    json metrics = json::object();
};

struct ScenarioResult {
    std::string name;
    Kind kind = Kind::flow;
    std::uint64_t seed = 0;
    std::string error;  // runtime failure, empty on success
    json summary = json::object();
    std::vector<AnalysisResult> analyses;
    double wall_clock = 0.0;

    bool required_failure() const {
        return std::any_of(analyses.begin(), analyses.end(),
                           [](const AnalysisResult& a) { return a.required && a.status == Status::fail; });
    }
};

struct RunReport {
    std::uint64_t seed = 0;
    std::vector<ScenarioResult> scenarios;
    double wall_clock = 0.0;

    std::size_t count(Status s) const {
        std::size_t n = 0;
        for (const auto& sc : scenarios)
            for (const auto& a : sc.analyses) n += a.status == s;
        return n;
    }
    std::size_t required_failures() const {
        std::size_t n = 0;
        for (const auto& sc : scenarios)
            for (const auto& a : sc.analyses) n += a.required && a.status == Status::fail;
        return n;
    }
    /// Scenarios with every analysis passing or skipped.
    std::size_t passing_scenarios() const {
        std::size_t n = 0;
        for (const auto& sc : scenarios)
            n += sc.error.empty() && std::none_of(sc.analyses.begin(), sc.analyses.end(),
                                                  [](const AnalysisResult& a) { return a.status == Status::fail; });
        return n;
    }
};

/// JSON report; wall-clock fields only when `timing` is set.
inline json to_json(const RunReport& rep, bool timing = true) {
    json j;
    j["seed"] = rep.seed;
    json arr = json::array();
    for (const auto& s : rep.scenarios) {
        json e;
        e["name"] = s.name;
        e["kind"] = to_string(s.kind);
        e["seed"] = s.seed;
        if (!s.error.empty()) e["error"] = s.error;
        e["summary"] = s.summary;
        json an = json::array();
        for (const auto& a : s.analyses)
            an.push_back({{"name", a.name},
                          {"required", a.required},
                          {"status", to_string(a.status)},
                          {"message", a.message},
                          {"metrics", a.metrics}});
        e["analyses"] = an;
        if (timing) e["wall_clock_s"] = s.wall_clock;
        arr.push_back(e);
    }
    j["scenarios"] = arr;
    j["totals"] = {{"scenarios", rep.scenarios.size()},
                   {"passing_scenarios", rep.passing_scenarios()},
                   {"pass", rep.count(Status::pass)},
                   {"fail", rep.count(Status::fail)},
                   {"skipped", rep.count(Status::skipped)},
                   {"required_failures", rep.required_failures()}};
    if (timing) j["wall_clock_s"] = rep.wall_clock;
    return j;
}

// ------------------------------------------------------------- analyzers

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

inline SecantTrace asymptotics_secant(const Trajectory& tr) { return thomlab::secant_trace(tr); }

inline json tail_json(const SecantTrace& st) {
    json t = json::array();
    for (const auto& d : st.tail_lengths)
        t.push_back({{"r_lo", d.r_lo}, {"r_hi", d.r_hi}, {"length", d.length}, {"increments", d.increments}});
    return t;
}

inline json secant_json(const SecantTrace& st) {
    return {{"total_length", st.total_length},
            {"total_chord", st.total_chord},
            {"cauchy_gap", st.cauchy_gap},
            {"tail_lengths", tail_json(st)}};
}

// Final-three-decade decay and final-decade Cauchy gap.
inline void secant_verdict(const SecantTrace& st, AnalysisResult& a, double max_ratio = 0.9) {
    const auto td = tail_decay(st, 3, max_ratio, 1e-12);
    a.metrics["secant"] = secant_json(st);
    a.metrics["tail_ratios"] = td.ratios;
    if (td.decades_examined < 3) {
        a.status = Status::fail;
        a.message = "fewer than three complete decades";
        return;
    }
    const bool gap_ok = st.cauchy_gap < 1e-3;
    a.status = td.pass && gap_ok ? Status::pass : Status::fail;
    if (!td.pass) a.message = "tail lengths do not decay with ratio < " + std::to_string(max_ratio);
    else if (!gap_ok) a.message = "final-decade Cauchy gap >= 1e-3";
}

// Relative rounding allowed on the remaining-length bound where it is attained.
inline constexpr double length_slack_rounding = 1e-13;

inline std::vector<double> candidates(const Scenario& s, double l_hat) {
    if (!s.expect.L.empty()) return s.expect.L;
    if (s.expect.l) return {*s.expect.l};
    return {fit::nearest_rational(l_hat, 12).value()};
}

struct FlowContext {
    const Scenario& sc;
    Trajectory traj;
    std::optional<LojExponent> loj;
    std::optional<CharExponent> chr;
    std::string loj_error, chr_error;
};

inline void run_flow_analysis(FlowContext& ctx, AnalysisResult& a) {
    const Scenario& sc = ctx.sc;
    const Trajectory& tr = ctx.traj;
    const auto& x = sc.expect;
    if (a.name == "secant") {
        secant_verdict(asymptotics_secant(tr), a);
    } else if (a.name == "euler") {
        if (!x.degree) {
            a.message = "not homogeneous";
            return;
        }
        double worst = 0.0;
        for (const Sample& smp : tr.samples) worst = std::max(worst, std::abs(thomlab::detail::euler_ratio(smp) - *x.degree));
        a.metrics["max_deviation"] = worst;
        a.status = worst < 1e-10 ? Status::pass : Status::fail;
    } else if (a.name == "lojasiewicz") {
        if (!ctx.loj) throw InsufficientDataError(ctx.loj_error);
        a.metrics = {{"rho_hat", ctx.loj->rho_hat}, {"raw_rho", ctx.loj->raw_rho}, {"c_hat", ctx.loj->c_hat}};
        if (x.rho) {
            a.metrics["rho_expected"] = *x.rho;
            a.status = std::abs(ctx.loj->raw_rho - *x.rho) <= x.rho_tol ? Status::pass : Status::fail;
        } else {
            a.status = ctx.loj->raw_rho >= 0.5 - 0.02 && ctx.loj->raw_rho < 1.0 ? Status::pass : Status::fail;
        }
    } else if (a.name == "exponent_bound") {
        if (!ctx.loj) throw InsufficientDataError(ctx.loj_error);
        if (!ctx.chr) throw InsufficientDataError(ctx.chr_error);
        const double bound = 1.0 / (1.0 - ctx.loj->rho_hat);
        const double l = ctx.chr->l_hat;
        a.metrics = {{"l_hat", l}, {"rho_hat", ctx.loj->rho_hat}, {"bound", bound}, {"slack", bound - l}};
        bool ok = l <= bound + 0.05;
        if (x.bound_equal) ok = ok && std::abs(l - bound) <= 0.02 * bound;
        a.status = ok ? Status::pass : Status::fail;
    } else if (a.name == "char_exponent") {
        if (!ctx.chr) throw InsufficientDataError(ctx.chr_error);
        const double l = ctx.chr->l_hat;
        a.metrics = {{"l_hat", l},
                     {"nearest", std::to_string(ctx.chr->nearest.num) + "/" + std::to_string(ctx.chr->nearest.den)},
                     {"off_rational", ctx.chr->off_rational}};
        bool ok = !ctx.chr->off_rational;
        if (x.l) ok = ok && std::abs(l - *x.l) <= x.l_tol;
        if (x.weps_below && x.l) {
            const auto L = candidates(sc, l);
            const auto target = std::find(L.begin(), L.end(), *x.l) - L.begin();
            const auto mem = weps_membership(tr, sc.weps, L);
            const double r_end = tr.back().radial.r;
            json decades = json::array();
            bool all = true;
            for (int k = static_cast<int>(std::round(-std::log10(*x.weps_below)));; ++k) {
                const double hi = std::pow(10.0, -k), lo = hi / 10;
                if (lo < r_end) break;
                std::size_t in = 0, total = 0;
                for (std::size_t i = 0; i < tr.size(); ++i) {
                    const double r = tr.samples[i].radial.r;
                    if (r < lo || r >= hi) continue;
                    ++total;
                    const bool member = (mem[i].label == WepsLabel::weps_l || mem[i].label == WepsLabel::w_omega_l) &&
                                        mem[i].l_index == target;
                    in += member;
                }
                decades.push_back({{"r_hi", hi}, {"samples", total}, {"members", in}});
                all = all && total > 0 && in == total;
            }
            a.metrics["weps_decades"] = decades;
            ok = ok && all && !decades.empty();
        }
        a.status = ok ? Status::pass : Status::fail;
    } else if (a.name == "e_monitor") {
        double l = 0.0;
        if (x.l) l = *x.l;
        else if (ctx.chr) l = ctx.chr->nearest.value();
        else throw InsufficientDataError(ctx.chr_error);
        const auto m = monitor_E(tr, l, sc.weps, sc.monitor_window);
        a.metrics = {{"l", l},
                     {"r_window", sc.monitor_window},
                     {"a0_hat", m.a0_hat},
                     {"a0_rel_fluctuation", m.a0_rel_fluctuation},
                     {"monotone_violations", m.monotone_violations},
                     {"sign_mismatches", m.sign_mismatches},
                     {"w_violations", m.w_violations},
                     {"log_slope", m.log_slope},
                     {"trend", to_string(m.trend)}};
        bool ok = m.monotone_violations == 0 && m.trend == ETrend::converges && m.a0_hat > 0.0 &&
                  m.a0_rel_fluctuation < 1e-3;
        if (x.a0) ok = ok && std::abs(m.a0_hat - *x.a0) <= x.a0_tol;
        a.status = ok ? Status::pass : Status::fail;
    } else if (a.name == "sigma_ratio") {
        const auto sr = sigma_ratio(tr);
        a.metrics = {{"final_decade_mean", sr.final_decade_mean}, {"final_decade_max_dev", sr.final_decade_max_dev},
                     {"ratio_at_floor", sr.ratio.back()}};
        if (x.quadratic) {
            const double dev = sr.max_deviation_below(1e-3);
            a.metrics["max_dev_below_1e-3"] = dev;
            a.status = dev < 0.01 ? Status::pass : Status::fail;
        } else {
            a.status = sr.final_decade_max_dev < 0.05 ? Status::pass : Status::fail;
        }
    } else if (a.name == "reduction") {
        const auto split = spectral_split(tr.field);
        if (split.kernel_dim == 0) {
            a.message = "nondegenerate Hessian, nothing to reduce";
            return;
        }
        if (split.kernel_dim == split.dim()) {
            a.message = "Hessian vanishes, the reduced model is the field itself";
            return;
        }
        const auto model = build_reduced(tr.field, split);
        const int n = tr.field.dim();
        std::vector<Vec> dirs{detail::to_vec(sc.start).normalized()};
        for (int i = 0; i < n; ++i) dirs.push_back(Vec::Unit(n, i));
        double p1 = std::numeric_limits<double>::infinity(), p2 = p1, p3 = p1;
        json per = json::array();
        for (const Vec& d : dirs) {
            std::vector<Vec> pts;
            for (int i = 0; i < 14; ++i) pts.push_back(0.2 * std::pow(0.6, i) * d);
            CompatReport rep;
            try {
                rep = compat_check(model, pts);
            } catch (const InsufficientDataError&) {
                continue;  // direction inside S
            }
            auto ord = [](const OrderFit& f) { return f.exact ? std::numeric_limits<double>::infinity() : f.order; };
            p1 = std::min(p1, ord(rep.value_order));
            p2 = std::min(p2, ord(rep.radial_order));
            p3 = std::min(p3, ord(rep.norm_order));
            per.push_back({{"value_order", ord(rep.value_order)},
                           {"radial_order", ord(rep.radial_order)},
                           {"norm_order", ord(rep.norm_order)}});
        }
        auto num = [](double v) { return std::isfinite(v) ? json(v) : json("exact"); };
        a.metrics = {{"kernel_dim", split.kernel_dim},
                     {"value_order", num(p1)},
                     {"radial_order", num(p2)},
                     {"norm_order", num(p3)},
                     {"directions", per}};
        if (per.empty()) throw InsufficientDataError("no shrink direction leaves S");
        a.status = p1 >= 2.9 && p2 >= 1.9 && p3 >= 2.9 ? Status::pass : Status::fail;
    } else if (a.name == "bochnak") {
        const auto b = bochnak_check(tr, 2.0);
        a.metrics = {{"c_bl", b.c_bl}, {"c_bl_envelope", b.c_bl_envelope}, {"samples", b.samples}};
        a.status = (x.degree ? b.c_bl >= *x.degree - 0.05 : b.c_bl > 0.5) ? Status::pass : Status::fail;
    } else if (a.name == "length_bound") {
        // closed-form constants when known, else the fitted exponent with the
        // smallest |E'| / |E|^rho seen along the path
        double rho = 0.0, c = 0.0;
        if (x.rho && x.loj_c) {
            rho = *x.rho, c = *x.loj_c;
        } else {
            if (x.rho) rho = *x.rho;
            else if (ctx.loj) rho = ctx.loj->rho_hat;
            else throw InsufficientDataError(ctx.loj_error);
            c = std::numeric_limits<double>::infinity();
            for (const Sample& smp : tr.samples)
                if (smp.jet.value != 0.0) c = std::min(c, smp.jet.gradient.norm() / std::pow(std::abs(smp.jet.value), rho));
        }
        const auto lm = remaining_length_check(tr, rho, c);
        a.metrics = {{"rho", rho},
                     {"c", c},
                     {"worst_slack", lm.worst_slack},
                     {"max_slack", *std::max_element(lm.slack.begin(), lm.slack.end())},
                     {"worst_index", lm.worst_index}};
        a.status = lm.worst_slack >= -length_slack_rounding ? Status::pass : Status::fail;
    }
}

}  // namespace detail

// ------------------------------------------------------------- scenarios

namespace detail {

inline FlowSpec flow_spec(const Scenario& sc) {
    FlowSpec f;
    f.field = AnalyticField::parse(sc.field);
    f.start = to_vec(sc.start);
    f.r_floor = sc.r_floor;
    f.grad_floor = sc.grad_floor;
    f.rel_tol = sc.rel_tol;
    f.thinning = sc.thinning;
    f.max_steps = sc.max_steps;
    f.param = sc.param;
    return f;
}

// Runs each requested analysis, turning library errors into a failed status.
template <class F>
void for_each_analysis(const Scenario& sc, ScenarioResult& out, F&& body) {
    for (const auto& req : sc.analyses) {
        AnalysisResult a;
        a.name = req.name;
        a.required = req.required;
        try {
            body(a);
        } catch (const Error& e) {
            a.status = Status::fail;
            a.message = e.what();
        }
        out.analyses.push_back(std::move(a));
    }
}

inline void run_flow(const Scenario& sc, ScenarioResult& out, const std::filesystem::path& dir) {
    FlowContext ctx{sc, integrate(flow_spec(sc)), {}, {}, {}, {}};
    const Trajectory& tr = ctx.traj;
    if (!dir.empty()) {
        std::ofstream os(dir / (sc.name + ".csv"));
        write_csv(os, tr);
    }
    try {
        ctx.loj = estimate_loj_exponent(tr, 2.0);
    } catch (const Error& e) {
        ctx.loj_error = e.what();
    }
    try {
        ctx.chr = estimate_char_exponent(tr, sc.weps);
    } catch (const Error& e) {
        ctx.chr_error = e.what();
    }
    json ex = json::object();
    if (ctx.loj) ex["rho_hat"] = ctx.loj->rho_hat, ex["c_hat"] = ctx.loj->c_hat;
    if (ctx.chr) {
        ex["l_hat"] = ctx.chr->l_hat;
        ex["L_candidates"] = candidates(sc, ctx.chr->l_hat);
    }
    if (ctx.loj && ctx.chr) ex["bound_slack"] = 1.0 / (1.0 - ctx.loj->rho_hat) - ctx.chr->l_hat;
    try {
        ex["c_bl"] = bochnak_check(tr, 2.0).c_bl;
    } catch (const Error&) {
    }
    out.summary["exponents"] = ex;
    out.summary["trajectory"] = {{"samples", tr.size()},
                                 {"stop_reason", to_string(tr.stop_reason)},
                                 {"accepted_steps", tr.accepted_steps},
                                 {"rejected_steps", tr.rejected_steps},
                                 {"r_end", tr.back().radial.r},
                                 {"max_dissipation_defect", tr.max_dissipation_defect}};
    try {
        out.summary["secant"] = secant_json(asymptotics_secant(tr));
    } catch (const Error&) {
    }
    if (sc.expect.l || ctx.chr) {
        try {
            const double l = sc.expect.l ? *sc.expect.l : ctx.chr->nearest.value();
            const auto m = monitor_E(tr, l, sc.weps, sc.monitor_window);
            out.summary["e_monitor"] = {{"l", l},
                                        {"a0_hat", m.a0_hat},
                                        {"trend", to_string(m.trend)},
                                        {"monotone_violations", m.monotone_violations}};
        } catch (const Error&) {
        }
    }
    for_each_analysis(sc, out, [&](AnalysisResult& a) { run_flow_analysis(ctx, a); });
}

inline GroupAction group_action(const Scenario& sc) {
    GroupAction act;
    act.field = AnalyticField::parse(sc.field);
    for (const auto& p : sc.planes) act.generators.push_back(plane_generator(act.field.dim(), p[0], p[1]));
    act.validate();
    return act;
}

inline void run_gauge_toy(const Scenario& sc, ScenarioResult& out, const std::filesystem::path& dir) {
    const GroupAction act = group_action(sc);
    const Vec x_inf = to_vec(sc.x_inf);
    FlowSpec setup = flow_spec(sc);
    setup.center = x_inf;
    const Trajectory tr = integrate(setup);
    if (!dir.empty()) {
        std::ofstream os(dir / (sc.name + ".csv"));
        write_csv(os, tr);
    }
    const GaugedSecant fixed = gauge_fixed_secant(act, tr, x_inf);
    out.summary["trajectory"] = {{"samples", tr.size()},
                                 {"stop_reason", to_string(tr.stop_reason)},
                                 {"r_end", tr.back().radial.r}};
    out.summary["secant"] = secant_json(fixed.trace);
    out.summary["max_gauge_increment"] = fixed.max_gauge_increment;

    for_each_analysis(sc, out, [&](AnalysisResult& a) {
        if (a.name == "invariance") {
            const double radius = 1.5 * detail::to_vec(sc.start).norm();
            const auto rep = invariance_check(act, 1000, radius, out.seed);
            a.metrics = {{"max_deviation", rep.max_deviation}, {"trials", rep.trials}};
            a.status = rep.max_deviation < 1e-12 ? Status::pass : Status::fail;
        } else if (a.name == "gauge_fix") {
            const Mat R = act.rho(x_inf);
            double ortho = 0.0;
            for (const auto& f : fixed.fixes)
                ortho = std::max(ortho, (R.transpose() * (f.fixed - x_inf)).cwiseAbs().maxCoeff());
            a.metrics = {{"max_residual", fixed.max_residual}, {"max_orthogonality", ortho}};
            a.status = fixed.max_residual < 1e-10 && ortho < 1e-10 ? Status::pass : Status::fail;
        } else if (a.name == "wobble") {
            std::vector<Vec> pts;
            for (const Sample& x : tr.samples) {
                const Mat h = (sc.wobble_amplitude * std::sin(sc.wobble_frequency * x.s) * act.generators[0]).exp();
                pts.push_back(h * x.u);
            }
            const auto wob = gauge_fixed_secant(act, trajectory_from_points(act.field, pts, x_inf), x_inf);
            double worst = 0.0;
            for (std::size_t i = 0; i < wob.trace.points.size(); ++i)
                worst = std::max(worst, (wob.trace.points[i] - fixed.trace.points[i]).norm());
            const double dl = std::abs(wob.trace.total_length - fixed.trace.total_length);
            a.metrics = {{"max_point_deviation", worst}, {"length_deviation", dl}, {"max_residual", wob.max_residual}};
            a.status = worst < 1e-8 && dl < 1e-8 && wob.max_residual < 1e-10 ? Status::pass : Status::fail;
        } else if (a.name == "quotient") {
            if (sc.planes.size() != 1) {
                a.message = "quotient coordinates implemented for a single rotation plane";
                return;
            }
            const int i = sc.planes[0][0], j = sc.planes[0][1];
            const double rho_inf = std::hypot(x_inf[i], x_inf[j]);
            if (!(rho_inf > 0.0)) {
                a.message = "limit on the rotation axis";
                return;
            }
            // quotient displacement: radius in the plane, then the fixed coordinates
            std::vector<Vec> q;
            for (const Sample& x : tr.samples) {
                Vec d(x.u.size() - 1);
                d[0] = std::hypot(x.u[i], x.u[j]) - rho_inf;
                for (int k = 0, m = 1; k < x.u.size(); ++k)
                    if (k != i && k != j) d[m++] = x.u[k] - x_inf[k];
                q.push_back(d);
            }
            const SecantTrace qt = secant_trace(q);
            double worst = 0.0;
            for (std::size_t n = 0; n < qt.points.size(); ++n) {
                Vec lifted = Vec::Zero(x_inf.size());
                lifted[i] = qt.points[n][0] * x_inf[i] / rho_inf;
                lifted[j] = qt.points[n][0] * x_inf[j] / rho_inf;
                for (int k = 0, m = 1; k < lifted.size(); ++k)
                    if (k != i && k != j) lifted[k] = qt.points[n][m++];
                worst = std::max(worst, (lifted - fixed.trace.points[n]).norm());
            }
            const double dl = std::abs(qt.total_length - fixed.trace.total_length);
            a.metrics = {{"max_point_deviation", worst}, {"length_deviation", dl}, {"quotient_length", qt.total_length}};
            a.status = worst < 1e-6 && dl < 1e-6 ? Status::pass : Status::fail;
        } else if (a.name == "secant") {
            secant_verdict(fixed.trace, a);
        }
    });
}

inline void run_lattice(const Scenario& sc, ScenarioResult& out, const std::filesystem::path& dir) {
    const LatticeGauge start = random_perturbation(sc.dims, sc.amplitude, out.seed);
    LatticeFlowOptions opt;
    opt.dt = sc.dt;
    opt.steps = sc.steps;
    opt.record_every = sc.record_every;
    const LatticeTrajectory tr = lattice_flow(start, opt);
    if (!dir.empty()) {
        std::ofstream os(dir / (sc.name + ".csv"));
        os << "t,action\n" << std::setprecision(17);
        for (std::size_t i = 0; i < tr.configs.size(); ++i) os << tr.times[i] << ',' << wilson_action(tr.configs[i]) << '\n';
        lattice_io::save((dir / (sc.name + "_final.tlgf")).string(), tr.configs.back());
    }
    out.summary["lattice"] = {{"dims", sc.dims},
                              {"accepted", tr.accepted},
                              {"rejected", tr.rejected},
                              {"t_end", tr.times.back()},
                              {"action_start", tr.actions.front()},
                              {"action_end", tr.actions.back()}};
    for_each_analysis(sc, out, [&](AnalysisResult& a) {
        if (a.name == "lattice_flow") {
            bool strict = true;
            for (std::size_t i = 1; i < tr.actions.size(); ++i) strict = strict && tr.actions[i] < tr.actions[i - 1];
            a.metrics = {{"increases", tr.increases},
                         {"strictly_decreasing", strict},
                         {"dissipation_defect_one_sided", tr.max_dissipation_defect},
                         {"dissipation_defect_trapezoid", tr.max_trapezoid_defect},
                         {"dissipation_steps_checked", tr.dissipation_checked},
                         {"max_unit_defect", tr.max_unit_defect},
                         {"dt", sc.dt}};
            a.status = tr.increases == 0 && strict && tr.dissipation_checked > 0 && tr.max_trapezoid_defect < 1e-3 &&
                               tr.max_unit_defect < 1e-12
                           ? Status::pass
                           : Status::fail;
        } else if (a.name == "lattice_invariance") {
            std::mt19937_64 rng(splitmix64(out.seed));
            const double s0 = wilson_action(start);
            double worst = 0.0;
            for (int k = 0; k < 1000; ++k)
                worst = std::max(worst, std::abs(wilson_action(gauge_transform(start, random_gauge(start.volume(), rng))) - s0));
            a.metrics = {{"max_deviation", worst}, {"trials", 1000}};
            a.status = worst < 1e-12 ? Status::pass : Status::fail;
        } else if (a.name == "h1_secant") {
            const auto sec = discrete_h1_secant(tr.configs, tr.configs.back(), true, sc.min_distance);
            const auto td = tail_decay(sec.trace, 3, 1.0, 1e-12);
            a.metrics = {{"secant", secant_json(sec.trace)},
                         {"tail_ratios", td.ratios},
                         {"max_fix_residual", sec.max_fix_residual},
                         {"max_gauge_increment", sec.max_gauge_increment},
                         {"configurations", sec.h1_distance.size()}};
            a.status = td.decades_examined == 3 && td.pass && sec.max_fix_residual < 1e-9 ? Status::pass : Status::fail;
            if (td.decades_examined < 3) a.message = "fewer than three complete decades";
        }
    });
}

}  // namespace detail

inline std::uint64_t scenario_seed(const Scenario& sc, std::uint64_t run_seed) {
    return sc.seed ? *sc.seed : detail::splitmix64(run_seed ^ detail::fnv1a(sc.name));
}

/// Runs one scenario. Runtime errors are recorded and mark every analysis failed.
inline ScenarioResult run_scenario(const Scenario& sc, std::uint64_t run_seed, const std::filesystem::path& dir = {}) {
    ScenarioResult out;
    out.name = sc.name;
    out.kind = sc.kind;
    out.seed = scenario_seed(sc, run_seed);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        switch (sc.kind) {
            case Kind::flow: detail::run_flow(sc, out, dir); break;
            case Kind::gauge_toy: detail::run_gauge_toy(sc, out, dir); break;
            case Kind::lattice: detail::run_lattice(sc, out, dir); break;
        }
    } catch (const std::exception& e) {
        out.error = e.what();
        out.analyses.clear();
        for (const auto& req : sc.analyses)
            out.analyses.push_back({req.name, req.required, Status::fail, "scenario error: " + out.error, json::object()});
    }
    out.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline unsigned default_workers() {
    if (const char* env = std::getenv("THOMLAB_WORKERS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw ConfigError("THOMLAB_WORKERS must be a positive integer");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs every scenario on `workers` threads. Writes CSV files and report.json
/// into `out_dir` when it is non-empty.
inline RunReport run(const Config& cfg, const std::filesystem::path& out_dir, unsigned workers,
                     std::optional<std::uint64_t> seed_override = {}) {
    RunReport rep;
    rep.seed = seed_override ? *seed_override : cfg.seed.value_or(0);
    const auto t0 = std::chrono::steady_clock::now();
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    rep.scenarios.resize(cfg.scenarios.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cfg.scenarios.size();)
            rep.scenarios[i] = run_scenario(cfg.scenarios[i], rep.seed, out_dir);
    };
    const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(cfg.scenarios.size())));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    rep.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out_dir.empty()) {
        std::ofstream os(out_dir / "report.json");
        os << to_json(rep).dump(2) << '\n';
    }
    return rep;
}

}  // namespace thomlab::harness
