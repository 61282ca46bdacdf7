#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "thomlab/harness.hpp"

namespace h = thomlab::harness;

namespace {

constexpr int exit_pass = 0;
constexpr int exit_failure = 1;
constexpr int exit_config = 2;

void print_report(const h::json& rep, std::ostream& os) {
    for (const auto& s : rep.at("scenarios")) {
        os << s.at("name").get<std::string>() << " [" << s.at("kind").get<std::string>() << "]";
        if (s.contains("wall_clock_s")) os << "  " << std::fixed << std::setprecision(2) << s.at("wall_clock_s").get<double>() << " s";
        os << '\n';
        os.unsetf(std::ios::floatfield);
        if (s.contains("error")) os << "  error: " << s.at("error").get<std::string>() << '\n';
        for (const auto& a : s.at("analyses")) {
            os << "  " << std::left << std::setw(8) << a.at("status").get<std::string>() << std::setw(18)
               << a.at("name").get<std::string>() << (a.at("required").get<bool>() ? "" : "(advisory) ");
            const auto msg = a.at("message").get<std::string>();
            if (!msg.empty()) os << msg;
            os << '\n';
        }
    }
    const auto& t = rep.at("totals");
    os << "scenarios passing: " << t.at("passing_scenarios") << "/" << t.at("scenarios") << "  analyses: " << t.at("pass")
       << " pass, " << t.at("fail") << " fail, " << t.at("skipped") << " skipped\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-flow secant diagnostics"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    unsigned workers = 0;
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "run the scenarios of a JSON config");
    run->add_option("config", config_path, "config file")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    auto* workers_opt = run->add_option("--workers", workers, "worker threads (default: THOMLAB_WORKERS or cores)")
                            ->check(CLI::PositiveNumber);
    auto* seed_opt = run->add_option("--seed", seed, "run seed, overrides the config");

    bool list = false, as_json = false;
    auto* cat = app.add_subcommand("catalog", "show the built-in scenarios");
    cat->add_flag("--list", list, "one line per scenario");
    cat->add_flag("--json", as_json, "the catalog as a run config");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "print the report of a previous run");
    report->add_option("dir", report_dir, "run output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_pass : exit_config;
    }

    try {
        if (*run) {
            const auto cfg = h::load_config(config_path);
            const unsigned n = *workers_opt ? workers : h::default_workers();
            std::optional<std::uint64_t> s;
            if (*seed_opt) s = seed;
            const auto rep = h::run(cfg, out_dir, n, s);
            print_report(h::to_json(rep), std::cout);
            return rep.required_failures() == 0 ? exit_pass : exit_failure;
        }
        if (*cat) {
            const auto c = h::catalog();
            if (as_json) {
                h::json j;
                j["scenarios"] = h::json::array();
                for (const auto& s : c) j["scenarios"].push_back(h::to_json(s));
                std::cout << j.dump(2) << '\n';
                return exit_pass;
            }
            for (const auto& s : c) {
                std::cout << std::left << std::setw(14) << s.name << std::setw(11) << h::to_string(s.kind);
                if (s.kind == h::Kind::lattice) {
                    std::cout << "SU(2) ";
                    for (std::size_t i = 0; i < s.dims.size(); ++i) std::cout << (i ? "x" : "") << s.dims[i];
                    std::cout << " seed " << s.seed.value_or(0);
                } else {
                    std::cout << s.field;
                }
                std::cout << '\n';
            }
            return exit_pass;
        }
        if (*report) {
            const std::string path = report_dir + "/report.json";
            std::ifstream is(path);
            if (!is) throw thomlab::ConfigError("no report at " + path);
            h::json rep;
            try {
                rep = h::json::parse(is);
            } catch (const h::json::exception& e) {
                throw thomlab::ConfigError(path + ": " + e.what());
            }
            print_report(rep, std::cout);
            return rep.at("totals").at("required_failures").get<int>() == 0 ? exit_pass : exit_failure;
        }
    } catch (const thomlab::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
    return exit_pass;
}
