#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include "kmtlab/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAssert = 3;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    std::string out;
    bool assert_checks = false;
};

int run(const std::string& sub, const std::set<std::string>& kinds, const Options& opt) {
    kmt::ExperimentConfig cfg;
    try {
        std::ifstream in(opt.config);
        if (!in) throw kmt::ConfigError("cannot open config " + opt.config);
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw kmt::ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        if (doc.is_object() && !doc.contains("experiment") && kinds.size() == 1) doc["experiment"] = *kinds.begin();
        if (opt.seed) doc["seed"] = *opt.seed;
        cfg = kmt::parse_config(doc);
        if (!kinds.count(kmt::to_string(cfg.kind)))
            throw kmt::ConfigError("subcommand " + sub + " cannot run experiment " + kmt::to_string(cfg.kind));
    } catch (const kmt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    const unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    kmt::ExperimentResult res;
    try {
        res = kmt::run_experiment(cfg, threads);
    } catch (const kmt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    const std::string path = opt.out.empty() ? cfg.output : opt.out;
    if (path.empty() || path == "-") {
        kmt::write_csv(res, std::cout);
    } else {
        try {
            kmt::write_outputs(res, path, threads);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 1;
        }
    }
    if (res.fit)
        std::fprintf(stderr, "slope %.4f  intercept %.4f  r2 %.4f\n", res.fit->slope, res.fit->intercept, res.fit->r2);
    for (const auto& a : res.assertions)
        std::fprintf(stderr, "%s %s: %s\n", a.pass ? "PASS" : "FAIL", a.name.c_str(), a.detail.c_str());
    if (opt.assert_checks && !res.passed()) return kExitAssert;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Strong approximation experiments"};
    app.require_subcommand(1);
    Options opt;
    const std::map<std::string, std::set<std::string>> subs = {
        {"couple", {"couple-haar", "couple-lipschitz"}},
        {"couple-residual", {"couple-residual"}},
        {"histogram-rate", {"histogram-rate"}},
        {"tusnady-verify", {"tusnady-verify"}},
        {"rates-table", {"rates-table"}},
        {"project-check", {"project-check"}}};
    std::map<std::string, CLI::App*> apps;
    for (const auto& [name, kinds] : subs) {
        auto* s = app.add_subcommand(name, "run a " + name + " experiment");
        s->add_option("--config", opt.config, "JSON config file")->required();
        s->add_option("--seed", opt.seed, "root seed, overrides the config");
        s->add_option("--threads", opt.threads, "worker threads (0 = all cores)");
        s->add_option("--out", opt.out, "CSV path; the sidecar goes to <path>.json; '-' for stdout");
        s->add_flag("--assert", opt.assert_checks, "exit 3 when a configured check fails");
        apps[name] = s;
    }
    apps["rates-table"]->alias("rates");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }
    for (const auto& [name, kinds] : subs)
        if (*apps[name]) return run(name, kinds, opt);
    return kExitConfig;
}
