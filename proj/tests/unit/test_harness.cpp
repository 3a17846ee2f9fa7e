#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kmtlab/checks.hpp"
#include "kmtlab/harness.hpp"

using namespace kmt;
using nlohmann::json;

namespace {

std::string csv_of(const ExperimentResult& r) {
    std::ostringstream os;
    write_csv(r, os);
    return os.str();
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

json haar_config() {
    return json::parse(R"({
        "schema_version": 1, "experiment": "couple-haar",
        "dgp": {"id": "uniform", "d": 1},
        "n_grid": [64, 256, 1024], "replications": 7, "seed": 3
    })");
}

}  // namespace

TEST_SUITE("harness") {
    TEST_CASE("slope of an exact power law") {
        std::vector<SupErrorRecord> recs;
        for (std::int64_t n : {100, 1000, 10000, 100000})
            for (int rep = 0; rep < 3; ++rep) {
                SupErrorRecord r;
                r.n = n;
                r.sup_xz = 2.5 * std::pow(static_cast<double>(n), -0.5);
                recs.push_back(r);
            }
        auto f = fit_slope(recs);
        CHECK(std::abs(f.slope + 0.5) < 1e-12);
        CHECK(std::abs(f.intercept - std::log(2.5)) < 1e-12);
        CHECK(f.r2 == doctest::Approx(1.0));
    }

    TEST_CASE("log n denominator removes a log factor") {
        std::vector<SupErrorRecord> recs;
        for (std::int64_t n : {64, 512, 4096, 32768}) {
            SupErrorRecord r;
            r.n = n;
            const double x = static_cast<double>(n);
            r.sup_xz = std::log(x) * std::pow(x, -0.5);
            recs.push_back(r);
        }
        CHECK(std::abs(fit_slope(recs, Summary::Median, Denominator::LogN).slope + 0.5) < 1e-12);
        CHECK(fit_slope(recs, Summary::Median, Denominator::One).slope > -0.5);
        CHECK(fit_slope(recs, Summary::Mean, Denominator::LogN).slope == doctest::Approx(-0.5));
    }

    TEST_CASE("slope fit errors") {
        CHECK_THROWS_AS(fit_loglog({1, 2, 2}, {1, 1, 1}), DomainError);
        CHECK_THROWS_AS(fit_loglog({1, 2, 3}, {1, 0, 1}), DomainError);
        CHECK(median_of({3, 1, 2}) == 2.0);
        CHECK(median_of({4, 1, 2, 3}) == 2.5);
        CHECK(std::isnan(median_of({})));
    }

    TEST_CASE("one replication at one size gives one record") {
        auto j = haar_config();
        j["n_grid"] = {16};
        j["replications"] = 1;
        auto res = run_experiment(parse_config(j));
        REQUIRE(res.rows.size() == 1);
        CHECK(res.rows[0].n == 16);
        CHECK(res.rows[0].rep == 0);
        CHECK_FALSE(res.fit.has_value());
        CHECK(line_count(csv_of(res)) == 2);
    }

    TEST_CASE("output is byte-identical across runs and thread counts") {
        auto cfg = parse_config(haar_config());
        const auto a = csv_of(run_experiment(cfg, 1));
        const auto b = csv_of(run_experiment(cfg, 1));
        const auto c = csv_of(run_experiment(cfg, 4));
        CHECK(a == b);
        CHECK(a == c);
        CHECK(line_count(a) == 1 + 3 * 7);
        auto j = haar_config();
        j["seed"] = 4;
        CHECK(csv_of(run_experiment(parse_config(j), 2)) != a);
    }

    TEST_CASE("config validation") {
        auto bad = haar_config();
        bad["bogus"] = 1;
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["dgp"]["params"] = {{"lo", 0.0}, {"typo", 1.0}};
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["schema_version"] = 2;
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad.erase("schema_version");
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["n_grid"] = {256, 64};
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["replications"] = 0;
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["experiment"] = "nope";
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["class"] = {{"kind", "kde"}};
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["dgp"]["id"] = "cauchy";
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        bad = haar_config();
        bad["slope"] = {{"denominator", "log log n"}};
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
        CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
    }

    TEST_CASE("every experiment matches its golden CSV") {
        std::vector<json> cfgs = {
            haar_config(),
            json::parse(R"({"schema_version":1,"experiment":"couple-lipschitz","dgp":{"id":"uniform","d":1},
                "class":{"kind":"kde","kernel":"triangular","bandwidth":0.3,"grid_points":3,"grid_lo":0.2,"grid_hi":0.8},
                "n_grid":[64],"replications":2})"),
            json::parse(R"({"schema_version":1,"experiment":"couple-residual",
                "dgp":{"id":"normal-location","d":1,"params":{"mu":"sin","sigma":0.5}},
                "class":{"kind":"residual-kernel","kernel":"triangular","bandwidth":0.3,"grid_points":2,
                         "grid_lo":0.3,"grid_hi":0.7,"thresholds":[0.0]},
                "depth_policy":"fixed","depth":2,"depth_y":1,"n_grid":[64],"replications":2})"),
            json::parse(R"({"schema_version":1,"experiment":"histogram-rate","dgp":{"id":"triangular","d":1},
                "n_grid":[64,256],"replications":2,"rho":1.5})"),
            json::parse(R"({"schema_version":1,"experiment":"tusnady-verify","tusnady":{"m_max":8}})"),
            json::parse(R"({"schema_version":1,"experiment":"rates-table","n_grid":[100,1000],
                "rates":{"formulas":["corollary1"],"inputs":{"d":1,"M":1,"TV":1,"L":1,"K":1,"E":1,"S":1,"vc_c":2,"vc_d":1,"c1":1,"c2":1,"c3":1}}})"),
            json::parse(R"({"schema_version":1,"experiment":"project-check","project":{"functions":2,"max_depth":2}})")};
        for (const auto& j : cfgs) {
            auto cfg = parse_config(j);
            CAPTURE(to_string(cfg.kind));
            auto res = run_experiment(cfg, 2);
            auto s = csv_of(res);
            CHECK(first_line(s) == kCsvHeader);
            CHECK(line_count(s) == 1 + res.rows.size());
            for (const auto& r : res.rows) CHECK(r.experiment == to_string(cfg.kind));
            auto side = sidecar_json(res, 2);
            CHECK(side["config"] == j);
            CHECK(side.contains("slope_fit"));
            // golden CSV per experiment kind; set KMT_UPDATE_GOLDEN=1 to regenerate
            const std::string golden = std::string(KMT_TEST_DATA) + "/golden/" + to_string(cfg.kind) + ".csv";
            if (std::getenv("KMT_UPDATE_GOLDEN")) std::ofstream(golden) << s;
            CHECK(read_file(golden) == s);
        }
    }

    TEST_CASE("slope assertions are evaluated") {
        auto j = haar_config();
        j["assert"] = {{"slope_max", 10.0}, {"slope_min", 5.0}};
        auto res = run_experiment(parse_config(j));
        REQUIRE(res.fit.has_value());
        REQUIRE(res.assertions.size() == 2);
        CHECK_FALSE(res.passed());
        j["assert"] = {{"slope_max", 10.0}};
        CHECK(run_experiment(parse_config(j)).passed());
    }

    TEST_CASE("replication streams are distinct") {
        CHECK(replication_stream(16, 0) != replication_stream(16, 1));
        CHECK(replication_stream(16, 0) != replication_stream(32, 0));
    }
}
