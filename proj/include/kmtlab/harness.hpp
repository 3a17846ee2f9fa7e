#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmtlab/classes.hpp"
#include "kmtlab/coupling.hpp"
#include "kmtlab/processes.hpp"
#include "kmtlab/rates.hpp"

namespace kmt {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kCsvHeader = "experiment,kind,n,K,rep,sup_xz,sup_proj,extra";
inline constexpr int kCsvSchemaVersion = 1;

enum class ExperimentKind { CoupleHaar, CoupleLipschitz, CoupleResidual, HistogramRate, TusnadyVerify, RatesTable,
                            ProjectCheck };
enum class DepthPolicy { Default, Full, Fixed };
enum class Summary { Median, Mean };
enum class Denominator { One, LogN, SqrtLogN, LogNL };
enum class Abscissa { N, NOverL };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);
std::string to_string(Denominator d);

struct DgpSpec {
    std::string id = "uniform";
    std::size_t d = 1;
    nlohmann::json params = nlohmann::json::object();
};

struct ClassSpec {
    std::string kind;  // cell-indicators, kde, gaussian-bumps, residual-kernel, histogram
    KernelKind kernel = KernelKind::Triangular;
    double bandwidth = 0.25;
    std::size_t grid_points = 3;
    double grid_lo = 0.0, grid_hi = 1.0;
    double width = 0.25;
    std::vector<double> thresholds;
    bool identity = false;
};

struct SlopeSpec {
    Denominator denominator = Denominator::One;
    Abscissa abscissa = Abscissa::N;
    Summary summary = Summary::Median;
    std::string statistic = "sup_xz";  // or extra
};

struct AssertSpec {
    std::optional<double> slope_min, slope_max;
    std::optional<double> ratio_max;  // summary at the largest n over summary at the smallest
    bool decreasing = false;          // summary at the largest n below summary at the smallest
    bool all_hold = false;            // tusnady-verify and project-check
    std::optional<double> tolerance;  // project-check sup-norm bound
};

struct TusnadySpec {
    std::int64_t m_max = 512;
    AtomConvention convention = AtomConvention::Mid;
    std::vector<std::pair<double, double>> pairs;  // (p_low, p_high) for the generalized check
};

struct RatesSpec {
    std::vector<std::string> formulas;
    std::vector<double> t_values{1.0};
    RateInputs inputs;
};

struct ProjectSpec {
    std::size_t functions = 20;
    int max_depth = 4;
};

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    std::string name;
    ExperimentKind kind = ExperimentKind::CoupleHaar;
    DgpSpec dgp;
    std::vector<std::int64_t> n_grid;
    std::size_t replications = 1;
    DepthPolicy depth_policy = DepthPolicy::Default;
    int depth = -1, depth_y = -1;
    ClassSpec cls;
    double delta = 0.0;  // > 0 builds a delta-net of the class
    double rho = 1.0;
    std::uint64_t seed = 1;
    std::string output;
    std::string cells_rule = "sqrt";  // histogram-rate: L = floor(sqrt n)
    SlopeSpec slope;
    AssertSpec asserts;
    TusnadySpec tusnady;
    RatesSpec rates;
    ProjectSpec project;
    nlohmann::json raw;
};

// Throws ConfigError with a descriptive message on any schema violation.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

struct ResultRow {
    std::string experiment, kind;
    std::int64_t n = 0;
    int K = 0;
    std::uint64_t rep = 0;
    double sup_xz = 0.0, sup_proj = 0.0, extra = 0.0;
};

struct SlopeFit {
    std::vector<double> x, y;  // abscissa and summary / denominator at each n
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
    std::string summary = "median", denominator = "1", abscissa = "n";
};

struct NSummary {
    std::int64_t n = 0;
    int K = 0;
    double x = 0.0;  // abscissa value
    double median = 0.0, mean = 0.0;
    std::size_t count = 0;
};

struct AssertionOutcome {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ExperimentResult {
    ExperimentConfig cfg;
    std::vector<ResultRow> rows;
    std::vector<NSummary> summaries;
    std::optional<SlopeFit> fit;
    std::vector<AssertionOutcome> assertions;
    nlohmann::json info = nlohmann::json::object();
    bool passed() const;
};

double median_of(std::vector<double> v);

// Ordinary least squares of log y on log x. Needs at least 3 distinct x and positive y.
SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);
// Per-n summary of sup_xz, divided by the denominator, against n.
SlopeFit fit_slope(const std::vector<SupErrorRecord>& records, Summary summary = Summary::Median,
                   Denominator denominator = Denominator::One);

// Runs fn(i) for i in [0, count) on up to threads workers; fn must write only its own slot.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

// Independent stream per (n, replication).
std::uint64_t replication_stream(std::int64_t n, std::uint64_t rep);

std::shared_ptr<const Density> make_density(const DgpSpec& spec);
std::shared_ptr<const RegressionDensity> make_regression(const DgpSpec& spec);

ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned threads = 1);

void write_csv(const ExperimentResult& result, std::ostream& os);
nlohmann::json sidecar_json(const ExperimentResult& result, unsigned threads);
// Writes the CSV at path and the sidecar at path + ".json".
void write_outputs(const ExperimentResult& result, const std::string& path, unsigned threads);

}  // namespace kmt
