#include "kmtlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "kmtlab/checks.hpp"

namespace kmt {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------- config parsing

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad or missing value for '" + key + "' in " + where);
    }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    return get_as<T>(j, key, where);
}

double number_or_inf(const json& v, const std::string& key) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf") return kInf;
        if (s == "nan" || s == "missing") return kNaN;
    }
    throw ConfigError("rate input '" + key + "' must be a number or \"inf\"");
}

DepthPolicy depth_policy_from(const std::string& s) {
    if (s == "default") return DepthPolicy::Default;
    if (s == "full") return DepthPolicy::Full;
    if (s == "fixed") return DepthPolicy::Fixed;
    throw ConfigError("depth_policy must be default, full or fixed");
}

Denominator denominator_from(const std::string& s) {
    if (s == "1") return Denominator::One;
    if (s == "log n") return Denominator::LogN;
    if (s == "sqrt log n") return Denominator::SqrtLogN;
    if (s == "log nL") return Denominator::LogNL;
    throw ConfigError("slope.denominator must be one of \"1\", \"log n\", \"sqrt log n\", \"log nL\"");
}

AtomConvention convention_from(const std::string& s) {
    if (s == "left") return AtomConvention::Left;
    if (s == "mid") return AtomConvention::Mid;
    if (s == "right") return AtomConvention::Right;
    throw ConfigError("tusnady.convention must be left, mid or right");
}

KernelKind kernel_or_throw(const std::string& s) {
    try {
        return kernel_from_string(s);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("class.kernel: ") + e.what());
    }
}

void parse_rate_inputs(const json& j, RateInputs& in) {
    static const std::set<std::string> keys = {"d", "M", "E", "TV", "L", "K", "S", "entropy", "vc_c", "vc_d",
                                               "poly_a", "poly_b", "c1", "c2", "c3", "v", "alpha", "k", "vc_c_r",
                                               "vc_d_r", "r_size", "cells", "max_side", "L_theta"};
    check_keys(j, keys, "rates.inputs");
    std::map<std::string, double*> slots = {
        {"M", &in.M},         {"E", &in.E},         {"TV", &in.TV},         {"L", &in.L},
        {"K", &in.K},         {"S", &in.S},         {"vc_c", &in.vc_c},     {"vc_d", &in.vc_d},
        {"poly_a", &in.poly_a}, {"poly_b", &in.poly_b}, {"c1", &in.c1},     {"c2", &in.c2},
        {"c3", &in.c3},       {"v", &in.v},         {"alpha", &in.alpha},   {"k", &in.k},
        {"vc_c_r", &in.vc_c_r}, {"vc_d_r", &in.vc_d_r}, {"cells", &in.cells}, {"max_side", &in.max_side},
        {"L_theta", &in.L_theta}};
    for (auto& [k, p] : slots)
        if (j.contains(k)) *p = number_or_inf(j.at(k), k);
    if (j.contains("d")) in.d = get_as<int>(j, "d", "rates.inputs");
    if (j.contains("r_size")) in.r_size = get_as<std::size_t>(j, "r_size", "rates.inputs");
    if (j.contains("entropy")) {
        auto e = get_as<std::string>(j, "entropy", "rates.inputs");
        if (e == "vc")
            in.entropy = EntropyKind::VC;
        else if (e == "polynomial")
            in.entropy = EntropyKind::Polynomial;
        else
            throw ConfigError("rates.inputs.entropy must be vc or polynomial");
    }
}

const std::set<std::string> kRateFormulas = {"theorem1", "corollary1", "corollary2", "corollary3", "theorem2",
                                              "corollary4", "theorem3", "corollary5", "theorem4", "corollary6"};

// ---------------------------------------------------------------- helpers

int depth_for(const ExperimentConfig& cfg, std::int64_t n, std::size_t d) {
    switch (cfg.depth_policy) {
        case DepthPolicy::Default: return default_depth(n, static_cast<int>(d));
        case DepthPolicy::Full: return full_depth(n);
        case DepthPolicy::Fixed: return cfg.depth;
    }
    return 0;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double denominator_value(Denominator den, double n, double L) {
    switch (den) {
        case Denominator::One: return 1.0;
        case Denominator::LogN: return std::log(n);
        case Denominator::SqrtLogN: return std::sqrt(std::log(n));
        case Denominator::LogNL: return std::log(n * L);
    }
    return 1.0;
}

std::string timestamp() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

FunctionClass build_x_class(const ClassSpec& cs, std::size_t d) {
    auto grid = regular_grid(d, cs.grid_points, cs.grid_lo, cs.grid_hi);
    if (cs.kind == "kde") return kde_class(cs.kernel, cs.bandwidth, grid, d);
    if (cs.kind == "gaussian-bumps") return gaussian_bump_class(grid, cs.width, d);
    throw ConfigError("class.kind '" + cs.kind + "' is not a smooth class");
}

// Residual pairs g_w(x) (r(y) - theta(x, r)) with kernel g_w.
std::shared_ptr<FunctionClass> build_residual_class(const ClassSpec& cs, std::size_t dx) {
    auto kc = std::make_shared<FunctionClass>(
        kde_class(cs.kernel, cs.bandwidth, regular_grid(dx, cs.grid_points, cs.grid_lo, cs.grid_hi), dx));
    std::vector<ScalarFn> g;
    for (std::size_t i = 0; i < kc->size(); ++i) g.push_back([kc, i](const double* x) { return kc->eval(i, x); });
    std::vector<RFunction> rs;
    if (cs.identity) rs.push_back(RFunction::identity());
    for (double y0 : cs.thresholds) rs.push_back(RFunction::threshold(y0));
    if (rs.empty()) throw ConfigError("residual-kernel class needs thresholds or identity");
    auto cls = std::make_shared<FunctionClass>(residual_pair_class(std::move(g), std::move(rs), dx, "residual-kernel"));
    for (std::size_t a = 0; a < dx; ++a) cls->breaks[a] = kc->breaks[a];
    return cls;
}

void add_summaries(ExperimentResult& res, const std::function<double(const ResultRow&)>& stat) {
    std::map<std::int64_t, std::vector<double>> by_n;
    std::map<std::int64_t, int> K_of;
    for (const auto& r : res.rows) {
        by_n[r.n].push_back(stat(r));
        K_of[r.n] = r.K;
    }
    for (auto& [n, v] : by_n) {
        NSummary s;
        s.n = n;
        s.K = K_of[n];
        s.count = v.size();
        double sum = 0.0;
        for (double x : v) sum += x;
        s.mean = sum / static_cast<double>(v.size());
        s.median = median_of(v);
        s.x = static_cast<double>(n);
        res.summaries.push_back(s);
    }
}

void fit_and_assert(ExperimentResult& res) {
    const auto& cfg = res.cfg;
    const auto& sp = cfg.slope;
    std::vector<double> x, y;
    for (const auto& s : res.summaries) {
        const double L = static_cast<double>(s.K > 0 ? s.K : 1);
        const double nn = static_cast<double>(s.n);
        x.push_back(sp.abscissa == Abscissa::N ? nn : nn / L);
        double v = sp.summary == Summary::Median ? s.median : s.mean;
        y.push_back(v / denominator_value(sp.denominator, nn, L));
    }
    std::set<double> distinct(x.begin(), x.end());
    bool positive = std::all_of(y.begin(), y.end(), [](double v) { return v > 0.0 && std::isfinite(v); });
    if (distinct.size() >= 3 && positive) {
        SlopeFit f = fit_loglog(x, y);
        f.summary = sp.summary == Summary::Median ? "median" : "mean";
        f.denominator = to_string(sp.denominator);
        f.abscissa = sp.abscissa == Abscissa::N ? "n" : "n/L";
        res.fit = f;
    }
    const auto& a = cfg.asserts;
    auto need_fit = [&](const std::string& name) {
        if (!res.fit) {
            res.assertions.push_back({name, false, "no slope fit (needs 3 distinct n and positive summaries)"});
            return false;
        }
        return true;
    };
    if (a.slope_min && need_fit("slope_min"))
        res.assertions.push_back({"slope_min", res.fit->slope >= *a.slope_min,
                                  "slope " + fmt(res.fit->slope) + " >= " + fmt(*a.slope_min)});
    if (a.slope_max && need_fit("slope_max"))
        res.assertions.push_back({"slope_max", res.fit->slope <= *a.slope_max,
                                  "slope " + fmt(res.fit->slope) + " <= " + fmt(*a.slope_max)});
    if ((a.ratio_max || a.decreasing) && res.summaries.size() < 2) {
        res.assertions.push_back({"ratio", false, "needs at least two sample sizes"});
        return;
    }
    if (a.ratio_max || a.decreasing) {
        const auto pick = [&](const NSummary& s) { return sp.summary == Summary::Median ? s.median : s.mean; };
        const double first = pick(res.summaries.front()), last = pick(res.summaries.back());
        if (a.ratio_max)
            res.assertions.push_back({"ratio_max", last <= *a.ratio_max * first,
                                      "summary ratio " + fmt(last / first) + " <= " + fmt(*a.ratio_max)});
        if (a.decreasing)
            res.assertions.push_back({"decreasing", last < first, fmt(last) + " < " + fmt(first)});
    }
}

// ---------------------------------------------------------------- experiments

void run_couple_haar(ExperimentResult& res, unsigned threads) {
    const auto& cfg = res.cfg;
    auto density = make_density(cfg.dgp);
    const std::size_t R = cfg.replications;
    for (std::int64_t n : cfg.n_grid) {
        const int K = depth_for(cfg, n, cfg.dgp.d);
        CellTree tree = build_axis_aligned(*density, K, cfg.rho);
        std::vector<ResultRow> rows(R);
        // cell indicators lie in the Haar span, so X is a function of the counts
        parallel_for(R, threads, [&](std::size_t rep) {
            RngStream rng(cfg.seed, replication_stream(n, rep));
            auto cr = couple_counts(tree, n, rng);
            auto nv = node_indicator_values(cr);
            double sup = 0.0;
            for (int v : tree.topology().leaves)
                sup = std::max(sup, std::abs(nv.X[static_cast<std::size_t>(v)] - nv.Z[static_cast<std::size_t>(v)]));
            rows[rep] = {to_string(cfg.kind), cfg.cls.kind, n, K, rep, sup, 0.0, 0.0};
        });
        res.rows.insert(res.rows.end(), rows.begin(), rows.end());
    }
    add_summaries(res, [](const ResultRow& r) { return r.sup_xz; });
}

void run_couple_lipschitz(ExperimentResult& res, unsigned threads) {
    const auto& cfg = res.cfg;
    auto density = make_density(cfg.dgp);
    FunctionClass cls = build_x_class(cfg.cls, cfg.dgp.d);
    res.info["class_size"] = cls.size();
    if (cfg.delta > 0.0) {
        DeltaNet dn = build_delta_net(cls, cfg.delta, *density);
        res.info["net_size"] = dn.members.size();
        res.info["net_radius"] = dn.radius;
        cls = dn.net;
    }
    const std::size_t R = cfg.replications;
    json jit = json::array();
    for (std::int64_t n : cfg.n_grid) {
        const int K = depth_for(cfg, n, cfg.dgp.d);
        CellTree tree = build_axis_aligned(*density, K, cfg.rho);
        CoupledNet net = register_net(cls, tree, *density);
        jit.push_back(net.proj.jitter);
        std::vector<ResultRow> rows(R);
        parallel_for(R, threads, [&](std::size_t rep) {
            RngStream rng(cfg.seed, replication_stream(n, rep));
            auto rec = coupled_sup_error(net, n, rng, rep);
            rows[rep] = {to_string(cfg.kind), cls.name, n, K, rep, rec.sup_xz, rec.sup_proj, 0.0};
        });
        res.rows.insert(res.rows.end(), rows.begin(), rows.end());
    }
    res.info["cholesky_jitter"] = jit;
    add_summaries(res, [](const ResultRow& r) { return r.sup_xz; });
}

void run_couple_residual(ExperimentResult& res, unsigned threads) {
    const auto& cfg = res.cfg;
    auto joint = make_regression(cfg.dgp);
    const std::size_t dx = cfg.dgp.d;
    auto cls = build_residual_class(cfg.cls, dx);
    res.info["class_size"] = cls->size();
    const std::size_t R = cfg.replications;
    for (std::int64_t n : cfg.n_grid) {
        int M = 0, N = 0;
        switch (cfg.depth_policy) {
            case DepthPolicy::Default: M = N = default_depth(n, static_cast<int>(dx + 1)); break;
            case DepthPolicy::Full: {
                const int total = full_depth(n);
                N = total / static_cast<int>(dx + 1);
                M = total - N;
                break;
            }
            case DepthPolicy::Fixed:
                M = cfg.depth;
                N = cfg.depth_y;
                break;
        }
        auto ct = build_cylindered(*joint, dx, M, N, cfg.rho);
        ResidualNet net = register_residual_net(*cls, ct, *joint);
        std::vector<ResultRow> rows(R);
        parallel_for(R, threads, [&](std::size_t rep) {
            RngStream rng(cfg.seed, replication_stream(n, rep));
            auto rec = coupled_sup_error_residual(net, n, rng, rep);
            rows[rep] = {to_string(cfg.kind), cls->name, n, M, rep, rec.sup_xz, rec.sup_proj, rec.extra};
        });
        res.rows.insert(res.rows.end(), rows.begin(), rows.end());
    }
    const bool extra = cfg.slope.statistic == "extra";
    add_summaries(res, [extra](const ResultRow& r) { return extra ? r.extra : r.sup_xz; });
}

void run_histogram_rate(ExperimentResult& res, unsigned threads) {
    const auto& cfg = res.cfg;
    if (cfg.dgp.d != 1) throw ConfigError("histogram-rate supports d = 1");
    auto density = make_density(cfg.dgp);
    auto* pd = dynamic_cast<const ProductDensity*>(density.get());
    if (!pd) throw ConfigError("histogram-rate needs a product law");
    const std::size_t R = cfg.replications;
    json rhos = json::array();
    for (std::int64_t n : cfg.n_grid) {
        std::size_t L = 0;
        const double nn = static_cast<double>(n);
        if (cfg.cells_rule == "sqrt")
            L = static_cast<std::size_t>(std::floor(std::sqrt(nn)));
        else if (cfg.cells_rule == "cbrt")
            L = static_cast<std::size_t>(std::floor(std::cbrt(nn)));
        L = std::max<std::size_t>(L, 1);
        // alternating target masses 1, rho give a quasi-uniform partition
        std::vector<double> w(L);
        for (std::size_t i = 0; i < L; ++i) w[i] = i % 2 ? cfg.rho : 1.0;
        auto cells = quantile_cells_1d(pd->marginal(0), w);
        auto q = validate_quasi_uniform(cells, *density);
        rhos.push_back(q.rho);
        PartitionTree tree(cells, *density);
        const double sL = std::sqrt(static_cast<double>(L));
        std::vector<ResultRow> rows(R);
        // the histogram class sqrt(L) 1(cell) lies in the span of the partition tree
        parallel_for(R, threads, [&](std::size_t rep) {
            RngStream rng(cfg.seed, replication_stream(n, rep));
            auto cr = couple_counts(tree, n, rng);
            auto nv = node_indicator_values(cr);
            double sup = 0.0;
            for (int v : tree.topology().leaves)
                sup = std::max(sup, sL * std::abs(nv.X[static_cast<std::size_t>(v)] - nv.Z[static_cast<std::size_t>(v)]));
            rows[rep] = {to_string(cfg.kind), "histogram", n, static_cast<int>(L), rep, sup, 0.0, 0.0};
        });
        res.rows.insert(res.rows.end(), rows.begin(), rows.end());
    }
    res.info["realized_rho"] = rhos;
    add_summaries(res, [](const ResultRow& r) { return r.sup_xz; });
}

void run_tusnady(ExperimentResult& res, unsigned threads) {
    const auto& cfg = res.cfg;
    const auto& ts = cfg.tusnady;
    const std::string exp = to_string(cfg.kind);
    std::vector<ResultRow> rows(static_cast<std::size_t>(ts.m_max));
    parallel_for(rows.size(), threads, [&](std::size_t i) {
        const std::int64_t m = static_cast<std::int64_t>(i) + 1;
        auto rep = tusnady_check(m, ts.convention);
        rows[i] = {exp, "tusnady", m, 0, 0, rep.max_margin_quadratic, rep.max_margin_linear, rep.holds() ? 1.0 : 0.0};
    });
    bool all = std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.extra == 1.0; });
    res.rows = rows;
    json consts = json::array();
    for (auto [pl, ph] : ts.pairs) {
        auto c = solve_coupling_constants(pl, ph);
        consts.push_back({{"p_low", pl}, {"p_high", ph}, {"c0", c.c0}, {"c1", c.c1}, {"c2", c.c2}, {"c3", c.c3},
                          {"residual", c.residual}});
        if (!(c.residual <= 1e-10)) all = false;
        const auto m0 = static_cast<std::int64_t>(std::ceil(1.0 / (c.c0 * c.c0)));
        std::vector<double> ps = {pl, ph};
        if (ph > pl) ps.push_back(0.5 * (pl + ph));
        for (std::int64_t m : {m0, 4 * m0})
            for (double p : ps) {
                auto g = generalized_coupling_check(m, p, c, ts.convention);
                char kind[64];
                std::snprintf(kind, sizeof kind, "generalized-p%.3g", p);
                res.rows.push_back({exp, kind, m, 0, 0, g.max_margin_quadratic, g.max_margin_linear,
                                    g.holds() ? 1.0 : 0.0});
                if (!g.holds()) all = false;
            }
    }
    res.info["coupling_constants"] = consts;
    if (cfg.asserts.all_hold) res.assertions.push_back({"all_hold", all, all ? "every outcome satisfies both bounds" : "violation found"});
}

double rate_value(const std::string& f, const RateInputs& in, double* delta) {
    *delta = kNaN;
    if (f == "theorem1") {
        auto m = rate_theorem1_min(in);
        *delta = m.delta;
        return m.value;
    }
    if (f == "corollary1") return rho_corollary1(in);
    if (f == "corollary2") return rho_corollary2(in);
    if (f == "corollary3") {
        auto r = rho_corollary3(in);
        return std::min(r.first, r.second);
    }
    if (f == "theorem2") return rate_theorem2(in).T;
    if (f == "corollary4") return rho_corollary4(in);
    if (f == "theorem3") {
        auto m = rate_theorem3_min(in);
        *delta = m.delta;
        return m.value;
    }
    if (f == "corollary5") return rho_corollary5(in);
    if (f == "theorem4") {
        auto r = rate_theorem4(in);
        return r.U + r.V;
    }
    if (f == "corollary6") return rho_corollary6(in);
    throw ConfigError("unknown rate formula " + f);
}

void run_rates(ExperimentResult& res) {
    const auto& cfg = res.cfg;
    bool ok = true;
    for (const auto& f : cfg.rates.formulas)
        for (std::size_t ti = 0; ti < cfg.rates.t_values.size(); ++ti)
            for (std::int64_t n : cfg.n_grid) {
                RateInputs in = cfg.rates.inputs;
                in.n = static_cast<double>(n);
                in.t = cfg.rates.t_values[ti];
                double delta = kNaN;
                double v = rate_value(f, in, &delta);
                ok = ok && v > 0.0 && std::isfinite(v);
                res.rows.push_back({to_string(cfg.kind), f, n, 0, ti, v, delta, in.t});
            }
    if (cfg.asserts.all_hold) res.assertions.push_back({"all_hold", ok, ok ? "all rates finite and positive" : "non-finite rate"});
}

void run_project_check(ExperimentResult& res) {
    const auto& cfg = res.cfg;
    auto rows = projection_check(cfg.seed, cfg.project.functions, cfg.project.max_depth);
    double worst0 = 0.0, worst2 = 0.0;
    for (const auto& r : rows) {
        res.rows.push_back({to_string(cfg.kind), "pi0-d" + std::to_string(r.d), static_cast<std::int64_t>(r.index), r.K,
                            0, r.pi0_error, r.pi2_error, 0.0});
        worst0 = std::max(worst0, r.pi0_error);
        worst2 = std::max(worst2, r.pi2_error);
    }
    res.info["worst_pi0"] = worst0;
    res.info["worst_pi2"] = worst2;
    if (cfg.asserts.all_hold) {
        const double tol = cfg.asserts.tolerance.value_or(1e-8);
        res.assertions.push_back({"pi0_oracle", worst0 <= tol, fmt(worst0) + " <= " + fmt(tol)});
        res.assertions.push_back({"pi2_identity", worst2 <= 1e-9, fmt(worst2) + " <= 1e-9"});
    }
}

}  // namespace

// ---------------------------------------------------------------- public

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::CoupleHaar: return "couple-haar";
        case ExperimentKind::CoupleLipschitz: return "couple-lipschitz";
        case ExperimentKind::CoupleResidual: return "couple-residual";
        case ExperimentKind::HistogramRate: return "histogram-rate";
        case ExperimentKind::TusnadyVerify: return "tusnady-verify";
        case ExperimentKind::RatesTable: return "rates-table";
        case ExperimentKind::ProjectCheck: return "project-check";
    }
    return "?";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
    for (auto k : {ExperimentKind::CoupleHaar, ExperimentKind::CoupleLipschitz, ExperimentKind::CoupleResidual,
                   ExperimentKind::HistogramRate, ExperimentKind::TusnadyVerify, ExperimentKind::RatesTable,
                   ExperimentKind::ProjectCheck})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown experiment kind '" + s + "'");
}

std::string to_string(Denominator d) {
    switch (d) {
        case Denominator::One: return "1";
        case Denominator::LogN: return "log n";
        case Denominator::SqrtLogN: return "sqrt log n";
        case Denominator::LogNL: return "log nL";
    }
    return "?";
}

ExperimentConfig parse_config(const json& doc) {
    check_keys(doc, {"schema_version", "name", "experiment", "dgp", "n_grid", "replications", "depth_policy", "depth",
                     "depth_y", "class", "delta", "rho", "seed", "output", "cells_rule", "slope", "assert", "tusnady",
                     "rates", "project"},
               "config");
    ExperimentConfig c;
    c.raw = doc;
    if (!doc.contains("schema_version")) throw ConfigError("config needs schema_version");
    c.schema_version = get_as<int>(doc, "schema_version", "config");
    if (c.schema_version != kConfigSchemaVersion)
        throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version) + " (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
    c.kind = experiment_kind_from_string(get_as<std::string>(doc, "experiment", "config"));
    c.name = get_or<std::string>(doc, "name", to_string(c.kind), "config");
    c.seed = get_or<std::uint64_t>(doc, "seed", 1, "config");
    c.output = get_or<std::string>(doc, "output", "", "config");
    c.rho = get_or<double>(doc, "rho", 1.0, "config");
    if (!(c.rho >= 1.0)) throw ConfigError("rho must be at least 1");
    c.delta = get_or<double>(doc, "delta", 0.0, "config");
    if (c.delta < 0.0 || c.delta >= 1.0) throw ConfigError("delta must lie in [0,1)");
    c.replications = get_or<std::size_t>(doc, "replications", 1, "config");
    if (c.replications < 1) throw ConfigError("replications must be at least 1");
    if (c.replications > (std::size_t{1} << 20)) throw ConfigError("replications must not exceed 2^20");
    c.depth_policy = depth_policy_from(get_or<std::string>(doc, "depth_policy", "default", "config"));
    c.depth = get_or<int>(doc, "depth", -1, "config");
    c.depth_y = get_or<int>(doc, "depth_y", -1, "config");
    if (c.depth_policy == DepthPolicy::Fixed && c.depth < 0) throw ConfigError("fixed depth_policy needs depth");
    if (c.depth_policy == DepthPolicy::Fixed && c.kind == ExperimentKind::CoupleResidual && c.depth_y < 0)
        throw ConfigError("fixed depth_policy for couple-residual needs depth_y");
    c.cells_rule = get_or<std::string>(doc, "cells_rule", "sqrt", "config");
    if (c.cells_rule != "sqrt" && c.cells_rule != "cbrt") throw ConfigError("cells_rule must be sqrt or cbrt");

    if (doc.contains("n_grid")) {
        const auto& g = doc.at("n_grid");
        if (!g.is_array()) throw ConfigError("n_grid must be an array");
        for (const auto& v : g) {
            if (!v.is_number_integer() || v.get<std::int64_t>() < 1) throw ConfigError("n_grid entries must be positive integers");
            c.n_grid.push_back(v.get<std::int64_t>());
        }
        for (std::size_t i = 1; i < c.n_grid.size(); ++i)
            if (c.n_grid[i] <= c.n_grid[i - 1]) throw ConfigError("n_grid must be strictly increasing");
    }
    const bool needs_grid = c.kind != ExperimentKind::TusnadyVerify && c.kind != ExperimentKind::ProjectCheck;
    if (needs_grid && c.n_grid.empty()) throw ConfigError("n_grid must not be empty");

    if (doc.contains("dgp")) {
        const auto& d = doc.at("dgp");
        check_keys(d, {"id", "d", "params"}, "dgp");
        c.dgp.id = get_as<std::string>(d, "id", "dgp");
        c.dgp.d = get_or<std::size_t>(d, "d", 1, "dgp");
        if (c.dgp.d < 1) throw ConfigError("dgp.d must be positive");
        if (d.contains("params")) {
            c.dgp.params = d.at("params");
            if (!c.dgp.params.is_object()) throw ConfigError("dgp.params must be an object");
        }
    }
    if (doc.contains("class")) {
        const auto& k = doc.at("class");
        check_keys(k, {"kind", "kernel", "bandwidth", "grid_points", "grid_lo", "grid_hi", "width", "thresholds", "identity"},
                   "class");
        c.cls.kind = get_as<std::string>(k, "kind", "class");
        if (k.contains("kernel")) c.cls.kernel = kernel_or_throw(get_as<std::string>(k, "kernel", "class"));
        c.cls.bandwidth = get_or<double>(k, "bandwidth", c.cls.bandwidth, "class");
        c.cls.grid_points = get_or<std::size_t>(k, "grid_points", c.cls.grid_points, "class");
        c.cls.grid_lo = get_or<double>(k, "grid_lo", c.cls.grid_lo, "class");
        c.cls.grid_hi = get_or<double>(k, "grid_hi", c.cls.grid_hi, "class");
        c.cls.width = get_or<double>(k, "width", c.cls.width, "class");
        c.cls.thresholds = get_or<std::vector<double>>(k, "thresholds", {}, "class");
        c.cls.identity = get_or<bool>(k, "identity", false, "class");
        if (c.cls.grid_points < 1) throw ConfigError("class.grid_points must be positive");
    }
    static const std::map<ExperimentKind, std::set<std::string>> class_kinds = {
        {ExperimentKind::CoupleHaar, {"cell-indicators"}},
        {ExperimentKind::CoupleLipschitz, {"kde", "gaussian-bumps"}},
        {ExperimentKind::CoupleResidual, {"residual-kernel"}},
        {ExperimentKind::HistogramRate, {"histogram"}}};
    if (auto it = class_kinds.find(c.kind); it != class_kinds.end()) {
        if (c.cls.kind.empty()) c.cls.kind = *it->second.begin();
        if (!it->second.count(c.cls.kind))
            throw ConfigError("class.kind '" + c.cls.kind + "' does not fit experiment " + to_string(c.kind));
        if (!doc.contains("dgp")) throw ConfigError("config needs dgp");
    }
    if (c.kind == ExperimentKind::CoupleResidual && c.depth_policy == DepthPolicy::Fixed && c.depth < 0)
        throw ConfigError("couple-residual with fixed depth needs depth");

    if (c.kind == ExperimentKind::HistogramRate) {
        c.slope.denominator = Denominator::LogNL;
        c.slope.abscissa = Abscissa::NOverL;
    }
    if (doc.contains("slope")) {
        const auto& s = doc.at("slope");
        check_keys(s, {"denominator", "abscissa", "summary", "statistic"}, "slope");
        if (s.contains("denominator")) c.slope.denominator = denominator_from(get_as<std::string>(s, "denominator", "slope"));
        if (s.contains("abscissa")) {
            auto a = get_as<std::string>(s, "abscissa", "slope");
            if (a == "n")
                c.slope.abscissa = Abscissa::N;
            else if (a == "n/L")
                c.slope.abscissa = Abscissa::NOverL;
            else
                throw ConfigError("slope.abscissa must be n or n/L");
        }
        if (s.contains("summary")) {
            auto m = get_as<std::string>(s, "summary", "slope");
            if (m == "median")
                c.slope.summary = Summary::Median;
            else if (m == "mean")
                c.slope.summary = Summary::Mean;
            else
                throw ConfigError("slope.summary must be median or mean");
        }
        c.slope.statistic = get_or<std::string>(s, "statistic", "sup_xz", "slope");
        if (c.slope.statistic != "sup_xz" && c.slope.statistic != "extra")
            throw ConfigError("slope.statistic must be sup_xz or extra");
    }
    if (doc.contains("assert")) {
        const auto& a = doc.at("assert");
        check_keys(a, {"slope_min", "slope_max", "ratio_max", "decreasing", "all_hold", "tolerance"}, "assert");
        if (a.contains("slope_min")) c.asserts.slope_min = get_as<double>(a, "slope_min", "assert");
        if (a.contains("slope_max")) c.asserts.slope_max = get_as<double>(a, "slope_max", "assert");
        if (a.contains("ratio_max")) c.asserts.ratio_max = get_as<double>(a, "ratio_max", "assert");
        if (a.contains("tolerance")) c.asserts.tolerance = get_as<double>(a, "tolerance", "assert");
        c.asserts.decreasing = get_or<bool>(a, "decreasing", false, "assert");
        c.asserts.all_hold = get_or<bool>(a, "all_hold", false, "assert");
    }
    if (doc.contains("tusnady")) {
        const auto& t = doc.at("tusnady");
        check_keys(t, {"m_max", "convention", "pairs"}, "tusnady");
        c.tusnady.m_max = get_or<std::int64_t>(t, "m_max", 512, "tusnady");
        if (c.tusnady.m_max < 1) throw ConfigError("tusnady.m_max must be positive");
        if (t.contains("convention")) c.tusnady.convention = convention_from(get_as<std::string>(t, "convention", "tusnady"));
        if (t.contains("pairs")) {
            for (const auto& p : t.at("pairs")) {
                if (!p.is_array() || p.size() != 2) throw ConfigError("tusnady.pairs entries must be [p_low, p_high]");
                double lo = p[0].get<double>(), hi = p[1].get<double>();
                if (!(lo > 0 && lo <= hi && hi < 1)) throw ConfigError("tusnady.pairs need 0 < p_low <= p_high < 1");
                c.tusnady.pairs.emplace_back(lo, hi);
            }
        }
    }
    if (doc.contains("rates")) {
        const auto& r = doc.at("rates");
        check_keys(r, {"formulas", "t_values", "inputs"}, "rates");
        c.rates.formulas = get_or<std::vector<std::string>>(r, "formulas", {}, "rates");
        for (const auto& f : c.rates.formulas)
            if (!kRateFormulas.count(f)) throw ConfigError("unknown rate formula '" + f + "'");
        c.rates.t_values = get_or<std::vector<double>>(r, "t_values", {1.0}, "rates");
        if (r.contains("inputs")) parse_rate_inputs(r.at("inputs"), c.rates.inputs);
    }
    if (c.kind == ExperimentKind::RatesTable && c.rates.formulas.empty())
        throw ConfigError("rates-table needs rates.formulas");
    if (doc.contains("project")) {
        const auto& p = doc.at("project");
        check_keys(p, {"functions", "max_depth"}, "project");
        c.project.functions = get_or<std::size_t>(p, "functions", 20, "project");
        c.project.max_depth = get_or<int>(p, "max_depth", 4, "project");
        if (c.project.max_depth < 1 || c.project.max_depth > 8) throw ConfigError("project.max_depth must lie in [1,8]");
    }
    // build the law now so that a bad dgp fails before any work
    if (doc.contains("dgp")) {
        if (c.kind == ExperimentKind::CoupleResidual)
            make_regression(c.dgp);
        else
            make_density(c.dgp);
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(doc);
}

bool ExperimentResult::passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const AssertionOutcome& a) { return a.pass; });
}

double median_of(std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DomainError("slope fit: x and y differ in length");
    std::set<double> distinct(x.begin(), x.end());
    if (distinct.size() < 3) throw DomainError("slope fit needs at least 3 distinct abscissae");
    SlopeFit f;
    f.x = x;
    f.y = y;
    const double k = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("slope fit needs positive values");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
        mx += lx.back() / k;
        my += ly.back() / k;
    }
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        double r = ly[i] - f.intercept - f.slope * lx[i];
        sse += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    if (!std::isfinite(f.slope)) throw DomainError("slope fit is not finite");
    return f;
}

SlopeFit fit_slope(const std::vector<SupErrorRecord>& records, Summary summary, Denominator denominator) {
    std::map<std::int64_t, std::vector<double>> by_n;
    for (const auto& r : records) by_n[r.n].push_back(r.sup_xz);
    std::vector<double> x, y;
    for (auto& [n, v] : by_n) {
        double s = 0.0;
        if (summary == Summary::Median) {
            s = median_of(v);
        } else {
            for (double e : v) s += e;
            s /= static_cast<double>(v.size());
        }
        const double nn = static_cast<double>(n);
        x.push_back(nn);
        y.push_back(s / denominator_value(denominator, nn, 1.0));
    }
    SlopeFit f = fit_loglog(x, y);
    f.summary = summary == Summary::Median ? "median" : "mean";
    f.denominator = to_string(denominator);
    return f;
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                next = count;
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned k = std::min<unsigned>(threads, static_cast<unsigned>(count));
    for (unsigned t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

std::uint64_t replication_stream(std::int64_t n, std::uint64_t rep) {
    return (static_cast<std::uint64_t>(n) << 20) | rep;
}

std::shared_ptr<const Density> make_density(const DgpSpec& spec) {
    const auto& p = spec.params;
    const std::string where = "dgp.params";
    if (spec.id == "uniform") {
        check_keys(p, {"lo", "hi"}, where);
        double lo = get_or<double>(p, "lo", 0.0, where), hi = get_or<double>(p, "hi", 1.0, where);
        if (!(hi > lo)) throw ConfigError("uniform dgp needs hi > lo");
        return ProductDensity::uniform(spec.d, lo, hi);
    }
    if (spec.id == "triangular") {
        check_keys(p, {"modes"}, where);
        std::vector<double> modes = get_or<std::vector<double>>(p, "modes", std::vector<double>(spec.d, 0.3), where);
        if (modes.size() != spec.d) throw ConfigError("triangular dgp needs one mode per coordinate");
        std::vector<std::shared_ptr<const Marginal1D>> m;
        for (double md : modes) {
            if (!(md >= 0.0 && md <= 1.0)) throw ConfigError("triangular modes must lie in [0,1]");
            m.push_back(std::make_shared<TriangularMarginal>(0.0, md, 1.0));
        }
        return std::make_shared<ProductDensity>(std::move(m));
    }
    if (spec.id == "affine2d") {
        check_keys(p, {"a0", "a1", "a2"}, where);
        if (spec.d != 2) throw ConfigError("affine2d dgp has d = 2");
        return std::make_shared<AffineDensity2D>(get_or<double>(p, "a0", 1.0, where), get_or<double>(p, "a1", 0.8, where),
                                                 get_or<double>(p, "a2", 0.5, where));
    }
    if (spec.id == "normal") {
        check_keys(p, {"mean", "sigma"}, where);
        double mu = get_or<double>(p, "mean", 0.0, where), s = get_or<double>(p, "sigma", 1.0, where);
        if (!(s > 0.0)) throw ConfigError("normal dgp needs sigma > 0");
        std::vector<std::shared_ptr<const Marginal1D>> m;
        for (std::size_t i = 0; i < spec.d; ++i) m.push_back(std::make_shared<NormalMarginal>(mu, s));
        return std::make_shared<ProductDensity>(std::move(m));
    }
    throw ConfigError("unknown dgp id '" + spec.id + "'");
}

std::shared_ptr<const RegressionDensity> make_regression(const DgpSpec& spec) {
    const auto& p = spec.params;
    const std::string where = "dgp.params";
    std::shared_ptr<const ProductDensity> x = ProductDensity::uniform(spec.d);
    if (spec.id == "normal-location") {
        check_keys(p, {"mu", "sigma", "amplitude"}, where);
        const std::string mu = get_or<std::string>(p, "mu", "sin", where);
        const double s = get_or<double>(p, "sigma", 0.5, where), a = get_or<double>(p, "amplitude", 1.0, where);
        if (!(s > 0.0)) throw ConfigError("normal-location dgp needs sigma > 0");
        const std::size_t d = spec.d;
        std::function<double(const double*)> f;
        if (mu == "sin")
            f = [a, d](const double* v) {
                double t = 0.0;
                for (std::size_t i = 0; i < d; ++i) t += v[i];
                return a * std::sin(2.0 * M_PI * t / static_cast<double>(d));
            };
        else if (mu == "linear")
            f = [a, d](const double* v) {
                double t = 0.0;
                for (std::size_t i = 0; i < d; ++i) t += v[i];
                return a * t;
            };
        else if (mu == "zero")
            f = [](const double*) { return 0.0; };
        else
            throw ConfigError("normal-location mu must be sin, linear or zero");
        return std::make_shared<RegressionDensity>(x, std::make_shared<NormalLocationY>(f, s, mu));
    }
    if (spec.id == "uniform-independent") {
        check_keys(p, {}, where);
        return std::make_shared<RegressionDensity>(x, std::make_shared<UniformIndependentY>(0.0, 1.0));
    }
    throw ConfigError("unknown regression dgp id '" + spec.id + "'");
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned threads) {
    ExperimentResult res;
    res.cfg = cfg;
    switch (cfg.kind) {
        case ExperimentKind::CoupleHaar: run_couple_haar(res, threads); break;
        case ExperimentKind::CoupleLipschitz: run_couple_lipschitz(res, threads); break;
        case ExperimentKind::CoupleResidual: run_couple_residual(res, threads); break;
        case ExperimentKind::HistogramRate: run_histogram_rate(res, threads); break;
        case ExperimentKind::TusnadyVerify: run_tusnady(res, threads); return res;
        case ExperimentKind::RatesTable: run_rates(res); return res;
        case ExperimentKind::ProjectCheck: run_project_check(res); return res;
    }
    fit_and_assert(res);
    return res;
}

void write_csv(const ExperimentResult& result, std::ostream& os) {
    os << kCsvHeader << '\n';
    for (const auto& r : result.rows)
        os << r.experiment << ',' << r.kind << ',' << r.n << ',' << r.K << ',' << r.rep << ',' << fmt(r.sup_xz) << ','
           << fmt(r.sup_proj) << ',' << fmt(r.extra) << '\n';
}

json sidecar_json(const ExperimentResult& result, unsigned threads) {
    json j;
    j["csv_schema_version"] = kCsvSchemaVersion;
    j["experiment"] = to_string(result.cfg.kind);
    j["name"] = result.cfg.name;
    j["seed"] = result.cfg.seed;
    j["threads"] = threads;
    j["generated_at"] = timestamp();
    j["config"] = result.cfg.raw;
    if (result.fit) {
        const auto& f = *result.fit;
        j["slope_fit"] = {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"x", f.x}, {"y", f.y},
                          {"summary", f.summary}, {"denominator", f.denominator}, {"abscissa", f.abscissa}};
    } else {
        j["slope_fit"] = nullptr;
    }
    json s = json::array();
    for (const auto& e : result.summaries)
        s.push_back({{"n", e.n}, {"K", e.K}, {"median", e.median}, {"mean", e.mean}, {"count", e.count}});
    j["summaries"] = s;
    json a = json::array();
    for (const auto& e : result.assertions) a.push_back({{"name", e.name}, {"pass", e.pass}, {"detail", e.detail}});
    j["assertions"] = a;
    j["passed"] = result.passed();
    j["info"] = result.info;
    return j;
}

void write_outputs(const ExperimentResult& result, const std::string& path, unsigned threads) {
    std::ofstream csv(path);
    if (!csv) throw ConfigError("cannot write " + path);
    write_csv(result, csv);
    std::ofstream js(path + ".json");
    if (!js) throw ConfigError("cannot write " + path + ".json");
    js << sidecar_json(result, threads).dump(2) << '\n';
}

}  // namespace kmt
