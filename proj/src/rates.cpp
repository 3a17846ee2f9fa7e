#include "kmtlab/rates.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <cmath>
#include <functional>
#include <numbers>

namespace kmt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double req(double v, const char* name) {
    if (std::isnan(v)) throw ConfigError(std::string("missing constant ") + name);
    return v;
}

double need_n(const RateInputs& in) {
    double n = req(in.n, "n");
    if (!(n >= 2.0)) throw ConfigError("n must be at least 2");
    return n;
}

// min with the convention that inf * 0 never arises: an infinite argument loses.
double min2(double a, double b) { return std::min(a, b); }

// second term shared by the smooth-class bound and its closed forms: sqrt(M/n) min{sqrt(log n) sqrt(M), sqrt(c3 K + M)}
double kloc_factor(const RateInputs& in, double n) {
    const double M = req(in.M, "M");
    const double K = req(in.K, "K");
    double alt = kInf;
    if (std::isfinite(K)) alt = std::sqrt(req(in.c3, "c3") * K + M);
    return std::sqrt(M / n) * min2(std::sqrt(std::log(n)) * std::sqrt(M), alt);
}

double first_factor(const RateInputs& in, double n) {
    auto [m, l] = seq_m_l(n, in.d);
    const double M = req(in.M, "M");
    const double L = req(in.L, "L");
    double lip = kInf;
    if (std::isfinite(L)) lip = l * std::sqrt(req(in.c2, "c2") * L);
    return min2(m * std::sqrt(M), lip) * std::sqrt(req(in.c1, "c1") * req(in.TV, "TV"));
}

template <class F>
RateMin minimize_log_delta(F f, double anchor) {
    const double lo = std::log(1e-6), hi = std::log(1.0 - 1e-6);
    const int grid = 120;
    double best_x = lo, best = kInf;
    for (int i = 0; i <= grid; ++i) {
        double x = lo + (hi - lo) * i / grid;
        double v = f(std::exp(x));
        if (v < best) {
            best = v;
            best_x = x;
        }
    }
    double step = (hi - lo) / grid;
    double a = std::max(lo, best_x - step), b = std::min(hi, best_x + step);
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = f(std::exp(x1)), f2 = f(std::exp(x2));
    while (b - a > 1e-8 * std::max(1.0, std::abs(a))) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(std::exp(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(std::exp(x2));
        }
    }
    RateMin r;
    r.delta = std::exp(0.5 * (a + b));
    r.value = f(r.delta);
    if (best < r.value) {
        r.value = best;
        r.delta = std::exp(best_x);
    }
    if (anchor > 0.0 && anchor < 1.0) {
        double va = f(anchor);
        if (va < r.value) {
            r.value = va;
            r.delta = anchor;
        }
    }
    return r;
}

double residual_log_term(const RateInputs& in, double n) {
    const double c = req(in.vc_c, "vc_c") * req(in.vc_c_r, "vc_c_r");
    const double dd = req(in.vc_d, "vc_d") + req(in.vc_d_r, "vc_d_r");
    return in.t + req(in.k, "k") * std::log2(n) + dd * std::log(c * n);
}

}  // namespace

std::pair<double, double> seq_m_l(double n, int d) {
    if (!(n > 1.0)) throw ConfigError("n must exceed 1");
    if (d < 1) throw ConfigError("dimension must be at least 1");
    const double ln = std::log(n);
    double m = d == 1 ? std::sqrt(ln / n) : std::pow(n, -1.0 / (2.0 * d));
    double l = d == 1 ? 1.0 : (d == 2 ? std::sqrt(ln / n) : std::pow(n, -1.0 / d));
    return {m, l};
}

double log_covering(const RateInputs& in, double delta) {
    if (in.entropy == EntropyKind::VC)
        return std::max(0.0, std::log(req(in.vc_c, "vc_c")) - req(in.vc_d, "vc_d") * std::log(delta));
    return req(in.poly_a, "poly_a") * std::pow(delta, -req(in.poly_b, "poly_b"));
}

double entropy_integral(const RateInputs& in, double delta) {
    // eps = delta e^{-s}; the integrand is built in log space so that it stays finite as s grows
    boost::math::quadrature::exp_sinh<double> integrator;
    const double ld = std::log(delta);
    std::function<double(double)> log1p_logN;
    if (in.entropy == EntropyKind::VC) {
        const double lc = std::log(req(in.vc_c, "vc_c")), vd = req(in.vc_d, "vc_d");
        log1p_logN = [=](double s) { return std::log1p(std::max(0.0, lc + vd * (s - ld))); };
    } else {
        const double la = std::log(req(in.poly_a, "poly_a")), b = req(in.poly_b, "poly_b");
        log1p_logN = [=](double s) {
            double x = la + b * (s - ld);  // log of log N
            return x > 30.0 ? x : std::log1p(std::exp(x));
        };
    }
    auto f = [&](double s) { return std::exp(-s + 0.5 * log1p_logN(s)); };
    return delta * integrator.integrate(f, 0.0, kInf, 1e-12);
}

double fluctuation_F(const RateInputs& in, double delta) {
    const double n = need_n(in);
    const double M = req(in.M, "M");
    const double J = entropy_integral(in, delta);
    return J * M + M * J * J / (delta * delta * std::sqrt(n)) + delta * M * std::sqrt(in.t) + M / std::sqrt(n) * in.t;
}

RateAt rate_theorem1(const RateInputs& in, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0,1)");
    const double n = need_n(in);
    const double lc = in.t + log_covering(in, delta);
    RateAt r;
    r.delta = delta;
    r.main = first_factor(in, n) * std::sqrt(lc) + kloc_factor(in, n) * lc;
    r.fluct = fluctuation_F(in, delta);
    return r;
}

RateMin rate_theorem1_min(const RateInputs& in) {
    const double n = need_n(in);
    return minimize_log_delta([&](double dl) { return rate_theorem1(in, dl).total(); }, 1.0 / std::sqrt(n));
}

double corollary_A_root_n(const RateInputs& in) {
    const double n = need_n(in);
    // log N(n^{-1/2}) = log c + (d_vc / 2) log n
    const double lc = in.t + std::max(0.0, std::log(req(in.vc_c, "vc_c")) + 0.5 * req(in.vc_d, "vc_d") * std::log(n));
    auto [m, l] = seq_m_l(n, in.d);
    const double M = req(in.M, "M"), L = req(in.L, "L"), c1 = req(in.c1, "c1"), TV = req(in.TV, "TV");
    const double a = m * std::sqrt(M);
    const double b = std::isfinite(L) ? l * std::sqrt(req(in.c2, "c2") * L) : kInf;
    return std::min(a, b) * std::sqrt(c1 * TV) * std::sqrt(lc) + kloc_factor(in, n) * lc;
}

double rho_corollary1(const RateInputs& in) {
    const double n = need_n(in);
    auto [m, l] = seq_m_l(n, in.d);
    (void)l;
    const double M = req(in.M, "M");
    const double ln = std::log(n);
    return m * std::sqrt(ln) * std::sqrt(req(in.c1, "c1") * M * req(in.TV, "TV")) + ln * kloc_factor(in, n);
}

double rho_corollary2(const RateInputs& in) {
    const double n = need_n(in);
    const double ln = std::log(n);
    return first_factor(in, n) * std::sqrt(ln) + ln * kloc_factor(in, n);
}

std::pair<double, double> rho_corollary3(const RateInputs& in) {
    const double n = need_n(in);
    const double b = req(in.poly_b, "poly_b");
    if (!(b > 0.0 && b < 2.0)) throw ConfigError("poly_b must lie in (0,2)");
    auto [m, l] = seq_m_l(n, in.d);
    const double M = req(in.M, "M"), TV = req(in.TV, "TV"), c1 = req(in.c1, "c1"), L = req(in.L, "L");
    const double ln = std::log(n);
    const double kf = kloc_factor(in, n);
    const double q1 = c1 * m * m * TV / M;
    double r1 = m * std::sqrt(c1 * M * TV) * (std::sqrt(ln) + std::pow(q1, -b / 4.0)) +
                kf * (ln + std::pow(q1, -b / 2.0));
    double r2 = kInf;
    if (std::isfinite(L)) {
        const double c2 = req(in.c2, "c2");
        const double q2 = c1 * c2 * l * l * L * TV / (M * M);
        r2 = l * std::sqrt(c1 * c2 * L * TV) * (std::sqrt(ln) + std::pow(q2, -b / 4.0)) +
             kf * (ln + std::pow(q2, -b / 2.0));
    }
    return {r1, r2};
}

double c_v_alpha(double v, double alpha) {
    return v * std::max(1.0 + std::pow(2.0 * alpha, alpha / 2.0), 1.0 + std::pow(4.0 * alpha, alpha));
}

namespace {

std::pair<double, double> theorem2_branches(const RateInputs& in, double n) {
    const double d = in.d;
    const double M = req(in.M, "M"), E = req(in.E, "E"), TV = req(in.TV, "TV"), c1 = req(in.c1, "c1");
    const double L = req(in.L, "L");
    double b1 = std::pow(std::pow(c1, d) * std::pow(M, d + 1) * std::pow(TV, d) * E / n, 1.0 / (2 * d + 2));
    double b2 = kInf;
    if (std::isfinite(L)) {
        const double c2 = req(in.c2, "c2");
        b2 = std::pow(std::pow(c1, d / 2) * std::pow(c2, d / 2) * M * E * std::pow(TV, d / 2) * std::pow(L, d / 2) / n,
                      1.0 / (d + 2));
    }
    return {b1, b2};
}

}  // namespace

Theorem2Rate rate_theorem2(const RateInputs& in) {
    const double n = need_n(in);
    Theorem2Rate r;
    auto [b1, b2] = theorem2_branches(in, n);
    r.branch1 = b1;
    r.branch2 = b2;
    r.A = std::min(b1, b2);
    const double alpha = req(in.alpha, "alpha");
    const double lt = residual_log_term(in, n);
    r.C_va = c_v_alpha(req(in.v, "v"), alpha);
    r.T = r.A * std::pow(lt, alpha + 1.5) * std::sqrt(static_cast<double>(in.d)) +
          req(in.M, "M") / std::sqrt(n) * std::pow(lt, alpha + 1.0);
    return r;
}

double rho_corollary4(const RateInputs& in) {
    const double n = need_n(in);
    auto [b1, b2] = theorem2_branches(in, n);
    const double alpha = req(in.alpha, "alpha");
    const double ln = std::log(n);
    return std::min(b1, b2) * std::pow(ln, alpha + 1.5) + std::pow(ln, alpha + 1.0) / std::sqrt(n) * req(in.M, "M");
}

RateAt rate_theorem3(const RateInputs& in, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0,1)");
    const double n = need_n(in);
    const double M = req(in.M, "M"), E = req(in.E, "E"), Lc = req(in.cells, "cells"), S = req(in.S, "S");
    const double lc = in.t + log_covering(in, delta);
    RateAt r;
    r.delta = delta;
    r.main = std::sqrt(M * E / (n / Lc)) * std::sqrt(lc) + std::sqrt(std::min(std::log2(Lc), S * S) / n) * M * lc;
    r.fluct = fluctuation_F(in, delta);
    return r;
}

RateMin rate_theorem3_min(const RateInputs& in) {
    const double n = need_n(in);
    return minimize_log_delta([&](double dl) { return rate_theorem3(in, dl).total(); }, 1.0 / std::sqrt(n));
}

double rho_corollary5(const RateInputs& in) {
    const double n = need_n(in);
    const double M = req(in.M, "M"), E = req(in.E, "E"), Lc = req(in.cells, "cells"), S = req(in.S, "S");
    const double ln = std::log(n);
    return std::sqrt(M * E / (n / Lc)) * std::sqrt(ln) + std::sqrt(std::min(std::log2(Lc), S * S) / n) * M * ln;
}

Theorem4Rate rate_theorem4(const RateInputs& in) {
    const double n = need_n(in);
    const double M = req(in.M, "M"), E = req(in.E, "E"), Lc = req(in.cells, "cells");
    const double alpha = req(in.alpha, "alpha");
    const double lt = residual_log_term(in, n);
    Theorem4Rate r;
    r.C_va = c_v_alpha(req(in.v, "v"), alpha);
    r.U = (std::sqrt(in.d * M * E / (n / Lc)) + M / std::sqrt(n) * std::pow(std::log(n), alpha)) *
          std::pow(lt, alpha + 1.0);
    if (in.r_size > 1)
        r.V = std::sqrt(M * E) * req(in.max_side, "max_side") * req(in.L_theta, "L_theta") * std::sqrt(lt);
    return r;
}

double rho_corollary6(const RateInputs& in) {
    const double n = need_n(in);
    const double M = req(in.M, "M"), E = req(in.E, "E"), Lc = req(in.cells, "cells");
    const double alpha = req(in.alpha, "alpha");
    const double ln = std::log(n);
    double v = std::sqrt(M * E / (n / Lc)) * std::pow(ln, alpha + 1.0) + M / std::sqrt(n) * std::pow(ln, 2 * alpha + 1);
    if (in.r_size > 1) v += std::sqrt(M * E) * req(in.max_side, "max_side") * std::sqrt(ln);
    return v;
}

std::vector<double> rosenblatt(const Density& density, const double* x) {
    if (!density.has_rosenblatt()) throw ConstructionError("density has no Rosenblatt transform: " + density.describe());
    return density.rosenblatt(x);
}

std::vector<std::vector<double>> rosenblatt_jacobian(const Density& density, const double* x) {
    const std::size_t d = density.dim();
    std::vector<std::vector<double>> J(d, std::vector<double>(d, 0.0));
    auto diag = density.conditional_densities(x);
    std::vector<double> y(x, x + d);
    const Box sup = density.support();
    for (std::size_t c = 0; c + 1 < d; ++c) {
        double h = 1e-6 * std::max(1.0, std::abs(x[c]));
        double lo = std::max(sup.lo[c], x[c] - h), hi = std::min(sup.hi[c], x[c] + h);
        y[c] = hi;
        auto Tp = density.rosenblatt(y.data());
        y[c] = lo;
        auto Tm = density.rosenblatt(y.data());
        y[c] = x[c];
        for (std::size_t r = c + 1; r < d; ++r) J[r][c] = (Tp[r] - Tm[r]) / (hi - lo);
    }
    for (std::size_t i = 0; i < d; ++i) J[i][i] = diag[i];
    return J;
}

double c3_from(double c1, double c2, int d) {
    return std::pow(2.0, d - 1) * std::pow(static_cast<double>(d), d / 2.0 - 1.0) * c1 * std::pow(c2, d - 1);
}

double c3_from_alt(double c1, double c2, int d) {
    return std::pow(static_cast<double>(d), -0.5) * std::pow(2.0 * std::sqrt(static_cast<double>(d)), d - 1) * c1 *
           std::pow(c2, d - 1);
}

TransformConstants transform_constants(const Density& density, TransformCase which, std::size_t grid) {
    const std::size_t d = density.dim();
    const int di = static_cast<int>(d);
    TransformConstants out;
    const Box sup = density.support();
    switch (which) {
        case TransformCase::UniformBox: {
            auto* pd = dynamic_cast<const ProductDensity*>(&density);
            if (!pd || !pd->is_uniform() || !sup.bounded())
                throw ConstructionError("uniform-box constants need a uniform law on a bounded rectangle");
            double mx = 0.0, prod = 1.0;
            for (std::size_t i = 0; i < d; ++i) {
                double s = sup.hi[i] - sup.lo[i];
                mx = std::max(mx, s);
                prod *= s;
            }
            out.c1 = d * mx / prod;
            out.c2 = mx;
            out.c3 = std::pow(2.0, di - 1) * std::pow(static_cast<double>(d), d / 2.0) * std::pow(mx, di) / prod;
            out.method = "closed form for a uniform rectangle";
            return out;
        }
        case TransformCase::BoundedRosenblatt: {
            if (!density.has_rosenblatt() || !sup.bounded())
                throw ConstructionError("bounded Rosenblatt case needs a bounded rectangle and a triangular transform");
            double c1 = 0.0, c2 = 0.0, fmax = 0.0, fmin = kInf, side = 0.0;
            for (std::size_t i = 0; i < d; ++i) side = std::max(side, sup.hi[i] - sup.lo[i]);
            std::vector<std::size_t> idx(d, 0);
            std::vector<double> x(d);
            while (true) {
                for (std::size_t i = 0; i < d; ++i)
                    x[i] = sup.lo[i] + (sup.hi[i] - sup.lo[i]) * (idx[i] + 0.5) / static_cast<double>(grid);
                auto J = rosenblatt_jacobian(density, x.data());
                Eigen::MatrixXd A(di, di);
                for (int r = 0; r < di; ++r)
                    for (int c = 0; c < di; ++c) A(r, c) = J[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
                auto sv = svd.singularValues();  // descending
                double p = 1.0;
                for (int j = 0; j + 1 < di; ++j) p *= sv(j);
                c1 = std::max(c1, d * p);
                c2 = std::max(c2, 1.0 / sv(di - 1));
                double f = density.density(x.data());
                fmax = std::max(fmax, f);
                fmin = std::min(fmin, f);
                std::size_t a = 0;
                while (a < d && ++idx[a] == grid) idx[a++] = 0;
                if (a == d) break;
            }
            out.c1 = c1;
            out.c2 = c2;
            out.c3 = c3_from(c1, c2, di);
            out.c1_bound = d * fmax * fmax / fmin * side;
            out.c2_bound = fmax / fmin * side;
            out.method = "grid supremum of singular values of the Rosenblatt Jacobian";
            return out;
        }
        case TransformCase::Gaussian: {
            auto* pd = dynamic_cast<const ProductDensity*>(&density);
            if (!pd) throw ConstructionError("Gaussian case needs a product of normal marginals");
            double fm = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                auto* nm = dynamic_cast<const NormalMarginal*>(&pd->marginal(i));
                if (!nm) throw ConstructionError("Gaussian case needs a product of normal marginals");
                // sup of the normal density is its value at the mean
                fm = std::max(fm, nm->pdf(nm->quantile(0.5)));
            }
            out.c1 = d * std::pow(fm, di - 1);
            out.c2 = kInf;
            out.c3 = kInf;
            out.method = "conditional-density bound; c2 and c3 are unbounded for Gaussian support";
            return out;
        }
    }
    throw ConstructionError("unsupported transform case");
}

}  // namespace kmt
