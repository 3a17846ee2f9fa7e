#include "kmtlab/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kmt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t U(int v) { return static_cast<std::size_t>(v); }

double z_from_tails(double below, double above) {
    if (below <= 0.5) return below <= 0.0 ? -kInf : gaussian_quantile(below);
    return above <= 0.0 ? kInf : -gaussian_quantile(above);
}

}  // namespace

double CoupledRealization::centered_count(int v) const {
    const BinaryTopology& t = tree->topology();
    return static_cast<double>(counts[U(t.left[U(v)])]) - t.p_split(v) * static_cast<double>(counts[U(v)]);
}

std::vector<std::int64_t> CoupledRealization::leaf_counts() const {
    std::vector<std::int64_t> out;
    for (int v : tree->topology().leaves) out.push_back(counts[U(v)]);
    return out;
}

CoupledRealization couple_counts_from_xi(const SplitTree& tree, std::int64_t n, std::vector<double> xi) {
    if (n < 0) throw DomainError("sample size must be nonnegative");
    const BinaryTopology& t = tree.topology();
    if (xi.size() != t.size()) throw DomainError("driver vector has the wrong size");
    CoupledRealization r;
    r.tree = &tree;
    r.n = n;
    r.xi = std::move(xi);
    r.counts.assign(t.size(), 0);
    r.counts[0] = n;
    for (std::size_t v = 0; v < t.size(); ++v) {
        if (t.left[v] < 0) {
            r.xi[v] = 0.0;
            continue;
        }
        const std::int64_t m = r.counts[v];
        std::size_t l = U(t.left[v]), rr = U(t.right[v]);
        std::int64_t left = 0;
        if (m > 0) {
            double u = std::clamp(gaussian_cdf(r.xi[v]), 1e-16, 1.0 - 1e-16);
            left = binomial_quantile({m, t.p_split(static_cast<int>(v))}, u);
        }
        r.counts[l] = left;
        r.counts[rr] = m - left;
    }
    return r;
}

CoupledRealization couple_counts(const SplitTree& tree, std::int64_t n, RngStream& rng) {
    const BinaryTopology& t = tree.topology();
    std::vector<double> xi(t.size(), 0.0);
    for (std::size_t v = 0; v < t.size(); ++v)
        if (t.left[v] >= 0) xi[v] = rng.next_gaussian();
    return couple_counts_from_xi(tree, n, std::move(xi));
}

std::string check_count_invariants(const CoupledRealization& r) {
    const BinaryTopology& t = r.tree->topology();
    if (r.counts[0] != r.n) return "root count differs from n";
    for (std::size_t v = 0; v < t.size(); ++v) {
        if (r.counts[v] < 0) return "negative count at node " + std::to_string(v);
        if (t.left[v] >= 0 && r.counts[U(t.left[v])] + r.counts[U(t.right[v])] != r.counts[v])
            return "additivity fails at node " + std::to_string(v);
    }
    return {};
}

double coupling_equation_lhs(double c0, double pl, double ph) {
    double a = std::sqrt((1.0 - pl) / pl), b = std::sqrt(ph / (1.0 - ph));
    return 60.0 * c0 * ph * a * a * a * std::exp(2.0 * a * c0) + 60.0 * c0 * (1.0 - pl) * b * b * b * std::exp(2.0 * b * c0);
}

CouplingConstants solve_coupling_constants(double p_low, double p_high) {
    if (!(p_low > 0.0 && p_low <= p_high && p_high < 1.0))
        throw DomainError("coupling constants need 0 < p_low <= p_high < 1");
    double a = 1e-9, b = 10.0;
    auto f = [&](double c) { return coupling_equation_lhs(c, p_low, p_high) - 1.0; };
    if (!(f(a) < 0.0 && f(b) > 0.0)) throw DomainError("coupling constants: bracket (1e-9, 10) does not contain a root");
    for (int it = 0; it < 200 && b - a > 1e-18; ++it) {
        double c = 0.5 * (a + b);
        (f(c) < 0.0 ? a : b) = c;
    }
    CouplingConstants k;
    k.p_low = p_low;
    k.p_high = p_high;
    k.c0 = 0.5 * (a + b);
    k.residual = std::abs(f(k.c0));
    if (k.residual > 1e-10) throw DomainError("coupling constants: bisection residual above 1e-10");
    k.c1 = 15.0 * k.c0 * std::sqrt(p_low * (1.0 - p_high));
    k.c2 = 1.0 / (15.0 * k.c0);
    k.c3 = 1.0 / k.c0;
    return k;
}

std::vector<double> quantile_z_range(const BinomialDist& d, std::int64_t lo, std::int64_t hi, AtomConvention conv) {
    lo = std::max<std::int64_t>(lo, 0);
    hi = std::min(hi, d.m);
    if (hi < lo) return {};
    const std::size_t n = static_cast<std::size_t>(hi - lo + 1);
    std::vector<double> pm(n), below(n), above(n), z(n);
    for (std::size_t i = 0; i < n; ++i) pm[i] = binomial_pmf(d, lo + static_cast<std::int64_t>(i));
    double acc = binomial_cdf(d, lo - 1);
    for (std::size_t i = 0; i < n; ++i) {
        below[i] = acc;
        acc += pm[i];
    }
    acc = binomial_sf(d, hi);
    for (std::size_t i = n; i-- > 0;) {
        above[i] = acc;
        acc += pm[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        double bl = below[i], ab = above[i];
        switch (conv) {
            case AtomConvention::Left:
                ab += pm[i];
                break;
            case AtomConvention::Mid:
                bl += 0.5 * pm[i];
                ab += 0.5 * pm[i];
                break;
            case AtomConvention::Right:
                bl += pm[i];
                break;
        }
        z[i] = z_from_tails(bl, ab);
    }
    return z;
}

TusnadyReport tusnady_check(std::int64_t m, AtomConvention conv) {
    if (m < 1) throw DomainError("tusnady check needs m >= 1");
    BinomialDist d{m, 0.5};
    auto z = quantile_z_range(d, 0, m, conv);
    TusnadyReport rep;
    rep.m = m;
    rep.max_margin_quadratic = rep.max_margin_linear = -kInf;
    const double half = 0.5 * static_cast<double>(m), s = 0.5 * std::sqrt(static_cast<double>(m));
    for (std::int64_t x = 0; x <= m; ++x) {
        double Z = z[static_cast<std::size_t>(x)];
        double dx = static_cast<double>(x) - half;
        double q = std::isfinite(Z) ? std::abs(dx - s * Z) - (1.0 + Z * Z / 8.0) : -kInf;
        double l = std::isfinite(Z) ? std::abs(dx) - (1.0 + s * std::abs(Z)) : -kInf;
        if (q > rep.max_margin_quadratic) {
            rep.max_margin_quadratic = q;
            rep.argmax_quadratic = x;
        }
        if (l > rep.max_margin_linear) {
            rep.max_margin_linear = l;
            rep.argmax_linear = x;
        }
    }
    return rep;
}

GeneralizedCouplingReport generalized_coupling_check(std::int64_t m, double p, const CouplingConstants& c,
                                                     AtomConvention conv, bool enforce_precondition) {
    GeneralizedCouplingReport rep;
    rep.m = m;
    rep.p = p;
    if (c.c0 * std::sqrt(static_cast<double>(m)) < 1.0) {
        rep.notice = "c0 sqrt(m) < 1: precondition fails";
        if (enforce_precondition) {
            rep.skipped = true;
            return rep;
        }
    }
    const double mp = static_cast<double>(m) * p, sigma = std::sqrt(mp * (1.0 - p));
    const double rad = c.c1 * static_cast<double>(m);
    rep.event_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(mp - rad)));
    rep.event_hi = std::min<std::int64_t>(m, static_cast<std::int64_t>(std::floor(mp + rad)));
    rep.max_margin_quadratic = rep.max_margin_linear = -kInf;
    auto z = quantile_z_range({m, p}, rep.event_lo, rep.event_hi, conv);
    for (std::int64_t x = rep.event_lo; x <= rep.event_hi; ++x) {
        double Z = z[static_cast<std::size_t>(x - rep.event_lo)];
        double dx = static_cast<double>(x) - mp;
        if (!std::isfinite(Z)) continue;
        rep.max_margin_quadratic = std::max(rep.max_margin_quadratic, std::abs(dx - sigma * Z) - (c.c2 * Z * Z + c.c3));
        rep.max_margin_linear = std::max(rep.max_margin_linear, std::abs(dx) - (1.0 / c.c0 + 2.0 * sigma * std::abs(Z)));
    }
    return rep;
}

std::pair<double, double> bridge_on_haar(const CoupledRealization& r, const HaarDecomposition& dec) {
    if (!dec.tree || &dec.tree->topology() != &r.tree->topology())
        throw DomainError("decomposition and realization use different trees");
    if (r.n == 0) return {0.0, 0.0};
    const BinaryTopology& t = r.tree->topology();
    double x = 0.0, z = 0.0;
    for (std::size_t v = 0; v < t.size(); ++v) {
        if (t.left[v] < 0 || dec.detail[v] == 0.0) continue;
        x += dec.detail[v] * r.centered_count(static_cast<int>(v));
        z += dec.detail[v] * t.detail_scale(static_cast<int>(v)) * r.xi[v];
    }
    return {x / std::sqrt(static_cast<double>(r.n)), z};
}

NodeProcessValues node_indicator_values(const CoupledRealization& r) {
    const BinaryTopology& t = r.tree->topology();
    NodeProcessValues out;
    out.X.assign(t.size(), 0.0);
    out.Z.assign(t.size(), 0.0);
    if (r.n == 0) return out;
    const double n = static_cast<double>(r.n), rn = std::sqrt(n);
    for (std::size_t v = 0; v < t.size(); ++v) out.X[v] = (static_cast<double>(r.counts[v]) - n * t.mass[v]) / rn;
    // 1_left = (p_L/p) 1_v + e_v and 1_right = (p_R/p) 1_v - e_v
    for (std::size_t v = 0; v < t.size(); ++v) {
        if (t.left[v] < 0) continue;
        std::size_t l = U(t.left[v]), rr = U(t.right[v]);
        const double p = t.mass[v];
        const double dz = t.detail_scale(static_cast<int>(v)) * r.xi[v];
        out.Z[l] = t.mass[l] / p * out.Z[v] + dz;
        out.Z[rr] = t.mass[rr] / p * out.Z[v] - dz;
    }
    return out;
}

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& S0, double* jitter_used) {
    Eigen::MatrixXd S = 0.5 * (S0 + S0.transpose());
    const double scale = std::max(1e-300, S.diagonal().cwiseAbs().maxCoeff());
    const double jit[] = {0.0, 1e-12, 1e-10, 1e-8};
    for (double j : jit) {
        Eigen::MatrixXd A = S;
        A.diagonal().array() += j * scale;
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() == Eigen::Success) {
            if (jitter_used) *jitter_used = j;
            return llt.matrixL();
        }
    }
    throw DomainError("residual covariance is not positive semidefinite after jitter");
}

NetProjection project_net(const VecIntegrand& h, std::size_t nf, const SplitTree& tree, const Density& density,
                          bool haar_only, const std::vector<std::vector<double>>& breaks, const QuadOptions& opt) {
    NetProjection net;
    net.tree = &tree;
    net.size = nf;
    net.haar_only = haar_only;
    net.decs = project_L2_many(h, nf, tree, density, breaks, opt);
    for (const auto& d : net.decs) net.means.push_back(d.top);
    if (haar_only || nf == 0) return net;
    const BinaryTopology& t = tree.topology();
    const std::size_t npair = nf * (nf + 1) / 2;
    std::vector<double> hv(nf);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(nf));
    for (std::size_t k = 0; k < t.leaves.size(); ++k) {
        const int v = t.leaves[k];
        const double p = t.mass[U(v)];
        // residual products inside the cell, centered at the cell means
        std::vector<double> mean(nf);
        for (std::size_t f = 0; f < nf; ++f) mean[f] = net.decs[f].coef[U(v)];
        std::vector<double> I;
        try {
            I = density.integrate(
                tree.box(v), npair,
                [&](const double* x, double* out) {
                    h(x, hv.data());
                    std::size_t q = 0;
                    for (std::size_t a = 0; a < nf; ++a)
                        for (std::size_t b = a; b < nf; ++b) out[q++] = (hv[a] - mean[a]) * (hv[b] - mean[b]);
                },
                breaks, opt);
        } catch (const QuadratureError& e) {
            throw QuadratureError(std::string(e.what()) + " in cell " + std::to_string(v));
        }
        (void)p;
        std::size_t q = 0;
        for (std::size_t a = 0; a < nf; ++a)
            for (std::size_t b = a; b < nf; ++b) {
                S(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += I[q];
                if (a != b) S(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) += I[q];
                ++q;
            }
    }
    net.residual_cov = S;
    net.chol = robust_cholesky(S, &net.jitter);
    return net;
}

void draw_residuals(CoupledRealization& r, const NetProjection& net, RngStream& rng) {
    r.W.assign(net.size, 0.0);
    if (net.haar_only || net.chol.size() == 0) return;
    Eigen::VectorXd e(static_cast<Eigen::Index>(net.size));
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = rng.next_gaussian();
    Eigen::VectorXd w = net.chol * e;
    for (std::size_t i = 0; i < net.size; ++i) r.W[i] = w(static_cast<Eigen::Index>(i));
}

std::vector<double> bridge_complete_on_net(const CoupledRealization& r, const NetProjection& net) {
    std::vector<double> z(net.size, 0.0);
    for (std::size_t i = 0; i < net.size; ++i) {
        z[i] = bridge_on_haar(r, net.decs[i]).second;
        if (!net.haar_only && i < r.W.size()) z[i] += r.W[i];
    }
    return z;
}

}  // namespace kmt
