#include "kmtlab/estimators.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "kmtlab/numerics.hpp"

namespace kmt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_kde(const FunctionClass& cls) {
    if (cls.kind != ClassKind::KdeKernel) throw ConstructionError("kernel density estimator needs a kde class");
}

// Support of h_w intersected with the law's support, with kinks at w and w +- b.
Box kernel_window(const std::vector<double>& w, double b, const Box& sup, std::vector<std::vector<double>>& breaks) {
    const std::size_t d = w.size();
    Box box = sup;
    breaks.assign(d, {});
    for (std::size_t a = 0; a < d; ++a) {
        box.lo[a] = std::max(sup.lo[a], w[a] - b);
        box.hi[a] = std::min(sup.hi[a], w[a] + b);
        if (box.hi[a] < box.lo[a]) box.hi[a] = box.lo[a];
        breaks[a] = {w[a] - b, w[a], w[a] + b};
    }
    return box;
}

std::size_t checked_cell(const SplitTree& partition, const double* w) {
    std::size_t k = partition.locate(w);
    if (k >= partition.num_leaves() || !partition.leaf_box(k).contains_closed(w))
        throw DomainError("query point lies outside every cell of the partition");
    return k;
}

RegressionEstimate flagged_estimate(const std::vector<double>& w, std::size_t ri, double theta) {
    RegressionEstimate e;
    e.w = w;
    e.r_index = ri;
    e.theta = theta;
    e.value = e.linearization = e.nonlinearity = e.bias = kNaN;
    e.flagged = true;
    return e;
}

}  // namespace

std::vector<double> kde_estimate(const SampleBatch& batch, const FunctionClass& cls) {
    require_kde(cls);
    const std::size_t m = cls.size(), n = batch.n();
    std::vector<double> f(m, 0.0);
    if (n == 0) return f;
    // f_hat = b^{-d/2} mean(h_w)
    const double c = std::pow(cls.bandwidth, -0.5 * static_cast<double>(cls.dim)) / static_cast<double>(n);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cls.eval(j, batch.point(i));
        f[j] = c * s;
    }
    return f;
}

std::vector<double> kde_mean(const FunctionClass& cls, const Density& density) {
    require_kde(cls);
    const double c = std::pow(cls.bandwidth, -0.5 * static_cast<double>(cls.dim));
    const Box sup = density.support();
    std::vector<double> mu(cls.size());
    std::vector<std::vector<double>> br;
    for (std::size_t j = 0; j < cls.size(); ++j) {
        Box win = kernel_window(cls.params[j], cls.bandwidth, sup, br);
        if (win.volume() <= 0.0) {
            mu[j] = 0.0;
            continue;
        }
        mu[j] = c * density.integrate1(win, [&](const double* x) { return cls.eval(j, x); }, br);
    }
    return mu;
}

std::vector<double> kde_process(const SampleBatch& batch, const FunctionClass& cls, const std::vector<double>& means) {
    auto f = kde_estimate(batch, cls);
    const double s = std::sqrt(static_cast<double>(batch.n()) * std::pow(cls.bandwidth, static_cast<double>(cls.dim)));
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = s * (f[j] - means[j]);
    return f;
}

std::vector<double> kde_process(const SampleBatch& batch, const FunctionClass& cls, const Density& density) {
    return kde_process(batch, cls, kde_mean(cls, density));
}

std::vector<double> histogram_estimate(const SampleBatch& batch, const SplitTree& partition,
                                       const std::vector<std::vector<double>>& ws) {
    std::vector<double> counts(partition.num_leaves(), 0.0);
    for (std::size_t i = 0; i < batch.n(); ++i) counts[partition.locate(batch.point(i))] += 1.0;
    const double n = static_cast<double>(batch.n());
    std::vector<double> f(ws.size(), 0.0);
    for (std::size_t j = 0; j < ws.size(); ++j) {
        std::size_t k = checked_cell(partition, ws[j].data());
        f[j] = n > 0 ? counts[k] / n : 0.0;
    }
    return f;
}

std::vector<double> histogram_process(const SampleBatch& batch, const SplitTree& partition, double L,
                                      const std::vector<std::vector<double>>& ws) {
    auto f = histogram_estimate(batch, partition, ws);
    const double n = static_cast<double>(batch.n());
    for (std::size_t j = 0; j < ws.size(); ++j) {
        std::size_t k = checked_cell(partition, ws[j].data());
        f[j] = std::sqrt(n * L) * (f[j] - partition.leaf_mass(k));
    }
    return f;
}

std::vector<RegressionEstimate> haar_regression(const SampleBatch& batch, const SplitTree& partition,
                                                const std::vector<RFunction>& rs, const RegressionDensity& joint,
                                                const std::vector<std::vector<double>>& ws) {
    const std::size_t dx = partition.dim();
    if (batch.n() > 0 && batch.d != dx + 1) throw ConstructionError("regression batch must hold (x, y) pairs");
    const std::size_t L = partition.num_leaves(), n = batch.n();
    const ConditionalY& ylaw = joint.y_law();
    std::vector<std::size_t> cell(n);
    std::vector<double> cnt(L, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        cell[i] = partition.locate(batch.point(i));
        cnt[cell[i]] += 1.0;
    }
    std::vector<RegressionEstimate> out;
    out.reserve(rs.size() * ws.size());
    for (std::size_t ri = 0; ri < rs.size(); ++ri) {
        const RFunction& r = rs[ri];
        // per-cell sums of r(y), of theta(x, r), and of the residual
        std::vector<double> sr(L, 0.0), sth(L, 0.0), T(L, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* z = batch.point(i);
            double ry = r(z[dx]);
            double th = ylaw.theta(r, z);
            sr[cell[i]] += ry;
            sth[cell[i]] += th;
            T[cell[i]] += ry - th;
        }
        for (const auto& w : ws) {
            std::size_t k = checked_cell(partition, w.data());
            const double theta = ylaw.theta(r, w.data());
            if (cnt[k] == 0.0) {
                out.push_back(flagged_estimate(w, ri, theta));
                continue;
            }
            RegressionEstimate e;
            e.w = w;
            e.r_index = ri;
            e.theta = theta;
            const double P = partition.leaf_mass(k);
            const double Tk = T[k] / static_cast<double>(n);
            e.value = sr[k] / cnt[k];
            e.linearization = Tk / P;
            e.nonlinearity = Tk * (static_cast<double>(n) / cnt[k] - 1.0 / P);
            e.bias = sth[k] / cnt[k] - theta;
            out.push_back(e);
        }
    }
    return out;
}

ScalarFn haar_equivalent_kernel(const SplitTree& partition, const std::vector<double>& w) {
    const std::size_t k = checked_cell(partition, w.data());
    const double c = 1.0 / (std::sqrt(static_cast<double>(partition.num_leaves())) * partition.leaf_mass(k));
    const SplitTree* t = &partition;
    return [t, k, c](const double* u) { return t->locate(u) == k ? c : 0.0; };
}

std::vector<std::vector<int>> poly_multi_indices(std::size_t d, int p) {
    std::vector<std::vector<int>> out;
    for (int deg = 0; deg <= p; ++deg) {
        std::vector<int> nu(d, 0);
        // enumerate compositions of deg into d parts, first coordinate largest first
        std::function<void(std::size_t, int)> rec = [&](std::size_t a, int left) {
            if (a + 1 == d) {
                nu[a] = left;
                out.push_back(nu);
                return;
            }
            for (int v = left; v >= 0; --v) {
                nu[a] = v;
                rec(a + 1, left - v);
            }
        };
        if (d == 0) continue;
        rec(0, deg);
    }
    return out;
}

std::vector<double> poly_basis(const std::vector<std::vector<int>>& idx, const double* u) {
    std::vector<double> p(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        double v = 1.0;
        for (std::size_t a = 0; a < idx[j].size(); ++a) v *= std::pow(u[a], idx[j][a]) / std::tgamma(idx[j][a] + 1.0);
        p[j] = v;
    }
    return p;
}

double product_kernel(KernelKind k, const double* u, std::size_t d) {
    double v = 1.0;
    for (std::size_t a = 0; a < d && v != 0.0; ++a) v *= kernel_value(k, u[a]);
    return v;
}

std::vector<double> local_poly_gram(const LocalPolyConfig& cfg, const std::vector<std::vector<int>>& idx,
                                    const std::vector<double>& w, const ProductDensity& design) {
    const std::size_t q = idx.size(), d = cfg.d;
    const double b = cfg.bandwidth, bd = std::pow(b, static_cast<double>(d));
    std::vector<std::vector<double>> br;
    Box win = kernel_window(w, b, design.support(), br);
    if (win.volume() <= 0.0) return std::vector<double>(q * q, 0.0);
    // upper triangle packed
    const std::size_t nout = q * (q + 1) / 2;
    std::vector<double> u(d);
    auto f = [&](const double* x, double* out) {
        for (std::size_t a = 0; a < d; ++a) u[a] = (x[a] - w[a]) / b;
        double K = product_kernel(cfg.kernel, u.data(), d) / bd;
        auto p = poly_basis(idx, u.data());
        std::size_t c = 0;
        for (std::size_t i = 0; i < q; ++i)
            for (std::size_t j = i; j < q; ++j) out[c++] = p[i] * p[j] * K;
    };
    QuadOptions opt;
    opt.rel_tol = 1e-12;
    opt.max_depth = 12;
    auto v = design.integrate(win, nout, f, br, opt);
    std::vector<double> H(q * q);
    std::size_t c = 0;
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = i; j < q; ++j) H[i * q + j] = H[j * q + i] = v[c++];
    return H;
}

LocalPolyFit local_poly(const SampleBatch& batch, const LocalPolyConfig& cfg, const std::vector<RFunction>& rs,
                        const RegressionDensity& joint) {
    const std::size_t d = cfg.d;
    if (d < 1 || d > 2) throw ConstructionError("local polynomial regression supports d in {1, 2}");
    if (cfg.degree < 0 || cfg.degree > 2) throw ConstructionError("local polynomial degree must lie in {0, 1, 2}");
    if (!(cfg.bandwidth > 0.0 && cfg.bandwidth <= 1.0)) throw ConstructionError("bandwidth must lie in (0,1]");
    if (cfg.kernel == KernelKind::Uniform) throw ConstructionError("uniform kernel rejected: it is not Lipschitz");
    if (joint.x_law().dim() != d) throw ConstructionError("design dimension does not match the configuration");
    if (batch.n() > 0 && batch.d != d + 1) throw ConstructionError("regression batch must hold (x, y) pairs");

    LocalPolyFit fit;
    fit.cfg = cfg;
    fit.idx = poly_multi_indices(d, cfg.degree);
    const std::size_t q = fit.idx.size(), n = batch.n();
    const double b = cfg.bandwidth, bd = std::pow(b, static_cast<double>(d));
    const ConditionalY& ylaw = joint.y_law();
    const int qi = static_cast<int>(q);

    for (const auto& w : cfg.grid) {
        auto Hv = local_poly_gram(cfg, fit.idx, w, joint.x_law());
        Eigen::MatrixXd H = Eigen::Map<const Eigen::MatrixXd>(Hv.data(), qi, qi);
        Eigen::JacobiSVD<Eigen::MatrixXd> svdH(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::VectorXd e1 = Eigen::VectorXd::Zero(qi);
        e1(0) = 1.0;
        const bool H_ok = svdH.singularValues()(qi - 1) > 1e-10;
        Eigen::VectorXd hrow = H_ok ? Eigen::VectorXd(H.inverse().transpose() * e1)
                                    : Eigen::VectorXd::Constant(qi, kNaN);
        fit.H.push_back(Hv);
        fit.e1Hinv.emplace_back(hrow.data(), hrow.data() + qi);

        // sample Gram matrix and kernel-weighted rows
        Eigen::MatrixXd Hh = Eigen::MatrixXd::Zero(qi, qi);
        std::vector<std::size_t> active;
        std::vector<Eigen::VectorXd> pk;  // p(u_i) K(u_i) / b^d
        std::vector<double> u(d);
        for (std::size_t i = 0; i < n; ++i) {
            const double* z = batch.point(i);
            for (std::size_t a = 0; a < d; ++a) u[a] = (z[a] - w[a]) / b;
            double K = product_kernel(cfg.kernel, u.data(), d) / bd;
            if (K == 0.0) continue;
            auto p = poly_basis(fit.idx, u.data());
            Eigen::Map<const Eigen::VectorXd> pv(p.data(), qi);
            Hh += pv * pv.transpose() * K;
            active.push_back(i);
            pk.emplace_back(pv * K);
        }
        if (n > 0) Hh /= static_cast<double>(n);
        const bool Hh_ok = n > 0 && Eigen::JacobiSVD<Eigen::MatrixXd>(Hh).singularValues()(qi - 1) > 1e-10;
        Eigen::VectorXd hhrow = Hh_ok ? Eigen::VectorXd(Hh.inverse().transpose() * e1) : Eigen::VectorXd();

        for (std::size_t ri = 0; ri < rs.size(); ++ri) {
            const RFunction& r = rs[ri];
            const double theta = ylaw.theta(r, w.data());
            if (!Hh_ok || !H_ok) {
                fit.estimates.push_back(flagged_estimate(w, ri, theta));
                continue;
            }
            Eigen::VectorXd S = Eigen::VectorXd::Zero(qi), Sy = Eigen::VectorXd::Zero(qi), Sth = Eigen::VectorXd::Zero(qi);
            for (std::size_t a = 0; a < active.size(); ++a) {
                const double* z = batch.point(active[a]);
                double ry = r(z[d]);
                double th = ylaw.theta(r, z);
                Sy += pk[a] * ry;
                Sth += pk[a] * th;
                S += pk[a] * (ry - th);
            }
            const double nn = static_cast<double>(n);
            S /= nn;
            Sy /= nn;
            Sth /= nn;
            RegressionEstimate e;
            e.w = w;
            e.r_index = ri;
            e.theta = theta;
            e.value = hhrow.dot(Sy);
            e.linearization = hrow.dot(S);
            e.nonlinearity = (hhrow - hrow).dot(S);
            e.bias = hhrow.dot(Sth) - theta;
            fit.estimates.push_back(e);
        }
    }
    return fit;
}

double equivalent_kernel(const LocalPolyFit& fit, std::size_t wi, const double* u) {
    const double K = product_kernel(fit.cfg.kernel, u, fit.cfg.d);
    if (K == 0.0) return 0.0;
    auto p = poly_basis(fit.idx, u);
    double s = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) s += fit.e1Hinv[wi][j] * p[j];
    return s * K;
}

ScalarFn local_poly_g(const LocalPolyFit& fit, std::size_t wi) {
    const LocalPolyFit* f = &fit;
    const std::size_t d = fit.cfg.d;
    const double b = fit.cfg.bandwidth, c = std::pow(b, -0.5 * static_cast<double>(d));
    const std::vector<double> w = fit.cfg.grid[wi];
    return [f, wi, d, b, c, w](const double* x) {
        double u[2];
        for (std::size_t a = 0; a < d; ++a) u[a] = (x[a] - w[a]) / b;
        return c * equivalent_kernel(*f, wi, u);
    };
}

void write_estimates_csv(std::ostream& os, const std::vector<RegressionEstimate>& est) {
    const std::size_t d = est.empty() ? 1 : est.front().w.size();
    for (std::size_t a = 0; a < d; ++a) os << "w" << (a + 1) << ',';
    os << "r,value,linearization,nonlinearity,bias\n";
    os.precision(17);
    for (const auto& e : est) {
        for (double v : e.w) os << v << ',';
        os << e.r_index << ',' << e.value << ',' << e.linearization << ',' << e.nonlinearity << ',' << e.bias << '\n';
    }
}

}  // namespace kmt
