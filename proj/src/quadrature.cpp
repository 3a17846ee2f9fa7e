#include "kmtlab/quadrature.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss.hpp>

namespace kmt {

double Box::volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < dim(); ++i) v *= hi[i] - lo[i];
    return v;
}

double Box::max_side() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) s = std::max(s, hi[i] - lo[i]);
    return s;
}

bool Box::bounded() const {
    for (std::size_t i = 0; i < dim(); ++i)
        if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) return false;
    return true;
}

bool Box::contains_closed(const double* x) const {
    for (std::size_t i = 0; i < dim(); ++i)
        if (x[i] < lo[i] || x[i] > hi[i]) return false;
    return true;
}

namespace {

struct Rule {
    std::array<double, 16> x{}, w{};
    Rule() {
        using G = boost::math::quadrature::gauss<double, 16>;
        const auto& a = G::abscissa();
        const auto& wt = G::weights();
        for (std::size_t i = 0; i < 8; ++i) {
            x[7 - i] = -a[i];
            w[7 - i] = wt[i];
            x[8 + i] = a[i];
            w[8 + i] = wt[i];
        }
    }
};

const Rule& rule() {
    static const Rule r;
    return r;
}

// Tensor rule on one box; accumulates integral into out and |f| mass into absmass.
void tensor(const Box& box, std::size_t nout, const VecIntegrand& f, std::vector<double>& out,
            std::vector<double>& absmass) {
    const Rule& R = rule();
    const std::size_t d = box.dim();
    std::fill(out.begin(), out.end(), 0.0);
    std::fill(absmass.begin(), absmass.end(), 0.0);
    std::vector<double> half(d), mid(d), x(d), val(nout);
    double jac = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
        half[i] = 0.5 * (box.hi[i] - box.lo[i]);
        mid[i] = 0.5 * (box.hi[i] + box.lo[i]);
        jac *= half[i];
    }
    std::vector<int> idx(d, 0);
    while (true) {
        double w = jac;
        for (std::size_t i = 0; i < d; ++i) {
            x[i] = mid[i] + half[i] * R.x[idx[i]];
            w *= R.w[idx[i]];
        }
        f(x.data(), val.data());
        for (std::size_t c = 0; c < nout; ++c) {
            out[c] += w * val[c];
            absmass[c] += w * std::abs(val[c]);
        }
        std::size_t a = 0;
        while (a < d && ++idx[a] == 16) idx[a++] = 0;
        if (a == d) break;
    }
}

std::vector<Box> halves(const Box& box) {
    const std::size_t d = box.dim();
    std::vector<Box> res;
    res.reserve(std::size_t{1} << d);
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
        Box b = box;
        for (std::size_t i = 0; i < d; ++i) {
            double m = 0.5 * (box.lo[i] + box.hi[i]);
            if (mask & (std::size_t{1} << i))
                b.lo[i] = m;
            else
                b.hi[i] = m;
        }
        res.push_back(std::move(b));
    }
    return res;
}

// abs_tol is the share of the top-level tolerance allotted to this box.
void adaptive(const Box& box, std::size_t nout, const VecIntegrand& f, const std::vector<double>& coarse,
              const QuadOptions& opt, int depth, const std::vector<double>& abs_tol, std::vector<double>& acc) {
    auto kids = halves(box);
    std::vector<std::vector<double>> kv(kids.size(), std::vector<double>(nout));
    std::vector<double> fine(nout, 0.0), absm(nout, 0.0), tmp(nout);
    for (std::size_t i = 0; i < kids.size(); ++i) {
        tensor(kids[i], nout, f, kv[i], tmp);
        for (std::size_t c = 0; c < nout; ++c) {
            fine[c] += kv[i][c];
            absm[c] += tmp[c];
        }
    }
    bool ok = true;
    for (std::size_t c = 0; c < nout && ok; ++c) {
        double tol = std::max(opt.rel_tol * std::max(absm[c], 1e-300), abs_tol[c]) + 1e-300;
        if (std::abs(fine[c] - coarse[c]) > tol) ok = false;
    }
    if (ok) {
        for (std::size_t c = 0; c < nout; ++c) acc[c] += fine[c];
        return;
    }
    if (depth >= opt.max_depth) throw QuadratureError("adaptive quadrature did not converge");
    std::vector<double> kid_tol(abs_tol);
    for (double& t : kid_tol) t /= static_cast<double>(kids.size());
    for (std::size_t i = 0; i < kids.size(); ++i) adaptive(kids[i], nout, f, kv[i], opt, depth + 1, kid_tol, acc);
}

void rule1(double a, double b, std::size_t nout, const VecIntegrand1& f, double* out, double* absm, double* val) {
    const Rule& R = rule();
    const double h = 0.5 * (b - a), m = 0.5 * (a + b);
    std::fill(out, out + nout, 0.0);
    std::fill(absm, absm + nout, 0.0);
    for (int i = 0; i < 16; ++i) {
        f(m + h * R.x[static_cast<std::size_t>(i)], val);
        const double w = h * R.w[static_cast<std::size_t>(i)];
        for (std::size_t c = 0; c < nout; ++c) {
            out[c] += w * val[c];
            absm[c] += w * std::abs(val[c]);
        }
    }
}

void adapt1(double a, double b, std::size_t nout, const VecIntegrand1& f, const std::vector<double>& coarse,
            double rel_tol, int depth, int max_depth, std::vector<double> abs_tol, double* acc) {
    const double m = 0.5 * (a + b);
    std::vector<double> l(nout), r(nout), al(nout), ar(nout), val(nout);
    rule1(a, m, nout, f, l.data(), al.data(), val.data());
    rule1(m, b, nout, f, r.data(), ar.data(), val.data());
    bool ok = true;
    for (std::size_t c = 0; c < nout && ok; ++c) {
        double tol = std::max(rel_tol * (al[c] + ar[c]), abs_tol[c]) + 1e-300;
        if (std::abs(l[c] + r[c] - coarse[c]) > tol) ok = false;
    }
    if (ok || depth >= max_depth || !(m > a && b > m)) {
        for (std::size_t c = 0; c < nout; ++c) acc[c] += l[c] + r[c];
        return;
    }
    for (double& t : abs_tol) t *= 0.5;
    adapt1(a, m, nout, f, l, rel_tol, depth + 1, max_depth, abs_tol, acc);
    adapt1(m, b, nout, f, r, rel_tol, depth + 1, max_depth, abs_tol, acc);
}

}  // namespace

void integrate_1d(double a, double b, std::size_t nout, const VecIntegrand1& f, double* acc, double rel_tol,
                  int max_depth) {
    if (!(b > a)) return;
    std::vector<double> coarse(nout), absm(nout), val(nout);
    rule1(a, b, nout, f, coarse.data(), absm.data(), val.data());
    std::vector<double> tol(nout);
    for (std::size_t c = 0; c < nout; ++c) tol[c] = rel_tol * absm[c];
    adapt1(a, b, nout, f, coarse, rel_tol, 0, max_depth, tol, acc);
}

void gauss16(double a, double b, double* nodes, double* weights) {
    const Rule& R = rule();
    double h = 0.5 * (b - a), m = 0.5 * (a + b);
    for (int i = 0; i < 16; ++i) {
        nodes[i] = m + h * R.x[i];
        weights[i] = h * R.w[i];
    }
}

std::vector<double> integrate_box(const Box& box, std::size_t nout, const VecIntegrand& f,
                                  const std::vector<std::vector<double>>& breaks, const QuadOptions& opt) {
    if (!box.bounded()) throw QuadratureError("integrate_box needs a bounded box");
    const std::size_t d = box.dim();
    // Cut points per axis.
    std::vector<std::vector<double>> cuts(d);
    for (std::size_t i = 0; i < d; ++i) {
        cuts[i].push_back(box.lo[i]);
        if (i < breaks.size())
            for (double b : breaks[i])
                if (b > box.lo[i] && b < box.hi[i]) cuts[i].push_back(b);
        cuts[i].push_back(box.hi[i]);
        std::sort(cuts[i].begin(), cuts[i].end());
        cuts[i].erase(std::unique(cuts[i].begin(), cuts[i].end()), cuts[i].end());
    }
    std::vector<double> acc(nout, 0.0), coarse(nout), absm(nout);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t i = 0; i < d; ++i)
        if (cuts[i].size() < 2) return acc;
    if (d == 0) {
        f(nullptr, acc.data());
        return acc;
    }
    while (true) {
        Box sub = box;
        for (std::size_t i = 0; i < d; ++i) {
            sub.lo[i] = cuts[i][idx[i]];
            sub.hi[i] = cuts[i][idx[i] + 1];
        }
        if (sub.volume() > 0.0) {
            tensor(sub, nout, f, coarse, absm);
            std::vector<double> tol(nout);
            for (std::size_t c = 0; c < nout; ++c) tol[c] = opt.rel_tol * absm[c];
            adaptive(sub, nout, f, coarse, opt, 0, tol, acc);
        }
        std::size_t a = 0;
        while (a < d && ++idx[a] == cuts[a].size() - 1) idx[a++] = 0;
        if (a == d) break;
    }
    return acc;
}

double integrate_box(const Box& box, const std::function<double(const double*)>& f,
                     const std::vector<std::vector<double>>& breaks, const QuadOptions& opt) {
    auto v = integrate_box(
        box, 1, [&](const double* x, double* out) { out[0] = f(x); }, breaks, opt);
    return v[0];
}

}  // namespace kmt
