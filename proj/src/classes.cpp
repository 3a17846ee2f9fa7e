#include "kmtlab/classes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kmt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double box_overlap_volume(const Box& a, const Box& b) {
    double v = 1.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        double w = std::min(a.hi[i], b.hi[i]) - std::max(a.lo[i], b.lo[i]);
        if (w <= 0.0) return 0.0;
        v *= w;
    }
    return v;
}

// Points of a tensor grid with m points per axis over box.
std::vector<std::vector<double>> tensor_points(const Box& box, std::size_t m) {
    const std::size_t d = box.dim();
    std::vector<std::vector<double>> pts;
    std::vector<std::size_t> idx(d, 0);
    while (true) {
        std::vector<double> x(d);
        for (std::size_t a = 0; a < d; ++a)
            x[a] = box.lo[a] + (box.hi[a] - box.lo[a]) * static_cast<double>(idx[a]) / static_cast<double>(m - 1);
        pts.push_back(std::move(x));
        std::size_t a = 0;
        while (a < d && ++idx[a] == m) idx[a++] = 0;
        if (a == d) break;
    }
    return pts;
}

std::vector<std::vector<double>> draw_points(const Density& measure, std::size_t n, RngStream& rng) {
    Box sup = measure.support();
    std::vector<std::vector<double>> pts(n, std::vector<double>(measure.dim()));
    for (auto& p : pts) measure.sample(sup, rng, p.data());
    return pts;
}

// Values of all members at the points, row per member.
std::vector<std::vector<double>> value_matrix(const FunctionClass& cls, const std::vector<std::vector<double>>& pts) {
    std::vector<std::vector<double>> V(cls.size(), std::vector<double>(pts.size()));
    std::vector<double> buf(cls.size());
    for (std::size_t p = 0; p < pts.size(); ++p) {
        cls.eval_all(pts[p].data(), buf.data());
        for (std::size_t i = 0; i < cls.size(); ++i) V[i][p] = buf[i];
    }
    return V;
}

double envelope_norm(const std::vector<std::vector<double>>& V) {
    if (V.empty()) return 0.0;
    const std::size_t np = V[0].size();
    double s = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
        double mx = 0.0;
        for (const auto& row : V) mx = std::max(mx, std::abs(row[p]));
        s += mx * mx;
    }
    return std::sqrt(s / static_cast<double>(np));
}

double l2_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) s += (a[p] - b[p]) * (a[p] - b[p]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

std::string to_string(ClassKind k) {
    switch (k) {
        case ClassKind::HaarSpan:
            return "haar-span";
        case ClassKind::KdeKernel:
            return "kde-kernel";
        case ClassKind::LipschitzGeneric:
            return "lipschitz-generic";
        case ClassKind::ResidualPair:
            return "residual-pair";
    }
    return "?";
}

KernelKind kernel_from_string(const std::string& s) {
    if (s == "triangular") return KernelKind::Triangular;
    if (s == "epanechnikov") return KernelKind::Epanechnikov;
    if (s == "biweight") return KernelKind::Biweight;
    if (s == "uniform") return KernelKind::Uniform;
    throw ConstructionError("unknown kernel '" + s + "'");
}

double kernel_value(KernelKind k, double u) {
    double a = std::abs(u);
    if (a > 1.0) return 0.0;
    switch (k) {
        case KernelKind::Triangular:
            return 1.0 - a;
        case KernelKind::Epanechnikov:
            return 0.75 * (1.0 - u * u);
        case KernelKind::Biweight:
            return 15.0 / 16.0 * (1.0 - u * u) * (1.0 - u * u);
        case KernelKind::Uniform:
            return 0.5;
    }
    return 0.0;
}

double kernel_slope(KernelKind k, double u) {
    if (std::abs(u) > 1.0) return 0.0;
    switch (k) {
        case KernelKind::Triangular:
            return u > 0 ? -1.0 : (u < 0 ? 1.0 : 0.0);
        case KernelKind::Epanechnikov:
            return -1.5 * u;
        case KernelKind::Biweight:
            return -3.75 * u * (1.0 - u * u);
        case KernelKind::Uniform:
            return 0.0;
    }
    return 0.0;
}

double kernel_abs_slope(KernelKind k, double u) {
    if (k == KernelKind::Triangular) return std::abs(u) <= 1.0 ? 1.0 : 0.0;
    return std::abs(kernel_slope(k, u));
}

double kernel_sup(KernelKind k) { return kernel_value(k, 0.0); }

double kernel_lipschitz(KernelKind k) {
    switch (k) {
        case KernelKind::Triangular:
            return 1.0;
        case KernelKind::Epanechnikov:
            return 1.5;
        case KernelKind::Biweight:
            return 2.5 / std::sqrt(3.0);
        case KernelKind::Uniform:
            return kInf;
    }
    return kInf;
}

void FunctionClass::eval_all(const double* x, double* out) const {
    if (all_fn) {
        all_fn(x, out);
        for (std::size_t i = 0; i < size(); ++i) out[i] *= scale;
        return;
    }
    for (std::size_t i = 0; i < size(); ++i) out[i] = scale * eval_fn(i, x);
}

bool FunctionClass::grad(std::size_t i, const double* x, double* out) const {
    if (!grad_fn) return false;
    grad_fn(i, x, out);
    for (std::size_t a = 0; a < dim; ++a) out[a] *= scale;
    return true;
}

VecIntegrand FunctionClass::integrand() const {
    return [this](const double* x, double* out) { eval_all(x, out); };
}

FunctionClass FunctionClass::subset(const std::vector<std::size_t>& idx) const {
    FunctionClass s = *this;
    s.params.clear();
    s.leaf_coefs.clear();
    s.pairs.clear();
    for (std::size_t i : idx) {
        s.params.push_back(params[i]);
        if (!leaf_coefs.empty()) s.leaf_coefs.push_back(leaf_coefs[i]);
        if (!pairs.empty()) s.pairs.push_back(pairs[i]);
    }
    auto base_eval = eval_fn;
    auto base_grad = grad_fn;
    s.eval_fn = [base_eval, idx](std::size_t i, const double* x) { return base_eval(idx[i], x); };
    if (base_grad) s.grad_fn = [base_grad, idx](std::size_t i, const double* x, double* g) { base_grad(idx[i], x, g); };
    if (all_fn) {
        auto base_all = all_fn;
        std::size_t n = size();
        s.all_fn = [base_all, idx, n](const double* x, double* out) {
            std::vector<double> full(n);
            base_all(x, full.data());
            for (std::size_t i = 0; i < idx.size(); ++i) out[i] = full[idx[i]];
        };
    }
    return s;
}

std::vector<std::vector<double>> regular_grid(std::size_t d, std::size_t m, double lo, double hi) {
    if (m == 1) {
        std::vector<std::vector<double>> g{std::vector<double>(d, 0.5 * (lo + hi))};
        return g;
    }
    return tensor_points(Box(std::vector<double>(d, lo), std::vector<double>(d, hi)), m);
}

FunctionClass kde_class(KernelKind kernel, double b, const std::vector<std::vector<double>>& grid, std::size_t d) {
    if (kernel == KernelKind::Uniform)
        throw ConstructionError(
            "uniform kernel rejected: it is not Lipschitz, and the kernel density coupling needs a Lipschitz kernel");
    if (!(b > 0.0 && b <= 1.0)) throw ConstructionError("bandwidth must lie in (0,1]");
    FunctionClass c;
    c.kind = ClassKind::KdeKernel;
    c.name = "kde";
    c.dim = d;
    c.kernel = kernel;
    c.bandwidth = b;
    c.params = grid;
    if (grid.size() > 1) {
        double mn = kInf;
        for (std::size_t i = 1; i < grid.size(); ++i) {
            double dist = 0.0;
            for (std::size_t a = 0; a < d; ++a) dist = std::max(dist, std::abs(grid[i][a] - grid[i - 1][a]));
            if (dist > 0) mn = std::min(mn, dist);
        }
        c.delta = mn;
    }
    const double norm = std::pow(b, -0.5 * static_cast<double>(d));
    auto W = c.params;
    c.eval_fn = [W, b, d, norm, kernel](std::size_t i, const double* x) {
        double v = norm;
        for (std::size_t a = 0; a < d; ++a) {
            v *= kernel_value(kernel, (x[a] - W[i][a]) / b);
            if (v == 0.0) break;
        }
        return v;
    };
    c.grad_fn = [W, b, d, norm, kernel](std::size_t i, const double* x, double* g) {
        for (std::size_t a = 0; a < d; ++a) {
            double v = norm / b;
            for (std::size_t e = 0; e < d; ++e) {
                double u = (x[e] - W[i][e]) / b;
                v *= e == a ? kernel_slope(kernel, u) : kernel_value(kernel, u);
            }
            g[a] = v;
        }
    };
    c.breaks.assign(d, {});
    for (const auto& w : grid)
        for (std::size_t a = 0; a < d; ++a) {
            c.breaks[a].push_back(w[a] - b);
            c.breaks[a].push_back(w[a] + b);
            c.breaks[a].push_back(w[a]);
        }
    for (auto& br : c.breaks) {
        std::sort(br.begin(), br.end());
        br.erase(std::unique(br.begin(), br.end()), br.end());
    }
    return c;
}

FunctionClass haar_span_class(const SplitTree& tree, std::vector<std::vector<double>> leaf_coefs) {
    FunctionClass c;
    c.kind = ClassKind::HaarSpan;
    c.name = "haar";
    c.dim = tree.dim();
    c.tree = &tree;
    const std::size_t L = tree.num_leaves();
    for (const auto& v : leaf_coefs)
        if (v.size() != L) throw ConstructionError("leaf coefficient vector has the wrong size");
    c.leaf_coefs = std::move(leaf_coefs);
    for (std::size_t i = 0; i < c.leaf_coefs.size(); ++i) c.params.push_back({static_cast<double>(i)});
    auto coefs = std::make_shared<std::vector<std::vector<double>>>(c.leaf_coefs);
    const SplitTree* t = &tree;
    c.eval_fn = [coefs, t](std::size_t i, const double* x) { return (*coefs)[i][t->locate(x)]; };
    c.all_fn = [coefs, t](const double* x, double* out) {
        std::size_t k = t->locate(x);
        for (std::size_t i = 0; i < coefs->size(); ++i) out[i] = (*coefs)[i][k];
    };
    c.breaks.assign(c.dim, {});
    for (std::size_t k = 0; k < L; ++k)
        for (std::size_t a = 0; a < c.dim; ++a) {
            c.breaks[a].push_back(tree.leaf_box(k).lo[a]);
            c.breaks[a].push_back(tree.leaf_box(k).hi[a]);
        }
    for (auto& br : c.breaks) {
        std::sort(br.begin(), br.end());
        br.erase(std::unique(br.begin(), br.end()), br.end());
    }
    return c;
}

FunctionClass histogram_class(const SplitTree& tree) {
    const std::size_t L = tree.num_leaves();
    std::vector<std::vector<double>> coefs(L, std::vector<double>(L, 0.0));
    for (std::size_t l = 0; l < L; ++l) coefs[l][l] = std::sqrt(static_cast<double>(L));
    FunctionClass c = haar_span_class(tree, std::move(coefs));
    c.name = "histogram";
    return c;
}

FunctionClass leaf_indicator_class(const SplitTree& tree) {
    const std::size_t L = tree.num_leaves();
    std::vector<std::vector<double>> coefs(L, std::vector<double>(L, 0.0));
    for (std::size_t l = 0; l < L; ++l) coefs[l][l] = 1.0;
    FunctionClass c = haar_span_class(tree, std::move(coefs));
    c.name = "cell-indicators";
    return c;
}

FunctionClass gaussian_bump_class(const std::vector<std::vector<double>>& centres, double width, std::size_t d) {
    if (!(width > 0.0)) throw ConstructionError("bump width must be positive");
    FunctionClass c;
    c.kind = ClassKind::LipschitzGeneric;
    c.name = "gaussian-bumps";
    c.dim = d;
    c.params = centres;
    c.bandwidth = width;
    auto W = centres;
    const double s2 = width * width;
    c.eval_fn = [W, s2, d](std::size_t i, const double* x) {
        double q = 0.0;
        for (std::size_t a = 0; a < d; ++a) q += (x[a] - W[i][a]) * (x[a] - W[i][a]);
        return std::exp(-0.5 * q / s2);
    };
    c.grad_fn = [W, s2, d](std::size_t i, const double* x, double* g) {
        double q = 0.0;
        for (std::size_t a = 0; a < d; ++a) q += (x[a] - W[i][a]) * (x[a] - W[i][a]);
        double v = std::exp(-0.5 * q / s2);
        for (std::size_t a = 0; a < d; ++a) g[a] = -(x[a] - W[i][a]) / s2 * v;
    };
    return c;
}

FunctionClass lipschitz_class(std::vector<ScalarFn> fns, std::size_t d, std::string name) {
    FunctionClass c;
    c.kind = ClassKind::LipschitzGeneric;
    c.name = std::move(name);
    c.dim = d;
    for (std::size_t i = 0; i < fns.size(); ++i) c.params.push_back({static_cast<double>(i)});
    auto F = std::make_shared<std::vector<ScalarFn>>(std::move(fns));
    c.eval_fn = [F](std::size_t i, const double* x) { return (*F)[i](x); };
    c.grad_fn = [F, d](std::size_t i, const double* x, double* g) {
        std::vector<double> y(x, x + d);
        for (std::size_t a = 0; a < d; ++a) {
            const double h = 1e-6;
            y[a] = x[a] + h;
            double fp = (*F)[i](y.data());
            y[a] = x[a] - h;
            double fm = (*F)[i](y.data());
            y[a] = x[a];
            g[a] = (fp - fm) / (2 * h);
        }
    };
    return c;
}

FunctionClass residual_pair_class(std::vector<ScalarFn> g, std::vector<RFunction> r, std::size_t dx, std::string name) {
    FunctionClass c;
    c.kind = ClassKind::ResidualPair;
    c.name = std::move(name);
    c.dim = dx + 1;
    c.g = std::move(g);
    c.r = std::move(r);
    for (std::size_t a = 0; a < c.g.size(); ++a)
        for (std::size_t b = 0; b < c.r.size(); ++b) {
            c.pairs.emplace_back(a, b);
            c.params.push_back({static_cast<double>(a), static_cast<double>(b)});
        }
    auto G = std::make_shared<std::vector<ScalarFn>>(c.g);
    auto R = std::make_shared<std::vector<RFunction>>(c.r);
    auto P = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(c.pairs);
    c.eval_fn = [G, R, P, dx](std::size_t i, const double* z) {
        auto [a, b] = (*P)[i];
        return (*G)[a](z) * (*R)[b](z[dx]);
    };
    c.breaks.assign(dx + 1, {});
    for (const auto& rr : c.r)
        if (rr.kind == RFunction::Kind::Threshold) c.breaks[dx].push_back(rr.y0);
    return c;
}

std::size_t greedy_cover_size(const FunctionClass& cls, const std::vector<std::vector<double>>& points, double eps) {
    if (cls.size() == 0) return 0;
    auto V = value_matrix(cls, points);
    const double rad = eps * envelope_norm(V);
    std::vector<char> covered(cls.size(), 0);
    std::size_t centres = 0;
    for (std::size_t i = 0; i < cls.size(); ++i) {
        if (covered[i]) continue;
        ++centres;
        for (std::size_t j = i; j < cls.size(); ++j)
            if (!covered[j] && l2_dist(V[i], V[j]) <= rad) covered[j] = 1;
    }
    return centres;
}

std::pair<double, double> fit_vc_parameters(const FunctionClass& cls, const Density& measure, std::uint64_t seed) {
    if (cls.size() == 0) return {0.0, 0.0};
    const double vd = static_cast<double>(cls.params.empty() ? 1 : cls.params[0].size()) + 1.0;
    double vc = 1.0;
    for (std::uint64_t rep = 0; rep < 3; ++rep) {
        RngStream rng(seed, rep);
        auto pts = draw_points(measure, 150, rng);
        for (double eps : {0.6, 0.4, 0.2, 0.05}) {
            double n = static_cast<double>(greedy_cover_size(cls, pts, eps));
            vc = std::max(vc, n * std::pow(eps, vd));
        }
    }
    return {vc, vd};
}

DeltaNet build_delta_net(const FunctionClass& cls, double delta, const Density& measure, std::size_t sample,
                         std::uint64_t seed) {
    if (!(delta > 0.0 && delta <= 1.0)) throw ConstructionError("net spacing must lie in (0,1]");
    DeltaNet out;
    if (cls.size() == 0) {
        out.net = cls;
        return out;
    }
    RngStream rng(seed, 0);
    auto pts = draw_points(measure, sample, rng);
    auto V = value_matrix(cls, pts);
    out.threshold = delta * envelope_norm(V);
    std::vector<double> mind(cls.size(), kInf);
    std::vector<std::size_t> nearest(cls.size(), 0);
    std::size_t cur = 0;
    while (true) {
        out.members.push_back(cur);
        const std::size_t pos = out.members.size() - 1;
        for (std::size_t i = 0; i < cls.size(); ++i) {
            double dd = l2_dist(V[i], V[cur]);
            if (dd < mind[i]) {
                mind[i] = dd;
                nearest[i] = pos;
            }
        }
        std::size_t far = static_cast<std::size_t>(std::max_element(mind.begin(), mind.end()) - mind.begin());
        if (mind[far] <= out.threshold) break;
        cur = far;
    }
    out.radius = *std::max_element(mind.begin(), mind.end());
    out.assign = nearest;
    out.net = cls.subset(out.members);
    out.net.delta = delta;
    return out;
}

namespace {

double haar_member_tv(const SplitTree& tree, const std::vector<double>& c) {
    const std::size_t L = tree.num_leaves(), d = tree.dim();
    double tv = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        const Box& bi = tree.leaf_box(i);
        for (std::size_t a = 0; a < d; ++a) {
            for (int side = 0; side < 2; ++side) {
                const double at = side ? bi.hi[a] : bi.lo[a];
                // face of leaf i orthogonal to axis a
                Box fi = bi;
                fi.lo[a] = fi.hi[a] = 0.0;
                double area = 1.0;
                for (std::size_t e = 0; e < d; ++e)
                    if (e != a) area *= bi.hi[e] - bi.lo[e];
                double shared = 0.0;
                for (std::size_t j = 0; j < L; ++j) {
                    if (j == i) continue;
                    const Box& bj = tree.leaf_box(j);
                    if ((side ? bj.lo[a] : bj.hi[a]) != at) continue;
                    Box fj = bj;
                    fj.lo[a] = fj.hi[a] = 0.0;
                    double ov = 1.0;
                    for (std::size_t e = 0; e < d; ++e) {
                        if (e == a) continue;
                        double w = std::min(bi.hi[e], bj.hi[e]) - std::max(bi.lo[e], bj.lo[e]);
                        ov *= std::max(0.0, w);
                    }
                    if (ov <= 0.0) continue;
                    shared += ov;
                    // interior jump counted once per pair, from the lower side
                    if (side == 1) tv += std::abs(c[i] - c[j]) * ov;
                }
                double outside = area - shared;
                if (outside > 1e-14 * std::max(1.0, area) && c[i] != 0.0) tv += std::abs(c[i]) * outside;
            }
        }
    }
    return tv;
}

}  // namespace

ClassConstants compute_constants(const FunctionClass& cls, const Density& measure) {
    ClassConstants k;
    if (cls.size() == 0) return k;
    const Box sup = measure.support();
    const std::size_t d = cls.dim;
    const double s = std::abs(cls.scale);

    if (cls.kind == ClassKind::HaarSpan) {
        const SplitTree& t = *cls.tree;
        for (const auto& c : cls.leaf_coefs) {
            double e = 0.0, mx = 0.0;
            int touched = 0;
            for (std::size_t l = 0; l < c.size(); ++l) {
                e += t.leaf_mass(l) * std::abs(c[l]);
                mx = std::max(mx, std::abs(c[l]));
                if (c[l] != 0.0) ++touched;
            }
            k.M = std::max(k.M, s * mx);
            k.E = std::max(k.E, s * e);
            k.S = std::max(k.S, touched);
            k.TV = std::max(k.TV, s * haar_member_tv(t, c));
        }
        k.L = kInf;
        k.Kloc = std::numeric_limits<double>::quiet_NaN();
        k.TV_bound = k.TV;
        k.flags.push_back("L infinite for piecewise-constant members");
        k.flags.push_back("Kloc unsupported for indicator members");
    } else if (cls.kind == ClassKind::ResidualPair) {
        k.flags.push_back("residual-pair constants are reported per factor: only M and E computed");
        bool bounded_r = true;
        for (const auto& r : cls.r)
            if (r.kind == RFunction::Kind::Identity) bounded_r = false;
        double gm = 0.0;
        Box xs = sup;
        xs.lo.pop_back();
        xs.hi.pop_back();
        for (const auto& p : tensor_points(xs, d - 1 == 1 ? 401 : 41))
            for (const auto& g : cls.g) gm = std::max(gm, std::abs(g(p.data())));
        k.M = bounded_r ? s * gm : kInf;
        for (std::size_t i = 0; i < cls.size(); ++i)
            k.E = std::max(k.E, measure.integrate1(
                                    sup, [&](const double* z) { return std::abs(cls.eval(i, z)); }, cls.breaks));
        k.L = kInf;
        k.TV = k.Kloc = std::numeric_limits<double>::quiet_NaN();
    } else {
        if (!sup.bounded()) k.flags.push_back("unbounded support: TV over a truncated box is not computed");
        // E by quadrature against the measure
        for (std::size_t i = 0; i < cls.size(); ++i)
            k.E = std::max(k.E, measure.integrate1(
                                    sup, [&](const double* x) { return std::abs(cls.eval(i, x)); }, cls.breaks));
        double G = 0.0;
        std::vector<double> g(d);
        if (cls.kind == ClassKind::KdeKernel) {
            const double b = cls.bandwidth;
            const double norm = std::pow(b, -0.5 * static_cast<double>(d));
            k.M = s * norm * std::pow(kernel_sup(cls.kernel), static_cast<double>(d));
            // sup over u of sum_a |k'(u_a)| prod_{e != a} k(u_e), and the Euclidean counterpart
            double l1 = 0.0, l2 = 0.0;
            if (d == 1) {
                l1 = l2 = kernel_lipschitz(cls.kernel);
            } else {
                const std::size_t m = d == 2 ? 401 : 41;
                for (const auto& u : tensor_points(Box(std::vector<double>(d, -1.0), std::vector<double>(d, 1.0)), m)) {
                    double a1 = 0.0, a2 = 0.0;
                    for (std::size_t a = 0; a < d; ++a) {
                        double v = kernel_abs_slope(cls.kernel, u[a]);
                        for (std::size_t e = 0; e < d; ++e)
                            if (e != a) v *= kernel_value(cls.kernel, u[e]);
                        a1 += v;
                        a2 += v * v;
                    }
                    l1 = std::max(l1, a1);
                    l2 = std::max(l2, std::sqrt(a2));
                }
            }
            k.L = s * norm / b * l1;
            G = s * norm / b * l2;
            double vol = 0.0;
            for (const auto& w : cls.params) {
                Box sb{std::vector<double>(d), std::vector<double>(d)};
                for (std::size_t a = 0; a < d; ++a) {
                    sb.lo[a] = w[a] - b;
                    sb.hi[a] = w[a] + b;
                }
                vol = std::max(vol, sup.bounded() ? box_overlap_volume(sb, sup) : sb.volume());
            }
            k.TV_bound = k.L * vol;
        } else {
            if (!sup.bounded()) throw ConstructionError("generic Lipschitz constants need a bounded support");
            const std::size_t m = d == 1 ? 2001 : (d == 2 ? 201 : 31);
            for (const auto& p : tensor_points(sup, m)) {
                for (std::size_t i = 0; i < cls.size(); ++i) {
                    k.M = std::max(k.M, std::abs(cls.eval(i, p.data())));
                    if (cls.grad(i, p.data(), g.data())) {
                        double a1 = 0.0, a2 = 0.0;
                        for (double v : g) {
                            a1 += std::abs(v);
                            a2 += v * v;
                        }
                        k.L = std::max(k.L, a1);
                        G = std::max(G, std::sqrt(a2));
                    }
                }
            }
            k.TV_bound = k.L * sup.volume();
        }
        // TV = sup over members of the integral of |grad h|_2 over the support (Lebesgue)
        if (sup.bounded()) {
            for (std::size_t i = 0; i < cls.size(); ++i) {
                double tv = integrate_box(
                    sup,
                    [&](const double* x) {
                        cls.grad(i, x, g.data());
                        double a2 = 0.0;
                        for (double v : g) a2 += v * v;
                        return std::sqrt(a2);
                    },
                    cls.breaks, QuadOptions{1e-9, 14});
                k.TV = std::max(k.TV, tv);
            }
        }
        k.Kloc = std::pow(G, (static_cast<double>(d) - 1.0) / static_cast<double>(d)) *
                 std::pow(k.TV, 1.0 / static_cast<double>(d));
        k.flags.push_back("differentiable members: smoothed TV equals TV");
    }
    auto vc = fit_vc_parameters(cls, measure);
    k.vc_c = vc.first;
    k.vc_d = vc.second;
    return k;
}

}  // namespace kmt
