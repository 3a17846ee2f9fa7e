#include "kmtlab/haar.hpp"

#include <string>

namespace kmt {

namespace {

std::size_t U(int v) { return static_cast<std::size_t>(v); }

// Fill internal coefficients as mass-weighted child averages, then details.
void aggregate(const BinaryTopology& t, std::vector<double>& coef, std::vector<double>& detail) {
    detail.assign(t.size(), 0.0);
    for (std::size_t v = t.size(); v-- > 0;) {
        if (t.left[v] < 0) continue;
        std::size_t l = U(t.left[v]), r = U(t.right[v]);
        coef[v] = (t.mass[l] * coef[l] + t.mass[r] * coef[r]) / t.mass[v];
        detail[v] = coef[l] - coef[r];
    }
}

}  // namespace

std::vector<double> HaarDecomposition::leaf_values() const {
    const BinaryTopology& t = tree->topology();
    std::vector<double> val(t.size(), 0.0);
    val[0] = top;
    for (std::size_t v = 0; v < t.size(); ++v) {
        if (t.left[v] < 0) continue;
        std::size_t l = U(t.left[v]), r = U(t.right[v]);
        val[l] = val[v] + detail[v] * t.mass[r] / t.mass[v];
        val[r] = val[v] - detail[v] * t.mass[l] / t.mass[v];
    }
    std::vector<double> out;
    out.reserve(t.leaves.size());
    for (int v : t.leaves) out.push_back(val[U(v)]);
    return out;
}

double HaarDecomposition::evaluate(const double* x) const {
    const BinaryTopology& t = tree->topology();
    int leaf = t.leaves[tree->locate(x)];
    // walk up from the leaf
    double s = top;
    int c = leaf;
    while (t.parent[U(c)] >= 0) {
        int p = t.parent[U(c)];
        std::size_t pi = U(p);
        if (t.left[pi] == c)
            s += detail[pi] * t.mass[U(t.right[pi])] / t.mass[pi];
        else
            s -= detail[pi] * t.mass[U(t.left[pi])] / t.mass[pi];
        c = p;
    }
    return s;
}

std::vector<HaarDecomposition> project_L2_many(const VecIntegrand& h, std::size_t nf, const SplitTree& tree,
                                               const Density& density,
                                               const std::vector<std::vector<double>>& breaks,
                                               const QuadOptions& opt) {
    const BinaryTopology& t = tree.topology();
    std::vector<std::vector<double>> coef(nf, std::vector<double>(t.size(), 0.0));
    for (int v : t.leaves) {
        std::vector<double> I;
        try {
            I = density.integrate(tree.box(v), nf, h, breaks, opt);
        } catch (const QuadratureError& e) {
            throw QuadratureError(std::string(e.what()) + " in cell " + std::to_string(v));
        }
        for (std::size_t f = 0; f < nf; ++f) coef[f][U(v)] = I[f] / t.mass[U(v)];
    }
    std::vector<HaarDecomposition> out(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        out[f].tree = &tree;
        out[f].flavor = HaarFlavor::L2;
        aggregate(t, coef[f], out[f].detail);
        out[f].top = coef[f][0];
        out[f].coef = std::move(coef[f]);
    }
    return out;
}

HaarDecomposition project_L2(const ScalarFn& h, const SplitTree& tree, const Density& density,
                             const std::vector<std::vector<double>>& breaks, const QuadOptions& opt) {
    return std::move(project_L2_many([&](const double* x, double* out) { out[0] = h(x); }, 1, tree, density, breaks,
                                     opt)[0]);
}

HaarDecomposition decomposition_from_leaf_means(const SplitTree& tree, const std::vector<double>& leaf_means) {
    const BinaryTopology& t = tree.topology();
    if (leaf_means.size() != t.leaves.size()) throw ConstructionError("leaf mean vector has the wrong size");
    HaarDecomposition d;
    d.tree = &tree;
    d.coef.assign(t.size(), 0.0);
    for (std::size_t k = 0; k < leaf_means.size(); ++k) d.coef[U(t.leaves[k])] = leaf_means[k];
    aggregate(t, d.coef, d.detail);
    d.top = d.coef[0];
    return d;
}

HaarDecomposition project_product_factorized(const ScalarFn& g, const RFunction& r, const CylinderedCellTree& ct,
                                             const RegressionDensity& joint,
                                             const std::vector<std::vector<double>>& xbreaks) {
    const CellTree& T = ct.tree;
    const BinaryTopology& t = T.topology();
    const ProductDensity& X = joint.x_law();
    const ConditionalY& Y = joint.y_law();
    const int M = ct.M, N = ct.N;
    HaarDecomposition d;
    d.tree = &T;
    d.flavor = HaarFlavor::ProductFactorized;
    d.coef.assign(t.size(), 0.0);
    d.detail.assign(t.size(), 0.0);
    std::vector<double> lower(t.size(), 0.0);
    for (int l = 0; l < (1 << M); ++l) {
        const int xv = ct.x_node(0, l);
        const Box xb = joint.x_part(T.box(xv));
        const double px = t.mass[U(xv)];
        std::vector<double> I;
        try {
            I = X.integrate(
                xb, 2,
                [&](const double* x, double* out) {
                    double gv = g(x);
                    out[0] = gv;
                    out[1] = gv * Y.theta(r, x);
                },
                xbreaks);
        } catch (const QuadratureError& e) {
            throw QuadratureError(std::string(e.what()) + " in cell " + std::to_string(xv));
        }
        const double gbar = I[0] / px;
        d.coef[U(xv)] = I[1] / px;
        // response leaves of this x-cell
        for (int m = 0; m < (1 << N); ++m) {
            const int yv = ct.y_node(l, 0, m);
            const Box& yb = T.box(yv);
            double e;
            try {
                e = joint.integrate_gr(yb, [](const double*) { return 1.0; }, r, xbreaks);
            } catch (const QuadratureError& ex) {
                throw QuadratureError(std::string(ex.what()) + " in cell " + std::to_string(yv));
            }
            lower[U(yv)] = gbar * e / t.mass[U(yv)];
        }
        for (int j = 1; j <= N; ++j) {
            for (int m = 0; m < (1 << (N - j)); ++m) {
                const std::size_t v = U(ct.y_node(l, j, m));
                std::size_t a = U(t.left[v]), b = U(t.right[v]);
                lower[v] = (t.mass[a] * lower[a] + t.mass[b] * lower[b]) / t.mass[v];
                d.detail[v] = lower[a] - lower[b];
                if (j < N) d.coef[v] = lower[v];
            }
        }
        for (int m = 0; m < (1 << N); ++m) d.coef[U(ct.y_node(l, 0, m))] = lower[U(ct.y_node(l, 0, m))];
    }
    for (int j = 1; j <= M; ++j) {
        for (int k = 0; k < (1 << (M - j)); ++k) {
            const std::size_t v = U(ct.x_node(j, k));
            std::size_t a = U(t.left[v]), b = U(t.right[v]);
            d.coef[v] = (t.mass[a] * d.coef[a] + t.mass[b] * d.coef[b]) / t.mass[v];
            d.detail[v] = d.coef[a] - d.coef[b];
        }
    }
    d.top = d.coef[0];
    return d;
}

HaarDecomposition conditional_adjusted_from(const HaarDecomposition& pi1, const CylinderedCellTree& ct) {
    const BinaryTopology& t = ct.tree.topology();
    HaarDecomposition d = pi1;
    d.flavor = HaarFlavor::ConditionalAdjusted;
    d.top = 0.0;
    for (std::size_t v = 0; v < t.size(); ++v) {
        int j = ct.tree.level_of(static_cast<int>(v));
        if (j > ct.N) d.detail[v] = 0.0;
        if (j >= ct.N) d.coef[v] = 0.0;
    }
    return d;
}

HaarDecomposition project_conditional_adjusted(const ScalarFn& g, const RFunction& r, const CylinderedCellTree& ct,
                                               const RegressionDensity& joint,
                                               const std::vector<std::vector<double>>& xbreaks) {
    return conditional_adjusted_from(project_product_factorized(g, r, ct, joint, xbreaks), ct);
}

double haar_norm_sq(const HaarDecomposition& dec) {
    double s = 0.0;
    for (double b : dec.detail) s += b * b;
    return s;
}

double haar_variance(const HaarDecomposition& dec) {
    const BinaryTopology& t = dec.tree->topology();
    double s = 0.0;
    for (std::size_t v = 0; v < t.size(); ++v) {
        if (t.left[v] < 0) continue;
        double sc = t.detail_scale(static_cast<int>(v));
        s += dec.detail[v] * dec.detail[v] * sc * sc;
    }
    return s;
}

}  // namespace kmt
