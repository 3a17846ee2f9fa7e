#include "kmtlab/checks.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <memory>

namespace kmt {

std::vector<double> dense_lsq_leaf_fit(const SplitTree& tree, const Density& density, const ScalarFn& h) {
    using G = boost::math::quadrature::gauss<double, 30>;
    std::vector<double> nodes, wts;
    for (std::size_t i = 0; i < G::abscissa().size(); ++i) {
        double a = G::abscissa()[i], w = G::weights()[i];
        nodes.push_back(a);
        wts.push_back(w);
        if (a != 0.0) {
            nodes.push_back(-a);
            wts.push_back(w);
        }
    }
    const std::size_t L = tree.num_leaves(), d = tree.dim();
    const auto Li = static_cast<Eigen::Index>(L);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(Li, Li);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(Li);
    // a fixed rule is only accurate where the density is smooth, so split at marginal kinks
    std::vector<std::vector<double>> kinks(d);
    if (auto* pd = dynamic_cast<const ProductDensity*>(&density))
        for (std::size_t a = 0; a < d; ++a) kinks[a] = pd->marginal(a).kinks();
    for (std::size_t k = 0; k < L; ++k) {
        const Box& b = tree.leaf_box(k);
        std::vector<std::vector<double>> cuts(d);
        for (std::size_t a = 0; a < d; ++a) {
            cuts[a].push_back(b.lo[a]);
            for (double c : kinks[a])
                if (c > b.lo[a] && c < b.hi[a]) cuts[a].push_back(c);
            cuts[a].push_back(b.hi[a]);
            std::sort(cuts[a].begin(), cuts[a].end());
        }
        const std::size_t q = nodes.size();
        std::vector<std::size_t> seg(d, 0), idx(d, 0);
        std::vector<double> x(d);
        const auto ki = static_cast<Eigen::Index>(k);
        while (true) {
            double w = 1.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double lo = cuts[a][seg[a]], h2 = 0.5 * (cuts[a][seg[a] + 1] - lo);
                x[a] = lo + h2 * (1 + nodes[idx[a]]);
                w *= h2 * wts[idx[a]];
            }
            w *= density.density(x.data());
            A(ki, ki) += w;
            rhs(ki) += w * h(x.data());
            std::size_t a = 0;
            while (a < d) {
                if (++idx[a] < q) break;
                idx[a] = 0;
                if (++seg[a] < cuts[a].size() - 1) break;
                seg[a] = 0;
                ++a;
            }
            if (a == d) break;
        }
    }
    Eigen::VectorXd c = A.ldlt().solve(rhs);
    return std::vector<double>(c.data(), c.data() + c.size());
}

ScalarFn random_smooth_function(RngStream& rng, std::size_t d) {
    double a[4], w[2][2];
    for (double& v : a) v = 2 * rng.next_uniform() - 1;
    for (auto& r : w)
        for (double& v : r) v = 6 * rng.next_uniform();
    return [=](const double* x) {
        double s = a[0];
        for (std::size_t i = 0; i < d; ++i) s += a[1] * std::sin(w[0][i] * x[i]) + a[2] * x[i] * x[i];
        if (d > 1) s += a[3] * std::cos(w[1][0] * x[0] + w[1][1] * x[1]);
        return s;
    };
}

std::vector<ProjectionCheckRow> projection_check(std::uint64_t seed, std::size_t functions, int max_depth) {
    if (max_depth < 1) max_depth = 1;
    std::vector<ProjectionCheckRow> out;
    AffineDensity2D aff(1.0, 0.8, 0.5);
    ProductDensity tri({std::make_shared<TriangularMarginal>(0.0, 0.3, 1.0)});
    auto u1 = ProductDensity::uniform(1);
    auto u2 = ProductDensity::uniform(2);
    auto ylaw = std::make_shared<NormalLocationY>([](const double* x) { return std::sin(3.0 * x[0]); }, 0.8, "sin");
    RegressionDensity joint(u1, ylaw);
    for (std::size_t i = 0; i < functions; ++i) {
        RngStream rng(seed, i);
        ProjectionCheckRow row;
        row.index = i;
        row.d = i % 2 ? 2 : 1;
        row.K = 1 + static_cast<int>(i / 2) % max_depth;
        const Density& dens = row.d == 2 ? (i % 4 == 1 ? static_cast<const Density&>(aff) : *u2)
                                         : (i % 4 == 2 ? static_cast<const Density&>(tri) : *u1);
        CellTree t = build_axis_aligned(dens, row.K, i % 3 == 0 ? 1.5 : 1.0);
        auto h = random_smooth_function(rng, row.d);
        auto vals = project_L2(h, t, dens).leaf_values();
        auto ls = dense_lsq_leaf_fit(t, dens, h);
        for (std::size_t k = 0; k < ls.size(); ++k) row.pi0_error = std::max(row.pi0_error, std::abs(ls[k] - vals[k]));

        // adjusted projection identity on a cylindered tree over (x, y)
        auto ct = build_cylindered(joint, 1, row.K, 2);
        CellTree xt = ct.x_tree();
        auto g = random_smooth_function(rng, 1);
        const RFunction r = i % 3 == 0 ? RFunction::identity() : RFunction::threshold(2.0 * rng.next_uniform() - 1.0);
        auto p1 = project_product_factorized(g, r, ct, joint);
        auto p2 = project_conditional_adjusted(g, r, ct, joint);
        auto p0 = project_L2([&](const double* x) { return g(x) * ylaw->theta(r, x); }, xt, *u1);
        for (int s = 0; s < 200; ++s) {
            double z[2] = {rng.next_uniform(), 0.0};
            z[1] = ylaw->quantile(rng.next_uniform(), z);
            row.pi2_error = std::max(row.pi2_error, std::abs(p2.evaluate(z) - (p1.evaluate(z) - p0.evaluate(z))));
        }
        out.push_back(row);
    }
    return out;
}

}  // namespace kmt
