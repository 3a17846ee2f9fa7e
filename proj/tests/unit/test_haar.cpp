#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>

#include "doctest.h"
#include "kmtlab/haar.hpp"

using namespace kmt;

namespace {

// Dense least-squares fit on leaf indicators: tensor 30-point grid per leaf,
// weights = density x grid weight, normal equations solved by Eigen.
std::vector<double> lsq_leaf_fit(const SplitTree& t, const Density& dens, const ScalarFn& h) {
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
    const std::size_t L = t.num_leaves(), d = t.dim();
    std::vector<std::vector<double>> rows;
    std::vector<double> weights, targets;
    std::vector<std::size_t> owner;
    for (std::size_t k = 0; k < L; ++k) {
        const Box& b = t.leaf_box(k);
        std::vector<std::size_t> idx(d, 0);
        std::vector<double> x(d);
        while (true) {
            double w = 1.0;
            for (std::size_t a = 0; a < d; ++a) {
                double h2 = 0.5 * (b.hi[a] - b.lo[a]);
                x[a] = b.lo[a] + h2 * (1 + nodes[idx[a]]);
                w *= h2 * wts[idx[a]];
            }
            weights.push_back(w * dens.density(x.data()));
            targets.push_back(h(x.data()));
            owner.push_back(k);
            std::size_t a = 0;
            while (a < d && ++idx[a] == nodes.size()) idx[a++] = 0;
            if (a == d) break;
        }
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L));
    for (std::size_t i = 0; i < weights.size(); ++i) {
        auto k = static_cast<Eigen::Index>(owner[i]);
        A(k, k) += weights[i];
        rhs(k) += weights[i] * targets[i];
    }
    Eigen::VectorXd c = A.ldlt().solve(rhs);
    return std::vector<double>(c.data(), c.data() + c.size());
}

ScalarFn random_fn(RngStream& rng, std::size_t d) {
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

double leaf_integral(const SplitTree& t, const Density& dens, const ScalarFn& f) {
    double s = 0.0;
    for (std::size_t k = 0; k < t.num_leaves(); ++k) s += dens.integrate1(t.leaf_box(k), f);
    return s;
}

}  // namespace

TEST_SUITE("haar") {
    TEST_CASE("constant function") {
        auto u = ProductDensity::uniform(2);
        CellTree t = build_axis_aligned(*u, 3);
        auto d = project_L2([](const double*) { return 2.5; }, t, *u);
        CHECK(d.top == doctest::Approx(2.5).epsilon(1e-14));
        for (double b : d.detail) CHECK(std::abs(b) <= 1e-13);
        CHECK(haar_norm_sq(d) <= 1e-24);
    }

    TEST_CASE("identity on two cells") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 1);
        auto h = [](const double* x) { return x[0]; };
        auto d = project_L2(h, t, *u);
        CHECK(std::abs(d.coef[static_cast<std::size_t>(t.node(0, 0))] - 0.25) <= 1e-14);
        CHECK(std::abs(d.coef[static_cast<std::size_t>(t.node(0, 1))] - 0.75) <= 1e-14);
        CHECK(std::abs(d.detail[0] + 0.5) <= 1e-14);
        CHECK(std::abs(haar_norm_sq(d) - 0.25) <= 1e-14);
        // brute force least squares on a 10^4 point grid
        double s0 = 0, s1 = 0;
        for (int i = 0; i < 10000; ++i) {
            double x = (i + 0.5) / 10000;
            (x < 0.5 ? s0 : s1) += x;
        }
        CHECK(std::abs(s0 / 5000 - 0.25) <= 1e-12);
        CHECK(std::abs(s1 / 5000 - 0.75) <= 1e-12);
    }

    TEST_CASE("basis orthogonality") {
        AffineDensity2D a(1, 1, 1);
        CellTree t = build_axis_aligned(a, 3, 1.5);
        const auto& topo = t.topology();
        auto internal = topo.internal_nodes();
        auto basis = [&](int v) {
            HaarDecomposition e;
            e.tree = &t;
            e.coef.assign(topo.size(), 0.0);
            e.detail.assign(topo.size(), 0.0);
            if (v < 0)
                e.top = 1.0;
            else
                e.detail[static_cast<std::size_t>(v)] = 1.0;
            return e;
        };
        std::vector<HaarDecomposition> es{basis(-1)};
        for (int v : internal) es.push_back(basis(v));
        for (std::size_t i = 0; i < es.size(); ++i)
            for (std::size_t j = i; j < es.size(); ++j) {
                double ip = leaf_integral(t, a, [&](const double* x) { return es[i].evaluate(x) * es[j].evaluate(x); });
                if (i != j) {
                    CHECK(std::abs(ip) <= 1e-10);
                } else if (i > 0) {
                    double sc = topo.detail_scale(internal[i - 1]);
                    CHECK(std::abs(ip - sc * sc) <= 1e-10);
                }
            }
    }

    TEST_CASE("reconstruction equals cell means") {
        auto u = ProductDensity::uniform(2);
        CellTree t = build_axis_aligned(*u, 4, 1.5);
        auto h = [](const double* x) { return std::exp(x[0]) * std::sin(3 * x[1]); };
        auto d = project_L2(h, t, *u);
        auto vals = d.leaf_values();
        RngStream rng(1, 0);
        for (int i = 0; i < 200; ++i) {
            double x[2] = {rng.next_uniform(), rng.next_uniform()};
            std::size_t k = t.locate(x);
            double mean = u->integrate1(t.leaf_box(k), h) / t.leaf_mass(k);
            CHECK(std::abs(d.evaluate(x) - mean) <= 1e-10);
            CHECK(std::abs(vals[k] - mean) <= 1e-10);
        }
    }

    TEST_CASE("parseval and mean preservation") {
        AffineDensity2D a(1, 2, 0.5);
        CellTree t = build_axis_aligned(a, 4);
        auto h = [](const double* x) { return x[0] * x[0] - std::cos(2 * x[1]); };
        auto d = project_L2(h, t, a);
        double mean = a.integrate1(Box::unit(2), h);
        CHECK(std::abs(d.top - mean) <= 1e-10);
        double sq = leaf_integral(t, a, [&](const double* x) { double v = d.evaluate(x); return v * v; });
        CHECK(std::abs(sq - mean * mean - haar_variance(d)) <= 1e-9);
        double pm = leaf_integral(t, a, [&](const double* x) { return d.evaluate(x); });
        CHECK(std::abs(pm - mean) <= 1e-10);
    }

    TEST_CASE("idempotence") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 4, 1.5);
        auto d = project_L2([](const double* x) { return std::sqrt(x[0] + 0.1); }, t, *u);
        auto d2 = project_L2([&](const double* x) { return d.evaluate(x); }, t, *u);
        CHECK(std::abs(d2.top - d.top) <= 1e-12);
        for (std::size_t v = 0; v < d.detail.size(); ++v) CHECK(std::abs(d2.detail[v] - d.detail[v]) <= 1e-12);
        auto d3 = decomposition_from_leaf_means(t, d.leaf_values());
        for (std::size_t v = 0; v < d.detail.size(); ++v) CHECK(std::abs(d3.detail[v] - d.detail[v]) <= 1e-12);
    }

    TEST_CASE("projection matches dense least squares") {
        RngStream rng(99, 0);
        AffineDensity2D aff(1, 1, 1);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t d = trial % 2 ? 2 : 1;
            int K = 1 + trial % 4;
            auto u = ProductDensity::uniform(d);
            const Density& dens = (d == 2 && trial % 4 == 1) ? static_cast<const Density&>(aff) : *u;
            CellTree t = build_axis_aligned(dens, K, trial % 3 == 0 ? 1.5 : 1.0);
            auto h = random_fn(rng, d);
            auto dec = project_L2(h, t, dens);
            auto ls = lsq_leaf_fit(t, dens, h);
            auto vals = dec.leaf_values();
            double worst = 0.0;
            for (std::size_t k = 0; k < ls.size(); ++k) worst = std::max(worst, std::abs(ls[k] - vals[k]));
            CHECK(worst <= 1e-8);
        }
    }

    TEST_CASE("quadrature failure names the cell") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 1);
        QuadOptions opt;
        opt.max_depth = 1;
        try {
            project_L2([](const double* x) { return x[0] < 0.3 ? 0.0 : 1.0 / std::sqrt(x[0] - 0.3 + 1e-14); }, t, *u,
                       {}, opt);
            CHECK(false);
        } catch (const QuadratureError& e) {
            CHECK(std::string(e.what()).find("cell 1") != std::string::npos);
        }
    }
}

TEST_SUITE("haar") {
    namespace {
    struct Setup {
        std::shared_ptr<ProductDensity> x = ProductDensity::uniform(1);
        std::shared_ptr<NormalLocationY> y = std::make_shared<NormalLocationY>(
            [](const double* v) { return 0.5 * std::sin(2 * M_PI * v[0]); }, 1.0, "sin");
        RegressionDensity joint{x, y};
        CylinderedCellTree ct = build_cylindered(joint, 1, 2, 2, 1.5);
    };
    }  // namespace

    TEST_CASE("product-factorized: constant response has no response details") {
        Setup s;
        auto g = [](const double* x) { return std::cos(x[0]); };
        auto d = project_product_factorized(g, RFunction::one(), s.ct, s.joint);
        for (int l = 0; l < 4; ++l)
            for (int j = 1; j <= s.ct.N; ++j)
                for (int m = 0; m < (1 << (s.ct.N - j)); ++m)
                    CHECK(std::abs(d.detail[static_cast<std::size_t>(s.ct.y_node(l, j, m))]) <= 1e-12);
        auto e = project_conditional_adjusted(g, RFunction::one(), s.ct, s.joint);
        for (double b : e.detail) CHECK(std::abs(b) <= 1e-12);
        CHECK(e.top == 0.0);
    }

    TEST_CASE("product-factorized: independence collapses to the response tree") {
        auto x = ProductDensity::uniform(1);
        auto y = std::make_shared<UniformIndependentY>(0, 1);
        RegressionDensity joint(x, y);
        auto ct = build_cylindered(joint, 1, 2, 3);
        for (RFunction r : {RFunction::identity(), RFunction::threshold(0.3)}) {
            auto d = project_product_factorized([](const double*) { return 1.0; }, r, ct, joint);
            auto ylaw = ProductDensity::uniform(1);
            CellTree yt = build_axis_aligned(*ylaw, 3);
            auto dy = project_L2([&](const double* v) { return r(v[0]); }, yt, *ylaw, {{0.3}});
            for (int l = 0; l < 4; ++l)
                for (int j = 0; j <= 3; ++j)
                    for (int m = 0; m < (1 << (3 - j)); ++m) {
                        auto v = static_cast<std::size_t>(ct.y_node(l, j, m));
                        auto w = static_cast<std::size_t>(yt.node(j, m));
                        if (j < 3) CHECK(std::abs(d.coef[v] - dy.coef[w]) <= 1e-10);
                        if (j > 0) CHECK(std::abs(d.detail[v] - dy.detail[w]) <= 1e-10);
                    }
            CHECK(std::abs(d.top - dy.top) <= 1e-10);
        }
    }

    TEST_CASE("product-factorized: upper layers equal L2 coefficients of g r") {
        Setup s;
        // g piecewise constant on the terminal x-cells
        CellTree xt = s.ct.x_tree();
        std::vector<double> gl = {1.0, -2.0, 0.5, 3.0};
        auto g = [&](const double* x) { return gl[xt.locate(x)]; };
        for (RFunction r : {RFunction::identity(), RFunction::threshold(0.2)}) {
            auto d = project_product_factorized(g, r, s.ct, s.joint);
            std::vector<std::vector<double>> br = {{}, {r.kind == RFunction::Kind::Threshold ? r.y0 : 0.0}};
            auto l2 = project_L2([&](const double* z) { return g(z) * r(z[1]); }, s.ct.tree, s.joint, br);
            for (int j = 0; j <= s.ct.M; ++j)
                for (int k = 0; k < (1 << (s.ct.M - j)); ++k) {
                    auto v = static_cast<std::size_t>(s.ct.x_node(j, k));
                    CHECK(std::abs(d.coef[v] - l2.coef[v]) <= 1e-10);
                }
        }
    }

    TEST_CASE("adjusted projection identity") {
        Setup s;
        auto g = [](const double* x) { return std::exp(-x[0]); };
        CellTree xt = s.ct.x_tree();
        RngStream rng(3, 0);
        for (RFunction r : {RFunction::identity(), RFunction::threshold(0.0), RFunction::threshold(0.7)}) {
            auto p1 = project_product_factorized(g, r, s.ct, s.joint);
            auto p2 = conditional_adjusted_from(p1, s.ct);
            auto p0 = project_L2([&](const double* x) { return g(x) * s.y->theta(r, x); }, xt, *s.x);
            for (int i = 0; i < 1000; ++i) {
                double z[2] = {rng.next_uniform(), 2 * rng.next_gaussian()};
                CHECK(std::abs(p2.evaluate(z) - (p1.evaluate(z) - p0.evaluate(z))) <= 1e-9);
            }
            for (std::size_t v = 0; v < p2.detail.size(); ++v) {
                int j = s.ct.tree.level_of(static_cast<int>(v));
                if (j >= s.ct.N) CHECK(p2.coef[v] == 0.0);
                if (j < s.ct.N) CHECK(p2.coef[v] == p1.coef[v]);
            }
        }
    }

    TEST_CASE("centered response: adjusted equals product-factorized") {
        auto x = ProductDensity::uniform(1);
        auto y = std::make_shared<NormalLocationY>([](const double*) { return 0.0; }, 1.0, "0");
        RegressionDensity joint(x, y);
        auto ct = build_cylindered(joint, 1, 2, 2);
        auto g = [](const double* v) { return 1.0 + v[0]; };
        auto p1 = project_product_factorized(g, RFunction::identity(), ct, joint);
        auto p2 = conditional_adjusted_from(p1, ct);
        CHECK(std::abs(p1.top) <= 1e-14);
        for (std::size_t v = 0; v < p1.detail.size(); ++v) {
            CHECK(std::abs(p1.detail[v] - p2.detail[v]) <= 1e-14);
            CHECK(std::abs(p1.coef[v] - p2.coef[v]) <= 1e-14);
        }
    }
}
