#include <doctest.h>

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "kmtlab/cells.hpp"
#include "kmtlab/estimators.hpp"
#include "kmtlab/numerics.hpp"
#include "kmtlab/processes.hpp"

using namespace kmt;

namespace {

std::shared_ptr<RegressionDensity> make_joint(std::size_t d, std::function<double(const double*)> mu, double sigma) {
    std::shared_ptr<const ProductDensity> x = ProductDensity::uniform(d);
    auto y = std::make_shared<NormalLocationY>(std::move(mu), sigma, "mu");
    return std::make_shared<RegressionDensity>(x, y);
}

}  // namespace

TEST_SUITE("estimators") {
    TEST_CASE("kde process equals the empirical process of its class") {
        auto grid = regular_grid(1, 21);
        auto cls = kde_class(KernelKind::Triangular, 0.2, grid, 1);
        ProductDensity f({std::make_shared<TriangularMarginal>(0.0, 0.3, 1.0)});
        auto means = kde_mean(cls, f);
        // single observation at a grid point
        SampleBatch one{1, {grid[7][0]}, "one", 0};
        auto xi1 = kde_process(one, cls, means);
        CHECK(xi1[7] == doctest::Approx(cls.eval(7, grid[7].data()) - means[7] * std::pow(0.2, 0.5)).epsilon(1e-14));
        RngStream rng(11, 1);
        auto batch = draw_sample(f, 500, rng);
        auto xi = kde_process(batch, cls, f);
        // members of the class are b^{-1/2} K; the process uses the unnormalized mean of each member
        for (std::size_t j = 0; j < cls.size(); ++j) {
            ScalarFn h = [&](const double* x) { return cls.eval(j, x); };
            double ref = eval_X(batch, h, means[j] * std::pow(0.2, 0.5));
            CHECK(std::abs(xi[j] - ref) <= 1e-10);
        }
        CHECK(std::abs(xi1[7] - eval_X(one, [&](const double* x) { return cls.eval(7, x); },
                                       means[7] * std::pow(0.2, 0.5))) <= 1e-12);
    }

    TEST_CASE("kde mean matches a convolution oracle") {
        const double b = 0.15;
        TriangularMarginal tri(0.0, 0.3, 1.0);
        ProductDensity f({std::make_shared<TriangularMarginal>(0.0, 0.3, 1.0)});
        RngStream rng(5, 2);
        std::vector<std::vector<double>> ws;
        for (int i = 0; i < 25; ++i) ws.push_back({rng.next_uniform()});
        ws.push_back({0.0});
        ws.push_back({1.0});
        ws.push_back({0.3});
        auto cls = kde_class(KernelKind::Epanechnikov, b, ws, 1);
        auto mu = kde_mean(cls, f);
        using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
        for (std::size_t j = 0; j < ws.size(); ++j) {
            const double w = ws[j][0];
            // (f * K_b)(w) = int f(w + b u) K(u) du, split at the kinks of f
            std::vector<double> cuts = {-1.0, 1.0};
            for (double k : {0.0, 0.3, 1.0}) {
                double u = (k - w) / b;
                if (u > -1.0 && u < 1.0) cuts.push_back(u);
            }
            std::sort(cuts.begin(), cuts.end());
            double oracle = 0.0;
            for (std::size_t c = 0; c + 1 < cuts.size(); ++c)
                oracle += GK::integrate(
                    [&](double u) { return tri.pdf(w + b * u) * kernel_value(KernelKind::Epanechnikov, u); }, cuts[c],
                    cuts[c + 1], 0, 1e-14);
            CHECK(std::abs(mu[j] - oracle) <= 1e-8);
        }
    }

    TEST_CASE("histogram process") {
        auto u = ProductDensity::uniform(1);
        RngStream rng(3, 3);
        auto batch = draw_sample(*u, 300, rng);
        SUBCASE("single cell") {
            PartitionTree one({Box::unit(1)}, *u);
            std::vector<std::vector<double>> ws = {{0.1}, {0.5}, {1.0}};
            auto f = histogram_estimate(batch, one, ws);
            for (double v : f) CHECK(v == 1.0);
            for (double v : histogram_process(batch, one, 1.0, ws)) CHECK(std::abs(v) < 1e-12);
        }
        SUBCASE("constant on cells and equal to the Haar process") {
            auto tree = build_axis_aligned(*u, 3, 1.0);
            const double L = 8.0;
            auto cls = histogram_class(tree);
            std::vector<std::vector<double>> ws;
            for (int i = 0; i <= 64; ++i) ws.push_back({i / 64.0});
            auto z = histogram_process(batch, tree, L, ws);
            for (std::size_t j = 0; j < ws.size(); ++j) {
                std::size_t k = tree.locate(ws[j].data());
                for (std::size_t i = 0; i < ws.size(); ++i)
                    if (tree.locate(ws[i].data()) == k) CHECK(z[i] == z[j]);
                ScalarFn h = [&](const double* x) { return cls.eval(k, x); };
                double ref = eval_X(batch, h, std::sqrt(L) * tree.leaf_mass(k));
                CHECK(std::abs(z[j] - ref) <= 1e-10);
                // counts form
                double cnt = 0.0;
                for (std::size_t i = 0; i < batch.n(); ++i) cnt += tree.locate(batch.point(i)) == k;
                double byc = std::sqrt(L / batch.n()) * (cnt - batch.n() * tree.leaf_mass(k));
                CHECK(std::abs(z[j] - byc) <= 1e-10);
            }
        }
        SUBCASE("query outside the partition") {
            PartitionTree half({Box({0.0}, {0.5})}, *u);
            std::vector<std::vector<double>> ws = {{0.75}};
            CHECK_THROWS_AS(histogram_process(batch, half, 1.0, ws), DomainError);
        }
    }

    TEST_CASE("haar regression") {
        SUBCASE("single cell is the sample mean") {
            auto joint = make_joint(1, [](const double* x) { return std::sin(3 * x[0]); }, 0.5);
            RngStream rng(7, 1);
            auto batch = draw_sample(*joint, 200, rng);
            PartitionTree one({Box::unit(1)}, joint->x_law());
            auto est = haar_regression(batch, one, {RFunction::identity()}, *joint, {{0.4}});
            double mean = 0.0;
            for (std::size_t i = 0; i < batch.n(); ++i) mean += batch.point(i)[1];
            mean /= batch.n();
            CHECK(est[0].value == doctest::Approx(mean).epsilon(1e-13));
        }
        SUBCASE("piecewise constant mean has no smoothing bias") {
            auto xlaw = ProductDensity::uniform(1);
            auto tree = build_axis_aligned(*xlaw, 2, 1.0);
            const CellTree* tp = &tree;
            auto joint = make_joint(1, [tp](const double* x) { return static_cast<double>(tp->locate(x)); }, 0.3);
            std::vector<std::vector<double>> ws = {{0.1}, {0.3}, {0.6}, {0.9}};
            double lin_mean = 0.0;
            const int reps = 400;
            for (int rep = 0; rep < reps; ++rep) {
                RngStream rng(100, rep);
                auto batch = draw_sample(*joint, 100, rng);
                auto est = haar_regression(batch, tree, {RFunction::identity()}, *joint, ws);
                for (auto& e : est) {
                    REQUIRE_FALSE(e.flagged);
                    CHECK(std::abs(e.bias) <= 1e-12);
                    lin_mean += e.linearization / (reps * ws.size());
                }
            }
            // each linearization has standard deviation about 0.3 * 2 / 10; the mean of 1600 is near zero
            CHECK(std::abs(lin_mean) < 4 * 0.06 / std::sqrt(400.0));
        }
        SUBCASE("decomposition, equivalent kernel and monotonicity") {
            auto joint = make_joint(1, [](const double* x) { return x[0] * x[0]; }, 0.4);
            RngStream rng(9, 9);
            auto batch = draw_sample(*joint, 400, rng);
            auto tree = build_axis_aligned(joint->x_law(), 3, 1.0);
            std::vector<RFunction> rs = {RFunction::identity()};
            for (int k = 0; k <= 10; ++k) rs.push_back(RFunction::threshold(-1.0 + 0.3 * k));
            std::vector<std::vector<double>> ws = {{0.05}, {0.33}, {0.5}, {0.77}, {1.0}};
            auto est = haar_regression(batch, tree, rs, *joint, ws);
            const double L = 8.0;
            for (auto& e : est) {
                CHECK(std::abs(e.linearization + e.nonlinearity + e.bias + e.theta - e.value) <= 1e-12);
                double R = eval_R(batch, haar_equivalent_kernel(tree, e.w), rs[e.r_index], *joint);
                CHECK(std::abs(std::sqrt(batch.n() / L) * e.linearization - R) <= 1e-10);
            }
            for (std::size_t wi = 0; wi < ws.size(); ++wi)
                for (std::size_t ri = 2; ri < rs.size(); ++ri)
                    CHECK(est[ri * ws.size() + wi].value >= est[(ri - 1) * ws.size() + wi].value);
        }
        SUBCASE("empty cells are flagged") {
            auto joint = make_joint(1, [](const double*) { return 0.0; }, 1.0);
            SampleBatch batch{2, {0.1, 0.0, 0.2, 1.0}, "two", 0};
            auto tree = build_axis_aligned(joint->x_law(), 2, 1.0);
            auto est = haar_regression(batch, tree, {RFunction::identity()}, *joint, {{0.1}, {0.9}});
            CHECK_FALSE(est[0].flagged);
            CHECK(est[1].flagged);
            CHECK(std::isnan(est[1].value));
        }
    }

    TEST_CASE("local polynomial basis") {
        CHECK(poly_multi_indices(1, 2).size() == 3);
        CHECK(poly_multi_indices(2, 2).size() == 6);
        CHECK(poly_multi_indices(2, 1).size() == 3);
        auto idx = poly_multi_indices(2, 2);
        double u[2] = {0.5, -2.0};
        auto p = poly_basis(idx, u);
        CHECK(p[0] == 1.0);
        // degree-two block holds u1^2/2, u1 u2, u2^2/2
        CHECK(p[3] == doctest::Approx(0.125));
        CHECK(p[4] == doctest::Approx(-1.0));
        CHECK(p[5] == doctest::Approx(2.0));
    }

    TEST_CASE("local polynomial regression") {
        SUBCASE("degree zero is the kernel-weighted mean") {
            auto joint = make_joint(1, [](const double* x) { return std::cos(2 * x[0]); }, 0.3);
            RngStream rng(4, 4);
            auto batch = draw_sample(*joint, 300, rng);
            LocalPolyConfig cfg;
            cfg.degree = 0;
            cfg.kernel = KernelKind::Triangular;
            cfg.bandwidth = 0.2;
            cfg.grid = {{0.0}, {0.4}, {1.0}};
            auto fit = local_poly(batch, cfg, {RFunction::identity()}, *joint);
            for (std::size_t j = 0; j < cfg.grid.size(); ++j) {
                double num = 0.0, den = 0.0;
                for (std::size_t i = 0; i < batch.n(); ++i) {
                    double k = kernel_value(KernelKind::Triangular, (batch.point(i)[0] - cfg.grid[j][0]) / 0.2);
                    num += k * batch.point(i)[1];
                    den += k;
                }
                CHECK(fit.estimates[j].value == doctest::Approx(num / den).epsilon(1e-12));
            }
        }
        SUBCASE("odd moments of the Gram matrix vanish in the interior") {
            LocalPolyConfig cfg;
            cfg.degree = 2;
            cfg.bandwidth = 0.2;
            for (std::size_t d : {1u, 2u}) {
                cfg.d = d;
                auto idx = poly_multi_indices(d, 2);
                auto design = ProductDensity::uniform(d);
                for (KernelKind k : {KernelKind::Triangular, KernelKind::Epanechnikov, KernelKind::Biweight}) {
                    cfg.kernel = k;
                    std::vector<double> w(d, 0.5);
                    auto H = local_poly_gram(cfg, idx, w, *design);
                    const std::size_t q = idx.size();
                    for (std::size_t i = 0; i < q; ++i)
                        for (std::size_t j = 0; j < q; ++j) {
                            bool odd = false;
                            for (std::size_t a = 0; a < d; ++a) odd = odd || ((idx[i][a] + idx[j][a]) % 2 == 1);
                            if (odd) CHECK(std::abs(H[i * q + j]) <= 1e-10);
                        }
                    CHECK(H[0] == doctest::Approx(1.0).epsilon(1e-10));
                }
            }
        }
        SUBCASE("decomposition identity and equivalent-kernel process") {
            for (std::size_t d : {1u, 2u}) {
                auto joint = make_joint(d, [d](const double* x) { return d == 1 ? x[0] * x[0] : x[0] * x[1]; }, 0.5);
                RngStream rng(8, d);
                auto batch = draw_sample(*joint, 600, rng);
                LocalPolyConfig cfg;
                cfg.d = d;
                cfg.degree = d == 1 ? 2 : 1;
                cfg.kernel = KernelKind::Epanechnikov;
                cfg.bandwidth = 0.35;
                cfg.grid = regular_grid(d, d == 1 ? 7 : 4);
                std::vector<RFunction> rs = {RFunction::identity(), RFunction::threshold(0.2)};
                auto fit = local_poly(batch, cfg, rs, *joint);
                const double s = std::sqrt(batch.n() * std::pow(cfg.bandwidth, static_cast<double>(d)));
                for (std::size_t j = 0; j < cfg.grid.size(); ++j) {
                    auto g = local_poly_g(fit, j);
                    for (std::size_t ri = 0; ri < rs.size(); ++ri) {
                        const auto& e = fit.estimates[j * rs.size() + ri];
                        REQUIRE_FALSE(e.flagged);
                        CHECK(std::abs(e.linearization + e.nonlinearity + e.bias + e.theta - e.value) <= 1e-9);
                        CHECK(std::abs(s * e.linearization - eval_R(batch, g, rs[ri], *joint)) <= 1e-10);
                    }
                }
            }
        }
        SUBCASE("no data near w is flagged") {
            auto joint = make_joint(1, [](const double*) { return 0.0; }, 1.0);
            SampleBatch batch{2, {0.1, 0.0, 0.15, 1.0}, "two", 0};
            LocalPolyConfig cfg;
            cfg.bandwidth = 0.1;
            cfg.grid = {{0.9}};
            auto fit = local_poly(batch, cfg, {RFunction::identity()}, *joint);
            CHECK(fit.estimates[0].flagged);
            std::ostringstream os;
            write_estimates_csv(os, fit.estimates);
            CHECK(os.str().rfind("w1,r,value,linearization,nonlinearity,bias\n", 0) == 0);
        }
    }
}
