#include <cmath>
#include <map>

#include "doctest.h"
#include "kmtlab/classes.hpp"
#include "kmtlab/coupling.hpp"

using namespace kmt;

TEST_SUITE("coupling") {
    TEST_CASE("median split with zero driver") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 1);
        for (std::int64_t n : {2, 10, 64, 1000}) {
            auto r = couple_counts_from_xi(t, n, {0.0, 0.0, 0.0});
            CHECK(r.counts[1] == n / 2);
            CHECK(check_count_invariants(r).empty());
        }
    }

    TEST_CASE("zero sample size") {
        auto u = ProductDensity::uniform(2);
        CellTree t = build_axis_aligned(*u, 4);
        RngStream rng(1, 1);
        auto r = couple_counts(t, 0, rng);
        for (auto c : r.counts) CHECK(c == 0);
    }

    TEST_CASE("count invariants and quantile identity") {
        auto u = ProductDensity::uniform(2);
        for (double rho : {1.0, 1.5}) {
            CellTree t = build_axis_aligned(*u, 6, rho);
            for (std::uint64_t rep = 0; rep < 50; ++rep) {
                RngStream rng(7, rep);
                auto r = couple_counts(t, 1000 + static_cast<std::int64_t>(rep), rng);
                CHECK(check_count_invariants(r).empty());
                for (int v : t.topology().internal_nodes()) {
                    auto i = static_cast<std::size_t>(v);
                    if (r.counts[i] == 0) continue;
                    double uu = std::clamp(gaussian_cdf(r.xi[i]), 1e-16, 1 - 1e-16);
                    CHECK(r.counts[static_cast<std::size_t>(t.topology().left[i])] ==
                          binomial_quantile({r.counts[i], t.topology().p_split(v)}, uu));
                }
            }
        }
    }

    TEST_CASE("monotone in drivers") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 4);
        RngStream rng(11, 0);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> a(t.topology().size()), b(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                a[i] = rng.next_gaussian();
                b[i] = a[i] + std::abs(rng.next_gaussian());
            }
            auto ra = couple_counts_from_xi(t, 500, a), rb = couple_counts_from_xi(t, 500, b);
            CHECK(ra.counts[static_cast<std::size_t>(t.node(0, 0))] <= rb.counts[static_cast<std::size_t>(t.node(0, 0))]);
        }
    }

    TEST_CASE("terminal count marginal") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 3);
        const int reps = 200000;
        std::vector<int> hist(65, 0);
        for (int rep = 0; rep < reps; ++rep) {
            RngStream rng(5, static_cast<std::uint64_t>(rep));
            auto r = couple_counts(t, 64, rng);
            ++hist[static_cast<std::size_t>(r.counts[static_cast<std::size_t>(t.node(0, 0))])];
        }
        double tv = 0.0;
        for (int k = 0; k <= 64; ++k) tv += std::abs(hist[static_cast<std::size_t>(k)] / double(reps) - binomial_pmf({64, 0.125}, k));
        CHECK(0.5 * tv <= 0.01);
    }

    TEST_CASE("coupling constants") {
        auto c = solve_coupling_constants(0.5, 0.5);
        // independent oracle: Newton on 60 c exp(2c) = 1
        double x = 0.016;
        for (int i = 0; i < 50; ++i) x -= (60 * x * std::exp(2 * x) - 1) / (60 * std::exp(2 * x) * (1 + 2 * x));
        CHECK(std::abs(c.c0 - x) <= 1e-12);
        CHECK(c.c0 == doctest::Approx(0.01614).epsilon(1e-3));
        CHECK(c.residual <= 1e-10);
        CHECK(std::abs(c.c1 - 15 * x * 0.5) <= 1e-12);
        CHECK(c.c1 == doctest::Approx(0.1211).epsilon(1e-3));
        CHECK(c.c2 == doctest::Approx(4.130).epsilon(1e-3));
        CHECK(c.c3 == doctest::Approx(61.96).epsilon(1e-3));
        auto w = solve_coupling_constants(0.3, 0.7);
        CHECK(w.c0 < c.c0);
        CHECK(w.residual <= 1e-10);
        CHECK_THROWS_AS(solve_coupling_constants(0.7, 0.3), DomainError);
    }

    TEST_CASE("tusnady small cases") {
        for (std::int64_t m : {1, 2, 3, 64, 512}) {
            auto r = tusnady_check(m);
            CHECK(r.holds());
        }
        // two-point enumeration by hand: m=1, Z = Phi^{-1}(1/4), Phi^{-1}(3/4)
        auto z = quantile_z_range({1, 0.5}, 0, 1, AtomConvention::Mid);
        CHECK(std::abs(z[0] - gaussian_quantile(0.25)) <= 1e-15);
        CHECK(std::abs(z[1] + z[0]) <= 1e-15);
        auto zl = quantile_z_range({4, 0.5}, 0, 4, AtomConvention::Left);
        CHECK(std::isinf(zl[0]));
        CHECK(std::abs(zl[1] - gaussian_quantile(1.0 / 16)) <= 1e-15);
        auto zr = quantile_z_range({4, 0.5}, 0, 4, AtomConvention::Right);
        CHECK(std::isinf(zr[4]));
        CHECK(std::abs(zr[3] + gaussian_quantile(1.0 / 16)) <= 1e-14);
    }

    TEST_CASE("tail-aware z agrees with direct inversion in the bulk") {
        BinomialDist d{4000, 0.3};
        auto z = quantile_z_range(d, 1100, 1300, AtomConvention::Mid);
        for (std::int64_t x = 1100; x <= 1300; x += 7) {
            double u = binomial_cdf(d, x - 1) + 0.5 * binomial_pmf(d, x);
            CHECK(std::abs(z[static_cast<std::size_t>(x - 1100)] - gaussian_quantile(u)) <= 1e-9);
        }
    }

    TEST_CASE("generalized coupling") {
        auto c = solve_coupling_constants(0.5, 0.5);
        auto m0 = static_cast<std::int64_t>(std::ceil(1.0 / (c.c0 * c.c0)));
        auto r = generalized_coupling_check(m0, 0.5, c);
        CHECK_FALSE(r.skipped);
        CHECK(r.holds());
        auto mp = static_cast<std::int64_t>(std::floor(m0 * 0.5));
        CHECK(r.event_lo <= mp);
        CHECK(r.event_hi >= mp);
        CHECK(r.event_hi < m0);

        auto w = solve_coupling_constants(0.3, 0.7);
        for (double p : {0.3, 0.7})
            for (std::int64_t m : {4096, 16384}) {
                auto s = generalized_coupling_check(m, p, w);
                CHECK(s.skipped);
                auto f = generalized_coupling_check(m, p, w, AtomConvention::Mid, false);
                CHECK(f.holds());
                auto fl = generalized_coupling_check(m, p, w, AtomConvention::Left, false);
                CHECK(fl.holds());
            }
    }

    TEST_CASE("bridge on Haar functions") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 1);
        RngStream rng(3, 3);
        auto r = couple_counts(t, 100, rng);
        auto one = project_L2([](const double*) { return 1.0; }, t, *u);
        auto v1 = bridge_on_haar(r, one);
        CHECK(std::abs(v1.first) <= 1e-14);
        CHECK(std::abs(v1.second) <= 1e-14);
        auto ind = decomposition_from_leaf_means(t, {1.0, 0.0});
        auto v = bridge_on_haar(r, ind);
        CHECK(std::abs(v.first - (r.counts[1] - 50.0) / 10.0) <= 1e-14);
        CellTree other = build_axis_aligned(*u, 1);
        auto bad = decomposition_from_leaf_means(other, {1.0, 0.0});
        CHECK_THROWS_AS(bridge_on_haar(r, bad), DomainError);
    }

    TEST_CASE("bridge covariance of cell indicators") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 3);
        std::vector<HaarDecomposition> ind;
        for (int k = 0; k < 8; ++k) {
            std::vector<double> lm(8, 0.0);
            lm[static_cast<std::size_t>(k)] = 1.0;
            ind.push_back(decomposition_from_leaf_means(t, lm));
        }
        const int reps = 100000;
        std::vector<double> s(8, 0.0), ss(64, 0.0), s4(64, 0.0);
        for (int rep = 0; rep < reps; ++rep) {
            RngStream rng(17, static_cast<std::uint64_t>(rep));
            auto r = couple_counts(t, 32, rng);
            double z[8];
            for (int k = 0; k < 8; ++k) z[k] = bridge_on_haar(r, ind[static_cast<std::size_t>(k)]).second;
            for (int a = 0; a < 8; ++a) {
                s[static_cast<std::size_t>(a)] += z[a];
                for (int b = 0; b < 8; ++b) {
                    double p = z[a] * z[b];
                    ss[static_cast<std::size_t>(8 * a + b)] += p;
                    s4[static_cast<std::size_t>(8 * a + b)] += p * p;
                }
            }
        }
        for (int a = 0; a < 8; ++a)
            for (int b = 0; b < 8; ++b) {
                auto i = static_cast<std::size_t>(8 * a + b);
                double cov = ss[i] / reps;
                double se = std::sqrt((s4[i] / reps - cov * cov) / reps);
                double want = (a == b ? 0.125 : 0.0) - 0.125 * 0.125;
                CHECK(std::abs(cov - want) <= 4 * se);
            }
    }

    TEST_CASE("bridge completion on a net") {
        auto u = ProductDensity::uniform(1);
        CellTree t = build_axis_aligned(*u, 2);
        // two non-Haar functions with zero residual cross covariance: odd and even about each cell centre
        auto h = [](const double* x, double* out) {
            double y = std::fmod(x[0], 0.25) - 0.125;
            out[0] = y;
            out[1] = y * y;
            out[2] = std::sin(3 * x[0]);
        };
        auto net = project_net(h, 3, t, *u, false, {{0.25, 0.5, 0.75}});
        CHECK(std::abs(net.residual_cov(0, 1)) <= 1e-12);
        const int reps = 100000;
        double s0 = 0, s00 = 0, s01 = 0, s11 = 0, s2 = 0, s22 = 0, m4 = 0;
        for (int rep = 0; rep < reps; ++rep) {
            RngStream rng(23, static_cast<std::uint64_t>(rep));
            auto r = couple_counts(t, 50, rng);
            draw_residuals(r, net, rng);
            auto z = bridge_complete_on_net(r, net);
            s0 += r.W[0];
            s00 += r.W[0] * r.W[0];
            s11 += r.W[1] * r.W[1];
            s01 += r.W[0] * r.W[1];
            s2 += z[2];
            s22 += z[2] * z[2];
            m4 += z[2] * z[2] * z[2] * z[2];
        }
        double corr = s01 / std::sqrt(s00 * s11);
        CHECK(std::abs(corr) <= 4.0 / std::sqrt(double(reps)));
        double var = s22 / reps - (s2 / reps) * (s2 / reps);
        double want = u->integrate1(Box::unit(1), [](const double* x) { return std::pow(std::sin(3 * x[0]), 2); }) -
                      std::pow(u->integrate1(Box::unit(1), [](const double* x) { return std::sin(3 * x[0]); }), 2);
        double se = std::sqrt((m4 / reps - var * var) / reps);
        CHECK(std::abs(var - want) <= 4 * se);
        // Haar net: no residual part
        auto hn = project_net([](const double* x, double* out) { out[0] = x[0] < 0.5 ? 1.0 : 0.0; }, 1, t, *u, true);
        RngStream rng(1, 2);
        auto r = couple_counts(t, 50, rng);
        draw_residuals(r, hn, rng);
        CHECK(r.W[0] == 0.0);
        CHECK(bridge_complete_on_net(r, hn)[0] == bridge_on_haar(r, hn.decs[0]).second);
    }

    TEST_CASE("robust cholesky") {
        Eigen::MatrixXd S(2, 2);
        S << 1, 1, 1, 1;
        double j = -1;
        auto L = robust_cholesky(S, &j);
        CHECK(j >= 0.0);
        CHECK((L * L.transpose() - S).cwiseAbs().maxCoeff() <= 1e-7);
        Eigen::MatrixXd B(2, 2);
        B << 1, 2, 2, 1;
        CHECK_THROWS_AS(robust_cholesky(B), DomainError);
    }
}

TEST_SUITE("coupling") {
    TEST_CASE("node indicator values agree with the Haar expansion") {
        auto u = ProductDensity::uniform(2);
        auto tree = build_axis_aligned(*u, 4, 1.5);
        auto cls = leaf_indicator_class(tree);
        auto decs = project_L2_many(cls.integrand(), cls.size(), tree, *u, cls.breaks);
        for (int rep = 0; rep < 20; ++rep) {
            RngStream rng(31, rep);
            auto r = couple_counts(tree, 200 + rep, rng);
            auto nv = node_indicator_values(r);
            const auto& leaves = tree.topology().leaves;
            for (std::size_t k = 0; k < leaves.size(); ++k) {
                auto xz = bridge_on_haar(r, decs[k]);
                CHECK(nv.X[static_cast<std::size_t>(leaves[k])] == doctest::Approx(xz.first).epsilon(1e-9));
                CHECK(std::abs(nv.Z[static_cast<std::size_t>(leaves[k])] - xz.second) <= 1e-9);
            }
            CHECK(nv.Z[0] == 0.0);
        }
    }
}
