#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "kmtlab/numerics.hpp"

using namespace kmt;

TEST_SUITE("numerics") {
    TEST_CASE("gaussian cdf basics") {
        CHECK(gaussian_cdf(0.0) == 0.5);
        double v = gaussian_cdf(8.0);
        CHECK(v > 1.0 - 1e-14);
        CHECK(v <= 1.0);
        CHECK(std::abs(gaussian_cdf(1.959964) - 0.975) < 1e-6);
        for (double z = -10; z <= 10; z += 0.37) CHECK(std::abs(gaussian_cdf(z) + gaussian_cdf(-z) - 1.0) <= 1e-15);
    }

    TEST_CASE("gaussian cdf against boost erfc") {
        for (double z = -30; z <= 30; z += 0.731) {
            double ref = 0.5 * boost::math::erfc(-z / std::sqrt(2.0));
            CHECK(std::abs(gaussian_cdf(z) - ref) <= 1e-14 * std::max(ref, 1e-300) + 1e-300);
        }
    }

    TEST_CASE("gaussian quantile") {
        CHECK(gaussian_quantile(0.5) == 0.0);
        CHECK(std::abs(gaussian_quantile(0.975) - 1.959964) < 1e-6);
        double worst = 0.0;
        for (int i = 1; i <= 99; ++i) {
            double u = i / 100.0;
            worst = std::max(worst, std::abs(gaussian_cdf(gaussian_quantile(u)) - u));
        }
        CHECK(worst <= 1e-12);
        for (double lu = -12; lu <= -1; lu += 0.25) {
            double u = std::pow(10.0, lu);
            CHECK(std::abs(gaussian_cdf(gaussian_quantile(u)) - u) <= 1e-10 * u);
            CHECK(std::abs(gaussian_cdf(gaussian_quantile(1 - u)) - (1 - u)) <= 1e-10);
            double ref = -std::sqrt(2.0) * boost::math::erfc_inv(2 * u);
            CHECK(std::abs(gaussian_quantile(u) - ref) <= 1e-9 * std::abs(ref));
        }
        CHECK_THROWS_AS(gaussian_quantile(0.0), DomainError);
        CHECK_THROWS_AS(gaussian_quantile(1.0), DomainError);
    }

    TEST_CASE("gaussian quantile strictly increasing") {
        double prev = -INFINITY;
        for (int i = 1; i < 10000; ++i) {
            double q = gaussian_quantile(i / 10000.0);
            CHECK(q > prev);
            prev = q;
        }
    }

    TEST_CASE("binomial cdf examples") {
        BinomialDist d{4, 0.5};
        CHECK(binomial_cdf(d, 2) == doctest::Approx(11.0 / 16).epsilon(1e-15));
        CHECK(binomial_cdf(d, -1) == 0.0);
        CHECK(binomial_cdf({10, 0.3}, 10) == 1.0);
        CHECK_THROWS_AS(binomial_cdf({4, 0.0}, 1), DomainError);
    }

    TEST_CASE("binomial pmf sums to one") {
        for (double p : {0.3, 0.5, 0.7}) {
            for (std::int64_t m : {0, 1, 2, 7, 64, 65, 100, 257, 512}) {
                BinomialDist d{m, p};
                double s = 0.0;
                for (std::int64_t k = 0; k <= m; ++k) s += binomial_pmf(d, k);
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
        }
        BinomialDist big{10000, 0.37};
        double s = 0.0;
        for (std::int64_t k = 0; k <= big.m; ++k) s += binomial_pmf(big, k);
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }

    TEST_CASE("binomial cdf against regularized incomplete beta") {
        for (std::int64_t m : {30, 100, 1000, 10000}) {
            for (double p : {0.05, 0.3, 0.5, 0.9}) {
                BinomialDist d{m, p};
                for (std::int64_t k = 0; k < m; k += std::max<std::int64_t>(1, m / 37)) {
                    // P(X <= k) = I_{1-p}(m-k, k+1)
                    double ref = boost::math::ibeta(static_cast<double>(m - k), static_cast<double>(k + 1), 1 - p);
                    if (ref < 1e-280) continue;
                    CHECK(std::abs(binomial_cdf(d, k) - ref) <= 1e-12 * ref + 1e-15);
                    double sref = boost::math::ibeta(static_cast<double>(k + 1), static_cast<double>(m - k), p);
                    if (sref > 1e-280) CHECK(std::abs(binomial_sf(d, k) - sref) <= 1e-11 * sref + 1e-15);
                }
            }
        }
    }

    TEST_CASE("binomial quantile examples") {
        BinomialDist d{4, 0.5};
        CHECK(binomial_quantile(d, 0.5) == 2);
        CHECK(binomial_quantile(d, 0.6875) == 2);
        CHECK(binomial_quantile(d, 0.6875 + 1e-9) == 3);
        CHECK(binomial_quantile({1, 0.5}, 0.25) == 0);
        CHECK_THROWS_AS(binomial_quantile(d, 0.0), DomainError);
    }

    TEST_CASE("quantile inverts cdf on cdf values") {
        for (double p : {0.3, 0.5, 0.7}) {
            for (std::int64_t m : {1, 10, 64, 65, 200, 512}) {
                BinomialDist d{m, p};
                for (std::int64_t k = 0; k < m; ++k) {
                    double u = binomial_cdf(d, k);
                    if (u <= 0.0 || u >= 1.0) continue;
                    if (k > 0 && binomial_cdf(d, k - 1) == u) continue;
                    CHECK(binomial_quantile(d, u) == k);
                }
            }
        }
    }

    TEST_CASE("binomial quantile is the inf-definition") {
        BinomialDist d{3000, 0.42};
        for (double u : {1e-9, 0.001, 0.1, 0.5, 0.77, 0.999, 1 - 1e-9}) {
            auto k = binomial_quantile(d, u);
            CHECK(binomial_cdf(d, k) >= u);
            if (k > 0) CHECK(binomial_cdf(d, k - 1) < u);
        }
    }

    TEST_CASE("rng determinism") {
        RngStream a(42, 7), b(42, 7), c(42, 8);
        bool differ = false;
        for (int i = 0; i < 100; ++i) {
            double x = a.next_gaussian(), y = b.next_gaussian(), z = c.next_gaussian();
            CHECK(x == y);
            if (x != z) differ = true;
        }
        CHECK(differ);
        CHECK(derive_stream_seed(1, 2) == derive_stream_seed(1, 2));
        CHECK(derive_stream_seed(1, 2) != derive_stream_seed(2, 1));
    }

    TEST_CASE("rng gaussian moments") {
        RngStream s(2024, 0);
        const int N = 1000000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < N; ++i) {
            double g = s.next_gaussian();
            sum += g;
            sq += g * g;
        }
        double mean = sum / N, var = sq / N - mean * mean;
        CHECK(std::abs(mean) <= 4.0 / std::sqrt(double(N)));
        CHECK(std::abs(var - 1.0) <= 0.01);
        RngStream u(2024, 1);
        for (int i = 0; i < 1000; ++i) {
            double v = u.next_uniform();
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}
