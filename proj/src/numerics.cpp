#include "kmtlab/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace kmt {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;
constexpr double kSqrt2Pi = 2.50662827463100050242;
constexpr double kLog2Pi = 1.83787706640934548356;

// Acklam's coefficients.
constexpr double A[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                        1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
constexpr double B[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                        6.680131188771972e+01,  -1.328068155288572e+01};
constexpr double C[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                        -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
constexpr double D[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                        3.754408661907416e+00};

double quantile_lower(double u) {
    double x;
    if (u < 0.02425) {
        double q = std::sqrt(-2.0 * std::log(u));
        x = (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) /
            ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
    } else {
        double q = u - 0.5;
        double r = q * q;
        x = (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q /
            (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0);
    }
    double e = gaussian_cdf(x) - u;
    double h = e * kSqrt2Pi * std::exp(0.5 * x * x);
    return x - h / (1.0 + 0.5 * x * h);
}

// log(n!) - log(sqrt(2 pi n) (n/e)^n)
double stirlerr(double n) {
    if (n <= 15.0) return std::lgamma(n + 1.0) - (n + 0.5) * std::log(n) + n - 0.5 * kLog2Pi;
    constexpr double S0 = 1.0 / 12, S1 = 1.0 / 360, S2 = 1.0 / 1260, S3 = 1.0 / 1680, S4 = 1.0 / 1188;
    double nn = n * n;
    return (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n;
}

// x log(x/np) + np - x without cancellation
double bd0(double x, double np) {
    if (std::abs(x - np) < 0.1 * (x + np)) {
        double v = (x - np) / (x + np);
        double s = (x - np) * v;
        double ej = 2.0 * x * v;
        double v2 = v * v;
        for (int j = 1; j < 1000; ++j) {
            ej *= v2;
            double s1 = s + ej / (2 * j + 1);
            if (s1 == s) return s1;
            s = s1;
        }
        return s;
    }
    return x * std::log(x / np) + np - x;
}

bool small_path(const BinomialDist& d) {
    return d.m <= 64 && std::pow(1.0 - d.p, static_cast<double>(d.m)) > 1e-280;
}

double small_pmf(const BinomialDist& d, std::int64_t k) {
    double c = 1.0;
    for (std::int64_t i = 0; i < k; ++i) c = c * static_cast<double>(d.m - i) / static_cast<double>(i + 1);
    return c * std::pow(d.p, static_cast<double>(k)) * std::pow(1.0 - d.p, static_cast<double>(d.m - k));
}

std::int64_t mode_of(const BinomialDist& d) {
    auto md = static_cast<std::int64_t>(std::floor((d.m + 1) * d.p));
    return md > d.m ? d.m : md;
}

// sum_{i<=k} pmf(i), summed downward from k
double lower_sum(const BinomialDist& d, std::int64_t k) {
    double t = binomial_pmf(d, k);
    double s = t;
    double r = (1.0 - d.p) / d.p;
    for (std::int64_t i = k; i >= 1; --i) {
        t *= static_cast<double>(i) / static_cast<double>(d.m - i + 1) * r;
        s += t;
        if (t < 1e-18 * s) break;
    }
    return s;
}

// sum_{i>k} pmf(i), summed upward from k+1
double upper_sum(const BinomialDist& d, std::int64_t k) {
    double t = binomial_pmf(d, k + 1);
    double s = t;
    double r = d.p / (1.0 - d.p);
    for (std::int64_t i = k + 1; i < d.m; ++i) {
        t *= static_cast<double>(d.m - i) / static_cast<double>(i + 1) * r;
        s += t;
        if (t < 1e-18 * s) break;
    }
    return s;
}

void check_dist(const BinomialDist& d) {
    if (d.m < 0) throw DomainError("binomial: negative trial count");
    if (!(d.p > 0.0 && d.p < 1.0)) throw DomainError("binomial: p must lie in (0,1)");
}

}  // namespace

double gaussian_pdf(double z) { return std::exp(-0.5 * z * z) / kSqrt2Pi; }

double gaussian_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

double gaussian_sf(double z) { return 0.5 * std::erfc(z / kSqrt2); }

double gaussian_quantile(double u) {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("gaussian_quantile: u must lie in (0,1)");
    if (u == 0.5) return 0.0;
    if (u < 0.5) return quantile_lower(u);
    return -quantile_lower(1.0 - u);
}

double binomial_log_pmf(const BinomialDist& d, std::int64_t k) {
    check_dist(d);
    if (k < 0 || k > d.m) return -std::numeric_limits<double>::infinity();
    if (d.m == 0) return 0.0;
    const double m = static_cast<double>(d.m);
    const double p = d.p, q = 1.0 - d.p;
    if (k == 0) return m * std::log1p(-p);
    if (k == d.m) return m * std::log(p);
    const double x = static_cast<double>(k);
    double lc = stirlerr(m) - stirlerr(x) - stirlerr(m - x) - bd0(x, m * p) - bd0(m - x, m * q);
    double lf = kLog2Pi + std::log(x) + std::log1p(-x / m);
    return lc - 0.5 * lf;
}

double binomial_pmf(const BinomialDist& d, std::int64_t k) {
    check_dist(d);
    if (k < 0 || k > d.m) return 0.0;
    if (small_path(d)) return small_pmf(d, k);
    return std::exp(binomial_log_pmf(d, k));
}

double binomial_cdf(const BinomialDist& d, std::int64_t k) {
    check_dist(d);
    if (k < 0) return 0.0;
    if (k >= d.m) return 1.0;
    if (small_path(d)) {
        double s = 0.0;
        for (std::int64_t i = 0; i <= k; ++i) s += small_pmf(d, i);
        return s > 1.0 ? 1.0 : s;
    }
    if (k < mode_of(d)) return lower_sum(d, k);
    double v = 1.0 - upper_sum(d, k);
    return v < 0.0 ? 0.0 : v;
}

double binomial_sf(const BinomialDist& d, std::int64_t k) {
    check_dist(d);
    if (k < 0) return 1.0;
    if (k >= d.m) return 0.0;
    if (small_path(d)) {
        double s = 0.0;
        for (std::int64_t i = k + 1; i <= d.m; ++i) s += small_pmf(d, i);
        return s > 1.0 ? 1.0 : s;
    }
    if (k >= mode_of(d)) return upper_sum(d, k);
    double v = 1.0 - lower_sum(d, k);
    return v < 0.0 ? 0.0 : v;
}

std::int64_t binomial_quantile(const BinomialDist& d, double u) {
    check_dist(d);
    if (!(u > 0.0 && u < 1.0)) throw DomainError("binomial_quantile: u must lie in (0,1)");
    if (d.m == 0) return 0;
    if (small_path(d)) {
        double s = 0.0;
        for (std::int64_t k = 0; k < d.m; ++k) {
            s += small_pmf(d, k);
            if (s >= u) return k;
        }
        return d.m;
    }
    // Cornish-Fisher starting point, then exact correction against binomial_cdf.
    const double m = static_cast<double>(d.m), p = d.p, q = 1.0 - d.p;
    const double z = gaussian_quantile(u);
    const double sd = std::sqrt(m * p * q);
    double guess = m * p + sd * z + (z * z - 1.0) * (q - p) / 6.0 - 0.5;
    auto k = static_cast<std::int64_t>(std::floor(guess + 0.5));
    if (k < 0) k = 0;
    if (k > d.m) k = d.m;
    if (binomial_cdf(d, k) >= u) {
        while (k > 0 && binomial_cdf(d, k - 1) >= u) --k;
    } else {
        while (k < d.m && binomial_cdf(d, k) < u) ++k;
    }
    return k;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_stream_seed(std::uint64_t root_seed, std::uint64_t stream_index) {
    return splitmix64(splitmix64(root_seed) ^ splitmix64(stream_index ^ 0xD1B54A32D192ED03ULL));
}

RngStream::RngStream(std::uint64_t root_seed, std::uint64_t stream_index)
    : root_(root_seed), index_(stream_index), eng_(derive_stream_seed(root_seed, stream_index)) {}

double RngStream::next_uniform() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::next_gaussian() { return gaussian_quantile(next_uniform()); }

}  // namespace kmt
