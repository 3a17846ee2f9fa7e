#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>

namespace kmt {

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Standard normal distribution.
double gaussian_pdf(double z);
double gaussian_cdf(double z);
// Upper tail 1 - Phi(z), accurate for large z.
double gaussian_sf(double z);
// Rational approximation refined by one Halley step on Phi.
double gaussian_quantile(double u);

struct BinomialDist {
    std::int64_t m = 0;
    double p = 0.5;
};

double binomial_pmf(const BinomialDist& d, std::int64_t k);
double binomial_log_pmf(const BinomialDist& d, std::int64_t k);
// P(X <= k)
double binomial_cdf(const BinomialDist& d, std::int64_t k);
// P(X > k)
double binomial_sf(const BinomialDist& d, std::int64_t k);
// min{k : binomial_cdf(d, k) >= u}
std::int64_t binomial_quantile(const BinomialDist& d, double u);

std::uint64_t splitmix64(std::uint64_t x);
// Stream seed derived from (root, index) without shared state.
std::uint64_t derive_stream_seed(std::uint64_t root_seed, std::uint64_t stream_index);

class RngStream {
public:
    RngStream(std::uint64_t root_seed, std::uint64_t stream_index);

    // Uniform on the open interval (0,1), 53 random bits.
    double next_uniform();
    // Inversion of next_uniform, so draws are monotone in the underlying bits.
    double next_gaussian();
    std::uint64_t next_u64() { return eng_(); }

    std::uint64_t root_seed() const { return root_; }
    std::uint64_t stream_index() const { return index_; }

private:
    std::uint64_t root_;
    std::uint64_t index_;
    std::mt19937_64 eng_;
};

}  // namespace kmt
