#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "kmtlab/classes.hpp"
#include "kmtlab/processes.hpp"

namespace kmt {

// ---------------------------------------------------------------- kernel density

// f_hat(w) = n^{-1} sum b^{-d} K((x_i - w)/b) at every member of a kde class.
std::vector<double> kde_estimate(const SampleBatch& batch, const FunctionClass& cls);
// E f_hat(w) under the true law, by quadrature.
std::vector<double> kde_mean(const FunctionClass& cls, const Density& density);
// sqrt(n b^d) (f_hat(w) - E f_hat(w)).
std::vector<double> kde_process(const SampleBatch& batch, const FunctionClass& cls, const Density& density);
std::vector<double> kde_process(const SampleBatch& batch, const FunctionClass& cls, const std::vector<double>& means);

// ---------------------------------------------------------------- histogram

// Cell frequency of the cell containing each query point.
std::vector<double> histogram_estimate(const SampleBatch& batch, const SplitTree& partition,
                                       const std::vector<std::vector<double>>& ws);
// sqrt(n L) (f_check(w) - E f_check(w)); throws DomainError for w outside every cell.
std::vector<double> histogram_process(const SampleBatch& batch, const SplitTree& partition, double L,
                                      const std::vector<std::vector<double>>& ws);

// ---------------------------------------------------------------- regression

// Estimate with its error decomposition: value - theta = linearization + nonlinearity + bias.
struct RegressionEstimate {
    std::vector<double> w;
    std::size_t r_index = 0;
    double value = 0.0;
    double theta = 0.0;
    double linearization = 0.0;
    double nonlinearity = 0.0;
    double bias = 0.0;
    bool flagged = false;  // empty cell or singular Gram matrix; numeric fields NaN
};

// Batch points are (x, y) with y last; partition lives on x.
std::vector<RegressionEstimate> haar_regression(const SampleBatch& batch, const SplitTree& partition,
                                                const std::vector<RFunction>& rs, const RegressionDensity& joint,
                                                const std::vector<std::vector<double>>& ws);
// Equivalent kernel L^{-1/2} 1(u in cell(w)) / P(cell(w)).
ScalarFn haar_equivalent_kernel(const SplitTree& partition, const std::vector<double>& w);

struct LocalPolyConfig {
    int degree = 1;
    KernelKind kernel = KernelKind::Epanechnikov;
    double bandwidth = 0.5;
    std::size_t d = 1;
    std::vector<std::vector<double>> grid;
};

// Multi-indices of total degree at most p, by degree then lexicographically descending.
std::vector<std::vector<int>> poly_multi_indices(std::size_t d, int p);
// Entries u^nu / nu!.
std::vector<double> poly_basis(const std::vector<std::vector<int>>& idx, const double* u);
double product_kernel(KernelKind k, const double* u, std::size_t d);

struct LocalPolyFit {
    LocalPolyConfig cfg;
    std::vector<std::vector<int>> idx;
    std::vector<std::vector<double>> H;       // population Gram matrix per w, row-major
    std::vector<std::vector<double>> e1Hinv;  // first row of its inverse
    std::vector<RegressionEstimate> estimates;
};

// Population Gram matrix at w from the design law.
std::vector<double> local_poly_gram(const LocalPolyConfig& cfg, const std::vector<std::vector<int>>& idx,
                                    const std::vector<double>& w, const ProductDensity& design);
LocalPolyFit local_poly(const SampleBatch& batch, const LocalPolyConfig& cfg, const std::vector<RFunction>& rs,
                        const RegressionDensity& joint);
// e1' H_w^{-1} p(u) K(u) for grid point wi.
double equivalent_kernel(const LocalPolyFit& fit, std::size_t wi, const double* u);
// g_w(x) = b^{-d/2} equivalent_kernel((x - w)/b).
ScalarFn local_poly_g(const LocalPolyFit& fit, std::size_t wi);

// Columns w1..wd, r, value, linearization, nonlinearity, bias.
void write_estimates_csv(std::ostream& os, const std::vector<RegressionEstimate>& est);

}  // namespace kmt
