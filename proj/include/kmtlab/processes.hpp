#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kmtlab/classes.hpp"
#include "kmtlab/coupling.hpp"

namespace kmt {

// n points in R^d stored row-major. For regression data y is the last coordinate.
struct SampleBatch {
    std::size_t d = 0;
    std::vector<double> pts;
    std::string dgp;
    std::uint64_t stream = 0;

    std::size_t n() const { return d == 0 ? 0 : pts.size() / d; }
    const double* point(std::size_t i) const { return pts.data() + i * d; }
};

SampleBatch draw_sample(const Density& density, std::size_t n, RngStream& rng, std::string dgp = {});

// leaf_counts[k] independent draws from the law restricted to leaf k, grouped by leaf.
SampleBatch sample_given_counts(const SplitTree& tree, const std::vector<std::int64_t>& leaf_counts,
                                const Density& density, RngStream& rng);

bool batch_in_support(const SampleBatch& batch, const Density& density);

// n^{-1/2} sum (h(x_i) - mean); 0 for an empty batch.
double eval_X(const SampleBatch& batch, const ScalarFn& h, double mean);
double eval_X(const SampleBatch& batch, const ScalarFn& h, const Density& density,
              const std::vector<std::vector<double>>& breaks = {});
std::vector<double> eval_X_many(const SampleBatch& batch, const VecIntegrand& h, std::size_t nf,
                                const std::vector<double>& means);

// n^{-1/2} sum (g(x_i) r(y_i) - E[g r]).
double eval_G(const SampleBatch& batch, const ScalarFn& g, const RFunction& r, const RegressionDensity& joint,
              const std::vector<std::vector<double>>& xbreaks = {});
// n^{-1/2} sum g(x_i) (r(y_i) - theta(x_i, r)).
double eval_R(const SampleBatch& batch, const ScalarFn& g, const RFunction& r, const RegressionDensity& joint);
double eval_R(const SampleBatch& batch, const ScalarFn& g, const RFunction& r, const ScalarFn& theta);

struct SupErrorRecord {
    std::int64_t n = 0;
    std::string class_id;
    int depth = 0;
    int depth_y = -1;
    double sup_xz = 0.0;    // sup over the net of |X_n - Z_n|
    double sup_proj = 0.0;  // sup over the net of |X_n - X_n o Pi|
    double extra = 0.0;     // residual case: sup |Pi_2 X - Pi_2 Z|
    std::uint64_t rep = 0;
};

// Net registered on a tree: projections and residual covariance computed once.
struct CoupledNet {
    const FunctionClass* cls = nullptr;
    const Density* density = nullptr;
    NetProjection proj;
};

CoupledNet register_net(const FunctionClass& cls, const SplitTree& tree, const Density& density);

// Process values on one coupled draw.
struct CoupledValues {
    std::vector<double> X, Z, Xproj;
    std::vector<double> Xpi2, Zpi2;  // residual case only
};

// Draws counts, residual Gaussians and a count-consistent sample, in that order from rng.
CoupledValues coupled_values(const CoupledNet& net, std::int64_t n, RngStream& rng);
SupErrorRecord coupled_sup_error(const CoupledNet& net, std::int64_t n, RngStream& rng, std::uint64_t rep = 0);

// Residual-pair net on a cylindered tree. Members are f(x,y) = g(x)(r(y) - theta(x,r)).
struct ResidualNet {
    const FunctionClass* cls = nullptr;
    const CylinderedCellTree* ct = nullptr;
    const RegressionDensity* joint = nullptr;
    NetProjection proj;
    std::vector<HaarDecomposition> pi2;
};

ResidualNet register_residual_net(const FunctionClass& cls, const CylinderedCellTree& ct, const RegressionDensity& joint);
CoupledValues coupled_values_residual(const ResidualNet& net, std::int64_t n, RngStream& rng);
SupErrorRecord coupled_sup_error_residual(const ResidualNet& net, std::int64_t n, RngStream& rng,
                                          std::uint64_t rep = 0);

}  // namespace kmt
