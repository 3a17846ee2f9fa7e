#pragma once

#include <cstdint>
#include <vector>

#include "kmtlab/haar.hpp"

namespace kmt {

// Weighted least squares on leaf indicators over a dense tensor grid
// (30 Gauss points per axis and leaf, weights times density).
std::vector<double> dense_lsq_leaf_fit(const SplitTree& tree, const Density& density, const ScalarFn& h);

// Random smooth test function: constant, sine, quadratic and cross-cosine parts.
ScalarFn random_smooth_function(RngStream& rng, std::size_t d);

struct ProjectionCheckRow {
    std::size_t index = 0;
    std::size_t d = 1;
    int K = 0;
    double pi0_error = 0.0;  // sup over leaves of |Pi_0 h - dense least squares|
    double pi2_error = 0.0;  // sup over test points of |Pi_2 - (Pi_1 - Pi_0[g theta])|
};

// Alternates d in {1,2}, depths 1..max_depth, uniform and non-uniform laws.
std::vector<ProjectionCheckRow> projection_check(std::uint64_t seed, std::size_t functions, int max_depth);

}  // namespace kmt
