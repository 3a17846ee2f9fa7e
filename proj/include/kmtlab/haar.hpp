#pragma once

#include <functional>
#include <vector>

#include "kmtlab/cells.hpp"

namespace kmt {

enum class HaarFlavor { L2, ProductFactorized, ConditionalAdjusted };

// Coefficients of a function in the Haar basis of a split tree: the top
// coefficient, per-node coefficients and per-internal-node details
// (left minus right). The detail basis function of node v equals p_R/p on the
// left child and -p_L/p on the right child.
struct HaarDecomposition {
    const SplitTree* tree = nullptr;
    HaarFlavor flavor = HaarFlavor::L2;
    double top = 0.0;
    std::vector<double> coef;    // per node
    std::vector<double> detail;  // per node, 0 at leaves

    // Value of the expansion on every leaf, in leaf order.
    std::vector<double> leaf_values() const;
    double evaluate(const double* x) const;
};

using ScalarFn = std::function<double(const double*)>;

// L2(P) projection onto piecewise constants over the leaves.
HaarDecomposition project_L2(const ScalarFn& h, const SplitTree& tree, const Density& density,
                             const std::vector<std::vector<double>>& breaks = {}, const QuadOptions& opt = {});

// Several functions at once; h writes nf values.
std::vector<HaarDecomposition> project_L2_many(const VecIntegrand& h, std::size_t nf, const SplitTree& tree,
                                               const Density& density,
                                               const std::vector<std::vector<double>>& breaks = {},
                                               const QuadOptions& opt = {});

// Build from known leaf means (analytic shortcut).
HaarDecomposition decomposition_from_leaf_means(const SplitTree& tree, const std::vector<double>& leaf_means);

// Product-factorized projection of g(x) r(y) on a cylindered tree.
HaarDecomposition project_product_factorized(const ScalarFn& g, const RFunction& r, const CylinderedCellTree& ct,
                                             const RegressionDensity& joint,
                                             const std::vector<std::vector<double>>& xbreaks = {});

// Conditional-mean-adjusted projection: keeps only the response-layer details.
HaarDecomposition project_conditional_adjusted(const ScalarFn& g, const RFunction& r, const CylinderedCellTree& ct,
                                               const RegressionDensity& joint,
                                               const std::vector<std::vector<double>>& xbreaks = {});
HaarDecomposition conditional_adjusted_from(const HaarDecomposition& pi1, const CylinderedCellTree& ct);

// Sum of squared details.
double haar_norm_sq(const HaarDecomposition& dec);
// Sum of squared details weighted by p_L p_R / p (variance of the projection).
double haar_variance(const HaarDecomposition& dec);

}  // namespace kmt
