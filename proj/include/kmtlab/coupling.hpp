#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "kmtlab/haar.hpp"

namespace kmt {

// One joint draw of Gaussian drivers and cell counts on a split tree.
struct CoupledRealization {
    const SplitTree* tree = nullptr;
    std::int64_t n = 0;
    std::vector<double> xi;            // per node, 0 at leaves
    std::vector<std::int64_t> counts;  // per node
    std::vector<double> W;             // residual Gaussians of a registered net

    // U_left - p_split * U_parent
    double centered_count(int v) const;
    std::vector<std::int64_t> leaf_counts() const;
};

// Draws xi for internal nodes in increasing id order, then counts top-down.
CoupledRealization couple_counts(const SplitTree& tree, std::int64_t n, RngStream& rng);
// Deterministic map from given drivers (one per node; leaves ignored) to counts.
CoupledRealization couple_counts_from_xi(const SplitTree& tree, std::int64_t n, std::vector<double> xi);

// Checks root = n, additivity and nonnegativity exactly; returns an empty
// string when all hold, else a description of the first failure.
std::string check_count_invariants(const CoupledRealization& r);

struct CouplingConstants {
    double p_low = 0.5, p_high = 0.5;
    double c0 = 0, c1 = 0, c2 = 0, c3 = 0;
    double residual = 0;  // |LHS(c0) - 1|
};

double coupling_equation_lhs(double c0, double p_low, double p_high);
CouplingConstants solve_coupling_constants(double p_low, double p_high);

// Gaussian attached to a binomial outcome X by the quantile transform.
// Left: Phi^{-1}(P(X' < X)), the left-limit form; Mid: uses P(X' < X) + P(X)/2;
// Right: Phi^{-1}(P(X' <= X)).
enum class AtomConvention { Left, Mid, Right };

// z for every outcome in [lo, hi], computed with tail-aware sums.
std::vector<double> quantile_z_range(const BinomialDist& d, std::int64_t lo, std::int64_t hi, AtomConvention conv);

struct TusnadyReport {
    std::int64_t m = 0;
    double max_margin_quadratic = 0;  // max |X - m/2 - sqrt(m)/2 Z| - (1 + Z^2/8)
    double max_margin_linear = 0;     // max |X - m/2| - (1 + sqrt(m)/2 |Z|)
    std::int64_t argmax_quadratic = 0, argmax_linear = 0;
    bool holds() const { return max_margin_quadratic <= 0 && max_margin_linear <= 0; }
};

TusnadyReport tusnady_check(std::int64_t m, AtomConvention conv = AtomConvention::Mid);

struct GeneralizedCouplingReport {
    std::int64_t m = 0;
    double p = 0;
    bool skipped = false;
    std::string notice;
    std::int64_t event_lo = 0, event_hi = -1;  // outcomes with |X - mp| <= c1 m
    double max_margin_quadratic = 0;           // max |X - mp - sigma Z| - (c2 Z^2 + c3)
    double max_margin_linear = 0;              // max |X - mp| - (1/c0 + 2 sigma |Z|)
    bool holds() const { return skipped || (max_margin_quadratic <= 0 && max_margin_linear <= 0); }
};

GeneralizedCouplingReport generalized_coupling_check(std::int64_t m, double p, const CouplingConstants& c,
                                                     AtomConvention conv = AtomConvention::Mid,
                                                     bool enforce_precondition = true);

// (X_n(g), Z_n(g)) for a function in the span of the tree's Haar basis.
std::pair<double, double> bridge_on_haar(const CoupledRealization& r, const HaarDecomposition& dec);

// (X_n, Z_n) of the indicator of every node, by a top-down pass; O(nodes).
struct NodeProcessValues {
    std::vector<double> X, Z;
};
NodeProcessValues node_indicator_values(const CoupledRealization& r);

// Projection data of a finite net on a tree, computed once.
struct NetProjection {
    const SplitTree* tree = nullptr;
    std::size_t size = 0;
    std::vector<HaarDecomposition> decs;
    std::vector<double> means;
    Eigen::MatrixXd residual_cov;
    Eigen::MatrixXd chol;  // lower factor; empty when the net lies in the Haar span
    bool haar_only = false;
    double jitter = 0.0;
};

// h writes the nf net values at x. haar_only skips the residual covariance.
NetProjection project_net(const VecIntegrand& h, std::size_t nf, const SplitTree& tree, const Density& density,
                          bool haar_only, const std::vector<std::vector<double>>& breaks = {},
                          const QuadOptions& opt = {});

// Lower Cholesky factor with jitter escalation 1e-12, 1e-10, 1e-8 (relative to
// the largest diagonal entry). Throws when all attempts fail.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& S, double* jitter_used = nullptr);

// Draws the residual Gaussians of the net into r.W (independent of xi).
void draw_residuals(CoupledRealization& r, const NetProjection& net, RngStream& rng);

// Z_n(h_i) = Z_n(Pi_0 h_i) + W_i for every net member.
std::vector<double> bridge_complete_on_net(const CoupledRealization& r, const NetProjection& net);

}  // namespace kmt
