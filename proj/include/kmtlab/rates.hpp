#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "kmtlab/cells.hpp"

namespace kmt {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EntropyKind { VC, Polynomial };

// Inputs of the rate expressions. NaN marks a constant that was not supplied;
// a formula that needs it throws ConfigError naming the symbol.
struct RateInputs {
    static constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

    double n = kMissing;
    int d = 1;
    double t = 1.0;
    // class constants
    double M = kMissing, E = kMissing, TV = kMissing, L = kMissing, K = kMissing, S = kMissing;
    EntropyKind entropy = EntropyKind::VC;
    double vc_c = kMissing, vc_d = kMissing;
    double poly_a = kMissing, poly_b = kMissing;
    // transform constants
    double c1 = kMissing, c2 = kMissing, c3 = kMissing;
    // residual process
    double v = kMissing, alpha = kMissing, k = kMissing;
    double vc_c_r = kMissing, vc_d_r = kMissing;
    std::size_t r_size = 1;
    // partitions
    double cells = kMissing;     // number of cells L of a quasi-uniform partition
    double max_side = kMissing;  // largest cell side
    double L_theta = kMissing;   // Lipschitz constant of the conditional means
};

// (m_{n,d}, l_{n,d}).
std::pair<double, double> seq_m_l(double n, int d);

// log of the uniform covering number at delta under the chosen entropy model.
double log_covering(const RateInputs& in, double delta);
// Uniform entropy integral from 0 to delta.
double entropy_integral(const RateInputs& in, double delta);

struct RateAt {
    double delta = 0.0;
    double main = 0.0;  // A_n or H_n
    double fluct = 0.0; // F_n
    double total() const { return main + fluct; }
};

struct RateMin {
    double value = 0.0;
    double delta = 0.0;
};

double fluctuation_F(const RateInputs& in, double delta);

RateAt rate_theorem1(const RateInputs& in, double delta);
// min over delta in (1e-6, 1 - 1e-6): grid scan then golden-section on log delta.
RateMin rate_theorem1_min(const RateInputs& in);

// A_n at delta = n^{-1/2} with the VC covering bound substituted in closed form.
double corollary_A_root_n(const RateInputs& in);
double rho_corollary1(const RateInputs& in);
double rho_corollary2(const RateInputs& in);
// Branches (i) and (ii); (ii) is +inf when L is infinite.
std::pair<double, double> rho_corollary3(const RateInputs& in);

double c_v_alpha(double v, double alpha);

struct Theorem2Rate {
    double A = 0.0, T = 0.0, C_va = 0.0;
    double branch1 = 0.0, branch2 = 0.0;
};
Theorem2Rate rate_theorem2(const RateInputs& in);
double rho_corollary4(const RateInputs& in);

RateAt rate_theorem3(const RateInputs& in, double delta);
RateMin rate_theorem3_min(const RateInputs& in);
double rho_corollary5(const RateInputs& in);

struct Theorem4Rate {
    double U = 0.0, V = 0.0, C_va = 0.0;
};
Theorem4Rate rate_theorem4(const RateInputs& in);
double rho_corollary6(const RateInputs& in);

// Rosenblatt transform of a density that supports it.
std::vector<double> rosenblatt(const Density& density, const double* x);
// Jacobian of the Rosenblatt transform: analytic diagonal, central differences below it.
std::vector<std::vector<double>> rosenblatt_jacobian(const Density& density, const double* x);

enum class TransformCase { UniformBox, BoundedRosenblatt, Gaussian };

struct TransformConstants {
    double c1 = 0.0, c2 = 0.0, c3 = 0.0;
    // density-ratio bounds for the bounded case, NaN elsewhere
    double c1_bound = std::numeric_limits<double>::quiet_NaN();
    double c2_bound = std::numeric_limits<double>::quiet_NaN();
    std::string method;
};

// c3 from c1, c2 in the two equivalent prefactor conventions.
double c3_from(double c1, double c2, int d);
double c3_from_alt(double c1, double c2, int d);

TransformConstants transform_constants(const Density& density, TransformCase which, std::size_t grid = 41);

}  // namespace kmt
