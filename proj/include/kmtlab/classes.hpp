#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kmtlab/cells.hpp"
#include "kmtlab/haar.hpp"

namespace kmt {

enum class ClassKind { HaarSpan, KdeKernel, LipschitzGeneric, ResidualPair };
enum class KernelKind { Triangular, Epanechnikov, Biweight, Uniform };

std::string to_string(ClassKind k);
KernelKind kernel_from_string(const std::string& s);

// Compactly supported kernel on [-1,1].
double kernel_value(KernelKind k, double u);
// |k'(u)|, using one-sided limits at kinks.
double kernel_abs_slope(KernelKind k, double u);
double kernel_slope(KernelKind k, double u);
double kernel_sup(KernelKind k);
double kernel_lipschitz(KernelKind k);

// A finite net of index functions.
class FunctionClass {
public:
    ClassKind kind = ClassKind::LipschitzGeneric;
    std::string name;
    std::size_t dim = 1;
    std::vector<std::vector<double>> params;  // index parameter per member
    double bandwidth = 0.0;
    double delta = 0.0;  // net spacing of the index grid
    double scale = 1.0;  // every member is multiplied by this
    std::vector<std::vector<double>> breaks;

    // member evaluators (unscaled); grad may be empty
    std::function<double(std::size_t, const double*)> eval_fn;
    std::function<void(std::size_t, const double*, double*)> grad_fn;
    // optional evaluator of all members at once (unscaled)
    std::function<void(const double*, double*)> all_fn;

    // Haar span data
    const SplitTree* tree = nullptr;
    std::vector<std::vector<double>> leaf_coefs;
    // kernel data
    KernelKind kernel = KernelKind::Triangular;
    // residual pairs: member i is g[pair[i].first] * r[pair[i].second]
    std::vector<ScalarFn> g;
    std::vector<RFunction> r;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    std::size_t size() const { return params.size(); }
    double eval(std::size_t i, const double* x) const { return scale * eval_fn(i, x); }
    void eval_all(const double* x, double* out) const;
    // gradient of member i at x (scaled); false when unavailable
    bool grad(std::size_t i, const double* x, double* out) const;
    VecIntegrand integrand() const;
    FunctionClass subset(const std::vector<std::size_t>& idx) const;
};

// h_w(x) = b^{-d/2} K((x - w)/b), product kernel for d > 1.
FunctionClass kde_class(KernelKind kernel, double b, const std::vector<std::vector<double>>& grid, std::size_t d);
// Equally spaced grid of m points per axis on [lo,hi]^d.
std::vector<std::vector<double>> regular_grid(std::size_t d, std::size_t m, double lo = 0.0, double hi = 1.0);

// Members given by coefficients on the leaves of a tree.
FunctionClass haar_span_class(const SplitTree& tree, std::vector<std::vector<double>> leaf_coefs);
// sqrt(L) times the indicator of each cell.
FunctionClass histogram_class(const SplitTree& tree);
// Indicator of every leaf.
FunctionClass leaf_indicator_class(const SplitTree& tree);

// exp(-|x - w|^2 / (2 s^2)) for w in the grid.
FunctionClass gaussian_bump_class(const std::vector<std::vector<double>>& centres, double width, std::size_t d);
// Arbitrary smooth callbacks.
FunctionClass lipschitz_class(std::vector<ScalarFn> fns, std::size_t d, std::string name);

// Pairs g_a(x) r_b(y) on R^{d+1}.
FunctionClass residual_pair_class(std::vector<ScalarFn> g, std::vector<RFunction> r, std::size_t dx,
                                  std::string name);

struct ClassConstants {
    double M = 0, E = 0, TV = 0, L = 0, Kloc = 0;
    double TV_bound = 0;  // L times the volume of the union of member supports
    int S = 0;
    double vc_c = 0, vc_d = 0;
    std::vector<std::string> flags;
};

ClassConstants compute_constants(const FunctionClass& cls, const Density& measure);

// Greedy cover size of the class under the L2 metric of a discrete measure
// (uniform weights on the given points), radius eps times the envelope norm.
std::size_t greedy_cover_size(const FunctionClass& cls, const std::vector<std::vector<double>>& points, double eps);

// VC parameters: vc_d = index dimension + 1; vc_c the smallest constant with
// N(eps) <= vc_c eps^{-vc_d} on calibration radii {0.6, 0.4, 0.2, 0.05} over
// seeded random discrete measures drawn from measure.
std::pair<double, double> fit_vc_parameters(const FunctionClass& cls, const Density& measure,
                                            std::uint64_t seed = 12345);

struct DeltaNet {
    FunctionClass net;
    std::vector<std::size_t> members;  // indices into the original class
    std::vector<std::size_t> assign;   // member -> position in members
    double radius = 0.0;
    double threshold = 0.0;
};

// Greedy farthest-point selection under L2(P), with P discretized by a fixed
// seeded sample, until the covering radius is at most delta times the L2 norm
// of the envelope.
DeltaNet build_delta_net(const FunctionClass& cls, double delta, const Density& measure, std::size_t sample = 4000,
                         std::uint64_t seed = 777);

}  // namespace kmt
