#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "kmtlab/numerics.hpp"
#include "kmtlab/quadrature.hpp"

namespace kmt {

class ConstructionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- marginals

class Marginal1D {
public:
    virtual ~Marginal1D() = default;
    virtual double pdf(double x) const = 0;
    virtual double cdf(double x) const = 0;
    virtual double quantile(double u) const = 0;
    virtual double lo() const = 0;
    virtual double hi() const = 0;
    virtual std::string describe() const = 0;
    // Points where the density is not smooth (used as quadrature cuts).
    virtual std::vector<double> kinks() const { return {}; }
};

class UniformMarginal : public Marginal1D {
public:
    UniformMarginal(double a = 0.0, double b = 1.0);
    double pdf(double x) const override;
    double cdf(double x) const override;
    double quantile(double u) const override;
    double lo() const override { return a_; }
    double hi() const override { return b_; }
    std::string describe() const override;

private:
    double a_, b_;
};

// Density proportional to c0 + c1 * x on [a,b].
class AffineMarginal : public Marginal1D {
public:
    AffineMarginal(double a, double b, double c0, double c1);
    double pdf(double x) const override;
    double cdf(double x) const override;
    double quantile(double u) const override;
    double lo() const override { return a_; }
    double hi() const override { return b_; }
    std::string describe() const override;

private:
    double a_, b_, c0_, c1_, norm_;
};

class TriangularMarginal : public Marginal1D {
public:
    TriangularMarginal(double a, double mode, double b);
    double pdf(double x) const override;
    double cdf(double x) const override;
    double quantile(double u) const override;
    double lo() const override { return a_; }
    double hi() const override { return b_; }
    std::string describe() const override;
    std::vector<double> kinks() const override { return {c_}; }

private:
    double a_, c_, b_;
};

class NormalMarginal : public Marginal1D {
public:
    NormalMarginal(double mu = 0.0, double sigma = 1.0);
    double pdf(double x) const override;
    double cdf(double x) const override;
    double quantile(double u) const override;
    double lo() const override;
    double hi() const override;
    std::string describe() const override;

private:
    double mu_, sigma_;
};

// ---------------------------------------------------------------- densities

// A probability law on R^D with enough analytic structure to build cells,
// integrate over rectangles and sample from rectangle restrictions.
class Density {
public:
    virtual ~Density() = default;
    virtual std::size_t dim() const = 0;
    virtual Box support() const = 0;
    virtual double density(const double* x) const = 0;
    virtual double mass(const Box& box) const = 0;
    // c with P(box and x_s < c) = frac * P(box).
    virtual double split_point(const Box& box, std::size_t s, double frac) const;
    // One draw from the law restricted to box.
    virtual void sample(const Box& box, RngStream& rng, double* out) const = 0;
    // Integral over box of f against the law.
    virtual std::vector<double> integrate(const Box& box, std::size_t nout, const VecIntegrand& f,
                                          const std::vector<std::vector<double>>& breaks = {},
                                          const QuadOptions& opt = {}) const = 0;
    double integrate1(const Box& box, const std::function<double(const double*)>& f,
                      const std::vector<std::vector<double>>& breaks = {}, const QuadOptions& opt = {}) const;

    // Rosenblatt transform and the stack of conditional densities
    // (f_1(x_1), f_{2|1}(x_2|x_1), ...). Unsupported by default.
    virtual bool has_rosenblatt() const { return false; }
    virtual std::vector<double> rosenblatt(const double* x) const;
    virtual std::vector<double> conditional_densities(const double* x) const;

    virtual std::string describe() const = 0;
};

class ProductDensity : public Density {
public:
    explicit ProductDensity(std::vector<std::shared_ptr<const Marginal1D>> marginals);
    static std::shared_ptr<ProductDensity> uniform(std::size_t d, double a = 0.0, double b = 1.0);

    std::size_t dim() const override { return m_.size(); }
    Box support() const override;
    double density(const double* x) const override;
    double mass(const Box& box) const override;
    double split_point(const Box& box, std::size_t s, double frac) const override;
    void sample(const Box& box, RngStream& rng, double* out) const override;
    std::vector<double> integrate(const Box& box, std::size_t nout, const VecIntegrand& f,
                                  const std::vector<std::vector<double>>& breaks = {},
                                  const QuadOptions& opt = {}) const override;
    bool has_rosenblatt() const override { return true; }
    std::vector<double> rosenblatt(const double* x) const override;
    std::vector<double> conditional_densities(const double* x) const override;
    std::string describe() const override;

    const Marginal1D& marginal(std::size_t i) const { return *m_[i]; }
    bool is_uniform() const;

private:
    std::vector<std::shared_ptr<const Marginal1D>> m_;
};

// Density proportional to a0 + a1 x1 + a2 x2 on [0,1]^2; coordinates are
// dependent, the Rosenblatt Jacobian is lower triangular.
class AffineDensity2D : public Density {
public:
    AffineDensity2D(double a0 = 1.0, double a1 = 1.0, double a2 = 1.0);
    std::size_t dim() const override { return 2; }
    Box support() const override { return Box::unit(2); }
    double density(const double* x) const override;
    double mass(const Box& box) const override;
    double split_point(const Box& box, std::size_t s, double frac) const override;
    void sample(const Box& box, RngStream& rng, double* out) const override;
    std::vector<double> integrate(const Box& box, std::size_t nout, const VecIntegrand& f,
                                  const std::vector<std::vector<double>>& breaks = {},
                                  const QuadOptions& opt = {}) const override;
    bool has_rosenblatt() const override { return true; }
    std::vector<double> rosenblatt(const double* x) const override;
    std::vector<double> conditional_densities(const double* x) const override;
    std::string describe() const override;
    double max_density() const;

private:
    double a0_, a1_, a2_;  // already normalized
};

// ---------------------------------------------------------------- regression laws

// Functions of the response entering r(y): constant one, identity, threshold indicator.
struct RFunction {
    enum class Kind { One, Identity, Threshold };
    Kind kind = Kind::One;
    double y0 = 0.0;

    static RFunction one() { return {Kind::One, 0.0}; }
    static RFunction identity() { return {Kind::Identity, 0.0}; }
    static RFunction threshold(double y) { return {Kind::Threshold, y}; }
    double operator()(double y) const;
    std::string describe() const;
};

// Law of y given x.
class ConditionalY {
public:
    virtual ~ConditionalY() = default;
    virtual double cdf(double y, const double* x) const = 0;
    virtual double quantile(double u, const double* x) const = 0;
    virtual double pdf(double y, const double* x) const = 0;
    virtual double lo() const = 0;
    virtual double hi() const = 0;
    // E[r(y) 1(a <= y < b) | x]
    virtual double r_integral(const RFunction& r, const double* x, double a, double b) const = 0;
    // E[r1(y) r2(y) | x]
    virtual double r_cross(const RFunction& r1, const RFunction& r2, const double* x) const = 0;
    double theta(const RFunction& r, const double* x) const { return r_integral(r, x, lo(), hi()); }
    virtual std::string describe() const = 0;
};

// y = mu(x) + sigma * eps, eps standard normal.
class NormalLocationY : public ConditionalY {
public:
    NormalLocationY(std::function<double(const double*)> mu, double sigma, std::string mu_name);
    double mean(const double* x) const { return mu_(x); }
    double sigma() const { return sigma_; }
    double cdf(double y, const double* x) const override;
    double quantile(double u, const double* x) const override;
    double pdf(double y, const double* x) const override;
    double lo() const override;
    double hi() const override;
    double r_integral(const RFunction& r, const double* x, double a, double b) const override;
    double r_cross(const RFunction& r1, const RFunction& r2, const double* x) const override;
    std::string describe() const override;

private:
    std::function<double(const double*)> mu_;
    double sigma_;
    std::string name_;
};

// y independent of x, uniform on [a,b].
class UniformIndependentY : public ConditionalY {
public:
    UniformIndependentY(double a = 0.0, double b = 1.0);
    double cdf(double y, const double* x) const override;
    double quantile(double u, const double* x) const override;
    double pdf(double y, const double* x) const override;
    double lo() const override { return a_; }
    double hi() const override { return b_; }
    double r_integral(const RFunction& r, const double* x, double a, double b) const override;
    double r_cross(const RFunction& r1, const RFunction& r2, const double* x) const override;
    std::string describe() const override;

private:
    double a_, b_;
};

// Joint law of (x, y) on R^{d+1}: x from a product density, y | x from a ConditionalY.
class RegressionDensity : public Density {
public:
    RegressionDensity(std::shared_ptr<const ProductDensity> x, std::shared_ptr<const ConditionalY> y);
    std::size_t dim() const override { return x_->dim() + 1; }
    Box support() const override;
    double density(const double* z) const override;
    double mass(const Box& box) const override;
    double split_point(const Box& box, std::size_t s, double frac) const override;
    void sample(const Box& box, RngStream& rng, double* out) const override;
    std::vector<double> integrate(const Box& box, std::size_t nout, const VecIntegrand& f,
                                  const std::vector<std::vector<double>>& breaks = {},
                                  const QuadOptions& opt = {}) const override;
    std::string describe() const override;

    const ProductDensity& x_law() const { return *x_; }
    std::shared_ptr<const ProductDensity> x_law_ptr() const { return x_; }
    const ConditionalY& y_law() const { return *y_; }
    Box x_part(const Box& box) const;
    // Integral over box of g(x) * r(y): reduces to an x-integral.
    double integrate_gr(const Box& box, const std::function<double(const double*)>& g, const RFunction& r,
                        const std::vector<std::vector<double>>& xbreaks = {}) const;

private:
    std::shared_ptr<const ProductDensity> x_;
    std::shared_ptr<const ConditionalY> y_;
};

// ---------------------------------------------------------------- trees

// Binary tree stored in flat arrays. Node 0 is the root; children indices
// are larger than their parent, so increasing id order is top-down.
struct BinaryTopology {
    std::vector<int> left, right, parent;
    std::vector<double> mass;
    std::vector<int> leaves;  // leaf node ids, left to right

    std::size_t size() const { return mass.size(); }
    bool is_leaf(int v) const { return left[static_cast<std::size_t>(v)] < 0; }
    double p_split(int v) const {
        return mass[static_cast<std::size_t>(left[static_cast<std::size_t>(v)])] / mass[static_cast<std::size_t>(v)];
    }
    // sqrt(p_L p_R / p), the standard deviation scale of a detail node
    double detail_scale(int v) const;
    std::vector<int> internal_nodes() const;
};

class SplitTree {
public:
    virtual ~SplitTree() = default;
    const BinaryTopology& topology() const { return topo_; }
    std::size_t dim() const { return dim_; }
    const Box& box(int v) const { return boxes_[static_cast<std::size_t>(v)]; }
    std::size_t num_leaves() const { return topo_.leaves.size(); }
    const Box& leaf_box(std::size_t k) const { return box(topo_.leaves[k]); }
    double leaf_mass(std::size_t k) const { return topo_.mass[static_cast<std::size_t>(topo_.leaves[k])]; }
    // Index (0..num_leaves-1) of the leaf containing x.
    virtual std::size_t locate(const double* x) const = 0;
    double realized_rho() const;

protected:
    BinaryTopology topo_;
    std::vector<Box> boxes_;
    std::size_t dim_ = 0;
};

// Full dyadic tree of depth K; node (j,k) sits at level j counted from the
// leaves, 0 <= k < 2^{K-j}.
class CellTree : public SplitTree {
public:
    CellTree() = default;
    int depth() const { return K_; }
    int node(int j, int k) const { return (1 << (K_ - j)) - 1 + k; }
    int level_of(int v) const;
    int index_of(int v) const;
    const Box& cell(int j, int k) const { return box(node(j, k)); }
    double mass(int j, int k) const { return topo_.mass[static_cast<std::size_t>(node(j, k))]; }
    double p_split(int j, int k) const { return topo_.p_split(node(j, k)); }
    int split_coord(int j, int k) const { return split_coord_[static_cast<std::size_t>(node(j, k))]; }
    double split_at(int j, int k) const { return split_at_[static_cast<std::size_t>(node(j, k))]; }
    double rho_target() const { return rho_; }
    std::size_t locate(const double* x) const override;

    std::string to_text() const;
    static CellTree from_text(const std::string& text);

    friend CellTree build_tree(const Density&, int, const std::vector<int>&, const std::vector<double>&, double);
    friend CellTree make_cell_tree(int K, std::size_t dim, std::vector<Box> boxes, std::vector<double> mass,
                                    std::vector<int> split_coord, std::vector<double> split_at, double rho);

private:
    int K_ = 0;
    double rho_ = 1.0;
    std::vector<int> split_coord_;
    std::vector<double> split_at_;
};

CellTree make_cell_tree(int K, std::size_t dim, std::vector<Box> boxes, std::vector<double> mass,
                        std::vector<int> split_coord, std::vector<double> split_at, double rho);

// Generic builder: coord[q-1] is the split coordinate at depth q; leaf_w are
// target relative terminal masses. Split ratios follow from leaf_w.
CellTree build_tree(const Density& density, int K, const std::vector<int>& coord, const std::vector<double>& leaf_w,
                    double rho);

// Deterministic leaf weights in {1, rho} with both values present when K >= 1.
std::vector<double> quasi_dyadic_weights(int K, double rho);

CellTree build_axis_aligned(const Density& density, int K, double rho = 1.0);

int default_depth(std::int64_t n, int d);
// floor(log2 n): cells of mass about 1/n.
int full_depth(std::int64_t n);

struct CylinderedCellTree {
    CellTree tree;  // over R^{d+1}; levels N..M+N are x-cylinders
    int M = 0, N = 0;
    std::size_t dx = 0;

    // Combined-tree node of y-cell Y_{l,j,m}, 0 <= j <= N.
    int y_node(int l, int j, int m) const { return tree.node(j, (1 << (N - j)) * l + m); }
    // Combined-tree node of x-cell X_{j,k}, 0 <= j <= M.
    int x_node(int j, int k) const { return tree.node(j + N, k); }
    // The x-tree as a CellTree over R^d.
    CellTree x_tree() const;
};

CylinderedCellTree build_cylindered(const Density& joint, std::size_t dx, int M, int N, double rho = 1.0);

// General binary tree over an ordered list of cells, split by index halving.
class PartitionTree : public SplitTree {
public:
    PartitionTree(const std::vector<Box>& cells, const Density& density);
    std::size_t locate(const double* x) const override;

private:
    int build(int a, int b, int parent, const std::vector<Box>& cells, const std::vector<double>& m);
    bool sorted_1d_ = false;
};

struct QuasiUniformReport {
    double rho = 0.0;
    double total_mass = 0.0;
    bool covers_support = false;
};

QuasiUniformReport validate_quasi_uniform(const std::vector<Box>& cells, const Density& density);

// Cells of [lo,hi] with target masses proportional to w (quantile cuts of a 1-d law).
std::vector<Box> quantile_cells_1d(const Marginal1D& law, const std::vector<double>& w);

// Appends cells covering the part of the support of law not covered by the
// contiguous 1-d cells: P0 = floor(residual / min cell mass) cells of equal
// mass, so the enlarged ratio stays below max(rho, 2).
std::vector<Box> enlarge_with_residual_cells_1d(const std::vector<Box>& cells, const Marginal1D& law);

}  // namespace kmt
