#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kmt {

// Axis-aligned rectangle. Cells are treated as [lo, hi); the global right
// boundary of a support is closed.
struct Box {
    std::vector<double> lo, hi;

    Box() = default;
    Box(std::vector<double> l, std::vector<double> h) : lo(std::move(l)), hi(std::move(h)) {}
    static Box unit(std::size_t d) { return Box(std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)); }

    std::size_t dim() const { return lo.size(); }
    double volume() const;
    double max_side() const;
    bool bounded() const;
    bool contains_closed(const double* x) const;
};

class QuadratureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct QuadOptions {
    double rel_tol = 1e-10;
    int max_depth = 10;
};

// Vector integrand: writes nout values at x.
using VecIntegrand = std::function<void(const double* x, double* out)>;

// Order-16 tensor Gauss-Legendre on a finite box with adaptive bisection of
// every axis until successive estimates agree to rel_tol (relative to the
// integral of |f|). breaks[axis] lists interior points where the integrand
// may have kinks; the box is cut there first.
std::vector<double> integrate_box(const Box& box, std::size_t nout, const VecIntegrand& f,
                                  const std::vector<std::vector<double>>& breaks = {},
                                  const QuadOptions& opt = {});

double integrate_box(const Box& box, const std::function<double(const double*)>& f,
                     const std::vector<std::vector<double>>& breaks = {}, const QuadOptions& opt = {});

// Vector adaptive 16-point Gauss-Legendre on a finite interval; f writes nout
// values at t. Bisection stops at max_depth without error so that integrable
// endpoint singularities are tolerated.
using VecIntegrand1 = std::function<void(double t, double* out)>;
void integrate_1d(double a, double b, std::size_t nout, const VecIntegrand1& f, double* acc, double rel_tol = 1e-11,
                  int max_depth = 48);

// Fixed (non-adaptive) 16-point rule on [a,b]; nodes and weights.
void gauss16(double a, double b, double* nodes, double* weights);

}  // namespace kmt
