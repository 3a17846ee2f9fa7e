#include "kmtlab/cells.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/tools/roots.hpp>
#include "json.hpp"

namespace kmt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp01(double u) { return std::min(1.0, std::max(0.0, u)); }

// Positive root x of (c1/2) x^2 + c0 x = K, stable for small c1.
double affine_root(double c0, double c1, double K) {
    if (c1 == 0.0) return K / c0;
    double disc = std::max(0.0, c0 * c0 + 2.0 * c1 * K);
    double s = std::sqrt(disc);
    if (c0 >= 0.0) return 2.0 * K / (c0 + s);
    return (-c0 + s) / c1;
}

double solve_bracketed(const std::function<double(double)>& g, double a, double b) {
    double ga = g(a), gb = g(b);
    if (ga == 0.0) return a;
    if (gb == 0.0) return b;
    if ((ga < 0) == (gb < 0)) throw ConstructionError("split search: no sign change in bracket");
    std::uintmax_t it = 300;
    auto r = boost::math::tools::toms748_solve(g, a, b, ga, gb, boost::math::tools::eps_tolerance<double>(50), it);
    return 0.5 * (r.first + r.second);
}

// Finite bracket [a,b] inside [lo,hi] around the root of an increasing g.
std::pair<double, double> finite_bracket(const std::function<double(double)>& g, double lo, double hi,
                                         double guess) {
    double a = std::isfinite(lo) ? lo : std::min(guess, std::isfinite(hi) ? hi : guess) - 1.0;
    double b = std::isfinite(hi) ? hi : std::max(guess, a) + 1.0;
    double step = 1.0;
    while (!std::isfinite(lo) && g(a) > 0.0) {
        step *= 2.0;
        a -= step;
        if (step > 1e12) throw ConstructionError("split search: cannot bracket lower end");
    }
    step = 1.0;
    while (!std::isfinite(hi) && g(b) < 0.0) {
        step *= 2.0;
        b += step;
        if (step > 1e12) throw ConstructionError("split search: cannot bracket upper end");
    }
    return {a, b};
}

std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------- marginals

UniformMarginal::UniformMarginal(double a, double b) : a_(a), b_(b) {
    if (!(b > a) || !std::isfinite(a) || !std::isfinite(b)) throw ConstructionError("uniform: need finite a < b");
}
double UniformMarginal::pdf(double x) const { return (x < a_ || x > b_) ? 0.0 : 1.0 / (b_ - a_); }
double UniformMarginal::cdf(double x) const { return clamp01((x - a_) / (b_ - a_)); }
double UniformMarginal::quantile(double u) const { return a_ + clamp01(u) * (b_ - a_); }
std::string UniformMarginal::describe() const { return "uniform(" + fmt_num(a_) + "," + fmt_num(b_) + ")"; }

AffineMarginal::AffineMarginal(double a, double b, double c0, double c1) : a_(a), b_(b), c0_(c0), c1_(c1) {
    if (!(b > a) || !std::isfinite(a) || !std::isfinite(b)) throw ConstructionError("affine: need finite a < b");
    if (c0 + c1 * a < 0.0 || c0 + c1 * b < 0.0) throw ConstructionError("affine: density negative on support");
    norm_ = c0 * (b - a) + 0.5 * c1 * (b * b - a * a);
    if (!(norm_ > 0.0)) throw ConstructionError("affine: zero total mass");
}
double AffineMarginal::pdf(double x) const { return (x < a_ || x > b_) ? 0.0 : (c0_ + c1_ * x) / norm_; }
double AffineMarginal::cdf(double x) const {
    if (x <= a_) return 0.0;
    if (x >= b_) return 1.0;
    return clamp01((c0_ * (x - a_) + 0.5 * c1_ * (x * x - a_ * a_)) / norm_);
}
double AffineMarginal::quantile(double u) const {
    u = clamp01(u);
    if (u == 0.0) return a_;
    if (u == 1.0) return b_;
    // (c1/2)(x^2 - a^2) + c0 (x - a) = u norm, shift to t = x - a.
    double g0 = c0_ + c1_ * a_;
    double t = affine_root(g0, c1_, u * norm_);
    return std::min(b_, std::max(a_, a_ + t));
}
std::string AffineMarginal::describe() const {
    return "affine(" + fmt_num(a_) + "," + fmt_num(b_) + ";" + fmt_num(c0_) + "+" + fmt_num(c1_) + "x)";
}

TriangularMarginal::TriangularMarginal(double a, double mode, double b) : a_(a), c_(mode), b_(b) {
    if (!(a < b) || mode < a || mode > b) throw ConstructionError("triangular: need a <= mode <= b, a < b");
}
double TriangularMarginal::pdf(double x) const {
    if (x < a_ || x > b_) return 0.0;
    if (x < c_) return 2.0 * (x - a_) / ((b_ - a_) * (c_ - a_));
    if (x > c_) return 2.0 * (b_ - x) / ((b_ - a_) * (b_ - c_));
    return 2.0 / (b_ - a_);
}
double TriangularMarginal::cdf(double x) const {
    if (x <= a_) return 0.0;
    if (x >= b_) return 1.0;
    if (x <= c_) return (x - a_) * (x - a_) / ((b_ - a_) * (c_ - a_));
    return 1.0 - (b_ - x) * (b_ - x) / ((b_ - a_) * (b_ - c_));
}
double TriangularMarginal::quantile(double u) const {
    u = clamp01(u);
    double fc = (c_ - a_) / (b_ - a_);
    if (u <= fc) return a_ + std::sqrt(u * (b_ - a_) * (c_ - a_));
    return b_ - std::sqrt((1.0 - u) * (b_ - a_) * (b_ - c_));
}
std::string TriangularMarginal::describe() const {
    return "triangular(" + fmt_num(a_) + "," + fmt_num(c_) + "," + fmt_num(b_) + ")";
}

NormalMarginal::NormalMarginal(double mu, double sigma) : mu_(mu), sigma_(sigma) {
    if (!(sigma > 0.0)) throw ConstructionError("normal: sigma must be positive");
}
double NormalMarginal::pdf(double x) const { return gaussian_pdf((x - mu_) / sigma_) / sigma_; }
double NormalMarginal::cdf(double x) const {
    if (x == -kInf) return 0.0;
    if (x == kInf) return 1.0;
    return gaussian_cdf((x - mu_) / sigma_);
}
double NormalMarginal::quantile(double u) const {
    if (u <= 0.0) return -kInf;
    if (u >= 1.0) return kInf;
    return mu_ + sigma_ * gaussian_quantile(u);
}
double NormalMarginal::lo() const { return -kInf; }
double NormalMarginal::hi() const { return kInf; }
std::string NormalMarginal::describe() const { return "normal(" + fmt_num(mu_) + "," + fmt_num(sigma_) + ")"; }

// ---------------------------------------------------------------- Density

double Density::split_point(const Box& box, std::size_t s, double frac) const {
    const double total = mass(box);
    if (!(total > 0.0)) throw ConstructionError("split: degenerate cell with zero mass");
    auto g = [&](double c) {
        Box b = box;
        b.hi[s] = c;
        return mass(b) - frac * total;
    };
    double guess = 0.0;
    if (std::isfinite(box.lo[s]) && std::isfinite(box.hi[s]))
        guess = 0.5 * (box.lo[s] + box.hi[s]);
    else if (std::isfinite(box.lo[s]))
        guess = box.lo[s] + 1.0;
    else if (std::isfinite(box.hi[s]))
        guess = box.hi[s] - 1.0;
    auto [a, b] = finite_bracket(g, box.lo[s], box.hi[s], guess);
    return solve_bracketed(g, a, b);
}

double Density::integrate1(const Box& box, const std::function<double(const double*)>& f,
                           const std::vector<std::vector<double>>& breaks, const QuadOptions& opt) const {
    return integrate(
        box, 1, [&](const double* x, double* out) { out[0] = f(x); }, breaks, opt)[0];
}

std::vector<double> Density::rosenblatt(const double*) const {
    throw ConstructionError("rosenblatt transform unsupported for " + describe());
}
std::vector<double> Density::conditional_densities(const double*) const {
    throw ConstructionError("conditional densities unsupported for " + describe());
}

// ---------------------------------------------------------------- ProductDensity

ProductDensity::ProductDensity(std::vector<std::shared_ptr<const Marginal1D>> marginals) : m_(std::move(marginals)) {
    if (m_.empty()) throw ConstructionError("product density needs at least one marginal");
}

std::shared_ptr<ProductDensity> ProductDensity::uniform(std::size_t d, double a, double b) {
    std::vector<std::shared_ptr<const Marginal1D>> m;
    for (std::size_t i = 0; i < d; ++i) m.push_back(std::make_shared<UniformMarginal>(a, b));
    return std::make_shared<ProductDensity>(std::move(m));
}

Box ProductDensity::support() const {
    Box b;
    for (const auto& m : m_) {
        b.lo.push_back(m->lo());
        b.hi.push_back(m->hi());
    }
    return b;
}

double ProductDensity::density(const double* x) const {
    double v = 1.0;
    for (std::size_t i = 0; i < m_.size(); ++i) v *= m_[i]->pdf(x[i]);
    return v;
}

double ProductDensity::mass(const Box& box) const {
    double v = 1.0;
    for (std::size_t i = 0; i < m_.size(); ++i) {
        double a = m_[i]->cdf(box.lo[i]), b = m_[i]->cdf(box.hi[i]);
        v *= std::max(0.0, b - a);
    }
    return v;
}

double ProductDensity::split_point(const Box& box, std::size_t s, double frac) const {
    double a = m_[s]->cdf(box.lo[s]), b = m_[s]->cdf(box.hi[s]);
    if (!(b > a)) throw ConstructionError("split: degenerate cell with zero mass");
    return m_[s]->quantile(a + frac * (b - a));
}

void ProductDensity::sample(const Box& box, RngStream& rng, double* out) const {
    for (std::size_t i = 0; i < m_.size(); ++i) {
        double a = m_[i]->cdf(box.lo[i]), b = m_[i]->cdf(box.hi[i]);
        double x = m_[i]->quantile(a + rng.next_uniform() * (b - a));
        out[i] = std::min(std::max(x, box.lo[i]), box.hi[i]);
    }
}

std::vector<double> ProductDensity::integrate(const Box& box, std::size_t nout, const VecIntegrand& f,
                                              const std::vector<std::vector<double>>& breaks,
                                              const QuadOptions& opt) const {
    const std::size_t d = m_.size();
    // Bounded axes integrate in x with the pdf as weight; unbounded ones in u = F(x).
    Box t = box;
    std::vector<char> ubox(d, 0);
    std::vector<std::vector<double>> tb(d);
    for (std::size_t i = 0; i < d; ++i) {
        std::vector<double> br = i < breaks.size() ? breaks[i] : std::vector<double>{};
        for (double k : m_[i]->kinks()) br.push_back(k);
        if (!std::isfinite(box.lo[i]) || !std::isfinite(box.hi[i])) {
            ubox[i] = 1;
            t.lo[i] = m_[i]->cdf(box.lo[i]);
            t.hi[i] = m_[i]->cdf(box.hi[i]);
            for (double v : br) tb[i].push_back(m_[i]->cdf(v));
        } else {
            tb[i] = br;
        }
    }
    std::vector<double> x(d);
    return integrate_box(
        t, nout,
        [&](const double* tt, double* out) {
            double w = 1.0;
            for (std::size_t i = 0; i < d; ++i) {
                if (ubox[i]) {
                    x[i] = m_[i]->quantile(tt[i]);
                } else {
                    x[i] = tt[i];
                    w *= m_[i]->pdf(tt[i]);
                }
            }
            f(x.data(), out);
            for (std::size_t c = 0; c < nout; ++c) out[c] *= w;
        },
        tb, opt);
}

std::vector<double> ProductDensity::rosenblatt(const double* x) const {
    std::vector<double> u(m_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) u[i] = m_[i]->cdf(x[i]);
    return u;
}

std::vector<double> ProductDensity::conditional_densities(const double* x) const {
    std::vector<double> f(m_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) f[i] = m_[i]->pdf(x[i]);
    return f;
}

std::string ProductDensity::describe() const {
    std::string s = "product[";
    for (std::size_t i = 0; i < m_.size(); ++i) s += (i ? "," : "") + m_[i]->describe();
    return s + "]";
}

bool ProductDensity::is_uniform() const {
    for (const auto& m : m_)
        if (!dynamic_cast<const UniformMarginal*>(m.get())) return false;
    return true;
}

// ---------------------------------------------------------------- AffineDensity2D

AffineDensity2D::AffineDensity2D(double a0, double a1, double a2) {
    if (a0 < 0.0 || a0 + a1 < 0.0 || a0 + a2 < 0.0 || a0 + a1 + a2 < 0.0)
        throw ConstructionError("affine2d: density negative on the unit square");
    double z = a0 + 0.5 * a1 + 0.5 * a2;
    if (!(z > 0.0)) throw ConstructionError("affine2d: zero total mass");
    a0_ = a0 / z;
    a1_ = a1 / z;
    a2_ = a2 / z;
}

double AffineDensity2D::density(const double* x) const {
    if (x[0] < 0.0 || x[0] > 1.0 || x[1] < 0.0 || x[1] > 1.0) return 0.0;
    return a0_ + a1_ * x[0] + a2_ * x[1];
}

double AffineDensity2D::mass(const Box& b) const {
    double l1 = std::max(0.0, b.lo[0]), h1 = std::min(1.0, b.hi[0]);
    double l2 = std::max(0.0, b.lo[1]), h2 = std::min(1.0, b.hi[1]);
    if (h1 <= l1 || h2 <= l2) return 0.0;
    double A = h1 - l1, B = h2 - l2;
    return a0_ * A * B + a1_ * 0.5 * (h1 * h1 - l1 * l1) * B + a2_ * A * 0.5 * (h2 * h2 - l2 * l2);
}

double AffineDensity2D::split_point(const Box& box, std::size_t s, double frac) const {
    const double total = mass(box);
    if (!(total > 0.0)) throw ConstructionError("split: degenerate cell with zero mass");
    const std::size_t o = 1 - s;
    const double ls = std::max(0.0, box.lo[s]);
    const double lo_o = std::max(0.0, box.lo[o]), hi_o = std::min(1.0, box.hi[o]);
    const double as = s == 0 ? a1_ : a2_, ao = s == 0 ? a2_ : a1_;
    const double B = hi_o - lo_o, S = 0.5 * (hi_o * hi_o - lo_o * lo_o);
    // mass(ls..c) = (as B / 2)(c^2 - ls^2) + (a0 B + ao S)(c - ls)
    double beta = a0_ * B + ao * S;
    double g0 = beta + as * B * ls;  // slope at ls
    if (g0 < 0.0) return Density::split_point(box, s, frac);
    double t = affine_root(g0, as * B, frac * total);
    return ls + t;
}

double AffineDensity2D::max_density() const { return std::max({a0_, a0_ + a1_, a0_ + a2_, a0_ + a1_ + a2_}); }

void AffineDensity2D::sample(const Box& box, RngStream& rng, double* out) const {
    double l1 = std::max(0.0, box.lo[0]), h1 = std::min(1.0, box.hi[0]);
    double l2 = std::max(0.0, box.lo[1]), h2 = std::min(1.0, box.hi[1]);
    double c[4][2] = {{l1, l2}, {l1, h2}, {h1, l2}, {h1, h2}};
    double bound = 0.0;
    for (auto& p : c) bound = std::max(bound, a0_ + a1_ * p[0] + a2_ * p[1]);
    for (int it = 0; it < 10000000; ++it) {
        double x0 = l1 + rng.next_uniform() * (h1 - l1);
        double x1 = l2 + rng.next_uniform() * (h2 - l2);
        double u = rng.next_uniform() * bound;
        if (u < a0_ + a1_ * x0 + a2_ * x1) {
            out[0] = x0;
            out[1] = x1;
            return;
        }
    }
    throw ConstructionError("affine2d: rejection sampler exhausted");
}

std::vector<double> AffineDensity2D::integrate(const Box& box, std::size_t nout, const VecIntegrand& f,
                                               const std::vector<std::vector<double>>& breaks,
                                               const QuadOptions& opt) const {
    Box b = box;
    for (int i = 0; i < 2; ++i) {
        b.lo[i] = std::max(0.0, b.lo[i]);
        b.hi[i] = std::min(1.0, b.hi[i]);
    }
    if (b.hi[0] <= b.lo[0] || b.hi[1] <= b.lo[1]) return std::vector<double>(nout, 0.0);
    return integrate_box(
        b, nout,
        [&](const double* x, double* out) {
            f(x, out);
            double w = a0_ + a1_ * x[0] + a2_ * x[1];
            for (std::size_t c = 0; c < nout; ++c) out[c] *= w;
        },
        breaks, opt);
}

std::vector<double> AffineDensity2D::rosenblatt(const double* x) const {
    double x1 = std::min(1.0, std::max(0.0, x[0])), x2 = std::min(1.0, std::max(0.0, x[1]));
    double f1 = a0_ + a1_ * x1 + 0.5 * a2_;
    double F1 = a0_ * x1 + 0.5 * a1_ * x1 * x1 + 0.5 * a2_ * x1;
    double F21 = (a0_ * x2 + a1_ * x1 * x2 + 0.5 * a2_ * x2 * x2) / f1;
    return {F1, F21};
}

std::vector<double> AffineDensity2D::conditional_densities(const double* x) const {
    double f1 = a0_ + a1_ * x[0] + 0.5 * a2_;
    return {f1, (a0_ + a1_ * x[0] + a2_ * x[1]) / f1};
}

std::string AffineDensity2D::describe() const {
    return "affine2d(" + fmt_num(a0_) + "+" + fmt_num(a1_) + "x1+" + fmt_num(a2_) + "x2)";
}

// ---------------------------------------------------------------- response functions

double RFunction::operator()(double y) const {
    switch (kind) {
        case Kind::One:
            return 1.0;
        case Kind::Identity:
            return y;
        case Kind::Threshold:
            return y <= y0 ? 1.0 : 0.0;
    }
    return 0.0;
}

std::string RFunction::describe() const {
    switch (kind) {
        case Kind::One:
            return "one";
        case Kind::Identity:
            return "id";
        case Kind::Threshold:
            return "le(" + fmt_num(y0) + ")";
    }
    return "?";
}

NormalLocationY::NormalLocationY(std::function<double(const double*)> mu, double sigma, std::string mu_name)
    : mu_(std::move(mu)), sigma_(sigma), name_(std::move(mu_name)) {
    if (!(sigma > 0.0)) throw ConstructionError("normal response: sigma must be positive");
}

double NormalLocationY::cdf(double y, const double* x) const {
    if (y == -kInf) return 0.0;
    if (y == kInf) return 1.0;
    return gaussian_cdf((y - mu_(x)) / sigma_);
}
double NormalLocationY::quantile(double u, const double* x) const {
    if (u <= 0.0) return -kInf;
    if (u >= 1.0) return kInf;
    return mu_(x) + sigma_ * gaussian_quantile(u);
}
double NormalLocationY::pdf(double y, const double* x) const { return gaussian_pdf((y - mu_(x)) / sigma_) / sigma_; }
double NormalLocationY::lo() const { return -kInf; }
double NormalLocationY::hi() const { return kInf; }

namespace {
// P(a <= Z < b) for standard normal, tail aware.
double std_prob(double a, double b) {
    if (b <= a) return 0.0;
    if (a > 0.0) return gaussian_sf(a) - gaussian_sf(b);
    return gaussian_cdf(b) - gaussian_cdf(a);
}
// E[Z 1(a <= Z < b)] = phi(a) - phi(b)
double std_first(double a, double b) {
    if (b <= a) return 0.0;
    double pa = std::isfinite(a) ? gaussian_pdf(a) : 0.0;
    double pb = std::isfinite(b) ? gaussian_pdf(b) : 0.0;
    return pa - pb;
}
}  // namespace

double NormalLocationY::r_integral(const RFunction& r, const double* x, double a, double b) const {
    const double mu = mu_(x);
    if (r.kind == RFunction::Kind::Threshold) b = std::min(b, r.y0);
    if (b <= a) return 0.0;
    double za = (a - mu) / sigma_, zb = (b - mu) / sigma_;
    switch (r.kind) {
        case RFunction::Kind::One:
        case RFunction::Kind::Threshold:
            return std_prob(za, zb);
        case RFunction::Kind::Identity:
            return mu * std_prob(za, zb) + sigma_ * std_first(za, zb);
    }
    return 0.0;
}

double NormalLocationY::r_cross(const RFunction& r1, const RFunction& r2, const double* x) const {
    using K = RFunction::Kind;
    if (r1.kind == K::One) return r_integral(r2, x, -kInf, kInf);
    if (r2.kind == K::One) return r_integral(r1, x, -kInf, kInf);
    if (r1.kind == K::Threshold && r2.kind == K::Threshold)
        return r_integral(RFunction::threshold(std::min(r1.y0, r2.y0)), x, -kInf, kInf);
    const double mu = mu_(x);
    if (r1.kind == K::Identity && r2.kind == K::Identity) return mu * mu + sigma_ * sigma_;
    // identity times threshold: E[y 1(y <= y0)]
    double y0 = r1.kind == K::Threshold ? r1.y0 : r2.y0;
    return r_integral(RFunction::identity(), x, -kInf, y0);
}

std::string NormalLocationY::describe() const { return "normal_location(" + name_ + "," + fmt_num(sigma_) + ")"; }

UniformIndependentY::UniformIndependentY(double a, double b) : a_(a), b_(b) {
    if (!(b > a)) throw ConstructionError("uniform response: need a < b");
}
double UniformIndependentY::cdf(double y, const double*) const { return clamp01((y - a_) / (b_ - a_)); }
double UniformIndependentY::quantile(double u, const double*) const { return a_ + clamp01(u) * (b_ - a_); }
double UniformIndependentY::pdf(double y, const double*) const { return (y < a_ || y > b_) ? 0.0 : 1.0 / (b_ - a_); }
double UniformIndependentY::r_integral(const RFunction& r, const double*, double a, double b) const {
    a = std::max(a, a_);
    b = std::min(b, b_);
    if (r.kind == RFunction::Kind::Threshold) b = std::min(b, r.y0);
    if (b <= a) return 0.0;
    double w = b_ - a_;
    if (r.kind == RFunction::Kind::Identity) return 0.5 * (b * b - a * a) / w;
    return (b - a) / w;
}
double UniformIndependentY::r_cross(const RFunction& r1, const RFunction& r2, const double* x) const {
    using K = RFunction::Kind;
    if (r1.kind == K::One) return r_integral(r2, x, a_, b_);
    if (r2.kind == K::One) return r_integral(r1, x, a_, b_);
    if (r1.kind == K::Threshold && r2.kind == K::Threshold)
        return r_integral(RFunction::threshold(std::min(r1.y0, r2.y0)), x, a_, b_);
    if (r1.kind == K::Identity && r2.kind == K::Identity) return (b_ * b_ * b_ - a_ * a_ * a_) / (3.0 * (b_ - a_));
    double y0 = r1.kind == K::Threshold ? r1.y0 : r2.y0;
    return r_integral(RFunction::identity(), x, a_, std::min(y0, b_));
}
std::string UniformIndependentY::describe() const { return "uniform_indep(" + fmt_num(a_) + "," + fmt_num(b_) + ")"; }

// ---------------------------------------------------------------- RegressionDensity

RegressionDensity::RegressionDensity(std::shared_ptr<const ProductDensity> x, std::shared_ptr<const ConditionalY> y)
    : x_(std::move(x)), y_(std::move(y)) {}

Box RegressionDensity::support() const {
    Box b = x_->support();
    b.lo.push_back(y_->lo());
    b.hi.push_back(y_->hi());
    return b;
}

Box RegressionDensity::x_part(const Box& box) const {
    Box b = box;
    b.lo.pop_back();
    b.hi.pop_back();
    return b;
}

double RegressionDensity::density(const double* z) const {
    return x_->density(z) * y_->pdf(z[x_->dim()], z);
}

double RegressionDensity::mass(const Box& box) const {
    const std::size_t d = x_->dim();
    Box xb = x_part(box);
    const double a = box.lo[d], b = box.hi[d];
    if (a <= y_->lo() && b >= y_->hi()) return x_->mass(xb);
    if (b <= a) return 0.0;
    return x_->integrate1(xb, [&](const double* x) { return y_->r_integral(RFunction::one(), x, a, b); });
}

double RegressionDensity::split_point(const Box& box, std::size_t s, double frac) const {
    const std::size_t d = x_->dim();
    if (s < d && box.lo[d] <= y_->lo() && box.hi[d] >= y_->hi()) return x_->split_point(x_part(box), s, frac);
    return Density::split_point(box, s, frac);
}

void RegressionDensity::sample(const Box& box, RngStream& rng, double* out) const {
    const std::size_t d = x_->dim();
    Box xb = x_part(box);
    const double a = box.lo[d], b = box.hi[d];
    for (int it = 0; it < 100000000; ++it) {
        x_->sample(xb, rng, out);
        double pa = y_->r_integral(RFunction::one(), out, a, b);
        if (rng.next_uniform() >= pa) continue;
        double v = rng.next_uniform();
        double Fa = y_->cdf(a, out), Fb = y_->cdf(b, out);
        double y;
        if (Fa > 0.5) {
            // work with upper tails to keep precision
            double Sa = 1.0 - Fa, Sb = 1.0 - Fb;
            auto* nl = dynamic_cast<const NormalLocationY*>(y_.get());
            if (nl) {
                double mu = nl->mean(out), sg = nl->sigma();
                Sa = std::isfinite(a) ? gaussian_sf((a - mu) / sg) : 1.0;
                Sb = std::isfinite(b) ? gaussian_sf((b - mu) / sg) : 0.0;
                double s = Sa - v * (Sa - Sb);
                y = s <= 0.0 ? b : (s >= 1.0 ? a : mu - sg * gaussian_quantile(s));
            } else {
                y = y_->quantile(1.0 - (Sa - v * (Sa - Sb)), out);
            }
        } else {
            y = y_->quantile(Fa + v * (Fb - Fa), out);
        }
        out[d] = std::min(std::max(y, a), b);
        return;
    }
    throw ConstructionError("regression sampler exhausted");
}

std::vector<double> RegressionDensity::integrate(const Box& box, std::size_t nout, const VecIntegrand& f,
                                                 const std::vector<std::vector<double>>& breaks,
                                                 const QuadOptions& opt) const {
    const std::size_t d = x_->dim();
    Box xb = x_part(box);
    const double a = std::max(box.lo[d], y_->lo()), b = std::min(box.hi[d], y_->hi());
    std::vector<std::vector<double>> xbreaks(breaks.begin(), breaks.begin() + std::min(breaks.size(), d));
    std::vector<double> cuts{a};
    if (breaks.size() > d)
        for (double c : breaks[d])
            if (c > a && c < b) cuts.push_back(c);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    // Inner response integral, all channels at once; half-infinite pieces use y = c +- t/(1-t).
    std::vector<double> z(d + 1), val(nout);
    return x_->integrate(
        xb, nout,
        [&, a, b](const double* x, double* out) {
            std::fill(out, out + nout, 0.0);
            if (!(b > a)) return;
            for (std::size_t i = 0; i < d; ++i) z[i] = x[i];
            std::vector<double> yc = cuts;
            const double med = y_->quantile(0.5, x);
            if (med > a && med < b) yc.push_back(med);
            std::sort(yc.begin(), yc.end());
            for (std::size_t p = 0; p + 1 < yc.size(); ++p) {
                const double lo = yc[p], hi = yc[p + 1];
                if (!(hi > lo)) continue;
                if (std::isfinite(lo) && std::isfinite(hi)) {
                    integrate_1d(lo, hi, nout, [&](double y, double* o) {
                        double w = y_->pdf(y, x);
                        z[d] = y;
                        f(z.data(), o);
                        for (std::size_t c = 0; c < nout; ++c) o[c] *= w;
                    }, out);
                } else {
                    const bool up = std::isfinite(lo);
                    const double c0 = up ? lo : hi;
                    integrate_1d(0.0, 1.0, nout, [&](double t, double* o) {
                        const double s = t / (1.0 - t);
                        const double y = up ? c0 + s : c0 - s;
                        const double w = y_->pdf(y, x) / ((1.0 - t) * (1.0 - t));
                        if (!(w > 0.0) || !std::isfinite(y)) {
                            std::fill(o, o + nout, 0.0);
                            return;
                        }
                        z[d] = y;
                        f(z.data(), o);
                        for (std::size_t c = 0; c < nout; ++c) o[c] *= w;
                    }, out);
                }
            }
        },
        xbreaks, opt);
}

double RegressionDensity::integrate_gr(const Box& box, const std::function<double(const double*)>& g,
                                       const RFunction& r, const std::vector<std::vector<double>>& xbreaks) const {
    const std::size_t d = x_->dim();
    Box xb = x_part(box);
    const double a = box.lo[d], b = box.hi[d];
    return x_->integrate1(
        xb, [&](const double* x) { return g(x) * y_->r_integral(r, x, a, b); }, xbreaks);
}

std::string RegressionDensity::describe() const { return "regression[" + x_->describe() + "|" + y_->describe() + "]"; }

// ---------------------------------------------------------------- topology

double BinaryTopology::detail_scale(int v) const {
    auto i = static_cast<std::size_t>(v);
    double pl = mass[static_cast<std::size_t>(left[i])], pr = mass[static_cast<std::size_t>(right[i])];
    return std::sqrt(pl * pr / mass[i]);
}

std::vector<int> BinaryTopology::internal_nodes() const {
    std::vector<int> r;
    for (std::size_t v = 0; v < size(); ++v)
        if (left[v] >= 0) r.push_back(static_cast<int>(v));
    return r;
}

double SplitTree::realized_rho() const {
    double mx = 0.0, mn = kInf;
    for (int v : topo_.leaves) {
        mx = std::max(mx, topo_.mass[static_cast<std::size_t>(v)]);
        mn = std::min(mn, topo_.mass[static_cast<std::size_t>(v)]);
    }
    return mx / mn;
}

// ---------------------------------------------------------------- CellTree

int CellTree::level_of(int v) const {
    int depth = 0;
    while ((1 << (depth + 1)) - 1 <= v) ++depth;
    return K_ - depth;
}

int CellTree::index_of(int v) const {
    int depth = K_ - level_of(v);
    return v - ((1 << depth) - 1);
}

std::size_t CellTree::locate(const double* x) const {
    int v = 0;
    while (!topo_.is_leaf(v)) {
        auto i = static_cast<std::size_t>(v);
        v = x[split_coord_[i]] < split_at_[i] ? topo_.left[i] : topo_.right[i];
    }
    return static_cast<std::size_t>(v - ((1 << K_) - 1));
}

CellTree make_cell_tree(int K, std::size_t dim, std::vector<Box> boxes, std::vector<double> mass,
                        std::vector<int> split_coord, std::vector<double> split_at, double rho) {
    CellTree t;
    const std::size_t n = (std::size_t{1} << (K + 1)) - 1;
    if (boxes.size() != n || mass.size() != n || split_coord.size() != n || split_at.size() != n)
        throw ConstructionError("cell tree arrays have the wrong size");
    t.K_ = K;
    t.rho_ = rho;
    t.dim_ = dim;
    t.boxes_ = std::move(boxes);
    t.split_coord_ = std::move(split_coord);
    t.split_at_ = std::move(split_at);
    t.topo_.mass = std::move(mass);
    t.topo_.left.assign(n, -1);
    t.topo_.right.assign(n, -1);
    t.topo_.parent.assign(n, -1);
    const std::size_t first_leaf = (std::size_t{1} << K) - 1;
    for (std::size_t v = 0; v < first_leaf; ++v) {
        t.topo_.left[v] = static_cast<int>(2 * v + 1);
        t.topo_.right[v] = static_cast<int>(2 * v + 2);
        t.topo_.parent[2 * v + 1] = static_cast<int>(v);
        t.topo_.parent[2 * v + 2] = static_cast<int>(v);
    }
    for (std::size_t v = first_leaf; v < n; ++v) t.topo_.leaves.push_back(static_cast<int>(v));
    return t;
}

std::vector<double> quasi_dyadic_weights(int K, double rho) {
    const std::size_t L = std::size_t{1} << K;
    std::vector<double> w(L, 1.0);
    if (rho <= 1.0 || K == 0) return w;
    for (std::size_t k = 0; k < L; ++k) w[k] = (splitmix64(k * 0x632BE59BD9B4E019ULL + static_cast<std::uint64_t>(K)) & 1) ? rho : 1.0;
    w.front() = 1.0;
    w.back() = rho;
    return w;
}

CellTree build_tree(const Density& density, int K, const std::vector<int>& coord, const std::vector<double>& leaf_w,
                    double rho) {
    if (K < 0 || K > 24) throw ConstructionError("tree depth out of range");
    if (coord.size() != static_cast<std::size_t>(K)) throw ConstructionError("split schedule length differs from K");
    const std::size_t n = (std::size_t{1} << (K + 1)) - 1;
    const std::size_t first_leaf = (std::size_t{1} << K) - 1;
    if (leaf_w.size() != first_leaf + 1) throw ConstructionError("leaf weights size differs from 2^K");
    Box sup = density.support();
    double total = density.mass(sup);
    if (std::abs(total - 1.0) > 1e-8) throw ConstructionError("density does not integrate to one on its support");

    std::vector<double> W(n, 0.0);
    for (std::size_t k = 0; k <= first_leaf; ++k) W[first_leaf + k] = leaf_w[k];
    for (std::size_t v = first_leaf; v-- > 0;) W[v] = W[2 * v + 1] + W[2 * v + 2];

    std::vector<Box> boxes(n);
    std::vector<double> mass(n, 0.0), split_at(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> split_coord(n, -1);
    boxes[0] = sup;
    mass[0] = 1.0;
    for (std::size_t v = 0; v < first_leaf; ++v) {
        int depth = 0;
        while ((std::size_t{1} << (depth + 1)) - 1 <= v) ++depth;
        const int s = coord[static_cast<std::size_t>(depth)];
        const double frac = W[2 * v + 1] / W[v];
        const Box& b = boxes[v];
        if (!(density.mass(b) > 0.0))
            throw ConstructionError("degenerate cell at node " + std::to_string(v) + ": zero mass");
        double c = density.split_point(b, static_cast<std::size_t>(s), frac);
        if (!(c > b.lo[static_cast<std::size_t>(s)] && c < b.hi[static_cast<std::size_t>(s)]))
            throw ConstructionError("no valid split for node " + std::to_string(v) + " (atomic or degenerate law)");
        split_coord[v] = s;
        split_at[v] = c;
        Box l = b, r = b;
        l.hi[static_cast<std::size_t>(s)] = c;
        r.lo[static_cast<std::size_t>(s)] = c;
        boxes[2 * v + 1] = std::move(l);
        boxes[2 * v + 2] = std::move(r);
        mass[2 * v + 1] = frac * mass[v];
        mass[2 * v + 2] = mass[v] - mass[2 * v + 1];
    }
    return make_cell_tree(K, density.dim(), std::move(boxes), std::move(mass), std::move(split_coord),
                          std::move(split_at), rho);
}

CellTree build_axis_aligned(const Density& density, int K, double rho) {
    if (rho < 1.0) throw ConstructionError("rho must be at least 1");
    const int d = static_cast<int>(density.dim());
    std::vector<int> coord;
    for (int q = 1; q <= K; ++q) coord.push_back(q % d);
    return build_tree(density, K, coord, quasi_dyadic_weights(K, rho), rho);
}

int full_depth(std::int64_t n) {
    if (n < 2) throw ConstructionError("depth needs n >= 2");
    int b = 0;
    while ((std::int64_t{1} << (b + 1)) <= n) ++b;
    return b;
}

int default_depth(std::int64_t n, int d) {
    if (d < 1) throw ConstructionError("dimension must be positive");
    return full_depth(n) / d;
}

namespace {
nlohmann::json num_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return nullptr;
    return v > 0 ? "inf" : "-inf";
}
double json_num(const nlohmann::json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (j.is_string()) return j.get<std::string>() == "inf" ? kInf : -kInf;
    return j.get<double>();
}
}  // namespace

std::string CellTree::to_text() const {
    nlohmann::json doc;
    doc["format"] = "kmtlab.celltree";
    doc["version"] = 1;
    doc["K"] = K_;
    doc["dim"] = dim_;
    doc["rho"] = rho_;
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t v = 0; v < topo_.size(); ++v) {
        nlohmann::json nd;
        nd["j"] = level_of(static_cast<int>(v));
        nd["k"] = index_of(static_cast<int>(v));
        nlohmann::json lo = nlohmann::json::array(), hi = nlohmann::json::array();
        for (std::size_t i = 0; i < dim_; ++i) {
            lo.push_back(num_json(boxes_[v].lo[i]));
            hi.push_back(num_json(boxes_[v].hi[i]));
        }
        nd["lo"] = lo;
        nd["hi"] = hi;
        nd["mass"] = topo_.mass[v];
        if (split_coord_[v] >= 0) {
            nd["split_coord"] = split_coord_[v];
            nd["split_at"] = split_at_[v];
        }
        nodes.push_back(nd);
    }
    doc["nodes"] = nodes;
    return doc.dump(1);
}

CellTree CellTree::from_text(const std::string& text) {
    auto doc = nlohmann::json::parse(text);
    if (doc.at("format") != "kmtlab.celltree" || doc.at("version") != 1)
        throw ConstructionError("not a version-1 cell tree document");
    int K = doc.at("K");
    std::size_t dim = doc.at("dim");
    const std::size_t n = (std::size_t{1} << (K + 1)) - 1;
    const auto& nodes = doc.at("nodes");
    if (nodes.size() != n) throw ConstructionError("cell tree document has the wrong node count");
    std::vector<Box> boxes(n);
    std::vector<double> mass(n), split_at(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> split_coord(n, -1);
    for (const auto& nd : nodes) {
        int j = nd.at("j"), k = nd.at("k");
        std::size_t v = (std::size_t{1} << (K - j)) - 1 + static_cast<std::size_t>(k);
        if (v >= n) throw ConstructionError("cell tree document has a bad node index");
        for (std::size_t i = 0; i < dim; ++i) {
            boxes[v].lo.push_back(json_num(nd.at("lo")[i]));
            boxes[v].hi.push_back(json_num(nd.at("hi")[i]));
        }
        mass[v] = nd.at("mass");
        if (nd.contains("split_coord")) {
            split_coord[v] = nd.at("split_coord");
            split_at[v] = nd.at("split_at");
        }
    }
    return make_cell_tree(K, dim, std::move(boxes), std::move(mass), std::move(split_coord), std::move(split_at),
                          doc.value("rho", 1.0));
}

// ---------------------------------------------------------------- cylindered

CylinderedCellTree build_cylindered(const Density& joint, std::size_t dx, int M, int N, double rho) {
    if (joint.dim() != dx + 1) throw ConstructionError("joint law must live on R^{d+1}");
    if (M < 0 || N < 0) throw ConstructionError("depths must be nonnegative");
    std::vector<int> coord;
    for (int q = 1; q <= M; ++q) coord.push_back(q % static_cast<int>(dx));
    for (int q = 0; q < N; ++q) coord.push_back(static_cast<int>(dx));
    auto wx = quasi_dyadic_weights(M, rho);
    std::vector<double> w(std::size_t{1} << (M + N));
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = wx[k >> N];
    CylinderedCellTree ct;
    ct.tree = build_tree(joint, M + N, coord, w, rho);
    ct.M = M;
    ct.N = N;
    ct.dx = dx;
    return ct;
}

CellTree CylinderedCellTree::x_tree() const {
    const std::size_t n = (std::size_t{1} << (M + 1)) - 1;
    std::vector<Box> boxes(n);
    std::vector<double> mass(n), split_at(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> split_coord(n, -1);
    for (int j = 0; j <= M; ++j) {
        for (int k = 0; k < (1 << (M - j)); ++k) {
            std::size_t v = (std::size_t{1} << (M - j)) - 1 + static_cast<std::size_t>(k);
            const Box& b = tree.cell(j + N, k);
            boxes[v] = Box(std::vector<double>(b.lo.begin(), b.lo.begin() + static_cast<long>(dx)),
                           std::vector<double>(b.hi.begin(), b.hi.begin() + static_cast<long>(dx)));
            mass[v] = tree.mass(j + N, k);
            if (j > 0) {
                split_coord[v] = tree.split_coord(j + N, k);
                split_at[v] = tree.split_at(j + N, k);
            }
        }
    }
    return make_cell_tree(M, dx, std::move(boxes), std::move(mass), std::move(split_coord), std::move(split_at),
                          tree.rho_target());
}

// ---------------------------------------------------------------- PartitionTree

PartitionTree::PartitionTree(const std::vector<Box>& cells, const Density& density) {
    if (cells.empty()) throw ConstructionError("partition needs at least one cell");
    dim_ = cells.front().dim();
    std::vector<double> m(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        m[i] = density.mass(cells[i]);
        if (!(m[i] > 0.0)) throw ConstructionError("zero-mass cell at index " + std::to_string(i));
    }
    build(0, static_cast<int>(cells.size()), -1, cells, m);
    sorted_1d_ = dim_ == 1;
    for (std::size_t i = 1; i < cells.size() && sorted_1d_; ++i)
        if (cells[i].lo[0] != cells[i - 1].hi[0]) sorted_1d_ = false;
}

int PartitionTree::build(int a, int b, int parent, const std::vector<Box>& cells, const std::vector<double>& m) {
    const int v = static_cast<int>(topo_.size());
    topo_.left.push_back(-1);
    topo_.right.push_back(-1);
    topo_.parent.push_back(parent);
    topo_.mass.push_back(0.0);
    boxes_.emplace_back();
    auto vi = static_cast<std::size_t>(v);
    if (b - a == 1) {
        topo_.mass[vi] = m[static_cast<std::size_t>(a)];
        boxes_[vi] = cells[static_cast<std::size_t>(a)];
        topo_.leaves.push_back(v);
        return v;
    }
    const int mid = a + (b - a) / 2;
    int l = build(a, mid, v, cells, m);
    int r = build(mid, b, v, cells, m);
    topo_.left[vi] = l;
    topo_.right[vi] = r;
    topo_.mass[vi] = topo_.mass[static_cast<std::size_t>(l)] + topo_.mass[static_cast<std::size_t>(r)];
    Box bb = boxes_[static_cast<std::size_t>(l)];
    const Box& rb = boxes_[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < dim_; ++i) {
        bb.lo[i] = std::min(bb.lo[i], rb.lo[i]);
        bb.hi[i] = std::max(bb.hi[i], rb.hi[i]);
    }
    boxes_[vi] = bb;
    return v;
}

std::size_t PartitionTree::locate(const double* x) const {
    const std::size_t L = topo_.leaves.size();
    if (sorted_1d_) {
        std::size_t lo = 0, hi = L;
        while (hi - lo > 1) {
            std::size_t mid = (lo + hi) / 2;
            if (x[0] < leaf_box(mid).lo[0])
                hi = mid;
            else
                lo = mid;
        }
        return lo;
    }
    for (std::size_t k = 0; k < L; ++k) {
        const Box& b = leaf_box(k);
        bool in = true;
        for (std::size_t i = 0; i < dim_ && in; ++i) in = x[i] >= b.lo[i] && x[i] < b.hi[i];
        if (in) return k;
    }
    for (std::size_t k = 0; k < L; ++k)
        if (leaf_box(k).contains_closed(x)) return k;
    throw ConstructionError("point outside all partition cells");
}

QuasiUniformReport validate_quasi_uniform(const std::vector<Box>& cells, const Density& density) {
    QuasiUniformReport r;
    double mx = 0.0, mn = kInf;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        double m = density.mass(cells[i]);
        if (!(m > 0.0)) throw ConstructionError("zero-mass cell at index " + std::to_string(i));
        mx = std::max(mx, m);
        mn = std::min(mn, m);
        r.total_mass += m;
    }
    r.rho = cells.empty() ? 0.0 : mx / mn;
    r.covers_support = std::abs(r.total_mass - 1.0) <= 1e-9;
    return r;
}

std::vector<Box> quantile_cells_1d(const Marginal1D& law, const std::vector<double>& w) {
    double tot = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<Box> cells;
    double acc = 0.0, prev = law.lo();
    for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        double c = i + 1 == w.size() ? law.hi() : law.quantile(acc / tot);
        cells.emplace_back(std::vector<double>{prev}, std::vector<double>{c});
        prev = c;
    }
    return cells;
}

std::vector<Box> enlarge_with_residual_cells_1d(const std::vector<Box>& cells, const Marginal1D& law) {
    if (cells.empty()) throw ConstructionError("no cells to enlarge");
    double a = kInf, b = -kInf, mn = kInf;
    for (const auto& c : cells) {
        a = std::min(a, c.lo[0]);
        b = std::max(b, c.hi[0]);
        double m = law.cdf(c.hi[0]) - law.cdf(c.lo[0]);
        if (!(m > 0.0)) throw ConstructionError("zero-mass cell");
        mn = std::min(mn, m);
    }
    std::vector<Box> out = cells;
    // Each residual end [lo, a) and [b, hi] is cut into floor(mass / min) equal-mass pieces.
    auto add_side = [&](double u0, double u1, double x0, double x1) {
        double r = u1 - u0;
        if (r <= 1e-14) return;
        if (r < mn) throw ConstructionError("residual region lighter than the smallest cell");
        auto P0 = static_cast<std::int64_t>(std::floor(r / mn));
        double prev = x0;
        for (std::int64_t i = 1; i <= P0; ++i) {
            double x = i == P0 ? x1 : law.quantile(u0 + r * static_cast<double>(i) / static_cast<double>(P0));
            out.emplace_back(std::vector<double>{prev}, std::vector<double>{x});
            prev = x;
        }
    };
    add_side(0.0, law.cdf(a), law.lo(), a);
    add_side(law.cdf(b), 1.0, b, law.hi());
    return out;
}

}  // namespace kmt
