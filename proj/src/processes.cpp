#include "kmtlab/processes.hpp"

#include <algorithm>
#include <cmath>

namespace kmt {

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

int tree_depth(const SplitTree& t) {
    if (auto* ct = dynamic_cast<const CellTree*>(&t)) return ct->depth();
    return -1;
}

}  // namespace

SampleBatch draw_sample(const Density& density, std::size_t n, RngStream& rng, std::string dgp) {
    SampleBatch b;
    b.d = density.dim();
    b.dgp = std::move(dgp);
    b.stream = rng.stream_index();
    b.pts.resize(n * b.d);
    const Box sup = density.support();
    for (std::size_t i = 0; i < n; ++i) density.sample(sup, rng, b.pts.data() + i * b.d);
    return b;
}

SampleBatch sample_given_counts(const SplitTree& tree, const std::vector<std::int64_t>& leaf_counts,
                                const Density& density, RngStream& rng) {
    if (leaf_counts.size() != tree.num_leaves()) throw DomainError("leaf count vector does not match the tree");
    SampleBatch b;
    b.d = density.dim();
    b.stream = rng.stream_index();
    std::int64_t total = 0;
    for (auto c : leaf_counts) {
        if (c < 0) throw DomainError("negative leaf count");
        total += c;
    }
    b.pts.resize(static_cast<std::size_t>(total) * b.d);
    double* out = b.pts.data();
    for (std::size_t k = 0; k < leaf_counts.size(); ++k)
        for (std::int64_t i = 0; i < leaf_counts[k]; ++i, out += b.d) density.sample(tree.leaf_box(k), rng, out);
    return b;
}

bool batch_in_support(const SampleBatch& batch, const Density& density) {
    const Box sup = density.support();
    for (std::size_t i = 0; i < batch.n(); ++i)
        if (!sup.contains_closed(batch.point(i))) return false;
    return true;
}

double eval_X(const SampleBatch& batch, const ScalarFn& h, double mean) {
    const std::size_t n = batch.n();
    if (n == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += h(batch.point(i)) - mean;
    return s / std::sqrt(static_cast<double>(n));
}

double eval_X(const SampleBatch& batch, const ScalarFn& h, const Density& density,
              const std::vector<std::vector<double>>& breaks) {
    return eval_X(batch, h, density.integrate1(density.support(), h, breaks));
}

std::vector<double> eval_X_many(const SampleBatch& batch, const VecIntegrand& h, std::size_t nf,
                                const std::vector<double>& means) {
    std::vector<double> s(nf, 0.0), v(nf);
    const std::size_t n = batch.n();
    if (n == 0) return s;
    for (std::size_t i = 0; i < n; ++i) {
        h(batch.point(i), v.data());
        for (std::size_t j = 0; j < nf; ++j) s[j] += v[j];
    }
    const double rn = std::sqrt(static_cast<double>(n));
    for (std::size_t j = 0; j < nf; ++j) s[j] = (s[j] - static_cast<double>(n) * means[j]) / rn;
    return s;
}

double eval_G(const SampleBatch& batch, const ScalarFn& g, const RFunction& r, const RegressionDensity& joint,
              const std::vector<std::vector<double>>& xbreaks) {
    const std::size_t dx = joint.dim() - 1;
    const double mean = joint.integrate_gr(joint.support(), g, r, xbreaks);
    return eval_X(batch, [&](const double* z) { return g(z) * r(z[dx]); }, mean);
}

double eval_R(const SampleBatch& batch, const ScalarFn& g, const RFunction& r, const ScalarFn& theta) {
    const std::size_t dx = batch.d - 1;
    return eval_X(batch, [&](const double* z) { return g(z) * (r(z[dx]) - theta(z)); }, 0.0);
}

double eval_R(const SampleBatch& batch, const ScalarFn& g, const RFunction& r, const RegressionDensity& joint) {
    const ConditionalY& yl = joint.y_law();
    return eval_R(batch, g, r, [&](const double* x) { return yl.theta(r, x); });
}

CoupledNet register_net(const FunctionClass& cls, const SplitTree& tree, const Density& density) {
    CoupledNet net;
    net.cls = &cls;
    net.density = &density;
    const bool haar_only = cls.kind == ClassKind::HaarSpan && cls.tree == &tree;
    net.proj = project_net(cls.integrand(), cls.size(), tree, density, haar_only, cls.breaks);
    return net;
}

CoupledValues coupled_values(const CoupledNet& net, std::int64_t n, RngStream& rng) {
    const std::size_t nf = net.proj.size;
    CoupledValues v;
    if (n == 0) {
        v.X.assign(nf, 0.0);
        v.Z.assign(nf, 0.0);
        v.Xproj.assign(nf, 0.0);
        return v;
    }
    CoupledRealization r = couple_counts(*net.proj.tree, n, rng);
    draw_residuals(r, net.proj, rng);
    v.Z = bridge_complete_on_net(r, net.proj);
    v.Xproj.resize(nf);
    for (std::size_t i = 0; i < nf; ++i) v.Xproj[i] = bridge_on_haar(r, net.proj.decs[i]).first;
    SampleBatch batch = sample_given_counts(*net.proj.tree, r.leaf_counts(), *net.density, rng);
    v.X = eval_X_many(batch, net.cls->integrand(), nf, net.proj.means);
    return v;
}

SupErrorRecord coupled_sup_error(const CoupledNet& net, std::int64_t n, RngStream& rng, std::uint64_t rep) {
    CoupledValues v = coupled_values(net, n, rng);
    SupErrorRecord rec;
    rec.n = n;
    rec.class_id = net.cls->name;
    rec.depth = tree_depth(*net.proj.tree);
    rec.rep = rep;
    rec.sup_xz = max_abs_diff(v.X, v.Z);
    rec.sup_proj = max_abs_diff(v.X, v.Xproj);
    return rec;
}

ResidualNet register_residual_net(const FunctionClass& cls, const CylinderedCellTree& ct,
                                  const RegressionDensity& joint) {
    if (cls.kind != ClassKind::ResidualPair) throw DomainError("residual net needs a residual-pair class");
    ResidualNet net;
    net.cls = &cls;
    net.ct = &ct;
    net.joint = &joint;
    const std::size_t dx = ct.dx;
    const ConditionalY& yl = joint.y_law();
    const FunctionClass* c = &cls;
    VecIntegrand f = [c, dx, &yl](const double* z, double* out) {
        for (std::size_t i = 0; i < c->pairs.size(); ++i) {
            auto [a, b] = c->pairs[i];
            out[i] = c->scale * c->g[a](z) * (c->r[b](z[dx]) - yl.theta(c->r[b], z));
        }
    };
    net.proj = project_net(f, cls.size(), ct.tree, joint, false, cls.breaks);
    std::vector<std::vector<double>> xbreaks(cls.breaks.begin(), cls.breaks.begin() + static_cast<long>(dx));
    for (const auto& [a, b] : cls.pairs) {
        const ScalarFn& g = cls.g[a];
        const double s = cls.scale;
        net.pi2.push_back(project_conditional_adjusted([&g, s](const double* x) { return s * g(x); }, cls.r[b], ct,
                                                       joint, xbreaks));
    }
    return net;
}

CoupledValues coupled_values_residual(const ResidualNet& net, std::int64_t n, RngStream& rng) {
    const std::size_t nf = net.proj.size;
    CoupledValues v;
    if (n == 0) {
        v.X.assign(nf, 0.0);
        v.Z.assign(nf, 0.0);
        v.Xproj.assign(nf, 0.0);
        v.Xpi2.assign(nf, 0.0);
        v.Zpi2.assign(nf, 0.0);
        return v;
    }
    CoupledRealization r = couple_counts(net.ct->tree, n, rng);
    draw_residuals(r, net.proj, rng);
    v.Z = bridge_complete_on_net(r, net.proj);
    v.Xproj.resize(nf);
    v.Xpi2.resize(nf);
    v.Zpi2.resize(nf);
    for (std::size_t i = 0; i < nf; ++i) {
        v.Xproj[i] = bridge_on_haar(r, net.proj.decs[i]).first;
        auto pz = bridge_on_haar(r, net.pi2[i]);
        v.Xpi2[i] = pz.first;
        v.Zpi2[i] = pz.second;
    }
    SampleBatch batch = sample_given_counts(net.ct->tree, r.leaf_counts(), *net.joint, rng);
    const FunctionClass& c = *net.cls;
    const ConditionalY& yl = net.joint->y_law();
    v.X.resize(nf);
    for (std::size_t i = 0; i < nf; ++i) {
        auto [a, b] = c.pairs[i];
        v.X[i] = c.scale * eval_R(batch, c.g[a], c.r[b], [&](const double* x) { return yl.theta(c.r[b], x); });
    }
    return v;
}

SupErrorRecord coupled_sup_error_residual(const ResidualNet& net, std::int64_t n, RngStream& rng,
                                          std::uint64_t rep) {
    CoupledValues v = coupled_values_residual(net, n, rng);
    SupErrorRecord rec;
    rec.n = n;
    rec.class_id = net.cls->name;
    rec.depth = net.ct->M;
    rec.depth_y = net.ct->N;
    rec.rep = rep;
    rec.sup_xz = max_abs_diff(v.X, v.Z);
    rec.sup_proj = max_abs_diff(v.X, v.Xproj);
    rec.extra = max_abs_diff(v.Xpi2, v.Zpi2);
    return rec;
}

}  // namespace kmt
