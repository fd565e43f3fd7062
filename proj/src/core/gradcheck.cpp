#include "core/gradcheck.hpp"

#include <cmath>

namespace ods::ad {

namespace {

double eval(const ScalarBuildFn& f, const Tensor& x) {
    Graph g;
    const NodeId xid = g.leaf(x);
    const NodeId root = f(g, xid);
    const Tensor& v = g.value(root);
    ODS_REQUIRE(v.size() == 1, "check_gradient: f must produce a scalar");
    const double out = v[0];
    if (!std::isfinite(out)) throw NumericFailure("check_gradient: f returned a non-finite value");
    return out;
}

double run(const ScalarBuildFn& f, const Tensor& x, double eps,
           std::span<const int64_t> coords) {
    ODS_REQUIRE(eps > 0.0, "check_gradient: eps must be positive");
    Graph g;
    const NodeId xid = g.leaf(x);
    const NodeId root = f(g, xid);
    ODS_REQUIRE(g.value(root).size() == 1, "check_gradient: f must produce a scalar");
    const auto grads = g.backward(root);
    const Tensor& analytic = grads[static_cast<size_t>(xid)];

    double worst = 0.0;
    Tensor xp = x;
    for (int64_t i : coords) {
        ODS_REQUIRE(i >= 0 && i < x.size(), "check_gradient: coordinate out of range");
        const double orig = xp[i];
        xp[i] = orig + eps;
        const double fp = eval(f, xp);
        xp[i] = orig - eps;
        const double fm = eval(f, xp);
        xp[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace

double check_gradient(const ScalarBuildFn& f, const Tensor& x, double eps) {
    std::vector<int64_t> coords(static_cast<size_t>(x.size()));
    for (size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<int64_t>(i);
    return run(f, x, eps, coords);
}

double check_gradient_sampled(const ScalarBuildFn& f, const Tensor& x, double eps,
                              std::span<const int64_t> coords) {
    return run(f, x, eps, coords);
}

}  // namespace ods::ad
