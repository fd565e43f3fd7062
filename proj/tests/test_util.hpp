#pragma once

#include <cstring>
#include <functional>

#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace ods::test {

inline Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.size()) * sizeof(double)) == 0;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return 1e300;
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// Central-difference check for a parameter tensor that a module reads through
// ParamLeafs. `build` must construct a scalar loss from the current stored
// parameter values. Perturbs `target` in place (and restores it). A sample
// count <= 0 checks every coordinate.
inline double param_gradcheck(
    Tensor& target, const std::function<ad::NodeId(ad::Graph&, ad::ParamLeafs&)>& build,
    double eps, int64_t samples, Rng& rng) {
    Tensor analytic;
    {
        ad::Graph g;
        ad::ParamLeafs leafs(g);
        const ad::NodeId root = build(g, leafs);
        const size_t node_count = g.size();
        const auto grads = g.backward(root);
        const ad::NodeId leaf = leafs.of(target);
        if (static_cast<size_t>(leaf) >= node_count)
            throw ContractViolation("param_gradcheck: build() never read the target tensor");
        analytic = grads[static_cast<size_t>(leaf)];
    }
    auto eval = [&]() {
        ad::Graph g;
        ad::ParamLeafs leafs(g);
        return g.value(build(g, leafs)).value_scalar();
    };
    std::vector<int64_t> coords;
    if (samples <= 0 || samples >= target.size()) {
        coords.resize(static_cast<size_t>(target.size()));
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<int64_t>(i);
    } else {
        for (int64_t s = 0; s < samples; ++s)
            coords.push_back(
                static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(target.size()))));
    }
    double worst = 0.0;
    for (int64_t i : coords) {
        const double orig = target[i];
        target[i] = orig + eps;
        const double fp = eval();
        target[i] = orig - eps;
        const double fm = eval();
        target[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        worst = std::max(worst,
                         std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric)));
    }
    return worst;
}

}  // namespace ods::test
