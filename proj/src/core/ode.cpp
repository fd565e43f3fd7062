#include "core/ode.hpp"

#include <cmath>

namespace ods::ode {

void OdeConfig::validate() const {
    ODS_REQUIRE(width >= 1, "ode: width must be >= 1");
    ODS_REQUIRE(steps_per_unit >= 1, "ode: steps_per_unit must be >= 1");
}

DynamicsField::DynamicsField(OdeConfig cfg, int64_t latent_dim) : cfg_(cfg), dim_(latent_dim) {
    cfg_.validate();
    ODS_REQUIRE(latent_dim >= 1, "ode: latent dimension must be >= 1");
    const int64_t in_dim = dim_ + (cfg_.time_dependent ? 1 : 0);
    w1_ = Tensor({in_dim, cfg_.width});
    b1_ = Tensor({static_cast<int64_t>(cfg_.width)});
    w2_ = Tensor({static_cast<int64_t>(cfg_.width), dim_});
    b2_ = Tensor({dim_});
}

void DynamicsField::init(Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(w1_.dim(0) + w1_.dim(1)));
    for (int64_t i = 0; i < w1_.size(); ++i) w1_[i] = rng.uniform(-s, s);
    w2_.fill(0.0);  // start as the identity flow
    b1_.fill(0.0);
    b2_.fill(0.0);
}

void DynamicsField::register_params(ad::ParamStore& store) {
    store.add("ode.w1", ad::ParamGroup::OdeField, &w1_);
    store.add("ode.b1", ad::ParamGroup::OdeField, &b1_);
    store.add("ode.w2", ad::ParamGroup::OdeField, &w2_);
    store.add("ode.b2", ad::ParamGroup::OdeField, &b2_);
}

ad::NodeId DynamicsField::eval(ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId g_row,
                               double tau) const {
    ODS_REQUIRE(g.value(g_row).rows2d() == 1 && g.value(g_row).cols2d() == dim_,
                "dynamics field: state must be 1xG");
    ad::NodeId x = g_row;
    if (cfg_.time_dependent) {
        const ad::NodeId t_cell = g.leaf(Tensor::from({1, 1}, {tau}));
        const std::array<ad::NodeId, 2> parts{g_row, t_cell};
        x = g.concat_cols(parts);
    }
    const ad::NodeId h = g.tanh(g.add_row(g.matmul(x, leafs.of(w1_)), leafs.of(b1_)));
    return g.add_row(g.matmul(h, leafs.of(w2_)), leafs.of(b2_));
}

std::function<ad::NodeId(ad::Graph&, ad::NodeId, double)> DynamicsField::as_field(
    ad::ParamLeafs& leafs) const {
    return [this, &leafs](ad::Graph& g, ad::NodeId state, double tau) {
        return eval(g, leafs, state, tau);
    };
}

ad::NodeId rk4_step(ad::Graph& g, const FieldFn& f, ad::NodeId state, double tau, double h) {
    ODS_REQUIRE(h > 0.0, "rk4_step: h must be positive");
    const ad::NodeId k1 = f(g, state, tau);
    const ad::NodeId k2 = f(g, g.add(state, g.scale(k1, 0.5 * h)), tau + 0.5 * h);
    const ad::NodeId k3 = f(g, g.add(state, g.scale(k2, 0.5 * h)), tau + 0.5 * h);
    const ad::NodeId k4 = f(g, g.add(state, g.scale(k3, h)), tau + h);
    // state + (h/6)(k1 + 2 k2 + 2 k3 + k4)
    const ad::NodeId sum = g.add(g.add(k1, g.scale(g.add(k2, k3), 2.0)), k4);
    return g.add(state, g.scale(sum, h / 6.0));
}

ad::NodeId ode_solve(ad::Graph& g, const FieldFn& f, ad::NodeId g0, double t,
                     int steps_per_unit) {
    ODS_REQUIRE(t >= 0.0, "ode_solve: t must be >= 0");
    ODS_REQUIRE(steps_per_unit >= 1, "ode_solve: steps_per_unit must be >= 1");
    if (t == 0.0) return g0;
    const int n = static_cast<int>(std::ceil(t * static_cast<double>(steps_per_unit) - 1e-12));
    const int steps = std::max(1, n);
    const double h = t / static_cast<double>(steps);
    ad::NodeId state = g0;
    for (int i = 0; i < steps; ++i)
        state = rk4_step(g, f, state, static_cast<double>(i) * h, h);
    return state;
}

ad::NodeId rk4_step(ad::Graph& g, ad::ParamLeafs& leafs, const DynamicsField& f, ad::NodeId state,
                    double tau, double h) {
    return rk4_step(g, f.as_field(leafs), state, tau, h);
}

ad::NodeId ode_solve(ad::Graph& g, ad::ParamLeafs& leafs, const DynamicsField& f, ad::NodeId g0,
                     double t, int steps_per_unit) {
    return ode_solve(g, f.as_field(leafs), g0, t, steps_per_unit);
}

}  // namespace ods::ode
