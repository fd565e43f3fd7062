#pragma once

#include "core/graph.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"

namespace ods::ode {

struct OdeConfig {
    int width = 256;           // hidden width of the dynamics net
    bool time_dependent = true;  // feed tau as an extra input feature
    int steps_per_unit = 32;   // fixed RK4 steps per unit time
    void validate() const;
};

// Learned vector field f(g, tau) -> dg/dtau with one tanh hidden layer.
// The output layer starts at zero so the flow is initially the identity.
class DynamicsField {
public:
    DynamicsField() = default;
    DynamicsField(OdeConfig cfg, int64_t latent_dim);

    void init(Rng& rng);
    void register_params(ad::ParamStore& store);
    const OdeConfig& config() const { return cfg_; }
    int64_t latent_dim() const { return dim_; }

    // g_row is 1xG; returns 1xG
    ad::NodeId eval(ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId g_row, double tau) const;
    // closure form used by the generic integrator
    std::function<ad::NodeId(ad::Graph&, ad::NodeId, double)> as_field(ad::ParamLeafs& leafs) const;

private:
    OdeConfig cfg_;
    int64_t dim_ = 0;
    Tensor w1_, b1_, w2_, b2_;
};

// Any graph-building vector field (state node, tau) -> d state / d tau node.
using FieldFn = std::function<ad::NodeId(ad::Graph&, ad::NodeId, double)>;

// One classical RK4 step of size h from tau.
ad::NodeId rk4_step(ad::Graph& g, const FieldFn& f, ad::NodeId state, double tau, double h);

// Composition of uniform RK4 steps from 0 to t; t = 0 returns g0 itself
// (bit-exact). Differentiable by backpropagation through the unrolled steps.
ad::NodeId ode_solve(ad::Graph& g, const FieldFn& f, ad::NodeId g0, double t, int steps_per_unit);

// Convenience overloads for the learned field.
ad::NodeId rk4_step(ad::Graph& g, ad::ParamLeafs& leafs, const DynamicsField& f, ad::NodeId state,
                    double tau, double h);
ad::NodeId ode_solve(ad::Graph& g, ad::ParamLeafs& leafs, const DynamicsField& f, ad::NodeId g0,
                     double t, int steps_per_unit);

}  // namespace ods::ode
