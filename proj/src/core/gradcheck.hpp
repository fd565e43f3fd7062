#pragma once

#include <functional>
#include <span>

#include "core/graph.hpp"

namespace ods::ad {

// Builds a scalar-valued graph from a leaf holding the parameter array.
// Called repeatedly with perturbed inputs, so it must be a pure function
// of the leaf value (weights and other inputs captured by the closure).
using ScalarBuildFn = std::function<NodeId(Graph&, NodeId)>;

// Central-difference oracle: compares backward() against
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) coordinate by coordinate and
// returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double check_gradient(const ScalarBuildFn& f, const Tensor& x, double eps);

// Same, restricted to the given coordinates (for large parameter arrays).
double check_gradient_sampled(const ScalarBuildFn& f, const Tensor& x, double eps,
                              std::span<const int64_t> coords);

}  // namespace ods::ad
