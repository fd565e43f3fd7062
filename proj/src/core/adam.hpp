#pragma once

#include <span>
#include <vector>

#include "core/tensor.hpp"

namespace ods::ad {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed-order list of parameter tensors.
// Moment slots are sized lazily on the first step.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(AdamConfig cfg) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_count_; }

    // params[i] is updated in place using grads[i] and learning rate lrs[i].
    // Increments step_count by exactly one.
    void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
              std::span<const double> lrs);

    // Rebuild moment rows of slot `slot` through `source_row` (-1 = fresh, reset
    // to zero). Used when particles are cloned, split or deleted.
    void remap_rows(size_t slot, const std::vector<int64_t>& source_row);

    size_t slot_count() const { return m_.size(); }
    const Tensor& first_moment(size_t slot) const { return m_[slot]; }
    const Tensor& second_moment(size_t slot) const { return v_[slot]; }
    // checkpoint restore
    void restore(std::vector<Tensor> m, std::vector<Tensor> v, int64_t step_count);

private:
    AdamConfig cfg_;
    int64_t step_count_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace ods::ad
