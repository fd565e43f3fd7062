#include "core/adam.hpp"

#include <cmath>

namespace ods::ad {

void AdamState::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
                     std::span<const double> lrs) {
    ODS_REQUIRE(params.size() == grads.size() && params.size() == lrs.size(),
                "adam: params/grads/lrs must align");
    if (m_.size() < params.size()) {
        m_.resize(params.size());
        v_.resize(params.size());
    }
    step_count_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));

    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        ODS_REQUIRE(p.same_shape(g), "adam: gradient shape mismatch for slot " + std::to_string(k));
        if (m_[k].size() != p.size()) {
            m_[k] = Tensor(p.shape());
            v_[k] = Tensor(p.shape());
        }
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        const double lr = lrs[k];
        for (int64_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void AdamState::remap_rows(size_t slot, const std::vector<int64_t>& source_row) {
    if (slot >= m_.size() || m_[slot].empty()) return;
    const Tensor& old_m = m_[slot];
    const Tensor& old_v = v_[slot];
    const int64_t cols = old_m.cols2d();
    const int64_t new_rows = static_cast<int64_t>(source_row.size());
    Tensor nm({new_rows, cols}), nv({new_rows, cols});
    for (int64_t i = 0; i < new_rows; ++i) {
        const int64_t src = source_row[static_cast<size_t>(i)];
        if (src < 0) continue;  // fresh particle, zero moments
        ODS_REQUIRE(src < old_m.rows2d(), "adam remap: source row out of range");
        for (int64_t j = 0; j < cols; ++j) {
            nm.at(i, j) = old_m.at(src, j);
            nv.at(i, j) = old_v.at(src, j);
        }
    }
    m_[slot] = std::move(nm);
    v_[slot] = std::move(nv);
}

void AdamState::restore(std::vector<Tensor> m, std::vector<Tensor> v, int64_t step_count) {
    ODS_REQUIRE(m.size() == v.size(), "adam restore: moment lists must align");
    m_ = std::move(m);
    v_ = std::move(v);
    step_count_ = step_count;
}

}  // namespace ods::ad
