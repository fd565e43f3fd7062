#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace ods::ad {

struct NamedTensor {
    std::string name;
    uint32_t group = 0;
    Tensor value;
};

struct GroupingBlob {
    std::vector<int64_t> centers;      // particle indices of FPS centers
    std::vector<int64_t> groups_flat;  // centers.size() * k neighbor indices
    int64_t k = 0;
};

// Versioned checkpoint container: named parameter arrays, optimizer moments,
// the frozen grouping cache and the training config echo. Byte layout is
// little-endian with 64-bit floats; see FORMATS.md.
struct CheckpointBlob {
    std::string config_json;
    std::array<double, 6> bbox{0, 0, 0, 1, 1, 1};  // lo.xyz, hi.xyz
    std::vector<NamedTensor> tensors;

    bool has_adam = false;
    int64_t adam_step_count = 0;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    std::vector<Tensor> adam_m, adam_v;  // aligned with tensors

    bool has_grouping = false;
    GroupingBlob grouping;
};

void save_checkpoint(const std::string& path, const CheckpointBlob& blob);
CheckpointBlob load_checkpoint(const std::string& path);

}  // namespace ods::ad
