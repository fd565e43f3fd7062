#pragma once

#include <vector>

#include "core/checkpoint.hpp"
#include "core/tensor.hpp"

namespace ods::enc {

// Index of the lexicographically smallest position (deterministic FPS seed).
int64_t canonical_seed_index(const Tensor& points);

// Greedy max-min farthest point sampling over Nx3 points, starting at
// seed_index. Deterministic; distance ties broken by lowest index.
std::vector<int64_t> fps(const Tensor& points, int64_t k, int64_t seed_index);

// For each center index, the k_neighbors nearest points by Euclidean
// distance, ordered by (distance, index).
std::vector<std::vector<int64_t>> knn_group(const Tensor& points,
                                            const std::vector<int64_t>& centers,
                                            int64_t k_neighbors);

struct GroupingCache {
    std::vector<int64_t> centers;
    std::vector<std::vector<int64_t>> groups;

    bool empty() const { return centers.empty(); }
    ad::GroupingBlob to_blob() const;
    static GroupingCache from_blob(const ad::GroupingBlob& blob);
};

GroupingCache build_grouping(const Tensor& points, int64_t n_centers, int64_t k_neighbors);

enum class RegroupEvent { Clone, Split, Delete, Iteration };

// True on clone/split/delete and on every interval-th training iteration.
bool regroup_schedule(RegroupEvent event, int64_t iteration, int64_t interval = 500);

}  // namespace ods::enc
