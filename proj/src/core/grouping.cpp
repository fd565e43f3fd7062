#include "core/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ods::enc {

namespace {

double dist2(const Tensor& pts, int64_t a, int64_t b) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double d = pts.at(a, c) - pts.at(b, c);
        s += d * d;
    }
    return s;
}

}  // namespace

int64_t canonical_seed_index(const Tensor& points) {
    ODS_REQUIRE(points.rank() == 2 && points.dim(1) == 3 && points.dim(0) > 0,
                "canonical_seed_index: points must be Nx3, nonempty");
    int64_t best = 0;
    for (int64_t i = 1; i < points.dim(0); ++i) {
        for (int c = 0; c < 3; ++c) {
            if (points.at(i, c) < points.at(best, c)) {
                best = i;
                break;
            }
            if (points.at(i, c) > points.at(best, c)) break;
        }
    }
    return best;
}

std::vector<int64_t> fps(const Tensor& points, int64_t k, int64_t seed_index) {
    ODS_REQUIRE(points.rank() == 2 && points.dim(1) == 3, "fps: points must be Nx3");
    const int64_t n = points.dim(0);
    ODS_REQUIRE(k >= 1 && k <= n, "fps: need 1 <= k <= point count");
    ODS_REQUIRE(seed_index >= 0 && seed_index < n, "fps: seed index out of range");

    std::vector<int64_t> picked;
    picked.reserve(static_cast<size_t>(k));
    std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    int64_t current = seed_index;
    picked.push_back(current);
    for (int64_t round = 1; round < k; ++round) {
        int64_t far_idx = -1;
        double far_d2 = -1.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d2 = dist2(points, i, current);
            if (d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
            if (min_d2[static_cast<size_t>(i)] > far_d2) {  // ties keep the lowest index
                far_d2 = min_d2[static_cast<size_t>(i)];
                far_idx = i;
            }
        }
        current = far_idx;
        picked.push_back(current);
    }
    return picked;
}

std::vector<std::vector<int64_t>> knn_group(const Tensor& points,
                                            const std::vector<int64_t>& centers,
                                            int64_t k_neighbors) {
    ODS_REQUIRE(points.rank() == 2 && points.dim(1) == 3, "knn_group: points must be Nx3");
    const int64_t n = points.dim(0);
    ODS_REQUIRE(k_neighbors >= 1 && k_neighbors <= n, "knn_group: need 1 <= k <= point count");

    std::vector<std::vector<int64_t>> groups;
    groups.reserve(centers.size());
    std::vector<std::pair<double, int64_t>> order(static_cast<size_t>(n));
    for (int64_t c : centers) {
        ODS_REQUIRE(c >= 0 && c < n, "knn_group: center index out of range");
        for (int64_t i = 0; i < n; ++i)
            order[static_cast<size_t>(i)] = {dist2(points, i, c), i};
        std::sort(order.begin(), order.end());
        std::vector<int64_t> grp(static_cast<size_t>(k_neighbors));
        for (int64_t j = 0; j < k_neighbors; ++j) grp[static_cast<size_t>(j)] =
            order[static_cast<size_t>(j)].second;
        groups.push_back(std::move(grp));
    }
    return groups;
}

ad::GroupingBlob GroupingCache::to_blob() const {
    ad::GroupingBlob blob;
    blob.centers = centers;
    blob.k = groups.empty() ? 0 : static_cast<int64_t>(groups.front().size());
    for (const auto& g : groups) {
        ODS_REQUIRE(static_cast<int64_t>(g.size()) == blob.k, "grouping: ragged groups");
        blob.groups_flat.insert(blob.groups_flat.end(), g.begin(), g.end());
    }
    return blob;
}

GroupingCache GroupingCache::from_blob(const ad::GroupingBlob& blob) {
    GroupingCache cache;
    cache.centers = blob.centers;
    if (blob.k > 0) {
        ODS_REQUIRE(blob.groups_flat.size() == blob.centers.size() * static_cast<size_t>(blob.k),
                    "grouping blob: size mismatch");
        for (size_t i = 0; i < blob.centers.size(); ++i) {
            cache.groups.emplace_back(blob.groups_flat.begin() + static_cast<int64_t>(i) * blob.k,
                                      blob.groups_flat.begin() +
                                          static_cast<int64_t>(i + 1) * blob.k);
        }
    }
    return cache;
}

GroupingCache build_grouping(const Tensor& points, int64_t n_centers, int64_t k_neighbors) {
    GroupingCache cache;
    const int64_t n = points.dim(0);
    const int64_t k = std::min(n_centers, n);
    const int64_t kn = std::min(k_neighbors, n);
    cache.centers = fps(points, k, canonical_seed_index(points));
    cache.groups = knn_group(points, cache.centers, kn);
    return cache;
}

bool regroup_schedule(RegroupEvent event, int64_t iteration, int64_t interval) {
    switch (event) {
        case RegroupEvent::Clone:
        case RegroupEvent::Split:
        case RegroupEvent::Delete: return true;
        case RegroupEvent::Iteration:
            return interval > 0 && iteration > 0 && iteration % interval == 0;
    }
    return false;
}

}  // namespace ods::enc
