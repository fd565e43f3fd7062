#pragma once

#include <Eigen/Dense>
#include <array>

#include "core/graph.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"

namespace ods::enc {

struct HashGridConfig {
    int levels = 16;
    int n_min = 16;
    int n_max = 512;
    int64_t table_size = int64_t{1} << 19;  // per level, capped at 2^19
    int feat_dim = 2;
    std::array<uint32_t, 3> primes{1u, 2654435761u, 805459861u};

    int64_t local_dim() const { return static_cast<int64_t>(levels) * feat_dim; }
    void validate() const;
};

// N_i = floor(n_min * b^i), b = exp((ln n_max - ln n_min) / (L - 1))
std::vector<int64_t> resolution_levels(const HashGridConfig& cfg);

// (XOR_i g_i * pi_i) mod table_size, with uint32 wrap-around products.
uint32_t hash_index(const std::array<int64_t, 3>& g, const HashGridConfig& cfg);

// Axis-aligned box positions are normalized into before hashing.
struct SceneBounds {
    Eigen::Vector3d lo = Eigen::Vector3d::Zero();
    Eigen::Vector3d hi = Eigen::Vector3d::Ones();
    static SceneBounds from_points(const Tensor& pts, double margin = 0.05);
};

// Learned multi-resolution hash tables; trilinear interpolation of the eight
// corner entries per level, concatenated over levels. Differentiable with
// respect to both the query positions and the table entries.
class HashGrid {
public:
    HashGrid() = default;
    HashGrid(HashGridConfig cfg, SceneBounds bounds);

    void init(Rng& rng, double sigma = 1e-4);
    void register_params(ad::ParamStore& store);

    const HashGridConfig& config() const { return cfg_; }
    const SceneBounds& bounds() const { return bounds_; }
    void set_bounds(const SceneBounds& b) { bounds_ = b; }
    std::vector<Tensor>& tables() { return tables_; }
    const std::vector<Tensor>& tables_ref() const { return tables_; }
    const std::vector<int64_t>& resolutions() const { return resolutions_; }

    // mu is Nx3 -> N x (levels * feat_dim)
    Tensor encode_plain(const Tensor& mu) const;
    ad::NodeId encode(ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId mu) const;

private:
    HashGridConfig cfg_;
    SceneBounds bounds_;
    std::vector<int64_t> resolutions_;
    std::vector<Tensor> tables_;  // per level, table_size x feat_dim
};

}  // namespace ods::enc
