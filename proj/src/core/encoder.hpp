#pragma once

#include "core/graph.hpp"
#include "core/grouping.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"

namespace ods::enc {

struct GlobalEncoderConfig {
    int n_centers = 64;
    int k_neighbors = 16;
    int group_feat_dim = 64;  // shared point-feature width before max pooling
    int attn_layers = 4;
    int attn_heads = 4;
    int global_dim = 256;     // G
    int ffn_mult = 4;
    void validate() const;
};

// Group tokens from a shared per-point network + max pooling, a self-attention
// stack without positional encodings, then a coordinate-wise max over tokens.
// Permutation-invariant in the particle labeling (grouping is geometric).
class GlobalEncoder {
public:
    GlobalEncoder() = default;
    explicit GlobalEncoder(GlobalEncoderConfig cfg);

    void init(Rng& rng);
    void register_params(ad::ParamStore& store);
    const GlobalEncoderConfig& config() const { return cfg_; }

    // positions: Nx3 node; returns the 1xG global feature node
    ad::NodeId encode(ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId positions,
                      const GroupingCache& grouping) const;

private:
    struct Layer {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    GlobalEncoderConfig cfg_;
    Tensor point_w1_, point_b1_, point_w2_, point_b2_;
    Tensor token_w_, token_b_;
    std::vector<Layer> layers_;
};

}  // namespace ods::enc
