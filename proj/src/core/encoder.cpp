#include "core/encoder.hpp"

#include <cmath>

namespace ods::enc {

namespace {

Tensor xavier(Rng& rng, int64_t in_dim, int64_t out_dim) {
    Tensor w({in_dim, out_dim});
    const double s = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
    return w;
}

}  // namespace

void GlobalEncoderConfig::validate() const {
    ODS_REQUIRE(n_centers >= 1 && k_neighbors >= 1, "encoder: centers/neighbors must be >= 1");
    ODS_REQUIRE(attn_layers >= 1 && attn_heads >= 1, "encoder: layers/heads must be >= 1");
    ODS_REQUIRE(global_dim % attn_heads == 0, "encoder: heads must divide global_dim");
    ODS_REQUIRE(group_feat_dim >= 1 && ffn_mult >= 1, "encoder: widths must be >= 1");
}

GlobalEncoder::GlobalEncoder(GlobalEncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int64_t h = cfg_.group_feat_dim;
    const int64_t g = cfg_.global_dim;
    point_w1_ = Tensor({3, h});
    point_b1_ = Tensor({h});
    point_w2_ = Tensor({h, h});
    point_b2_ = Tensor({h});
    token_w_ = Tensor({h + 3, g});
    token_b_ = Tensor({g});
    layers_.resize(static_cast<size_t>(cfg_.attn_layers));
    for (auto& l : layers_) {
        l.wq = Tensor({g, g});
        l.bq = Tensor({g});
        l.wk = Tensor({g, g});
        l.bk = Tensor({g});
        l.wv = Tensor({g, g});
        l.bv = Tensor({g});
        l.wo = Tensor({g, g});
        l.bo = Tensor({g});
        l.ln1_g = Tensor::full({g}, 1.0);
        l.ln1_b = Tensor({g});
        l.ln2_g = Tensor::full({g}, 1.0);
        l.ln2_b = Tensor({g});
        l.ffn_w1 = Tensor({g, g * cfg_.ffn_mult});
        l.ffn_b1 = Tensor({g * cfg_.ffn_mult});
        l.ffn_w2 = Tensor({g * cfg_.ffn_mult, g});
        l.ffn_b2 = Tensor({g});
    }
}

void GlobalEncoder::init(Rng& rng) {
    const int64_t h = cfg_.group_feat_dim;
    const int64_t g = cfg_.global_dim;
    point_w1_ = xavier(rng, 3, h);
    point_w2_ = xavier(rng, h, h);
    token_w_ = xavier(rng, h + 3, g);
    for (auto& l : layers_) {
        l.wq = xavier(rng, g, g);
        l.wk = xavier(rng, g, g);
        l.wv = xavier(rng, g, g);
        l.wo = xavier(rng, g, g);
        l.ffn_w1 = xavier(rng, g, g * cfg_.ffn_mult);
        l.ffn_w2 = xavier(rng, g * cfg_.ffn_mult, g);
    }
}

void GlobalEncoder::register_params(ad::ParamStore& store) {
    auto add = [&](const std::string& name, Tensor& t) {
        store.add("encoder." + name, ad::ParamGroup::Encoder, &t);
    };
    add("point_w1", point_w1_);
    add("point_b1", point_b1_);
    add("point_w2", point_w2_);
    add("point_b2", point_b2_);
    add("token_w", token_w_);
    add("token_b", token_b_);
    for (size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        add(p + "wq", l.wq);
        add(p + "bq", l.bq);
        add(p + "wk", l.wk);
        add(p + "bk", l.bk);
        add(p + "wv", l.wv);
        add(p + "bv", l.bv);
        add(p + "wo", l.wo);
        add(p + "bo", l.bo);
        add(p + "ln1_g", l.ln1_g);
        add(p + "ln1_b", l.ln1_b);
        add(p + "ln2_g", l.ln2_g);
        add(p + "ln2_b", l.ln2_b);
        add(p + "ffn_w1", l.ffn_w1);
        add(p + "ffn_b1", l.ffn_b1);
        add(p + "ffn_w2", l.ffn_w2);
        add(p + "ffn_b2", l.ffn_b2);
    }
}

ad::NodeId GlobalEncoder::encode(ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId positions,
                                 const GroupingCache& grouping) const {
    ODS_REQUIRE(!grouping.empty(), "encode_global: empty grouping");
    const int dh = cfg_.global_dim / cfg_.attn_heads;

    // group tokens: shared point net, max pool, center coordinates appended
    std::vector<ad::NodeId> tokens;
    tokens.reserve(grouping.centers.size());
    for (size_t ci = 0; ci < grouping.centers.size(); ++ci) {
        const int64_t center = grouping.centers[ci];
        const auto& group = grouping.groups[ci];
        ODS_REQUIRE(!group.empty(), "encode_global: empty group");
        const ad::NodeId pts = g.gather_rows(positions, group);
        const ad::NodeId c_row = g.gather_rows(positions, {center});
        const ad::NodeId rel =
            g.sub(pts, g.repeat_rows(c_row, static_cast<int64_t>(group.size())));
        ad::NodeId hfeat = g.relu(g.add_row(g.matmul(rel, leafs.of(point_w1_)), leafs.of(point_b1_)));
        hfeat = g.relu(g.add_row(g.matmul(hfeat, leafs.of(point_w2_)), leafs.of(point_b2_)));
        const ad::NodeId pooled = g.max_rows(hfeat);
        const std::array<ad::NodeId, 2> parts{pooled, c_row};
        tokens.push_back(g.concat_cols(parts));
    }
    ad::NodeId x = g.concat_rows(tokens);
    x = g.add_row(g.matmul(x, leafs.of(token_w_)), leafs.of(token_b_));

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const auto& l : layers_) {
        const ad::NodeId q = g.add_row(g.matmul(x, leafs.of(l.wq)), leafs.of(l.bq));
        const ad::NodeId k = g.add_row(g.matmul(x, leafs.of(l.wk)), leafs.of(l.bk));
        const ad::NodeId v = g.add_row(g.matmul(x, leafs.of(l.wv)), leafs.of(l.bv));
        std::vector<ad::NodeId> heads;
        heads.reserve(static_cast<size_t>(cfg_.attn_heads));
        for (int hh = 0; hh < cfg_.attn_heads; ++hh) {
            const int64_t c0 = static_cast<int64_t>(hh) * dh;
            const ad::NodeId qh = g.slice_cols(q, c0, c0 + dh);
            const ad::NodeId kh = g.slice_cols(k, c0, c0 + dh);
            const ad::NodeId vh = g.slice_cols(v, c0, c0 + dh);
            const ad::NodeId scores = g.scale(g.matmul(qh, kh, false, true), inv_sqrt_dh);
            const ad::NodeId attn = g.softmax_rows(scores);
            heads.push_back(g.matmul(attn, vh));
        }
        const ad::NodeId cat = g.concat_cols(heads);
        const ad::NodeId o = g.add_row(g.matmul(cat, leafs.of(l.wo)), leafs.of(l.bo));
        x = g.layer_norm_rows(g.add(x, o), leafs.of(l.ln1_g), leafs.of(l.ln1_b));
        ad::NodeId f = g.relu(g.add_row(g.matmul(x, leafs.of(l.ffn_w1)), leafs.of(l.ffn_b1)));
        f = g.add_row(g.matmul(f, leafs.of(l.ffn_w2)), leafs.of(l.ffn_b2));
        x = g.layer_norm_rows(g.add(x, f), leafs.of(l.ln2_g), leafs.of(l.ln2_b));
    }
    return g.max_rows(x);
}

}  // namespace ods::enc
