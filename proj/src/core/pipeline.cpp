#include "core/pipeline.hpp"

namespace ods {

int64_t Pipeline::decoder_input_dim() const {
    const int64_t lf = cfg_.grid.local_dim();
    if (!cfg_.ablation.latent_space) return lf + 1;
    if (!cfg_.ablation.neural_ode) return cfg_.encoder.global_dim + lf + 1;
    return cfg_.encoder.global_dim + lf;
}

void Pipeline::build_modules(const enc::SceneBounds& bounds, Rng& rng) {
    bounds_ = bounds;
    grid_ = enc::HashGrid(cfg_.grid, bounds_);
    Rng grid_rng = rng.fork(0x67726964);
    grid_.init(grid_rng);
    if (cfg_.ablation.latent_space) {
        encoder_ = enc::GlobalEncoder(cfg_.encoder);
        Rng enc_rng = rng.fork(0x656e6373);
        encoder_.init(enc_rng);
        if (cfg_.ablation.neural_ode) {
            dynamics_ = ode::DynamicsField(cfg_.ode, cfg_.encoder.global_dim);
            Rng ode_rng = rng.fork(0x6f646566);
            dynamics_.init(ode_rng);
        }
    }
    decoder_ = dec::KernelDecoder(cfg_.decoder, decoder_input_dim());
    Rng dec_rng = rng.fork(0x6465636f);
    decoder_.init(dec_rng);
    modules_ready_ = true;
}

void Pipeline::register_kernel_params(ad::ParamStore& store) {
    store.add("kernel.pos", ad::ParamGroup::KernelPos, &particles_.pos);
    store.add("kernel.rot_raw", ad::ParamGroup::KernelRot, &particles_.rot_raw);
    store.add("kernel.log_scale", ad::ParamGroup::KernelScale, &particles_.log_scale);
    store.add("kernel.opacity_raw", ad::ParamGroup::KernelOpacity, &particles_.opacity_raw);
    store.add("kernel.color_raw", ad::ParamGroup::KernelColor, &particles_.color_raw);
}

void Pipeline::register_module_params(ad::ParamStore& store) {
    ODS_REQUIRE(modules_ready_, "pipeline: modules not built");
    grid_.register_params(store);
    if (cfg_.ablation.latent_space) {
        encoder_.register_params(store);
        if (cfg_.ablation.neural_ode) dynamics_.register_params(store);
    }
    decoder_.register_params(store);
}

void Pipeline::register_params(ad::ParamStore& store) {
    register_kernel_params(store);
    register_module_params(store);
}

void Pipeline::recompute_grouping() {
    if (!cfg_.ablation.latent_space) return;
    grouping_ = enc::build_grouping(particles_.pos, cfg_.encoder.n_centers,
                                    cfg_.encoder.k_neighbors);
}

void Pipeline::refresh_local_cache() {
    ODS_REQUIRE(modules_ready_, "pipeline: modules not built");
    particles_.latent_local = grid_.encode_plain(particles_.pos);
}

Pipeline::Decoded Pipeline::decode_at(ad::Graph& g, ad::ParamLeafs& leafs, double t) {
    ODS_REQUIRE(modules_ready_, "pipeline: modules not built");
    const int64_t n = particles_.size();
    ODS_REQUIRE(n > 0, "pipeline: no particles");

    const ad::NodeId mu = leafs.of(particles_.pos);
    const ad::NodeId local = grid_.encode(g, leafs, mu);

    ad::NodeId z;
    if (cfg_.ablation.latent_space) {
        ODS_REQUIRE(!grouping_.empty(), "pipeline: grouping not computed");
        const ad::NodeId g0 = encoder_.encode(g, leafs, mu, grouping_);
        if (cfg_.ablation.neural_ode) {
            const ad::NodeId gt =
                ode::ode_solve(g, leafs, dynamics_, g0, t, cfg_.ode.steps_per_unit);
            const std::array<ad::NodeId, 2> parts{g.repeat_rows(gt, n), local};
            z = g.concat_cols(parts);
        } else {
            const ad::NodeId t_col = g.leaf(Tensor::full({n, 1}, t));
            const std::array<ad::NodeId, 3> parts{g.repeat_rows(g0, n), local, t_col};
            z = g.concat_cols(parts);
        }
    } else {
        const ad::NodeId t_col = g.leaf(Tensor::full({n, 1}, t));
        const std::array<ad::NodeId, 2> parts{local, t_col};
        z = g.concat_cols(parts);
    }

    const dec::DeformationNodes def = decoder_.decode_all(g, leafs, z);
    Decoded out;
    out.mu = def.A != ad::kNoNode ? dec::apply_affine(g, mu, def.A, def.b) : g.add(mu, def.b);
    out.rot = g.normalize_rows(g.add(leafs.of(particles_.rot_raw), def.dR), /*strict=*/true);
    out.scale = g.exp(g.add(leafs.of(particles_.log_scale), def.dS));
    out.opacity = g.sigmoid(leafs.of(particles_.opacity_raw));
    out.color = def.dC != ad::kNoNode
                    ? g.clamp01(g.add(leafs.of(particles_.color_raw), def.dC))
                    : g.clamp01(leafs.of(particles_.color_raw));
    return out;
}

ad::NodeId Pipeline::build_image(ad::Graph& g, ad::ParamLeafs& leafs, double t,
                                 const render::Camera& cam, render::RenderStats* stats) {
    const Decoded d = decode_at(g, leafs, t);
    return render::render_image(g, d.mu, d.rot, d.scale, d.opacity, d.color, cam,
                                cfg_.render_opts, stats);
}

ad::NodeId Pipeline::build_image_static(ad::Graph& g, ad::ParamLeafs& leafs,
                                        const render::Camera& cam, render::RenderStats* stats) {
    const int64_t n = particles_.size();
    ODS_REQUIRE(n > 0, "pipeline: no particles");
    const ad::NodeId mu = leafs.of(particles_.pos);
    const ad::NodeId rot = g.normalize_rows(leafs.of(particles_.rot_raw), /*strict=*/true);
    const ad::NodeId scale = g.exp(leafs.of(particles_.log_scale));
    const ad::NodeId opacity = g.sigmoid(leafs.of(particles_.opacity_raw));
    const ad::NodeId color = g.clamp01(leafs.of(particles_.color_raw));
    return render::render_image(g, mu, rot, scale, opacity, color, cam, cfg_.render_opts, stats);
}

Tensor Pipeline::render_at(double t, const render::Camera& cam) {
    ad::Graph g;
    ad::ParamLeafs leafs(g);
    return g.value(build_image(g, leafs, t, cam));
}

Tensor Pipeline::render_static(const render::Camera& cam) {
    ad::Graph g;
    ad::ParamLeafs leafs(g);
    return g.value(build_image_static(g, leafs, cam));
}

Tensor Pipeline::predicted_positions(double t) {
    ad::Graph g;
    ad::ParamLeafs leafs(g);
    const Decoded d = decode_at(g, leafs, t);
    return g.value(d.mu);
}

void Pipeline::fill_checkpoint(ad::CheckpointBlob& blob, const ad::ParamStore& store,
                               const ad::AdamState* adam) const {
    for (int c = 0; c < 3; ++c) {
        blob.bbox[static_cast<size_t>(c)] = bounds_.lo[c];
        blob.bbox[static_cast<size_t>(3 + c)] = bounds_.hi[c];
    }
    blob.tensors.clear();
    for (const auto& e : store.entries()) {
        blob.tensors.push_back(
            {e.name, static_cast<uint32_t>(e.group), *e.value});
    }
    if (adam) {
        blob.has_adam = true;
        blob.adam_step_count = adam->step_count();
        blob.adam_beta1 = adam->config().beta1;
        blob.adam_beta2 = adam->config().beta2;
        blob.adam_eps = adam->config().eps;
        blob.adam_m.clear();
        blob.adam_v.clear();
        for (size_t i = 0; i < store.size(); ++i) {
            if (i < adam->slot_count()) {
                blob.adam_m.push_back(adam->first_moment(i));
                blob.adam_v.push_back(adam->second_moment(i));
            } else {
                blob.adam_m.push_back(Tensor(store.entries()[i].value->shape()));
                blob.adam_v.push_back(Tensor(store.entries()[i].value->shape()));
            }
            // never stepped: persist zero moments of the right shape
            if (blob.adam_m.back().empty() && store.entries()[i].value->size() > 0) {
                blob.adam_m.back() = Tensor(store.entries()[i].value->shape());
                blob.adam_v.back() = Tensor(store.entries()[i].value->shape());
            }
        }
    }
    if (!grouping_.empty()) {
        blob.has_grouping = true;
        blob.grouping = grouping_.to_blob();
    }
}

void Pipeline::restore_from_checkpoint(const ad::CheckpointBlob& blob, ad::ParamStore& store,
                                       ad::AdamState* adam) {
    for (int c = 0; c < 3; ++c) {
        bounds_.lo[c] = blob.bbox[static_cast<size_t>(c)];
        bounds_.hi[c] = blob.bbox[static_cast<size_t>(3 + c)];
    }
    grid_.set_bounds(bounds_);
    for (const auto& nt : blob.tensors) {
        const int64_t idx = store.find(nt.name);
        ODS_REQUIRE(idx >= 0, "checkpoint: unknown tensor " + nt.name);
        *store.entries()[static_cast<size_t>(idx)].value = nt.value;
    }
    if (adam && blob.has_adam) {
        // moments are stored positionally with blob.tensors; realign by name
        std::vector<Tensor> m(store.size()), v(store.size());
        for (size_t bi = 0; bi < blob.tensors.size() && bi < blob.adam_m.size(); ++bi) {
            const int64_t idx = store.find(blob.tensors[bi].name);
            if (idx < 0) continue;
            m[static_cast<size_t>(idx)] = blob.adam_m[bi];
            v[static_cast<size_t>(idx)] = blob.adam_v[bi];
        }
        for (size_t i = 0; i < store.size(); ++i) {
            if (m[i].empty()) {
                m[i] = Tensor(store.entries()[i].value->shape());
                v[i] = Tensor(store.entries()[i].value->shape());
            }
        }
        adam->restore(std::move(m), std::move(v), blob.adam_step_count);
    }
    if (blob.has_grouping) {
        grouping_ = enc::GroupingCache::from_blob(blob.grouping);
    } else {
        recompute_grouping();
    }
    refresh_local_cache();
}

}  // namespace ods
