#pragma once

#include "core/adam.hpp"
#include "core/checkpoint.hpp"
#include "core/decoder.hpp"
#include "core/encoder.hpp"
#include "core/gaussians.hpp"
#include "core/grouping.hpp"
#include "core/hash_encoder.hpp"
#include "core/ode.hpp"
#include "core/params.hpp"
#include "core/renderer.hpp"

namespace ods {

struct AblationFlags {
    bool latent_space = true;
    bool neural_ode = true;
    // the affine switch lives in DecoderConfig::affine
};

struct PipelineConfig {
    enc::HashGridConfig grid;
    enc::GlobalEncoderConfig encoder;
    ode::OdeConfig ode;
    dec::DecoderConfig decoder;
    AblationFlags ablation;
    render::RenderOptions render_opts;
};

// Particles with latent state, the learned encoder/dynamics/decoder stack and
// the composition of all of it into one differentiable image.
class Pipeline {
public:
    Pipeline() = default;
    explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {}

    const PipelineConfig& config() const { return cfg_; }
    gs::ParticleSet& particles() { return particles_; }
    const gs::ParticleSet& particles() const { return particles_; }
    enc::GroupingCache& grouping() { return grouping_; }
    const enc::SceneBounds& bounds() const { return bounds_; }
    enc::HashGrid& grid() { return grid_; }
    enc::GlobalEncoder& encoder() { return encoder_; }
    ode::DynamicsField& dynamics() { return dynamics_; }
    dec::KernelDecoder& decoder() { return decoder_; }
    bool modules_ready() const { return modules_ready_; }

    int64_t decoder_input_dim() const;

    // Instantiate the learned modules once the scene bounds are known.
    void build_modules(const enc::SceneBounds& bounds, Rng& rng);
    // kernel tensors first, then module weights (stable checkpoint order)
    void register_params(ad::ParamStore& store);
    void register_kernel_params(ad::ParamStore& store);
    void register_module_params(ad::ParamStore& store);

    void recompute_grouping();
    // latent_local cache = grid.encode_plain(positions)
    void refresh_local_cache();

    // Full decoded render at time t (graph-connected).
    ad::NodeId build_image(ad::Graph& g, ad::ParamLeafs& leafs, double t,
                           const render::Camera& cam, render::RenderStats* stats = nullptr);
    // Identity-deformation render of the canonical kernels.
    ad::NodeId build_image_static(ad::Graph& g, ad::ParamLeafs& leafs, const render::Camera& cam,
                                  render::RenderStats* stats = nullptr);

    Tensor render_at(double t, const render::Camera& cam);
    Tensor render_static(const render::Camera& cam);
    // decoded particle centers at time t, Nx3
    Tensor predicted_positions(double t);

    void fill_checkpoint(ad::CheckpointBlob& blob, const ad::ParamStore& store,
                         const ad::AdamState* adam) const;
    // store must already be registered against this pipeline
    void restore_from_checkpoint(const ad::CheckpointBlob& blob, ad::ParamStore& store,
                                 ad::AdamState* adam);

private:
    struct Decoded {
        ad::NodeId mu, rot, scale, opacity, color;
    };
    Decoded decode_at(ad::Graph& g, ad::ParamLeafs& leafs, double t);

    PipelineConfig cfg_;
    gs::ParticleSet particles_;
    enc::SceneBounds bounds_;
    enc::HashGrid grid_;
    enc::GlobalEncoder encoder_;
    ode::DynamicsField dynamics_;
    dec::KernelDecoder decoder_;
    enc::GroupingCache grouping_;
    bool modules_ready_ = false;
};

}  // namespace ods
