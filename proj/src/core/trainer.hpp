#pragma once

#include <functional>
#include <memory>

#include "core/pipeline.hpp"
#include "core/scene.hpp"

namespace ods::train {

struct LrConfig {
    // position lr is scaled by the scene extent and decays exponentially
    double pos_init = 1.6e-4;
    double pos_final = 1.6e-6;
    double rot = 1e-3;
    double scale = 5e-3;
    double opacity = 0.05;
    double color = 2.5e-3;
    double tables = 2e-3;
    double encoder = 1e-3;
    double ode_field = 1e-4;
    double decoder = 1e-3;
};

struct DensifyConfig {
    int64_t interval = 100;
    int64_t start = 500;
    double stop_fraction = 0.5;   // of total_steps
    double grad_threshold = 0.02; // mean per-view screen-space gradient norm
    double percent_dense = 0.01;  // of scene extent: clone below, split above
    double opacity_prune = 5e-3;
    int64_t max_particles = 4000;
    int64_t min_particles = 16;
    double split_scale_shrink = 1.6;
};

struct TrainAblation {
    bool latent_space = true;
    bool neural_ode = true;
    bool affine = true;
};

struct TrainConfig {
    uint64_t seed = 1;
    double lambda = 0.2;
    int64_t warmup_steps = 3000;
    int64_t total_steps = 8000;
    int64_t regroup_interval = 500;
    int64_t checkpoint_every = 0;  // 0: final checkpoint only
    int64_t n_init_particles = 200;
    bool init_from_dataset_points = true;

    LrConfig lr;
    DensifyConfig densify;
    TrainAblation ablation;
    enc::HashGridConfig grid;
    enc::GlobalEncoderConfig encoder;
    ode::OdeConfig ode;
    dec::DecoderConfig decoder;
    render::RenderOptions render_opts;

    void validate() const;
    PipelineConfig pipeline_config() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct LogRow {
    int64_t step;
    double loss, l1, dssim;
    int64_t particles;
};

using ProgressFn = std::function<void(int64_t step, int64_t total, double loss)>;

// Warm-up on the earliest timestamp bucket, then joint optimization of the
// kernels and the encoder/dynamics/decoder stack, with densification and
// periodic regrouping.
class Trainer {
public:
    Trainer(const scene::Dataset& dataset, TrainConfig cfg);

    // Full run; writes training_log.csv, metrics.csv (+plots), the final
    // checkpoint and particle snapshot under out_dir. Returns the final
    // checkpoint path.
    std::string run(const std::string& out_dir, const ProgressFn& progress = {});

    // stepwise interface (tests, tools)
    void initialize();
    double warmup_step();
    void finish_warmup();
    double joint_step();
    // clone/split/delete pass over the accumulated gradient statistics;
    // returns true when the particle set changed (regrouping included)
    bool densify_prune();

    Pipeline& pipeline() { return pipeline_; }
    ad::ParamStore& params() { return store_; }
    ad::AdamState& adam() { return adam_; }
    int64_t global_step() const { return global_step_; }
    const std::vector<LogRow>& log() const { return log_; }
    const TrainConfig& config() const { return cfg_; }

    void save_checkpoint_file(const std::string& path) const;

private:
    double run_step(bool warmup_phase);
    double learning_rate_for(const ad::ParamEntry& entry) const;
    void on_particles_changed(bool regroup);
    void reset_densify_stats();

    const scene::Dataset& ds_;
    TrainConfig cfg_;
    Pipeline pipeline_;
    ad::ParamStore store_;
    ad::AdamState adam_;
    Rng rng_;
    std::vector<int64_t> warmup_frames_, train_frames_;
    std::vector<double> grad_accum_;
    std::vector<int64_t> grad_count_;
    double scene_extent_ = 1.0;
    int64_t global_step_ = 0;
    int64_t joint_steps_done_ = 0;
    bool initialized_ = false;
    bool warmup_finished_ = false;
    std::vector<LogRow> log_;
};

// A trained model restored from a checkpoint (config embedded in the blob).
struct LoadedModel {
    TrainConfig cfg;
    Pipeline pipeline;
    ad::ParamStore store;
    ad::AdamState adam;
};

std::unique_ptr<LoadedModel> load_model(const std::string& checkpoint_path);

}  // namespace ods::train
