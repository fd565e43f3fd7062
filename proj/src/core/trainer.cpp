#include "core/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/metrics.hpp"

namespace ods::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    ODS_REQUIRE(lambda >= 0.0 && lambda <= 1.0, "config: lambda must be in [0,1]");
    ODS_REQUIRE(warmup_steps >= 0, "config: warmup_steps must be >= 0");
    ODS_REQUIRE(warmup_steps < total_steps, "config: warmup_steps must be < total_steps");
    ODS_REQUIRE(n_init_particles >= 1, "config: n_init_particles must be >= 1");
    grid.validate();
    encoder.validate();
    ode.validate();
    decoder.validate();
}

PipelineConfig TrainConfig::pipeline_config() const {
    PipelineConfig pc;
    pc.grid = grid;
    pc.encoder = encoder;
    pc.ode = ode;
    pc.decoder = decoder;
    pc.decoder.affine = ablation.affine;
    pc.ablation.latent_space = ablation.latent_space;
    pc.ablation.neural_ode = ablation.neural_ode;
    pc.render_opts = render_opts;
    return pc;
}

namespace {

json lr_to_json(const LrConfig& l) {
    return json{{"pos_init", l.pos_init}, {"pos_final", l.pos_final}, {"rot", l.rot},
                {"scale", l.scale},       {"opacity", l.opacity},     {"color", l.color},
                {"tables", l.tables},     {"encoder", l.encoder},     {"ode_field", l.ode_field},
                {"decoder", l.decoder}};
}

void lr_from_json(const json& j, LrConfig& l) {
    l.pos_init = j.value("pos_init", l.pos_init);
    l.pos_final = j.value("pos_final", l.pos_final);
    l.rot = j.value("rot", l.rot);
    l.scale = j.value("scale", l.scale);
    l.opacity = j.value("opacity", l.opacity);
    l.color = j.value("color", l.color);
    l.tables = j.value("tables", l.tables);
    l.encoder = j.value("encoder", l.encoder);
    l.ode_field = j.value("ode_field", l.ode_field);
    l.decoder = j.value("decoder", l.decoder);
}

}  // namespace

std::string TrainConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["lambda"] = lambda;
    j["warmup_steps"] = warmup_steps;
    j["total_steps"] = total_steps;
    j["regroup_interval"] = regroup_interval;
    j["checkpoint_every"] = checkpoint_every;
    j["n_init_particles"] = n_init_particles;
    j["init_from_dataset_points"] = init_from_dataset_points;
    j["lr"] = lr_to_json(lr);
    j["densify"] = json{{"interval", densify.interval},
                        {"start", densify.start},
                        {"stop_fraction", densify.stop_fraction},
                        {"grad_threshold", densify.grad_threshold},
                        {"percent_dense", densify.percent_dense},
                        {"opacity_prune", densify.opacity_prune},
                        {"max_particles", densify.max_particles},
                        {"min_particles", densify.min_particles},
                        {"split_scale_shrink", densify.split_scale_shrink}};
    j["ablation"] = json{{"latent_space", ablation.latent_space},
                         {"neural_ode", ablation.neural_ode},
                         {"affine", ablation.affine}};
    j["grid"] = json{{"levels", grid.levels},
                     {"n_min", grid.n_min},
                     {"n_max", grid.n_max},
                     {"table_size", grid.table_size},
                     {"feat_dim", grid.feat_dim}};
    j["encoder"] = json{{"n_centers", encoder.n_centers},
                        {"k_neighbors", encoder.k_neighbors},
                        {"group_feat_dim", encoder.group_feat_dim},
                        {"attn_layers", encoder.attn_layers},
                        {"attn_heads", encoder.attn_heads},
                        {"global_dim", encoder.global_dim},
                        {"ffn_mult", encoder.ffn_mult}};
    j["ode"] = json{{"width", ode.width},
                    {"time_dependent", ode.time_dependent},
                    {"steps_per_unit", ode.steps_per_unit}};
    j["decoder"] = json{
        {"width", decoder.width},
        {"motion_depth", decoder.motion_depth},
        {"appearance_depth", decoder.appearance_depth},
        {"appearance_head", decoder.appearance_head},
        {"cap_rotation", decoder.cap_rotation},
        {"cap_scale", decoder.cap_scale},
        {"cap_shear", decoder.cap_shear},
        {"cap_translation", decoder.cap_translation},
        {"init", decoder.init == dec::DecoderConfig::Init::Zero ? "zero" : "identity_safe"}};
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("train config: invalid JSON: ") + e.what());
    }
    TrainConfig c;
    c.seed = j.value("seed", c.seed);
    c.lambda = j.value("lambda", c.lambda);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.regroup_interval = j.value("regroup_interval", c.regroup_interval);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.n_init_particles = j.value("n_init_particles", c.n_init_particles);
    c.init_from_dataset_points = j.value("init_from_dataset_points", c.init_from_dataset_points);
    if (j.contains("lr")) lr_from_json(j.at("lr"), c.lr);
    if (j.contains("densify")) {
        const auto& d = j.at("densify");
        c.densify.interval = d.value("interval", c.densify.interval);
        c.densify.start = d.value("start", c.densify.start);
        c.densify.stop_fraction = d.value("stop_fraction", c.densify.stop_fraction);
        c.densify.grad_threshold = d.value("grad_threshold", c.densify.grad_threshold);
        c.densify.percent_dense = d.value("percent_dense", c.densify.percent_dense);
        c.densify.opacity_prune = d.value("opacity_prune", c.densify.opacity_prune);
        c.densify.max_particles = d.value("max_particles", c.densify.max_particles);
        c.densify.min_particles = d.value("min_particles", c.densify.min_particles);
        c.densify.split_scale_shrink = d.value("split_scale_shrink", c.densify.split_scale_shrink);
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        c.ablation.latent_space = a.value("latent_space", true);
        c.ablation.neural_ode = a.value("neural_ode", true);
        c.ablation.affine = a.value("affine", true);
    }
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        c.grid.levels = g.value("levels", c.grid.levels);
        c.grid.n_min = g.value("n_min", c.grid.n_min);
        c.grid.n_max = g.value("n_max", c.grid.n_max);
        c.grid.table_size = g.value("table_size", c.grid.table_size);
        c.grid.feat_dim = g.value("feat_dim", c.grid.feat_dim);
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        c.encoder.n_centers = e.value("n_centers", c.encoder.n_centers);
        c.encoder.k_neighbors = e.value("k_neighbors", c.encoder.k_neighbors);
        c.encoder.group_feat_dim = e.value("group_feat_dim", c.encoder.group_feat_dim);
        c.encoder.attn_layers = e.value("attn_layers", c.encoder.attn_layers);
        c.encoder.attn_heads = e.value("attn_heads", c.encoder.attn_heads);
        c.encoder.global_dim = e.value("global_dim", c.encoder.global_dim);
        c.encoder.ffn_mult = e.value("ffn_mult", c.encoder.ffn_mult);
    }
    if (j.contains("ode")) {
        const auto& o = j.at("ode");
        c.ode.width = o.value("width", c.ode.width);
        c.ode.time_dependent = o.value("time_dependent", c.ode.time_dependent);
        c.ode.steps_per_unit = o.value("steps_per_unit", c.ode.steps_per_unit);
    }
    if (j.contains("decoder")) {
        const auto& d = j.at("decoder");
        c.decoder.width = d.value("width", c.decoder.width);
        c.decoder.motion_depth = d.value("motion_depth", c.decoder.motion_depth);
        c.decoder.appearance_depth = d.value("appearance_depth", c.decoder.appearance_depth);
        c.decoder.appearance_head = d.value("appearance_head", c.decoder.appearance_head);
        c.decoder.cap_rotation = d.value("cap_rotation", c.decoder.cap_rotation);
        c.decoder.cap_scale = d.value("cap_scale", c.decoder.cap_scale);
        c.decoder.cap_shear = d.value("cap_shear", c.decoder.cap_shear);
        c.decoder.cap_translation = d.value("cap_translation", c.decoder.cap_translation);
        const std::string init = d.value("init", std::string("identity_safe"));
        ODS_REQUIRE(init == "zero" || init == "identity_safe",
                    "config: decoder.init must be zero|identity_safe");
        c.decoder.init = init == "zero" ? dec::DecoderConfig::Init::Zero
                                        : dec::DecoderConfig::Init::IdentitySafe;
    }
    c.validate();
    return c;
}

Trainer::Trainer(const scene::Dataset& dataset, TrainConfig cfg)
    : ds_(dataset), cfg_(std::move(cfg)), pipeline_(cfg_.pipeline_config()), rng_(cfg_.seed) {
    cfg_.validate();
    ODS_REQUIRE(!ds_.frames.empty(), "trainer: dataset has no frames");
    train_frames_ = ds_.train_indices();

    // warm-up bucket: every frame at the earliest timestamp
    double t_min = 1e300;
    for (int64_t i : train_frames_) t_min = std::min(t_min, ds_.frames[static_cast<size_t>(i)].t);
    for (int64_t i : train_frames_) {
        if (std::fabs(ds_.frames[static_cast<size_t>(i)].t - t_min) <= 1e-12)
            warmup_frames_.push_back(i);
    }
    ODS_REQUIRE(!warmup_frames_.empty(), "trainer: empty warm-up bucket");
}

void Trainer::initialize() {
    if (initialized_) return;
    Rng init_rng = rng_.fork(0x696e6974);

    Tensor source;
    if (cfg_.init_from_dataset_points && ds_.points_t0.size() > 0) {
        source = ds_.points_t0;
    } else {
        source = Tensor({cfg_.n_init_particles, 3});
        for (int64_t i = 0; i < source.size(); ++i) source[i] = init_rng.uniform(-0.5, 0.5);
    }
    const int64_t avail = source.dim(0);
    const int64_t n = std::min<int64_t>(cfg_.n_init_particles, avail);

    // sample n distinct rows
    std::vector<int64_t> order(static_cast<size_t>(avail));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[init_rng.uniform_index(i)]);
    order.resize(static_cast<size_t>(n));
    std::sort(order.begin(), order.end());

    gs::ParticleSet& parts = pipeline_.particles();
    parts = gs::ParticleSet(n, cfg_.grid.local_dim());
    for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            parts.pos.at(i, c) = source.at(order[static_cast<size_t>(i)], c);

    // isotropic scale from the mean 3-NN distance
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (int64_t i = 0; i < n; ++i)
        centroid += Eigen::Vector3d(parts.pos.at(i, 0), parts.pos.at(i, 1), parts.pos.at(i, 2));
    centroid /= static_cast<double>(n);
    double radius = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> d2;
        for (int64_t k = 0; k < n; ++k) {
            if (k == i) continue;
            double acc = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = parts.pos.at(i, c) - parts.pos.at(k, c);
                acc += d * d;
            }
            d2.push_back(acc);
        }
        std::sort(d2.begin(), d2.end());
        double mean = 0.05;
        const size_t kn = std::min<size_t>(3, d2.size());
        if (kn > 0) {
            mean = 0.0;
            for (size_t k = 0; k < kn; ++k) mean += std::sqrt(d2[k]);
            mean /= static_cast<double>(kn);
        }
        const double sc = std::clamp(mean, 1e-4, 0.5);
        for (int c = 0; c < 3; ++c) parts.log_scale.at(i, c) = std::log(sc);
        parts.rot_raw.at(i, 0) = 1.0;
        parts.opacity_raw.at(i, 0) = gs::logit(0.1);
        for (int c = 0; c < 3; ++c) parts.color_raw.at(i, c) = 0.5;
        radius = std::max(radius,
                          (Eigen::Vector3d(parts.pos.at(i, 0), parts.pos.at(i, 1),
                                           parts.pos.at(i, 2)) -
                           centroid)
                              .norm());
    }
    scene_extent_ = std::max(0.5, 2.0 * radius);

    pipeline_.register_kernel_params(store_);
    reset_densify_stats();
    initialized_ = true;
}

void Trainer::finish_warmup() {
    ODS_REQUIRE(initialized_, "trainer: initialize() first");
    if (warmup_finished_) return;
    const enc::SceneBounds bounds = enc::SceneBounds::from_points(pipeline_.particles().pos, 0.05);
    Rng module_rng = rng_.fork(0x6d6f6473);
    pipeline_.build_modules(bounds, module_rng);
    pipeline_.register_module_params(store_);
    pipeline_.recompute_grouping();
    pipeline_.refresh_local_cache();
    warmup_finished_ = true;
}

double Trainer::learning_rate_for(const ad::ParamEntry& entry) const {
    switch (entry.group) {
        case ad::ParamGroup::KernelPos: {
            const double span = static_cast<double>(std::max<int64_t>(1, cfg_.total_steps));
            const double u = std::clamp(static_cast<double>(global_step_) / span, 0.0, 1.0);
            const double lr =
                cfg_.lr.pos_init * std::pow(cfg_.lr.pos_final / cfg_.lr.pos_init, u);
            return lr * scene_extent_;
        }
        case ad::ParamGroup::KernelRot: return cfg_.lr.rot;
        case ad::ParamGroup::KernelScale: return cfg_.lr.scale;
        case ad::ParamGroup::KernelOpacity: return cfg_.lr.opacity;
        case ad::ParamGroup::KernelColor: return cfg_.lr.color;
        case ad::ParamGroup::HashTable: return cfg_.lr.tables;
        case ad::ParamGroup::Encoder: return cfg_.lr.encoder;
        case ad::ParamGroup::OdeField: return cfg_.lr.ode_field;
        case ad::ParamGroup::Decoder: return cfg_.lr.decoder;
    }
    return 1e-3;
}

double Trainer::run_step(bool warmup_phase) {
    const auto& frame_pool = warmup_phase ? warmup_frames_ : train_frames_;
    const int64_t fi = frame_pool[rng_.uniform_index(frame_pool.size())];
    const scene::Frame& frame = ds_.frames[static_cast<size_t>(fi)];
    const render::Camera& cam = ds_.cameras[static_cast<size_t>(frame.camera)];

    ad::Graph g;
    ad::ParamLeafs leafs(g);
    render::RenderStats stats;
    const char* stage = "forward";
    ad::NodeId image = ad::kNoNode, l1n = ad::kNoNode, dsn = ad::kNoNode, loss = ad::kNoNode;
    std::vector<Tensor> grads;
    try {
        image = warmup_phase ? pipeline_.build_image_static(g, leafs, cam, &stats)
                             : pipeline_.build_image(g, leafs, frame.t, cam, &stats);
        stage = "loss";
        const ad::NodeId target = g.leaf(frame.image);
        l1n = metrics::l1_node(g, image, target);
        dsn = metrics::dssim_node(g, image, target);
        loss = g.add(g.scale(l1n, 1.0 - cfg_.lambda), g.scale(dsn, cfg_.lambda));
        stage = "backward";
        grads = g.backward(loss);
    } catch (const NumericFailure& e) {
        throw NumericFailure("step " + std::to_string(global_step_ + 1) + " aborted during " +
                             stage + ": " + e.what());
    }

    // route leaf gradients back to parameters
    std::vector<Tensor> zero_grads;
    std::vector<Tensor*> param_ptrs;
    std::vector<const Tensor*> grad_ptrs;
    std::vector<double> lrs;
    zero_grads.reserve(store_.size());
    for (const auto& entry : store_.entries()) {
        param_ptrs.push_back(entry.value);
        lrs.push_back(learning_rate_for(entry));
        ad::NodeId leaf = ad::kNoNode;
        for (const auto& [tensor, id] : leafs.entries()) {
            if (tensor == entry.value) {
                leaf = id;
                break;
            }
        }
        if (leaf != ad::kNoNode) {
            grad_ptrs.push_back(&grads[static_cast<size_t>(leaf)]);
        } else {
            zero_grads.emplace_back(entry.value->shape());
            grad_ptrs.push_back(&zero_grads.back());
        }
    }
    adam_.step(param_ptrs, grad_ptrs, lrs);

    // densification statistics
    if (stats.center_grad_norm.size() == static_cast<int64_t>(grad_accum_.size())) {
        for (size_t i = 0; i < grad_accum_.size(); ++i) {
            grad_accum_[i] += stats.center_grad_norm.at(static_cast<int64_t>(i), 0);
            grad_count_[i] += stats.visible.at(static_cast<int64_t>(i), 0) > 0.5 ? 1 : 0;
        }
    }

    global_step_ += 1;
    if (!warmup_phase) joint_steps_done_ += 1;

    // densify window, then scheduled regrouping
    bool regrouped = false;
    const int64_t stop = static_cast<int64_t>(cfg_.densify.stop_fraction *
                                              static_cast<double>(cfg_.total_steps));
    if (cfg_.densify.interval > 0 && global_step_ >= cfg_.densify.start && global_step_ <= stop &&
        global_step_ % cfg_.densify.interval == 0) {
        regrouped = densify_prune();
    }
    if (!warmup_phase && !regrouped &&
        enc::regroup_schedule(enc::RegroupEvent::Iteration, joint_steps_done_,
                              cfg_.regroup_interval)) {
        pipeline_.recompute_grouping();
        pipeline_.refresh_local_cache();
    }

    const double loss_v = g.value(loss).value_scalar();
    log_.push_back(LogRow{global_step_, loss_v, g.value(l1n).value_scalar(),
                          g.value(dsn).value_scalar(), pipeline_.particles().size()});
    return loss_v;
}

double Trainer::warmup_step() {
    ODS_REQUIRE(initialized_, "trainer: initialize() first");
    ODS_REQUIRE(!warmup_finished_, "trainer: warm-up already finished");
    return run_step(true);
}

double Trainer::joint_step() {
    ODS_REQUIRE(warmup_finished_, "trainer: finish_warmup() first");
    return run_step(false);
}

void Trainer::reset_densify_stats() {
    grad_accum_.assign(static_cast<size_t>(pipeline_.particles().size()), 0.0);
    grad_count_.assign(static_cast<size_t>(pipeline_.particles().size()), 0);
}

void Trainer::on_particles_changed(bool regroup) {
    reset_densify_stats();
    if (warmup_finished_) {
        pipeline_.refresh_local_cache();
        if (regroup) pipeline_.recompute_grouping();
    }
}

bool Trainer::densify_prune() {
    gs::ParticleSet& parts = pipeline_.particles();
    const int64_t n = parts.size();
    if (static_cast<int64_t>(grad_accum_.size()) != n) {
        reset_densify_stats();
        return false;
    }
    const auto& dc = cfg_.densify;

    std::vector<int64_t> src;        // source row per surviving/new particle
    std::vector<int8_t> kind;        // 0 keep, 1 clone copy, 2 split sample
    src.reserve(static_cast<size_t>(n) + 16);

    std::vector<char> keep(static_cast<size_t>(n), 1);
    int64_t survivors = n;
    for (int64_t i = 0; i < n; ++i) {
        const double op = gs::sigmoid(parts.opacity_raw.at(i, 0));
        if (op < dc.opacity_prune && survivors > dc.min_particles) {
            keep[static_cast<size_t>(i)] = 0;
            survivors -= 1;
        }
    }
    for (int64_t i = 0; i < n; ++i) {
        if (keep[static_cast<size_t>(i)]) {
            src.push_back(i);
            kind.push_back(0);
        }
    }

    // growth
    std::vector<std::pair<int64_t, bool>> grow;  // (source, is_split)
    int64_t projected = static_cast<int64_t>(src.size());
    for (int64_t i = 0; i < n && projected < dc.max_particles; ++i) {
        if (!keep[static_cast<size_t>(i)]) continue;
        const double avg = grad_count_[static_cast<size_t>(i)] > 0
                               ? grad_accum_[static_cast<size_t>(i)] /
                                     static_cast<double>(grad_count_[static_cast<size_t>(i)])
                               : 0.0;
        if (avg <= dc.grad_threshold) continue;
        double max_scale = 0.0;
        for (int c = 0; c < 3; ++c)
            max_scale = std::max(max_scale, std::exp(parts.log_scale.at(i, c)));
        grow.emplace_back(i, max_scale > dc.percent_dense * scene_extent_);
        projected += 1;
    }
    if (grow.empty() && static_cast<int64_t>(src.size()) == n) {
        reset_densify_stats();
        return false;
    }

    std::vector<size_t> split_rows;  // rows to resample (original + appended)
    std::vector<size_t> clone_rows;
    std::vector<int64_t> split_src, clone_src;
    // record positions of originals for split resampling
    std::vector<int64_t> row_of_source(static_cast<size_t>(n), -1);
    for (size_t r = 0; r < src.size(); ++r) row_of_source[static_cast<size_t>(src[r])] =
        static_cast<int64_t>(r);

    for (const auto& [source, is_split] : grow) {
        src.push_back(source);
        kind.push_back(is_split ? 2 : 1);
        if (is_split) {
            split_rows.push_back(src.size() - 1);
            split_src.push_back(source);
            // the original row is resampled as well
            split_rows.push_back(static_cast<size_t>(row_of_source[static_cast<size_t>(source)]));
            split_src.push_back(source);
        } else {
            clone_rows.push_back(src.size() - 1);
            clone_src.push_back(source);
        }
    }

    // source values are still needed after the remap
    const gs::ParticleSet before_copy = parts;

    parts.remap_rows(src);

    // Adam kernel moments: copies keep their source moments, new rows reset
    std::vector<int64_t> adam_map(src.size());
    for (size_t r = 0; r < src.size(); ++r) adam_map[r] = kind[r] == 0 ? src[r] : -1;
    for (size_t slot = 0; slot < 5 && slot < adam_.slot_count(); ++slot)
        adam_.remap_rows(slot, adam_map);

    Rng densify_rng = rng_.fork(0x64656e73 + static_cast<uint64_t>(global_step_));
    // clones: small positional jitter so the twins can separate
    for (size_t k = 0; k < clone_rows.size(); ++k) {
        const int64_t row = static_cast<int64_t>(clone_rows[k]);
        const int64_t s = clone_src[k];
        double mean_scale = 0.0;
        for (int c = 0; c < 3; ++c) mean_scale += std::exp(before_copy.log_scale.at(s, c));
        mean_scale /= 3.0;
        for (int c = 0; c < 3; ++c)
            parts.pos.at(row, c) += 0.1 * mean_scale * densify_rng.normal();
    }
    // splits: resample from N(mu, Sigma), shrink the scale
    for (size_t k = 0; k < split_rows.size(); ++k) {
        const int64_t row = static_cast<int64_t>(split_rows[k]);
        const int64_t s = split_src[k];
        const gs::GaussianKernel kern = before_copy.kernel(s);
        const Eigen::Matrix3d rot = gs::quat_to_rot(kern.rot);
        const Eigen::Vector3d sample =
            kern.mu + rot * (kern.scale.asDiagonal() *
                             Eigen::Vector3d(densify_rng.normal(), densify_rng.normal(),
                                             densify_rng.normal()));
        for (int c = 0; c < 3; ++c) {
            parts.pos.at(row, c) = sample[c];
            parts.log_scale.at(row, c) =
                before_copy.log_scale.at(s, c) - std::log(dc.split_scale_shrink);
        }
    }

    on_particles_changed(/*regroup=*/true);
    return true;
}

std::string Trainer::run(const std::string& out_dir, const ProgressFn& progress) {
    fs::create_directories(out_dir);
    initialize();
    for (int64_t i = 0; i < cfg_.warmup_steps; ++i) {
        const double loss = warmup_step();
        if (progress && (global_step_ % 100 == 0 || i + 1 == cfg_.warmup_steps))
            progress(global_step_, cfg_.total_steps, loss);
    }
    finish_warmup();
    const int64_t joint_steps = cfg_.total_steps - cfg_.warmup_steps;
    for (int64_t i = 0; i < joint_steps; ++i) {
        const double loss = joint_step();
        if (progress && (global_step_ % 100 == 0 || i + 1 == joint_steps))
            progress(global_step_, cfg_.total_steps, loss);
        if (cfg_.checkpoint_every > 0 && global_step_ % cfg_.checkpoint_every == 0 &&
            global_step_ < cfg_.total_steps) {
            save_checkpoint_file(
                (fs::path(out_dir) / ("checkpoint_" + std::to_string(global_step_) + ".bin"))
                    .string());
        }
    }

    // training log
    {
        std::ofstream os(fs::path(out_dir) / "training_log.csv");
        if (!os) throw IoError("cannot write training_log.csv under " + out_dir);
        os << "step,loss,l1,dssim,particles\n";
        char row[160];
        for (const auto& r : log_) {
            std::snprintf(row, sizeof(row), "%lld,%.8f,%.8f,%.8f,%lld\n",
                          static_cast<long long>(r.step), r.loss, r.l1, r.dssim,
                          static_cast<long long>(r.particles));
            os << row;
        }
    }

    pipeline_.refresh_local_cache();
    const std::string ckpt = (fs::path(out_dir) / "checkpoint_final.bin").string();
    save_checkpoint_file(ckpt);
    pipeline_.particles().save_snapshot(
        (fs::path(out_dir) / "particles_final.snapshot").string());
    scene::evaluate(pipeline_, ds_, "all", (fs::path(out_dir) / "metrics.csv").string(),
                    (fs::path(out_dir) / "metrics").string());
    return ckpt;
}

void Trainer::save_checkpoint_file(const std::string& path) const {
    ad::CheckpointBlob blob;
    blob.config_json = cfg_.to_json();
    pipeline_.fill_checkpoint(blob, store_, &adam_);
    ad::save_checkpoint(path, blob);
}

std::unique_ptr<LoadedModel> load_model(const std::string& checkpoint_path) {
    const ad::CheckpointBlob blob = ad::load_checkpoint(checkpoint_path);
    auto model = std::make_unique<LoadedModel>();
    model->cfg = TrainConfig::from_json(blob.config_json);
    model->pipeline = Pipeline(model->cfg.pipeline_config());
    Rng rng(model->cfg.seed);
    model->pipeline.build_modules(enc::SceneBounds{}, rng);
    model->pipeline.register_params(model->store);
    model->adam = ad::AdamState(
        ad::AdamConfig{blob.adam_beta1, blob.adam_beta2, blob.adam_eps});
    model->pipeline.restore_from_checkpoint(blob, model->store, &model->adam);
    return model;
}

}  // namespace ods::train
