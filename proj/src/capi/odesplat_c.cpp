#include "odesplat/odesplat.h"

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "core/image_io.hpp"
#include "core/scene.hpp"
#include "core/trainer.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

ods_status classify(const std::exception& e) {
    set_error(e.what());
    if (dynamic_cast<const ods::ContractViolation*>(&e)) return ODS_ERR_CONTRACT;
    if (dynamic_cast<const ods::NumericFailure*>(&e)) return ODS_ERR_NUMERIC;
    if (dynamic_cast<const ods::IoError*>(&e)) return ODS_ERR_IO;
    return ODS_ERR_INTERNAL;
}

template <typename Fn>
ods_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        return classify(e);
    } catch (...) {
        set_error("unknown error");
        return ODS_ERR_INTERNAL;
    }
}

// inline JSON object or a path to a JSON file
std::string resolve_json_arg(const char* arg) {
    std::string s(arg);
    const size_t first = s.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && s[first] == '{') return s;
    std::ifstream is(s);
    if (!is) throw ods::IoError("cannot open JSON file: " + s);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

ods_status require(bool cond, const char* msg) {
    if (!cond) {
        set_error(msg);
        return ODS_ERR_INVALID_ARGUMENT;
    }
    return ODS_OK;
}

}  // namespace

struct ods_dataset {
    ods::scene::Dataset data;
};

struct ods_model {
    std::unique_ptr<ods::train::LoadedModel> model;
};

extern "C" {

const char* ods_status_name(ods_status s) {
    switch (s) {
        case ODS_OK: return "ok";
        case ODS_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case ODS_ERR_IO: return "io_error";
        case ODS_ERR_NUMERIC: return "numeric_failure";
        case ODS_ERR_CONTRACT: return "contract_violation";
        case ODS_ERR_INTERNAL: return "internal_error";
    }
    return "unknown";
}

const char* ods_last_error(void) { return g_last_error.c_str(); }

void ods_version(int* major, int* minor, int* patch) {
    if (major) *major = 0;
    if (minor) *minor = 1;
    if (patch) *patch = 0;
}

ods_status ods_generate_scene(const char* spec_json, uint64_t seed, const char* out_dir) {
    if (auto s = require(spec_json && out_dir, "spec_json and out_dir are required"); s != ODS_OK)
        return s;
    return guarded([&]() {
        const auto spec = ods::scene::SceneSpec::from_json(resolve_json_arg(spec_json));
        ods::scene::generate_scene(spec, seed, out_dir);
        return ODS_OK;
    });
}

ods_status ods_dataset_open(const char* dir, ods_dataset** out) {
    if (auto s = require(dir && out, "dir and out are required"); s != ODS_OK) return s;
    return guarded([&]() {
        auto ds = std::make_unique<ods_dataset>();
        ds->data = ods::scene::Dataset::load(dir);
        *out = ds.release();
        return ODS_OK;
    });
}

void ods_dataset_close(ods_dataset* ds) { delete ds; }

ods_status ods_dataset_info_get(const ods_dataset* ds, ods_dataset_info* out) {
    if (auto s = require(ds && out, "dataset and out are required"); s != ODS_OK) return s;
    return guarded([&]() {
        const auto& d = ds->data;
        out->frame_count = static_cast<int32_t>(d.frames.size());
        out->camera_count = static_cast<int32_t>(d.cameras.size());
        out->width = d.cameras.empty() ? 0 : d.cameras.front().width;
        out->height = d.cameras.empty() ? 0 : d.cameras.front().height;
        out->split_threshold = d.split_threshold;
        out->train_frames = static_cast<int32_t>(d.train_indices().size());
        out->extrapolation_frames = static_cast<int32_t>(d.extrapolation_indices().size());
        return ODS_OK;
    });
}

ods_status ods_dataset_frame_info(const ods_dataset* ds, int32_t frame_index,
                                  ods_frame_info* out) {
    if (auto s = require(ds && out, "dataset and out are required"); s != ODS_OK) return s;
    return guarded([&]() {
        const auto& d = ds->data;
        if (frame_index < 0 || frame_index >= static_cast<int32_t>(d.frames.size()))
            throw ods::ContractViolation("frame index out of range");
        const auto& f = d.frames[static_cast<size_t>(frame_index)];
        out->camera = f.camera;
        out->t = f.t;
        const bool tr = d.train_includes_threshold ? (f.t <= d.split_threshold)
                                                   : (f.t < d.split_threshold);
        out->is_train = tr ? 1 : 0;
        return ODS_OK;
    });
}

ods_status ods_train(const char* config_json, const char* dataset_dir, const char* out_dir,
                     int64_t seed_override, ods_progress_fn progress, void* user,
                     char* out_checkpoint_path, size_t capacity) {
    if (auto s = require(config_json && dataset_dir && out_dir,
                         "config_json, dataset_dir and out_dir are required");
        s != ODS_OK)
        return s;
    return guarded([&]() {
        auto cfg = ods::train::TrainConfig::from_json(resolve_json_arg(config_json));
        if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
        const auto dataset = ods::scene::Dataset::load(dataset_dir);
        ods::train::Trainer trainer(dataset, cfg);
        ods::train::ProgressFn cb;
        if (progress)
            cb = [&](int64_t step, int64_t total, double loss) {
                progress(step, total, loss, user);
            };
        const std::string ckpt = trainer.run(out_dir, cb);
        if (out_checkpoint_path && capacity > 0) {
            std::strncpy(out_checkpoint_path, ckpt.c_str(), capacity - 1);
            out_checkpoint_path[capacity - 1] = '\0';
        }
        return ODS_OK;
    });
}

ods_status ods_model_open(const char* checkpoint_path, ods_model** out) {
    if (auto s = require(checkpoint_path && out, "checkpoint_path and out are required");
        s != ODS_OK)
        return s;
    return guarded([&]() {
        auto m = std::make_unique<ods_model>();
        m->model = ods::train::load_model(checkpoint_path);
        *out = m.release();
        return ODS_OK;
    });
}

void ods_model_close(ods_model* m) { delete m; }

namespace {

ods_status render_common(ods_model* m, const ods::render::Camera& cam, double t,
                         const char* out_png, const char* out_f64) {
    const ods::Tensor img = m->model->pipeline.render_at(t, cam);
    if (out_png) ods::img::write_png(out_png, img);
    if (out_f64) ods::img::write_f64(out_f64, img);
    return ODS_OK;
}

}  // namespace

ods_status ods_model_render_frame(ods_model* m, const ods_dataset* ds, int32_t frame_index,
                                  const char* out_png, const char* out_f64) {
    if (auto s = require(m && ds, "model and dataset are required"); s != ODS_OK) return s;
    return guarded([&]() {
        const auto& d = ds->data;
        if (frame_index < 0 || frame_index >= static_cast<int32_t>(d.frames.size()))
            throw ods::ContractViolation("frame index out of range");
        const auto& f = d.frames[static_cast<size_t>(frame_index)];
        return render_common(m, d.cameras[static_cast<size_t>(f.camera)], f.t, out_png, out_f64);
    });
}

ods_status ods_model_render_view(ods_model* m, const ods_dataset* ds, int32_t camera_index,
                                 double t, const char* out_png, const char* out_f64) {
    if (auto s = require(m && ds, "model and dataset are required"); s != ODS_OK) return s;
    return guarded([&]() {
        const auto& d = ds->data;
        if (camera_index < 0 || camera_index >= static_cast<int32_t>(d.cameras.size()))
            throw ods::ContractViolation("camera index out of range");
        return render_common(m, d.cameras[static_cast<size_t>(camera_index)], t, out_png,
                             out_f64);
    });
}

ods_status ods_evaluate(ods_model* m, const ods_dataset* ds, const char* split,
                        const char* out_csv, const char* out_plot_prefix,
                        ods_eval_summary* out) {
    if (auto s = require(m && ds && split, "model, dataset and split are required"); s != ODS_OK)
        return s;
    return guarded([&]() {
        const auto sum = ods::scene::evaluate(m->model->pipeline, ds->data, split,
                                              out_csv ? out_csv : "",
                                              out_plot_prefix ? out_plot_prefix : "");
        if (out) {
            out->mean_psnr_train = sum.mean_psnr_train;
            out->mean_ssim_train = sum.mean_ssim_train;
            out->mean_l1_train = sum.mean_l1_train;
            out->mean_psnr_extrap = sum.mean_psnr_extrap;
            out->mean_ssim_extrap = sum.mean_ssim_extrap;
            out->mean_l1_extrap = sum.mean_l1_extrap;
            out->n_train = static_cast<int32_t>(sum.n_train);
            out->n_extrap = static_cast<int32_t>(sum.n_extrap);
        }
        return ODS_OK;
    });
}

ods_status ods_trajectory_error(ods_model* m, const ods_dataset* ds, double t, double* out) {
    if (auto s = require(m && ds && out, "model, dataset and out are required"); s != ODS_OK)
        return s;
    return guarded([&]() {
        *out = ods::scene::trajectory_error(m->model->pipeline, ds->data, t);
        return ODS_OK;
    });
}

}  // extern "C"
