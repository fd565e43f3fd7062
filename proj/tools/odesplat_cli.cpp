// Command-line front end. Talks to the core exclusively through the shared
// library's C interface.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "odesplat/odesplat.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int fail(ods_status s) {
    std::cerr << "error (" << ods_status_name(s) << "): " << ods_last_error() << "\n";
    return 1;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        std::cerr << "error: cannot open " << path << "\n";
        std::exit(1);
    }
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void progress_printer(int64_t step, int64_t total, double loss, void*) {
    std::fprintf(stderr, "\rstep %lld/%lld  loss %.6f   ", static_cast<long long>(step),
                 static_cast<long long>(total), loss);
    if (step >= total) std::fprintf(stderr, "\n");
    std::fflush(stderr);
}

struct DatasetGuard {
    ods_dataset* ds = nullptr;
    ~DatasetGuard() { ods_dataset_close(ds); }
};

struct ModelGuard {
    ods_model* m = nullptr;
    ~ModelGuard() { ods_model_close(m); }
};

int do_generate(const std::string& kind, const std::string& config, uint64_t seed,
                const std::string& out) {
    json spec = json::object();
    if (!config.empty()) spec = json::parse(read_file(config));
    if (!kind.empty()) spec["kind"] = kind;
    const std::string spec_str = spec.dump();
    if (const ods_status s = ods_generate_scene(spec_str.c_str(), seed, out.c_str());
        s != ODS_OK)
        return fail(s);
    std::cout << "dataset written to " << out << "\n";
    return 0;
}

int do_train(const std::string& config, const std::string& data, const std::string& out,
             int64_t seed, bool quiet) {
    char ckpt[4096] = {0};
    const ods_status s =
        ods_train(config.c_str(), data.c_str(), out.c_str(), seed,
                  quiet ? nullptr : progress_printer, nullptr, ckpt, sizeof(ckpt));
    if (s != ODS_OK) return fail(s);
    std::cout << "checkpoint: " << ckpt << "\n";
    std::cout << "metrics: " << (fs::path(out) / "metrics.csv").string() << "\n";
    return 0;
}

int print_summary(const ods_eval_summary& sum) {
    std::printf("split           frames    PSNR      SSIM      L1\n");
    if (sum.n_train)
        std::printf("train           %6d  %8.3f  %8.4f  %10.6f\n", sum.n_train,
                    sum.mean_psnr_train, sum.mean_ssim_train, sum.mean_l1_train);
    if (sum.n_extrap)
        std::printf("extrapolation   %6d  %8.3f  %8.4f  %10.6f\n", sum.n_extrap,
                    sum.mean_psnr_extrap, sum.mean_ssim_extrap, sum.mean_l1_extrap);
    return 0;
}

int do_evaluate(const std::string& checkpoint, const std::string& data, const std::string& split,
                const std::string& out_csv, const std::string& plot) {
    DatasetGuard ds;
    if (const ods_status s = ods_dataset_open(data.c_str(), &ds.ds); s != ODS_OK) return fail(s);
    ModelGuard m;
    if (const ods_status s = ods_model_open(checkpoint.c_str(), &m.m); s != ODS_OK)
        return fail(s);
    ods_eval_summary sum{};
    if (const ods_status s =
            ods_evaluate(m.m, ds.ds, split.c_str(), out_csv.empty() ? nullptr : out_csv.c_str(),
                         plot.empty() ? nullptr : plot.c_str(), &sum);
        s != ODS_OK)
        return fail(s);
    return print_summary(sum);
}

int do_render(const std::string& checkpoint, const std::string& data, int frame, int camera,
              double t, const std::string& out_png, const std::string& out_f64) {
    DatasetGuard ds;
    if (const ods_status s = ods_dataset_open(data.c_str(), &ds.ds); s != ODS_OK) return fail(s);
    ModelGuard m;
    if (const ods_status s = ods_model_open(checkpoint.c_str(), &m.m); s != ODS_OK)
        return fail(s);
    ods_status s;
    if (frame >= 0) {
        s = ods_model_render_frame(m.m, ds.ds, frame, out_png.empty() ? nullptr : out_png.c_str(),
                                   out_f64.empty() ? nullptr : out_f64.c_str());
    } else {
        s = ods_model_render_view(m.m, ds.ds, camera, t,
                                  out_png.empty() ? nullptr : out_png.c_str(),
                                  out_f64.empty() ? nullptr : out_f64.c_str());
    }
    if (s != ODS_OK) return fail(s);
    std::cout << "rendered " << (out_png.empty() ? out_f64 : out_png) << "\n";
    return 0;
}

int do_extrapolate(const std::string& checkpoint, const std::string& data,
                   const std::string& out) {
    DatasetGuard ds;
    if (const ods_status s = ods_dataset_open(data.c_str(), &ds.ds); s != ODS_OK) return fail(s);
    ModelGuard m;
    if (const ods_status s = ods_model_open(checkpoint.c_str(), &m.m); s != ODS_OK)
        return fail(s);
    ods_dataset_info info{};
    if (const ods_status s = ods_dataset_info_get(ds.ds, &info); s != ODS_OK) return fail(s);
    fs::create_directories(out);
    int rendered = 0;
    for (int32_t i = 0; i < info.frame_count; ++i) {
        ods_frame_info fi{};
        if (const ods_status s = ods_dataset_frame_info(ds.ds, i, &fi); s != ODS_OK)
            return fail(s);
        if (fi.is_train) continue;
        char name[64];
        std::snprintf(name, sizeof(name), "extrap_%05d", i);
        const std::string png = (fs::path(out) / (std::string(name) + ".png")).string();
        const std::string f64 = (fs::path(out) / (std::string(name) + ".f64")).string();
        if (const ods_status s = ods_model_render_frame(m.m, ds.ds, i, png.c_str(), f64.c_str());
            s != ODS_OK)
            return fail(s);
        ++rendered;
    }
    std::cout << "rendered " << rendered << " extrapolation frames to " << out << "\n";
    return 0;
}

int do_ablate(const std::string& axis, const std::string& config, const std::string& data,
              const std::string& out, int64_t seed, bool quiet) {
    if (axis != "neural_ode" && axis != "latent_space" && axis != "affine") {
        std::cerr << "error: --axis must be neural_ode|latent_space|affine\n";
        return 1;
    }
    json cfg = json::object();
    if (!config.empty()) cfg = json::parse(read_file(config));

    std::string comparison = "arm,split,psnr,ssim,l1,trajectory_error_t0.9\n";
    for (const bool enabled : {true, false}) {
        json arm_cfg = cfg;
        arm_cfg["ablation"][axis] = enabled;
        const std::string arm_dir = (fs::path(out) / (enabled ? "on" : "off")).string();
        const std::string arm_str = arm_cfg.dump();
        std::cerr << "=== ablation arm: " << axis << " = " << (enabled ? "on" : "off")
                  << " ===\n";
        char ckpt[4096] = {0};
        if (const ods_status s =
                ods_train(arm_str.c_str(), data.c_str(), arm_dir.c_str(), seed,
                          quiet ? nullptr : progress_printer, nullptr, ckpt, sizeof(ckpt));
            s != ODS_OK)
            return fail(s);
        DatasetGuard ds;
        if (const ods_status s = ods_dataset_open(data.c_str(), &ds.ds); s != ODS_OK)
            return fail(s);
        ModelGuard m;
        if (const ods_status s = ods_model_open(ckpt, &m.m); s != ODS_OK) return fail(s);
        ods_eval_summary sum{};
        if (const ods_status s = ods_evaluate(m.m, ds.ds, "all", nullptr, nullptr, &sum);
            s != ODS_OK)
            return fail(s);
        double traj = -1.0;
        (void)ods_trajectory_error(m.m, ds.ds, 0.9, &traj);
        char row[256];
        std::snprintf(row, sizeof(row), "%s,train,%.4f,%.5f,%.7f,\n",
                      enabled ? "on" : "off", sum.mean_psnr_train, sum.mean_ssim_train,
                      sum.mean_l1_train);
        comparison += row;
        std::snprintf(row, sizeof(row), "%s,extrapolation,%.4f,%.5f,%.7f,%.6f\n",
                      enabled ? "on" : "off", sum.mean_psnr_extrap, sum.mean_ssim_extrap,
                      sum.mean_l1_extrap, traj);
        comparison += row;
    }
    fs::create_directories(out);
    const std::string cmp_path = (fs::path(out) / "comparison.csv").string();
    std::ofstream os(cmp_path);
    os << comparison;
    std::cout << "comparison written to " << cmp_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"odesplat — dynamic Gaussian splatting with latent ODE extrapolation"};
    app.require_subcommand(1);

    // generate-scene
    std::string g_kind, g_config, g_out = "data/scene";
    uint64_t g_seed = 1;
    auto* gen = app.add_subcommand("generate-scene", "generate a synthetic multi-view dataset");
    gen->add_option("--kind", g_kind, "rotation|translation|falling_ball|compound");
    gen->add_option("--config", g_config, "scene spec JSON file");
    gen->add_option("--seed", g_seed, "RNG seed");
    gen->add_option("--out", g_out, "output directory");

    // train
    std::string t_config, t_data, t_out = "runs/run";
    int64_t t_seed = -1;
    bool t_quiet = false;
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    tr->add_option("--config", t_config, "training config JSON file")->required();
    tr->add_option("--data", t_data, "dataset directory")->required();
    tr->add_option("--out", t_out, "output directory");
    tr->add_option("--seed", t_seed, "seed override (default: config seed)");
    tr->add_flag("--quiet", t_quiet, "suppress progress output");

    // render
    std::string r_ckpt, r_data, r_png, r_f64;
    int r_frame = -1, r_camera = 0;
    double r_time = 0.0;
    auto* rd = app.add_subcommand("render", "render one frame or view from a checkpoint");
    rd->add_option("--checkpoint", r_ckpt, "checkpoint file")->required();
    rd->add_option("--data", r_data, "dataset directory")->required();
    rd->add_option("--frame", r_frame, "dataset frame index (its own camera and time)");
    rd->add_option("--camera", r_camera, "camera index (with --time)");
    rd->add_option("--time", r_time, "timestamp in [0,1] (with --camera)");
    rd->add_option("--out", r_png, "output PNG path");
    rd->add_option("--f64", r_f64, "output raw float dump path");

    // extrapolate
    std::string e_ckpt, e_data, e_out = "extrapolated";
    auto* ex = app.add_subcommand("extrapolate", "render every extrapolation-split frame");
    ex->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
    ex->add_option("--data", e_data, "dataset directory")->required();
    ex->add_option("--out", e_out, "output directory");

    // evaluate
    std::string v_ckpt, v_data, v_split = "all", v_csv, v_plot;
    auto* ev = app.add_subcommand("evaluate", "render a split and report PSNR/SSIM/L1");
    ev->add_option("--checkpoint", v_ckpt, "checkpoint file")->required();
    ev->add_option("--data", v_data, "dataset directory")->required();
    ev->add_option("--split", v_split, "train|extrapolation|all");
    ev->add_option("--out", v_csv, "metrics CSV path");
    ev->add_option("--plot", v_plot, "plot path prefix (<prefix>_psnr.png, _ssim.png)");

    // ablate
    std::string a_axis, a_config, a_data, a_out = "ablation";
    int64_t a_seed = -1;
    bool a_quiet = false;
    auto* ab = app.add_subcommand("ablate", "train on/off arms of one ablation axis");
    ab->add_option("--axis", a_axis, "neural_ode|latent_space|affine")->required();
    ab->add_option("--config", a_config, "training config JSON file");
    ab->add_option("--data", a_data, "dataset directory")->required();
    ab->add_option("--out", a_out, "output directory");
    ab->add_option("--seed", a_seed, "seed override");
    ab->add_flag("--quiet", a_quiet, "suppress progress output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return do_generate(g_kind, g_config, g_seed, g_out);
        if (tr->parsed()) return do_train(t_config, t_data, t_out, t_seed, t_quiet);
        if (rd->parsed())
            return do_render(r_ckpt, r_data, r_frame, r_camera, r_time, r_png, r_f64);
        if (ex->parsed()) return do_extrapolate(e_ckpt, e_data, e_out);
        if (ev->parsed()) return do_evaluate(v_ckpt, v_data, v_split, v_csv, v_plot);
        if (ab->parsed()) return do_ablate(a_axis, a_config, a_data, a_out, a_seed, a_quiet);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
