#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/pipeline.hpp"
#include "core/renderer.hpp"
#include "core/rng.hpp"

namespace ods::scene {

enum class MotionKind { Rotation, Translation, FallingBall, Compound };

const char* motion_kind_name(MotionKind k);
MotionKind motion_kind_from(const std::string& name);

// Synthetic multi-view scene with an analytic ground-truth trajectory,
// evaluable at any t in [0,1].
struct SceneSpec {
    MotionKind kind = MotionKind::Rotation;
    std::string template_shape = "box";  // box | two_blobs | ball
    double omega = 0.5 * 3.14159265358979323846;  // rad/s
    Eigen::Vector3d axis{0, 0, 1};
    Eigen::Vector3d pivot{0, 0, 0};
    Eigen::Vector3d velocity{0.5, 0, 0};
    double gravity = 2.0;
    double height = 0.6;  // falling-ball start height
    int n_gaussians = 200;
    int n_cameras = 12;
    int n_timesteps = 21;
    int resolution = 64;
    double fov_deg = 50.0;
    double camera_radius = 2.5;
    double split_threshold = 0.75;
    bool train_includes_threshold = false;

    std::string to_json() const;
    static SceneSpec from_json(const std::string& text);
    void validate() const;
};

// Analytic pose of a particle with canonical pose (mu0, rot0) at time t.
void advect(const SceneSpec& spec, const Eigen::Vector3d& mu0, const Eigen::Vector4d& rot0,
            double t, Eigen::Vector3d& mu, Eigen::Vector4d& rot);

struct Frame {
    int camera = 0;
    double t = 0.0;
    Tensor image;  // HxWx3
    std::string png_path, f64_path;
};

class Dataset {
public:
    std::vector<render::Camera> cameras;
    std::vector<Frame> frames;
    double split_threshold = 0.75;
    bool train_includes_threshold = false;
    std::optional<SceneSpec> spec;
    Tensor points_t0;  // Nx3 canonical ground-truth centers (may be empty)

    std::vector<int64_t> train_indices() const;
    std::vector<int64_t> extrapolation_indices() const;

    void write(const std::string& dir) const;
    static Dataset load(const std::string& dir);
};

// Strict partition of frame indices by timestamp. Throws ContractViolation
// when either side is empty or the threshold is not in (0,1).
std::pair<std::vector<int64_t>, std::vector<int64_t>> split_dataset(const Dataset& ds,
                                                                    double threshold,
                                                                    bool include_threshold);

// Samples Gaussians on the template shape, advects them analytically and
// renders every (camera, time) pair with the splat renderer. Writes the
// dataset when out_dir is nonempty.
Dataset generate_scene(const SceneSpec& spec, uint64_t seed, const std::string& out_dir);

struct EvalSummary {
    double mean_psnr_train = 0, mean_ssim_train = 0, mean_l1_train = 0;
    double mean_psnr_extrap = 0, mean_ssim_extrap = 0, mean_l1_extrap = 0;
    int64_t n_train = 0, n_extrap = 0;
    double mean_psnr() const;
    double mean_ssim() const;
    double mean_l1() const;
    int64_t frames() const { return n_train + n_extrap; }
};

// Renders every frame of the chosen split ("train" | "extrapolation" | "all"),
// writes the per-frame metrics CSV (frame_id, t, split, psnr, ssim, l1) and
// PNG line charts <plot_prefix>_psnr.png / _ssim.png of metric vs t.
// Empty csv/plot paths skip the corresponding output.
EvalSummary evaluate(Pipeline& model, const Dataset& ds, const std::string& split,
                     const std::string& csv_path, const std::string& plot_prefix);

// Mean distance between the model's decoded centers at t and the analytic
// advection of its own canonical centers; particles below the opacity floor
// are ignored. Requires a synthetic dataset (spec present).
double trajectory_error(Pipeline& model, const Dataset& ds, double t,
                        double opacity_floor = 0.1);

}  // namespace ods::scene
