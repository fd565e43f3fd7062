#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>

#include "core/gaussians.hpp"
#include "core/graph.hpp"

namespace ods::render {

// Pinhole camera. Pixel p = (x, y) addresses column x, row y; the projection
// of a camera-space point (tx, ty, tz) is (fx*tx/tz + cx, fy*ty/tz + cy).
struct Camera {
    Eigen::Matrix4d view = Eigen::Matrix4d::Identity();  // world -> camera
    double fx = 100.0, fy = 100.0;
    double cx = 32.0, cy = 32.0;
    int width = 64, height = 64;
    double near = 0.1;

    Eigen::Matrix3d rotation() const { return view.block<3, 3>(0, 0); }
    Eigen::Vector3d translation() const { return view.block<3, 1>(0, 3); }

    // Throws ContractViolation if the rotation block is not orthonormal
    // within 1e-6 or near <= 0.
    void validate() const;

    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, double fov_y_rad, int width, int height,
                          double near = 0.1);
};

struct RenderOptions {
    double dilation = 0.3;          // added to the image-space covariance diagonal
    double alpha_clamp = 0.99;
    double alpha_skip = 1.0 / 255.0;
    double early_stop_T = 1e-12;    // fast path only
    bool fast_path = true;
    int tile_size = 16;
};

struct Splat2D {
    Eigen::Vector2d center;
    Eigen::Matrix2d cov;  // dilated image-space covariance
    double depth = 0.0;
    double opacity = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    int32_t index = -1;
};

// Projection of one normalized kernel; nullopt when culled (depth <= near).
std::optional<Splat2D> project_gaussian(const gs::GaussianKernel& kernel, const Camera& cam,
                                        const RenderOptions& opt = {});

// opacity * exp(-0.5 d^T cov^-1 d), clamped to [0, alpha_clamp].
double evaluate_alpha(const Splat2D& splat, const Eigen::Vector2d& p,
                      const RenderOptions& opt = {});

// Front-to-back alpha compositing over a depth-ascending list against a black
// background. Splats with alpha below alpha_skip contribute nothing.
Eigen::Vector3d composite_pixel(std::span<const Splat2D> sorted, const Eigen::Vector2d& p,
                                const RenderOptions& opt = {});

// Normalized per-particle arrays: mu Nx3, rot Nx4 (unit rows), scale Nx3
// (positive), opacity Nx1 in [0,1], color Nx3 in [0,1].
struct SplatArrays {
    const Tensor& mu;
    const Tensor& rot;
    const Tensor& scale;
    const Tensor& opacity;
    const Tensor& color;
};

// Brute-force per-pixel compositing over all depth-sorted splats.
Tensor render_reference(const SplatArrays& in, const Camera& cam, const RenderOptions& opt = {});
// Tile-binned compositing with conservative extents and early termination;
// matches render_reference within 1e-6 per channel.
Tensor render_fast(const SplatArrays& in, const Camera& cam, const RenderOptions& opt = {});

// Per-view densification statistics filled in by the fused op's backward.
struct RenderStats {
    Tensor center_grad_norm;  // N x 1, |dL/d center| per splat
    Tensor visible;           // N x 1, 1.0 when projected (not culled)
};

// Graph-connected render; returns the image node (H x W x 3). Gradients flow
// to all five inputs. `stats` (optional) must outlive the backward pass.
ad::NodeId render_image(ad::Graph& g, ad::NodeId mu, ad::NodeId rot, ad::NodeId scale,
                        ad::NodeId opacity, ad::NodeId color, const Camera& cam,
                        const RenderOptions& opt = {}, RenderStats* stats = nullptr);

}  // namespace ods::render
