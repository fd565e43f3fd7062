#include "core/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace ods::render {

namespace {

// Projected splat plus everything the adjoint needs.
struct Projected {
    int32_t index = -1;
    double depth = 0.0;
    Eigen::Vector2d center;
    double inv_a = 0, inv_b = 0, inv_c = 0;  // cov^-1 = [a b; b c]
    double cov_a = 0, cov_b = 0, cov_c = 0;  // dilated cov
    double qmax = 0;                         // alpha >= alpha_skip iff q <= qmax
    double opacity = 0;
    Eigen::Vector3d color;
    // backward context
    Eigen::Vector3d tcam;
    Eigen::Matrix<double, 2, 3> J, U;
    Eigen::Matrix3d Sigma, M, R;
    Eigen::Vector3d svec;
    Eigen::Vector4d quat;
    double wx = 0, wy = 0;  // conservative pixel half-extents
};

struct ProjectParams {
    Eigen::Vector3d mu;
    Eigen::Vector4d q;
    Eigen::Vector3d scale;
    double opacity;
    Eigen::Vector3d color;
};

std::optional<Projected> project_core(const ProjectParams& in, int32_t index, const Camera& cam,
                                      const RenderOptions& opt) {
    const Eigen::Matrix3d W = cam.rotation();
    const Eigen::Vector3d t = W * in.mu + cam.translation();
    if (t.z() <= cam.near) return std::nullopt;

    Projected p;
    p.index = index;
    p.depth = t.z();
    p.tcam = t;
    p.opacity = in.opacity;
    p.color = in.color;
    p.quat = in.q;
    p.svec = in.scale;

    const double iz = 1.0 / t.z();
    p.center = Eigen::Vector2d(cam.fx * t.x() * iz + cam.cx, cam.fy * t.y() * iz + cam.cy);

    p.J.setZero();
    p.J(0, 0) = cam.fx * iz;
    p.J(0, 2) = -cam.fx * t.x() * iz * iz;
    p.J(1, 1) = cam.fy * iz;
    p.J(1, 2) = -cam.fy * t.y() * iz * iz;

    p.R = gs::quat_to_rot(in.q);
    p.M = p.R * in.scale.asDiagonal();
    p.Sigma = p.M * p.M.transpose();
    p.U = p.J * W;
    const Eigen::Matrix2d v2 = p.U * p.Sigma * p.U.transpose();
    p.cov_a = v2(0, 0) + opt.dilation;
    p.cov_b = 0.5 * (v2(0, 1) + v2(1, 0));
    p.cov_c = v2(1, 1) + opt.dilation;

    const double det = p.cov_a * p.cov_c - p.cov_b * p.cov_b;
    const double idet = 1.0 / det;
    p.inv_a = p.cov_c * idet;
    p.inv_b = -p.cov_b * idet;
    p.inv_c = p.cov_a * idet;

    if (in.opacity > opt.alpha_skip) {
        p.qmax = 2.0 * std::log(in.opacity / opt.alpha_skip);
    } else {
        p.qmax = 0.0;
    }
    p.wx = std::sqrt(std::max(0.0, p.qmax * p.cov_a)) + 0.5;
    p.wy = std::sqrt(std::max(0.0, p.qmax * p.cov_c)) + 0.5;
    return p;
}

double alpha_at(const Projected& s, double px, double py, const RenderOptions& opt) {
    const double dx = px - s.center.x();
    const double dy = py - s.center.y();
    const double q = s.inv_a * dx * dx + 2.0 * s.inv_b * dx * dy + s.inv_c * dy * dy;
    return std::min(s.opacity * std::exp(-0.5 * q), opt.alpha_clamp);
}

void validate_arrays(const SplatArrays& in) {
    const int64_t n = in.mu.rank() == 2 ? in.mu.dim(0) : -1;
    ODS_REQUIRE(n >= 0 && in.mu.dim(1) == 3, "render: mu must be Nx3");
    ODS_REQUIRE(in.rot.rank() == 2 && in.rot.dim(0) == n && in.rot.dim(1) == 4,
                "render: rot must be Nx4");
    ODS_REQUIRE(in.scale.rank() == 2 && in.scale.dim(0) == n && in.scale.dim(1) == 3,
                "render: scale must be Nx3");
    ODS_REQUIRE(in.opacity.rank() == 2 && in.opacity.dim(0) == n && in.opacity.dim(1) == 1,
                "render: opacity must be Nx1");
    ODS_REQUIRE(in.color.rank() == 2 && in.color.dim(0) == n && in.color.dim(1) == 3,
                "render: color must be Nx3");
}

std::vector<Projected> project_all(const SplatArrays& in, const Camera& cam,
                                   const RenderOptions& opt) {
    validate_arrays(in);
    const int64_t n = in.mu.dim(0);
    std::vector<Projected> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        ProjectParams pp;
        pp.mu = Eigen::Vector3d(in.mu.at(i, 0), in.mu.at(i, 1), in.mu.at(i, 2));
        pp.q = Eigen::Vector4d(in.rot.at(i, 0), in.rot.at(i, 1), in.rot.at(i, 2), in.rot.at(i, 3));
        pp.scale = Eigen::Vector3d(in.scale.at(i, 0), in.scale.at(i, 1), in.scale.at(i, 2));
        pp.opacity = in.opacity.at(i, 0);
        pp.color = Eigen::Vector3d(in.color.at(i, 0), in.color.at(i, 1), in.color.at(i, 2));
        auto p = project_core(pp, static_cast<int32_t>(i), cam, opt);
        if (p) out.push_back(*p);
    }
    std::sort(out.begin(), out.end(), [](const Projected& a, const Projected& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    return out;
}

// Tile binning plus the per-pixel state needed to replay compositing in the
// adjoint.
struct FastContext {
    int tile = 16;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int32_t>> lists;  // per tile, positions into the sorted splat vector
    std::vector<double> t_final;              // H*W
    std::vector<int32_t> n_examined;          // H*W, entries of the tile list examined
};

void bin_splats(const std::vector<Projected>& ps, const Camera& cam, const RenderOptions& opt,
                FastContext& ctx) {
    ODS_REQUIRE(opt.tile_size > 0, "render: tile_size must be positive");
    ctx.tile = opt.tile_size;
    ctx.tiles_x = (cam.width + ctx.tile - 1) / ctx.tile;
    ctx.tiles_y = (cam.height + ctx.tile - 1) / ctx.tile;
    ctx.lists.assign(static_cast<size_t>(ctx.tiles_x * ctx.tiles_y), {});
    for (size_t k = 0; k < ps.size(); ++k) {
        const Projected& s = ps[k];
        if (s.opacity < opt.alpha_skip) continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(s.center.x() - s.wx)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.center.x() + s.wx)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(s.center.y() - s.wy)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.center.y() + s.wy)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / ctx.tile; ty <= y1 / ctx.tile; ++ty)
            for (int tx = x0 / ctx.tile; tx <= x1 / ctx.tile; ++tx)
                ctx.lists[static_cast<size_t>(ty * ctx.tiles_x + tx)].push_back(
                    static_cast<int32_t>(k));
    }
}

Tensor composite_fast(const std::vector<Projected>& ps, const Camera& cam,
                      const RenderOptions& opt, FastContext& ctx) {
    Tensor img({cam.height, cam.width, 3});
    bin_splats(ps, cam, opt, ctx);
    ctx.t_final.assign(static_cast<size_t>(cam.width * cam.height), 1.0);
    ctx.n_examined.assign(static_cast<size_t>(cam.width * cam.height), 0);
    for (int ty = 0; ty < ctx.tiles_y; ++ty) {
        for (int tx = 0; tx < ctx.tiles_x; ++tx) {
            const auto& list = ctx.lists[static_cast<size_t>(ty * ctx.tiles_x + tx)];
            const int y_end = std::min(cam.height, (ty + 1) * ctx.tile);
            const int x_end = std::min(cam.width, (tx + 1) * ctx.tile);
            for (int y = ty * ctx.tile; y < y_end; ++y) {
                for (int x = tx * ctx.tile; x < x_end; ++x) {
                    double T = 1.0;
                    Eigen::Vector3d c = Eigen::Vector3d::Zero();
                    size_t k = 0;
                    for (; k < list.size(); ++k) {
                        const Projected& s = ps[static_cast<size_t>(list[k])];
                        const double a = alpha_at(s, x, y, opt);
                        if (a < opt.alpha_skip) continue;
                        c += T * a * s.color;
                        T *= 1.0 - a;
                        if (T < opt.early_stop_T) {
                            ++k;
                            break;
                        }
                    }
                    const size_t pix = static_cast<size_t>(y * cam.width + x);
                    ctx.t_final[pix] = T;
                    ctx.n_examined[pix] = static_cast<int32_t>(k);
                    img.at3(y, x, 0) = c.x();
                    img.at3(y, x, 1) = c.y();
                    img.at3(y, x, 2) = c.z();
                }
            }
        }
    }
    return img;
}

std::array<Eigen::Matrix3d, 4> rot_quat_partials(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    std::array<Eigen::Matrix3d, 4> d;
    d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    return d;
}

// Fused render node. Holds the entire forward context; the adjoint replays
// compositing per pixel back-to-front.
class RenderOp final : public ad::CustomOp {
public:
    RenderOp(Camera cam, RenderOptions opt, std::vector<Projected> ps, FastContext ctx,
             int64_t n_particles, RenderStats* stats)
        : cam_(std::move(cam)),
          opt_(opt),
          ps_(std::move(ps)),
          ctx_(std::move(ctx)),
          n_(n_particles),
          stats_(stats) {}

    const char* name() const override { return "render_image"; }

    void backward(const ad::Graph& g, const ad::Node& n, const Tensor& gout,
                  const std::function<Tensor&(size_t)>& grad_of) const override {
        (void)g;
        (void)n;
        const size_t m = ps_.size();
        std::vector<double> acc_sigma(m, 0.0), acc_ia(m, 0.0), acc_ib(m, 0.0), acc_ic(m, 0.0);
        std::vector<Eigen::Vector2d> acc_center(m, Eigen::Vector2d::Zero());
        std::vector<Eigen::Vector3d> acc_color(m, Eigen::Vector3d::Zero());

        // pixel sweep: accumulate per-splat adjoints
        for (int ty = 0; ty < ctx_.tiles_y; ++ty) {
            for (int tx = 0; tx < ctx_.tiles_x; ++tx) {
                const auto& list = ctx_.lists[static_cast<size_t>(ty * ctx_.tiles_x + tx)];
                if (list.empty()) continue;
                const int y_end = std::min(cam_.height, (ty + 1) * ctx_.tile);
                const int x_end = std::min(cam_.width, (tx + 1) * ctx_.tile);
                for (int y = ty * ctx_.tile; y < y_end; ++y) {
                    for (int x = tx * ctx_.tile; x < x_end; ++x) {
                        const size_t pix = static_cast<size_t>(y * cam_.width + x);
                        const int32_t n_ex = ctx_.n_examined[pix];
                        if (n_ex == 0) continue;
                        const Eigen::Vector3d gC(gout.at3(y, x, 0), gout.at3(y, x, 1),
                                                 gout.at3(y, x, 2));
                        double T_cur = ctx_.t_final[pix];
                        Eigen::Vector3d suffix = Eigen::Vector3d::Zero();
                        for (int32_t k = n_ex - 1; k >= 0; --k) {
                            const size_t sp = static_cast<size_t>(list[static_cast<size_t>(k)]);
                            const Projected& s = ps_[sp];
                            const double dx = x - s.center.x();
                            const double dy = y - s.center.y();
                            const double q = s.inv_a * dx * dx + 2.0 * s.inv_b * dx * dy +
                                             s.inv_c * dy * dy;
                            const double G = std::exp(-0.5 * q);
                            const double a_raw = s.opacity * G;
                            const double a = std::min(a_raw, opt_.alpha_clamp);
                            if (a < opt_.alpha_skip) continue;
                            const double T_before = T_cur / (1.0 - a);
                            acc_color[sp] += gC * (T_before * a);
                            const double da =
                                gC.dot(Eigen::Vector3d(T_before * s.color) -
                                       suffix / (1.0 - a));
                            if (a_raw < opt_.alpha_clamp) {  // clamp blocks the gradient
                                acc_sigma[sp] += da * G;
                                const double dG = da * s.opacity;
                                const double dq = -0.5 * G * dG;
                                const double qx = 2.0 * (s.inv_a * dx + s.inv_b * dy);
                                const double qy = 2.0 * (s.inv_b * dx + s.inv_c * dy);
                                acc_center[sp] += Eigen::Vector2d(-dq * qx, -dq * qy);
                                acc_ia[sp] += dq * dx * dx;
                                acc_ib[sp] += dq * 2.0 * dx * dy;
                                acc_ic[sp] += dq * dy * dy;
                            }
                            suffix += T_before * a * s.color;
                            T_cur = T_before;
                        }
                    }
                }
            }
        }

        Tensor& gmu = grad_of(0);
        Tensor& grot = grad_of(1);
        Tensor& gscale = grad_of(2);
        Tensor& gopacity = grad_of(3);
        Tensor& gcolor = grad_of(4);
        const Eigen::Matrix3d W = cam_.rotation();

        for (size_t sp = 0; sp < m; ++sp) {
            const Projected& s = ps_[sp];
            const int64_t i = s.index;
            if (stats_) stats_->visible.at(i, 0) = 1.0;

            // color / opacity
            for (int c = 0; c < 3; ++c) gcolor.at(i, c) += acc_color[sp][c];
            gopacity.at(i, 0) += acc_sigma[sp];

            // image-space covariance chain
            Eigen::Matrix2d ginv;
            ginv << acc_ia[sp], 0.5 * acc_ib[sp], 0.5 * acc_ib[sp], acc_ic[sp];
            Eigen::Matrix2d inv;
            inv << s.inv_a, s.inv_b, s.inv_b, s.inv_c;
            const Eigen::Matrix2d gcov = -inv * ginv * inv;
            const Eigen::Matrix<double, 2, 3> gU = 2.0 * gcov * s.U * s.Sigma;
            const Eigen::Matrix3d gSigma = s.U.transpose() * gcov * s.U;
            const Eigen::Matrix<double, 2, 3> gJ = gU * W.transpose();

            // camera-space point
            const double tx = s.tcam.x(), tyv = s.tcam.y(), tz = s.tcam.z();
            const double iz = 1.0 / tz, iz2 = iz * iz, iz3 = iz2 * iz;
            Eigen::Vector3d dt = Eigen::Vector3d::Zero();
            dt.x() += acc_center[sp].x() * cam_.fx * iz;
            dt.z() += acc_center[sp].x() * (-cam_.fx * tx * iz2);
            dt.y() += acc_center[sp].y() * cam_.fy * iz;
            dt.z() += acc_center[sp].y() * (-cam_.fy * tyv * iz2);
            dt.x() += gJ(0, 2) * (-cam_.fx * iz2);
            dt.y() += gJ(1, 2) * (-cam_.fy * iz2);
            dt.z() += gJ(0, 0) * (-cam_.fx * iz2) + gJ(1, 1) * (-cam_.fy * iz2) +
                      gJ(0, 2) * (2.0 * cam_.fx * tx * iz3) +
                      gJ(1, 2) * (2.0 * cam_.fy * tyv * iz3);
            const Eigen::Vector3d gmu_i = W.transpose() * dt;
            for (int c = 0; c < 3; ++c) gmu.at(i, c) += gmu_i[c];

            // Sigma = M M^T, M = R diag(s)
            const Eigen::Matrix3d gM = 2.0 * gSigma * s.M;
            Eigen::Matrix3d gR;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) gR(r, c) = gM(r, c) * s.svec[c];
            for (int c = 0; c < 3; ++c) {
                double gs = 0.0;
                for (int r = 0; r < 3; ++r) gs += gM(r, c) * s.R(r, c);
                gscale.at(i, c) += gs;
            }
            const auto dRdq = rot_quat_partials(s.quat);
            for (int k = 0; k < 4; ++k) {
                double acc = 0.0;
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) acc += gR(r, c) * dRdq[static_cast<size_t>(k)](r, c);
                grot.at(i, k) += acc;
            }

            if (stats_) stats_->center_grad_norm.at(i, 0) += acc_center[sp].norm();
        }
        (void)n_;
    }

private:
    Camera cam_;
    RenderOptions opt_;
    std::vector<Projected> ps_;
    FastContext ctx_;
    int64_t n_;
    RenderStats* stats_;
};

}  // namespace

void Camera::validate() const {
    const Eigen::Matrix3d r = rotation();
    const Eigen::Matrix3d err = r * r.transpose() - Eigen::Matrix3d::Identity();
    ODS_REQUIRE(err.cwiseAbs().maxCoeff() < 1e-6, "camera: rotation block must be orthonormal");
    ODS_REQUIRE(near > 0.0, "camera: near must be positive");
    ODS_REQUIRE(width > 0 && height > 0, "camera: resolution must be positive");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double fov_y_rad, int width, int height,
                       double near) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    // camera frame: +z forward (into the scene), +x right, +y down
    const Eigen::Vector3d fwd = (target - eye).normalized();
    Eigen::Vector3d right = fwd.cross(up).normalized();
    if (!right.allFinite() || right.norm() < 0.5) {
        // up parallel to view direction; pick another axis
        right = fwd.cross(Eigen::Vector3d::UnitX()).normalized();
    }
    const Eigen::Vector3d down = fwd.cross(right).normalized();
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = fwd;
    cam.view.setIdentity();
    cam.view.block<3, 3>(0, 0) = r;
    cam.view.block<3, 1>(0, 3) = -r * eye;
    cam.fy = 0.5 * height / std::tan(0.5 * fov_y_rad);
    cam.fx = cam.fy;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.validate();
    return cam;
}

std::optional<Splat2D> project_gaussian(const gs::GaussianKernel& kernel, const Camera& cam,
                                        const RenderOptions& opt) {
    ProjectParams pp{kernel.mu, kernel.rot, kernel.scale, kernel.opacity, kernel.color};
    auto p = project_core(pp, 0, cam, opt);
    if (!p) return std::nullopt;
    Splat2D s;
    s.center = p->center;
    s.cov << p->cov_a, p->cov_b, p->cov_b, p->cov_c;
    s.depth = p->depth;
    s.opacity = p->opacity;
    s.color = p->color;
    return s;
}

double evaluate_alpha(const Splat2D& splat, const Eigen::Vector2d& p, const RenderOptions& opt) {
    const double det = splat.cov(0, 0) * splat.cov(1, 1) - splat.cov(0, 1) * splat.cov(1, 0);
    const double idet = 1.0 / det;
    const double ia = splat.cov(1, 1) * idet;
    const double ib = -splat.cov(0, 1) * idet;
    const double ic = splat.cov(0, 0) * idet;
    const double dx = p.x() - splat.center.x();
    const double dy = p.y() - splat.center.y();
    const double q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy;
    const double a = splat.opacity * std::exp(-0.5 * q);
    return std::clamp(a, 0.0, opt.alpha_clamp);
}

Eigen::Vector3d composite_pixel(std::span<const Splat2D> sorted, const Eigen::Vector2d& p,
                                const RenderOptions& opt) {
#ifndef NDEBUG
    for (size_t i = 1; i < sorted.size(); ++i) {
        ODS_REQUIRE(sorted[i - 1].depth <= sorted[i].depth,
                    "composite_pixel: list must be sorted by depth ascending");
    }
#endif
    double T = 1.0;
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const Splat2D& s : sorted) {
        const double a = evaluate_alpha(s, p, opt);
        if (a < opt.alpha_skip) continue;
        c += T * a * s.color;
        T *= 1.0 - a;
    }
    // black background: T * 0 contributes nothing
    return c;
}

Tensor render_reference(const SplatArrays& in, const Camera& cam, const RenderOptions& opt) {
    cam.validate();
    const auto ps = project_all(in, cam, opt);
    Tensor img({cam.height, cam.width, 3});
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double T = 1.0;
            Eigen::Vector3d c = Eigen::Vector3d::Zero();
            for (const Projected& s : ps) {
                const double a = alpha_at(s, x, y, opt);
                if (a < opt.alpha_skip) continue;
                c += T * a * s.color;
                T *= 1.0 - a;
            }
            img.at3(y, x, 0) = c.x();
            img.at3(y, x, 1) = c.y();
            img.at3(y, x, 2) = c.z();
        }
    }
    return img;
}

Tensor render_fast(const SplatArrays& in, const Camera& cam, const RenderOptions& opt) {
    cam.validate();
    const auto ps = project_all(in, cam, opt);
    FastContext ctx;
    return composite_fast(ps, cam, opt, ctx);
}

ad::NodeId render_image(ad::Graph& g, ad::NodeId mu, ad::NodeId rot, ad::NodeId scale,
                        ad::NodeId opacity, ad::NodeId color, const Camera& cam,
                        const RenderOptions& opt, RenderStats* stats) {
    cam.validate();
    SplatArrays in{g.value(mu), g.value(rot), g.value(scale), g.value(opacity), g.value(color)};
    const int64_t n = in.mu.rank() == 2 ? in.mu.dim(0) : 0;
    if (stats) {
        stats->center_grad_norm = Tensor({n, 1});
        stats->visible = Tensor({n, 1});
    }
    auto ps = project_all(in, cam, opt);
    FastContext ctx;
    Tensor img = composite_fast(ps, cam, opt, ctx);
    auto op = std::make_shared<RenderOp>(cam, opt, std::move(ps), std::move(ctx), n, stats);
    return g.custom(std::move(op), {mu, rot, scale, opacity, color}, std::move(img));
}

}  // namespace ods::render
