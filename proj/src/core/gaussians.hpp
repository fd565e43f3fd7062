#pragma once

#include <Eigen/Dense>
#include <string>

#include "core/tensor.hpp"

namespace ods::gs {

// One standard 3D Gaussian in its public (constrained) representation:
// unit rotation quaternion (w, x, y, z), positive scale, opacity and color
// in [0, 1].
struct GaussianKernel {
    Eigen::Vector3d mu = Eigen::Vector3d::Zero();
    Eigen::Vector4d rot = Eigen::Vector4d(1, 0, 0, 0);
    Eigen::Vector3d scale = Eigen::Vector3d::Ones();
    double opacity = 1.0;
    Eigen::Vector3d color = Eigen::Vector3d::Ones();
};

double sigmoid(double x);
double logit(double y);

// Rotation matrix of a unit quaternion (w, x, y, z).
Eigen::Matrix3d quat_to_rot(const Eigen::Vector4d& unit_q);
Eigen::Vector4d rot_to_quat(const Eigen::Matrix3d& r);
// Hamilton product a*b.
Eigen::Vector4d quat_mul(const Eigen::Vector4d& a, const Eigen::Vector4d& b);

// Sigma = R * diag(scale)^2 * R^T; symmetric positive semi-definite.
Eigen::Matrix3d build_covariance(const Eigen::Vector4d& unit_q, const Eigen::Vector3d& scale);

// Maps an unconstrained kernel (raw quaternion, log-scale, pre-sigmoid
// opacity, unclamped color) to the public representation. Throws
// ContractViolation on a zero quaternion.
GaussianKernel normalize_kernel(const GaussianKernel& raw);

// Struct-of-arrays particle store in the raw (unconstrained) internal
// parameterization the optimizer works on. All tensors are rank-2 with one
// row per particle; latent_local caches the most recent local features.
class ParticleSet {
public:
    ParticleSet() = default;
    ParticleSet(int64_t count, int64_t latent_dim);

    int64_t size() const { return pos.rank() == 2 ? pos.dim(0) : 0; }
    int64_t latent_dim() const { return latent_local.rank() == 2 ? latent_local.dim(1) : 0; }

    // Public (normalized) view of particle i.
    GaussianKernel kernel(int64_t i) const;
    // Raw view of particle i (as stored).
    GaussianKernel raw_kernel(int64_t i) const;
    void set_raw_kernel(int64_t i, const GaussianKernel& raw);

    // Rebuild all rows through source_row: entry j >= 0 copies old row j,
    // -1 leaves the new row zero-initialized. Returns nothing; shapes follow
    // source_row.size().
    void remap_rows(const std::vector<int64_t>& source_row);

    // Documented binary layout; values are stored in the public
    // representation (normalized quaternion, positive scale, ...).
    void save_snapshot(const std::string& path) const;
    static ParticleSet load_snapshot(const std::string& path);

    Tensor pos;          // N x 3
    Tensor rot_raw;      // N x 4, unnormalized quaternion
    Tensor log_scale;    // N x 3
    Tensor opacity_raw;  // N x 1, pre-sigmoid
    Tensor color_raw;    // N x 3, clamped to [0,1] on read
    Tensor latent_local; // N x (L*F)
};

}  // namespace ods::gs
