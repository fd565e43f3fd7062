#pragma once

#include <Eigen/Dense>

#include "core/gaussians.hpp"
#include "core/graph.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"

namespace ods::dec {

// Per-particle transform. The all-zero Deformation leaves any kernel
// unchanged (identity law).
struct Deformation {
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    Eigen::Vector4d dR = Eigen::Vector4d::Zero();
    Eigen::Vector3d dS = Eigen::Vector3d::Zero();
    Eigen::Vector3d dC = Eigen::Vector3d::Zero();
};

struct DecoderConfig {
    int width = 256;
    int motion_depth = 4;       // hidden layers of the motion head
    int appearance_depth = 5;   // hidden layers of the appearance head
    bool appearance_head = true;
    bool affine = true;         // off: direct translation, no A mu term
    double cap_rotation = 0.5;  // rad
    double cap_scale = 0.2;
    double cap_shear = 0.2;
    double cap_translation = 0.5;  // world units

    // Zero: all final-layer entries zero (bit-exact identity start).
    // IdentitySafe: magnitude/delta columns zero, direction columns get a
    // small random init; outputs are still exactly zero because every
    // direction is multiplied by a zero magnitude, but magnitudes receive
    // nonzero gradients from step one.
    enum class Init { Zero, IdentitySafe };
    Init init = Init::IdentitySafe;

    void validate() const;
};

// Rotation about unit axis by angle (Rodrigues form).
Eigen::Matrix3d rotation_about(const Eigen::Vector3d& unit_axis, double angle);

// A = (Rot(u_r m_r) - I) + diag(m_s u_s) + Sym(m_h u_h); b = m_v u_v + m_n u_n.
// Directions must already be normalized and magnitudes capped.
void compose_affine(const Eigen::Vector3d& u_r, double m_r, const Eigen::Vector3d& u_s,
                    double m_s, const Eigen::Vector3d& u_h, double m_h,
                    const Eigen::Vector3d& u_v, double m_v, const Eigen::Vector3d& u_n,
                    double m_n, Eigen::Matrix3d& A, Eigen::Vector3d& b);

// mu' = mu + A mu + b; rot' = normalize(rot + dR); log-scale' += dS;
// color' = clamp(color + dC). Input and output are public-representation
// kernels. Throws NumericFailure when rot + dR is a near-zero quaternion.
gs::GaussianKernel apply_deformation(const gs::GaussianKernel& kernel, const Deformation& d);

// Graph handles of the decoded per-particle deformation arrays.
struct DeformationNodes {
    ad::NodeId A = ad::kNoNode;   // Nx9 row-major, absent when affine is off
    ad::NodeId b = ad::kNoNode;   // Nx3
    ad::NodeId dR = ad::kNoNode;  // Nx4
    ad::NodeId dS = ad::kNoNode;  // Nx3
    ad::NodeId dC = ad::kNoNode;  // Nx3, absent without the appearance head
};

// out = mu + A mu + b with per-row 3x3 A (Nx9) — fused op.
ad::NodeId apply_affine(ad::Graph& g, ad::NodeId mu, ad::NodeId A, ad::NodeId b);

// Independent multi-head decoders over z rows (motion; optional appearance).
class KernelDecoder {
public:
    KernelDecoder() = default;
    KernelDecoder(DecoderConfig cfg, int64_t input_dim);

    void init(Rng& rng);
    void register_params(ad::ParamStore& store);
    const DecoderConfig& config() const { return cfg_; }
    int64_t input_dim() const { return input_dim_; }

    // z: N x input_dim node
    DeformationNodes decode_all(ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId z) const;
    // single-row convenience used by tests and tooling
    Deformation decode_one(const Tensor& z_row) const;

private:
    struct Mlp {
        std::vector<Tensor> w, b;
    };
    static Mlp make_mlp(int64_t in, int64_t width, int depth, int64_t out);
    ad::NodeId run_mlp(const Mlp& m, ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId x) const;

    DecoderConfig cfg_;
    int64_t input_dim_ = 0;
    Mlp motion_, appearance_;
};

}  // namespace ods::dec
