#include "core/decoder.hpp"

#include <cmath>

namespace ods::dec {

namespace {

// motion head output layout (affine mode):
//   [0,3) u_r | 3 m_r | [4,7) u_s | 7 m_s | [8,11) u_h | 11 m_h
//   [12,15) u_v | 15 m_v | [16,19) u_n | 19 m_n | [20,24) dR | [24,27) dS
constexpr int64_t kMotionOutAffine = 27;
// direct mode: [0,3) b | [3,7) dR | [7,10) dS
constexpr int64_t kMotionOutDirect = 10;

bool is_direction_column_affine(int64_t c) {
    return (c >= 0 && c < 3) || (c >= 4 && c < 7) || (c >= 8 && c < 11) || (c >= 12 && c < 15) ||
           (c >= 16 && c < 19);
}

Eigen::Matrix3d cross_matrix(const Eigen::Vector3d& u) {
    Eigen::Matrix3d k;
    k << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
    return k;
}

Eigen::Matrix3d sym_offdiag(const Eigen::Vector3d& v) {
    Eigen::Matrix3d s;
    s << 0, v[0], v[1], v[0], 0, v[2], v[1], v[2], 0;
    return s;
}

}  // namespace

void DecoderConfig::validate() const {
    ODS_REQUIRE(width >= 1 && motion_depth >= 1 && appearance_depth >= 1,
                "decoder: widths/depths must be >= 1");
    ODS_REQUIRE(cap_rotation > 0 && cap_scale > 0 && cap_shear > 0 && cap_translation > 0,
                "decoder: caps must be positive");
}

Eigen::Matrix3d rotation_about(const Eigen::Vector3d& u, double angle) {
    const Eigen::Matrix3d k = cross_matrix(u);
    return std::cos(angle) * Eigen::Matrix3d::Identity() + std::sin(angle) * k +
           (1.0 - std::cos(angle)) * (u * u.transpose());
}

void compose_affine(const Eigen::Vector3d& u_r, double m_r, const Eigen::Vector3d& u_s,
                    double m_s, const Eigen::Vector3d& u_h, double m_h,
                    const Eigen::Vector3d& u_v, double m_v, const Eigen::Vector3d& u_n,
                    double m_n, Eigen::Matrix3d& A, Eigen::Vector3d& b) {
    A = (rotation_about(u_r, m_r) - Eigen::Matrix3d::Identity()) +
        Eigen::Matrix3d((m_s * u_s).asDiagonal()) + sym_offdiag(m_h * u_h);
    b = m_v * u_v + m_n * u_n;
}

gs::GaussianKernel apply_deformation(const gs::GaussianKernel& kernel, const Deformation& d) {
    gs::GaussianKernel out = kernel;
    out.mu = kernel.mu + d.A * kernel.mu + d.b;
    const Eigen::Vector4d q = kernel.rot + d.dR;
    const double n = q.norm();
    if (n < 1e-12) throw NumericFailure("apply_deformation: rot + dR is a near-zero quaternion");
    out.rot = q / n;
    out.scale = (kernel.scale.array().log() + d.dS.array()).exp();
    out.color = (kernel.color + d.dC).array().min(1.0).max(0.0);
    return out;
}

namespace {

// Batched A = (Rot(u_r m_r) - I) + diag(m_s u_s) + Sym(m_h u_h), one row of 9
// per particle. Inputs: u_r Nx3, m_r Nx1, u_s Nx3, m_s Nx1, u_h Nx3, m_h Nx1.
class AffineComposeOp final : public ad::CustomOp {
public:
    const char* name() const override { return "compose_affine"; }

    static Tensor forward(const Tensor& u_r, const Tensor& m_r, const Tensor& u_s,
                          const Tensor& m_s, const Tensor& u_h, const Tensor& m_h) {
        const int64_t n = u_r.dim(0);
        Tensor out({n, 9});
        for (int64_t i = 0; i < n; ++i) {
            Eigen::Matrix3d a;
            Eigen::Vector3d dummy_b;
            compose_affine(Eigen::Vector3d(u_r.at(i, 0), u_r.at(i, 1), u_r.at(i, 2)), m_r.at(i, 0),
                           Eigen::Vector3d(u_s.at(i, 0), u_s.at(i, 1), u_s.at(i, 2)), m_s.at(i, 0),
                           Eigen::Vector3d(u_h.at(i, 0), u_h.at(i, 1), u_h.at(i, 2)), m_h.at(i, 0),
                           Eigen::Vector3d::Zero(), 0.0, Eigen::Vector3d::Zero(), 0.0, a, dummy_b);
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) out.at(i, r * 3 + c) = a(r, c);
        }
        return out;
    }

    void backward(const ad::Graph& g, const ad::Node& n, const Tensor& gout,
                  const std::function<Tensor&(size_t)>& grad_of) const override {
        const Tensor& u_r = g.value(n.parents[0]);
        const Tensor& m_r = g.value(n.parents[1]);
        const Tensor& u_s = g.value(n.parents[2]);
        const Tensor& m_s = g.value(n.parents[3]);
        const Tensor& u_h = g.value(n.parents[4]);
        const Tensor& m_h = g.value(n.parents[5]);
        Tensor& g_ur = grad_of(0);
        Tensor& g_mr = grad_of(1);
        Tensor& g_us = grad_of(2);
        Tensor& g_ms = grad_of(3);
        Tensor& g_uh = grad_of(4);
        Tensor& g_mh = grad_of(5);

        const int64_t count = u_r.dim(0);
        for (int64_t i = 0; i < count; ++i) {
            Eigen::Matrix3d ga;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) ga(r, c) = gout.at(i, r * 3 + c);

            // rotation block
            const Eigen::Vector3d u(u_r.at(i, 0), u_r.at(i, 1), u_r.at(i, 2));
            const double th = m_r.at(i, 0);
            const double st = std::sin(th), ct = std::cos(th);
            const Eigen::Matrix3d k = cross_matrix(u);
            const Eigen::Matrix3d dR_dth =
                -st * Eigen::Matrix3d::Identity() + ct * k + st * (u * u.transpose());
            g_mr.at(i, 0) += (ga.array() * dR_dth.array()).sum();
            for (int c = 0; c < 3; ++c) {
                Eigen::Vector3d e = Eigen::Vector3d::Zero();
                e[c] = 1.0;
                const Eigen::Matrix3d dK = cross_matrix(e);
                const Eigen::Matrix3d dR_du =
                    st * dK + (1.0 - ct) * (e * u.transpose() + u * e.transpose());
                g_ur.at(i, c) += (ga.array() * dR_du.array()).sum();
            }

            // scale block: diag(m_s u_s)
            const double ms = m_s.at(i, 0);
            double acc_ms = 0.0;
            for (int c = 0; c < 3; ++c) {
                g_us.at(i, c) += ga(c, c) * ms;
                acc_ms += ga(c, c) * u_s.at(i, c);
            }
            g_ms.at(i, 0) += acc_ms;

            // shear block: Sym(m_h u_h)
            const double mh = m_h.at(i, 0);
            const double gv0 = ga(0, 1) + ga(1, 0);
            const double gv1 = ga(0, 2) + ga(2, 0);
            const double gv2 = ga(1, 2) + ga(2, 1);
            g_uh.at(i, 0) += gv0 * mh;
            g_uh.at(i, 1) += gv1 * mh;
            g_uh.at(i, 2) += gv2 * mh;
            g_mh.at(i, 0) += gv0 * u_h.at(i, 0) + gv1 * u_h.at(i, 1) + gv2 * u_h.at(i, 2);
        }
    }
};

// out = mu + A mu + b with row-major per-particle A
class ApplyAffineOp final : public ad::CustomOp {
public:
    const char* name() const override { return "apply_affine"; }

    static Tensor forward(const Tensor& mu, const Tensor& a, const Tensor& b) {
        const int64_t n = mu.dim(0);
        Tensor out({n, 3});
        for (int64_t i = 0; i < n; ++i) {
            for (int r = 0; r < 3; ++r) {
                double v = mu.at(i, r) + b.at(i, r);
                for (int c = 0; c < 3; ++c) v += a.at(i, r * 3 + c) * mu.at(i, c);
                out.at(i, r) = v;
            }
        }
        return out;
    }

    void backward(const ad::Graph& g, const ad::Node& n, const Tensor& gout,
                  const std::function<Tensor&(size_t)>& grad_of) const override {
        const Tensor& mu = g.value(n.parents[0]);
        const Tensor& a = g.value(n.parents[1]);
        Tensor& gmu = grad_of(0);
        Tensor& ga = grad_of(1);
        Tensor& gb = grad_of(2);
        const int64_t count = mu.dim(0);
        for (int64_t i = 0; i < count; ++i) {
            for (int r = 0; r < 3; ++r) {
                const double go = gout.at(i, r);
                gmu.at(i, r) += go;
                gb.at(i, r) += go;
                for (int c = 0; c < 3; ++c) {
                    gmu.at(i, c) += a.at(i, r * 3 + c) * go;
                    ga.at(i, r * 3 + c) += go * mu.at(i, c);
                }
            }
        }
    }
};

}  // namespace

ad::NodeId apply_affine(ad::Graph& g, ad::NodeId mu, ad::NodeId A, ad::NodeId b) {
    Tensor value = ApplyAffineOp::forward(g.value(mu), g.value(A), g.value(b));
    return g.custom(std::make_shared<ApplyAffineOp>(), {mu, A, b}, std::move(value));
}

KernelDecoder::Mlp KernelDecoder::make_mlp(int64_t in, int64_t width, int depth, int64_t out) {
    Mlp m;
    int64_t prev = in;
    for (int i = 0; i < depth; ++i) {
        m.w.push_back(Tensor({prev, width}));
        m.b.push_back(Tensor({width}));
        prev = width;
    }
    m.w.push_back(Tensor({prev, out}));
    m.b.push_back(Tensor({out}));
    return m;
}

KernelDecoder::KernelDecoder(DecoderConfig cfg, int64_t input_dim)
    : cfg_(cfg), input_dim_(input_dim) {
    cfg_.validate();
    ODS_REQUIRE(input_dim >= 1, "decoder: input dim must be >= 1");
    const int64_t motion_out = cfg_.affine ? kMotionOutAffine : kMotionOutDirect;
    motion_ = make_mlp(input_dim, cfg_.width, cfg_.motion_depth, motion_out);
    if (cfg_.appearance_head)
        appearance_ = make_mlp(input_dim, cfg_.width, cfg_.appearance_depth, 3);
}

void KernelDecoder::init(Rng& rng) {
    auto init_mlp = [&](Mlp& m, bool motion) {
        for (size_t i = 0; i + 1 < m.w.size(); ++i) {
            Tensor& w = m.w[i];
            const double s = std::sqrt(6.0 / static_cast<double>(w.dim(0) + w.dim(1)));
            for (int64_t j = 0; j < w.size(); ++j) w[j] = rng.uniform(-s, s);
            m.b[i].fill(0.0);
        }
        // final layer: identity start
        Tensor& wf = m.w.back();
        wf.fill(0.0);
        m.b.back().fill(0.0);
        if (motion && cfg_.affine && cfg_.init == DecoderConfig::Init::IdentitySafe) {
            // direction columns get a small random init; outputs stay exactly
            // zero through the zero magnitudes
            for (int64_t r = 0; r < wf.dim(0); ++r)
                for (int64_t c = 0; c < wf.dim(1); ++c)
                    if (is_direction_column_affine(c)) wf.at(r, c) = rng.normal(0.0, 1e-2);
        }
    };
    init_mlp(motion_, true);
    if (cfg_.appearance_head) init_mlp(appearance_, false);
}

void KernelDecoder::register_params(ad::ParamStore& store) {
    for (size_t i = 0; i < motion_.w.size(); ++i) {
        store.add("decoder.motion.w" + std::to_string(i), ad::ParamGroup::Decoder, &motion_.w[i]);
        store.add("decoder.motion.b" + std::to_string(i), ad::ParamGroup::Decoder, &motion_.b[i]);
    }
    if (cfg_.appearance_head) {
        for (size_t i = 0; i < appearance_.w.size(); ++i) {
            store.add("decoder.appearance.w" + std::to_string(i), ad::ParamGroup::Decoder,
                      &appearance_.w[i]);
            store.add("decoder.appearance.b" + std::to_string(i), ad::ParamGroup::Decoder,
                      &appearance_.b[i]);
        }
    }
}

ad::NodeId KernelDecoder::run_mlp(const Mlp& m, ad::Graph& g, ad::ParamLeafs& leafs,
                                  ad::NodeId x) const {
    ad::NodeId h = x;
    for (size_t i = 0; i < m.w.size(); ++i) {
        h = g.add_row(g.matmul(h, leafs.of(m.w[i])), leafs.of(m.b[i]));
        if (i + 1 < m.w.size()) h = g.relu(h);
    }
    return h;
}

DeformationNodes KernelDecoder::decode_all(ad::Graph& g, ad::ParamLeafs& leafs,
                                           ad::NodeId z) const {
    ODS_REQUIRE(g.value(z).cols2d() == input_dim_, "decode: z width mismatch");
    DeformationNodes out;
    const ad::NodeId raw = run_mlp(motion_, g, leafs, z);
    auto dir = [&](int64_t c0) { return g.normalize_rows(g.slice_cols(raw, c0, c0 + 3), false); };
    auto mag = [&](int64_t c, double cap) {
        return g.scale(g.tanh(g.slice_cols(raw, c, c + 1)), cap);
    };
    if (cfg_.affine) {
        const ad::NodeId u_r = dir(0), m_r = mag(3, cfg_.cap_rotation);
        const ad::NodeId u_s = dir(4), m_s = mag(7, cfg_.cap_scale);
        const ad::NodeId u_h = dir(8), m_h = mag(11, cfg_.cap_shear);
        const ad::NodeId u_v = dir(12), m_v = mag(15, cfg_.cap_translation);
        const ad::NodeId u_n = dir(16), m_n = mag(19, cfg_.cap_translation);
        Tensor a_val = AffineComposeOp::forward(g.value(u_r), g.value(m_r), g.value(u_s),
                                                g.value(m_s), g.value(u_h), g.value(m_h));
        out.A = g.custom(std::make_shared<AffineComposeOp>(),
                         {u_r, m_r, u_s, m_s, u_h, m_h}, std::move(a_val));
        out.b = g.add(g.scale_rows(u_v, m_v), g.scale_rows(u_n, m_n));
        out.dR = g.slice_cols(raw, 20, 24);
        out.dS = g.slice_cols(raw, 24, 27);
    } else {
        out.b = g.scale(g.tanh(g.slice_cols(raw, 0, 3)), cfg_.cap_translation);
        out.dR = g.slice_cols(raw, 3, 7);
        out.dS = g.slice_cols(raw, 7, 10);
    }
    if (cfg_.appearance_head) out.dC = run_mlp(appearance_, g, leafs, z);
    return out;
}

Deformation KernelDecoder::decode_one(const Tensor& z_row) const {
    ODS_REQUIRE(z_row.size() == input_dim_, "decode_one: z width mismatch");
    ad::Graph g;
    ad::ParamLeafs leafs(g);
    Tensor z({int64_t{1}, input_dim_});
    for (int64_t i = 0; i < z_row.size(); ++i) z.at(0, i) = z_row[i];
    const DeformationNodes nodes = decode_all(g, leafs, g.leaf(z));
    Deformation d;
    if (nodes.A != ad::kNoNode) {
        const Tensor& a = g.value(nodes.A);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) d.A(r, c) = a.at(0, r * 3 + c);
    }
    const Tensor& b = g.value(nodes.b);
    for (int c = 0; c < 3; ++c) d.b[c] = b.at(0, c);
    const Tensor& dr = g.value(nodes.dR);
    for (int c = 0; c < 4; ++c) d.dR[c] = dr.at(0, c);
    const Tensor& ds = g.value(nodes.dS);
    for (int c = 0; c < 3; ++c) d.dS[c] = ds.at(0, c);
    if (nodes.dC != ad::kNoNode) {
        const Tensor& dc = g.value(nodes.dC);
        for (int c = 0; c < 3; ++c) d.dC[c] = dc.at(0, c);
    }
    return d;
}

}  // namespace ods::dec
