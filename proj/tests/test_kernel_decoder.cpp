#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/decoder.hpp"
#include "core/gradcheck.hpp"
#include "core/renderer.hpp"
#include "test_util.hpp"

using namespace ods;
using dec::Deformation;
using dec::DecoderConfig;
using dec::KernelDecoder;
using test::random_tensor;

TEST_CASE("compose_affine with all-zero inputs is exactly zero") {
    Eigen::Matrix3d a;
    Eigen::Vector3d b;
    dec::compose_affine(Eigen::Vector3d::Zero(), 0.0, Eigen::Vector3d::Zero(), 0.0,
                        Eigen::Vector3d::Zero(), 0.0, Eigen::Vector3d::Zero(), 0.0,
                        Eigen::Vector3d::Zero(), 0.0, a, b);
    CHECK(a.cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.cwiseAbs().maxCoeff() == 0.0);
    // nonzero directions with zero magnitudes also vanish exactly
    dec::compose_affine(Eigen::Vector3d::UnitX(), 0.0, Eigen::Vector3d::UnitY(), 0.0,
                        Eigen::Vector3d::UnitZ(), 0.0, Eigen::Vector3d::UnitX(), 0.0,
                        Eigen::Vector3d::UnitY(), 0.0, a, b);
    CHECK(a.cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("compose_affine: pure velocity fills only the translation") {
    Eigen::Matrix3d a;
    Eigen::Vector3d b;
    dec::compose_affine(Eigen::Vector3d::Zero(), 0.0, Eigen::Vector3d::Zero(), 0.0,
                        Eigen::Vector3d::Zero(), 0.0, Eigen::Vector3d::UnitX(), 0.1,
                        Eigen::Vector3d::Zero(), 0.0, a, b);
    CHECK(a.cwiseAbs().maxCoeff() == 0.0);
    CHECK((b - Eigen::Vector3d(0.1, 0, 0)).norm() < 1e-15);
}

TEST_CASE("compose_affine: pure rotation matches the rotation-matrix oracle") {
    Eigen::Matrix3d a;
    Eigen::Vector3d b;
    const double theta = 0.2;
    dec::compose_affine(Eigen::Vector3d::UnitZ(), theta, Eigen::Vector3d::Zero(), 0.0,
                        Eigen::Vector3d::Zero(), 0.0, Eigen::Vector3d::Zero(), 0.0,
                        Eigen::Vector3d::Zero(), 0.0, a, b);
    const Eigen::Matrix3d oracle =
        Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitZ()).toRotationMatrix() -
        Eigen::Matrix3d::Identity();
    CHECK((a - oracle).cwiseAbs().maxCoeff() < 1e-12);
    // mu + A mu rotates mu by theta in the xy-plane
    const Eigen::Vector3d mu(0.7, -0.2, 0.4);
    const Eigen::Vector3d rotated = mu + a * mu;
    const Eigen::Vector3d expect =
        Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitZ()).toRotationMatrix() * mu;
    CHECK((rotated - expect).norm() < 1e-12);
}

TEST_CASE("apply_deformation: identity leaves the kernel unchanged") {
    gs::GaussianKernel k;
    k.mu = Eigen::Vector3d(0.2, -0.4, 1.0);
    k.rot = Eigen::Vector4d(1, 0, 0, 0);
    k.scale = Eigen::Vector3d(0.5, 0.4, 0.3);
    k.opacity = 0.7;
    k.color = Eigen::Vector3d(0.2, 0.5, 0.9);
    const gs::GaussianKernel out = dec::apply_deformation(k, Deformation{});
    CHECK(out.mu == k.mu);
    CHECK(out.rot == k.rot);
    CHECK((out.scale - k.scale).norm() < 1e-15);
    CHECK(out.opacity == k.opacity);
    CHECK(out.color == k.color);
}

TEST_CASE("apply_deformation: translation moves the mean, covariance unchanged") {
    gs::GaussianKernel k;
    k.mu = Eigen::Vector3d(1, 2, 3);
    k.scale = Eigen::Vector3d(0.3, 0.2, 0.1);
    Deformation d;
    d.b = Eigen::Vector3d(0, 0, 1);
    const gs::GaussianKernel out = dec::apply_deformation(k, d);
    CHECK((out.mu - Eigen::Vector3d(1, 2, 4)).norm() < 1e-15);
    CHECK((gs::build_covariance(out.rot, out.scale) -
           gs::build_covariance(k.rot, k.scale)).norm() < 1e-12);
}

TEST_CASE("apply_deformation: rotation-generator action on the mean") {
    gs::GaussianKernel k;
    k.mu = Eigen::Vector3d(1, 0, 0);
    Deformation d;
    d.A = Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix() -
          Eigen::Matrix3d::Identity();
    const gs::GaussianKernel out = dec::apply_deformation(k, d);
    CHECK((out.mu - Eigen::Vector3d(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("apply_deformation: near-zero quaternion is a numeric failure") {
    gs::GaussianKernel k;
    Deformation d;
    d.dR = Eigen::Vector4d(-1, 0, 0, 0);  // cancels the identity quaternion
    CHECK_THROWS_AS((void)dec::apply_deformation(k, d), NumericFailure);
}

TEST_CASE("deformed position is affine in the input position") {
    Rng rng(3);
    Deformation d;
    d.A << 0.1, -0.05, 0.02, 0.0, 0.07, 0.01, -0.03, 0.0, 0.08;
    d.b = Eigen::Vector3d(0.3, -0.1, 0.2);
    for (int trial = 0; trial < 10; ++trial) {
        gs::GaussianKernel k1, k2;
        k1.mu = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        k2.mu = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        const double alpha = rng.uniform();
        gs::GaussianKernel mix = k1;
        mix.mu = alpha * k1.mu + (1 - alpha) * k2.mu;
        const Eigen::Vector3d lhs = dec::apply_deformation(mix, d).mu;
        const Eigen::Vector3d rhs = alpha * dec::apply_deformation(k1, d).mu +
                                    (1 - alpha) * dec::apply_deformation(k2, d).mu;
        CHECK((lhs - rhs).norm() < 1e-12);
    }
}

namespace {

KernelDecoder tiny_decoder(Rng& rng, DecoderConfig cfg = {}, int64_t in_dim = 6) {
    cfg.width = 16;
    cfg.motion_depth = 2;
    cfg.appearance_depth = 2;
    KernelDecoder d(cfg, in_dim);
    d.init(rng);
    return d;
}

}  // namespace

TEST_CASE("zero and identity-safe initializations decode to the identity") {
    for (const auto init : {DecoderConfig::Init::Zero, DecoderConfig::Init::IdentitySafe}) {
        Rng rng(7);
        DecoderConfig cfg;
        cfg.init = init;
        const KernelDecoder d = tiny_decoder(rng, cfg);
        Rng zrng(11);
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor z = random_tensor(zrng, {6});
            const Deformation def = d.decode_one(z);
            CHECK(def.A.cwiseAbs().maxCoeff() == 0.0);
            CHECK(def.b.cwiseAbs().maxCoeff() == 0.0);
            CHECK(def.dR.cwiseAbs().maxCoeff() == 0.0);
            CHECK(def.dS.cwiseAbs().maxCoeff() == 0.0);
            CHECK(def.dC.cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("identical latent rows decode to identical deformations") {
    Rng rng(13);
    KernelDecoder d = tiny_decoder(rng);
    // non-trivial weights
    ad::ParamStore store;
    d.register_params(store);
    Rng wrng(15);
    for (auto& e : store.entries())
        for (int64_t i = 0; i < e.value->size(); ++i) (*e.value)[i] = wrng.normal(0, 0.3);

    const Tensor z_row = random_tensor(rng, {6});
    Tensor z2({2, 6});
    for (int64_t j = 0; j < 6; ++j) {
        z2.at(0, j) = z_row[j];
        z2.at(1, j) = z_row[j];
    }
    ad::Graph g;
    ad::ParamLeafs leafs(g);
    const auto nodes = d.decode_all(g, leafs, g.leaf(z2));
    const Tensor& a = g.value(nodes.A);
    const Tensor& b = g.value(nodes.b);
    for (int64_t j = 0; j < 9; ++j) CHECK(a.at(0, j) == a.at(1, j));
    for (int64_t j = 0; j < 3; ++j) CHECK(b.at(0, j) == b.at(1, j));
}

TEST_CASE("decode matches an independent matrix-math oracle") {
    Rng rng(17);
    DecoderConfig cfg;
    cfg.appearance_head = false;
    KernelDecoder d(cfg, 4);
    d.init(rng);
    ad::ParamStore store;
    d.register_params(store);
    Rng wrng(19);
    for (auto& e : store.entries())
        for (int64_t i = 0; i < e.value->size(); ++i) (*e.value)[i] = wrng.normal(0, 0.2);

    const Tensor z = random_tensor(rng, {4});

    // test-side forward: relu MLP, then the documented output layout
    auto matvec = [&](const Tensor& w, const Tensor& bias, const std::vector<double>& x) {
        std::vector<double> out(static_cast<size_t>(w.dim(1)), 0.0);
        for (int64_t j = 0; j < w.dim(1); ++j) {
            double acc = bias[j];
            for (int64_t i = 0; i < w.dim(0); ++i) acc += x[static_cast<size_t>(i)] * w.at(i, j);
            out[static_cast<size_t>(j)] = acc;
        }
        return out;
    };
    std::vector<double> h(z.data(), z.data() + z.size());
    // walk motion weights in registration order: w0,b0,w1,b1,...
    std::vector<const Tensor*> ws, bs;
    for (const auto& e : store.entries()) {
        if (e.name.find("motion.w") != std::string::npos) ws.push_back(e.value);
        if (e.name.find("motion.b") != std::string::npos) bs.push_back(e.value);
    }
    for (size_t l = 0; l < ws.size(); ++l) {
        h = matvec(*ws[l], *bs[l], h);
        if (l + 1 < ws.size())
            for (double& v : h) v = std::max(0.0, v);
    }
    REQUIRE(h.size() == 27);
    auto unit = [](const Eigen::Vector3d& v) {
        return (v / std::sqrt(v.squaredNorm() + 1e-16)).eval();
    };
    const double cr = cfg.cap_rotation, cs = cfg.cap_scale, ch = cfg.cap_shear,
                 ct = cfg.cap_translation;
    Eigen::Matrix3d a_expect;
    Eigen::Vector3d b_expect;
    dec::compose_affine(unit({h[0], h[1], h[2]}), cr * std::tanh(h[3]),
                        unit({h[4], h[5], h[6]}), cs * std::tanh(h[7]),
                        unit({h[8], h[9], h[10]}), ch * std::tanh(h[11]),
                        unit({h[12], h[13], h[14]}), ct * std::tanh(h[15]),
                        unit({h[16], h[17], h[18]}), ct * std::tanh(h[19]), a_expect, b_expect);

    const Deformation def = d.decode_one(z);
    CHECK((def.A - a_expect).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((def.b - b_expect).cwiseAbs().maxCoeff() < 1e-9);
    for (int c = 0; c < 4; ++c) CHECK(def.dR[c] == doctest::Approx(h[20 + c]).epsilon(1e-12));
    for (int c = 0; c < 3; ++c) CHECK(def.dS[c] == doctest::Approx(h[24 + c]).epsilon(1e-12));
}

TEST_CASE("magnitude caps bound the decoded transform") {
    Rng rng(23);
    DecoderConfig cfg;
    const KernelDecoder base = tiny_decoder(rng, cfg);
    ad::ParamStore store;
    KernelDecoder d = base;
    d.register_params(store);
    Rng wrng(29);
    for (auto& e : store.entries())
        for (int64_t i = 0; i < e.value->size(); ++i) (*e.value)[i] = wrng.normal(0, 2.0);

    Rng zrng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor z = random_tensor(zrng, {6}, -3.0, 3.0);
        const Deformation def = d.decode_one(z);
        const double a_norm = def.A.operatorNorm();
        // Rot - I has spectral norm <= rotation angle; diag and symmetric
        // shear blocks are bounded by their capped magnitudes
        CHECK(a_norm <= cfg.cap_rotation + cfg.cap_scale + 2.0 * cfg.cap_shear + 1e-9);
        CHECK(def.b.norm() <= 2.0 * cfg.cap_translation + 1e-12);
    }
}

TEST_CASE("decoder weight gradients through a rendered-image loss pass the oracle") {
    Rng rng(37);
    DecoderConfig cfg;
    cfg.appearance_head = true;
    KernelDecoder d = tiny_decoder(rng, cfg, 5);
    ad::ParamStore store;
    d.register_params(store);
    Rng wrng(41);
    for (auto& e : store.entries())
        for (int64_t i = 0; i < e.value->size(); ++i) (*e.value)[i] = wrng.normal(0, 0.15);

    // a small scene rendered through the decode -> apply -> render path
    const int64_t n = 4;
    Tensor pos({n, 3}), rot({n, 4}), lscale({n, 3}), opac({n, 1}), color({n, 3});
    for (int64_t i = 0; i < n; ++i) {
        pos.at(i, 0) = rng.uniform(-0.3, 0.3);
        pos.at(i, 1) = rng.uniform(-0.3, 0.3);
        pos.at(i, 2) = rng.uniform(2.0, 3.0);
        rot.at(i, 0) = 1.0;
        for (int c = 0; c < 3; ++c) lscale.at(i, c) = std::log(rng.uniform(0.08, 0.2));
        opac.at(i, 0) = rng.uniform(-0.5, 1.5);
        for (int c = 0; c < 3; ++c) color.at(i, c) = rng.uniform(0.1, 0.9);
    }
    const Tensor z = random_tensor(rng, {n, 5});
    render::Camera cam;
    cam.fx = cam.fy = 12.0;
    cam.cx = cam.cy = 4.0;
    cam.width = cam.height = 8;
    const Tensor weights = random_tensor(rng, {8, 8, 3}, 0.2, 1.0);

    auto build = [&](ad::Graph& g, ad::ParamLeafs& leafs) {
        const auto def = d.decode_all(g, leafs, g.leaf(z));
        const ad::NodeId mu = dec::apply_affine(g, g.leaf(pos), def.A, def.b);
        const ad::NodeId rq = g.normalize_rows(g.add(g.leaf(rot), def.dR), true);
        const ad::NodeId sc = g.exp(g.add(g.leaf(lscale), def.dS));
        const ad::NodeId op = g.sigmoid(g.leaf(opac));
        const ad::NodeId co = g.clamp01(g.add(g.leaf(color), def.dC));
        const ad::NodeId img = render::render_image(g, mu, rq, sc, op, co, cam);
        return g.sum(g.mul(img, g.leaf(weights)));
    };
    Rng srng(43);
    for (auto& e : store.entries()) {
        INFO("decoder parameter " << e.name);
        const int64_t samples = e.value->size() > 64 ? 48 : 0;
        CHECK(test::param_gradcheck(*e.value, build, 1e-5, samples, srng) <= 1e-4);
    }
}
