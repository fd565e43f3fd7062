#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/gradcheck.hpp"
#include "core/renderer.hpp"
#include "test_util.hpp"

using namespace ods;
using render::Camera;
using render::RenderOptions;
using render::Splat2D;
using test::random_tensor;

namespace {

Camera test_camera(int res = 16, double fx = 100.0) {
    Camera cam;
    cam.view.setIdentity();
    cam.fx = cam.fy = fx;
    cam.cx = res / 2.0;
    cam.cy = res / 2.0;
    cam.width = cam.height = res;
    cam.near = 0.1;
    return cam;
}

// particles scattered in front of an identity camera
struct SceneArrays {
    Tensor mu, rot, scale, opacity, color;
};

SceneArrays random_scene(Rng& rng, int64_t n, double spread = 0.4) {
    SceneArrays s{Tensor({n, 3}), Tensor({n, 4}), Tensor({n, 3}), Tensor({n, 1}), Tensor({n, 3})};
    for (int64_t i = 0; i < n; ++i) {
        s.mu.at(i, 0) = rng.uniform(-spread, spread);
        s.mu.at(i, 1) = rng.uniform(-spread, spread);
        s.mu.at(i, 2) = rng.uniform(2.0, 4.0);
        Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        q.normalize();
        for (int c = 0; c < 4; ++c) s.rot.at(i, c) = q[c];
        for (int c = 0; c < 3; ++c) s.scale.at(i, c) = rng.uniform(0.05, 0.25);
        s.opacity.at(i, 0) = rng.uniform(0.3, 0.9);
        for (int c = 0; c < 3; ++c) s.color.at(i, c) = rng.uniform(0.05, 0.95);
    }
    return s;
}

}  // namespace

TEST_CASE("camera validation") {
    Camera cam = test_camera();
    CHECK_NOTHROW(cam.validate());
    cam.view(0, 0) = 2.0;
    CHECK_THROWS_AS(cam.validate(), ContractViolation);
    cam = test_camera();
    cam.near = 0.0;
    CHECK_THROWS_AS(cam.validate(), ContractViolation);
}

TEST_CASE("projection: a point on the optical axis lands on the principal point") {
    const Camera cam = test_camera();
    gs::GaussianKernel k;
    k.mu = Eigen::Vector3d(0, 0, 3.0);
    k.scale = Eigen::Vector3d(0.1, 0.2, 0.15);
    const auto splat = render::project_gaussian(k, cam);
    REQUIRE(splat.has_value());
    CHECK(splat->center.x() == doctest::Approx(cam.cx).epsilon(1e-12));
    CHECK(splat->center.y() == doctest::Approx(cam.cy).epsilon(1e-12));
    CHECK(splat->depth == doctest::Approx(3.0));
}

TEST_CASE("projection culls behind the near plane") {
    const Camera cam = test_camera();
    gs::GaussianKernel k;
    k.mu = Eigen::Vector3d(0, 0, 0.05);
    CHECK_FALSE(render::project_gaussian(k, cam).has_value());
    k.mu = Eigen::Vector3d(0, 0, -2.0);
    CHECK_FALSE(render::project_gaussian(k, cam).has_value());
}

TEST_CASE("tiny covariances are floored by the dilation constant") {
    const Camera cam = test_camera();
    gs::GaussianKernel k;
    k.mu = Eigen::Vector3d(0.1, -0.1, 2.5);
    k.scale = Eigen::Vector3d(1e-6, 1e-6, 1e-6);
    const auto splat = render::project_gaussian(k, cam);
    REQUIRE(splat.has_value());
    CHECK(splat->cov(0, 0) == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(splat->cov(1, 1) == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(std::fabs(splat->cov(0, 1)) < 1e-9);
    // eigenvalues never drop below the floor
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(splat->cov);
    CHECK(es.eigenvalues().minCoeff() >= 0.3 - 1e-9);
}

TEST_CASE("image-space covariance matches a finite-difference Jacobian oracle") {
    const Camera cam = test_camera(16, 100.0);
    gs::GaussianKernel k;
    k.mu = Eigen::Vector3d(0.1, -0.2, 2.0);
    k.scale = Eigen::Vector3d(1, 1, 1);  // Sigma = I
    const auto splat = render::project_gaussian(k, cam);
    REQUIRE(splat.has_value());

    // numeric Jacobian of the pinhole projection at the camera-space mean
    const auto project = [&](const Eigen::Vector3d& t) {
        return Eigen::Vector2d(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
    };
    const Eigen::Vector3d t = cam.rotation() * k.mu + cam.translation();
    Eigen::Matrix<double, 2, 3> jfd;
    const double eps = 1e-6;
    for (int c = 0; c < 3; ++c) {
        Eigen::Vector3d tp = t, tm = t;
        tp[c] += eps;
        tm[c] -= eps;
        jfd.col(c) = (project(tp) - project(tm)) / (2 * eps);
    }
    const Eigen::Matrix3d sigma = gs::build_covariance(k.rot, k.scale);
    const Eigen::Matrix3d w = cam.rotation();
    const Eigen::Matrix2d expected =
        jfd * w * sigma * w.transpose() * jfd.transpose() + 0.3 * Eigen::Matrix2d::Identity();
    CHECK((splat->cov - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("alpha evaluation") {
    Splat2D s;
    s.center = Eigen::Vector2d(4, 4);
    s.cov = Eigen::Matrix2d::Identity();
    s.opacity = 0.7;
    SUBCASE("at the center the exponent vanishes") {
        CHECK(render::evaluate_alpha(s, {4, 4}) == doctest::Approx(0.7).epsilon(1e-12));
    }
    SUBCASE("unit covariance at distance sqrt(2)") {
        s.opacity = 1.0;
        CHECK(render::evaluate_alpha(s, {4 + std::sqrt(2.0), 4}) ==
              doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    }
    SUBCASE("zero opacity gives zero everywhere") {
        s.opacity = 0.0;
        CHECK(render::evaluate_alpha(s, {1, 7}) == 0.0);
        CHECK(render::evaluate_alpha(s, {4, 4}) == 0.0);
    }
    SUBCASE("clamped at 0.99") {
        s.opacity = 1.0;
        CHECK(render::evaluate_alpha(s, {4, 4}) == doctest::Approx(0.99));
    }
}

TEST_CASE("pixel compositing") {
    const Eigen::Vector2d p(4, 4);
    SUBCASE("empty list composites to black") {
        CHECK(render::composite_pixel({}, p).norm() == 0.0);
    }
    SUBCASE("single opaque splat is clamped to 0.99") {
        Splat2D s;
        s.center = p;
        s.cov = Eigen::Matrix2d::Identity();
        s.opacity = 1.0;
        s.color = Eigen::Vector3d(0.5, 0.25, 1.0);
        s.depth = 1.0;
        const Eigen::Vector3d out = render::composite_pixel({&s, 1}, p);
        CHECK((out - 0.99 * s.color).norm() < 1e-12);
    }
    SUBCASE("two half-transparent splats blend front to back") {
        Splat2D a, b;
        a.center = b.center = p;
        a.cov = b.cov = Eigen::Matrix2d::Identity();
        a.opacity = b.opacity = 0.5;
        a.color = Eigen::Vector3d(1, 0, 0);
        b.color = Eigen::Vector3d(0, 1, 0);
        a.depth = 1.0;
        b.depth = 2.0;
        const std::array<Splat2D, 2> list{a, b};
        const Eigen::Vector3d out = render::composite_pixel(list, p);
        CHECK(out.x() == doctest::Approx(0.5));
        CHECK(out.y() == doctest::Approx(0.25));
        CHECK(out.z() == doctest::Approx(0.0));
    }
}

TEST_CASE("rendering an empty particle set yields a black image") {
    SceneArrays s{Tensor({0, 3}), Tensor({0, 4}), Tensor({0, 3}), Tensor({0, 1}), Tensor({0, 3})};
    const Camera cam = test_camera(8);
    const Tensor img =
        render::render_fast({s.mu, s.rot, s.scale, s.opacity, s.color}, cam);
    CHECK(img.max_abs() == 0.0);
}

TEST_CASE("a single centered gaussian is brightest at the principal point") {
    const Camera cam = test_camera(64);
    SceneArrays s{Tensor({1, 3}), Tensor({1, 4}), Tensor({1, 3}), Tensor({1, 1}), Tensor({1, 3})};
    s.mu.at(0, 2) = 3.0;
    s.rot.at(0, 0) = 1.0;
    for (int c = 0; c < 3; ++c) s.scale.at(0, c) = 0.08;
    s.opacity.at(0, 0) = 0.9;
    for (int c = 0; c < 3; ++c) s.color.at(0, c) = 1.0;
    const Tensor img = render::render_fast({s.mu, s.rot, s.scale, s.opacity, s.color}, cam);
    double best = -1;
    int bx = -1, by = -1;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (img.at3(y, x, 0) > best) {
                best = img.at3(y, x, 0);
                bx = x;
                by = y;
            }
    CHECK(bx == 32);
    CHECK(by == 32);
}

TEST_CASE("fast path matches the brute-force reference") {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t n = 1 + static_cast<int64_t>(rng.uniform_index(50));
        const SceneArrays s = random_scene(rng, n);
        const Camera cam = test_camera(32, 40.0);
        render::SplatArrays in{s.mu, s.rot, s.scale, s.opacity, s.color};
        const Tensor ref = render::render_reference(in, cam);
        const Tensor fast = render::render_fast(in, cam);
        CHECK(test::max_abs_diff(ref, fast) < 1e-6);
    }
}

TEST_CASE("render_image is invariant to the particle order") {
    Rng rng(7);
    const int64_t n = 12;
    const SceneArrays s = random_scene(rng, n);
    const Camera cam = test_camera(32, 40.0);
    const Tensor img1 = render::render_fast({s.mu, s.rot, s.scale, s.opacity, s.color}, cam);

    // reversed rows
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = n - 1 - i;
    auto permute = [&](const Tensor& t) {
        Tensor out(t.shape());
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < t.dim(1); ++j) out.at(i, j) = t.at(perm[static_cast<size_t>(i)], j);
        return out;
    };
    const Tensor mu = permute(s.mu), rot = permute(s.rot), scale = permute(s.scale),
                 opacity = permute(s.opacity), color = permute(s.color);
    const Tensor img2 = render::render_fast({mu, rot, scale, opacity, color}, cam);
    CHECK(test::bitwise_equal(img1, img2));
}

TEST_CASE("transmittance partition of unity") {
    Rng rng(21);
    const SceneArrays s = random_scene(rng, 20);
    const Camera cam = test_camera(16, 30.0);
    // test-local compositor walking the sorted splat list per pixel
    std::vector<Splat2D> splats;
    for (int64_t i = 0; i < 20; ++i) {
        gs::GaussianKernel k;
        k.mu = Eigen::Vector3d(s.mu.at(i, 0), s.mu.at(i, 1), s.mu.at(i, 2));
        k.rot = Eigen::Vector4d(s.rot.at(i, 0), s.rot.at(i, 1), s.rot.at(i, 2), s.rot.at(i, 3));
        k.scale = Eigen::Vector3d(s.scale.at(i, 0), s.scale.at(i, 1), s.scale.at(i, 2));
        k.opacity = s.opacity.at(i, 0);
        const auto sp = render::project_gaussian(k, cam);
        if (sp) splats.push_back(*sp);
    }
    std::sort(splats.begin(), splats.end(),
              [](const Splat2D& a, const Splat2D& b) { return a.depth < b.depth; });
    REQUIRE(!splats.empty());
    const RenderOptions opt;
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            double T = 1.0, mass = 0.0;
            double prev_T = 1.0;
            for (const auto& sp : splats) {
                const double a = render::evaluate_alpha(sp, {double(x), double(y)}, opt);
                if (a < opt.alpha_skip) continue;
                mass += T * a;
                T *= 1.0 - a;
                CHECK(T <= prev_T + 1e-15);  // nonincreasing
                CHECK(T >= 0.0);
                prev_T = T;
            }
            CHECK(std::fabs(mass + T - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("image-space covariance stays positive definite after dilation") {
    Rng rng(67);
    const render::RenderOptions opt;
    for (int trial = 0; trial < 200; ++trial) {
        gs::GaussianKernel k;
        k.mu = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 6.0));
        Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        k.rot = q.normalized();
        // spans degenerate needles through fat blobs
        k.scale = Eigen::Vector3d(std::pow(10.0, rng.uniform(-6, 0)),
                                  std::pow(10.0, rng.uniform(-6, 0)),
                                  std::pow(10.0, rng.uniform(-6, 0)));
        k.opacity = rng.uniform(0, 1);
        const auto splat = render::project_gaussian(k, test_camera(16, rng.uniform(10, 200)), opt);
        if (!splat) continue;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(splat->cov);
        CHECK(es.eigenvalues().minCoeff() >= opt.dilation - 1e-9);
    }
}

TEST_CASE("render gradients match central differences for all kernel inputs") {
    Rng rng(5);
    const int64_t n = 3;
    const SceneArrays s = random_scene(rng, n, 0.25);
    const Camera cam = test_camera(8, 12.0);
    const Tensor weights = random_tensor(rng, {8, 8, 3}, 0.1, 1.0);

    // raw parameterization; the graph applies normalize/exp/sigmoid/clamp
    Tensor raw_scale(s.scale.shape());
    for (int64_t i = 0; i < raw_scale.size(); ++i) raw_scale[i] = std::log(s.scale[i]);
    Tensor raw_opacity(s.opacity.shape());
    for (int64_t i = 0; i < raw_opacity.size(); ++i)
        raw_opacity[i] = gs::logit(s.opacity[i]);

    enum class Which { Mu, Rot, Scale, Opacity, Color };
    auto build = [&](Which which) {
        return [&, which](ad::Graph& g, ad::NodeId x) {
            const ad::NodeId mu = which == Which::Mu ? x : g.leaf(s.mu);
            const ad::NodeId rot_raw = which == Which::Rot ? x : g.leaf(s.rot);
            const ad::NodeId lscale = which == Which::Scale ? x : g.leaf(raw_scale);
            const ad::NodeId opac = which == Which::Opacity ? x : g.leaf(raw_opacity);
            const ad::NodeId col = which == Which::Color ? x : g.leaf(s.color);
            const ad::NodeId img = render::render_image(
                g, mu, g.normalize_rows(rot_raw, true), g.exp(lscale), g.sigmoid(opac),
                g.clamp01(col), cam);
            return g.sum(g.mul(img, g.leaf(weights)));
        };
    };
    CHECK(ad::check_gradient(build(Which::Mu), s.mu, 1e-5) <= 1e-4);
    CHECK(ad::check_gradient(build(Which::Rot), s.rot, 1e-5) <= 1e-4);
    CHECK(ad::check_gradient(build(Which::Scale), raw_scale, 1e-5) <= 1e-4);
    CHECK(ad::check_gradient(build(Which::Opacity), raw_opacity, 1e-5) <= 1e-4);
    CHECK(ad::check_gradient(build(Which::Color), s.color, 1e-5) <= 1e-4);
}

TEST_CASE("render stats mark visible splats and accumulate center gradients") {
    Rng rng(17);
    const SceneArrays s = random_scene(rng, 4);
    const Camera cam = test_camera(16, 20.0);
    ad::Graph g;
    render::RenderStats stats;
    const ad::NodeId img = render::render_image(g, g.leaf(s.mu), g.leaf(s.rot), g.leaf(s.scale),
                                                g.leaf(s.opacity), g.leaf(s.color), cam, {},
                                                &stats);
    (void)g.backward(g.sum(img));
    REQUIRE(stats.visible.size() == 4);
    double total = 0;
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(stats.visible.at(i, 0) == 1.0);
        total += stats.center_grad_norm.at(i, 0);
    }
    CHECK(total > 0.0);
}
