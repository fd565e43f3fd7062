#include "core/metrics.hpp"

#include <array>
#include <cmath>
#include <memory>

namespace ods::metrics {

namespace {

constexpr double kC1 = 1e-4;  // (0.01 * L)^2, L = 1
constexpr double kC2 = 9e-4;  // (0.03 * L)^2
constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
    std::array<double, kWin> w{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

int64_t reflect101(int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

void require_image(const Tensor& t) {
    ODS_REQUIRE(t.rank() == 3 && t.dim(2) >= 1 && t.dim(0) >= 2 && t.dim(1) >= 2,
                "ssim: images must be HxWxC with H,W >= 2");
}

// Separable Gaussian blur over each channel; the adjoint scatters with the
// same weights, so the pair is an exact transpose.
class GaussianBlurOp final : public ad::CustomOp {
public:
    const char* name() const override { return "gaussian_blur"; }

    static Tensor forward(const Tensor& img) {
        require_image(img);
        const auto w = gaussian_window();
        const int64_t h = img.dim(0), wd = img.dim(1), ch = img.dim(2);
        Tensor tmp({h, wd, ch}), out({h, wd, ch});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < wd; ++x)
                for (int64_t c = 0; c < ch; ++c) {
                    double acc = 0.0;
                    for (int k = 0; k < kWin; ++k)
                        acc += w[static_cast<size_t>(k)] *
                               img.at3(y, reflect101(x + k - kWin / 2, wd), c);
                    tmp.at3(y, x, c) = acc;
                }
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < wd; ++x)
                for (int64_t c = 0; c < ch; ++c) {
                    double acc = 0.0;
                    for (int k = 0; k < kWin; ++k)
                        acc += w[static_cast<size_t>(k)] *
                               tmp.at3(reflect101(y + k - kWin / 2, h), x, c);
                    out.at3(y, x, c) = acc;
                }
        return out;
    }

    void backward(const ad::Graph& g, const ad::Node& n, const Tensor& gout,
                  const std::function<Tensor&(size_t)>& grad_of) const override {
        (void)g;
        (void)n;
        const auto w = gaussian_window();
        const int64_t h = gout.dim(0), wd = gout.dim(1), ch = gout.dim(2);
        Tensor tmp({h, wd, ch});
        // adjoint of the vertical pass
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < wd; ++x)
                for (int64_t c = 0; c < ch; ++c) {
                    const double go = gout.at3(y, x, c);
                    if (go == 0.0) continue;
                    for (int k = 0; k < kWin; ++k)
                        tmp.at3(reflect101(y + k - kWin / 2, h), x, c) +=
                            w[static_cast<size_t>(k)] * go;
                }
        // adjoint of the horizontal pass
        Tensor& gin = grad_of(0);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < wd; ++x)
                for (int64_t c = 0; c < ch; ++c) {
                    const double go = tmp.at3(y, x, c);
                    if (go == 0.0) continue;
                    for (int k = 0; k < kWin; ++k)
                        gin.at3(y, reflect101(x + k - kWin / 2, wd), c) +=
                            w[static_cast<size_t>(k)] * go;
                }
    }
};

ad::NodeId blur(ad::Graph& g, ad::NodeId x) {
    Tensor v = GaussianBlurOp::forward(g.value(x));
    return g.custom(std::make_shared<GaussianBlurOp>(), {x}, std::move(v));
}

ad::NodeId ssim_mean_node(ad::Graph& g, ad::NodeId x, ad::NodeId y) {
    ODS_REQUIRE(g.value(x).same_shape(g.value(y)), "ssim: image shapes must match");
    require_image(g.value(x));
    const ad::NodeId mu_x = blur(g, x);
    const ad::NodeId mu_y = blur(g, y);
    const ad::NodeId mu_xx = g.mul(mu_x, mu_x);
    const ad::NodeId mu_yy = g.mul(mu_y, mu_y);
    const ad::NodeId mu_xy = g.mul(mu_x, mu_y);
    const ad::NodeId sxx = g.sub(blur(g, g.mul(x, x)), mu_xx);
    const ad::NodeId syy = g.sub(blur(g, g.mul(y, y)), mu_yy);
    const ad::NodeId sxy = g.sub(blur(g, g.mul(x, y)), mu_xy);
    const ad::NodeId num =
        g.mul(g.add_const(g.scale(mu_xy, 2.0), kC1), g.add_const(g.scale(sxy, 2.0), kC2));
    const ad::NodeId den =
        g.mul(g.add_const(g.add(mu_xx, mu_yy), kC1), g.add_const(g.add(sxx, syy), kC2));
    return g.mean(g.div(num, den));
}

}  // namespace

double l1(const Tensor& a, const Tensor& b) {
    ODS_REQUIRE(a.same_shape(b), "l1: shape mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b) {
    ODS_REQUIRE(a.same_shape(b), "psnr: shape mismatch");
    ODS_REQUIRE(a.size() > 0, "psnr: empty images");
    double mse = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(mse));
}

double ssim(const Tensor& a, const Tensor& b) {
    ad::Graph g;
    return g.value(ssim_mean_node(g, g.leaf(a), g.leaf(b))).value_scalar();
}

double dssim(const Tensor& a, const Tensor& b) { return 0.5 * (1.0 - ssim(a, b)); }

double blend_loss(double l1_value, double dssim_value, double lambda) {
    ODS_REQUIRE(lambda >= 0.0 && lambda <= 1.0, "compute_loss: lambda must be in [0,1]");
    return (1.0 - lambda) * l1_value + lambda * dssim_value;
}

double compute_loss(const Tensor& a, const Tensor& b, double lambda) {
    return blend_loss(l1(a, b), dssim(a, b), lambda);
}

ad::NodeId l1_node(ad::Graph& g, ad::NodeId a, ad::NodeId b) {
    ODS_REQUIRE(g.value(a).same_shape(g.value(b)), "l1: shape mismatch");
    return g.mean(g.abs(g.sub(a, b)));
}

ad::NodeId dssim_node(ad::Graph& g, ad::NodeId a, ad::NodeId b) {
    const ad::NodeId s = ssim_mean_node(g, a, b);
    return g.scale(g.add_const(g.scale(s, -1.0), 1.0), 0.5);
}

ad::NodeId loss_node(ad::Graph& g, ad::NodeId rendered, ad::NodeId target, double lambda) {
    ODS_REQUIRE(lambda >= 0.0 && lambda <= 1.0, "compute_loss: lambda must be in [0,1]");
    const ad::NodeId a = l1_node(g, rendered, target);
    const ad::NodeId d = dssim_node(g, rendered, target);
    return g.add(g.scale(a, 1.0 - lambda), g.scale(d, lambda));
}

}  // namespace ods::metrics
