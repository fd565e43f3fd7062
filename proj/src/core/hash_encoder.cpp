#include "core/hash_encoder.hpp"

#include <cmath>

namespace ods::enc {

void HashGridConfig::validate() const {
    ODS_REQUIRE(levels >= 2, "hash grid: levels must be >= 2");
    ODS_REQUIRE(n_min >= 1 && n_max > n_min, "hash grid: need n_max > n_min >= 1");
    ODS_REQUIRE(table_size >= 1 && table_size <= (int64_t{1} << 19),
                "hash grid: table_size must be in [1, 2^19]");
    ODS_REQUIRE(feat_dim >= 1, "hash grid: feat_dim must be >= 1");
}

std::vector<int64_t> resolution_levels(const HashGridConfig& cfg) {
    cfg.validate();
    const double b = std::exp((std::log(static_cast<double>(cfg.n_max)) -
                               std::log(static_cast<double>(cfg.n_min))) /
                              static_cast<double>(cfg.levels - 1));
    std::vector<int64_t> out(static_cast<size_t>(cfg.levels));
    for (int i = 0; i < cfg.levels; ++i) {
        const double v = static_cast<double>(cfg.n_min) * std::pow(b, static_cast<double>(i));
        out[static_cast<size_t>(i)] = static_cast<int64_t>(std::floor(v + 1e-9));
    }
    return out;
}

uint32_t hash_index(const std::array<int64_t, 3>& g, const HashGridConfig& cfg) {
    uint32_t h = 0;
    for (int i = 0; i < 3; ++i) {
        h ^= static_cast<uint32_t>(static_cast<uint64_t>(g[static_cast<size_t>(i)])) *
             cfg.primes[static_cast<size_t>(i)];
    }
    return h % static_cast<uint32_t>(cfg.table_size);
}

SceneBounds SceneBounds::from_points(const Tensor& pts, double margin) {
    ODS_REQUIRE(pts.rank() == 2 && pts.dim(1) == 3 && pts.dim(0) > 0,
                "SceneBounds: points must be Nx3, nonempty");
    SceneBounds b;
    b.lo.setConstant(1e300);
    b.hi.setConstant(-1e300);
    for (int64_t i = 0; i < pts.dim(0); ++i) {
        for (int c = 0; c < 3; ++c) {
            b.lo[c] = std::min(b.lo[c], pts.at(i, c));
            b.hi[c] = std::max(b.hi[c], pts.at(i, c));
        }
    }
    for (int c = 0; c < 3; ++c) {
        double ext = b.hi[c] - b.lo[c];
        if (ext <= 0.0) ext = 1.0;  // degenerate axis
        b.lo[c] -= margin * ext;
        b.hi[c] += margin * ext;
    }
    return b;
}

HashGrid::HashGrid(HashGridConfig cfg, SceneBounds bounds)
    : cfg_(cfg), bounds_(bounds), resolutions_(resolution_levels(cfg)) {
    tables_.reserve(static_cast<size_t>(cfg_.levels));
    for (int l = 0; l < cfg_.levels; ++l)
        tables_.emplace_back(Tensor({cfg_.table_size, cfg_.feat_dim}));
}

void HashGrid::init(Rng& rng, double sigma) {
    for (Tensor& t : tables_)
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-sigma, sigma);
}

void HashGrid::register_params(ad::ParamStore& store) {
    for (size_t l = 0; l < tables_.size(); ++l)
        store.add("grid.table" + std::to_string(l), ad::ParamGroup::HashTable, &tables_[l]);
}

namespace {

struct CornerWeights {
    // normalized position, cell coords and fractional offsets for one level
    std::array<int64_t, 3> c0;
    std::array<double, 3> frac;
    std::array<bool, 3> interior;  // derivative passes only when not clamped
};

CornerWeights cell_of(const Eigen::Vector3d& mu, const SceneBounds& b, int64_t res) {
    CornerWeights cw;
    for (int c = 0; c < 3; ++c) {
        const double ext = b.hi[c] - b.lo[c];
        double xn = (mu[c] - b.lo[c]) / ext;
        bool interior = xn > 0.0 && xn < 1.0;
        xn = std::clamp(xn, 0.0, 1.0);
        const double pos = xn * static_cast<double>(res);
        double cell = std::floor(pos);
        // keep the top face inside the last cell so frac stays in [0,1]
        if (cell > static_cast<double>(res) - 1.0) cell = static_cast<double>(res) - 1.0;
        cw.c0[static_cast<size_t>(c)] = static_cast<int64_t>(cell);
        cw.frac[static_cast<size_t>(c)] = pos - cell;
        cw.interior[static_cast<size_t>(c)] = interior;
    }
    return cw;
}

}  // namespace

Tensor HashGrid::encode_plain(const Tensor& mu) const {
    ODS_REQUIRE(mu.rank() == 2 && mu.dim(1) == 3, "encode: mu must be Nx3");
    const int64_t n = mu.dim(0);
    const int64_t fd = cfg_.feat_dim;
    Tensor out({n, cfg_.local_dim()});
    for (int64_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p(mu.at(i, 0), mu.at(i, 1), mu.at(i, 2));
        for (int l = 0; l < cfg_.levels; ++l) {
            const auto cw = cell_of(p, bounds_, resolutions_[static_cast<size_t>(l)]);
            const Tensor& table = tables_[static_cast<size_t>(l)];
            for (int corner = 0; corner < 8; ++corner) {
                double w = 1.0;
                std::array<int64_t, 3> gc;
                for (int c = 0; c < 3; ++c) {
                    const bool hi = (corner >> c) & 1;
                    gc[static_cast<size_t>(c)] = cw.c0[static_cast<size_t>(c)] + (hi ? 1 : 0);
                    w *= hi ? cw.frac[static_cast<size_t>(c)]
                            : 1.0 - cw.frac[static_cast<size_t>(c)];
                }
                if (w == 0.0) continue;
                const uint32_t h = hash_index(gc, cfg_);
                for (int64_t f = 0; f < fd; ++f)
                    out.at(i, l * fd + f) += w * table.at(static_cast<int64_t>(h), f);
            }
        }
    }
    return out;
}

namespace {

class HashEncodeOp final : public ad::CustomOp {
public:
    HashEncodeOp(const HashGrid* grid) : grid_(grid) {}
    const char* name() const override { return "hash_encode"; }

    void backward(const ad::Graph& g, const ad::Node& n, const Tensor& gout,
                  const std::function<Tensor&(size_t)>& grad_of) const override {
        const Tensor& mu = g.value(n.parents[0]);
        const auto& cfg = grid_->config();
        const auto& bounds = grid_->bounds();
        const auto& res = grid_->resolutions();
        const int64_t count = mu.dim(0);
        const int64_t fd = cfg.feat_dim;
        Tensor& gmu = grad_of(0);

        for (int64_t i = 0; i < count; ++i) {
            const Eigen::Vector3d p(mu.at(i, 0), mu.at(i, 1), mu.at(i, 2));
            for (int l = 0; l < cfg.levels; ++l) {
                const int64_t r = res[static_cast<size_t>(l)];
                const auto cw = cell_of(p, bounds, r);
                const Tensor& table = grid_->tables_ref()[static_cast<size_t>(l)];
                Tensor& gtable = grad_of(1 + static_cast<size_t>(l));
                for (int corner = 0; corner < 8; ++corner) {
                    std::array<int64_t, 3> gc;
                    std::array<double, 3> factor;  // per-axis weight factor
                    double w = 1.0;
                    for (int c = 0; c < 3; ++c) {
                        const bool hi = (corner >> c) & 1;
                        gc[static_cast<size_t>(c)] = cw.c0[static_cast<size_t>(c)] + (hi ? 1 : 0);
                        factor[static_cast<size_t>(c)] =
                            hi ? cw.frac[static_cast<size_t>(c)]
                               : 1.0 - cw.frac[static_cast<size_t>(c)];
                        w *= factor[static_cast<size_t>(c)];
                    }
                    const uint32_t h = hash_index(gc, cfg);
                    // table entries
                    for (int64_t f = 0; f < fd; ++f)
                        gtable.at(static_cast<int64_t>(h), f) += w * gout.at(i, l * fd + f);
                    // positions: d w / d frac_c = +-prod of other factors
                    for (int c = 0; c < 3; ++c) {
                        if (!cw.interior[static_cast<size_t>(c)]) continue;
                        const bool hi = (corner >> c) & 1;
                        double dw = hi ? 1.0 : -1.0;
                        for (int o = 0; o < 3; ++o)
                            if (o != c) dw *= factor[static_cast<size_t>(o)];
                        const double dfrac_dmu =
                            static_cast<double>(r) / (bounds.hi[c] - bounds.lo[c]);
                        double acc = 0.0;
                        for (int64_t f = 0; f < fd; ++f)
                            acc += gout.at(i, l * fd + f) * table.at(static_cast<int64_t>(h), f);
                        gmu.at(i, c) += acc * dw * dfrac_dmu;
                    }
                }
            }
        }
    }

private:
    const HashGrid* grid_;
};

}  // namespace

ad::NodeId HashGrid::encode(ad::Graph& g, ad::ParamLeafs& leafs, ad::NodeId mu) const {
    Tensor value = encode_plain(g.value(mu));
    std::vector<ad::NodeId> parents;
    parents.push_back(mu);
    for (const Tensor& t : tables_) parents.push_back(leafs.of(t));
    auto op = std::make_shared<HashEncodeOp>(this);
    return g.custom(std::move(op), std::move(parents), std::move(value));
}

}  // namespace ods::enc
