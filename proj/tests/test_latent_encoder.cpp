#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/encoder.hpp"
#include "core/gradcheck.hpp"
#include "core/grouping.hpp"
#include "core/hash_encoder.hpp"
#include "test_util.hpp"

using namespace ods;
using enc::GroupingCache;
using enc::HashGridConfig;
using test::random_tensor;

TEST_CASE("resolution levels follow the geometric schedule") {
    HashGridConfig cfg;
    cfg.levels = 2;
    cfg.n_min = 16;
    cfg.n_max = 512;
    const auto two = enc::resolution_levels(cfg);
    CHECK(two == std::vector<int64_t>{16, 512});

    cfg.levels = 16;
    const auto sixteen = enc::resolution_levels(cfg);
    REQUIRE(sixteen.size() == 16);
    CHECK(sixteen.front() == 16);
    CHECK(sixteen[1] == 20);  // floor(16 * 2^(1/3))
    CHECK(sixteen.back() == 512);

    cfg.n_max = cfg.n_min;  // degenerate range is rejected
    CHECK_THROWS_AS((void)enc::resolution_levels(cfg), ContractViolation);
    cfg.n_max = 512;
    cfg.levels = 1;
    CHECK_THROWS_AS((void)enc::resolution_levels(cfg), ContractViolation);
}

TEST_CASE("hash index is the XOR-of-products modulo the table size") {
    HashGridConfig cfg;
    cfg.table_size = int64_t{1} << 15;
    CHECK(enc::hash_index({0, 0, 0}, cfg) == 0);
    CHECK(enc::hash_index({1, 0, 0}, cfg) == 1 % cfg.table_size);
    const uint32_t expect = (1u ^ 2654435761u) % static_cast<uint32_t>(cfg.table_size);
    CHECK(enc::hash_index({1, 1, 0}, cfg) == expect);
    CHECK((1u ^ 2654435761u) == 2654435760u);
}

TEST_CASE("hash index stays in range and is reproducible") {
    HashGridConfig cfg;
    cfg.table_size = 4096;
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
        const std::array<int64_t, 3> g{static_cast<int64_t>(rng.uniform_index(100000)),
                                       static_cast<int64_t>(rng.uniform_index(100000)),
                                       static_cast<int64_t>(rng.uniform_index(100000))};
        const uint32_t h = enc::hash_index(g, cfg);
        CHECK(h < 4096);
        CHECK(h == enc::hash_index(g, cfg));
    }
}

TEST_CASE("table size beyond 2^19 is rejected") {
    HashGridConfig cfg;
    cfg.table_size = (int64_t{1} << 19) + 1;
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
    cfg.table_size = int64_t{1} << 19;
    CHECK_NOTHROW(cfg.validate());
}

namespace {

enc::HashGrid small_grid(Rng& rng, int levels = 4, int64_t table = 512) {
    HashGridConfig cfg;
    cfg.levels = levels;
    cfg.n_min = 2;
    cfg.n_max = 16;
    cfg.table_size = table;
    cfg.feat_dim = 2;
    enc::SceneBounds bounds;  // unit cube
    enc::HashGrid grid(cfg, bounds);
    grid.init(rng, 0.5);
    return grid;
}

}  // namespace

TEST_CASE("encoding at a grid vertex returns that vertex's table entry") {
    Rng rng(5);
    enc::HashGrid grid = small_grid(rng);
    const auto& res = grid.resolutions();
    // (0,0,0) is a vertex of every level and hashes to slot 0
    Tensor mu({1, 3});
    const Tensor out = grid.encode_plain(mu);
    for (int l = 0; l < grid.config().levels; ++l)
        for (int f = 0; f < 2; ++f)
            CHECK(out.at(0, l * 2 + f) ==
                  doctest::Approx(grid.tables()[static_cast<size_t>(l)].at(0, f)).epsilon(1e-12));

    // a vertex specific to one level
    const int level = 2;
    const int64_t r = res[static_cast<size_t>(level)];
    Tensor mu2({1, 3});
    mu2.at(0, 0) = 3.0 / static_cast<double>(r);
    mu2.at(0, 1) = 1.0 / static_cast<double>(r);
    mu2.at(0, 2) = 2.0 / static_cast<double>(r);
    const Tensor out2 = grid.encode_plain(mu2);
    const uint32_t h = enc::hash_index({3, 1, 2}, grid.config());
    for (int f = 0; f < 2; ++f)
        CHECK(out2.at(0, level * 2 + f) ==
              doctest::Approx(grid.tables()[level].at(static_cast<int64_t>(h), f))
                  .epsilon(1e-9));
}

TEST_CASE("zero tables encode to the zero vector") {
    Rng rng(5);
    enc::HashGrid grid = small_grid(rng);
    for (auto& t : grid.tables()) t.fill(0.0);
    Tensor mu = random_tensor(rng, {4, 3}, 0.1, 0.9);
    CHECK(grid.encode_plain(mu).max_abs() == 0.0);
}

TEST_CASE("encoding at a cell center averages the eight corners") {
    Rng rng(8);
    enc::HashGrid grid = small_grid(rng, 2, 4096);  // large table: no collisions expected
    const int level = 0;
    const int64_t r = grid.resolutions()[static_cast<size_t>(level)];
    Tensor mu({1, 3});
    for (int c = 0; c < 3; ++c) mu.at(0, c) = (0.5 + (c == 1 ? 1 : 0)) / static_cast<double>(r);
    const Tensor out = grid.encode_plain(mu);
    // the hand-evaluated trilinear weights at a center are all 1/8
    for (int f = 0; f < 2; ++f) {
        double mean = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
            const std::array<int64_t, 3> g{(corner >> 0) & 1, ((corner >> 1) & 1) + 1,
                                           (corner >> 2) & 1};
            mean += grid.tables()[level].at(enc::hash_index(g, grid.config()), f);
        }
        mean /= 8.0;
        CHECK(out.at(0, level * 2 + f) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("local encoding is continuous in the position") {
    Rng rng(9);
    enc::HashGrid grid = small_grid(rng);
    Tensor mu = random_tensor(rng, {1, 3}, 0.2, 0.8);
    const Tensor base = grid.encode_plain(mu);
    double prev = 1e300;
    for (double eps = 1e-2; eps > 1e-7; eps *= 0.5) {
        Tensor shifted = mu;
        shifted.at(0, 0) += eps;
        shifted.at(0, 1) -= 0.5 * eps;
        const double delta = test::max_abs_diff(grid.encode_plain(shifted), base);
        CHECK(delta <= prev + 1e-15);
        prev = delta;
    }
    CHECK(prev < 1e-4);
}

TEST_CASE("local encoding gradients match central differences") {
    Rng rng(12);
    enc::HashGrid grid = small_grid(rng);
    const Tensor mu = random_tensor(rng, {3, 3}, 0.15, 0.85);
    const Tensor weights = random_tensor(rng, {3, grid.config().local_dim()});

    auto f_mu = [&](ad::Graph& g, ad::NodeId x) {
        ad::ParamLeafs leafs(g);
        return g.sum(g.mul(grid.encode(g, leafs, x), g.leaf(weights)));
    };
    CHECK(ad::check_gradient(f_mu, mu, 1e-6) <= 1e-4);

    // against one table: analytic gradient from backward, numeric by
    // perturbing the stored table and re-running the plain encoder
    auto loss_of = [&](const enc::HashGrid& hg) {
        const Tensor out = hg.encode_plain(mu);
        double acc = 0.0;
        for (int64_t i = 0; i < out.size(); ++i) acc += out[i] * weights[i];
        return acc;
    };
    Tensor analytic;
    {
        ad::Graph g;
        ad::ParamLeafs leafs(g);
        const ad::NodeId out = grid.encode(g, leafs, g.leaf(mu));
        const ad::NodeId loss = g.sum(g.mul(out, g.leaf(weights)));
        const auto grads = g.backward(loss);
        analytic = grads[static_cast<size_t>(leafs.of(grid.tables()[0]))];
    }
    enc::HashGrid probe = grid;
    double worst = 0.0;
    const double eps = 1e-6;
    for (int s = 0; s < 40; ++s) {
        const int64_t i =
            static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(analytic.size())));
        const double orig = probe.tables()[0][i];
        probe.tables()[0][i] = orig + eps;
        const double fp = loss_of(probe);
        probe.tables()[0][i] = orig - eps;
        const double fm = loss_of(probe);
        probe.tables()[0][i] = orig;
        const double numeric = (fp - fm) / (2 * eps);
        worst = std::max(worst,
                         std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric)));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("farthest point sampling") {
    SUBCASE("collinear points pick the two extremes") {
        Tensor pts({4, 3});
        for (int64_t i = 0; i < 4; ++i) pts.at(i, 0) = static_cast<double>(i);
        const auto picks = enc::fps(pts, 2, 0);
        CHECK(picks == std::vector<int64_t>{0, 3});
    }
    SUBCASE("k = 1 returns the seed") {
        Tensor pts({5, 3});
        for (int64_t i = 0; i < 5; ++i) pts.at(i, 1) = static_cast<double>(i * i);
        CHECK(enc::fps(pts, 1, 3) == std::vector<int64_t>{3});
    }
    SUBCASE("unit square corners: second pick is the diagonal") {
        Tensor pts({4, 3});
        // (0,0), (1,0), (0,1), (1,1)
        pts.at(1, 0) = 1;
        pts.at(2, 1) = 1;
        pts.at(3, 0) = 1;
        pts.at(3, 1) = 1;
        const auto picks = enc::fps(pts, 2, 0);
        CHECK(picks == std::vector<int64_t>{0, 3});
    }
    SUBCASE("k > N is a contract violation") {
        Tensor pts({3, 3});
        CHECK_THROWS_AS((void)enc::fps(pts, 4, 0), ContractViolation);
    }
}

TEST_CASE("fps satisfies the max-min covering property") {
    Rng rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        const int64_t n = 8 + static_cast<int64_t>(rng.uniform_index(57));
        const int64_t k = 2 + static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n - 2)));
        const Tensor pts = random_tensor(rng, {n, 3});
        const auto centers = enc::fps(pts, k, enc::canonical_seed_index(pts));

        // r: the max-min distance attained by the last greedy pick
        auto d2 = [&](int64_t a, int64_t b) {
            double s = 0;
            for (int c = 0; c < 3; ++c) {
                const double d = pts.at(a, c) - pts.at(b, c);
                s += d * d;
            }
            return s;
        };
        double r2 = 1e300;
        for (size_t j = 0; j + 1 < centers.size(); ++j)
            r2 = std::min(r2, d2(centers.back(), centers[j]));
        // every point is within r of some center
        for (int64_t i = 0; i < n; ++i) {
            double best = 1e300;
            for (int64_t c : centers) best = std::min(best, d2(i, c));
            CHECK(best <= r2 + 1e-9);
        }
    }
}

TEST_CASE("knn groups match an exhaustive sort oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t n = 5 + static_cast<int64_t>(rng.uniform_index(20));
        const Tensor pts = random_tensor(rng, {n, 3});
        const int64_t k = std::min<int64_t>(3, n);
        const std::vector<int64_t> centers{0, n / 2};
        const auto groups = enc::knn_group(pts, centers, k);
        for (size_t ci = 0; ci < centers.size(); ++ci) {
            std::vector<std::pair<double, int64_t>> order;
            for (int64_t i = 0; i < n; ++i) {
                double s = 0;
                for (int c = 0; c < 3; ++c) {
                    const double d = pts.at(i, c) - pts.at(centers[ci], c);
                    s += d * d;
                }
                order.emplace_back(s, i);
            }
            std::sort(order.begin(), order.end());
            for (int64_t j = 0; j < k; ++j)
                CHECK(groups[ci][static_cast<size_t>(j)] == order[static_cast<size_t>(j)].second);
        }
    }
}

TEST_CASE("knn groups do not cross well-separated clusters") {
    Rng rng(23);
    Tensor pts({16, 3});
    for (int64_t i = 0; i < 8; ++i)
        for (int c = 0; c < 3; ++c) pts.at(i, c) = rng.uniform(0, 0.5);
    for (int64_t i = 8; i < 16; ++i) {
        pts.at(i, 0) = 100.0 + rng.uniform(0, 0.5);
        pts.at(i, 1) = rng.uniform(0, 0.5);
        pts.at(i, 2) = rng.uniform(0, 0.5);
    }
    const auto groups = enc::knn_group(pts, {2, 12}, 8);
    for (int64_t idx : groups[0]) CHECK(idx < 8);
    for (int64_t idx : groups[1]) CHECK(idx >= 8);
}

namespace {

enc::GlobalEncoder tiny_encoder(Rng& rng, int g_dim = 16) {
    enc::GlobalEncoderConfig cfg;
    cfg.n_centers = 4;
    cfg.k_neighbors = 4;
    cfg.group_feat_dim = 8;
    cfg.attn_layers = 4;
    cfg.attn_heads = 4;
    cfg.global_dim = g_dim;
    cfg.ffn_mult = 2;
    enc::GlobalEncoder e(cfg);
    e.init(rng);
    return e;
}

Tensor encode_once(const enc::GlobalEncoder& e, const Tensor& pts, const GroupingCache& cache) {
    ad::Graph g;
    ad::ParamLeafs leafs(g);
    return g.value(e.encode(g, leafs, g.leaf(pts), cache));
}

}  // namespace

TEST_CASE("group tokens are invariant to point order inside a group") {
    Rng rng(41);
    const enc::GlobalEncoder e = tiny_encoder(rng);
    const Tensor pts = random_tensor(rng, {12, 3});
    GroupingCache a = enc::build_grouping(pts, 4, 4);
    GroupingCache b = a;
    for (auto& grp : b.groups) std::reverse(grp.begin(), grp.end());
    CHECK(test::bitwise_equal(encode_once(e, pts, a), encode_once(e, pts, b)));
}

TEST_CASE("global feature is invariant to group order") {
    Rng rng(43);
    const enc::GlobalEncoder e = tiny_encoder(rng);
    const Tensor pts = random_tensor(rng, {12, 3});
    GroupingCache a = enc::build_grouping(pts, 4, 4);
    GroupingCache b = a;
    std::rotate(b.centers.begin(), b.centers.begin() + 1, b.centers.end());
    std::rotate(b.groups.begin(), b.groups.begin() + 1, b.groups.end());
    CHECK(test::max_abs_diff(encode_once(e, pts, a), encode_once(e, pts, b)) < 1e-12);
}

TEST_CASE("zero-initialized encoder produces the zero global feature, twice") {
    Rng rng(47);
    enc::GlobalEncoderConfig cfg;
    cfg.n_centers = 1;
    cfg.k_neighbors = 1;
    cfg.group_feat_dim = 4;
    cfg.global_dim = 8;
    enc::GlobalEncoder e(cfg);  // weights default to zero, LN gains to one
    Tensor pts({1, 3});
    GroupingCache cache;
    cache.centers = {0};
    cache.groups = {{0}};
    const Tensor g1 = encode_once(e, pts, cache);
    const Tensor g2 = encode_once(e, pts, cache);
    CHECK(g1.max_abs() == 0.0);
    CHECK(test::bitwise_equal(g1, g2));
}

TEST_CASE("global feature is invariant under particle relabeling") {
    Rng rng(53);
    const enc::GlobalEncoder e = tiny_encoder(rng);
    const int64_t n = 24;
    const Tensor pts = random_tensor(rng, {n, 3});
    const Tensor g_a = encode_once(e, pts, enc::build_grouping(pts, 4, 4));

    // relabel with a fixed permutation
    Tensor shuffled(pts.shape());
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = (i * 7 + 3) % n;
    for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) shuffled.at(i, c) = pts.at(perm[static_cast<size_t>(i)], c);
    const Tensor g_b = encode_once(e, shuffled, enc::build_grouping(shuffled, 4, 4));
    CHECK(test::max_abs_diff(g_a, g_b) < 1e-9);
}

TEST_CASE("empty grouping is a contract violation") {
    Rng rng(57);
    const enc::GlobalEncoder e = tiny_encoder(rng);
    const Tensor pts = random_tensor(rng, {4, 3});
    ad::Graph g;
    ad::ParamLeafs leafs(g);
    GroupingCache cache;
    CHECK_THROWS_AS((void)e.encode(g, leafs, g.leaf(pts), cache), ContractViolation);
}

TEST_CASE("global encoder gradients match central differences") {
    Rng rng(61);
    const enc::GlobalEncoder e = tiny_encoder(rng, 8);
    const Tensor pts = random_tensor(rng, {10, 3});
    const GroupingCache cache = enc::build_grouping(pts, 3, 3);
    const Tensor weights = random_tensor(rng, {1, 8});
    auto f = [&](ad::Graph& g, ad::NodeId x) {
        ad::ParamLeafs leafs(g);
        return g.sum(g.mul(e.encode(g, leafs, x, cache), g.leaf(weights)));
    };
    CHECK(ad::check_gradient(f, pts, 1e-5) <= 1e-4);
}

TEST_CASE("regroup schedule") {
    CHECK(enc::regroup_schedule(enc::RegroupEvent::Iteration, 500));
    CHECK_FALSE(enc::regroup_schedule(enc::RegroupEvent::Iteration, 501));
    CHECK(enc::regroup_schedule(enc::RegroupEvent::Iteration, 1000));
    CHECK_FALSE(enc::regroup_schedule(enc::RegroupEvent::Iteration, 0));
    CHECK(enc::regroup_schedule(enc::RegroupEvent::Clone, 123));
    CHECK(enc::regroup_schedule(enc::RegroupEvent::Split, 7));
    CHECK(enc::regroup_schedule(enc::RegroupEvent::Delete, 9999));
}

TEST_CASE("grouping cache round-trips through the checkpoint blob") {
    Rng rng(71);
    const Tensor pts = random_tensor(rng, {20, 3});
    const GroupingCache a = enc::build_grouping(pts, 5, 4);
    const GroupingCache b = GroupingCache::from_blob(a.to_blob());
    CHECK(a.centers == b.centers);
    REQUIRE(a.groups.size() == b.groups.size());
    for (size_t i = 0; i < a.groups.size(); ++i) CHECK(a.groups[i] == b.groups[i]);
}
