#include "core/gaussians.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace ods::gs {

namespace {
constexpr char kSnapshotMagic[8] = {'O', 'D', 'S', 'P', 'A', 'R', 'T', '\0'};
constexpr uint32_t kSnapshotVersion = 1;
}  // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double y) {
    ODS_REQUIRE(y > 0.0 && y < 1.0, "logit: argument must be in (0,1)");
    return std::log(y / (1.0 - y));
}

Eigen::Matrix3d quat_to_rot(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Vector4d rot_to_quat(const Eigen::Matrix3d& m) {
    Eigen::Quaterniond q(m);
    q.normalize();
    return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

Eigen::Vector4d quat_mul(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
    const double aw = a[0], ax = a[1], ay = a[2], az = a[3];
    const double bw = b[0], bx = b[1], by = b[2], bz = b[3];
    return Eigen::Vector4d(aw * bw - ax * bx - ay * by - az * bz,
                           aw * bx + ax * bw + ay * bz - az * by,
                           aw * by - ax * bz + ay * bw + az * bx,
                           aw * bz + ax * by - ay * bx + az * bw);
}

Eigen::Matrix3d build_covariance(const Eigen::Vector4d& unit_q, const Eigen::Vector3d& scale) {
    const Eigen::Matrix3d r = quat_to_rot(unit_q);
    const Eigen::Matrix3d m = r * scale.asDiagonal();
    return m * m.transpose();
}

GaussianKernel normalize_kernel(const GaussianKernel& raw) {
    GaussianKernel k;
    const double n = raw.rot.norm();
    ODS_REQUIRE(n > 1e-12, "normalize_kernel: zero quaternion");
    k.mu = raw.mu;
    k.rot = raw.rot / n;
    k.scale = raw.scale.array().exp();
    k.opacity = sigmoid(raw.opacity);
    k.color = raw.color.array().min(1.0).max(0.0);
    return k;
}

ParticleSet::ParticleSet(int64_t count, int64_t latent)
    : pos({count, 3}),
      rot_raw({count, 4}),
      log_scale({count, 3}),
      opacity_raw({count, 1}),
      color_raw({count, 3}),
      latent_local({count, latent}) {
    for (int64_t i = 0; i < count; ++i) rot_raw.at(i, 0) = 1.0;
}

GaussianKernel ParticleSet::raw_kernel(int64_t i) const {
    ODS_REQUIRE(i >= 0 && i < size(), "particle index out of range");
    GaussianKernel k;
    k.mu = Eigen::Vector3d(pos.at(i, 0), pos.at(i, 1), pos.at(i, 2));
    k.rot = Eigen::Vector4d(rot_raw.at(i, 0), rot_raw.at(i, 1), rot_raw.at(i, 2), rot_raw.at(i, 3));
    k.scale =
        Eigen::Vector3d(log_scale.at(i, 0), log_scale.at(i, 1), log_scale.at(i, 2));
    k.opacity = opacity_raw.at(i, 0);
    k.color = Eigen::Vector3d(color_raw.at(i, 0), color_raw.at(i, 1), color_raw.at(i, 2));
    return k;
}

GaussianKernel ParticleSet::kernel(int64_t i) const { return normalize_kernel(raw_kernel(i)); }

void ParticleSet::set_raw_kernel(int64_t i, const GaussianKernel& raw) {
    ODS_REQUIRE(i >= 0 && i < size(), "particle index out of range");
    for (int j = 0; j < 3; ++j) pos.at(i, j) = raw.mu[j];
    for (int j = 0; j < 4; ++j) rot_raw.at(i, j) = raw.rot[j];
    for (int j = 0; j < 3; ++j) log_scale.at(i, j) = raw.scale[j];
    opacity_raw.at(i, 0) = raw.opacity;
    for (int j = 0; j < 3; ++j) color_raw.at(i, j) = raw.color[j];
}

void ParticleSet::remap_rows(const std::vector<int64_t>& source_row) {
    const int64_t old_n = size();
    const int64_t new_n = static_cast<int64_t>(source_row.size());
    auto remap = [&](Tensor& t) {
        const int64_t cols = t.dim(1);
        Tensor out({new_n, cols});
        for (int64_t i = 0; i < new_n; ++i) {
            const int64_t src = source_row[static_cast<size_t>(i)];
            if (src < 0) continue;
            ODS_REQUIRE(src < old_n, "particle remap: source out of range");
            for (int64_t j = 0; j < cols; ++j) out.at(i, j) = t.at(src, j);
        }
        t = std::move(out);
    };
    remap(pos);
    remap(rot_raw);
    remap(log_scale);
    remap(opacity_raw);
    remap(color_raw);
    remap(latent_local);
}

namespace {

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void ParticleSet::save_snapshot(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open particle snapshot for writing: " + path);
    os.write(kSnapshotMagic, 8);
    write_pod(os, kSnapshotVersion);
    const uint64_t n = static_cast<uint64_t>(size());
    const uint32_t lf = static_cast<uint32_t>(latent_dim());
    write_pod(os, n);
    write_pod(os, lf);
    for (int64_t i = 0; i < size(); ++i) {
        const GaussianKernel k = kernel(i);
        os.write(reinterpret_cast<const char*>(k.mu.data()), 3 * sizeof(double));
        os.write(reinterpret_cast<const char*>(k.rot.data()), 4 * sizeof(double));
        os.write(reinterpret_cast<const char*>(k.scale.data()), 3 * sizeof(double));
        write_pod(os, k.opacity);
        os.write(reinterpret_cast<const char*>(k.color.data()), 3 * sizeof(double));
        for (int64_t j = 0; j < latent_dim(); ++j) write_pod(os, latent_local.at(i, j));
    }
    if (!os) throw IoError("failed writing particle snapshot: " + path);
}

ParticleSet ParticleSet::load_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open particle snapshot: " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::memcmp(magic, kSnapshotMagic, 8) != 0)
        throw IoError("not a particle snapshot: " + path);
    uint32_t version = 0;
    read_pod(is, version);
    if (version != kSnapshotVersion) throw IoError("unsupported snapshot version");
    uint64_t n = 0;
    uint32_t lf = 0;
    read_pod(is, n);
    read_pod(is, lf);
    ParticleSet set(static_cast<int64_t>(n), static_cast<int64_t>(lf));
    for (uint64_t i = 0; i < n; ++i) {
        GaussianKernel k;
        is.read(reinterpret_cast<char*>(k.mu.data()), 3 * sizeof(double));
        is.read(reinterpret_cast<char*>(k.rot.data()), 4 * sizeof(double));
        is.read(reinterpret_cast<char*>(k.scale.data()), 3 * sizeof(double));
        read_pod(is, k.opacity);
        is.read(reinterpret_cast<char*>(k.color.data()), 3 * sizeof(double));
        // back to the raw parameterization
        GaussianKernel raw = k;
        raw.scale = k.scale.array().log();
        raw.opacity = logit(std::clamp(k.opacity, 1e-9, 1.0 - 1e-9));
        set.set_raw_kernel(static_cast<int64_t>(i), raw);
        for (uint32_t j = 0; j < lf; ++j)
            read_pod(is, set.latent_local.at(static_cast<int64_t>(i), j));
    }
    if (!is) throw IoError("truncated particle snapshot: " + path);
    return set;
}

}  // namespace ods::gs
