#include "core/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ods::ad {

namespace {

constexpr char kMagic[8] = {'O', 'D', 'S', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

template <typename T>
void wr(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void rd(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void wr_string(std::ofstream& os, const std::string& s) {
    wr(os, static_cast<uint64_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string rd_string(std::ifstream& is) {
    uint64_t n = 0;
    rd(is, n);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

void wr_tensor(std::ofstream& os, const Tensor& t) {
    wr(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) wr(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor rd_tensor(std::ifstream& is) {
    uint32_t rank = 0;
    rd(is, rank);
    if (rank > 8) throw IoError("checkpoint: implausible tensor rank");
    std::vector<int64_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) rd(is, shape[i]);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointBlob& blob) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 8);
    wr(os, kVersion);
    wr(os, uint32_t{0});
    wr_string(os, blob.config_json);
    for (double v : blob.bbox) wr(os, v);

    wr(os, static_cast<uint32_t>(blob.tensors.size()));
    for (const auto& nt : blob.tensors) {
        wr_string(os, nt.name);
        wr(os, nt.group);
        wr_tensor(os, nt.value);
    }

    wr(os, static_cast<uint8_t>(blob.has_adam ? 1 : 0));
    if (blob.has_adam) {
        ODS_REQUIRE(blob.adam_m.size() == blob.tensors.size() &&
                        blob.adam_v.size() == blob.tensors.size(),
                    "checkpoint: adam moments must align with tensors");
        wr(os, blob.adam_step_count);
        wr(os, blob.adam_beta1);
        wr(os, blob.adam_beta2);
        wr(os, blob.adam_eps);
        for (size_t i = 0; i < blob.adam_m.size(); ++i) {
            wr_tensor(os, blob.adam_m[i]);
            wr_tensor(os, blob.adam_v[i]);
        }
    }

    wr(os, static_cast<uint8_t>(blob.has_grouping ? 1 : 0));
    if (blob.has_grouping) {
        wr(os, static_cast<uint64_t>(blob.grouping.centers.size()));
        for (int64_t c : blob.grouping.centers) wr(os, c);
        wr(os, blob.grouping.k);
        wr(os, static_cast<uint64_t>(blob.grouping.groups_flat.size()));
        for (int64_t v : blob.grouping.groups_flat) wr(os, v);
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

CheckpointBlob load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    uint32_t version = 0, reserved = 0;
    rd(is, version);
    rd(is, reserved);
    if (version != kVersion) throw IoError("unsupported checkpoint version");

    CheckpointBlob blob;
    blob.config_json = rd_string(is);
    for (double& v : blob.bbox) rd(is, v);

    uint32_t count = 0;
    rd(is, count);
    blob.tensors.resize(count);
    for (auto& nt : blob.tensors) {
        nt.name = rd_string(is);
        rd(is, nt.group);
        nt.value = rd_tensor(is);
    }

    uint8_t has_adam = 0;
    rd(is, has_adam);
    blob.has_adam = has_adam != 0;
    if (blob.has_adam) {
        rd(is, blob.adam_step_count);
        rd(is, blob.adam_beta1);
        rd(is, blob.adam_beta2);
        rd(is, blob.adam_eps);
        blob.adam_m.resize(count);
        blob.adam_v.resize(count);
        for (uint32_t i = 0; i < count; ++i) {
            blob.adam_m[i] = rd_tensor(is);
            blob.adam_v[i] = rd_tensor(is);
        }
    }

    uint8_t has_grouping = 0;
    rd(is, has_grouping);
    blob.has_grouping = has_grouping != 0;
    if (blob.has_grouping) {
        uint64_t nc = 0;
        rd(is, nc);
        blob.grouping.centers.resize(nc);
        for (auto& c : blob.grouping.centers) rd(is, c);
        rd(is, blob.grouping.k);
        uint64_t ng = 0;
        rd(is, ng);
        blob.grouping.groups_flat.resize(ng);
        for (auto& v : blob.grouping.groups_flat) rd(is, v);
    }
    if (!is) throw IoError("truncated checkpoint: " + path);
    return blob;
}

}  // namespace ods::ad
