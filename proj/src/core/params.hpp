#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace ods::ad {

// Learning-rate / bookkeeping group a parameter belongs to.
enum class ParamGroup : uint8_t {
    KernelPos,
    KernelRot,
    KernelScale,
    KernelOpacity,
    KernelColor,
    HashTable,
    Encoder,
    OdeField,
    Decoder,
};

struct ParamEntry {
    std::string name;
    ParamGroup group;
    Tensor* value;  // owned by the module that registered it
};

// Non-owning registry of every trainable array, in a stable order shared by
// the optimizer state and the checkpoint writer.
class ParamStore {
public:
    size_t add(std::string name, ParamGroup group, Tensor* value) {
        ODS_REQUIRE(value != nullptr, "ParamStore: null tensor");
        for (const auto& e : entries_) ODS_REQUIRE(e.name != name, "duplicate parameter: " + name);
        entries_.push_back(ParamEntry{std::move(name), group, value});
        return entries_.size() - 1;
    }

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }
    size_t size() const { return entries_.size(); }

    int64_t find(const std::string& name) const {
        for (size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return static_cast<int64_t>(i);
        return -1;
    }

private:
    std::vector<ParamEntry> entries_;
};

}  // namespace ods::ad
