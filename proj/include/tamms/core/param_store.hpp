#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tamms/core/tensor.hpp"

namespace tamms {

// Parameter partitions. The numeric values are the checkpoint tag bytes.
//   kStructural        θ_st: 3D control blocks.
//   kSemanticTemporal  θ_s-t: semantic processors, gates, temporal transformers, TAM adapters.
//   kFrozen            never updated by the optimizer.
//   kBackbone          the denoising U-Net while it is being pretrained; retagged kFrozen afterwards.
enum class Partition : std::uint8_t {
    kStructural = 0,
    kSemanticTemporal = 1,
    kFrozen = 2,
    kBackbone = 3,
};

const char* partition_name(Partition p);
Partition partition_from_tag(std::uint8_t tag);

struct ParamEntry {
    Tensor value;
    Tensor grad;
    Tensor first_moment;
    Tensor second_moment;
    Partition partition = Partition::kFrozen;
    std::uint64_t step = 0;
};

// Named parameters with per-partition trainability. Iteration order is the
// lexicographic order of names, which keeps checkpoints and updates deterministic.
class ParamStore {
public:
    ParamEntry& add(const std::string& name, Tensor init, Partition partition);

    bool contains(std::string_view name) const;
    ParamEntry& entry(std::string_view name);
    const ParamEntry& entry(std::string_view name) const;
    const Tensor& value(std::string_view name) const { return entry(name).value; }
    Tensor& mutable_value(std::string_view name) { return entry(name).value; }

    // kFrozen is never trainable; the flag for it is ignored.
    void set_trainable(Partition partition, bool trainable);
    bool is_trainable(Partition partition) const;
    bool is_trainable(std::string_view name) const { return is_trainable(entry(name).partition); }
    void freeze_all();

    void retag(std::string_view name, Partition partition);
    void zero_grad();

    std::vector<std::string> names() const;
    std::vector<std::string> names_in(Partition partition) const;
    std::size_t size() const { return entries_.size(); }
    std::size_t total_elements() const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::map<std::string, ParamEntry, std::less<>> entries_;
    bool trainable_[4] = {false, false, false, false};
};

}  // namespace tamms
