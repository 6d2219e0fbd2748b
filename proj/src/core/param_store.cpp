#include "tamms/core/param_store.hpp"

#include "tamms/core/errors.hpp"

namespace tamms {

const char* partition_name(Partition p) {
    switch (p) {
        case Partition::kStructural: return "structural";
        case Partition::kSemanticTemporal: return "semantic_temporal";
        case Partition::kFrozen: return "frozen";
        case Partition::kBackbone: return "backbone";
    }
    return "unknown";
}

Partition partition_from_tag(std::uint8_t tag) {
    if (tag > 3) throw ValidationError("unknown partition tag " + std::to_string(tag));
    return static_cast<Partition>(tag);
}

ParamEntry& ParamStore::add(const std::string& name, Tensor init, Partition partition) {
    if (entries_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    ParamEntry e;
    e.grad = Tensor(init.shape());
    e.first_moment = Tensor(init.shape());
    e.second_moment = Tensor(init.shape());
    e.value = std::move(init);
    e.partition = partition;
    return entries_.emplace(name, std::move(e)).first->second;
}

bool ParamStore::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

ParamEntry& ParamStore::entry(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return it->second;
}

const ParamEntry& ParamStore::entry(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return it->second;
}

void ParamStore::set_trainable(Partition partition, bool trainable) {
    if (partition == Partition::kFrozen) return;
    trainable_[static_cast<int>(partition)] = trainable;
}

bool ParamStore::is_trainable(Partition partition) const {
    return partition != Partition::kFrozen && trainable_[static_cast<int>(partition)];
}

void ParamStore::freeze_all() {
    for (bool& t : trainable_) t = false;
}

void ParamStore::retag(std::string_view name, Partition partition) { entry(name).partition = partition; }

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

std::vector<std::string> ParamStore::names_in(Partition partition) const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) {
        if (e.partition == partition) out.push_back(name);
    }
    return out;
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.numel();
    return n;
}

}  // namespace tamms
