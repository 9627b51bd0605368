#include "cvr/param_store.hpp"

#include "cvr/errors.hpp"

namespace cvr {

Tensor ParamStore::add(const std::string& path, Tensor tensor, bool trainable) {
    if (path.empty()) throw ConfigError("parameter path must not be empty");
    if (!tensor.defined() || !tensor.is_leaf()) {
        throw StateError("parameter '" + path + "' must be a defined leaf tensor");
    }
    if (contains(path)) throw ConfigError("duplicate parameter path '" + path + "'");
    tensor.set_requires_grad(trainable);
    entries_.emplace(path, Entry{tensor, trainable});
    return tensor;
}

const Tensor& ParamStore::get(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw IndexError("no parameter named '" + path + "'");
    return it->second.tensor;
}

Tensor& ParamStore::get(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw IndexError("no parameter named '" + path + "'");
    return it->second.tensor;
}

void ParamStore::set_trainable(const std::string& path, bool trainable) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw IndexError("no parameter named '" + path + "'");
    it->second.trainable = trainable;
    it->second.tensor.set_requires_grad(trainable);
}

std::size_t ParamStore::parameter_count(bool trainable_only) const {
    std::size_t total = 0;
    for (const auto& [path, entry] : entries_) {
        if (!trainable_only || entry.trainable) total += entry.tensor.numel();
    }
    return total;
}

void ParamStore::zero_grad() {
    for (auto& [path, entry] : entries_) {
        if (entry.trainable) entry.tensor.zero_grad();
    }
}

}  // namespace cvr
