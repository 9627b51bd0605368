#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "cvr/tensor.hpp"

namespace cvr {

// Named parameters, iterated in lexicographic path order.
class ParamStore {
public:
    struct Entry {
        Tensor tensor;
        bool trainable = true;
    };

    // Registers a leaf tensor under a unique path and returns the stored handle.
    Tensor add(const std::string& path, Tensor tensor, bool trainable = true);

    bool contains(const std::string& path) const { return entries_.count(path) != 0; }
    const Tensor& get(const std::string& path) const;
    Tensor& get(const std::string& path);
    void set_trainable(const std::string& path, bool trainable);

    std::size_t size() const { return entries_.size(); }
    std::size_t parameter_count(bool trainable_only = false) const;

    // Every trainable entry gets a zero gradient of matching shape.
    void zero_grad();

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

private:
    std::map<std::string, Entry> entries_;
};

}  // namespace cvr
