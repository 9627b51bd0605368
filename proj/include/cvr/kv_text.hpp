#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cvr {

// Ordered "key=value" records, one per line; '#' starts a comment. Used for
// configs, reports and checkpoint headers.
class KeyValues {
public:
    static KeyValues parse(std::string_view text);
    static KeyValues load(const std::filesystem::path& path);

    void set(const std::string& key, std::string value);
    void set(const std::string& key, const char* value) { set(key, std::string(value)); }
    void set(const std::string& key, double value);
    void set(const std::string& key, bool value);
    void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, long long value);
    void set(const std::string& key, std::size_t value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, const std::vector<std::size_t>& values);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const;

    // Values from `overrides` replace or extend this record set.
    void merge(const KeyValues& overrides);

    // Throws ConfigError naming any key not in `known`.
    void require_known(const std::vector<std::string>& known, std::string_view context) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    std::string str() const;

private:
    const std::string* find(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Shortest round-trip decimal for a double.
std::string format_double(double v);

}  // namespace cvr
