#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

namespace anderson {

/// INI-style experiment configuration: [section] headers, key = value lines,
/// ';' or '#' comments. Lookups are by "section.key"; typed getters throw
/// ConfigError naming the key on malformed values.
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long get_int(const std::string& key, long fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma-separated numbers.
    std::vector<double> get_list(const std::string& key) const;
    std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const;

    /// "section.key=value" lines, sorted, with whitespace removed around
    /// commas and runs of blanks collapsed. Formatting-only edits leave it unchanged.
    std::string canonical() const;
    std::uint64_t hash() const;  ///< FNV-1a 64 of canonical()
    std::string hash_hex() const;

    /// Keys present in the file that no getter has asked for.
    std::vector<std::string> unused_keys() const;

private:
    boost::property_tree::ptree tree_;
    mutable std::set<std::string> used_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace anderson
