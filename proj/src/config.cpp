#include "anderson/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

#include "anderson/common.hpp"

namespace anderson {

namespace {

std::string normalize_value(const std::string& v) {
    std::string out;
    bool blank = false;
    for (char c : v) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            blank = true;
            continue;
        }
        if (c == ',') {
            blank = false;
            out += ',';
            continue;
        }
        if (blank && !out.empty() && out.back() != ',') out += ' ';
        blank = false;
        out += c;
    }
    return out;
}

double parse_double(const std::string& key, const std::string& raw) {
    const std::string s = normalize_value(raw);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw ConfigError("config: " + key + " = '" + raw + "' is not a number");
    return v;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

Config Config::parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

bool Config::has(const std::string& key) const { return tree_.get_child_optional(key).has_value(); }

std::string Config::get_string(const std::string& key) const {
    auto v = tree_.get_optional<std::string>(key);
    if (!v) throw ConfigError("config: missing required key " + key);
    used_.insert(key);
    return normalize_value(*v);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}

double Config::get_double(const std::string& key) const { return parse_double(key, get_string(key)); }

double Config::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long Config::get_int(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key);
    long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw ConfigError("config: " + key + " = '" + s + "' is not an integer");
    return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw ConfigError("config: " + key + " = '" + s + "' is not an unsigned integer");
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string s = get_string(key);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    throw ConfigError("config: " + key + " = '" + s + "' is not a boolean");
}

std::vector<double> Config::get_list(const std::string& key) const {
    const std::string s = get_string(key);
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find(',', start), s.size());
        out.push_back(parse_double(key, s.substr(start, end - start)));
        start = end + 1;
    }
    return out;
}

std::vector<double> Config::get_list(const std::string& key, const std::vector<double>& fallback) const {
    return has(key) ? get_list(key) : fallback;
}

std::string Config::canonical() const {
    std::vector<std::string> lines;
    for (const auto& [section, child] : tree_) {
        if (child.empty()) {
            lines.push_back(section + "=" + normalize_value(child.data()));
            continue;
        }
        for (const auto& [key, leaf] : child) lines.push_back(section + "." + key + "=" + normalize_value(leaf.data()));
    }
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

std::string Config::hash_hex() const { return hex64(hash()); }

std::vector<std::string> Config::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [section, child] : tree_) {
        if (child.empty()) {
            if (!used_.count(section)) out.push_back(section);
            continue;
        }
        for (const auto& [key, leaf] : child) {
            const std::string full = section + "." + key;
            if (!used_.count(full)) out.push_back(full);
        }
    }
    return out;
}

}  // namespace anderson
