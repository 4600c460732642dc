#include "anderson/io.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include "anderson/common.hpp"
#include "anderson/config.hpp"

namespace anderson {

namespace fs = std::filesystem;

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void CsvTable::add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw std::logic_error("csv: row width does not match header");
    rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) out += ',';
            out += r[i];
        }
        out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
}

void CsvTable::write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << str();
    }
    fs::rename(tmp, path);
}

CsvTable CsvTable::read(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("csv: cannot open " + path.string());
    auto split = [](const std::string& s) {
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            const std::size_t end = s.find(',', start);
            f.push_back(s.substr(start, end - start));
            if (end == std::string::npos) break;
            start = end + 1;
        }
        return f;
    };
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("csv: empty file " + path.string());
    CsvTable t(split(line));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split(line);
        if (row.size() != t.header_.size()) throw ConfigError("csv: ragged row in " + path.string());
        t.rows_.push_back(std::move(row));
    }
    return t;
}

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
        if (header_[i] == name) return i;
    throw ConfigError("csv: missing column " + name);
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string make_run_id(const std::string& command, const std::string& config_hash, std::uint64_t seed) {
    return hex64(fnv1a64(command + "\n" + config_hash + "\n" + std::to_string(seed)));
}

void append_manifest(const fs::path& dir, const RunManifest& m) {
    fs::create_directories(dir);
    std::ofstream out(dir / ("manifest_" + m.run_id + ".txt"), std::ios::app);
    if (!out) throw std::runtime_error("cannot append manifest in " + dir.string());
    out << "[run]\n";
    out << "run_id=" << m.run_id << "\n";
    out << "command=" << m.command << "\n";
    out << "config_path=" << m.config_path << "\n";
    out << "config_hash=" << m.config_hash << "\n";
    out << "schema_version=" << m.schema_version << "\n";
    for (const auto& [k, v] : m.seeds) out << "seed." << k << "=" << v << "\n";
    out << "start=" << m.start_time << "\n";
    out << "end=" << m.end_time << "\n";
    for (const auto& [k, v] : m.module_versions) out << "version." << k << "=" << v << "\n";
    for (const auto& o : m.outputs) out << "output=" << o << "\n";
    out << "exit_code=" << m.exit_code << "\n";
    if (!m.message.empty()) out << "message=" << m.message << "\n";
    out << "\n";
}

void write_registry(const fs::path& path, const std::map<std::string, std::string>& values,
                    const std::map<std::string, std::string>& provenance) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        for (const auto& [k, v] : values) out << k << "=" << v << "\n";
        out << "[provenance]\n";
        for (const auto& [k, v] : provenance) out << k << "=" << v << "\n";
    }
    fs::rename(tmp, path);
}

std::map<std::string, std::string> read_registry(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("registry: cannot open " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line == "[provenance]") break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

}  // namespace anderson
