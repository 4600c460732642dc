#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace anderson {

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite values.
std::string format_double(double v);

/// Comma-separated table. Values are written as given; fields must not
/// contain commas or newlines.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
    void add_row(std::vector<std::string> row);
    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }
    std::string str() const;
    /// Written to a temporary file and renamed into place.
    void write(const std::filesystem::path& path) const;
    static CsvTable read(const std::filesystem::path& path);
    /// Column index by name; throws ConfigError when absent.
    std::size_t column(const std::string& name) const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Provenance of one command invocation, appended to manifest_<run_id>.txt.
struct RunManifest {
    std::string run_id;
    std::string command;
    std::string config_path;
    std::string config_hash;
    int schema_version = 1;
    std::map<std::string, std::string> seeds;
    std::string start_time, end_time;  ///< UTC, ISO 8601
    std::map<std::string, std::string> module_versions;
    std::vector<std::string> outputs;
    int exit_code = 0;
    std::string message;
};

/// Appends one "[run]" block; earlier blocks are never rewritten.
void append_manifest(const std::filesystem::path& dir, const RunManifest& m);

std::string utc_timestamp();

/// Deterministic run id from the command, canonical config hash and seed.
std::string make_run_id(const std::string& command, const std::string& config_hash, std::uint64_t seed);

/// Plain-text key=value file with a provenance block after a "[provenance]" line.
void write_registry(const std::filesystem::path& path, const std::map<std::string, std::string>& values,
                    const std::map<std::string, std::string>& provenance);
/// Values above the provenance line.
std::map<std::string, std::string> read_registry(const std::filesystem::path& path);

}  // namespace anderson
