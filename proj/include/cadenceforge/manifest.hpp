#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cadenceforge/common.hpp"

namespace cforge {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// FNV-1a over the canonical config dump; enough to spot config drift.
inline std::string config_hash(const nlohmann::json& cfg) {
    const std::string s = cfg.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Re-run record written next to every command's outputs. The timestamp is the
// only non-deterministic field; determinism comparisons must ignore it.
struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    nlohmann::json config;   // everything needed to re-run identically
    nlohmann::json inputs;   // resolved input paths
    nlohmann::json outputs;  // files produced (relative to the manifest)

    nlohmann::json to_json() const {
        return {{"command", command},
                {"version", kVersion},
                {"seed", seed},
                {"config_hash", config_hash(config)},
                {"config", config},
                {"inputs", inputs},
                {"outputs", outputs},
                {"timestamp", utc_timestamp()}};
    }
};

// Write-to-temp plus rename, so a crash never leaves a torn manifest.
inline void write_manifest(const std::string& dir, const RunManifest& m) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path final_path = fs::path(dir) / "manifest.json";
    const fs::path tmp_path = fs::path(dir) / ".manifest.json.tmp";
    {
        std::ofstream os(tmp_path);
        require(bool(os), "cannot write manifest in " + dir);
        os << m.to_json().dump(2) << "\n";
    }
    fs::rename(tmp_path, final_path);
}

}  // namespace cforge
