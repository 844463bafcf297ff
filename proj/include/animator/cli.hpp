#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace animator {

inline constexpr const char* kVersion = "0.1.0";

// Merged configuration tree with the source of every key ("default", "file" or "flag").
struct RunConfig {
    nlohmann::json values;
    std::map<std::string, std::string> provenance;  // dotted key -> source

    const nlohmann::json& at(const std::string& dotted) const;
    template <typename T>
    T get(const std::string& dotted) const {
        return at(dotted).get<T>();
    }
    // Overwrites an existing key; unknown keys raise UsageError.
    void set(const std::string& dotted, const nlohmann::json& v, const std::string& source);
};

RunConfig default_run_config();
// Applies a config file tree; unknown sections or keys and type changes raise UsageError.
void merge_config(RunConfig& cfg, const nlohmann::json& file);
std::uint64_t config_hash(const RunConfig& cfg);

// Independent RNG stream for a named purpose, derived from the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

// Content hash of a file, or of every regular file below a directory (sorted by path).
std::uint64_t hash_path(const std::filesystem::path& p);

// Entry point shared by the executable and the tests. Exit codes: 0 success,
// 1 runtime failure, 2 usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace animator
