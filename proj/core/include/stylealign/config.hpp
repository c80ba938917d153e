#pragma once

// Flat "key = value" experiment configs with typed access and unknown-key
// rejection: consumers declare the keys they read, then finish() rejects
// anything left over. Configs hash stably for provenance records.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stylealign {

uint64_t fnv1a64(const std::string& s);

class Config {
public:
    Config() = default;

    static Config parse_string(const std::string& text);
    static Config parse_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    int64_t get_int(const std::string& key, int64_t def);
    double get_double(const std::string& key, double def);
    std::string get_string(const std::string& key, const std::string& def);
    bool get_bool(const std::string& key, bool def);
    uint64_t get_u64(const std::string& key, uint64_t def);

    // Throws if any parsed key was never read through a getter.
    void finish() const;

    // Canonical "key = value" text, sorted by key.
    std::string canonical() const;
    uint64_t hash() const { return fnv1a64(canonical()); }

private:
    const std::string* find(const std::string& key);
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> touched_;
};

// Writes config hash, seeds, and lineage notes next to experiment outputs.
void write_provenance(const std::string& dir, const Config& cfg,
                      const std::vector<std::string>& lineage_lines);

} // namespace stylealign
