#include "stylealign/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stylealign {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) +
                                                  ": empty key");
        if (cfg.values_.count(key))
            throw std::runtime_error("config: duplicate key '" + key + "'");
        cfg.values_[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

const std::string* Config::find(const std::string& key) {
    touched_[key] = true;
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

int64_t Config::get_int(const std::string& key, int64_t def) {
    const std::string* v = find(key);
    if (!v) return def;
    try {
        size_t pos = 0;
        int64_t r = std::stoll(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' is not an integer: " + *v);
    }
}

double Config::get_double(const std::string& key, double def) {
    const std::string* v = find(key);
    if (!v) return def;
    try {
        size_t pos = 0;
        double r = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' is not a number: " + *v);
    }
}

std::string Config::get_string(const std::string& key, const std::string& def) {
    const std::string* v = find(key);
    return v ? *v : def;
}

bool Config::get_bool(const std::string& key, bool def) {
    const std::string* v = find(key);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw std::runtime_error("config: key '" + key + "' is not a boolean: " + *v);
}

uint64_t Config::get_u64(const std::string& key, uint64_t def) {
    const std::string* v = find(key);
    if (!v) return def;
    try {
        size_t pos = 0;
        uint64_t r = std::stoull(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' is not an unsigned integer: " + *v);
    }
}

void Config::finish() const {
    for (const auto& [key, value] : values_) {
        (void)value;
        if (!touched_.count(key))
            throw std::runtime_error("config: unknown key '" + key + "'");
    }
}

std::string Config::canonical() const {
    std::ostringstream out;
    for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
    return out.str();
}

void write_provenance(const std::string& dir, const Config& cfg,
                      const std::vector<std::string>& lineage_lines) {
    std::filesystem::create_directories(dir);
    std::ofstream f(std::filesystem::path(dir) / "provenance");
    f << "config_hash = " << cfg.hash() << "\n";
    f << "config:\n" << cfg.canonical();
    if (!lineage_lines.empty()) {
        f << "lineage:\n";
        for (const auto& l : lineage_lines) f << "  " << l << "\n";
    }
}

} // namespace stylealign
