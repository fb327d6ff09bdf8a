#include "mmc/config.hpp"

#include <fstream>

namespace mmc {

namespace {

std::string strip(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, std::string> read_config_kv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config file: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = strip(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        const std::string key = strip(body.substr(0, eq));
        const std::string value = strip(body.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument(path.string() + ":" +
                                                     std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                        ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

PipelineConfig resolve_config(const std::optional<std::filesystem::path>& file,
                              const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> kv;
    if (file) kv = read_config_kv(*file);
    for (const auto& [k, v] : overrides) kv[k] = v;
    return config_from_map(kv);
}

std::string render_config(const PipelineConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : config_to_map(cfg)) out += k + " = " + v + "\n";
    return out;
}

}  // namespace mmc
