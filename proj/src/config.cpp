#include "hvox/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hvox {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ValueError(strf("config: key '%s': cannot parse '%s' as unsigned integer",
                              key.c_str(), v.c_str()));
    }
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ValueError(strf("config: key '%s': cannot parse '%s' as integer", key.c_str(),
                              v.c_str()));
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ValueError(strf("config: key '%s': cannot parse '%s' as number", key.c_str(),
                              v.c_str()));
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    std::string s = v;
    std::transform(s.begin(), s.end(), s.begin(), ::tolower);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ValueError(strf("config: key '%s': cannot parse '%s' as bool", key.c_str(), v.c_str()));
}

}  // namespace

void config_set(TrainConfig& cfg, const std::string& key, const std::string& value) {
#define HVOX_CONFIG_SET_U64(name) cfg.name = parse_u64(key, value);
#define HVOX_CONFIG_SET_I64(name) cfg.name = parse_i64(key, value);
#define HVOX_CONFIG_SET_F64(name) cfg.name = parse_f64(key, value);
#define HVOX_CONFIG_SET_BOOL(name) cfg.name = parse_bool(key, value);
#define HVOX_CONFIG_SET_STR(name) cfg.name = value;
#define HVOX_CONFIG_SET(name, type, dflt)  \
    if (key == #name) {                    \
        HVOX_CONFIG_SET_##type(name)       \
        return;                            \
    }
    HVOX_CONFIG_FIELDS(HVOX_CONFIG_SET)
#undef HVOX_CONFIG_SET
#undef HVOX_CONFIG_SET_U64
#undef HVOX_CONFIG_SET_I64
#undef HVOX_CONFIG_SET_F64
#undef HVOX_CONFIG_SET_BOOL
#undef HVOX_CONFIG_SET_STR
    throw ValueError(strf("config: unknown key '%s'", key.c_str()));
}

std::string config_serialize(const TrainConfig& cfg) {
    std::string out;
#define HVOX_CONFIG_FMT_U64(name) out += strf("%s = %llu\n", #name, \
        static_cast<unsigned long long>(cfg.name));
#define HVOX_CONFIG_FMT_I64(name) out += strf("%s = %lld\n", #name, \
        static_cast<long long>(cfg.name));
#define HVOX_CONFIG_FMT_F64(name) out += strf("%s = %.17g\n", #name, cfg.name);
#define HVOX_CONFIG_FMT_BOOL(name) out += strf("%s = %s\n", #name, cfg.name ? "true" : "false");
#define HVOX_CONFIG_FMT_STR(name) out += strf("%s = %s\n", #name, cfg.name.c_str());
#define HVOX_CONFIG_FMT(name, type, dflt) HVOX_CONFIG_FMT_##type(name)
    HVOX_CONFIG_FIELDS(HVOX_CONFIG_FMT)
#undef HVOX_CONFIG_FMT
#undef HVOX_CONFIG_FMT_U64
#undef HVOX_CONFIG_FMT_I64
#undef HVOX_CONFIG_FMT_F64
#undef HVOX_CONFIG_FMT_BOOL
#undef HVOX_CONFIG_FMT_STR
    return out;
}

TrainConfig config_parse(const std::string& text, const TrainConfig& base) {
    TrainConfig cfg = base;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ValueError(strf("config: line %d: expected 'key = value', got '%s'", lineno,
                                  line.c_str()));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        config_set(cfg, key, value);
    }
    return cfg;
}

TrainConfig config_load_file(const std::string& path, const TrainConfig& base) {
    std::ifstream f(path);
    if (!f) throw IoError(strf("config: cannot open %s", path.c_str()));
    std::stringstream ss;
    ss << f.rdbuf();
    return config_parse(ss.str(), base);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
#define HVOX_CONFIG_KEY(name, type, dflt) keys.push_back(#name);
    HVOX_CONFIG_FIELDS(HVOX_CONFIG_KEY)
#undef HVOX_CONFIG_KEY
    return keys;
}

void TrainConfig::validate() const {
    if (batch < 2) throw ValueError(strf("config: batch %lld < 2", static_cast<long long>(batch)));
    if (steps < 1) throw ValueError("config: steps < 1");
    if (resolution != 32 && resolution != 64 && resolution != 128)
        throw ValueError(strf("config: resolution %lld not in {32, 64, 128}",
                              static_cast<long long>(resolution)));
    if (latent_dim < 1) throw ValueError("config: latent_dim < 1");
    if (lambda_identity < 0 || lambda_style < 0)
        throw ValueError("config: loss weights must be nonnegative");
    if (lr_g <= 0 || lr_d <= 0) throw ValueError("config: learning rates must be positive");
    if (azimuth_min > azimuth_max || elevation_min > elevation_max || scale_min > scale_max)
        throw ValueError("config: pose range min > max");
    if (scale_min <= 0) throw ValueError("config: scale_min must be positive");
    if (checkpoint_interval < 1 || sample_interval < 1)
        throw ValueError("config: intervals must be >= 1");
    if (dataset.empty()) throw ValueError("config: dataset must be a path or 'synthetic'");
    if (synthetic_primitive != "cube" && synthetic_primitive != "chair")
        throw ValueError(strf("config: synthetic_primitive '%s' not in {cube, chair}",
                              synthetic_primitive.c_str()));
    if (synthetic_count < 2) throw ValueError("config: synthetic_count < 2");
    if (threads < 0) throw ValueError("config: threads < 0");
}

}  // namespace hvox
