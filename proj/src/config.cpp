#include "spherediff/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace spherediff {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep, std::size_t max_parts = 0) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        if (max_parts != 0 && out.size() + 1 == max_parts) {
            out.push_back(trim(s.substr(start)));
            break;
        }
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || !std::isfinite(out)) throw ConfigError(key, "expected a number, got '" + v + "'");
    return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
    Int out{};
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(key, "expected an integer, got '" + v + "'");
    return out;
}

std::string num(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace

std::vector<ScheduleRing> parse_rings(const std::string& text) {
    std::vector<ScheduleRing> rings;
    for (const auto& part : split(text, ',')) {
        const auto kv = split(part, ':');
        if (kv.size() != 2) throw ConfigError("rings", "expected elevation:count, got '" + part + "'");
        rings.push_back({to_double("rings", kv[0]), to_int<std::size_t>("rings", kv[1])});
    }
    return rings;
}

std::string format_rings(const std::vector<ScheduleRing>& rings) {
    std::string out;
    for (std::size_t i = 0; i < rings.size(); ++i) {
        if (i) out += ", ";
        out += num(rings[i].elevation_deg) + ":" + std::to_string(rings[i].count);
    }
    return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto& p = cfg.pipeline;
    if (key == "n") {
        p.lattice_size = to_int<std::size_t>(key, value);
    } else if (key == "channels") {
        p.channels = to_int<std::size_t>(key, value);
    } else if (key == "steps") {
        p.total_steps = to_int<int>(key, value);
    } else if (key == "fov") {
        p.fov_deg = to_double(key, value);
    } else if (key == "overlap") {
        p.overlap = to_double(key, value);
    } else if (key == "tau") {
        p.tau = to_double(key, value);
    } else if (key == "seed") {
        p.seed = to_int<std::uint64_t>(key, value);
    } else if (key == "sampling") {
        if (value == "dynamic") {
            p.sampling = SamplingStrategy::dynamic;
        } else if (value == "nearest") {
            p.sampling = SamplingStrategy::nearest;
        } else {
            throw ConfigError(key, "expected dynamic or nearest, got '" + value + "'");
        }
    } else if (key == "rings") {
        p.rings = parse_rings(value);
    } else if (key == "refine_noise") {
        p.refine_noise = to_double(key, value);
    } else if (key == "erp_height") {
        p.erp_height = to_int<std::size_t>(key, value);
    } else if (key == "threads") {
        p.threads = to_int<unsigned>(key, value);
    } else if (key.rfind("prompt.", 0) == 0) {
        const auto slot = parse_elevation_slot(key.substr(7));
        if (!slot) throw ConfigError(key, "unknown prompt slot");
        cfg.prompts[*slot] = value;
    } else if (key == "foreground") {
        const auto parts = split(value, ',', 4);
        if (parts.size() != 4) throw ConfigError(key, "expected azimuth, elevation, b, prompt");
        const double az = to_double(key, parts[0]);
        const double el = to_double(key, parts[1]);
        if (el < -90.0 || el > 90.0) throw ConfigError(key, "elevation must lie in [-90, 90]");
        cfg.prompts.foreground.push_back({Direction::from_degrees(az, el), parts[3], to_double(key, parts[2])});
    } else {
        throw ConfigError(key, "unknown key");
    }
}

void validate_config(const RunConfig& cfg) {
    try {
        cfg.pipeline.validate();
        cfg.prompts.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        std::string key = msg.substr(0, msg.find_first_of(" :"));
        throw ConfigError(key, msg.substr(std::min(msg.size(), key.size() + 1)));
    }
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno), "expected key = value");
        }
        apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const RunConfig& cfg) {
    const auto& p = cfg.pipeline;
    std::ostringstream os;
    os << "n = " << p.lattice_size << "\n"
       << "channels = " << p.channels << "\n"
       << "steps = " << p.total_steps << "\n"
       << "fov = " << num(p.fov_deg) << "\n"
       << "overlap = " << num(p.overlap) << "\n"
       << "tau = " << num(p.tau) << "\n"
       << "seed = " << p.seed << "\n"
       << "sampling = " << (p.sampling == SamplingStrategy::dynamic ? "dynamic" : "nearest") << "\n"
       << "rings = " << format_rings(p.rings) << "\n"
       << "refine_noise = " << num(p.refine_noise) << "\n"
       << "erp_height = " << p.erp_height << "\n"
       << "threads = " << p.threads << "\n";
    for (auto s : kElevationSlots) os << "prompt." << to_string(s) << " = " << cfg.prompts[s] << "\n";
    for (const auto& fg : cfg.prompts.foreground) {
        os << "foreground = " << num(fg.direction.azimuth_deg()) << ", " << num(fg.direction.elevation_deg()) << ", "
           << num(fg.b) << ", " << fg.prompt << "\n";
    }
    return os.str();
}

}  // namespace spherediff
