#include "disentune/io/run_config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "disentune/core/error.hpp"
#include "disentune/io/checkpoint.hpp"
#include "disentune/io/files.hpp"

namespace disentune::io {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    const auto* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || p != end) {
        throw ConfigError("'" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
    }
    return v;
}

double parse_real(std::string_view key, std::string_view text) {
    // from_chars for double is unavailable in some standard libraries; strtod on a copy.
    const std::string s(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
        throw ConfigError("'" + std::string(key) + "': cannot parse '" + s + "'");
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("'" + std::string(key) + "': expected true or false, got '" + std::string(text) + "'");
}

std::string format_real(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(image_size >= 8 && image_size % 8 == 0, "image_size must be a positive multiple of 8");
    require(cond_dim >= 2 && cond_dim % 2 == 0, "cond_dim must be an even number >= 2");
    require(cond_len >= 1, "cond_len must be >= 1");
    require(timesteps >= 2, "timesteps must be >= 2");
    require(ddim_steps >= 1 && ddim_steps <= timesteps, "ddim_steps must lie in [1, timesteps]");
    require(lora_rank >= 1, "lora_rank must be >= 1");
    require(lambda2 >= 0.0 && lambda2 < 1.0, "lambda2 must lie in [0, 1)");
    require(lambda3 >= 0.0, "lambda3 must be >= 0");
    require(lr > 0.0, "lr must be > 0");
    require(iterations >= 1, "iterations must be >= 1");
    require(batch == 1, "only batch = 1 is supported");
    require(k_images >= 1, "k_images must be >= 1");
    require(!out_dir.empty(), "out_dir must not be empty");
}

std::string RunConfig::serialize() const {
    std::ostringstream out;
    out << "seed = " << seed << "\n";
    out << "image_size = " << image_size << "\n";
    out << "cond_dim = " << cond_dim << "\n";
    out << "cond_len = " << cond_len << "\n";
    out << "timesteps = " << timesteps << "\n";
    out << "ddim_steps = " << ddim_steps << "\n";
    out << "lora_rank = " << lora_rank << "\n";
    out << "lambda2 = " << format_real(lambda2) << "\n";
    out << "lambda3 = " << format_real(lambda3) << "\n";
    out << "lr = " << format_real(lr) << "\n";
    out << "iterations = " << iterations << "\n";
    out << "batch = " << batch << "\n";
    out << "k_images = " << k_images << "\n";
    out << "out_dir = " << out_dir << "\n";
    out << "deterministic = " << (deterministic ? "true" : "false") << "\n";
    return out.str();
}

std::uint64_t RunConfig::digest() const { return fnv1a(serialize()); }

RunConfig RunConfig::parse(std::string_view text) {
    RunConfig cfg;
    using Setter = std::function<void(std::string_view, std::string_view)>;
    const std::map<std::string, Setter, std::less<>> setters = {
        {"seed", [&](auto k, auto v) { cfg.seed = parse_number<std::uint64_t>(k, v); }},
        {"image_size", [&](auto k, auto v) { cfg.image_size = parse_number<int>(k, v); }},
        {"cond_dim", [&](auto k, auto v) { cfg.cond_dim = parse_number<int>(k, v); }},
        {"cond_len", [&](auto k, auto v) { cfg.cond_len = parse_number<int>(k, v); }},
        {"timesteps", [&](auto k, auto v) { cfg.timesteps = parse_number<int>(k, v); }},
        {"ddim_steps", [&](auto k, auto v) { cfg.ddim_steps = parse_number<int>(k, v); }},
        {"lora_rank", [&](auto k, auto v) { cfg.lora_rank = parse_number<int>(k, v); }},
        {"lambda2", [&](auto k, auto v) { cfg.lambda2 = parse_real(k, v); }},
        {"lambda3", [&](auto k, auto v) { cfg.lambda3 = parse_real(k, v); }},
        {"lr", [&](auto k, auto v) { cfg.lr = parse_real(k, v); }},
        {"iterations", [&](auto k, auto v) { cfg.iterations = parse_number<int>(k, v); }},
        {"batch", [&](auto k, auto v) { cfg.batch = parse_number<int>(k, v); }},
        {"k_images", [&](auto k, auto v) { cfg.k_images = parse_number<int>(k, v); }},
        {"out_dir", [&](auto, auto v) { cfg.out_dir = std::string(v); }},
        {"deterministic", [&](auto k, auto v) { cfg.deterministic = parse_bool(k, v); }},
    };
    std::set<std::string, std::less<>> seen;
    std::istringstream in{std::string(text)};
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (eq == std::string_view::npos) {
            throw ConfigError(where + "expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw ConfigError(where + "unknown key '" + std::string(key) + "'");
        }
        if (!seen.insert(std::string(key)).second) {
            throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
        }
        try {
            it->second(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    try {
        return parse(read_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace disentune::io
