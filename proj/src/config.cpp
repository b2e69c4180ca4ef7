#include "pvqae/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pvqae/common.hpp"

namespace pvqae {

namespace {

enum class FieldKind { Int, Real, Bool, Str };

struct Field {
    std::string key;  // "section.name"
    FieldKind kind;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int64_t parse_int(const std::string& key, const std::string& raw) {
    try {
        size_t pos = 0;
        int64_t v = std::stoll(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + raw + "'");
    }
}

double parse_real(const std::string& key, const std::string& raw) {
    try {
        size_t pos = 0;
        double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + raw + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& raw) {
    if (raw == "true") return true;
    if (raw == "false") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + raw + "'");
}

#define INT_FIELD(key, member)                                                            \
    Field{key, FieldKind::Int,                                                            \
          [](RunConfig& c, const std::string& raw) { c.member = parse_int(key, raw); },   \
          [](const RunConfig& c) { return std::to_string(c.member); }}
#define REAL_FIELD(key, member)                                                           \
    Field{key, FieldKind::Real,                                                           \
          [](RunConfig& c, const std::string& raw) { c.member = parse_real(key, raw); },  \
          [](const RunConfig& c) { return fmt_real(c.member); }}
#define BOOL_FIELD(key, member)                                                           \
    Field{key, FieldKind::Bool,                                                           \
          [](RunConfig& c, const std::string& raw) { c.member = parse_bool(key, raw); },  \
          [](const RunConfig& c) { return c.member ? "true" : "false"; }}
#define STR_FIELD(key, member)                                                            \
    Field{key, FieldKind::Str,                                                            \
          [](RunConfig& c, const std::string& raw) { c.member = raw; },                   \
          [](const RunConfig& c) { return "\"" + c.member + "\""; }}

const std::vector<Field>& registry() {
    static const std::vector<Field> fields = {
        INT_FIELD("data.image_size", image_size),
        REAL_FIELD("data.hflip_prob", hflip_prob),
        REAL_FIELD("data.vflip_prob", vflip_prob),
        REAL_FIELD("data.jitter_strength", jitter_strength),
        INT_FIELD("model.coarse_grid", coarse_grid),
        INT_FIELD("model.levels", levels),
        INT_FIELD("model.codebook_size", codebook_size),
        INT_FIELD("model.embed_dim", embed_dim),
        INT_FIELD("model.base_channels", base_channels),
        INT_FIELD("train.steps", steps),
        INT_FIELD("train.batch_size", batch_size),
        REAL_FIELD("train.lr", lr),
        INT_FIELD("train.seed", seed),
        REAL_FIELD("train.beta", beta),
        REAL_FIELD("train.adv_weight", adv_weight),
        REAL_FIELD("train.adv_warmup_frac", adv_warmup_frac),
        REAL_FIELD("budget.cost_factor", cost_factor),
        REAL_FIELD("budget.lambda_max", lambda_max),
        STR_FIELD("budget.schedule", lambda_kind),
        REAL_FIELD("budget.epsilon_floor", epsilon_floor),
        BOOL_FIELD("budget.entropy_normalized", entropy_normalized),
        BOOL_FIELD("budget.cell_mean", budget_cell_mean),
        REAL_FIELD("routing.tau_start", tau_start),
        REAL_FIELD("routing.tau_end", tau_end),
        BOOL_FIELD("routing.straight_through", straight_through),
        BOOL_FIELD("prior.per_class", prior_per_class),
        INT_FIELD("prior.steps", prior_steps),
        INT_FIELD("prior.heads", prior_heads),
        STR_FIELD("prior.flatten_order", flatten_order),
        REAL_FIELD("scoring.smoothing_sigma", smoothing_sigma),
    };
    return fields;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : registry())
        if (f.key == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Strips an inline comment, honoring double-quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

void set_from_raw(RunConfig& cfg, const std::string& key, std::string raw) {
    raw = trim(raw);
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
        raw = raw.substr(1, raw.size() - 2);
    if (raw.empty()) throw ConfigError("config key '" + key + "': empty value");
    find_field(key).set(cfg, raw);
}

}  // namespace

double RunConfig::effective_cost_factor() const {
    return cost_factor > 0 ? cost_factor : std::pow(2.0, double(levels - 1));
}

double RunConfig::effective_sigma() const {
    return smoothing_sigma >= 0 ? smoothing_sigma : double(image_size) * 4.0 / 256.0;
}

RunConfig load_config_string(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        set_from_raw(cfg, key, line.substr(eq + 1));
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_config_string(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set_from_raw(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string to_toml(const RunConfig& cfg) {
    std::ostringstream out;
    std::string section;
    for (const auto& f : registry()) {
        std::string sec = f.key.substr(0, f.key.find('.'));
        std::string name = f.key.substr(f.key.find('.') + 1);
        if (sec != section) {
            if (!section.empty()) out << "\n";
            out << "[" << sec << "]\n";
            section = sec;
        }
        out << name << " = " << f.get(cfg) << "\n";
    }
    return out.str();
}

void validate(const RunConfig& cfg) {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
    auto is_pow2 = [](int64_t v) { return v > 0 && (v & (v - 1)) == 0; };

    if (cfg.image_size < 8) fail("data.image_size must be >= 8");
    for (auto [p, name] : {std::pair{cfg.hflip_prob, "data.hflip_prob"},
                           {cfg.vflip_prob, "data.vflip_prob"}})
        if (p < 0 || p > 1) fail(std::string(name) + " must be in [0,1]");
    if (cfg.jitter_strength < 0) fail("data.jitter_strength must be >= 0");

    if (cfg.levels < 1) fail("model.levels must be >= 1");
    if (cfg.coarse_grid < 1) fail("model.coarse_grid must be >= 1");
    int64_t finest = cfg.coarse_grid << (cfg.levels - 1);
    if (cfg.image_size % finest != 0 || !is_pow2(cfg.image_size / finest) ||
        cfg.image_size / finest < 2)
        fail("data.image_size must be coarse_grid * 2^(levels-1) * 2^k with k >= 1");
    if (cfg.codebook_size < 2) fail("model.codebook_size must be >= 2");
    if (cfg.embed_dim < 8) fail("model.embed_dim must be >= 8");
    if (cfg.base_channels < 8) fail("model.base_channels must be >= 8");

    if (cfg.steps < 1) fail("train.steps must be >= 1");
    if (cfg.batch_size < 1) fail("train.batch_size must be >= 1");
    if (cfg.lr <= 0) fail("train.lr must be > 0");
    if (cfg.beta < 0) fail("train.beta must be >= 0");
    if (cfg.adv_weight < 0) fail("train.adv_weight must be >= 0");
    if (cfg.adv_warmup_frac < 0 || cfg.adv_warmup_frac > 1)
        fail("train.adv_warmup_frac must be in [0,1]");

    if (cfg.cost_factor > 0 && cfg.cost_factor <= 1)
        fail("budget.cost_factor must be > 1 (or <= 0 for the 2^(levels-1) default)");
    if (cfg.lambda_max < 0) fail("budget.lambda_max must be >= 0");
    if (cfg.lambda_kind != "constant" && cfg.lambda_kind != "cosine" && cfg.lambda_kind != "linear")
        fail("budget.schedule must be constant, cosine, or linear");
    if (cfg.epsilon_floor <= 0) fail("budget.epsilon_floor must be > 0");

    if (!(cfg.tau_start >= cfg.tau_end && cfg.tau_end > 0))
        fail("routing temperatures must satisfy tau_start >= tau_end > 0");

    if (cfg.prior_steps < 1) fail("prior.steps must be >= 1");
    if (cfg.prior_heads < 1 || cfg.embed_dim % cfg.prior_heads != 0)
        fail("prior.heads must divide model.embed_dim");
    if (cfg.flatten_order != "spiral" && cfg.flatten_order != "boustrophedon")
        fail("prior.flatten_order must be spiral or boustrophedon");
}

}  // namespace pvqae
