#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pvqae {

/// All run hyperparameters. Every field has a working default; files and CLI
/// overrides only adjust what they name. Section.key naming follows the
/// registry in config.cpp.
struct RunConfig {
    // data
    int64_t image_size = 64;
    double hflip_prob = 0.5;
    double vflip_prob = 0.0;
    double jitter_strength = 0.1;

    // model
    int64_t coarse_grid = 4;   // cells per side of the coarsest latent grid
    int64_t levels = 3;        // resolution levels, 1 = coarsest
    int64_t codebook_size = 512;
    int64_t embed_dim = 64;    // d; also the code dimension n
    int64_t base_channels = 32;

    // train
    int64_t steps = 1500;
    int64_t batch_size = 16;
    double lr = 2e-4;
    int64_t seed = 17;
    double beta = 0.25;           // commitment weight
    double adv_weight = 0.1;
    double adv_warmup_frac = 0.25;

    // budget
    double cost_factor = 0.0;     // <= 0 selects 2^(levels-1)
    double lambda_max = 1.25;
    std::string lambda_kind = "linear";  // constant | cosine | linear
    double epsilon_floor = 1e-3;
    bool entropy_normalized = true;      // divide by cross-cell normalized entropy
    bool budget_cell_mean = true;        // scale the summed cost by 1/cells^2

    // routing
    double tau_start = 1.0;
    double tau_end = 0.1;
    bool straight_through = true;

    // prior
    bool prior_per_class = true;
    int64_t prior_steps = 1500;
    int64_t prior_heads = 4;
    std::string flatten_order = "spiral";  // spiral | boustrophedon

    // scoring
    double smoothing_sigma = -1.0;  // < 0 selects image_size * 4 / 256

    double effective_cost_factor() const;
    double effective_sigma() const;
};

/// Parse a TOML-style config file ([section] headers, key = value lines).
/// Unknown keys and malformed values throw ConfigError.
RunConfig load_config_file(const std::string& path);

/// Apply a "section.key=value" override in place. Throws ConfigError on
/// unknown keys or unparsable values.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Validate cross-field invariants; throws ConfigError with the offending key.
void validate(const RunConfig& cfg);

/// Serialize with full precision; load_config_string(to_toml(c)) == c.
std::string to_toml(const RunConfig& cfg);
RunConfig load_config_string(const std::string& text);

}  // namespace pvqae
