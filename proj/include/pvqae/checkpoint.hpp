#pragma once

#include <string>
#include <vector>

#include "pvqae/backbone.hpp"
#include "pvqae/codebook.hpp"
#include "pvqae/config.hpp"
#include "pvqae/prior.hpp"
#include "pvqae/routing.hpp"

namespace pvqae {

constexpr int64_t kCheckpointVersion = 1;

/// Full model bundle plus the config snapshot and the category registry that
/// backs the per-class CLS tokens. stage 1 = trained autoencoder; stage 2 adds
/// the budget prior transformer.
struct PvqaeModel {
    RunConfig cfg;
    std::vector<std::string> categories;
    int64_t stage = 1;

    Encoder encoder{nullptr};
    Decoder decoder{nullptr};
    Discriminator discriminator{nullptr};
    Codebook codebook{nullptr};
    DynamicRouter router{nullptr};
    PriorTransformer prior{nullptr};  // defined iff stage >= 2

    int64_t finest_grid() const { return cfg.coarse_grid << (cfg.levels - 1); }
    int64_t prior_classes() const {
        return cfg.prior_per_class ? int64_t(categories.size()) : 1;
    }
    int64_t prior_class_id(const std::string& category) const;

    void train_mode(bool on);

    /// Construct freshly initialized modules for cfg (prior left null).
    static PvqaeModel build(const RunConfig& cfg, const std::vector<std::string>& categories);

    /// Attach a freshly initialized prior transformer and advance to stage 2.
    void attach_prior();
};

void save_checkpoint(const std::string& path, const PvqaeModel& model);
PvqaeModel load_checkpoint(const std::string& path);

/// Order-stable hash of all stage-1 parameter bytes; used to verify the
/// stage-2 freeze contract.
uint64_t stage1_param_hash(const PvqaeModel& model);

}  // namespace pvqae
