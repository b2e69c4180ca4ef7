#include "pvqae/checkpoint.hpp"

#include <torch/serialize.h>

#include <filesystem>

#include "pvqae/common.hpp"

namespace pvqae {

int64_t PvqaeModel::prior_class_id(const std::string& category) const {
    if (!cfg.prior_per_class) return 0;
    for (size_t i = 0; i < categories.size(); ++i)
        if (categories[i] == category) return int64_t(i);
    throw ConfigError("category '" + category + "' is not in the checkpoint registry");
}

void PvqaeModel::train_mode(bool on) {
    encoder->train(on);
    decoder->train(on);
    discriminator->train(on);
    codebook->train(on);
    router->train(on);
    if (prior) prior->train(on);
}

PvqaeModel PvqaeModel::build(const RunConfig& cfg, const std::vector<std::string>& categories) {
    validate(cfg);
    if (categories.empty()) throw ConfigError("model requires at least one category");
    PvqaeModel m;
    m.cfg = cfg;
    m.categories = categories;
    m.encoder = Encoder(cfg.image_size, cfg.coarse_grid, cfg.levels, cfg.base_channels,
                        cfg.embed_dim);
    m.decoder = Decoder(cfg.image_size, m.finest_grid(), cfg.base_channels, cfg.embed_dim);
    m.discriminator = Discriminator(cfg.base_channels);
    m.codebook = Codebook(cfg.levels, cfg.codebook_size, cfg.embed_dim);
    m.router = DynamicRouter(cfg.levels, cfg.embed_dim);
    return m;
}

void PvqaeModel::attach_prior() {
    prior = PriorTransformer(cfg.levels, prior_classes(), cfg.coarse_grid, cfg.embed_dim,
                             cfg.prior_heads);
    stage = 2;
}

namespace {

void write_module(torch::serialize::OutputArchive& root, const std::string& key,
                  const torch::nn::Module& module) {
    torch::serialize::OutputArchive sub;
    module.save(sub);
    root.write(key, sub);
}

void read_module(torch::serialize::InputArchive& root, const std::string& key,
                 torch::nn::Module& module) {
    torch::serialize::InputArchive sub;
    root.read(key, sub);
    module.load(sub);
}

}  // namespace

void save_checkpoint(const std::string& path, const PvqaeModel& model) {
    torch::serialize::OutputArchive ar;
    ar.write("format_version", torch::IValue(kCheckpointVersion));
    ar.write("stage", torch::IValue(model.stage));
    ar.write("config", torch::IValue(to_toml(model.cfg)));
    ar.write("categories", torch::IValue(c10::List<std::string>(
                               std::vector<std::string>(model.categories))));
    write_module(ar, "encoder", *model.encoder);
    write_module(ar, "decoder", *model.decoder);
    write_module(ar, "discriminator", *model.discriminator);
    write_module(ar, "codebook", *model.codebook);
    write_module(ar, "router", *model.router);
    if (model.stage >= 2) {
        TORCH_CHECK(model.prior, "stage-2 checkpoint without a prior module");
        write_module(ar, "prior", *model.prior);
    }
    try {
        ar.save_to(path);
    } catch (const c10::Error& e) {
        throw IoError("cannot write checkpoint " + path + ": " + e.msg());
    }
}

PvqaeModel load_checkpoint(const std::string& path) {
    if (!std::filesystem::is_regular_file(path))
        throw IoError("checkpoint not found: " + path);
    torch::serialize::InputArchive ar;
    try {
        ar.load_from(path);
    } catch (const c10::Error& e) {
        throw IoError("cannot read checkpoint " + path + ": " + e.msg());
    }

    torch::IValue version, stage, config, categories;
    ar.read("format_version", version);
    if (version.toInt() != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint format version " +
                          std::to_string(version.toInt()));
    ar.read("stage", stage);
    ar.read("config", config);
    ar.read("categories", categories);

    RunConfig cfg = load_config_string(config.toStringRef());
    std::vector<std::string> cats;
    for (const auto& c : categories.toListRef()) cats.push_back(c.toStringRef());

    PvqaeModel model = PvqaeModel::build(cfg, cats);
    model.stage = stage.toInt();
    read_module(ar, "encoder", *model.encoder);
    read_module(ar, "decoder", *model.decoder);
    read_module(ar, "discriminator", *model.discriminator);
    read_module(ar, "codebook", *model.codebook);
    read_module(ar, "router", *model.router);
    if (model.stage >= 2) {
        model.attach_prior();
        model.stage = stage.toInt();
        read_module(ar, "prior", *model.prior);
    }
    model.train_mode(false);
    return model;
}

uint64_t stage1_param_hash(const PvqaeModel& model) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](const torch::Tensor& t) {
        auto flat = t.detach().to(torch::kFloat).contiguous().reshape(-1);
        auto* bytes = reinterpret_cast<const uint8_t*>(flat.data_ptr<float>());
        for (int64_t i = 0; i < flat.numel() * int64_t(sizeof(float)); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto* module :
         std::initializer_list<const torch::nn::Module*>{model.encoder.get(), model.decoder.get(),
                                                         model.discriminator.get(),
                                                         model.codebook.get(), model.router.get()})
        for (const auto& p : module->parameters()) mix(p);
    return h;
}

}  // namespace pvqae
