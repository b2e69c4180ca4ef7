#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pvqae/common.hpp"
#include "pvqae/config.hpp"
#include "pvqae/dataset.hpp"
#include "pvqae/trainer.hpp"

namespace fs = std::filesystem;
using namespace pvqae;

namespace {

struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<int64_t> seed_flag;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_file, "TOML-style config file");
    cmd->add_option("--set", args.overrides, "Override a config key, e.g. --set train.steps=500");
    auto* seed = cmd->add_option("--seed", "Override train.seed");
    seed->each([&args](const std::string& v) { args.seed_flag = std::stoll(v); });
}

// Precedence: file < PVQAE_SEED < --set/--seed flags.
RunConfig resolve_config(const ConfigArgs& args) {
    RunConfig cfg;
    if (!args.config_file.empty()) cfg = load_config_file(args.config_file);
    if (const char* env = std::getenv("PVQAE_SEED")) {
        try {
            cfg.seed = std::stoll(env);
        } catch (const std::exception&) {
            throw ConfigError("PVQAE_SEED is not an integer: " + std::string(env));
        }
    }
    for (const auto& o : args.overrides) apply_override(cfg, o);
    if (args.seed_flag.has_value()) cfg.seed = *args.seed_flag;
    validate(cfg);
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"PVQAE: patch-aware vector-quantized defect detection"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "Generate a synthetic textured dataset");
    std::string synth_out;
    SynthSpec spec;
    synth->add_option("--out", synth_out, "Output dataset root")->required();
    synth->add_option("--n-train", spec.n_train, "Training images (all classes)");
    synth->add_option("--n-test-normal", spec.n_test_normal, "Normal test images");
    synth->add_option("--n-test-defect", spec.n_test_defect, "Defect test images");
    synth->add_option("--image-size", spec.image_size, "Pixels per side");
    synth->add_option("--n-classes", spec.n_classes, "Number of texture classes");
    synth->add_option("--seed", spec.seed, "Generator seed");

    // train
    auto* train = app.add_subcommand("train", "Stage-1 training");
    ConfigArgs train_cfg;
    std::string train_data, train_ckpt, train_logs;
    add_config_options(train, train_cfg);
    train->add_option("--data", train_data, "Dataset root (MVTec layout)")->required();
    train->add_option("--out", train_ckpt, "Checkpoint output path")->required();
    train->add_option("--log-dir", train_logs, "Directory for training logs");

    // train-prior
    auto* tprior = app.add_subcommand("train-prior", "Stage-2 budget prior training");
    std::string tp_ckpt, tp_data, tp_out, tp_dump;
    tprior->add_option("--ckpt", tp_ckpt, "Stage-1 checkpoint")->required();
    tprior->add_option("--data", tp_data, "Dataset root")->required();
    tprior->add_option("--out", tp_out, "Output checkpoint (defaults to --ckpt)");
    tprior->add_option("--dump-sequences", tp_dump, "CSV dump of collected budget sequences");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a test split");
    std::string ev_ckpt, ev_data, ev_report;
    eval_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
    eval_cmd->add_option("--data", ev_data, "Dataset root")->required();
    eval_cmd->add_option("--report", ev_report, "Metrics CSV output path")->required();

    // infer
    auto* infer = app.add_subcommand("infer", "Score a single image");
    std::string in_ckpt, in_image, in_out;
    std::optional<double> in_thresh;
    std::optional<std::string> in_category;
    infer->add_option("--ckpt", in_ckpt, "Checkpoint path")->required();
    infer->add_option("--image", in_image, "Input image path")->required();
    infer->add_option("--out", in_out, "Output directory")->required();
    infer->add_option("--threshold", [&in_thresh](const auto& vals) {
        in_thresh = std::stod(vals[0]);
        return true;
    }, "Write a binary mask at this threshold");
    infer->add_option("--category", [&in_category](const auto& vals) {
        in_category = vals[0];
        return true;
    }, "Category name for the CLS token");

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        auto manifest = synth_texture_dataset(spec);
        write_manifest_tree(manifest, synth_out);
        std::cout << "wrote " << manifest.train.size() << " train / " << manifest.test.size()
                  << " test images to " << synth_out << "\n";
        return 0;
    }
    if (train->parsed()) {
        RunConfig cfg = resolve_config(train_cfg);
        auto manifest = load_dataset(train_data, cfg.image_size);
        auto model = train_stage1(cfg, manifest, train_logs);
        double mse = mean_train_recon_mse(model, manifest);
        save_checkpoint(train_ckpt, model);
        std::cout << "stage-1 checkpoint written to " << train_ckpt
                  << " (train recon MSE " << mse << ")\n";
        return 0;
    }
    if (tprior->parsed()) {
        auto model = load_checkpoint(tp_ckpt);
        auto manifest = load_dataset(tp_data, model.cfg.image_size);
        auto stats = train_prior_stage(model, manifest, tp_dump);
        save_checkpoint(tp_out.empty() ? tp_ckpt : tp_out, model);
        std::cout << "prior trained: dataset CE " << stats.final_loss << "; checkpoint "
                  << (tp_out.empty() ? tp_ckpt : tp_out) << "\n";
        return 0;
    }
    if (eval_cmd->parsed()) {
        auto model = load_checkpoint(ev_ckpt);
        auto manifest = load_dataset(ev_data, model.cfg.image_size);
        auto report = evaluate(model, manifest, ev_report);
        std::cout << metrics_csv(report);
        std::cout << "mean budget cost per cell: " << report.mean_budget_cost << "\n";
        return 0;
    }
    if (infer->parsed()) {
        auto model = load_checkpoint(in_ckpt);
        infer_image(model, in_image, in_out, in_thresh, in_category);
        std::cout << "results written to " << in_out << "\n";
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
