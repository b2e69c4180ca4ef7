#pragma once

#include <optional>
#include <string>

#include "pvqae/budget.hpp"
#include "pvqae/checkpoint.hpp"
#include "pvqae/dataset.hpp"
#include "pvqae/prior.hpp"
#include "pvqae/scoring.hpp"

namespace pvqae {

/// Stage 1: end-to-end training of encoder, decoder, codebooks, router, and
/// discriminator on the (all-normal) train split. Writes train_log.csv under
/// log_dir when given. Non-finite losses abort with a diagnostic snapshot.
PvqaeModel train_stage1(const RunConfig& cfg, const DatasetManifest& manifest,
                        const std::string& log_dir = "");

/// Stage 2: collect hard-routing budget sequences over the train split with
/// stage-1 weights frozen, then fit the budget prior transformer.
/// sequences_csv optionally dumps the collected sequences.
PriorTrainStats train_prior_stage(PvqaeModel& model, const DatasetManifest& manifest,
                                  const std::string& sequences_csv = "");

/// Single-image scoring products.
struct InferenceResult {
    ScoreMap score;
    BudgetMap budget;            // eval-mode routing output
    torch::Tensor prior_levels;  // g x g; defined iff the prior was used
    torch::Tensor prior_dists;   // g x g x L
    torch::Tensor recon;         // 3 x S x S
    int64_t codes_used = 0;
};

/// Full scoring path: encode, route, (predict prior and re-allocate), decode,
/// score. Uses the prior iff the model is stage >= 2.
InferenceResult run_inference(PvqaeModel& model, const torch::Tensor& image, int64_t class_id);

/// Per-category and pooled AUROC over the test split; deterministic for a
/// fixed checkpoint. csv_path optionally receives the metrics table.
MetricsReport evaluate(PvqaeModel& model, const DatasetManifest& manifest,
                       const std::string& csv_path = "");

/// Heatmap PNG + JSON sidecar (+ thresholded mask) for one image file.
void infer_image(PvqaeModel& model, const std::string& image_path, const std::string& out_dir,
                 std::optional<double> thresh, const std::optional<std::string>& category);

/// Eval-path reconstruction MSE over the train split (no augmentation).
double mean_train_recon_mse(PvqaeModel& model, const DatasetManifest& manifest);

}  // namespace pvqae
