#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace pvqae {

enum class FlattenOrder { spiral, boustrophedon };

FlattenOrder flatten_order_from_string(const std::string& name);

/// Cell visit order used to linearize a g x g level grid. spiral walks the
/// border clockwise from (0,0) and recurses inward; boustrophedon serpentines
/// row by row. Every cell appears exactly once.
std::vector<std::pair<int64_t, int64_t>> flatten_coords(int64_t grid, FlattenOrder order);

/// Token ids: [0, L) are levels, L is the mask, L+1+k is class k's CLS.
inline int64_t mask_token_id(int64_t n_levels) { return n_levels; }
inline int64_t cls_token_id(int64_t n_levels, int64_t class_id) { return n_levels + 1 + class_id; }

/// CLS-prefixed linearized level tokens of one image's budget.
struct BudgetSequence {
    std::vector<int64_t> tokens;  // tokens[0] is the CLS id; the rest are levels
    int64_t class_id = 0;
    int64_t grid = 0;

    int64_t length() const { return int64_t(tokens.size()); }
};

BudgetSequence flatten_budget(const torch::Tensor& hard_levels, int64_t class_id,
                              int64_t n_levels, FlattenOrder order);

/// Inverse of flatten_budget (drops the CLS token).
torch::Tensor unflatten_budget(const BudgetSequence& seq, FlattenOrder order);

/// One-block masked-token transformer over budget sequences: learned token and
/// position embeddings, a single pre-norm attention + MLP block, and an output
/// head over the level vocabulary.
struct PriorTransformerImpl : torch::nn::Module {
    PriorTransformerImpl(int64_t n_levels, int64_t n_classes, int64_t grid, int64_t dim,
                         int64_t heads);

    /// tokens: B x T int64 -> B x T x L logits.
    torch::Tensor forward_logits(const torch::Tensor& tokens);

    int64_t n_levels_, n_classes_, grid_, dim_, heads_;
    torch::nn::Embedding tok_emb{nullptr}, pos_emb{nullptr};
    torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr}, ln_f{nullptr};
    torch::nn::Linear qkv{nullptr}, attn_out{nullptr}, mlp_in{nullptr}, mlp_out{nullptr},
        head{nullptr};
};
TORCH_MODULE(PriorTransformer);

/// Mask one position (never the CLS at 0) and return that position's
/// predicted level distribution.
torch::Tensor mask_and_predict(PriorTransformer& model, const BudgetSequence& seq,
                               int64_t position);

struct PriorPrediction {
    torch::Tensor levels;         // g x g int64 argmax levels
    torch::Tensor distributions;  // g x g x L
};

/// Independently mask every non-CLS position and collect the predictions,
/// mapped back onto the grid. Deterministic.
PriorPrediction predict_prior(PriorTransformer& model, const BudgetSequence& seq,
                              FlattenOrder order);

struct PriorTrainStats {
    double final_loss = 0.0;    // mean CE over all positions after training
    double first_epoch_loss = 0.0;
    double last_epoch_loss = 0.0;
};

/// Masked-token training: per step each sampled sequence gets one uniformly
/// random masked position; cross-entropy against the held-out level.
PriorTrainStats train_prior(PriorTransformer& model, const std::vector<BudgetSequence>& sequences,
                            int64_t steps, double lr, int64_t batch_size, std::mt19937_64& rng);

/// Mean CE over every maskable position of every sequence.
double prior_dataset_loss(PriorTransformer& model, const std::vector<BudgetSequence>& sequences);

}  // namespace pvqae
