#include "pvqae/prior.hpp"

#include <cmath>

#include "pvqae/common.hpp"

namespace pvqae {

FlattenOrder flatten_order_from_string(const std::string& name) {
    if (name == "spiral") return FlattenOrder::spiral;
    if (name == "boustrophedon") return FlattenOrder::boustrophedon;
    throw ConfigError("unknown flatten order '" + name + "'");
}

std::vector<std::pair<int64_t, int64_t>> flatten_coords(int64_t grid, FlattenOrder order) {
    TORCH_CHECK(grid >= 1, "flatten_coords: grid must be >= 1");
    std::vector<std::pair<int64_t, int64_t>> coords;
    coords.reserve(size_t(grid * grid));
    if (order == FlattenOrder::boustrophedon) {
        for (int64_t r = 0; r < grid; ++r)
            for (int64_t c = 0; c < grid; ++c)
                coords.emplace_back(r, r % 2 == 0 ? c : grid - 1 - c);
        return coords;
    }
    int64_t top = 0, bottom = grid - 1, left = 0, right = grid - 1;
    while (top <= bottom && left <= right) {
        for (int64_t c = left; c <= right; ++c) coords.emplace_back(top, c);
        for (int64_t r = top + 1; r <= bottom; ++r) coords.emplace_back(r, right);
        if (top < bottom)
            for (int64_t c = right - 1; c >= left; --c) coords.emplace_back(bottom, c);
        if (left < right)
            for (int64_t r = bottom - 1; r > top; --r) coords.emplace_back(r, left);
        ++top, --bottom, ++left, --right;
    }
    return coords;
}

BudgetSequence flatten_budget(const torch::Tensor& hard_levels, int64_t class_id,
                              int64_t n_levels, FlattenOrder order) {
    TORCH_CHECK(hard_levels.dim() == 2, "flatten_budget expects a g x g grid");
    if (hard_levels.size(0) != hard_levels.size(1))
        throw ConfigError("flatten_budget: grid must be square");
    int64_t g = hard_levels.size(0);
    auto grid = hard_levels.to(torch::kLong).contiguous();
    auto acc = grid.accessor<int64_t, 2>();

    BudgetSequence seq;
    seq.class_id = class_id;
    seq.grid = g;
    seq.tokens.reserve(size_t(g * g + 1));
    seq.tokens.push_back(cls_token_id(n_levels, class_id));
    for (auto [r, c] : flatten_coords(g, order)) {
        int64_t level = acc[r][c];
        TORCH_CHECK(level >= 0 && level < n_levels, "flatten_budget: level token out of range");
        seq.tokens.push_back(level);
    }
    return seq;
}

torch::Tensor unflatten_budget(const BudgetSequence& seq, FlattenOrder order) {
    int64_t g = seq.grid;
    TORCH_CHECK(seq.length() == g * g + 1, "unflatten_budget: sequence length mismatch");
    auto grid = torch::empty({g, g}, torch::kLong);
    auto acc = grid.accessor<int64_t, 2>();
    auto coords = flatten_coords(g, order);
    for (size_t i = 0; i < coords.size(); ++i)
        acc[coords[i].first][coords[i].second] = seq.tokens[i + 1];
    return grid;
}

PriorTransformerImpl::PriorTransformerImpl(int64_t n_levels, int64_t n_classes, int64_t grid,
                                           int64_t dim, int64_t heads)
    : n_levels_(n_levels), n_classes_(n_classes), grid_(grid), dim_(dim), heads_(heads) {
    TORCH_CHECK(dim % heads == 0, "prior: heads must divide the embedding dim");
    int64_t vocab = n_levels + 1 + n_classes;
    int64_t seq_len = grid * grid + 1;
    tok_emb = register_module("tok_emb", torch::nn::Embedding(vocab, dim));
    pos_emb = register_module("pos_emb", torch::nn::Embedding(seq_len, dim));
    ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    ln_f = register_module("ln_f", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
    attn_out = register_module("attn_out", torch::nn::Linear(dim, dim));
    mlp_in = register_module("mlp_in", torch::nn::Linear(dim, 4 * dim));
    mlp_out = register_module("mlp_out", torch::nn::Linear(4 * dim, dim));
    head = register_module("head", torch::nn::Linear(dim, n_levels));
}

torch::Tensor PriorTransformerImpl::forward_logits(const torch::Tensor& tokens) {
    TORCH_CHECK(tokens.dim() == 2, "prior expects B x T tokens");
    int64_t b = tokens.size(0), t = tokens.size(1);
    TORCH_CHECK(t == grid_ * grid_ + 1, "prior: sequence length mismatch");
    auto pos = torch::arange(t, torch::kLong);
    auto x = tok_emb(tokens) + pos_emb(pos).unsqueeze(0);  // B x T x D

    int64_t hd = dim_ / heads_;
    auto qkv_all = qkv(ln1(x)).reshape({b, t, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
    auto q = qkv_all[0], k = qkv_all[1], v = qkv_all[2];  // B x h x T x hd
    auto attn = torch::softmax(q.matmul(k.transpose(-2, -1)) / std::sqrt(double(hd)), -1);
    auto ctx = attn.matmul(v).permute({0, 2, 1, 3}).reshape({b, t, dim_});
    x = x + attn_out(ctx);
    x = x + mlp_out(torch::gelu(mlp_in(ln2(x))));
    return head(ln_f(x));
}

namespace {

torch::Tensor tokens_tensor(const BudgetSequence& seq) {
    return torch::tensor(seq.tokens, torch::kLong).unsqueeze(0);
}

}  // namespace

torch::Tensor mask_and_predict(PriorTransformer& model, const BudgetSequence& seq,
                               int64_t position) {
    if (position < 1 || position >= seq.length())
        throw ConfigError("mask_and_predict: position must be in [1, g^2], CLS is never masked");
    auto tokens = tokens_tensor(seq);
    tokens.index_put_({0, position}, mask_token_id(model->n_levels_));
    auto logits = model->forward_logits(tokens);
    return torch::softmax(logits[0][position], 0);
}

PriorPrediction predict_prior(PriorTransformer& model, const BudgetSequence& seq,
                              FlattenOrder order) {
    int64_t g = seq.grid;
    int64_t n_pos = g * g;
    TORCH_CHECK(seq.length() == n_pos + 1, "predict_prior: sequence length mismatch");

    // One masked copy per position, run as a single batch.
    auto base = tokens_tensor(seq);
    auto batch = base.repeat({n_pos, 1});
    auto rows = torch::arange(n_pos, torch::kLong);
    batch.index_put_({rows, rows + 1},
                     torch::full({n_pos}, mask_token_id(model->n_levels_), torch::kLong));
    auto logits = model->forward_logits(batch);                           // n_pos x T x L
    auto dists = torch::softmax(logits.index({rows, rows + 1}), -1);      // n_pos x L

    auto grid_dists = torch::empty({g, g, model->n_levels_}, dists.dtype());
    auto coords = flatten_coords(g, order);
    for (int64_t i = 0; i < n_pos; ++i)
        grid_dists.index_put_({coords[size_t(i)].first, coords[size_t(i)].second}, dists[i]);
    return {grid_dists.argmax(-1), grid_dists};
}

PriorTrainStats train_prior(PriorTransformer& model, const std::vector<BudgetSequence>& sequences,
                            int64_t steps, double lr, int64_t batch_size, std::mt19937_64& rng) {
    if (sequences.empty()) throw ConfigError("train_prior: empty sequence dataset");
    int64_t t = sequences.front().length();
    for (const auto& s : sequences)
        TORCH_CHECK(s.length() == t, "train_prior: inconsistent sequence lengths");

    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(lr));
    std::uniform_int_distribution<size_t> pick_seq(0, sequences.size() - 1);
    std::uniform_int_distribution<int64_t> pick_pos(1, t - 1);

    PriorTrainStats stats;
    int64_t mask_id = mask_token_id(model->n_levels_);
    for (int64_t step = 0; step < steps; ++step) {
        auto tokens = torch::empty({batch_size, t}, torch::kLong);
        auto positions = torch::empty({batch_size}, torch::kLong);
        auto targets = torch::empty({batch_size}, torch::kLong);
        for (int64_t i = 0; i < batch_size; ++i) {
            const auto& seq = sequences[pick_seq(rng)];
            int64_t pos = pick_pos(rng);
            auto row = torch::tensor(seq.tokens, torch::kLong);
            targets[i] = row[pos];
            row[pos] = mask_id;
            tokens[i] = row;
            positions[i] = pos;
        }
        opt.zero_grad();
        auto logits = model->forward_logits(tokens);
        auto rows = torch::arange(batch_size, torch::kLong);
        auto picked = logits.index({rows, positions});
        auto loss = torch::cross_entropy_loss(picked, targets);
        loss.backward();
        opt.step();

        double v = loss.item<double>();
        if (step == 0) stats.first_epoch_loss = v;
        stats.last_epoch_loss = v;
    }
    stats.final_loss = prior_dataset_loss(model, sequences);
    return stats;
}

double prior_dataset_loss(PriorTransformer& model, const std::vector<BudgetSequence>& sequences) {
    if (sequences.empty()) throw ConfigError("prior_dataset_loss: empty sequence dataset");
    torch::NoGradGuard no_grad;
    double total = 0.0;
    int64_t count = 0;
    int64_t mask_id = mask_token_id(model->n_levels_);
    for (const auto& seq : sequences) {
        int64_t n_pos = seq.length() - 1;
        auto base = tokens_tensor(seq);
        auto batch = base.repeat({n_pos, 1});
        auto rows = torch::arange(n_pos, torch::kLong);
        auto targets = batch.index({rows, rows + 1}).clone();
        batch.index_put_({rows, rows + 1}, torch::full({n_pos}, mask_id, torch::kLong));
        auto logits = model->forward_logits(batch).index({rows, rows + 1});
        total += torch::cross_entropy_loss(logits, targets, {}, torch::Reduction::Sum).item<double>();
        count += n_pos;
    }
    return total / double(count);
}

}  // namespace pvqae
