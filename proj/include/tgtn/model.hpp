#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tgtn/graph.hpp"
#include "tgtn/numerics.hpp"

namespace tgtn {

struct TgtnConfig {
    int d_model = 32;
    int n_heads = 4;
    int n_layers = 2;
    int d_ff = 64;
    bool use_pe = true;         // false: TGTN-noPE
    bool use_attention = true;  // false: TGTN-noAT, uniform mean over self + neighbors
    double dropout_rate = 0.1;
    double ln_eps = 1e-5;

    int d_head() const { return d_model / n_heads; }
    bool operator==(const TgtnConfig&) const = default;
};

void validate(const TgtnConfig& config);
void to_json(nlohmann::json& j, const TgtnConfig& c);
void from_json(const nlohmann::json& j, TgtnConfig& c);

/// Everything the network reads from a graph. Built from a TxGraph, or
/// directly in tests that need arbitrary node orders.
struct GraphInput {
    Matrix features;                                // |V| x d_in
    std::vector<std::vector<std::size_t>> neighbors;  // sorted, symmetric, no self loops
    std::vector<std::size_t> positions;             // timestamp rank of each node

    std::size_t size() const { return neighbors.size(); }
};

/// Rank of each node in (timestamp, tx_id) order.
std::vector<std::size_t> timestamp_ranks(std::span<const std::int64_t> timestamps,
                                         std::span<const std::uint64_t> tx_ids);

GraphInput make_graph_input(Matrix features, std::vector<std::vector<std::size_t>> neighbors,
                            std::span<const std::int64_t> timestamps, std::span<const std::uint64_t> tx_ids);
GraphInput graph_input(const TxGraph& g);

/// Sinusoidal encoding: (i, 2k) = sin(pos / 10000^(2k/d)), (i, 2k+1) = cos(...).
Matrix positional_encoding(std::span<const std::size_t> positions, int d_model);
Matrix positional_encoding(const TxGraph& g, int d_model);

struct LayerSlots {
    std::vector<std::size_t> w_q, w_k, w_v;  // one per head, d_model x d_head
    std::size_t w_o = 0;
    std::size_t w_1 = 0, b_1 = 0, w_2 = 0, b_2 = 0;
    std::size_t ln1_gamma = 0, ln1_beta = 0, ln2_gamma = 0, ln2_beta = 0;
};

/// Learnable weights plus the slot table locating each tensor in the store.
struct TgtnParams {
    TgtnConfig config;
    int d_in = 0;
    std::uint64_t seed = 0;
    ParamStore store;

    std::size_t w_in = 0, b_in = 0;
    std::vector<LayerSlots> layers;
    std::size_t w_head = 0, b_head = 0;

    const Matrix& value(std::size_t slot) const { return store[slot].value; }
    Matrix& grad(std::size_t slot) { return store[slot].grad; }
};

/// Glorot-uniform weights (a = sqrt(6 / (fan_in + fan_out))), zero biases and
/// layer-norm betas, unit layer-norm gammas. Deterministic per seed.
TgtnParams init_params(const TgtnConfig& config, int d_in, std::uint64_t seed);

/// Per-edge aggregation weights of one head, in CSR form over self + neighbors.
struct AttentionWeights {
    std::vector<std::size_t> offsets;  // size |V| + 1
    std::vector<std::size_t> columns;  // node attended to
    std::vector<double> weights;
};

/// Inference-time pieces of one encoder layer, exposed for inspection.
AttentionWeights attention_weights(const Matrix& h, const GraphInput& g, const TgtnParams& params, int layer,
                                   int head);
Matrix attention_head(const Matrix& h, const GraphInput& g, const TgtnParams& params, int layer, int head);
Matrix gat_layer_forward(const Matrix& h, const GraphInput& g, const TgtnParams& params, int layer);

/// Initial node states X W_in + b_in (+ positional encoding when enabled).
Matrix initial_states(const GraphInput& g, const TgtnParams& params);

/// Fraud probability per node. Dropout is active only when training, drawn
/// from rng_seed.
std::vector<double> forward(const GraphInput& g, const TgtnParams& params, bool training = false,
                            std::uint64_t rng_seed = 0);
std::vector<double> forward(const TxGraph& g, const TgtnParams& params, bool training = false,
                            std::uint64_t rng_seed = 0);

/// Inference for a few target nodes. Runs the network only on the n_layers-hop
/// neighbourhood of the targets; bit-identical to the matching entries of the
/// full forward pass.
std::vector<double> forward_targets(const GraphInput& g, const TgtnParams& params,
                                    std::span<const std::size_t> targets);

/// Weighted BCE over nodes with node_mask set; gradients of every tensor are
/// written into params.store (previous gradients are overwritten). Uses the
/// same dropout realization as forward(g, params, true, rng_seed).
double backward(const GraphInput& g, TgtnParams& params, std::span<const double> labels,
                std::span<const std::uint8_t> node_mask, double pos_weight, bool training = false,
                std::uint64_t rng_seed = 0);

/// Loss only, no gradients. Same semantics as backward.
double masked_loss(const GraphInput& g, const TgtnParams& params, std::span<const double> labels,
                   std::span<const std::uint8_t> node_mask, double pos_weight, bool training = false,
                   std::uint64_t rng_seed = 0);

// Checkpoints: one JSON document, tensors as (name, shape, decimal values,
// hex bit patterns). Loading reads the hex form, so the round trip is exact.
nlohmann::ordered_json checkpoint_json(const TgtnParams& params, const EdgeRule& rule, const EncoderConfig& enc);
struct Checkpoint {
    TgtnParams params;
    EdgeRule rule;
    EncoderConfig encoder;
};
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const TgtnParams& params, const EdgeRule& rule,
                     const EncoderConfig& enc);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tgtn
