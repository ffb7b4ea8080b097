#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mgtcom/dpmm.hpp"
#include "mgtcom/graph.hpp"
#include "mgtcom/model.hpp"

namespace mgtcom {

// Everything that pins down a training run. Same graph + same config =>
// byte-identical results.
struct TrainConfig {
    ModelConfig model;          // dim 64, 2 conv layers, 4 heads, budgets (8,4)
    LossWeights loss;           // (1, 1, 0.01), margin 0.1

    int walks_per_node = 10;    // context walks per query per task
    int walk_length = 10;
    double p = 1.0;             // biased-walk return weight 1/p
    double q = 0.5;             // biased-walk exploration weight 1/q
    int omega_partitions = 20;  // context window = time extent / partitions

    int epochs = 10;            // outer alternation iterations
    int cluster_steps = 30;     // clustering rounds per outer iteration
    int pretrain_epochs = 20;   // cap; stops early on loss plateau
    int minibatch = 128;
    AdamConfig adam;            // lr 0.01

    double alpha = 10.0;        // mixture concentration
    double kappa = 1.0;
    double nu_offset = 1.0;     // degrees of freedom = dim + nu_offset
    double sigma_scale = 0.05;
    int k_init = 2;

    std::uint64_t seed = 1;

    void validate() const;
    // Zero-centered context window; shift by a query timestamp to anchor.
    TimeRange context_window(const MultimodalGraph& g) const;
};

// FNV-1a digests of the frozen side of each alternation stage, recorded
// before and after: cluster parameters around every embedding epoch,
// encoder parameters around every clustering cycle.
struct StageTrace {
    std::vector<std::uint64_t> cluster_pre_embed, cluster_post_embed;
    std::vector<std::uint64_t> params_pre_cluster, params_post_cluster;
};

// Training output; doubles as the checkpoint payload for exact resume.
struct TrainResult {
    TrainConfig cfg;  // effective config echo
    EncoderParams params;
    AdamOptimizer opt;
    ClusterState clusters;
    std::vector<NodeId> cluster_nodes;  // clusters.z row -> node id
    bool clusters_ready = false;

    int outer_done = 0;    // completed outer iterations
    int global_epoch = 0;  // pretrain + outer epochs run (seed streams)

    Matrix z_all;  // num_nodes x dim primary embeddings, deterministic snapshot
    std::vector<double> pretrain_loss;  // mean combined loss per pretrain epoch
    std::vector<double> epoch_loss;     // mean combined loss per outer iteration
    StageTrace trace;
};

// Initialization plus the pretraining loop alone (cluster term off).
EncoderParams pretrain(const MultimodalGraph& g, const TrainConfig& cfg);

// Full pipeline: pretrain, then alternate one embedding epoch with one
// clustering cycle per outer iteration. Clustering fits the snapshot of
// seen-node embeddings; the first cycle starts from k-means.
TrainResult train(const MultimodalGraph& g, const TrainConfig& cfg);

// Continues a finished-or-checkpointed state until total_epochs outer
// iterations are done. Identical streams: train(g, cfg{epochs=N}) equals
// resume_train(g, train(g, cfg{epochs=M}), N) for any M <= N.
TrainResult resume_train(const MultimodalGraph& g, TrainResult state, int total_epochs);

void save_checkpoint(const std::string& path, const TrainResult& r);
TrainResult load_checkpoint(const std::string& path);

// Frozen-parameter embedding of exactly `nodes` (eval mode, batched).
Matrix infer(const MultimodalGraph& g, EncoderParams& params, std::span<const NodeId> nodes,
             std::uint64_t seed);

// Eval-mode embeddings for every node, row = global id.
Matrix embed_all(const MultimodalGraph& g, EncoderParams& params, std::uint64_t seed);

// Holdout helper: keeps the first round(keep_frac * count) indices of every
// node type plus the surviving edges; features, times and seen flags copied.
// Kept nodes keep their (type, index) identity, so encoder parameters
// trained on the reduced graph apply to the full one.
MultimodalGraph prefix_subgraph(const MultimodalGraph& g, double keep_frac);

}  // namespace mgtcom
