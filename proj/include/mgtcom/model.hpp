#pragma once

#include "mgtcom/graph.hpp"
#include "mgtcom/sampling.hpp"
#include "mgtcom/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mgtcom {

// Encoder shape knobs. heads must divide dim; budgets has one entry per
// conv layer.
struct ModelConfig {
    int dim = 64;
    int layers = 2;
    int heads = 4;
    double feat_dropout = 0.5;  // on free-embedding rows, train mode only
    std::vector<std::uint32_t> budgets{8, 4};

    void validate() const;
    int head_dim() const { return dim / heads; }
};

// Loss mix: combined = beta_e * L_topo + beta_t * L_temp + beta_c * L_clu.
struct LossWeights {
    double beta_e = 1.0;
    double beta_t = 1.0;
    double beta_c = 0.01;
    double margin = 0.1;

    void validate() const;  // at least one beta > 0, all non-negative
};

// Per-task gate: h heads, each a linear map dim -> dim/heads whose
// sigmoid outputs concatenate into a dim-wide multiplicative gate.
struct TaskHead {
    std::vector<int> w;  // param indices, one per head (dim x dim/heads)
    std::vector<int> b;  // param indices, one per head (1 x dim/heads)
};

// All trainable parameters, as indices into a ParamStore. Featureless
// seen nodes own rows of a free embedding table; nodes with observed
// features go through a per-type input projection.
class EncoderParams {
public:
    static EncoderParams init(const MultimodalGraph& g, const ModelConfig& cfg,
                              std::uint64_t seed);

    ParamStore store;
    ModelConfig cfg;

    std::vector<int> in_w, in_b;  // per node type; -1 when type has no features
    int emb_table = -1;           // -1 when no featureless seen nodes exist
    // [type][index] -> embedding row, -1 if none. Keyed per type so graphs
    // extended with appended nodes keep existing mappings valid.
    std::vector<std::vector<std::int64_t>> emb_row;

    struct ConvLayer {
        std::vector<int> q, k, v, o;        // per node type, dim x dim
        std::vector<std::vector<int>> rel;  // [relation][head], dh x dh
    };
    std::vector<ConvLayer> conv;

    TaskHead topo_head, temp_head;

    std::int64_t emb_row_of(const MultimodalGraph& g, NodeId v) const;
};

// Per-step binding of master parameters onto a tape. Parameters are bound
// lazily on first use; collect_grads returns store-aligned gradients with
// 0x0 placeholders for parameters the step never touched.
class BoundParams {
public:
    BoundParams(Tape& tape, EncoderParams& params);

    Var at(int store_index);
    Tape& tape() { return *tape_; }
    EncoderParams& params() { return *params_; }
    const MultimodalGraph* graph = nullptr;  // set by embed_primary

    std::vector<Matrix> collect_grads() const;

private:
    Tape* tape_;
    EncoderParams* params_;
    std::vector<Var> bound_;
};

// Initial feature matrix, one row per subgraph node: projected feature if
// the node has one, dropout-regularized free-embedding row if it is seen
// but featureless, the zero vector otherwise.
Var initial_features(BoundParams& bp, const MultimodalGraph& g, const SampledSubgraph& sub,
                     bool train_mode, SamplerRng& rng);

// One typed attention convolution: per-type query/key/value projections,
// per-relation bilinear attention logits scaled by 1/sqrt(dim/heads),
// per-target softmax, attention-weighted value aggregation, per-type
// output projection, residual, gelu. Nodes without in-subgraph neighbors
// keep the residual-only path.
Var hetero_conv_layer(BoundParams& bp, const SampledSubgraph& sub, Var h_prev, int layer);

struct EmbedOut {
    SampledSubgraph sub;
    Var all;    // one row per subgraph node
    Var batch;  // rows for the batch nodes, in batch order
};

// Batched primary embedding: budget-sampled subgraph, initial features,
// conv layers, rows for the batch. batch must be duplicate-free.
EmbedOut embed_primary(BoundParams& bp, const MultimodalGraph& g, std::span<const NodeId> batch,
                       bool train_mode, SamplerRng& rng);

// Task-specific gating: Z ⊙ concat_i sigmoid(Z W_i + b_i).
Var task_transform(BoundParams& bp, Var z, const TaskHead& head);

// Max-margin context loss for one query row:
//   max over negatives n of max(0, z_q·z_n − mean_p(z_q·z_p) + margin).
Var mm_loss(Tape& tape, Var z, int query_row, std::span<const int> pos_rows,
            std::span<const int> neg_rows, double margin);

// Squared distance from one embedding row to its cluster mean.
Var cluster_loss(Tape& tape, Var z, int row, const Eigen::VectorXd& mu);

// Weighted sum of the three losses; invalid Vars contribute nothing (a
// query with no temporal context that epoch simply drops that term).
Var combined_loss(Tape& tape, Var le, Var lt, Var lc, const LossWeights& w);

}  // namespace mgtcom
