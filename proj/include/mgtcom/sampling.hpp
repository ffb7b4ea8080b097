#pragma once

#include "mgtcom/graph.hpp"

#include <random>
#include <span>
#include <vector>

namespace mgtcom {

// Seedable generator wrapper. Identical seed => identical sample sequence.
// derive() builds stateless per-(node, epoch) seeds so samplers can run in
// parallel without sharing generator state.
class SamplerRng {
public:
    explicit SamplerRng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen_);
    }
    // Uniform integer tick in the closed interval [lo, hi].
    Tick uniform_tick(Tick lo, Tick hi) {
        return std::uniform_int_distribution<Tick>(lo, hi)(gen_);
    }
    double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

    static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

// Ordered node sequence. For topological walks consecutive nodes are
// adjacent; ballroom output only guarantees co-windowed members.
using WalkPath = std::vector<NodeId>;

// Layered typed subgraph around a batch (the paper's G_B). Local ids are
// dense, batch nodes first at layer 0.
struct SampledSubgraph {
    std::vector<NodeId> nodes;   // local -> parent id
    std::vector<int> layer;      // per local node
    std::vector<std::vector<std::uint32_t>> by_type;  // local ids per node type
    struct LocalEdge {
        std::uint32_t dst;  // target (message receiver)
        std::uint32_t src;  // source (message sender)
        RelationTypeId rel;
    };
    // Both directions of every induced edge, grouped by dst ascending.
    std::vector<LocalEdge> edges;
    std::size_t batch_size = 0;

    std::size_t size() const { return nodes.size(); }
    // Local index of a parent node, or npos.
    static constexpr std::uint32_t npos = 0xffffffffu;
    std::uint32_t local_of(NodeId parent) const;
};

// L-layer typed expansion; at layer i at most budgets[i] * |batch| newly
// added nodes per node type, uniform without replacement over the
// frontier's typed candidates.
SampledSubgraph budget_sample(const MultimodalGraph& g, std::span<const NodeId> batch,
                              std::span<const std::uint32_t> budgets, SamplerRng& rng);

// Second-order biased walk: return weight 1/p, distance-1 weight 1,
// distance-2 weight 1/q. l counts steps; the path holds at most l+1 nodes.
WalkPath node2vec_walk(const MultimodalGraph& g, NodeId start, int l, double p, double q,
                       SamplerRng& rng);

// Random walk constrained to neighbors whose range intersects w; static
// nodes pass through freely. When stuck, restarts from a uniformly chosen
// visited node; gives up after 10*l consecutive failed restarts. The path
// holds at most l nodes and may be shorter.
WalkPath temporal_rw(const MultimodalGraph& g, NodeId start, const TimeRange& w, int l,
                     SamplerRng& rng);

// Ballroom walk sampling: anchor a window at a (possibly inferred) query
// timestamp, pool temporal walks from n window-resident roots, permute and
// slice the pool into up to n paths of length l. Empty result when no
// window anchor or no window residents exist.
std::vector<WalkPath> ballroom_walk(const MultimodalGraph& g, NodeId v, const TimeRange& omega,
                                    int n, int l, SamplerRng& rng);

// l nodes uniform over V with replacement. seen_only restricts draws to
// is_seen nodes (used by the training loop; unseen nodes are not part of
// the training vertex set).
std::vector<NodeId> negative_sample(const MultimodalGraph& g, int l, SamplerRng& rng,
                                    bool seen_only = false);

// Deduplicated union of the query node and all context samples; the query
// node is always front (index 0).
std::vector<NodeId> make_batch(NodeId query, std::span<const WalkPath> pe,
                               std::span<const WalkPath> pt, std::span<const NodeId> pbar);

}  // namespace mgtcom
