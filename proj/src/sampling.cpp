#include "mgtcom/sampling.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mgtcom {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t SamplerRng::derive(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

std::uint32_t SampledSubgraph::local_of(NodeId parent) const {
    for (std::uint32_t i = 0; i < nodes.size(); ++i)
        if (nodes[i] == parent) return i;
    return npos;
}

SampledSubgraph budget_sample(const MultimodalGraph& g, std::span<const NodeId> batch,
                              std::span<const std::uint32_t> budgets, SamplerRng& rng) {
    if (batch.empty()) throw std::invalid_argument("budget_sample: empty batch");
    if (budgets.empty()) throw std::invalid_argument("budget_sample: need at least one layer");
    for (auto m : budgets)
        if (m < 1) throw std::invalid_argument("budget_sample: budget multiple must be >= 1");

    SampledSubgraph sub;
    sub.by_type.resize(g.num_node_types());
    std::unordered_map<NodeId, std::uint32_t> local;
    local.reserve(batch.size() * 4);

    auto add_node = [&](NodeId v, int layer) {
        std::uint32_t id = static_cast<std::uint32_t>(sub.nodes.size());
        sub.nodes.push_back(v);
        sub.layer.push_back(layer);
        sub.by_type[g.node_type(v)].push_back(id);
        local.emplace(v, id);
    };

    for (NodeId v : batch)
        if (!local.count(v)) add_node(v, 0);
    sub.batch_size = sub.nodes.size();

    std::size_t frontier_begin = 0;
    for (std::size_t li = 0; li < budgets.size(); ++li) {
        std::size_t frontier_end = sub.nodes.size();
        // Typed candidate pools from the frontier, insertion-ordered.
        std::vector<std::vector<NodeId>> cand(g.num_node_types());
        std::unordered_set<NodeId> queued;
        for (std::size_t i = frontier_begin; i < frontier_end; ++i)
            for (const auto& ie : g.incident(sub.nodes[i]))
                if (!local.count(ie.node) && queued.insert(ie.node).second)
                    cand[g.node_type(ie.node)].push_back(ie.node);

        const std::size_t cap = static_cast<std::size_t>(budgets[li]) * sub.batch_size;
        for (NodeTypeId t = 0; t < g.num_node_types(); ++t) {
            auto& pool = cand[t];
            if (pool.size() > cap) {
                // Partial Fisher-Yates: the first cap entries are a uniform
                // without-replacement sample.
                for (std::size_t i = 0; i < cap; ++i)
                    std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
                pool.resize(cap);
            }
            for (NodeId v : pool) add_node(v, static_cast<int>(li) + 1);
        }
        frontier_begin = frontier_end;
        if (frontier_begin == sub.nodes.size()) break;  // nothing new to expand
    }

    // Induced edges: every incident pair with both endpoints sampled, grouped
    // by target so per-target attention segments are contiguous.
    for (std::uint32_t u = 0; u < sub.nodes.size(); ++u)
        for (const auto& ie : g.incident(sub.nodes[u])) {
            auto it = local.find(ie.node);
            if (it != local.end()) sub.edges.push_back({u, it->second, ie.rel});
        }
    return sub;
}

WalkPath node2vec_walk(const MultimodalGraph& g, NodeId start, int l, double p, double q,
                       SamplerRng& rng) {
    if (l < 1) throw std::invalid_argument("node2vec_walk: l must be >= 1");
    WalkPath path{start};
    auto first = g.all_neighbors(start);
    if (first.empty()) return path;
    path.push_back(first[rng.uniform_index(first.size())]);

    std::vector<double> cum;
    while (static_cast<int>(path.size()) < l + 1) {
        NodeId head = path.back();
        NodeId prev = path[path.size() - 2];
        auto nbrs = g.all_neighbors(head);
        if (nbrs.empty()) break;
        cum.clear();
        double total = 0.0;
        for (NodeId x : nbrs) {
            double w = (x == prev) ? 1.0 / p : (g.adjacent(x, prev) ? 1.0 : 1.0 / q);
            total += w;
            cum.push_back(total);
        }
        double r = rng.uniform01() * total;
        std::size_t idx = std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
        if (idx >= nbrs.size()) idx = nbrs.size() - 1;
        path.push_back(nbrs[idx]);
    }
    return path;
}

WalkPath temporal_rw(const MultimodalGraph& g, NodeId start, const TimeRange& w, int l,
                     SamplerRng& rng) {
    if (l < 1) throw std::invalid_argument("temporal_rw: l must be >= 1");
    WalkPath path{start};
    const int max_fails = 10 * l;
    int fails = 0;
    NodeId head = start;
    std::vector<NodeId> admissible;
    while (static_cast<int>(path.size()) < l && fails < max_fails) {
        admissible.clear();
        for (NodeId x : g.all_neighbors(head))
            if (!g.has_time(x) || g.time_of(x).intersects(w)) admissible.push_back(x);
        if (admissible.empty()) {
            ++fails;
            head = path[rng.uniform_index(path.size())];
            continue;
        }
        fails = 0;
        head = admissible[rng.uniform_index(admissible.size())];
        path.push_back(head);
    }
    return path;
}

namespace {

// Rearranges a pooled context so no two static nodes sit within two
// positions of each other; statics that cannot be placed are dropped
// (omnipresent nodes are sampled passively, never at the cost of
// timestamped context pairs).
std::vector<NodeId> space_out_statics(const MultimodalGraph& g, const std::vector<NodeId>& pool) {
    std::vector<NodeId> out;
    out.reserve(pool.size());
    std::vector<NodeId> deferred;
    auto ok_to_place = [&](std::size_t at) {
        return !(at >= 1 && !g.has_time(out[at - 1])) && !(at >= 2 && !g.has_time(out[at - 2]));
    };
    for (NodeId x : pool) {
        if (g.has_time(x) || ok_to_place(out.size()))
            out.push_back(x);
        else
            deferred.push_back(x);
    }
    for (NodeId x : deferred)
        if (ok_to_place(out.size())) out.push_back(x);
    return out;
}

}  // namespace

std::vector<WalkPath> ballroom_walk(const MultimodalGraph& g, NodeId v, const TimeRange& omega,
                                    int n, int l, SamplerRng& rng) {
    if (n < 1 || l < 1) throw std::invalid_argument("ballroom_walk: n and l must be >= 1");

    // Sampling timestamp: drawn from the query's own range, or inferred from
    // the first timestamped node an unconstrained temporal walk reaches.
    Tick t_v = 0;
    if (g.has_time(v)) {
        TimeRange tau = g.time_of(v);
        t_v = rng.uniform_tick(tau.start, tau.end);
    } else {
        WalkPath probe = temporal_rw(g, v, TimeRange::all(), l, rng);
        bool found = false;
        for (NodeId u : probe)
            if (g.has_time(u)) {
                TimeRange tau = g.time_of(u);
                t_v = rng.uniform_tick(tau.start, tau.end);
                found = true;
                break;
            }
        if (!found) return {};
    }

    TimeRange window = omega.shifted(t_v);
    std::vector<NodeId> residents = g.nodes_in_window(window);
    if (residents.empty()) return {};

    std::vector<NodeId> roots;
    roots.reserve(n);
    if (residents.size() >= static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) {
            std::size_t j = i + rng.uniform_index(residents.size() - i);
            std::swap(residents[i], residents[j]);
            roots.push_back(residents[i]);
        }
    } else {
        for (int i = 0; i < n; ++i) roots.push_back(residents[rng.uniform_index(residents.size())]);
    }

    std::vector<NodeId> pool;
    pool.reserve(static_cast<std::size_t>(n) * l);
    for (NodeId root : roots) {
        WalkPath walk = temporal_rw(g, root, window, l, rng);
        pool.insert(pool.end(), walk.begin(), walk.end());
    }
    for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
    pool = space_out_statics(g, pool);

    std::vector<WalkPath> paths;
    for (int i = 0; i < n; ++i) {
        std::size_t b = static_cast<std::size_t>(i) * l;
        if (b >= pool.size()) break;
        std::size_t e = std::min(b + l, pool.size());
        paths.emplace_back(pool.begin() + b, pool.begin() + e);
    }
    return paths;
}

std::vector<NodeId> negative_sample(const MultimodalGraph& g, int l, SamplerRng& rng,
                                    bool seen_only) {
    if (l < 1) throw std::invalid_argument("negative_sample: l must be >= 1");
    std::vector<NodeId> out;
    out.reserve(l);
    if (!seen_only) {
        for (int i = 0; i < l; ++i)
            out.push_back(static_cast<NodeId>(rng.uniform_index(g.num_nodes())));
        return out;
    }
    std::vector<NodeId> seen;
    for (NodeId v = 0; v < g.num_nodes(); ++v)
        if (g.is_seen(v)) seen.push_back(v);
    if (seen.empty()) throw std::invalid_argument("negative_sample: no seen nodes");
    for (int i = 0; i < l; ++i) out.push_back(seen[rng.uniform_index(seen.size())]);
    return out;
}

std::vector<NodeId> make_batch(NodeId query, std::span<const WalkPath> pe,
                               std::span<const WalkPath> pt, std::span<const NodeId> pbar) {
    std::vector<NodeId> batch{query};
    std::unordered_set<NodeId> in{query};
    auto add = [&](NodeId v) {
        if (in.insert(v).second) batch.push_back(v);
    };
    for (const auto& walk : pe)
        for (NodeId v : walk) add(v);
    for (const auto& walk : pt)
        for (NodeId v : walk) add(v);
    for (NodeId v : pbar) add(v);
    return batch;
}

}  // namespace mgtcom
