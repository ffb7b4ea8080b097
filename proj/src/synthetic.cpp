#include "mgtcom/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "mgtcom/sampling.hpp"

namespace mgtcom {

namespace {

// Geometric skip-sampling: visits each slot in [0, m) independently with
// probability p without touching the misses.
template <typename F>
void sample_slots(std::size_t m, double p, SamplerRng& rng, F&& emit) {
    if (m == 0 || p <= 0.0) return;
    if (p >= 1.0) {
        for (std::size_t i = 0; i < m; ++i) emit(i);
        return;
    }
    const double denom = std::log1p(-p);
    double pos = -1.0;
    while (true) {
        double u = rng.uniform01();
        pos += 1.0 + std::floor(std::log1p(-u) / denom);
        if (pos >= static_cast<double>(m)) return;
        emit(static_cast<std::size_t>(pos));
    }
}

// Exactly round(frac * n) ones, uniformly placed.
std::vector<std::uint8_t> pick_fraction(std::uint32_t n, double frac, SamplerRng& rng) {
    auto k = static_cast<std::uint32_t>(std::llround(frac * static_cast<double>(n)));
    k = std::min(k, n);
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    for (std::uint32_t i = 0; i < k; ++i)
        std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
    std::vector<std::uint8_t> mask(n, 0);
    for (std::uint32_t i = 0; i < k; ++i) mask[idx[i]] = 1;
    return mask;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (types.empty()) throw std::invalid_argument("synthetic spec needs at least one node type");
    for (const auto& t : types) {
        if (t.name.empty()) throw std::invalid_argument("synthetic node type needs a name");
        if (t.count == 0) throw std::invalid_argument("synthetic node type '" + t.name + "' is empty");
        if (t.missing_feat_frac < 0 || t.missing_feat_frac > 1)
            throw std::invalid_argument("missing_feat_frac out of [0,1]");
    }
    if (blocks < 1) throw std::invalid_argument("blocks must be >= 1");
    if (p_in < 0 || p_in > 1 || p_out < 0 || p_out > 1)
        throw std::invalid_argument("edge probabilities must lie in [0,1]");
    if (time_bins < 0) throw std::invalid_argument("time_bins must be >= 0");
    if (time_bins > 0 && time_span < time_bins)
        throw std::invalid_argument("time_span too small for the requested bins");
    if (missing_time_frac < 0 || missing_time_frac > 1)
        throw std::invalid_argument("missing_time_frac out of [0,1]");
}

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.blocks > 1 && spec.p_in <= spec.p_out)
        std::cerr << "warning: p_in <= p_out, generated blocks will not be separable\n";

    SamplerRng rng(seed);
    GraphBuilder b;
    const int B = spec.blocks;

    std::vector<NodeTypeId> type_ids;
    for (const auto& t : spec.types) type_ids.push_back(b.add_node_type(t.name, t.count));

    // Balanced block assignment: a shuffled permutation dealt round-robin.
    std::vector<std::vector<int>> block(spec.types.size());
    // members[t][b] lists the node indices of type t in block b.
    std::vector<std::vector<std::vector<std::uint32_t>>> members(spec.types.size());
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
        std::uint32_t n = spec.types[t].count;
        std::vector<std::uint32_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0u);
        for (std::uint32_t i = n; i > 1; --i)
            std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
        block[t].resize(n);
        members[t].resize(B);
        for (std::uint32_t i = 0; i < n; ++i) {
            int blk = static_cast<int>(i) % B;
            block[t][perm[i]] = blk;
            members[t][blk].push_back(perm[i]);
        }
        for (auto& m : members[t]) std::sort(m.begin(), m.end());
    }

    // Edges, one relation per unordered type pair. Every candidate pair is
    // visited once with geometric skips, so work scales with emitted edges.
    for (std::size_t ta = 0; ta < spec.types.size(); ++ta) {
        for (std::size_t tb = ta; tb < spec.types.size(); ++tb) {
            RelationTypeId rel =
                b.add_relation("links_" + spec.types[ta].name + "_" + spec.types[tb].name);
            auto emit = [&](std::uint32_t i, std::uint32_t j) {
                b.add_edge(rel, {type_ids[ta], i}, {type_ids[tb], j});
            };
            for (int bi = 0; bi < B; ++bi) {
                const auto& left = members[ta][bi];
                if (ta == tb) {
                    // Same type: unordered node pairs, each visited once.
                    for (int bj = bi; bj < B; ++bj) {
                        double p = bi == bj ? spec.p_in : spec.p_out;
                        if (bi == bj) {
                            for (std::size_t a = 0; a + 1 < left.size(); ++a)
                                sample_slots(left.size() - a - 1, p, rng, [&](std::size_t s) {
                                    emit(left[a], left[a + 1 + s]);
                                });
                        } else {
                            const auto& right = members[ta][bj];
                            for (std::uint32_t u : left)
                                sample_slots(right.size(), p, rng,
                                             [&](std::size_t s) { emit(u, right[s]); });
                        }
                    }
                } else {
                    for (int bj = 0; bj < B; ++bj) {
                        double p = bi == bj ? spec.p_in : spec.p_out;
                        const auto& right = members[tb][bj];
                        for (std::uint32_t u : left)
                            sample_slots(right.size(), p, rng,
                                         [&](std::size_t s) { emit(u, right[s]); });
                    }
                }
            }
        }
    }

    // Timestamps: point events drawn inside the node's bin subrange.
    std::vector<std::pair<NodeRef, int>> time_truth;
    if (spec.time_bins > 0) {
        const int bins = spec.time_bins;
        for (std::size_t t = 0; t < spec.types.size(); ++t) {
            auto is_static = pick_fraction(spec.types[t].count, spec.missing_time_frac, rng);
            for (std::uint32_t i = 0; i < spec.types[t].count; ++i) {
                if (is_static[i]) continue;
                int bin = spec.time_correlated ? block[t][i] % bins
                                               : static_cast<int>(rng.uniform_index(bins));
                Tick lo = spec.time_span * bin / bins;
                Tick hi = spec.time_span * (bin + 1) / bins - 1;
                Tick at = rng.uniform_tick(lo, hi);
                b.set_time({type_ids[t], i}, TimeRange::point(at));
                time_truth.push_back({{type_ids[t], i}, bin});
            }
        }
    }

    // Per-block Gaussian features.
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
        int dim = spec.types[t].feat_dim;
        if (dim <= 0) continue;
        Eigen::MatrixXd means(B, dim);
        for (int k = 0; k < B; ++k)
            for (int c = 0; c < dim; ++c) means(k, c) = spec.feature_scale * rng.normal();
        std::uint32_t n = spec.types[t].count;
        Eigen::MatrixXd values = Eigen::MatrixXd::Zero(n, dim);
        std::vector<std::uint8_t> present(n, 1);
        auto absent = pick_fraction(n, spec.types[t].missing_feat_frac, rng);
        for (std::uint32_t i = 0; i < n; ++i) {
            if (absent[i]) {
                present[i] = 0;
                continue;
            }
            for (int c = 0; c < dim; ++c) values(i, c) = means(block[t][i], c) + rng.normal();
        }
        b.set_features(type_ids[t], std::move(values), std::move(present));
    }

    Dataset ds;
    ds.graph = b.build();

    NamedLabels blocks_nl;
    blocks_nl.name = "block";
    blocks_nl.set.kind = LabelSet::Kind::GroundTruth;
    for (std::size_t t = 0; t < spec.types.size(); ++t)
        for (std::uint32_t i = 0; i < spec.types[t].count; ++i) {
            blocks_nl.set.nodes.push_back(ds.graph.global_id({type_ids[t], i}));
            blocks_nl.set.labels.push_back(block[t][i]);
        }
    blocks_nl.set.num_labels = B;
    ds.labels.push_back(std::move(blocks_nl));

    if (spec.time_bins > 0) {
        NamedLabels time_nl;
        time_nl.name = "time";
        time_nl.set.kind = LabelSet::Kind::Temporal;
        for (const auto& [ref, bin] : time_truth) {
            time_nl.set.nodes.push_back(ds.graph.global_id(ref));
            time_nl.set.labels.push_back(bin);
        }
        time_nl.set.num_labels = spec.time_bins;
        ds.labels.push_back(std::move(time_nl));
    }
    return ds;
}

void gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::string& dir) {
    save_dataset(make_synthetic(spec, seed), dir);
}

}  // namespace mgtcom
