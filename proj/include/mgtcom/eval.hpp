#pragma once

#include "mgtcom/graph.hpp"
#include "mgtcom/sampling.hpp"
#include "mgtcom/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace mgtcom {

// Disjoint edge split with per-split negative (non-edge) pairs.
struct EdgeSplit {
    struct Pair {
        NodeId a = 0, b = 0;
    };
    std::vector<Pair> train_pos, valid_pos, test_pos;
    std::vector<Pair> train_neg, valid_neg, test_neg;
};

// Node labeling over a declared subset.
struct LabelSet {
    enum class Kind { GroundTruth, Temporal, LinkBased };
    Kind kind = Kind::GroundTruth;
    std::vector<NodeId> nodes;
    std::vector<int> labels;  // aligned with nodes
    int num_labels = 0;
};

// Uniform random split by the given (train, valid, test) ratios — floor
// sizes with the remainder going to train — plus uniformly sampled
// negatives (verified non-edges against the full edge set), one per
// positive in each split.
EdgeSplit split_edges(const MultimodalGraph& g, const std::array<double, 3>& ratios,
                      std::uint64_t seed);

// Equal-frequency binning of timestamped nodes by range start; boundary
// ties fall into the earlier bin.
LabelSet temporal_labels(const MultimodalGraph& g, int bins);

// Link prediction probe: logistic regression on the inner product of the
// endpoint embeddings, trained on the train split, scored on the test
// split, averaged over 3 repeats. Z is indexed by global node id.
double lp_accuracy(const Matrix& z, const EdgeSplit& split, SamplerRng& rng);

// Classification probe: multinomial logistic regression on the embedding
// (gradient-trained, 200 epochs, lr 0.1, stratified 80/20 split), averaged
// over 3 runs. Rejects single-class label sets.
double cf_accuracy(const Matrix& z, const LabelSet& labels, SamplerRng& rng);

// Normalized mutual information between two aligned assignments,
// geometric-mean normalization. 1 when the partitions are identical, 0
// when either side has zero entropy while the partitions differ.
double nmi(std::span<const int> a, std::span<const int> b);

// Newman modularity of an assignment over the homogenized undirected
// multigraph (all relations merged, parallel edges counted). 0 on an
// edgeless graph.
double modularity(const MultimodalGraph& g, std::span<const int> z);

// Two-phase Louvain community detection on the homogenized graph.
LabelSet louvain_labels(const MultimodalGraph& g);

}  // namespace mgtcom
