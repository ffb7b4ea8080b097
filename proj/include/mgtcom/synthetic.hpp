#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgtcom/dataset.hpp"

namespace mgtcom {

// Block-model generator spec. Nodes of every type are spread evenly over
// `blocks` communities; an edge between two nodes appears with p_in when
// they share a block and p_out otherwise, independently per pair, for one
// relation per unordered type pair ("links_<a>_<b>").
struct SyntheticTypeSpec {
    std::string name;
    std::uint32_t count = 0;
    int feat_dim = 0;                 // 0 = type carries no features
    double missing_feat_frac = 0.0;   // fraction of rows written as "-"
};

struct SyntheticSpec {
    std::vector<SyntheticTypeSpec> types;
    int blocks = 2;
    double p_in = 0.2;
    double p_out = 0.01;

    int time_bins = 0;                // 0 = untimed dataset
    double missing_time_frac = 0.0;   // fraction of nodes left static
    Tick time_span = 1000;            // timestamps drawn from [0, time_span)
    bool time_correlated = false;     // bin = block % bins instead of uniform

    double feature_scale = 1.0;       // spread of the per-block feature means

    void validate() const;
};

// Deterministic in (spec, seed). Ground truth ships as labels_block (all
// nodes) and, when timed, labels_time (timestamped nodes, bin index).
Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// make_synthetic + save_dataset into dir.
void gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::string& dir);

}  // namespace mgtcom
