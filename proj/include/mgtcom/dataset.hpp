#pragma once

#include <string>
#include <vector>

#include "mgtcom/eval.hpp"
#include "mgtcom/graph.hpp"

namespace mgtcom {

// A graph plus any number of named node-label tables loaded alongside it.
//
// On-disk layout (one directory, tab-separated files):
//   nodes_<type>.tsv   id  t_start  t_end  f_0 .. f_{d-1}
//                      times are integer ticks or "-" in both columns; the
//                      feature block is d double columns, or a single "-"
//                      when this node's features are missing
//   edges_<rel>.tsv    src_type  src_id  dst_type  dst_id  t_start  t_end
//   labels_<name>.tsv  type  id  label
//
// Node ids are per-type and must cover 0..count-1 exactly (any row order).
struct NamedLabels {
    std::string name;
    LabelSet set;
};

struct Dataset {
    MultimodalGraph graph;
    std::vector<NamedLabels> labels;

    const LabelSet* find_labels(const std::string& name) const {
        for (const auto& nl : labels)
            if (nl.name == name) return &nl.set;
        return nullptr;
    }
};

// Reads every nodes_*/edges_*/labels_* file in `dir`. Throws std::runtime_error
// with "<file>:<line>: <what>" on any malformed row.
Dataset load_dataset(const std::string& dir);

// Writes the dataset back out in canonical form (sorted file names, rows in
// id/endpoint order, full double precision). load(save(x)) is byte-stable.
void save_dataset(const Dataset& ds, const std::string& dir);

}  // namespace mgtcom
