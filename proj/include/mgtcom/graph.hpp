#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mgtcom {

using NodeTypeId = std::uint32_t;
using RelationTypeId = std::uint32_t;
using NodeId = std::uint32_t;  // global node id, types laid out contiguously
using Tick = std::int64_t;

// Typed reference (type, index within type). The TSV format and the builder
// speak in these; everything else uses global NodeId.
struct NodeRef {
    NodeTypeId type = 0;
    std::uint32_t index = 0;
    bool operator==(const NodeRef&) const = default;
};

// Closed integer interval [start, end]. A point event has start == end.
// start/end may be the infinity sentinels below.
struct TimeRange {
    static constexpr Tick kNegInf = std::numeric_limits<Tick>::min();
    static constexpr Tick kPosInf = std::numeric_limits<Tick>::max();

    Tick start = 0;
    Tick end = 0;

    bool operator==(const TimeRange&) const = default;

    bool intersects(const TimeRange& o) const {
        return start <= o.end && o.start <= end;
    }
    bool contains(Tick t) const { return start <= t && t <= end; }

    static TimeRange all() { return {kNegInf, kPosInf}; }
    static TimeRange point(Tick t) { return {t, t}; }

    // Window translated by t, saturating at the sentinels.
    TimeRange shifted(Tick t) const {
        auto shift = [t](Tick v) -> Tick {
            if (v == kNegInf || v == kPosInf) return v;
            if (t >= 0) return v > kPosInf - t ? kPosInf : v + t;
            return v < kNegInf - t ? kNegInf : v + t;
        };
        return {shift(start), shift(end)};
    }
};

// Per-type dense feature block. Rows follow the type's node indices; rows
// with present=0 hold zeros and must not be read.
struct FeatureTable {
    Eigen::MatrixXd values;          // type_count x dim (0x0 if the type has no features)
    std::vector<std::uint8_t> present;
    int dim() const { return static_cast<int>(values.cols()); }
};

struct EdgeRecord {
    NodeId src = 0;
    NodeId dst = 0;
    bool has_time = false;
    TimeRange time{};
};

// (neighbor, relation) pair in a node's incident list. Covers both stored
// directions: samplers traverse edges as undirected.
struct IncidentEdge {
    NodeId node = 0;
    RelationTypeId rel = 0;
};

class MultimodalGraph;

class GraphBuilder {
public:
    NodeTypeId add_node_type(std::string name, std::uint32_t count);
    RelationTypeId add_relation(std::string name);
    void add_edge(RelationTypeId rel, NodeRef src, NodeRef dst,
                  std::optional<TimeRange> time = {});
    // Feature matrix for one node type; presence defaults to all-present.
    void set_features(NodeTypeId type, Eigen::MatrixXd values,
                      std::vector<std::uint8_t> present = {});
    void set_time(NodeRef node, TimeRange range);
    void set_seen(NodeRef node, bool seen);

    MultimodalGraph build();

private:
    friend class MultimodalGraph;
    struct TypeSpec {
        std::string name;
        std::uint32_t count = 0;
    };
    struct PendingEdge {
        RelationTypeId rel;
        NodeRef src, dst;
        std::optional<TimeRange> time;
    };
    std::vector<TypeSpec> types_;
    std::vector<std::string> relations_;
    std::vector<PendingEdge> edges_;
    std::vector<std::pair<NodeRef, TimeRange>> times_;
    std::vector<std::pair<NodeRef, bool>> seen_;
    std::unordered_map<NodeTypeId, FeatureTable> features_;
};

// Immutable typed multimodal graph with temporal and incompleteness
// metadata. Safe for unlimited concurrent readers after build.
class MultimodalGraph {
public:
    MultimodalGraph() = default;  // empty graph; build real ones via GraphBuilder

    std::size_t num_nodes() const { return node_type_.size(); }
    std::size_t num_node_types() const { return type_names_.size(); }
    std::size_t num_relations() const { return relation_names_.size(); }
    std::size_t num_edges() const;  // stored directed edge records

    NodeTypeId node_type(NodeId v) const { return node_type_[v]; }
    std::uint32_t type_index(NodeId v) const { return v - type_offset_[node_type_[v]]; }
    NodeId global_id(NodeRef ref) const { return type_offset_[ref.type] + ref.index; }
    NodeRef node_ref(NodeId v) const { return {node_type_[v], type_index(v)}; }
    std::uint32_t type_count(NodeTypeId t) const { return type_count_[t]; }

    const std::string& node_type_name(NodeTypeId t) const { return type_names_[t]; }
    const std::string& relation_name(RelationTypeId r) const { return relation_names_[r]; }
    std::optional<NodeTypeId> find_node_type(std::string_view name) const;
    std::optional<RelationTypeId> find_relation(std::string_view name) const;

    bool has_feature(NodeId v) const { return has_feature_[v] != 0; }
    bool has_time(NodeId v) const { return has_time_[v] != 0; }
    bool is_seen(NodeId v) const { return is_seen_[v] != 0; }
    // Training-visibility flag is metadata, not structure; mutable post-build
    // so holdout experiments can mark nodes unseen without rebuilding.
    void set_seen(NodeId v, bool s) { is_seen_[v] = s ? 1 : 0; }
    TimeRange time_of(NodeId v) const { return node_time_[v]; }

    const FeatureTable& features(NodeTypeId t) const { return features_[t]; }
    int feature_dim(NodeTypeId t) const { return features_[t].dim(); }

    const std::vector<EdgeRecord>& edges(RelationTypeId r) const { return edges_[r]; }

    // Neighbors of v via relation r (or all relations), both directions.
    // Deterministic order; parallel edges kept (multigraph semantics).
    std::vector<NodeId> out_neighbors(NodeId v, std::optional<RelationTypeId> r = {}) const;

    std::span<const IncidentEdge> incident(NodeId v) const {
        return {incident_adj_.data() + incident_off_[v],
                incident_off_[v + 1] - incident_off_[v]};
    }
    // Merged neighbor list, sorted ascending; duplicates preserved.
    std::span<const NodeId> all_neighbors(NodeId v) const {
        return {merged_adj_.data() + merged_off_[v], merged_off_[v + 1] - merged_off_[v]};
    }
    std::size_t degree(NodeId v) const { return merged_off_[v + 1] - merged_off_[v]; }
    bool adjacent(NodeId a, NodeId b) const;

    // Timestamped nodes whose range intersects w (closed-interval test).
    // Static nodes never appear. Sorted by (range start, id).
    std::vector<NodeId> nodes_in_window(const TimeRange& w) const;

    std::size_t num_timestamped() const { return temporal_by_start_.size(); }
    // [min start, max end] over timestamped nodes; {0,0} if there are none.
    TimeRange time_extent() const { return extent_; }

private:
    friend class GraphBuilder;

    std::vector<std::string> type_names_;
    std::vector<std::string> relation_names_;
    std::vector<std::uint32_t> type_count_;
    std::vector<NodeId> type_offset_;  // size = types + 1
    std::vector<NodeTypeId> node_type_;

    std::vector<std::vector<EdgeRecord>> edges_;  // per relation

    std::vector<std::uint8_t> has_feature_, has_time_, is_seen_;
    std::vector<TimeRange> node_time_;
    std::vector<FeatureTable> features_;  // per type

    // CSR incident lists (node, rel), both directions, build order.
    std::vector<std::size_t> incident_off_;
    std::vector<IncidentEdge> incident_adj_;
    // CSR merged neighbor ids, sorted per node.
    std::vector<std::size_t> merged_off_;
    std::vector<NodeId> merged_adj_;

    // Temporal index: timestamped nodes sorted by range start; a max range
    // length bound turns intersection into a start-window scan.
    struct TemporalEntry {
        Tick start, end;
        NodeId node;
    };
    std::vector<TemporalEntry> temporal_by_start_;
    Tick max_range_len_ = 0;
    TimeRange extent_{0, 0};
};

}  // namespace mgtcom
