#include "mgtcom/graph.hpp"

#include <algorithm>
#include <stdexcept>

namespace mgtcom {

NodeTypeId GraphBuilder::add_node_type(std::string name, std::uint32_t count) {
    for (const auto& t : types_)
        if (t.name == name) throw std::invalid_argument("duplicate node type: " + name);
    types_.push_back({std::move(name), count});
    return static_cast<NodeTypeId>(types_.size() - 1);
}

RelationTypeId GraphBuilder::add_relation(std::string name) {
    for (const auto& r : relations_)
        if (r == name) throw std::invalid_argument("duplicate relation: " + name);
    relations_.push_back(std::move(name));
    return static_cast<RelationTypeId>(relations_.size() - 1);
}

void GraphBuilder::add_edge(RelationTypeId rel, NodeRef src, NodeRef dst,
                            std::optional<TimeRange> time) {
    edges_.push_back({rel, src, dst, time});
}

void GraphBuilder::set_features(NodeTypeId type, Eigen::MatrixXd values,
                                std::vector<std::uint8_t> present) {
    if (present.empty()) present.assign(static_cast<std::size_t>(values.rows()), 1);
    features_[type] = FeatureTable{std::move(values), std::move(present)};
}

void GraphBuilder::set_time(NodeRef node, TimeRange range) {
    if (range.start > range.end)
        throw std::invalid_argument("time range start > end");
    if (range.start == TimeRange::kNegInf || range.end == TimeRange::kPosInf)
        throw std::invalid_argument("node time ranges must be finite ticks");
    times_.emplace_back(node, range);
}

void GraphBuilder::set_seen(NodeRef node, bool seen) { seen_.emplace_back(node, seen); }

MultimodalGraph GraphBuilder::build() {
    MultimodalGraph g;
    const std::size_t n_types = types_.size();
    g.type_names_.reserve(n_types);
    g.type_count_.reserve(n_types);
    g.type_offset_.assign(1, 0);
    for (const auto& t : types_) {
        g.type_names_.push_back(t.name);
        g.type_count_.push_back(t.count);
        g.type_offset_.push_back(g.type_offset_.back() + t.count);
    }
    const std::size_t n = g.type_offset_.back();
    g.node_type_.resize(n);
    for (NodeTypeId t = 0; t < n_types; ++t)
        std::fill(g.node_type_.begin() + g.type_offset_[t],
                  g.node_type_.begin() + g.type_offset_[t + 1], t);

    g.relation_names_ = relations_;
    g.edges_.resize(relations_.size());

    auto check_ref = [&](NodeRef ref, const std::string& what) -> NodeId {
        if (ref.type >= n_types)
            throw std::invalid_argument(what + ": unknown node type " + std::to_string(ref.type));
        if (ref.index >= types_[ref.type].count)
            throw std::invalid_argument(what + ": node index " + std::to_string(ref.index) +
                                        " out of range for type " + types_[ref.type].name +
                                        " (count " + std::to_string(types_[ref.type].count) + ")");
        return g.type_offset_[ref.type] + ref.index;
    };

    std::size_t edge_no = 0;
    for (const auto& e : edges_) {
        if (e.rel >= relations_.size())
            throw std::invalid_argument("edge " + std::to_string(edge_no) +
                                        ": unknown relation " + std::to_string(e.rel));
        NodeId s = check_ref(e.src, "edge " + std::to_string(edge_no));
        NodeId d = check_ref(e.dst, "edge " + std::to_string(edge_no));
        EdgeRecord rec{s, d, e.time.has_value(), e.time.value_or(TimeRange{})};
        if (rec.has_time && rec.time.start > rec.time.end)
            throw std::invalid_argument("edge " + std::to_string(edge_no) +
                                        ": time range start > end");
        g.edges_[e.rel].push_back(rec);
        ++edge_no;
    }

    g.features_.resize(n_types);
    for (auto& [t, table] : features_) {
        if (t >= n_types) throw std::invalid_argument("features for unknown node type");
        if (static_cast<std::uint32_t>(table.values.rows()) != types_[t].count)
            throw std::invalid_argument("feature row count mismatch for type " + types_[t].name +
                                        ": got " + std::to_string(table.values.rows()) +
                                        ", expected " + std::to_string(types_[t].count));
        if (table.present.size() != types_[t].count)
            throw std::invalid_argument("feature presence size mismatch for type " + types_[t].name);
        g.features_[t] = std::move(table);
    }

    g.has_feature_.assign(n, 0);
    g.has_time_.assign(n, 0);
    g.is_seen_.assign(n, 1);
    g.node_time_.assign(n, TimeRange{});
    for (NodeTypeId t = 0; t < n_types; ++t) {
        const auto& table = g.features_[t];
        if (table.dim() == 0) continue;
        for (std::uint32_t i = 0; i < types_[t].count; ++i)
            g.has_feature_[g.type_offset_[t] + i] = table.present[i];
    }
    for (const auto& [ref, range] : times_) {
        NodeId v = check_ref(ref, "time range");
        g.has_time_[v] = 1;
        g.node_time_[v] = range;
    }
    for (const auto& [ref, s] : seen_) g.is_seen_[check_ref(ref, "seen flag")] = s ? 1 : 0;

    // Incident CSR over both directions.
    std::vector<std::size_t> deg(n + 1, 0);
    for (RelationTypeId r = 0; r < g.edges_.size(); ++r)
        for (const auto& e : g.edges_[r]) {
            ++deg[e.src];
            ++deg[e.dst];
        }
    g.incident_off_.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) g.incident_off_[v + 1] = g.incident_off_[v] + deg[v];
    g.incident_adj_.resize(g.incident_off_[n]);
    {
        std::vector<std::size_t> cur(g.incident_off_.begin(), g.incident_off_.end() - 1);
        for (RelationTypeId r = 0; r < g.edges_.size(); ++r)
            for (const auto& e : g.edges_[r]) {
                g.incident_adj_[cur[e.src]++] = {e.dst, r};
                g.incident_adj_[cur[e.dst]++] = {e.src, r};
            }
    }

    g.merged_off_ = g.incident_off_;
    g.merged_adj_.resize(g.incident_adj_.size());
    for (std::size_t v = 0; v < n; ++v) {
        std::size_t b = g.merged_off_[v], e = g.merged_off_[v + 1];
        for (std::size_t i = b; i < e; ++i) g.merged_adj_[i] = g.incident_adj_[i].node;
        std::sort(g.merged_adj_.begin() + b, g.merged_adj_.begin() + e);
    }

    for (NodeId v = 0; v < n; ++v)
        if (g.has_time_[v])
            g.temporal_by_start_.push_back({g.node_time_[v].start, g.node_time_[v].end, v});
    std::sort(g.temporal_by_start_.begin(), g.temporal_by_start_.end(),
              [](const auto& a, const auto& b) {
                  return a.start != b.start ? a.start < b.start : a.node < b.node;
              });
    g.max_range_len_ = 0;
    if (!g.temporal_by_start_.empty()) {
        Tick lo = TimeRange::kPosInf, hi = TimeRange::kNegInf;
        for (const auto& te : g.temporal_by_start_) {
            g.max_range_len_ = std::max(g.max_range_len_, te.end - te.start);
            lo = std::min(lo, te.start);
            hi = std::max(hi, te.end);
        }
        g.extent_ = {lo, hi};
    }
    return g;
}

std::size_t MultimodalGraph::num_edges() const {
    std::size_t total = 0;
    for (const auto& v : edges_) total += v.size();
    return total;
}

std::optional<NodeTypeId> MultimodalGraph::find_node_type(std::string_view name) const {
    for (std::size_t i = 0; i < type_names_.size(); ++i)
        if (type_names_[i] == name) return static_cast<NodeTypeId>(i);
    return {};
}

std::optional<RelationTypeId> MultimodalGraph::find_relation(std::string_view name) const {
    for (std::size_t i = 0; i < relation_names_.size(); ++i)
        if (relation_names_[i] == name) return static_cast<RelationTypeId>(i);
    return {};
}

std::vector<NodeId> MultimodalGraph::out_neighbors(NodeId v,
                                                   std::optional<RelationTypeId> r) const {
    std::vector<NodeId> out;
    for (const auto& ie : incident(v))
        if (!r || ie.rel == *r) out.push_back(ie.node);
    return out;
}

bool MultimodalGraph::adjacent(NodeId a, NodeId b) const {
    auto nb = all_neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
}

std::vector<NodeId> MultimodalGraph::nodes_in_window(const TimeRange& w) const {
    std::vector<NodeId> out;
    if (temporal_by_start_.empty() || w.start > w.end) return out;
    // Any intersecting entry has start in [w.start - max_len, w.end].
    std::size_t i = 0;
    if (w.start != TimeRange::kNegInf) {
        // lo = w.start - max_range_len_, clamped against underflow
        Tick lo = (w.start <= TimeRange::kNegInf + max_range_len_)
                      ? TimeRange::kNegInf
                      : w.start - max_range_len_;
        i = std::lower_bound(temporal_by_start_.begin(), temporal_by_start_.end(), lo,
                             [](const TemporalEntry& e, Tick t) { return e.start < t; }) -
            temporal_by_start_.begin();
    }
    for (; i < temporal_by_start_.size() && temporal_by_start_[i].start <= w.end; ++i)
        if (temporal_by_start_[i].end >= w.start) out.push_back(temporal_by_start_[i].node);
    return out;
}

}  // namespace mgtcom
