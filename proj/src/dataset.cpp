#include "mgtcom/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string_view>
#include <unordered_map>

namespace mgtcom {
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail_at(const std::string& file, std::size_t line, const std::string& what) {
    throw std::runtime_error(file + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t tab = line.find('\t', pos);
        if (tab == std::string_view::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
}

long long parse_int(std::string_view s, const std::string& file, std::size_t line,
                    const char* what) {
    std::string buf(s);
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(buf.c_str(), &end, 10);
    if (buf.empty() || end != buf.c_str() + buf.size() || errno == ERANGE)
        fail_at(file, line, std::string("bad ") + what + " '" + buf + "'");
    return v;
}

double parse_double(std::string_view s, const std::string& file, std::size_t line,
                    const char* what) {
    std::string buf(s);
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(buf.c_str(), &end);
    if (buf.empty() || end != buf.c_str() + buf.size() || errno == ERANGE)
        fail_at(file, line, std::string("bad ") + what + " '" + buf + "'");
    return v;
}

// Strip a trailing '\r' so files written on other platforms still parse.
void chomp(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct NodeFile {
    std::string type_name;
    std::string path;
};

struct ParsedNodes {
    std::uint32_t count = 0;
    std::vector<TimeRange> times;          // valid where timed[i]
    std::vector<std::uint8_t> timed;
    Eigen::MatrixXd feats;                 // count x dim once dim known
    std::vector<std::uint8_t> present;
    int dim = -1;                          // -1 until a featured row is seen
};

ParsedNodes parse_node_file(const std::string& path, const std::string& fname) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    struct Row {
        std::uint32_t id;
        bool timed;
        TimeRange time;
        std::vector<double> feats;  // empty = missing
    };
    std::vector<Row> rows;
    int dim = -1;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        chomp(line);
        if (line.empty()) continue;
        auto cols = split_tabs(line);
        if (cols.size() < 4) fail_at(fname, lineno, "expected at least 4 columns");

        Row r;
        long long id = parse_int(cols[0], fname, lineno, "node id");
        if (id < 0) fail_at(fname, lineno, "negative node id");
        r.id = static_cast<std::uint32_t>(id);

        bool s_dash = cols[1] == "-", e_dash = cols[2] == "-";
        if (s_dash != e_dash) fail_at(fname, lineno, "t_start/t_end must both be set or both '-'");
        r.timed = !s_dash;
        if (r.timed) {
            r.time.start = parse_int(cols[1], fname, lineno, "t_start");
            r.time.end = parse_int(cols[2], fname, lineno, "t_end");
            if (r.time.start > r.time.end) fail_at(fname, lineno, "t_start > t_end");
        }

        if (cols.size() == 4 && cols[3] == "-") {
            // missing features
        } else {
            r.feats.reserve(cols.size() - 3);
            for (std::size_t c = 3; c < cols.size(); ++c)
                r.feats.push_back(parse_double(cols[c], fname, lineno, "feature"));
            if (dim == -1) dim = static_cast<int>(r.feats.size());
            else if (dim != static_cast<int>(r.feats.size()))
                fail_at(fname, lineno, "feature column count differs from earlier rows");
        }
        rows.push_back(std::move(r));
    }

    ParsedNodes out;
    out.count = static_cast<std::uint32_t>(rows.size());
    out.dim = dim;
    out.times.resize(rows.size());
    out.timed.assign(rows.size(), 0);
    out.present.assign(rows.size(), 0);
    if (dim > 0) out.feats = Eigen::MatrixXd::Zero(rows.size(), dim);

    std::vector<std::uint8_t> claimed(rows.size(), 0);
    for (const auto& r : rows) {
        if (r.id >= rows.size() || claimed[r.id])
            throw std::runtime_error(fname + ": node ids must cover 0.." +
                                     std::to_string(rows.size() - 1) + " exactly (id " +
                                     std::to_string(r.id) + ")");
        claimed[r.id] = 1;
        out.timed[r.id] = r.timed ? 1 : 0;
        if (r.timed) out.times[r.id] = r.time;
        if (!r.feats.empty()) {
            out.present[r.id] = 1;
            for (int c = 0; c < dim; ++c) out.feats(r.id, c) = r.feats[c];
        }
    }
    return out;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);

    std::vector<std::string> node_files, edge_files, label_files;
    for (const auto& ent : fs::directory_iterator(dir)) {
        if (!ent.is_regular_file()) continue;
        std::string name = ent.path().filename().string();
        if (!name.ends_with(".tsv")) continue;
        if (name.starts_with("nodes_")) node_files.push_back(name);
        else if (name.starts_with("edges_")) edge_files.push_back(name);
        else if (name.starts_with("labels_")) label_files.push_back(name);
    }
    std::sort(node_files.begin(), node_files.end());
    std::sort(edge_files.begin(), edge_files.end());
    std::sort(label_files.begin(), label_files.end());
    if (node_files.empty()) throw std::runtime_error(dir + ": no nodes_*.tsv files");

    auto stem_of = [](const std::string& name, std::size_t prefix) {
        return name.substr(prefix, name.size() - prefix - 4);
    };

    GraphBuilder b;
    std::unordered_map<std::string, NodeTypeId> type_of;
    std::vector<ParsedNodes> parsed;
    for (const auto& name : node_files) {
        std::string type_name = stem_of(name, 6);
        ParsedNodes pn = parse_node_file((fs::path(dir) / name).string(), name);
        NodeTypeId t = b.add_node_type(type_name, pn.count);
        type_of[type_name] = t;
        parsed.push_back(std::move(pn));
    }
    for (NodeTypeId t = 0; t < parsed.size(); ++t) {
        const auto& pn = parsed[t];
        for (std::uint32_t i = 0; i < pn.count; ++i)
            if (pn.timed[i]) b.set_time({t, i}, pn.times[i]);
        if (pn.dim > 0) b.set_features(t, pn.feats, pn.present);
    }

    auto lookup_type = [&](std::string_view s, const std::string& file,
                           std::size_t line) -> NodeTypeId {
        auto it = type_of.find(std::string(s));
        if (it == type_of.end()) fail_at(file, line, "unknown node type '" + std::string(s) + "'");
        return it->second;
    };
    auto checked_ref = [&](NodeTypeId t, std::string_view ids, const std::string& file,
                           std::size_t line) -> NodeRef {
        long long id = parse_int(ids, file, line, "node id");
        if (id < 0 || static_cast<std::uint64_t>(id) >= parsed[t].count)
            fail_at(file, line, "node id " + std::string(ids) + " out of range");
        return {t, static_cast<std::uint32_t>(id)};
    };

    for (const auto& name : edge_files) {
        RelationTypeId rel = b.add_relation(stem_of(name, 6));
        std::string path = (fs::path(dir) / name).string();
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            chomp(line);
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 6) fail_at(name, lineno, "expected 6 columns");
            NodeRef src = checked_ref(lookup_type(cols[0], name, lineno), cols[1], name, lineno);
            NodeRef dst = checked_ref(lookup_type(cols[2], name, lineno), cols[3], name, lineno);
            bool s_dash = cols[4] == "-", e_dash = cols[5] == "-";
            if (s_dash != e_dash) fail_at(name, lineno, "t_start/t_end must both be set or both '-'");
            std::optional<TimeRange> tr;
            if (!s_dash) {
                TimeRange r;
                r.start = parse_int(cols[4], name, lineno, "t_start");
                r.end = parse_int(cols[5], name, lineno, "t_end");
                if (r.start > r.end) fail_at(name, lineno, "t_start > t_end");
                tr = r;
            }
            b.add_edge(rel, src, dst, tr);
        }
    }

    Dataset ds;
    ds.graph = b.build();

    for (const auto& name : label_files) {
        NamedLabels nl;
        nl.name = stem_of(name, 7);
        nl.set.kind = nl.name.find("time") != std::string::npos ? LabelSet::Kind::Temporal
                                                                : LabelSet::Kind::GroundTruth;
        std::string path = (fs::path(dir) / name).string();
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::string line;
        std::size_t lineno = 0;
        int max_label = -1;
        while (std::getline(in, line)) {
            ++lineno;
            chomp(line);
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 3) fail_at(name, lineno, "expected 3 columns");
            NodeTypeId t = lookup_type(cols[0], name, lineno);
            NodeRef ref = checked_ref(t, cols[1], name, lineno);
            long long lab = parse_int(cols[2], name, lineno, "label");
            if (lab < 0) fail_at(name, lineno, "negative label");
            nl.set.nodes.push_back(ds.graph.global_id(ref));
            nl.set.labels.push_back(static_cast<int>(lab));
            max_label = std::max(max_label, static_cast<int>(lab));
        }
        nl.set.num_labels = max_label + 1;
        ds.labels.push_back(std::move(nl));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    const MultimodalGraph& g = ds.graph;

    for (NodeTypeId t = 0; t < g.num_node_types(); ++t) {
        std::string path = (fs::path(dir) / ("nodes_" + g.node_type_name(t) + ".tsv")).string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        const FeatureTable& ft = g.features(t);
        for (std::uint32_t i = 0; i < g.type_count(t); ++i) {
            NodeId v = g.global_id({t, i});
            out << i;
            if (g.has_time(v)) {
                TimeRange r = g.time_of(v);
                out << '\t' << r.start << '\t' << r.end;
            } else {
                out << "\t-\t-";
            }
            if (g.has_feature(v)) {
                for (int c = 0; c < ft.dim(); ++c) out << '\t' << fmt_double(ft.values(i, c));
            } else {
                out << "\t-";
            }
            out << '\n';
        }
    }

    for (RelationTypeId r = 0; r < g.num_relations(); ++r) {
        std::string path = (fs::path(dir) / ("edges_" + g.relation_name(r) + ".tsv")).string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        std::vector<EdgeRecord> recs = g.edges(r);
        std::sort(recs.begin(), recs.end(), [](const EdgeRecord& a, const EdgeRecord& b) {
            if (a.src != b.src) return a.src < b.src;
            if (a.dst != b.dst) return a.dst < b.dst;
            if (a.has_time != b.has_time) return !a.has_time;
            return a.time.start != b.time.start ? a.time.start < b.time.start
                                                : a.time.end < b.time.end;
        });
        for (const auto& e : recs) {
            NodeRef s = g.node_ref(e.src), d = g.node_ref(e.dst);
            out << g.node_type_name(s.type) << '\t' << s.index << '\t'
                << g.node_type_name(d.type) << '\t' << d.index;
            if (e.has_time) out << '\t' << e.time.start << '\t' << e.time.end;
            else out << "\t-\t-";
            out << '\n';
        }
    }

    for (const auto& nl : ds.labels) {
        std::string path = (fs::path(dir) / ("labels_" + nl.name + ".tsv")).string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        std::vector<std::size_t> order(nl.set.nodes.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return nl.set.nodes[a] < nl.set.nodes[b];
        });
        for (std::size_t i : order) {
            NodeRef ref = g.node_ref(nl.set.nodes[i]);
            out << g.node_type_name(ref.type) << '\t' << ref.index << '\t' << nl.set.labels[i]
                << '\n';
        }
    }
}

}  // namespace mgtcom
