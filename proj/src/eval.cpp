#include "mgtcom/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mgtcom {

namespace {

std::vector<EdgeSplit::Pair> all_edge_pairs(const MultimodalGraph& g) {
    std::vector<EdgeSplit::Pair> pairs;
    for (RelationTypeId r = 0; r < g.num_relations(); ++r) {
        for (const EdgeRecord& e : g.edges(r)) pairs.push_back({e.src, e.dst});
    }
    return pairs;
}

}  // namespace

EdgeSplit split_edges(const MultimodalGraph& g, const std::array<double, 3>& ratios,
                      std::uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("edge split ratios must sum to 1");
    SamplerRng rng(seed);
    auto pairs = all_edge_pairs(g);
    // Fisher-Yates shuffle
    for (std::size_t i = pairs.size(); i > 1; --i) {
        std::swap(pairs[i - 1], pairs[rng.uniform_index(i)]);
    }
    std::size_t n = pairs.size();
    std::size_t n_valid = static_cast<std::size_t>(ratios[1] * n);
    std::size_t n_test = static_cast<std::size_t>(ratios[2] * n);
    std::size_t n_train = n - n_valid - n_test;  // remainder to train

    EdgeSplit split;
    split.train_pos.assign(pairs.begin(), pairs.begin() + n_train);
    split.valid_pos.assign(pairs.begin() + n_train, pairs.begin() + n_train + n_valid);
    split.test_pos.assign(pairs.begin() + n_train + n_valid, pairs.end());

    auto sample_negatives = [&](std::size_t count) {
        std::vector<EdgeSplit::Pair> neg;
        std::size_t guard = 0;
        while (neg.size() < count) {
            NodeId a = static_cast<NodeId>(rng.uniform_index(g.num_nodes()));
            NodeId b = static_cast<NodeId>(rng.uniform_index(g.num_nodes()));
            if (a != b && !g.adjacent(a, b)) neg.push_back({a, b});
            if (++guard > 1000 * (count + 1)) {
                throw std::runtime_error("negative sampling stalled; graph nearly complete");
            }
        }
        return neg;
    };
    split.train_neg = sample_negatives(split.train_pos.size());
    split.valid_neg = sample_negatives(split.valid_pos.size());
    split.test_neg = sample_negatives(split.test_pos.size());
    return split;
}

LabelSet temporal_labels(const MultimodalGraph& g, int bins) {
    if (bins < 2) throw std::invalid_argument("temporal labels need at least 2 bins");
    struct Entry {
        Tick start;
        NodeId node;
    };
    std::vector<Entry> entries;
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        if (g.has_time(v)) entries.push_back({g.time_of(v).start, v});
    }
    LabelSet out;
    out.kind = LabelSet::Kind::Temporal;
    if (entries.empty()) return out;
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.start < b.start || (a.start == b.start && a.node < b.node);
    });
    std::size_t n = entries.size();
    std::vector<int> provisional(n);
    for (std::size_t i = 0; i < n; ++i) {
        provisional[i] = static_cast<int>(i * static_cast<std::size_t>(bins) / n);
    }
    // runs of equal start times collapse into the earlier bin
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && entries[j].start == entries[i].start) ++j;
        for (std::size_t t = i; t < j; ++t) provisional[t] = provisional[i];
        i = j;
    }
    out.nodes.reserve(n);
    out.labels.reserve(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out.nodes.push_back(entries[i].node);
        out.labels.push_back(provisional[i]);
        max_label = std::max(max_label, provisional[i]);
    }
    out.num_labels = max_label + 1;
    return out;
}

namespace {

// Binary logistic regression on a 1-D feature (standardized on train
// stats). Full-batch gradient descent; returns test accuracy.
double binary_lr_accuracy(const std::vector<double>& x_train, const std::vector<int>& y_train,
                          const std::vector<double>& x_test, const std::vector<int>& y_test,
                          SamplerRng& rng) {
    double mean = std::accumulate(x_train.begin(), x_train.end(), 0.0) /
                  static_cast<double>(x_train.size());
    double var = 0;
    for (double v : x_train) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / static_cast<double>(x_train.size()));
    if (sd < 1e-12) sd = 1.0;

    double w = 0.01 * rng.normal(), b = 0.01 * rng.normal();
    const double lr = 0.5;
    const int epochs = 500;
    std::size_t n = x_train.size();
    for (int e = 0; e < epochs; ++e) {
        double gw = 0, gb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double xi = (x_train[i] - mean) / sd;
            double p = 1.0 / (1.0 + std::exp(-(w * xi + b)));
            double err = p - y_train[i];
            gw += err * xi;
            gb += err;
        }
        w -= lr * gw / static_cast<double>(n);
        b -= lr * gb / static_cast<double>(n);
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x_test.size(); ++i) {
        double xi = (x_test[i] - mean) / sd;
        double p = 1.0 / (1.0 + std::exp(-(w * xi + b)));
        correct += (p >= 0.5 ? 1 : 0) == y_test[i];
    }
    return x_test.empty() ? 0.0 : static_cast<double>(correct) / x_test.size();
}

double inner(const Matrix& z, const EdgeSplit::Pair& p) {
    return z.row(p.a).dot(z.row(p.b));
}

}  // namespace

double lp_accuracy(const Matrix& z, const EdgeSplit& split, SamplerRng& rng) {
    if (split.train_pos.empty() || split.test_pos.empty()) {
        throw std::invalid_argument("link prediction needs train and test edges");
    }
    std::vector<double> x_train, x_test;
    std::vector<int> y_train, y_test;
    for (const auto& p : split.train_pos) {
        x_train.push_back(inner(z, p));
        y_train.push_back(1);
    }
    for (const auto& p : split.train_neg) {
        x_train.push_back(inner(z, p));
        y_train.push_back(0);
    }
    for (const auto& p : split.test_pos) {
        x_test.push_back(inner(z, p));
        y_test.push_back(1);
    }
    for (const auto& p : split.test_neg) {
        x_test.push_back(inner(z, p));
        y_test.push_back(0);
    }
    double acc = 0;
    for (int rep = 0; rep < 3; ++rep) {
        acc += binary_lr_accuracy(x_train, y_train, x_test, y_test, rng);
    }
    return acc / 3.0;
}

double cf_accuracy(const Matrix& z, const LabelSet& labels, SamplerRng& rng) {
    if (labels.nodes.empty()) throw std::invalid_argument("classification: empty label set");
    // dense label codes
    std::unordered_map<int, int> code;
    for (int l : labels.labels) code.emplace(l, static_cast<int>(code.size()));
    int C = static_cast<int>(code.size());
    if (C < 2) throw std::invalid_argument("classification needs at least two classes");
    const auto d = z.cols();

    std::vector<std::vector<std::size_t>> by_class(C);
    for (std::size_t i = 0; i < labels.nodes.size(); ++i) {
        by_class[static_cast<std::size_t>(code[labels.labels[i]])].push_back(i);
    }

    double total = 0;
    for (int run = 0; run < 3; ++run) {
        std::vector<std::size_t> train_idx, test_idx;
        for (auto& members : by_class) {
            std::vector<std::size_t> shuffled = members;
            for (std::size_t i = shuffled.size(); i > 1; --i) {
                std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);
            }
            std::size_t n_train = shuffled.size() >= 2
                                      ? std::max<std::size_t>(1, shuffled.size() * 8 / 10)
                                      : shuffled.size();
            if (n_train == shuffled.size() && shuffled.size() >= 2) --n_train;
            for (std::size_t i = 0; i < shuffled.size(); ++i) {
                (i < n_train ? train_idx : test_idx).push_back(shuffled[i]);
            }
        }
        if (test_idx.empty()) throw std::invalid_argument("classification: empty test split");

        Matrix w = Matrix::Zero(d, C);
        Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(C);
        const double lr = 0.1;
        for (int e = 0; e < 200; ++e) {
            Matrix gw = Matrix::Zero(d, C);
            Eigen::RowVectorXd gb = Eigen::RowVectorXd::Zero(C);
            for (std::size_t i : train_idx) {
                Eigen::RowVectorXd logits = z.row(labels.nodes[i]) * w + b;
                double mx = logits.maxCoeff();
                Eigen::RowVectorXd p = (logits.array() - mx).exp();
                p /= p.sum();
                p(code[labels.labels[i]]) -= 1.0;
                gw += z.row(labels.nodes[i]).transpose() * p;
                gb += p;
            }
            w -= (lr / static_cast<double>(train_idx.size())) * gw;
            b -= (lr / static_cast<double>(train_idx.size())) * gb;
        }
        std::size_t correct = 0;
        for (std::size_t i : test_idx) {
            Eigen::RowVectorXd logits = z.row(labels.nodes[i]) * w + b;
            Eigen::Index best;
            logits.maxCoeff(&best);
            correct += static_cast<int>(best) == code[labels.labels[i]];
        }
        total += static_cast<double>(correct) / static_cast<double>(test_idx.size());
    }
    return total / 3.0;
}

double nmi(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw std::invalid_argument("assignments must align");
    if (a.empty()) return 0.0;
    std::map<int, int> ca, cb;
    for (int x : a) ca.emplace(x, static_cast<int>(ca.size()));
    for (int x : b) cb.emplace(x, static_cast<int>(cb.size()));
    std::size_t ka = ca.size(), kb = cb.size();
    Matrix joint = Matrix::Zero(static_cast<Eigen::Index>(ka), static_cast<Eigen::Index>(kb));
    for (std::size_t i = 0; i < a.size(); ++i) joint(ca[a[i]], cb[b[i]]) += 1.0;
    double n = static_cast<double>(a.size());
    joint /= n;
    Eigen::VectorXd pa = joint.rowwise().sum();
    Eigen::RowVectorXd pb = joint.colwise().sum();
    double ha = 0, hb = 0, mi = 0;
    for (Eigen::Index i = 0; i < pa.size(); ++i) {
        if (pa(i) > 0) ha -= pa(i) * std::log(pa(i));
    }
    for (Eigen::Index j = 0; j < pb.size(); ++j) {
        if (pb(j) > 0) hb -= pb(j) * std::log(pb(j));
    }
    for (Eigen::Index i = 0; i < joint.rows(); ++i) {
        for (Eigen::Index j = 0; j < joint.cols(); ++j) {
            if (joint(i, j) > 0) mi += joint(i, j) * std::log(joint(i, j) / (pa(i) * pb(j)));
        }
    }
    if (ha <= 0 || hb <= 0) {
        // zero entropy on either side: 1 iff the partitions are identical
        bool same_structure = true;
        for (std::size_t i = 1; i < a.size() && same_structure; ++i) {
            same_structure = (a[i] == a[0]) == (b[i] == b[0]);
        }
        // both constant => identical partitions
        return (ha <= 0 && hb <= 0) || (same_structure && ka == kb) ? 1.0 : 0.0;
    }
    double v = mi / std::sqrt(ha * hb);
    return std::clamp(v, 0.0, 1.0);
}

double modularity(const MultimodalGraph& g, std::span<const int> z) {
    if (z.size() != g.num_nodes()) {
        throw std::invalid_argument("modularity: assignment must cover all nodes");
    }
    auto pairs = all_edge_pairs(g);
    if (pairs.empty()) return 0.0;
    double m = static_cast<double>(pairs.size());
    std::unordered_map<int, double> intra, degree;
    for (const auto& p : pairs) {
        if (z[p.a] == z[p.b]) intra[z[p.a]] += 1.0;
        degree[z[p.a]] += 1.0;
        degree[z[p.b]] += 1.0;
    }
    double q = 0;
    for (const auto& [community, deg] : degree) {
        double e_kk = intra.count(community) ? intra[community] / m : 0.0;
        double a_k = deg / (2.0 * m);
        q += e_kk - a_k * a_k;
    }
    return q;
}

namespace {

struct WeightedGraph {
    std::size_t n = 0;
    std::vector<std::vector<std::pair<std::size_t, double>>> adj;  // includes self-loops
    double total_weight = 0;  // sum of edge weights (each undirected edge once)
};

WeightedGraph homogenize(const MultimodalGraph& g) {
    WeightedGraph wg;
    wg.n = g.num_nodes();
    wg.adj.resize(wg.n);
    std::map<std::pair<std::size_t, std::size_t>, double> agg;
    for (RelationTypeId r = 0; r < g.num_relations(); ++r) {
        for (const EdgeRecord& e : g.edges(r)) {
            std::pair<std::size_t, std::size_t> key = std::minmax<std::size_t>(e.src, e.dst);
            agg[key] += 1.0;
        }
    }
    for (const auto& [key, w] : agg) {
        wg.total_weight += w;
        wg.adj[key.first].emplace_back(key.second, w);
        if (key.second != key.first) wg.adj[key.second].emplace_back(key.first, w);
    }
    return wg;
}

// One Louvain level: greedy modularity moves until no improvement.
// Returns community per node (compacted) and whether anything moved.
std::pair<std::vector<std::size_t>, bool> louvain_level(const WeightedGraph& wg) {
    std::size_t n = wg.n;
    double two_m = 2.0 * wg.total_weight;
    std::vector<std::size_t> comm(n);
    std::vector<double> k(n, 0.0);       // weighted degree (self-loops count twice)
    std::vector<double> sigma_tot(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
        comm[v] = v;
        for (auto [u, w] : wg.adj[v]) k[v] += (u == v) ? 2.0 * w : w;
        sigma_tot[v] = k[v];
    }
    bool any_move = false;
    bool improved = true;
    int rounds = 0;
    while (improved && rounds++ < 100) {
        improved = false;
        for (std::size_t v = 0; v < n; ++v) {
            std::size_t old_c = comm[v];
            // weights from v to each neighboring community (self-loops excluded)
            std::unordered_map<std::size_t, double> to_comm;
            to_comm[old_c] += 0.0;
            for (auto [u, w] : wg.adj[v]) {
                if (u != v) to_comm[comm[u]] += w;
            }
            sigma_tot[old_c] -= k[v];
            // score(c) = w_{v,c}/m - k_v * sigma_tot(c) / (2 m^2), sigma
            // computed with v removed; move only on a strict improvement
            auto score = [&](std::size_t c, double w_in) {
                return w_in / wg.total_weight - k[v] * sigma_tot[c] / (two_m * wg.total_weight);
            };
            std::size_t best_c = old_c;
            double best = score(old_c, to_comm[old_c]);
            for (const auto& [c, w_in] : to_comm) {
                double candidate = score(c, w_in);
                if (candidate > best + 1e-12) {
                    best = candidate;
                    best_c = c;
                }
            }
            sigma_tot[best_c] += k[v];
            if (best_c != old_c) {
                comm[v] = best_c;
                improved = true;
                any_move = true;
            }
        }
    }
    // compact community ids
    std::unordered_map<std::size_t, std::size_t> remap;
    for (std::size_t v = 0; v < n; ++v) {
        auto [it, fresh] = remap.emplace(comm[v], remap.size());
        comm[v] = it->second;
    }
    return {comm, any_move};
}

WeightedGraph aggregate(const WeightedGraph& wg, const std::vector<std::size_t>& comm,
                        std::size_t n_comm) {
    WeightedGraph out;
    out.n = n_comm;
    out.adj.resize(n_comm);
    std::map<std::pair<std::size_t, std::size_t>, double> agg;
    for (std::size_t v = 0; v < wg.n; ++v) {
        for (auto [u, w] : wg.adj[v]) {
            if (u < v) continue;  // count each undirected edge once (self-loops have u == v)
            std::pair<std::size_t, std::size_t> key = std::minmax(comm[v], comm[u]);
            agg[key] += w;
        }
    }
    for (const auto& [key, w] : agg) {
        out.total_weight += w;
        out.adj[key.first].emplace_back(key.second, w);
        if (key.second != key.first) out.adj[key.second].emplace_back(key.first, w);
    }
    return out;
}

}  // namespace

LabelSet louvain_labels(const MultimodalGraph& g) {
    LabelSet out;
    out.kind = LabelSet::Kind::LinkBased;
    std::size_t n = g.num_nodes();
    std::vector<std::size_t> membership(n);
    for (std::size_t v = 0; v < n; ++v) membership[v] = v;

    WeightedGraph wg = homogenize(g);
    if (wg.total_weight > 0) {
        for (int level = 0; level < 50; ++level) {
            auto [comm, moved] = louvain_level(wg);
            std::size_t n_comm = 0;
            for (std::size_t c : comm) n_comm = std::max(n_comm, c + 1);
            for (std::size_t v = 0; v < n; ++v) membership[v] = comm[membership[v]];
            if (!moved || n_comm == wg.n) break;
            wg = aggregate(wg, comm, n_comm);
        }
    }
    // compact final labels
    std::unordered_map<std::size_t, int> remap;
    out.nodes.reserve(n);
    out.labels.reserve(n);
    for (NodeId v = 0; v < n; ++v) {
        auto [it, fresh] = remap.emplace(membership[v], static_cast<int>(remap.size()));
        out.nodes.push_back(v);
        out.labels.push_back(it->second);
    }
    out.num_labels = static_cast<int>(remap.size());
    return out;
}

}  // namespace mgtcom
