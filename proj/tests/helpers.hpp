#pragma once

// Shared fixtures and oracles for the test binaries. Everything here is
// deliberately straight-line and independent of the library internals so
// it can serve as a reference implementation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "mgtcom/graph.hpp"
#include "mgtcom/tensor.hpp"

namespace testutil {

using mgtcom::Matrix;
using mgtcom::MultimodalGraph;
using mgtcom::NodeId;

// --- tiny graph fixtures (one node type "n", one relation "r") -----------

inline MultimodalGraph path_graph(std::uint32_t n) {
    mgtcom::GraphBuilder b;
    auto t = b.add_node_type("n", n);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i + 1 < n; ++i) b.add_edge(r, {t, i}, {t, i + 1});
    return b.build();
}

inline MultimodalGraph cycle_graph(std::uint32_t n) {
    mgtcom::GraphBuilder b;
    auto t = b.add_node_type("n", n);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i < n; ++i) b.add_edge(r, {t, i}, {t, (i + 1) % n});
    return b.build();
}

// node 0 is the hub
inline MultimodalGraph star_graph(std::uint32_t leaves) {
    mgtcom::GraphBuilder b;
    auto t = b.add_node_type("n", leaves + 1);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 1; i <= leaves; ++i) b.add_edge(r, {t, 0}, {t, i});
    return b.build();
}

inline MultimodalGraph complete_graph(std::uint32_t n) {
    mgtcom::GraphBuilder b;
    auto t = b.add_node_type("n", n);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = i + 1; j < n; ++j) b.add_edge(r, {t, i}, {t, j});
    return b.build();
}

// arbitrary undirected edge list over one type
inline MultimodalGraph edge_list_graph(std::uint32_t n,
                                       const std::vector<std::pair<int, int>>& edges) {
    mgtcom::GraphBuilder b;
    auto t = b.add_node_type("n", n);
    auto r = b.add_relation("r");
    for (auto [u, v] : edges)
        b.add_edge(r, {t, static_cast<std::uint32_t>(u)}, {t, static_cast<std::uint32_t>(v)});
    return b.build();
}

// --- chi-squared survival function ---------------------------------------

// Regularized incomplete gamma functions (series + continued fraction),
// accurate to ~1e-12; enough for p-value thresholds.
inline double gamma_p(double a, double x) {
    if (x < 0 || a <= 0) throw std::invalid_argument("gamma_p domain");
    if (x == 0) return 0.0;
    double gln = std::lgamma(a);
    if (x < a + 1.0) {  // series for P(a,x)
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    // continued fraction for Q(a,x), modified Lentz
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::fabs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    double q = std::exp(-x + a * std::log(x) - gln) * h;
    return 1.0 - q;
}

// P(Chi2_df >= stat)
inline double chi2_sf(double stat, int df) {
    if (stat <= 0) return 1.0;
    return 1.0 - gamma_p(0.5 * df, 0.5 * stat);
}

// --- metric oracles (brute force) -----------------------------------------

inline double entropy_of(const std::vector<int>& a) {
    std::map<int, int> c;
    for (int x : a) c[x]++;
    double n = static_cast<double>(a.size()), h = 0;
    for (auto& [k, v] : c) {
        double p = v / n;
        h -= p * std::log(p);
    }
    return h;
}

inline double nmi_oracle(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("nmi oracle size");
    double n = static_cast<double>(a.size());
    std::map<std::pair<int, int>, int> joint;
    std::map<int, int> ca, cb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}]++;
        ca[a[i]]++;
        cb[b[i]]++;
    }
    double mi = 0;
    for (auto& [k, v] : joint) {
        double pij = v / n, pi = ca[k.first] / n, pj = cb[k.second] / n;
        mi += pij * std::log(pij / (pi * pj));
    }
    double ha = entropy_of(a), hb = entropy_of(b);
    if (ha <= 0 || hb <= 0) {
        // zero-entropy side: identical partitions (up to relabeling) are 1,
        // anything else 0
        std::map<int, int> f, g2;
        bool same = true;
        for (std::size_t i = 0; i < a.size(); ++i) {
            auto [it, fresh] = f.try_emplace(a[i], b[i]);
            if (!fresh && it->second != b[i]) same = false;
            auto [jt, fresh2] = g2.try_emplace(b[i], a[i]);
            if (!fresh2 && jt->second != a[i]) same = false;
        }
        return same ? 1.0 : 0.0;
    }
    return mi / std::sqrt(ha * hb);
}

// Q = (1/2m) * sum_{uv} [A_uv - k_u k_v / 2m] * delta(z_u, z_v), evaluated
// as the literal double sum over all ordered node pairs on the homogenized
// multigraph.
inline double modularity_oracle(const MultimodalGraph& g, const std::vector<int>& z) {
    std::size_t n = g.num_nodes();
    Matrix A = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < g.num_relations(); ++r) {
        for (const auto& e : g.edges(static_cast<std::uint32_t>(r))) {
            A(e.src, e.dst) += 1.0;
            A(e.dst, e.src) += 1.0;  // undirected: count both directions
        }
    }
    double two_m = A.sum();
    if (two_m == 0) return 0.0;
    Eigen::VectorXd k = A.rowwise().sum();
    double q = 0;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v)
            if (z[u] == z[v])
                q += A(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) -
                     k[static_cast<Eigen::Index>(u)] * k[static_cast<Eigen::Index>(v)] / two_m;
    return q / two_m;
}

// All partitions of {0..n-1} as restricted-growth strings.
inline std::vector<std::vector<int>> all_partitions(int n) {
    std::vector<std::vector<int>> out;
    std::vector<int> a(static_cast<std::size_t>(n), 0);
    std::function<void(int, int)> rec = [&](int i, int mx) {
        if (i == n) {
            out.push_back(a);
            return;
        }
        for (int v = 0; v <= mx + 1; ++v) {
            a[static_cast<std::size_t>(i)] = v;
            rec(i + 1, std::max(mx, v));
        }
    };
    rec(0, -1);
    return out;
}

// --- finite differences ----------------------------------------------------

// Scalar function of several matrix inputs built on a fresh tape; analytic
// reverse-mode gradients vs central differences entry by entry.
struct FdReport {
    double max_rel_err = 0.0;
    int entries = 0;
};

inline FdReport check_gradients(
    const std::vector<Matrix>& inputs,
    const std::function<mgtcom::Var(mgtcom::Tape&, const std::vector<mgtcom::Var>&)>& build,
    double h = 1e-4) {
    using mgtcom::Tape;
    using mgtcom::Var;

    auto eval = [&](const std::vector<Matrix>& xs) {
        Tape t;
        std::vector<Var> vs;
        vs.reserve(xs.size());
        for (const auto& x : xs) vs.push_back(t.input(x, false));
        Var root = build(t, vs);
        const Matrix& val = t.value(root);
        if (val.rows() != 1 || val.cols() != 1) throw std::logic_error("fd root must be scalar");
        return val(0, 0);
    };

    Tape t;
    std::vector<Var> vs;
    for (const auto& x : inputs) vs.push_back(t.input(x, true));
    Var root = build(t, vs);
    t.backward(root);
    std::vector<Matrix> analytic;
    analytic.reserve(inputs.size());
    for (auto v : vs) analytic.push_back(t.grad(v));

    FdReport rep;
    std::vector<Matrix> xs = inputs;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (Eigen::Index r = 0; r < xs[i].rows(); ++r) {
            for (Eigen::Index c = 0; c < xs[i].cols(); ++c) {
                double keep = xs[i](r, c);
                xs[i](r, c) = keep + h;
                double fp = eval(xs);
                xs[i](r, c) = keep - h;
                double fm = eval(xs);
                xs[i](r, c) = keep;
                double fd = (fp - fm) / (2 * h);
                double an = analytic[i](r, c);
                double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
                rep.max_rel_err = std::max(rep.max_rel_err, std::fabs(fd - an) / denom);
                ++rep.entries;
            }
        }
    }
    return rep;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(gen);
    return m;
}

}  // namespace testutil
