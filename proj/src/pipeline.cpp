#include "mgtcom/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "mgtcom/sampling.hpp"

namespace mgtcom {
namespace {

// Seed-stream tags. All exceed 2^32 so derive(seed, tag, x) can never
// collide with the per-query derive(seed, node_id, epoch) streams.
constexpr std::uint64_t kTagInit = (1ULL << 32) + 1;
constexpr std::uint64_t kTagShuffle = (1ULL << 32) + 2;
constexpr std::uint64_t kTagStep = (1ULL << 32) + 3;
constexpr std::uint64_t kTagSnapshot = (1ULL << 32) + 4;
constexpr std::uint64_t kTagCluster = (1ULL << 32) + 5;
constexpr std::uint64_t kTagFinal = (1ULL << 32) + 6;
constexpr std::uint64_t kTagInfer = (1ULL << 32) + 7;

// ---------------------------------------------------------------- digests

std::uint64_t fnv_bytes(const void* data, std::size_t n, std::uint64_t h) {
    auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv_matrix(const Matrix& m, std::uint64_t h) {
    std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()),
                             static_cast<std::uint64_t>(m.cols())};
    h = fnv_bytes(dims, sizeof dims, h);
    return fnv_bytes(m.data(), sizeof(double) * m.size(), h);
}

std::uint64_t hash_params(const EncoderParams& p) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < p.store.size(); ++i)
        h = fnv_matrix(p.store[static_cast<int>(i)], h);
    return h;
}

std::uint64_t hash_clusters(const ClusterState& s) {
    std::uint64_t h = 1469598103934665603ULL;
    std::uint64_t k = s.K();
    h = fnv_bytes(&k, sizeof k, h);
    auto comp = [&](const GaussComp& c) {
        h = fnv_bytes(&c.pi, sizeof c.pi, h);
        std::uint64_t n = c.n;
        h = fnv_bytes(&n, sizeof n, h);
        h = fnv_bytes(c.mu.data(), sizeof(double) * c.mu.size(), h);
        h = fnv_matrix(c.sigma, h);
    };
    for (const auto& c : s.clusters) {
        comp(c.comp);
        comp(c.sub[0]);
        comp(c.sub[1]);
    }
    h = fnv_bytes(s.z.data(), sizeof(int) * s.z.size(), h);
    if (!s.subz.empty()) h = fnv_bytes(s.subz.data(), s.subz.size(), h);
    return h;
}

// ---------------------------------------------------------------- training

std::vector<NodeId> seen_nodes(const MultimodalGraph& g) {
    std::vector<NodeId> out;
    for (NodeId v = 0; v < static_cast<NodeId>(g.num_nodes()); ++v)
        if (g.is_seen(v)) out.push_back(v);
    return out;
}

struct QueryContext {
    NodeId v = 0;
    std::vector<WalkPath> pe, pt;
    std::vector<NodeId> pbar, pbar_t;
};

// Context sampling is a pure function of (seed, node, epoch), so walks are
// fresh every epoch yet independent of processing order.
QueryContext sample_context(const MultimodalGraph& g, const TrainConfig& cfg, NodeId v,
                            const TimeRange& omega, bool want_topo, bool want_temp,
                            int global_epoch) {
    SamplerRng rng(SamplerRng::derive(cfg.seed, v, static_cast<std::uint64_t>(global_epoch)));
    QueryContext qc;
    qc.v = v;
    if (want_topo && g.degree(v) > 0) {
        qc.pe.reserve(cfg.walks_per_node);
        for (int i = 0; i < cfg.walks_per_node; ++i)
            qc.pe.push_back(node2vec_walk(g, v, cfg.walk_length, cfg.p, cfg.q, rng));
    }
    if (want_temp) qc.pt = ballroom_walk(g, v, omega, cfg.walks_per_node, cfg.walk_length, rng);
    // independent negative draws per task: with a shared set both hinges
    // pick the same argmax negative and its push gets doubled, which
    // flattens nascent structure faster than either task can build it
    qc.pbar = negative_sample(g, cfg.walk_length, rng, /*seen_only=*/true);
    if (want_temp) qc.pbar_t = negative_sample(g, cfg.walk_length, rng, /*seen_only=*/true);
    return qc;
}

struct ClusterLookup {
    const ClusterState* state = nullptr;
    std::vector<std::int64_t> row_of;  // node -> snapshot row, -1 when absent
};

double train_step(const MultimodalGraph& g, const TrainConfig& cfg, const LossWeights& weights,
                  EncoderParams& params, AdamOptimizer& opt, const ClusterLookup* clu,
                  std::span<const NodeId> queries, const TimeRange& omega, int global_epoch) {
    const bool want_topo = weights.beta_e > 0;
    const bool want_temp = weights.beta_t > 0 && g.num_timestamped() > 0;
    const bool want_clu = weights.beta_c > 0 && clu != nullptr;

    std::vector<QueryContext> ctx;
    ctx.reserve(queries.size());
    for (NodeId v : queries)
        ctx.push_back(sample_context(g, cfg, v, omega, want_topo, want_temp, global_epoch));

    // One embedding batch for the whole minibatch: queries first, then
    // every context node, deduplicated.
    std::vector<NodeId> batch;
    std::unordered_map<NodeId, int> row_of;
    auto add = [&](NodeId u) {
        if (row_of.emplace(u, static_cast<int>(batch.size())).second) batch.push_back(u);
    };
    for (NodeId v : queries) add(v);
    for (const auto& qc : ctx) {
        for (const auto& w : qc.pe)
            for (NodeId u : w) add(u);
        for (const auto& w : qc.pt)
            for (NodeId u : w) add(u);
        for (NodeId u : qc.pbar) add(u);
        for (NodeId u : qc.pbar_t) add(u);
    }

    Tape tape;
    BoundParams bp(tape, params);
    SamplerRng srng(
        SamplerRng::derive(cfg.seed, kTagStep, static_cast<std::uint64_t>(opt.step_count())));
    EmbedOut out = embed_primary(bp, g, batch, /*train_mode=*/true, srng);
    Var z = out.batch;
    Var ze = want_topo ? task_transform(bp, z, params.topo_head) : Var{};
    Var zt = want_temp ? task_transform(bp, z, params.temp_head) : Var{};

    auto context_rows = [&](const std::vector<WalkPath>& walks, NodeId self) {
        std::vector<int> rows;
        for (const auto& w : walks)
            for (NodeId u : w)
                if (u != self) rows.push_back(row_of.at(u));
        return rows;
    };

    Var total{};
    for (const auto& qc : ctx) {
        int qrow = row_of.at(qc.v);
        std::vector<int> neg;
        neg.reserve(qc.pbar.size());
        for (NodeId u : qc.pbar) neg.push_back(row_of.at(u));

        std::vector<int> neg_t;
        neg_t.reserve(qc.pbar_t.size());
        for (NodeId u : qc.pbar_t) neg_t.push_back(row_of.at(u));

        Var le{}, lt{}, lc{};
        if (want_topo && !neg.empty()) {
            std::vector<int> pos = context_rows(qc.pe, qc.v);
            if (!pos.empty()) le = mm_loss(tape, ze, qrow, pos, neg, weights.margin);
        }
        if (want_temp && !neg_t.empty()) {
            std::vector<int> pos = context_rows(qc.pt, qc.v);
            if (!pos.empty()) lt = mm_loss(tape, zt, qrow, pos, neg_t, weights.margin);
        }
        if (want_clu) {
            std::int64_t crow = clu->row_of[qc.v];
            if (crow >= 0) {
                int k = clu->state->z[static_cast<std::size_t>(crow)];
                lc = cluster_loss(tape, z, qrow, clu->state->clusters[k].comp.mu);
            }
        }
        Var q = combined_loss(tape, le, lt, lc, weights);
        total = total.valid() ? tape.add(total, q) : q;
    }
    total = tape.scale(total, 1.0 / static_cast<double>(ctx.size()));
    tape.backward(total);
    double loss = tape.value(total)(0, 0);
    opt.step(params.store, bp.collect_grads());
    return loss;
}

double run_epoch(const MultimodalGraph& g, const TrainConfig& cfg, const LossWeights& weights,
                 EncoderParams& params, AdamOptimizer& opt, const ClusterLookup* clu,
                 std::span<const NodeId> queries, const TimeRange& omega, int global_epoch) {
    std::vector<NodeId> order(queries.begin(), queries.end());
    SamplerRng srng(
        SamplerRng::derive(cfg.seed, kTagShuffle, static_cast<std::uint64_t>(global_epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[srng.uniform_index(i)]);

    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.minibatch)) {
        std::size_t n = std::min(static_cast<std::size_t>(cfg.minibatch), order.size() - at);
        sum += train_step(g, cfg, weights, params, opt, clu, {order.data() + at, n}, omega,
                          global_epoch);
        ++steps;
    }
    return steps ? sum / static_cast<double>(steps) : 0.0;
}

Matrix embed_nodes(const MultimodalGraph& g, EncoderParams& params, std::span<const NodeId> nodes,
                   std::uint64_t seed) {
    constexpr std::size_t kChunk = 1024;
    Matrix z(nodes.size(), params.cfg.dim);
    std::uint64_t chunk = 0;
    for (std::size_t at = 0; at < nodes.size(); at += kChunk, ++chunk) {
        std::size_t n = std::min(kChunk, nodes.size() - at);
        Tape tape;
        BoundParams bp(tape, params);
        SamplerRng rng(SamplerRng::derive(seed, chunk));
        EmbedOut out = embed_primary(bp, g, nodes.subspan(at, n), /*train_mode=*/false, rng);
        z.middleRows(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(n)) =
            tape.value(out.batch);
    }
    return z;
}

void run_pretrain(const MultimodalGraph& g, TrainResult& r) {
    const TrainConfig& cfg = r.cfg;
    LossWeights w = cfg.loss;
    w.beta_c = 0.0;  // no cluster parameters exist yet
    TimeRange omega = cfg.context_window(g);
    std::vector<NodeId> queries = seen_nodes(g);
    if (queries.empty()) throw std::runtime_error("graph has no seen nodes to train on");

    for (int e = 0; e < cfg.pretrain_epochs; ++e) {
        double loss =
            run_epoch(g, cfg, w, r.params, r.opt, nullptr, queries, omega, r.global_epoch);
        ++r.global_epoch;
        r.pretrain_loss.push_back(loss);
        std::size_t m = r.pretrain_loss.size();
        if (m >= 4) {
            double prev = r.pretrain_loss[m - 4], cur = r.pretrain_loss[m - 1];
            if (prev - cur < 1e-3 * std::max(std::abs(prev), 1e-12)) break;  // plateau
        }
    }
}

void clustering_cycle(const MultimodalGraph& g, TrainResult& r, int outer_idx) {
    const TrainConfig& cfg = r.cfg;
    std::vector<NodeId> snodes = seen_nodes(g);
    Matrix zs = embed_nodes(
        g, r.params, snodes,
        SamplerRng::derive(cfg.seed, kTagSnapshot, static_cast<std::uint64_t>(outer_idx)));
    NWPrior prior = NWPrior::from_data(zs, cfg.alpha, cfg.kappa, cfg.nu_offset, cfg.sigma_scale);
    SamplerRng crng(
        SamplerRng::derive(cfg.seed, kTagCluster, static_cast<std::uint64_t>(outer_idx)));
    if (!r.clusters_ready) {
        r.clusters = run_clustering(zs, prior, cfg.cluster_steps, crng, nullptr, cfg.k_init);
        r.clusters_ready = true;
    } else {
        // embeddings moved, so the old bound history is stale
        ClusterState st = r.clusters;
        st.phase = ClusterState::Phase::Converging;
        st.bound_history.clear();
        r.clusters = run_clustering(zs, prior, cfg.cluster_steps, crng, &st, cfg.k_init);
    }
    r.cluster_nodes = std::move(snodes);
}

TrainResult run_outer(const MultimodalGraph& g, TrainResult r, int total_epochs) {
    const TrainConfig& cfg = r.cfg;
    TimeRange omega = cfg.context_window(g);
    std::vector<NodeId> queries = seen_nodes(g);
    if (queries.empty()) throw std::runtime_error("graph has no seen nodes to train on");

    for (int i = r.outer_done; i < total_epochs; ++i) {
        // embedding stage — cluster parameters frozen
        r.trace.cluster_pre_embed.push_back(hash_clusters(r.clusters));
        ClusterLookup clu;
        const ClusterLookup* clup = nullptr;
        if (r.clusters_ready && cfg.loss.beta_c > 0) {
            clu.state = &r.clusters;
            clu.row_of.assign(g.num_nodes(), -1);
            for (std::size_t row = 0; row < r.cluster_nodes.size(); ++row)
                clu.row_of[r.cluster_nodes[row]] = static_cast<std::int64_t>(row);
            clup = &clu;
        }
        double loss =
            run_epoch(g, cfg, cfg.loss, r.params, r.opt, clup, queries, omega, r.global_epoch);
        ++r.global_epoch;
        r.epoch_loss.push_back(loss);
        r.trace.cluster_post_embed.push_back(hash_clusters(r.clusters));

        // clustering stage — encoder parameters frozen
        r.trace.params_pre_cluster.push_back(hash_params(r.params));
        clustering_cycle(g, r, i);
        r.trace.params_post_cluster.push_back(hash_params(r.params));
        r.outer_done = i + 1;
    }

    if (!r.clusters_ready) {
        // no outer iterations requested: k-means-only clusters on the
        // pretrain embeddings
        std::vector<NodeId> snodes = seen_nodes(g);
        Matrix zs = embed_nodes(g, r.params, snodes, SamplerRng::derive(cfg.seed, kTagSnapshot, 0));
        SamplerRng crng(SamplerRng::derive(cfg.seed, kTagCluster, 0));
        r.clusters = kmeans_init(zs, cfg.k_init, crng);
        r.clusters_ready = true;
        r.cluster_nodes = std::move(snodes);
    }

    r.z_all = embed_all(g, r.params,
                        SamplerRng::derive(cfg.seed, kTagFinal,
                                           static_cast<std::uint64_t>(r.outer_done)));
    return r;
}

// ---------------------------------------------------------- checkpoint IO

constexpr std::uint64_t kCkptMagic = 0x31304b43544d474dULL;  // "MGTMCK01" tag
constexpr std::uint64_t kCkptVersion = 1;

struct BinWriter {
    std::ofstream out;
    explicit BinWriter(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw std::runtime_error("cannot write " + path);
    }
    void raw(const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i64(std::int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void mat(const Matrix& m) {
        u64(static_cast<std::uint64_t>(m.rows()));
        u64(static_cast<std::uint64_t>(m.cols()));
        raw(m.data(), sizeof(double) * m.size());
    }
    void vec(const Eigen::VectorXd& v) {
        u64(static_cast<std::uint64_t>(v.size()));
        raw(v.data(), sizeof(double) * v.size());
    }
    void ivec(const std::vector<int>& v) {
        u64(v.size());
        for (int x : v) i64(x);
    }
    void dvec(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
};

struct BinReader {
    std::ifstream in;
    explicit BinReader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw std::runtime_error("cannot open " + path);
    }
    void raw(void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw std::runtime_error("truncated checkpoint");
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::uint64_t count(std::uint64_t cap) {
        std::uint64_t n = u64();
        if (n > cap) throw std::runtime_error("corrupt checkpoint (size field)");
        return n;
    }
    std::string str() {
        std::uint64_t n = count(1ULL << 20);
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    Matrix mat() {
        std::uint64_t r = count(1ULL << 24), c = count(1ULL << 24);
        Matrix m(r, c);
        if (m.size()) raw(m.data(), sizeof(double) * m.size());
        return m;
    }
    Eigen::VectorXd vec() {
        std::uint64_t n = count(1ULL << 24);
        Eigen::VectorXd v(n);
        if (n) raw(v.data(), sizeof(double) * n);
        return v;
    }
    std::vector<int> ivec() {
        std::uint64_t n = count(1ULL << 32);
        std::vector<int> v(n);
        for (auto& x : v) x = static_cast<int>(i64());
        return v;
    }
    std::vector<double> dvec() {
        std::uint64_t n = count(1ULL << 32);
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }
};

void write_config(BinWriter& w, const TrainConfig& c) {
    w.i64(c.model.dim);
    w.i64(c.model.layers);
    w.i64(c.model.heads);
    w.f64(c.model.feat_dropout);
    w.u64(c.model.budgets.size());
    for (auto b : c.model.budgets) w.u64(b);
    w.f64(c.loss.beta_e);
    w.f64(c.loss.beta_t);
    w.f64(c.loss.beta_c);
    w.f64(c.loss.margin);
    w.i64(c.walks_per_node);
    w.i64(c.walk_length);
    w.f64(c.p);
    w.f64(c.q);
    w.i64(c.omega_partitions);
    w.i64(c.epochs);
    w.i64(c.cluster_steps);
    w.i64(c.pretrain_epochs);
    w.i64(c.minibatch);
    w.f64(c.adam.lr);
    w.f64(c.adam.beta1);
    w.f64(c.adam.beta2);
    w.f64(c.adam.eps);
    w.f64(c.alpha);
    w.f64(c.kappa);
    w.f64(c.nu_offset);
    w.f64(c.sigma_scale);
    w.i64(c.k_init);
    w.u64(c.seed);
}

TrainConfig read_config(BinReader& r) {
    TrainConfig c;
    c.model.dim = static_cast<int>(r.i64());
    c.model.layers = static_cast<int>(r.i64());
    c.model.heads = static_cast<int>(r.i64());
    c.model.feat_dropout = r.f64();
    c.model.budgets.resize(r.count(64));
    for (auto& b : c.model.budgets) b = static_cast<std::uint32_t>(r.u64());
    c.loss.beta_e = r.f64();
    c.loss.beta_t = r.f64();
    c.loss.beta_c = r.f64();
    c.loss.margin = r.f64();
    c.walks_per_node = static_cast<int>(r.i64());
    c.walk_length = static_cast<int>(r.i64());
    c.p = r.f64();
    c.q = r.f64();
    c.omega_partitions = static_cast<int>(r.i64());
    c.epochs = static_cast<int>(r.i64());
    c.cluster_steps = static_cast<int>(r.i64());
    c.pretrain_epochs = static_cast<int>(r.i64());
    c.minibatch = static_cast<int>(r.i64());
    c.adam.lr = r.f64();
    c.adam.beta1 = r.f64();
    c.adam.beta2 = r.f64();
    c.adam.eps = r.f64();
    c.alpha = r.f64();
    c.kappa = r.f64();
    c.nu_offset = r.f64();
    c.sigma_scale = r.f64();
    c.k_init = static_cast<int>(r.i64());
    c.seed = r.u64();
    return c;
}

void write_comp(BinWriter& w, const GaussComp& c) {
    w.f64(c.pi);
    w.u64(c.n);
    w.vec(c.mu);
    w.mat(c.sigma);
}

GaussComp read_comp(BinReader& r) {
    GaussComp c;
    c.pi = r.f64();
    c.n = r.u64();
    c.mu = r.vec();
    c.sigma = r.mat();
    return c;
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    if (walks_per_node < 1 || walk_length < 1)
        throw std::invalid_argument("walk settings must be positive");
    if (p <= 0 || q <= 0) throw std::invalid_argument("p and q must be positive");
    if (omega_partitions < 1) throw std::invalid_argument("omega_partitions must be positive");
    if (epochs < 0 || pretrain_epochs < 0)
        throw std::invalid_argument("epoch counts must be non-negative");
    if (cluster_steps < 1) throw std::invalid_argument("cluster_steps must be >= 1");
    if (minibatch < 1) throw std::invalid_argument("minibatch must be >= 1");
    if (adam.lr <= 0) throw std::invalid_argument("learning rate must be positive");
    if (alpha <= 0 || kappa <= 0 || sigma_scale <= 0)
        throw std::invalid_argument("prior scales must be positive");
    if (nu_offset < 1) throw std::invalid_argument("nu_offset must be >= 1");
    if (k_init < 1) throw std::invalid_argument("k_init must be >= 1");
}

TimeRange TrainConfig::context_window(const MultimodalGraph& g) const {
    if (g.num_timestamped() == 0) return TimeRange::point(0);
    TimeRange ext = g.time_extent();
    Tick len = ext.end - ext.start;
    Tick w = std::max<Tick>(1, len / omega_partitions);
    Tick half = w / 2;
    return {-half, w - half};
}

EncoderParams pretrain(const MultimodalGraph& g, const TrainConfig& cfg) {
    cfg.validate();
    TrainResult r;
    r.cfg = cfg;
    r.params = EncoderParams::init(g, cfg.model, SamplerRng::derive(cfg.seed, kTagInit, 0));
    r.opt = AdamOptimizer(r.params.store, cfg.adam);
    run_pretrain(g, r);
    return std::move(r.params);
}

TrainResult train(const MultimodalGraph& g, const TrainConfig& cfg) {
    cfg.validate();
    TrainResult r;
    r.cfg = cfg;
    r.params = EncoderParams::init(g, cfg.model, SamplerRng::derive(cfg.seed, kTagInit, 0));
    r.opt = AdamOptimizer(r.params.store, cfg.adam);
    run_pretrain(g, r);
    return run_outer(g, std::move(r), cfg.epochs);
}

TrainResult resume_train(const MultimodalGraph& g, TrainResult state, int total_epochs) {
    if (total_epochs < state.outer_done)
        throw std::invalid_argument("resume target below completed iterations");
    state.cfg.epochs = total_epochs;
    return run_outer(g, std::move(state), total_epochs);
}

Matrix infer(const MultimodalGraph& g, EncoderParams& params, std::span<const NodeId> nodes,
             std::uint64_t seed) {
    return embed_nodes(g, params, nodes, SamplerRng::derive(seed, kTagInfer, 0));
}

Matrix embed_all(const MultimodalGraph& g, EncoderParams& params, std::uint64_t seed) {
    std::vector<NodeId> all(g.num_nodes());
    std::iota(all.begin(), all.end(), 0u);
    return embed_nodes(g, params, all, seed);
}

MultimodalGraph prefix_subgraph(const MultimodalGraph& g, double keep_frac) {
    if (keep_frac <= 0.0 || keep_frac > 1.0)
        throw std::invalid_argument("keep_frac must be in (0, 1]");
    GraphBuilder b;
    std::vector<std::uint32_t> keep(g.num_node_types());
    for (NodeTypeId t = 0; t < g.num_node_types(); ++t) {
        auto want = static_cast<std::uint32_t>(
            std::llround(keep_frac * static_cast<double>(g.type_count(t))));
        keep[t] = std::clamp<std::uint32_t>(want, 1, g.type_count(t));
        b.add_node_type(g.node_type_name(t), keep[t]);
    }
    for (RelationTypeId rl = 0; rl < g.num_relations(); ++rl) b.add_relation(g.relation_name(rl));
    for (RelationTypeId rl = 0; rl < g.num_relations(); ++rl)
        for (const auto& e : g.edges(rl)) {
            NodeRef s = g.node_ref(e.src), d = g.node_ref(e.dst);
            if (s.index >= keep[s.type] || d.index >= keep[d.type]) continue;
            b.add_edge(rl, s, d, e.has_time ? std::optional<TimeRange>(e.time) : std::nullopt);
        }
    for (NodeTypeId t = 0; t < g.num_node_types(); ++t) {
        const FeatureTable& ft = g.features(t);
        if (ft.dim() > 0) {
            Eigen::MatrixXd vals = ft.values.topRows(keep[t]);
            std::vector<std::uint8_t> pres(ft.present.begin(), ft.present.begin() + keep[t]);
            b.set_features(t, std::move(vals), std::move(pres));
        }
        for (std::uint32_t i = 0; i < keep[t]; ++i) {
            NodeId v = g.global_id({t, i});
            if (g.has_time(v)) b.set_time({t, i}, g.time_of(v));
            if (!g.is_seen(v)) b.set_seen({t, i}, false);
        }
    }
    return b.build();
}

void save_checkpoint(const std::string& path, const TrainResult& r) {
    BinWriter w(path);
    w.u64(kCkptMagic);
    w.u64(kCkptVersion);
    write_config(w, r.cfg);

    w.u64(r.params.store.size());
    for (std::size_t i = 0; i < r.params.store.size(); ++i) {
        int idx = static_cast<int>(i);
        w.str(r.params.store.name(idx));
        w.mat(r.params.store[idx]);
    }
    w.ivec(r.params.in_w);
    w.ivec(r.params.in_b);
    w.i64(r.params.emb_table);
    w.u64(r.params.emb_row.size());
    for (const auto& rows : r.params.emb_row) {
        w.u64(rows.size());
        for (auto x : rows) w.i64(x);
    }
    w.u64(r.params.conv.size());
    for (const auto& layer : r.params.conv) {
        w.ivec(layer.q);
        w.ivec(layer.k);
        w.ivec(layer.v);
        w.ivec(layer.o);
        w.u64(layer.rel.size());
        for (const auto& heads : layer.rel) w.ivec(heads);
    }
    w.ivec(r.params.topo_head.w);
    w.ivec(r.params.topo_head.b);
    w.ivec(r.params.temp_head.w);
    w.ivec(r.params.temp_head.b);

    w.i64(r.opt.step_count());
    w.u64(r.opt.m.size());
    for (const auto& m : r.opt.m) w.mat(m);
    for (const auto& m : r.opt.v) w.mat(m);

    w.u64(r.clusters_ready ? 1 : 0);
    w.u64(r.clusters.K());
    for (const auto& c : r.clusters.clusters) {
        write_comp(w, c.comp);
        write_comp(w, c.sub[0]);
        write_comp(w, c.sub[1]);
    }
    w.ivec(r.clusters.z);
    w.u64(r.clusters.subz.size());
    if (!r.clusters.subz.empty())
        w.raw(r.clusters.subz.data(), r.clusters.subz.size());
    w.u64(static_cast<std::uint64_t>(r.clusters.phase));
    w.dvec(r.clusters.bound_history);
    w.u64(r.cluster_nodes.size());
    for (NodeId v : r.cluster_nodes) w.u64(v);

    w.i64(r.outer_done);
    w.i64(r.global_epoch);
    w.dvec(r.pretrain_loss);
    w.dvec(r.epoch_loss);
    if (!w.out) throw std::runtime_error("failed writing " + path);
}

TrainResult load_checkpoint(const std::string& path) {
    BinReader rd(path);
    if (rd.u64() != kCkptMagic) throw std::runtime_error(path + ": not a checkpoint file");
    if (rd.u64() != kCkptVersion) throw std::runtime_error(path + ": unsupported checkpoint version");

    TrainResult r;
    r.cfg = read_config(rd);
    r.params.cfg = r.cfg.model;

    std::uint64_t nparams = rd.count(1ULL << 24);
    for (std::uint64_t i = 0; i < nparams; ++i) {
        std::string name = rd.str();
        r.params.store.add(std::move(name), rd.mat());
    }
    r.params.in_w = rd.ivec();
    r.params.in_b = rd.ivec();
    r.params.emb_table = static_cast<int>(rd.i64());
    r.params.emb_row.resize(rd.count(1ULL << 20));
    for (auto& rows : r.params.emb_row) {
        rows.resize(rd.count(1ULL << 32));
        for (auto& x : rows) x = rd.i64();
    }
    r.params.conv.resize(rd.count(64));
    for (auto& layer : r.params.conv) {
        layer.q = rd.ivec();
        layer.k = rd.ivec();
        layer.v = rd.ivec();
        layer.o = rd.ivec();
        layer.rel.resize(rd.count(1ULL << 20));
        for (auto& heads : layer.rel) heads = rd.ivec();
    }
    r.params.topo_head.w = rd.ivec();
    r.params.topo_head.b = rd.ivec();
    r.params.temp_head.w = rd.ivec();
    r.params.temp_head.b = rd.ivec();

    long step = static_cast<long>(rd.i64());
    std::uint64_t nmom = rd.count(1ULL << 24);
    if (nmom != r.params.store.size())
        throw std::runtime_error(path + ": optimizer state does not match parameters");
    std::vector<Matrix> m(nmom), v(nmom);
    for (auto& x : m) x = rd.mat();
    for (auto& x : v) x = rd.mat();
    r.opt = AdamOptimizer(r.params.store, r.cfg.adam);
    r.opt.restore(std::move(m), std::move(v), step);

    r.clusters_ready = rd.u64() != 0;
    r.clusters.clusters.resize(rd.count(1ULL << 20));
    for (auto& c : r.clusters.clusters) {
        c.comp = read_comp(rd);
        c.sub[0] = read_comp(rd);
        c.sub[1] = read_comp(rd);
    }
    r.clusters.z = rd.ivec();
    r.clusters.subz.resize(rd.count(1ULL << 32));
    if (!r.clusters.subz.empty()) rd.raw(r.clusters.subz.data(), r.clusters.subz.size());
    std::uint64_t phase = rd.u64();
    if (phase > 2) throw std::runtime_error(path + ": corrupt checkpoint (phase)");
    r.clusters.phase = static_cast<ClusterState::Phase>(phase);
    r.clusters.bound_history = rd.dvec();
    r.cluster_nodes.resize(rd.count(1ULL << 32));
    for (auto& v2 : r.cluster_nodes) v2 = static_cast<NodeId>(rd.u64());

    r.outer_done = static_cast<int>(rd.i64());
    r.global_epoch = static_cast<int>(rd.i64());
    r.pretrain_loss = rd.dvec();
    r.epoch_loss = rd.dvec();
    return r;
}

}  // namespace mgtcom
