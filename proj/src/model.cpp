#include "mgtcom/model.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <unordered_set>

namespace mgtcom {

void ModelConfig::validate() const {
    if (dim <= 0) throw std::invalid_argument("model config: dim must be positive");
    if (layers < 0) throw std::invalid_argument("model config: layers must be >= 0");
    if (heads <= 0 || dim % heads != 0) {
        throw std::invalid_argument("model config: heads must divide dim (got " +
                                    std::to_string(heads) + " for dim " + std::to_string(dim) +
                                    ")");
    }
    if (feat_dropout < 0.0 || feat_dropout >= 1.0) {
        throw std::invalid_argument("model config: dropout must be in [0,1)");
    }
    if (budgets.size() != static_cast<std::size_t>(layers)) {
        throw std::invalid_argument("model config: need one budget per layer (" +
                                    std::to_string(budgets.size()) + " budgets for " +
                                    std::to_string(layers) + " layers)");
    }
    for (std::uint32_t b : budgets) {
        if (b == 0) throw std::invalid_argument("model config: budgets must be >= 1");
    }
}

void LossWeights::validate() const {
    if (beta_e < 0 || beta_t < 0 || beta_c < 0) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
    if (beta_e == 0 && beta_t == 0 && beta_c == 0) {
        throw std::invalid_argument("at least one loss weight must be positive");
    }
    if (margin < 0) throw std::invalid_argument("margin must be non-negative");
}

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, SamplerRng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
    }
    return m;
}

}  // namespace

EncoderParams EncoderParams::init(const MultimodalGraph& g, const ModelConfig& cfg,
                                  std::uint64_t seed) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    SamplerRng rng(seed);
    const int d = cfg.dim;
    const int dh = cfg.head_dim();
    const auto num_types = g.num_node_types();
    const auto num_rels = g.num_relations();

    p.in_w.assign(num_types, -1);
    p.in_b.assign(num_types, -1);
    for (NodeTypeId t = 0; t < num_types; ++t) {
        int fd = g.feature_dim(t);
        if (fd > 0) {
            double s = 1.0 / std::sqrt(static_cast<double>(fd));
            p.in_w[t] = p.store.add("in_w." + g.node_type_name(t), random_matrix(fd, d, s, rng));
            p.in_b[t] = p.store.add("in_b." + g.node_type_name(t), Matrix::Zero(1, d));
        }
    }

    // Free embedding rows for every seen featureless node.
    p.emb_row.resize(num_types);
    std::int64_t rows = 0;
    for (NodeTypeId t = 0; t < num_types; ++t) {
        p.emb_row[t].assign(g.type_count(t), -1);
    }
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        if (!g.has_feature(v) && g.is_seen(v)) {
            p.emb_row[g.node_type(v)][g.type_index(v)] = rows++;
        }
    }
    if (rows > 0) {
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        p.emb_table = p.store.add("emb_table", random_matrix(rows, d, s, rng));
    }

    double sd = 1.0 / std::sqrt(static_cast<double>(d));
    double sh = 1.0 / std::sqrt(static_cast<double>(dh));
    p.conv.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
        auto& layer = p.conv[l];
        std::string pre = "conv" + std::to_string(l) + ".";
        layer.q.resize(num_types);
        layer.k.resize(num_types);
        layer.v.resize(num_types);
        layer.o.resize(num_types);
        for (NodeTypeId t = 0; t < num_types; ++t) {
            const std::string& tn = g.node_type_name(t);
            layer.q[t] = p.store.add(pre + "q." + tn, random_matrix(d, d, sd, rng));
            layer.k[t] = p.store.add(pre + "k." + tn, random_matrix(d, d, sd, rng));
            layer.v[t] = p.store.add(pre + "v." + tn, random_matrix(d, d, sd, rng));
            layer.o[t] = p.store.add(pre + "o." + tn, random_matrix(d, d, sd, rng));
        }
        layer.rel.resize(num_rels);
        for (RelationTypeId r = 0; r < num_rels; ++r) {
            layer.rel[r].resize(cfg.heads);
            for (int a = 0; a < cfg.heads; ++a) {
                layer.rel[r][a] = p.store.add(
                    pre + "rel." + g.relation_name(r) + ".h" + std::to_string(a),
                    random_matrix(dh, dh, sh, rng));
            }
        }
    }

    // start the gates mostly open so both context tasks see gradient
    // before they specialize; zero-bias gates tend to shut early
    auto make_head = [&](const char* name) {
        TaskHead head;
        for (int a = 0; a < cfg.heads; ++a) {
            head.w.push_back(p.store.add(std::string(name) + ".w" + std::to_string(a),
                                         random_matrix(d, dh, sd, rng)));
            head.b.push_back(p.store.add(std::string(name) + ".b" + std::to_string(a),
                                         Matrix::Constant(1, dh, 2.0)));
        }
        return head;
    };
    p.topo_head = make_head("topo_gate");
    p.temp_head = make_head("temp_gate");
    return p;
}

std::int64_t EncoderParams::emb_row_of(const MultimodalGraph& g, NodeId v) const {
    NodeRef ref = g.node_ref(v);
    if (ref.type >= emb_row.size()) return -1;
    if (ref.index >= emb_row[ref.type].size()) return -1;
    return emb_row[ref.type][ref.index];
}

BoundParams::BoundParams(Tape& tape, EncoderParams& params) : tape_(&tape), params_(&params) {
    bound_.assign(params.store.size(), Var{});
}

Var BoundParams::at(int store_index) {
    Var& slot = bound_[static_cast<std::size_t>(store_index)];
    if (!slot.valid()) slot = tape_->input(params_->store[store_index], true);
    return slot;
}

std::vector<Matrix> BoundParams::collect_grads() const {
    std::vector<Matrix> grads(bound_.size());
    for (std::size_t i = 0; i < bound_.size(); ++i) {
        if (bound_[i].valid() && tape_->grad_touched(bound_[i])) {
            grads[i] = tape_->grad(bound_[i]);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Initial features

namespace {

// Everything the backward pass of the feature-assembly op needs, copied so
// the op does not hold references into the subgraph.
struct AssembleCtx {
    struct TypeBlock {
        int w_store, b_store;
        std::vector<int> rows;  // local node ids
        Matrix x;               // gathered feature rows
    };
    std::vector<TypeBlock> blocks;
    struct EmbRow {
        int local;
        std::int64_t row;
    };
    std::vector<EmbRow> emb_rows;
    Eigen::ArrayXXd masks;  // one row per emb_rows entry (empty when unused)
    double inv_keep = 1.0;
    int emb_store = -1;
};

}  // namespace

Var initial_features(BoundParams& bp, const MultimodalGraph& g, const SampledSubgraph& sub,
                     bool train_mode, SamplerRng& rng) {
    EncoderParams& P = bp.params();
    Tape& tape = bp.tape();
    const int d = P.cfg.dim;
    const auto M = static_cast<Eigen::Index>(sub.size());

    auto ctx = std::make_shared<AssembleCtx>();
    std::vector<std::vector<int>> featured_by_type(g.num_node_types());
    for (std::size_t i = 0; i < sub.size(); ++i) {
        NodeId v = sub.nodes[i];
        if (g.has_feature(v)) {
            featured_by_type[g.node_type(v)].push_back(static_cast<int>(i));
        } else if (g.is_seen(v)) {
            std::int64_t row = P.emb_row_of(g, v);
            if (row < 0) {
                throw std::runtime_error("seen featureless node " + std::to_string(v) +
                                         " has no embedding row");
            }
            ctx->emb_rows.push_back({static_cast<int>(i), row});
        }
        // unseen featureless: zero row, nothing recorded
    }

    std::vector<Var> inputs;
    Matrix h0 = Matrix::Zero(M, d);

    for (NodeTypeId t = 0; t < g.num_node_types(); ++t) {
        if (featured_by_type[t].empty()) continue;
        if (P.in_w[t] < 0) {
            throw std::runtime_error("node type '" + g.node_type_name(t) +
                                     "' has features but no input projection");
        }
        AssembleCtx::TypeBlock blk;
        blk.w_store = P.in_w[t];
        blk.b_store = P.in_b[t];
        blk.rows = std::move(featured_by_type[t]);
        const FeatureTable& ft = g.features(t);
        blk.x.resize(static_cast<Eigen::Index>(blk.rows.size()), ft.dim());
        for (std::size_t j = 0; j < blk.rows.size(); ++j) {
            blk.x.row(static_cast<Eigen::Index>(j)) =
                ft.values.row(g.type_index(sub.nodes[static_cast<std::size_t>(blk.rows[j])]));
        }
        Var wv = bp.at(blk.w_store);
        Var bv = bp.at(blk.b_store);
        inputs.push_back(wv);
        inputs.push_back(bv);
        Matrix proj = blk.x * tape.value(wv);
        proj.rowwise() += tape.value(bv).row(0);
        for (std::size_t j = 0; j < blk.rows.size(); ++j) {
            h0.row(blk.rows[j]) = proj.row(static_cast<Eigen::Index>(j));
        }
        ctx->blocks.push_back(std::move(blk));
    }

    bool use_dropout = train_mode && P.cfg.feat_dropout > 0.0 && !ctx->emb_rows.empty();
    if (!ctx->emb_rows.empty()) {
        if (P.emb_table < 0) throw std::runtime_error("no embedding table allocated");
        ctx->emb_store = P.emb_table;
        Var ev = bp.at(P.emb_table);
        inputs.push_back(ev);
        const Matrix& E = tape.value(ev);
        if (use_dropout) {
            double keep = 1.0 - P.cfg.feat_dropout;
            ctx->inv_keep = 1.0 / keep;
            ctx->masks.resize(static_cast<Eigen::Index>(ctx->emb_rows.size()), d);
            for (std::size_t j = 0; j < ctx->emb_rows.size(); ++j) {
                for (int c = 0; c < d; ++c) {
                    ctx->masks(static_cast<Eigen::Index>(j), c) =
                        rng.uniform01() < keep ? 1.0 : 0.0;
                }
                h0.row(ctx->emb_rows[j].local) =
                    (E.row(ctx->emb_rows[j].row).array() *
                     ctx->masks.row(static_cast<Eigen::Index>(j)) * ctx->inv_keep)
                        .matrix();
            }
        } else {
            for (const auto& er : ctx->emb_rows) h0.row(er.local) = E.row(er.row);
        }
    }

    // Copy the bound Vars the backward needs (inputs vector order is not
    // meaningful to the lambda; it re-binds by store index).
    BoundParams* bpp = &bp;
    return tape.custom(inputs, std::move(h0), [ctx, bpp](Tape& t, const Matrix& gout) {
        for (const auto& blk : ctx->blocks) {
            Matrix gproj(static_cast<Eigen::Index>(blk.rows.size()), gout.cols());
            for (std::size_t j = 0; j < blk.rows.size(); ++j) {
                gproj.row(static_cast<Eigen::Index>(j)) = gout.row(blk.rows[j]);
            }
            t.accum_grad(bpp->at(blk.w_store), blk.x.transpose() * gproj);
            t.accum_grad(bpp->at(blk.b_store), gproj.colwise().sum());
        }
        if (ctx->emb_store >= 0) {
            Var ev = bpp->at(ctx->emb_store);
            Matrix ge = Matrix::Zero(t.value(ev).rows(), t.value(ev).cols());
            bool masked = ctx->masks.size() > 0;
            for (std::size_t j = 0; j < ctx->emb_rows.size(); ++j) {
                const auto& er = ctx->emb_rows[j];
                if (masked) {
                    ge.row(er.row) += (gout.row(er.local).array() *
                                       ctx->masks.row(static_cast<Eigen::Index>(j)) *
                                       ctx->inv_keep)
                                          .matrix();
                } else {
                    ge.row(er.row) += gout.row(er.local);
                }
            }
            t.accum_grad(ev, ge);
        }
    });
}

// ---------------------------------------------------------------------------
// Typed attention convolution

namespace {

struct ConvCtx {
    int heads = 1, dh = 1;
    double inv_sqrt_dh = 1.0;
    std::vector<std::vector<int>> by_type;       // local ids per node type
    std::vector<std::vector<int>> by_rel;        // edge indices per relation
    std::vector<std::pair<int, int>> seg;        // per local node, [begin,end) into edges
    std::vector<SampledSubgraph::LocalEdge> edges;
    Matrix qp, kp, vp;  // projected per-node matrices, M x d
    Matrix alpha;       // E x heads, post-softmax
    std::vector<int> q_store, k_store, v_store;  // per type
    std::vector<std::vector<int>> rel_store;     // [rel][head]
    Var h_prev;
};

struct LinCtx {
    std::vector<std::vector<int>> by_type;
    std::vector<int> o_store;
    Var x;
};

// out rows for the listed locals = X(listed locals) * W, written in place.
void typed_project(const Matrix& src, const std::vector<int>& rows, const Matrix& w,
                   Matrix& dst) {
    if (rows.empty()) return;
    Matrix gathered(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t j = 0; j < rows.size(); ++j) {
        gathered.row(static_cast<Eigen::Index>(j)) = src.row(rows[j]);
    }
    Matrix out = gathered * w;
    for (std::size_t j = 0; j < rows.size(); ++j) {
        dst.row(rows[j]) = out.row(static_cast<Eigen::Index>(j));
    }
}

}  // namespace

Var hetero_conv_layer(BoundParams& bp, const SampledSubgraph& sub, Var h_prev, int layer) {
    EncoderParams& P = bp.params();
    Tape& tape = bp.tape();
    if (layer < 0 || layer >= static_cast<int>(P.conv.size())) {
        throw std::out_of_range("conv layer index " + std::to_string(layer));
    }
    const auto& L = P.conv[static_cast<std::size_t>(layer)];
    const int d = P.cfg.dim;
    const int heads = P.cfg.heads;
    const int dh = P.cfg.head_dim();
    const auto M = static_cast<Eigen::Index>(sub.size());
    const auto E = sub.edges.size();
    const Matrix& H = tape.value(h_prev);
    if (H.rows() != M || H.cols() != d) {
        throw std::invalid_argument("conv layer: hidden state must be |sub| x dim");
    }

    auto ctx = std::make_shared<ConvCtx>();
    ctx->heads = heads;
    ctx->dh = dh;
    ctx->inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    ctx->edges = sub.edges;
    ctx->h_prev = h_prev;
    ctx->by_type.resize(sub.by_type.size());
    for (std::size_t t = 0; t < sub.by_type.size(); ++t) {
        ctx->by_type[t].assign(sub.by_type[t].begin(), sub.by_type[t].end());
    }

    // Per-target contiguous edge segments (edges are grouped by dst).
    ctx->seg.assign(static_cast<std::size_t>(M), {0, 0});
    {
        std::size_t e = 0;
        while (e < E) {
            std::size_t b = e;
            std::uint32_t dst = sub.edges[e].dst;
            while (e < E && sub.edges[e].dst == dst) ++e;
            ctx->seg[dst] = {static_cast<int>(b), static_cast<int>(e)};
        }
    }
    ctx->by_rel.resize(L.rel.size());
    for (std::size_t e = 0; e < E; ++e) ctx->by_rel[sub.edges[e].rel].push_back(static_cast<int>(e));

    std::vector<Var> inputs{h_prev};
    ctx->q_store.assign(ctx->by_type.size(), -1);
    ctx->k_store.assign(ctx->by_type.size(), -1);
    ctx->v_store.assign(ctx->by_type.size(), -1);
    ctx->qp = Matrix::Zero(M, d);
    ctx->kp = Matrix::Zero(M, d);
    ctx->vp = Matrix::Zero(M, d);
    for (std::size_t t = 0; t < ctx->by_type.size(); ++t) {
        if (ctx->by_type[t].empty()) continue;
        ctx->q_store[t] = L.q[t];
        ctx->k_store[t] = L.k[t];
        ctx->v_store[t] = L.v[t];
        Var qv = bp.at(L.q[t]), kv = bp.at(L.k[t]), vv = bp.at(L.v[t]);
        inputs.insert(inputs.end(), {qv, kv, vv});
        typed_project(H, ctx->by_type[t], tape.value(qv), ctx->qp);
        typed_project(H, ctx->by_type[t], tape.value(kv), ctx->kp);
        typed_project(H, ctx->by_type[t], tape.value(vv), ctx->vp);
    }

    ctx->rel_store.resize(L.rel.size());
    Matrix logits(static_cast<Eigen::Index>(E), heads);
    for (std::size_t r = 0; r < ctx->by_rel.size(); ++r) {
        const auto& es = ctx->by_rel[r];
        if (es.empty()) continue;
        ctx->rel_store[r] = L.rel[r];
        Matrix qd(static_cast<Eigen::Index>(es.size()), d);
        Matrix ks(static_cast<Eigen::Index>(es.size()), d);
        for (std::size_t j = 0; j < es.size(); ++j) {
            qd.row(static_cast<Eigen::Index>(j)) = ctx->qp.row(sub.edges[es[j]].dst);
            ks.row(static_cast<Eigen::Index>(j)) = ctx->kp.row(sub.edges[es[j]].src);
        }
        for (int a = 0; a < heads; ++a) {
            Var wv = bp.at(L.rel[r][a]);
            inputs.push_back(wv);
            Matrix bq = qd.middleCols(a * dh, dh) * tape.value(wv);
            Eigen::VectorXd raw =
                (bq.array() * ks.middleCols(a * dh, dh).array()).rowwise().sum().matrix();
            for (std::size_t j = 0; j < es.size(); ++j) {
                logits(es[j], a) = raw(static_cast<Eigen::Index>(j)) * ctx->inv_sqrt_dh;
            }
        }
    }

    // Per-target, per-head softmax over the incoming edge segment.
    ctx->alpha.resize(static_cast<Eigen::Index>(E), heads);
    for (Eigen::Index i = 0; i < M; ++i) {
        auto [b, e] = ctx->seg[static_cast<std::size_t>(i)];
        if (b == e) continue;
        for (int a = 0; a < heads; ++a) {
            double mx = logits(b, a);
            for (int j = b + 1; j < e; ++j) mx = std::max(mx, logits(j, a));
            double sum = 0;
            for (int j = b; j < e; ++j) {
                double z = std::exp(logits(j, a) - mx);
                ctx->alpha(j, a) = z;
                sum += z;
            }
            for (int j = b; j < e; ++j) ctx->alpha(j, a) /= sum;
        }
    }

    Matrix msg = Matrix::Zero(M, d);
    for (Eigen::Index i = 0; i < M; ++i) {
        auto [b, e] = ctx->seg[static_cast<std::size_t>(i)];
        for (int j = b; j < e; ++j) {
            std::uint32_t s = ctx->edges[static_cast<std::size_t>(j)].src;
            for (int a = 0; a < heads; ++a) {
                msg.row(i).segment(a * dh, dh) +=
                    ctx->alpha(j, a) * ctx->vp.row(s).segment(a * dh, dh);
            }
        }
    }

    BoundParams* bpp = &bp;
    Var msg_var = tape.custom(inputs, std::move(msg), [ctx, bpp](Tape& t, const Matrix& gout) {
        const int heads = ctx->heads, dh = ctx->dh;
        const auto E = static_cast<Eigen::Index>(ctx->edges.size());
        const auto M = gout.rows();
        Matrix dvp = Matrix::Zero(M, gout.cols());
        Matrix dalpha = Matrix::Zero(E, heads);
        for (Eigen::Index i = 0; i < M; ++i) {
            auto [b, e] = ctx->seg[static_cast<std::size_t>(i)];
            for (int j = b; j < e; ++j) {
                std::uint32_t s = ctx->edges[static_cast<std::size_t>(j)].src;
                for (int a = 0; a < heads; ++a) {
                    dalpha(j, a) =
                        gout.row(i).segment(a * dh, dh).dot(ctx->vp.row(s).segment(a * dh, dh));
                    dvp.row(s).segment(a * dh, dh) +=
                        ctx->alpha(j, a) * gout.row(i).segment(a * dh, dh);
                }
            }
        }
        // softmax backward per segment
        Matrix dlogit = Matrix::Zero(E, heads);
        for (Eigen::Index i = 0; i < M; ++i) {
            auto [b, e] = ctx->seg[static_cast<std::size_t>(i)];
            if (b == e) continue;
            for (int a = 0; a < heads; ++a) {
                double ssum = 0;
                for (int j = b; j < e; ++j) ssum += ctx->alpha(j, a) * dalpha(j, a);
                for (int j = b; j < e; ++j) {
                    dlogit(j, a) = ctx->alpha(j, a) * (dalpha(j, a) - ssum);
                }
            }
        }
        Matrix dqp = Matrix::Zero(M, gout.cols());
        Matrix dkp = Matrix::Zero(M, gout.cols());
        for (std::size_t r = 0; r < ctx->by_rel.size(); ++r) {
            const auto& es = ctx->by_rel[r];
            if (es.empty()) continue;
            Matrix qd(static_cast<Eigen::Index>(es.size()), gout.cols());
            Matrix ks(static_cast<Eigen::Index>(es.size()), gout.cols());
            for (std::size_t j = 0; j < es.size(); ++j) {
                qd.row(static_cast<Eigen::Index>(j)) = ctx->qp.row(ctx->edges[es[j]].dst);
                ks.row(static_cast<Eigen::Index>(j)) = ctx->kp.row(ctx->edges[es[j]].src);
            }
            for (int a = 0; a < heads; ++a) {
                Var wv = bpp->at(ctx->rel_store[r][a]);
                const Matrix& W = t.value(wv);
                Eigen::VectorXd draw(static_cast<Eigen::Index>(es.size()));
                for (std::size_t j = 0; j < es.size(); ++j) {
                    draw(static_cast<Eigen::Index>(j)) = dlogit(es[j], a) * ctx->inv_sqrt_dh;
                }
                Matrix qh = qd.middleCols(a * dh, dh);
                Matrix kh = ks.middleCols(a * dh, dh);
                Matrix bq = qh * W;  // recomputed forward
                Matrix dbq = (kh.array().colwise() * draw.array()).matrix();
                Matrix dqh = dbq * W.transpose();
                Matrix dkh = (bq.array().colwise() * draw.array()).matrix();
                t.accum_grad(wv, qh.transpose() * dbq);
                for (std::size_t j = 0; j < es.size(); ++j) {
                    dqp.row(ctx->edges[es[j]].dst).segment(a * dh, dh) +=
                        dqh.row(static_cast<Eigen::Index>(j));
                    dkp.row(ctx->edges[es[j]].src).segment(a * dh, dh) +=
                        dkh.row(static_cast<Eigen::Index>(j));
                }
            }
        }
        // project back through per-type Q/K/V
        Matrix dh_prev = Matrix::Zero(M, gout.cols());
        const Matrix& H = t.value(ctx->h_prev);
        for (std::size_t ty = 0; ty < ctx->by_type.size(); ++ty) {
            const auto& rows = ctx->by_type[ty];
            if (rows.empty() || ctx->q_store[ty] < 0) continue;
            Matrix ht(static_cast<Eigen::Index>(rows.size()), gout.cols());
            Matrix gq(static_cast<Eigen::Index>(rows.size()), gout.cols());
            Matrix gk(static_cast<Eigen::Index>(rows.size()), gout.cols());
            Matrix gv(static_cast<Eigen::Index>(rows.size()), gout.cols());
            for (std::size_t j = 0; j < rows.size(); ++j) {
                auto jj = static_cast<Eigen::Index>(j);
                ht.row(jj) = H.row(rows[j]);
                gq.row(jj) = dqp.row(rows[j]);
                gk.row(jj) = dkp.row(rows[j]);
                gv.row(jj) = dvp.row(rows[j]);
            }
            Var qv = bpp->at(ctx->q_store[ty]);
            Var kv = bpp->at(ctx->k_store[ty]);
            Var vv = bpp->at(ctx->v_store[ty]);
            t.accum_grad(qv, ht.transpose() * gq);
            t.accum_grad(kv, ht.transpose() * gk);
            t.accum_grad(vv, ht.transpose() * gv);
            Matrix back = gq * t.value(qv).transpose() + gk * t.value(kv).transpose() +
                          gv * t.value(vv).transpose();
            for (std::size_t j = 0; j < rows.size(); ++j) {
                dh_prev.row(rows[j]) += back.row(static_cast<Eigen::Index>(j));
            }
        }
        t.accum_grad(ctx->h_prev, dh_prev);
    });

    // Per-type output projection of the aggregated messages.
    auto lctx = std::make_shared<LinCtx>();
    lctx->by_type = ctx->by_type;
    lctx->o_store.assign(lctx->by_type.size(), -1);
    lctx->x = msg_var;
    std::vector<Var> lin_inputs{msg_var};
    const Matrix& X = tape.value(msg_var);
    Matrix lin = Matrix::Zero(M, d);
    for (std::size_t t = 0; t < lctx->by_type.size(); ++t) {
        if (lctx->by_type[t].empty()) continue;
        lctx->o_store[t] = L.o[t];
        Var ov = bp.at(L.o[t]);
        lin_inputs.push_back(ov);
        typed_project(X, lctx->by_type[t], tape.value(ov), lin);
    }
    Var lin_var = tape.custom(lin_inputs, std::move(lin), [lctx, bpp](Tape& t, const Matrix& gout) {
        const Matrix& X = t.value(lctx->x);
        Matrix dx = Matrix::Zero(X.rows(), X.cols());
        for (std::size_t ty = 0; ty < lctx->by_type.size(); ++ty) {
            const auto& rows = lctx->by_type[ty];
            if (rows.empty() || lctx->o_store[ty] < 0) continue;
            Matrix xt(static_cast<Eigen::Index>(rows.size()), X.cols());
            Matrix gt(static_cast<Eigen::Index>(rows.size()), X.cols());
            for (std::size_t j = 0; j < rows.size(); ++j) {
                xt.row(static_cast<Eigen::Index>(j)) = X.row(rows[j]);
                gt.row(static_cast<Eigen::Index>(j)) = gout.row(rows[j]);
            }
            Var ov = bpp->at(lctx->o_store[ty]);
            t.accum_grad(ov, xt.transpose() * gt);
            Matrix back = gt * t.value(ov).transpose();
            for (std::size_t j = 0; j < rows.size(); ++j) {
                dx.row(rows[j]) += back.row(static_cast<Eigen::Index>(j));
            }
        }
        t.accum_grad(lctx->x, dx);
    });

    return tape.gelu(tape.add(lin_var, h_prev));
}

// ---------------------------------------------------------------------------
// Primary embedding, gates, losses

namespace {

SampledSubgraph trivial_subgraph(const MultimodalGraph& g, std::span<const NodeId> batch) {
    SampledSubgraph sub;
    sub.by_type.resize(g.num_node_types());
    sub.batch_size = batch.size();
    for (NodeId v : batch) {
        sub.layer.push_back(0);
        sub.by_type[g.node_type(v)].push_back(static_cast<std::uint32_t>(sub.nodes.size()));
        sub.nodes.push_back(v);
    }
    return sub;
}

}  // namespace

EmbedOut embed_primary(BoundParams& bp, const MultimodalGraph& g, std::span<const NodeId> batch,
                       bool train_mode, SamplerRng& rng) {
    if (batch.empty()) throw std::invalid_argument("embed: batch must be nonempty");
    {
        std::unordered_set<NodeId> uniq(batch.begin(), batch.end());
        if (uniq.size() != batch.size()) {
            throw std::invalid_argument("embed: batch contains duplicate nodes");
        }
    }
    EncoderParams& P = bp.params();
    bp.graph = &g;
    EmbedOut out;
    if (P.cfg.layers == 0) {
        out.sub = trivial_subgraph(g, batch);
    } else {
        out.sub = budget_sample(g, batch, P.cfg.budgets, rng);
    }
    Var h = initial_features(bp, g, out.sub, train_mode, rng);
    for (int l = 0; l < P.cfg.layers; ++l) h = hetero_conv_layer(bp, out.sub, h, l);
    out.all = h;
    std::vector<int> idx(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) idx[i] = static_cast<int>(i);
    out.batch = bp.tape().rows(h, std::move(idx));
    return out;
}

Var task_transform(BoundParams& bp, Var z, const TaskHead& head) {
    Tape& tape = bp.tape();
    std::vector<Var> parts;
    parts.reserve(head.w.size());
    for (std::size_t a = 0; a < head.w.size(); ++a) {
        Var lin = tape.add_rowvec(tape.matmul(z, bp.at(head.w[a])), bp.at(head.b[a]));
        parts.push_back(tape.sigmoid(lin));
    }
    return tape.elementwise_mul(z, tape.rowwise_concat(parts));
}

Var mm_loss(Tape& tape, Var z, int query_row, std::span<const int> pos_rows,
            std::span<const int> neg_rows, double margin) {
    if (pos_rows.empty() || neg_rows.empty()) {
        throw std::invalid_argument("context loss needs at least one positive and one negative");
    }
    Var zq = tape.transpose(tape.rows(z, {query_row}));  // d x 1
    Var pos = tape.reduce_mean(
        tape.matmul(tape.rows(z, std::vector<int>(pos_rows.begin(), pos_rows.end())), zq));
    Var neg = tape.matmul(tape.rows(z, std::vector<int>(neg_rows.begin(), neg_rows.end())), zq);
    return tape.hinge_max(neg, pos, margin);
}

Var cluster_loss(Tape& tape, Var z, int row, const Eigen::VectorXd& mu) {
    Var zv = tape.rows(z, {row});
    Matrix neg_mu = -mu.transpose();
    Var diff = tape.add(zv, tape.input(std::move(neg_mu)));
    return tape.l2_norm_sq(diff);
}

Var combined_loss(Tape& tape, Var le, Var lt, Var lc, const LossWeights& w) {
    w.validate();
    Var acc{};
    auto add_term = [&](Var v, double beta) {
        if (!v.valid() || beta == 0.0) return;
        Var term = tape.scale(v, beta);
        acc = acc.valid() ? tape.add(acc, term) : term;
    };
    add_term(le, w.beta_e);
    add_term(lt, w.beta_t);
    add_term(lc, w.beta_c);
    if (!acc.valid()) return tape.input(Matrix::Zero(1, 1));
    return acc;
}

}  // namespace mgtcom
