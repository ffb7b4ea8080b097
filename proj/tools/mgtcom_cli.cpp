// Command-line surface: dataset prep, synthetic generation, training,
// embedding/cluster export, evaluation, and run comparison.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "mgtcom/dataset.hpp"
#include "mgtcom/eval.hpp"
#include "mgtcom/pipeline.hpp"
#include "mgtcom/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgtcom;

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
    cmd->add_option("--dim", cfg.model.dim, "embedding dimension");
    cmd->add_option("--layers", cfg.model.layers, "conv layers");
    cmd->add_option("--heads", cfg.model.heads, "attention heads");
    cmd->add_option("--feat-dropout", cfg.model.feat_dropout, "free-embedding dropout rate");
    cmd->add_option("--budgets", cfg.model.budgets, "per-layer neighbor budgets");
    cmd->add_option("--walks-per-node", cfg.walks_per_node, "context walks per query");
    cmd->add_option("--walk-length", cfg.walk_length, "walk length");
    cmd->add_option("--p", cfg.p, "biased-walk return parameter");
    cmd->add_option("--q", cfg.q, "biased-walk in-out parameter");
    cmd->add_option("--omega-partitions", cfg.omega_partitions,
                    "time-extent divisor for the context window");
    cmd->add_option("--delta", cfg.loss.margin, "hinge margin");
    cmd->add_option("--beta-e", cfg.loss.beta_e, "topological loss weight");
    cmd->add_option("--beta-t", cfg.loss.beta_t, "temporal loss weight");
    cmd->add_option("--beta-c", cfg.loss.beta_c, "cluster loss weight");
    cmd->add_option("--epochs", cfg.epochs, "outer alternation iterations");
    cmd->add_option("--cluster-steps", cfg.cluster_steps, "clustering rounds per iteration");
    cmd->add_option("--pretrain-epochs", cfg.pretrain_epochs, "pretraining epoch cap");
    cmd->add_option("--minibatch", cfg.minibatch, "query nodes per step");
    cmd->add_option("--lr", cfg.adam.lr, "learning rate");
    cmd->add_option("--alpha", cfg.alpha, "mixture concentration");
    cmd->add_option("--kappa", cfg.kappa, "prior mean strength");
    cmd->add_option("--nu-offset", cfg.nu_offset, "degrees of freedom minus dim");
    cmd->add_option("--sigma-scale", cfg.sigma_scale, "prior covariance scale");
    cmd->add_option("--k-init", cfg.k_init, "initial cluster count");
    cmd->add_option("--seed", cfg.seed, "random seed");
}

json config_json(const TrainConfig& c) {
    json j;
    j["dim"] = c.model.dim;
    j["layers"] = c.model.layers;
    j["heads"] = c.model.heads;
    j["feat_dropout"] = c.model.feat_dropout;
    j["budgets"] = c.model.budgets;
    j["walks_per_node"] = c.walks_per_node;
    j["walk_length"] = c.walk_length;
    j["p"] = c.p;
    j["q"] = c.q;
    j["omega_partitions"] = c.omega_partitions;
    j["delta"] = c.loss.margin;
    j["beta_e"] = c.loss.beta_e;
    j["beta_t"] = c.loss.beta_t;
    j["beta_c"] = c.loss.beta_c;
    j["epochs"] = c.epochs;
    j["cluster_steps"] = c.cluster_steps;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["minibatch"] = c.minibatch;
    j["lr"] = c.adam.lr;
    j["alpha"] = c.alpha;
    j["kappa"] = c.kappa;
    j["nu_offset"] = c.nu_offset;
    j["sigma_scale"] = c.sigma_scale;
    j["k_init"] = c.k_init;
    j["seed"] = c.seed;
    return j;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << body;
}

void echo_config(const std::string& out_dir, const std::string& command,
                 const std::string& dataset, const TrainConfig& cfg) {
    json j;
    j["command"] = command;
    j["dataset"] = dataset;
    j["config"] = config_json(cfg);
    write_text((fs::path(out_dir) / "config.json").string(), j.dump(2) + "\n");
}

void write_losses(const std::string& out_dir, const TrainResult& r) {
    std::ostringstream os;
    for (std::size_t i = 0; i < r.pretrain_loss.size(); ++i)
        os << "pretrain\t" << i << '\t' << fmt17(r.pretrain_loss[i]) << '\n';
    for (std::size_t i = 0; i < r.epoch_loss.size(); ++i)
        os << "train\t" << i << '\t' << fmt17(r.epoch_loss[i]) << '\n';
    write_text((fs::path(out_dir) / "losses.tsv").string(), os.str());
}

void write_embeddings_tsv(const std::string& path, const Matrix& z) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        out << i;
        for (Eigen::Index j = 0; j < z.cols(); ++j) out << '\t' << fmt17(z(i, j));
        out << '\n';
    }
}

void write_embeddings_bin(const std::string& path, const Matrix& z) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    std::uint64_t magic = 0x31424d45544d474dULL, rows = z.rows(), cols = z.cols();
    out.write(reinterpret_cast<const char*>(&magic), 8);
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
            double v = z(i, j);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
}

void write_cluster_export(const std::string& out_dir, const MultimodalGraph& g,
                          const TrainResult& r) {
    std::ostringstream assign;
    for (std::size_t row = 0; row < r.cluster_nodes.size(); ++row) {
        NodeRef ref = g.node_ref(r.cluster_nodes[row]);
        assign << g.node_type_name(ref.type) << '\t' << ref.index << '\t' << r.clusters.z[row]
               << '\n';
    }
    write_text((fs::path(out_dir) / "assignments.tsv").string(), assign.str());

    std::ostringstream par;
    par << "K\t" << r.clusters.K() << '\n';
    for (std::size_t k = 0; k < r.clusters.K(); ++k) {
        const GaussComp& c = r.clusters.clusters[k].comp;
        par << "component\t" << k << "\npi\t" << fmt17(c.pi) << "\nn\t" << c.n << "\nmean";
        for (Eigen::Index i = 0; i < c.mu.size(); ++i) par << '\t' << fmt17(c.mu(i));
        par << "\ncovariance\n";
        for (Eigen::Index i = 0; i < c.sigma.rows(); ++i) {
            for (Eigen::Index j = 0; j < c.sigma.cols(); ++j)
                par << (j ? "\t" : "") << fmt17(c.sigma(i, j));
            par << '\n';
        }
    }
    write_text((fs::path(out_dir) / "clusters.txt").string(), par.str());
}

// Aligns a detected assignment with a reference labeling on their common
// nodes; returns the two label arrays.
std::pair<std::vector<int>, std::vector<int>> align_labels(const std::vector<NodeId>& nodes_a,
                                                           const std::vector<int>& labels_a,
                                                           const LabelSet& ref) {
    std::map<NodeId, int> ref_of;
    for (std::size_t i = 0; i < ref.nodes.size(); ++i) ref_of[ref.nodes[i]] = ref.labels[i];
    std::vector<int> a, b;
    for (std::size_t i = 0; i < nodes_a.size(); ++i) {
        auto it = ref_of.find(nodes_a[i]);
        if (it == ref_of.end()) continue;
        a.push_back(labels_a[i]);
        b.push_back(it->second);
    }
    return {std::move(a), std::move(b)};
}

int run_prepare(const std::string& dataset, const std::string& out_dir) {
    Dataset ds = load_dataset(dataset);
    const MultimodalGraph& g = ds.graph;
    std::cout << "types: " << g.num_node_types() << '\n';
    for (NodeTypeId t = 0; t < g.num_node_types(); ++t) {
        std::size_t feat = 0, timed = 0;
        for (std::uint32_t i = 0; i < g.type_count(t); ++i) {
            NodeId v = g.global_id({t, i});
            feat += g.has_feature(v);
            timed += g.has_time(v);
        }
        std::cout << "  " << g.node_type_name(t) << ": " << g.type_count(t) << " nodes, "
                  << g.feature_dim(t) << "-dim features (" << feat << " present), " << timed
                  << " timestamped\n";
    }
    std::cout << "relations: " << g.num_relations() << '\n';
    for (RelationTypeId r = 0; r < g.num_relations(); ++r)
        std::cout << "  " << g.relation_name(r) << ": " << g.edges(r).size() << " edges\n";
    for (const auto& nl : ds.labels)
        std::cout << "labels: " << nl.name << " (" << nl.set.num_labels << " classes over "
                  << nl.set.nodes.size() << " nodes)\n";
    if (!out_dir.empty()) {
        save_dataset(ds, out_dir);
        std::cout << "canonical copy written to " << out_dir << '\n';
    }
    return 0;
}

SyntheticTypeSpec parse_type_spec(const std::string& s) {
    SyntheticTypeSpec t;
    std::stringstream ss(s);
    std::string part;
    int field = 0;
    while (std::getline(ss, part, ':')) {
        switch (field++) {
            case 0: t.name = part; break;
            case 1: t.count = static_cast<std::uint32_t>(std::stoul(part)); break;
            case 2: t.feat_dim = std::stoi(part); break;
            case 3: t.missing_feat_frac = std::stod(part); break;
            default: throw CLI::ValidationError("--type", "too many ':' fields in '" + s + "'");
        }
    }
    if (field < 2) throw CLI::ValidationError("--type", "expected name:count[:dim[:missing]]");
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal multimodal graph embedding and community detection"};
    app.require_subcommand(1);
    std::string dataset, out_dir, ckpt_path, resume_path;

    // ---- prepare ----
    auto* prep = app.add_subcommand("prepare", "validate a dataset and print a summary");
    prep->add_option("--dataset", dataset, "dataset directory")->required();
    std::string prep_out;
    prep->add_option("--out", prep_out, "write a canonical copy here");
    prep->callback([&] { run_prepare(dataset, prep_out); });

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "generate a synthetic block-model dataset");
    SyntheticSpec spec;
    std::vector<std::string> type_specs;
    std::uint64_t gen_seed = 1;
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--type", type_specs, "node type as name:count[:featdim[:missingfrac]]")
        ->required();
    gen->add_option("--blocks", spec.blocks, "community count");
    gen->add_option("--p-in", spec.p_in, "within-block edge probability");
    gen->add_option("--p-out", spec.p_out, "cross-block edge probability");
    gen->add_option("--time-bins", spec.time_bins, "temporal bins (0 = untimed)");
    gen->add_option("--missing-time-frac", spec.missing_time_frac, "fraction left static");
    gen->add_option("--time-span", spec.time_span, "timestamp range length");
    gen->add_flag("--time-correlated", spec.time_correlated, "bins follow blocks");
    gen->add_option("--feature-scale", spec.feature_scale, "block mean spread");
    gen->add_option("--seed", gen_seed, "random seed");
    gen->callback([&] {
        spec.types.clear();
        for (const auto& s : type_specs) spec.types.push_back(parse_type_spec(s));
        gen_synthetic(spec, gen_seed, out_dir);
        std::cout << "dataset written to " << out_dir << '\n';
    });

    // ---- pretrain / train ----
    TrainConfig cfg;
    auto* pre = app.add_subcommand("pretrain", "pretraining only (cluster term off)");
    pre->add_option("--dataset", dataset, "dataset directory")->required();
    pre->add_option("--out", out_dir, "output directory")->required();
    add_train_flags(pre, cfg);
    pre->callback([&] {
        Dataset ds = load_dataset(dataset);
        TrainConfig c = cfg;
        c.epochs = 0;  // pretraining phase only; clusters fall back to k-means
        fs::create_directories(out_dir);
        echo_config(out_dir, "pretrain", dataset, c);
        TrainResult r = train(ds.graph, c);
        save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), r);
        write_losses(out_dir, r);
        std::cout << "pretrained " << r.pretrain_loss.size() << " epochs, final loss "
                  << (r.pretrain_loss.empty() ? 0.0 : r.pretrain_loss.back()) << '\n';
    });

    auto* tr = app.add_subcommand("train", "full alternating training");
    tr->add_option("--dataset", dataset, "dataset directory")->required();
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--resume", resume_path, "checkpoint to continue from");
    add_train_flags(tr, cfg);
    tr->callback([&] {
        Dataset ds = load_dataset(dataset);
        fs::create_directories(out_dir);
        TrainResult r;
        if (!resume_path.empty()) {
            r = resume_train(ds.graph, load_checkpoint(resume_path), cfg.epochs);
        } else {
            r = train(ds.graph, cfg);
        }
        echo_config(out_dir, "train", dataset, r.cfg);
        save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), r);
        write_losses(out_dir, r);
        std::cout << "trained " << r.outer_done << " outer iterations, K=" << r.clusters.K()
                  << '\n';
    });

    // ---- embed ----
    auto* emb = app.add_subcommand("embed", "export embeddings for every node");
    std::string emb_format = "both";
    std::uint64_t emb_seed = 1;
    emb->add_option("--dataset", dataset, "dataset directory")->required();
    emb->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    emb->add_option("--out", out_dir, "output directory")->required();
    emb->add_option("--format", emb_format, "tsv, bin, or both")
        ->check(CLI::IsMember({"tsv", "bin", "both"}));
    emb->add_option("--seed", emb_seed, "sampling seed for the forward pass");
    emb->callback([&] {
        Dataset ds = load_dataset(dataset);
        TrainResult r = load_checkpoint(ckpt_path);
        Matrix z = embed_all(ds.graph, r.params, emb_seed);
        fs::create_directories(out_dir);
        if (emb_format != "bin")
            write_embeddings_tsv((fs::path(out_dir) / "embeddings.tsv").string(), z);
        if (emb_format != "tsv")
            write_embeddings_bin((fs::path(out_dir) / "embeddings.bin").string(), z);
        std::cout << "embedded " << z.rows() << " nodes\n";
    });

    // ---- cluster ----
    auto* clu = app.add_subcommand("cluster", "export community assignments and parameters");
    clu->add_option("--dataset", dataset, "dataset directory")->required();
    clu->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    clu->add_option("--out", out_dir, "output directory")->required();
    clu->callback([&] {
        Dataset ds = load_dataset(dataset);
        TrainResult r = load_checkpoint(ckpt_path);
        fs::create_directories(out_dir);
        write_cluster_export(out_dir, ds.graph, r);
        std::cout << "K=" << r.clusters.K() << " over " << r.cluster_nodes.size() << " nodes\n";
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "metric report for a trained checkpoint");
    int ev_bins = 4;
    std::uint64_t ev_seed = 1;
    ev->add_option("--dataset", dataset, "dataset directory")->required();
    ev->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    ev->add_option("--out", out_dir, "output directory")->required();
    ev->add_option("--bins", ev_bins, "temporal label bins when the dataset has none");
    ev->add_option("--seed", ev_seed, "probe seed");
    ev->callback([&] {
        Dataset ds = load_dataset(dataset);
        const MultimodalGraph& g = ds.graph;
        TrainResult r = load_checkpoint(ckpt_path);
        Matrix z = embed_all(g, r.params, ev_seed);
        SamplerRng rng(ev_seed);

        std::vector<std::pair<std::string, double>> metrics;
        EdgeSplit split = split_edges(g, {0.8, 0.1, 0.1}, ev_seed);
        metrics.emplace_back("LP_ACC", lp_accuracy(z, split, rng));

        const LabelSet* ly = nullptr;
        for (const auto& nl : ds.labels)
            if (nl.set.kind == LabelSet::Kind::GroundTruth) {
                ly = &nl.set;
                break;
            }
        if (ly) metrics.emplace_back("CF_ACC_Ly", cf_accuracy(z, *ly, rng));
        LabelSet lt;
        if (const LabelSet* named = ds.find_labels("time"); named != nullptr) lt = *named;
        else lt = temporal_labels(g, ev_bins);
        if (lt.num_labels >= 2) metrics.emplace_back("CF_ACC_LT", cf_accuracy(z, lt, rng));

        // community labels for every node: fitted assignments where
        // available, nearest-component assignment elsewhere
        std::vector<int> comm(g.num_nodes(), -1);
        for (std::size_t row = 0; row < r.cluster_nodes.size(); ++row)
            comm[r.cluster_nodes[row]] = r.clusters.z[row];
        std::vector<int> fallback = assign_rows(z, r.clusters);
        for (std::size_t v = 0; v < comm.size(); ++v)
            if (comm[v] < 0) comm[v] = fallback[v];

        std::vector<NodeId> all_nodes(g.num_nodes());
        std::iota(all_nodes.begin(), all_nodes.end(), 0u);
        if (ly) {
            auto [a, b] = align_labels(all_nodes, comm, *ly);
            metrics.emplace_back("COM_NMI_Ly", nmi(a, b));
        }
        if (lt.num_labels >= 2) {
            auto [a, b] = align_labels(all_nodes, comm, lt);
            metrics.emplace_back("COM_NMI_LT", nmi(a, b));
        }
        LabelSet lg = louvain_labels(g);
        if (lg.num_labels >= 1) {
            auto [a, b] = align_labels(all_nodes, comm, lg);
            metrics.emplace_back("COM_NMI_LG", nmi(a, b));
        }
        metrics.emplace_back("MODULARITY", modularity(g, comm));
        metrics.emplace_back("K", static_cast<double>(r.clusters.K()));

        fs::create_directories(out_dir);
        std::ostringstream os;
        for (const auto& [name, value] : metrics) os << name << '\t' << fmt17(value) << '\n';
        write_text((fs::path(out_dir) / "metrics.tsv").string(), os.str());
        for (const auto& [name, value] : metrics)
            std::cout << std::left << std::setw(12) << name << std::fixed
                      << std::setprecision(4) << value << '\n';
    });

    // ---- walks ----
    auto* wk = app.add_subcommand("walks", "print context walks for one node");
    std::string wk_node, wk_mode = "topo";
    wk->add_option("--dataset", dataset, "dataset directory")->required();
    wk->add_option("--node", wk_node, "query node as type:index")->required();
    wk->add_option("--mode", wk_mode, "topo or temporal")
        ->check(CLI::IsMember({"topo", "temporal"}));
    add_train_flags(wk, cfg);
    wk->callback([&] {
        Dataset ds = load_dataset(dataset);
        const MultimodalGraph& g = ds.graph;
        auto colon = wk_node.find(':');
        if (colon == std::string::npos)
            throw CLI::ValidationError("--node", "expected type:index");
        auto t = g.find_node_type(wk_node.substr(0, colon));
        if (!t) throw CLI::ValidationError("--node", "unknown node type");
        NodeId v = g.global_id(
            {*t, static_cast<std::uint32_t>(std::stoul(wk_node.substr(colon + 1)))});
        SamplerRng rng(cfg.seed);
        std::vector<WalkPath> walks;
        if (wk_mode == "topo") {
            for (int i = 0; i < cfg.walks_per_node; ++i)
                walks.push_back(node2vec_walk(g, v, cfg.walk_length, cfg.p, cfg.q, rng));
        } else {
            walks = ballroom_walk(g, v, cfg.context_window(g), cfg.walks_per_node,
                                  cfg.walk_length, rng);
        }
        for (const auto& w : walks) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                NodeRef ref = g.node_ref(w[i]);
                std::cout << (i ? " " : "") << g.node_type_name(ref.type) << ':' << ref.index;
            }
            std::cout << '\n';
        }
    });

    // ---- report ----
    auto* rep = app.add_subcommand("report", "aggregate metric files into one table");
    std::vector<std::string> rep_inputs;
    std::string rep_out;
    rep->add_option("--out", rep_out, "write the merged table here (TSV)");
    rep->add_option("files", rep_inputs, "metrics.tsv files from eval runs")->required();
    rep->callback([&] {
        std::vector<std::string> run_names;
        std::vector<std::map<std::string, std::string>> runs;
        std::vector<std::string> metric_order;
        for (const auto& path : rep_inputs) {
            std::ifstream in(path);
            if (!in) throw std::runtime_error("cannot open " + path);
            fs::path p(path);
            run_names.push_back(p.parent_path().filename().string().empty()
                                    ? p.stem().string()
                                    : p.parent_path().filename().string());
            std::map<std::string, std::string> row;
            std::string line;
            while (std::getline(in, line)) {
                auto tab = line.find('\t');
                if (tab == std::string::npos) continue;
                std::string key = line.substr(0, tab);
                row[key] = line.substr(tab + 1);
                if (std::find(metric_order.begin(), metric_order.end(), key) ==
                    metric_order.end())
                    metric_order.push_back(key);
            }
            runs.push_back(std::move(row));
        }
        std::ostringstream os;
        os << "metric";
        for (const auto& n : run_names) os << '\t' << n;
        os << '\n';
        for (const auto& m : metric_order) {
            os << m;
            for (const auto& row : runs) {
                auto it = row.find(m);
                os << '\t' << (it == row.end() ? "-" : it->second);
            }
            os << '\n';
        }
        std::cout << os.str();
        if (!rep_out.empty()) write_text(rep_out, os.str());
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
