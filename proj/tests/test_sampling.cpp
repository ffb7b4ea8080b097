#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "mgtcom/sampling.hpp"

using namespace mgtcom;

TEST_CASE("rng determinism and seed derivation") {
    SamplerRng a(99), b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

    auto s1 = SamplerRng::derive(1, 2, 3);
    CHECK(s1 == SamplerRng::derive(1, 2, 3));
    CHECK(s1 != SamplerRng::derive(1, 2, 4));
    CHECK(s1 != SamplerRng::derive(1, 3, 3));
    CHECK(s1 != SamplerRng::derive(2, 2, 3));
}

TEST_CASE("budget sampling returns the full neighborhood when the cap is slack") {
    auto g = testutil::path_graph(5);
    std::vector<NodeId> batch{2};
    std::vector<std::uint32_t> budgets{10, 10};
    SamplerRng rng(1);
    auto sub = budget_sample(g, batch, budgets, rng);

    CHECK(sub.size() == 5);
    CHECK(sub.batch_size == 1);
    CHECK(sub.nodes[0] == 2);
    CHECK(sub.layer[0] == 0);
    std::map<NodeId, int> layer_of;
    for (std::size_t i = 0; i < sub.size(); ++i) layer_of[sub.nodes[i]] = sub.layer[i];
    CHECK(layer_of[1] == 1);
    CHECK(layer_of[3] == 1);
    CHECK(layer_of[0] == 2);
    CHECK(layer_of[4] == 2);
}

TEST_CASE("budget sampling cap is budget times batch size") {
    // two batch nodes, each with 10 private neighbors; budget 4 => cap 8
    GraphBuilder b;
    auto t = b.add_node_type("n", 22);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i < 10; ++i) {
        b.add_edge(r, {t, 0}, {t, 2 + i});
        b.add_edge(r, {t, 1}, {t, 12 + i});
    }
    auto g = b.build();

    std::vector<NodeId> batch{0, 1};
    std::vector<std::uint32_t> budgets{4};
    SamplerRng rng(3);
    auto sub = budget_sample(g, batch, budgets, rng);
    CHECK(sub.size() == 2 + 8);
    int layer1 = 0;
    for (std::size_t i = 0; i < sub.size(); ++i)
        if (sub.layer[i] == 1) ++layer1;
    CHECK(layer1 == 8);
}

TEST_CASE("budget sampling picks leaves uniformly without replacement") {
    auto g = testutil::star_graph(10);
    std::vector<NodeId> batch{0};
    std::vector<std::uint32_t> budgets{3};
    std::vector<int> hits(11, 0);
    const int runs = 10000;
    for (int s = 0; s < runs; ++s) {
        SamplerRng rng(1000 + s);
        auto sub = budget_sample(g, batch, budgets, rng);
        CHECK(sub.size() == 4);  // hub + exactly 3 of 10 leaves
        std::set<NodeId> uniq(sub.nodes.begin(), sub.nodes.end());
        CHECK(uniq.size() == 4);
        for (std::size_t i = 1; i < sub.size(); ++i) hits[sub.nodes[i]]++;
    }
    // each leaf included with p = 0.3; 3 sigma of Binomial(10000, 0.3)
    double sigma = std::sqrt(runs * 0.3 * 0.7);
    for (int leaf = 1; leaf <= 10; ++leaf)
        CHECK(std::fabs(hits[leaf] - runs * 0.3) <= 3 * sigma);
}

TEST_CASE("budget sampling never exceeds the per-type per-layer cap") {
    std::mt19937_64 gen(5);
    GraphBuilder b;
    auto ta = b.add_node_type("a", 40);
    auto tb = b.add_node_type("b", 40);
    auto r = b.add_relation("r");
    for (int i = 0; i < 400; ++i)
        b.add_edge(r, {ta, static_cast<std::uint32_t>(gen() % 40)},
                   {tb, static_cast<std::uint32_t>(gen() % 40)});
    for (int i = 0; i < 100; ++i)
        b.add_edge(r, {ta, static_cast<std::uint32_t>(gen() % 40)},
                   {ta, static_cast<std::uint32_t>(gen() % 40)});
    auto g = b.build();

    std::vector<NodeId> batch{0, 1, 41};
    std::vector<std::uint32_t> budgets{2, 3};
    for (int s = 0; s < 20; ++s) {
        SamplerRng rng(s);
        auto sub = budget_sample(g, batch, budgets, rng);
        for (std::size_t li = 1; li <= budgets.size(); ++li) {
            std::map<NodeTypeId, std::size_t> added;
            for (std::size_t i = 0; i < sub.size(); ++i)
                if (sub.layer[i] == static_cast<int>(li)) added[g.node_type(sub.nodes[i])]++;
            for (auto& [tt, cnt] : added)
                CHECK(cnt <= budgets[li - 1] * batch.size());
        }
        // batch nodes first, at layer 0
        CHECK(sub.batch_size == batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            CHECK(sub.nodes[i] == batch[i]);
            CHECK(sub.layer[i] == 0);
            CHECK(sub.local_of(batch[i]) == i);
        }
        // induced edges: endpoints sampled, grouped by dst, real edges of g
        std::uint32_t prev_dst = 0;
        for (const auto& e : sub.edges) {
            CHECK(e.dst >= prev_dst);
            prev_dst = e.dst;
            CHECK(e.dst < sub.size());
            CHECK(e.src < sub.size());
            CHECK(g.adjacent(sub.nodes[e.dst], sub.nodes[e.src]));
        }
    }
}

TEST_CASE("node2vec first step is uniform on a path graph") {
    auto g = testutil::path_graph(3);
    int to_a = 0, to_c = 0;
    const int runs = 10000;
    for (int s = 0; s < runs; ++s) {
        SamplerRng rng(s);
        auto path = node2vec_walk(g, 1, 1, 1.0, 1.0, rng);
        REQUIRE(path.size() == 2);
        CHECK(path[0] == 1);
        (path[1] == 0 ? to_a : to_c)++;
    }
    double sigma = std::sqrt(runs * 0.25);
    CHECK(std::fabs(to_a - runs * 0.5) <= 3 * sigma);
    CHECK(std::fabs(to_c - runs * 0.5) <= 3 * sigma);
}

TEST_CASE("node2vec distance-2 bias on a triangle with tail") {
    // triangle {0,1,2} plus tail 3 on node 2; condition on state (0 -> 2)
    auto g = testutil::edge_list_graph(4, {{0, 1}, {1, 2}, {0, 2}, {2, 3}});
    // weights from 2 with prev 0: return 0 -> 1/p, 1 adjacent to 0 -> 1,
    // 3 at distance 2 -> 1/q. For p=1, q=0.5: (1, 1, 2) => P = .25/.25/.5
    std::map<NodeId, int> obs;
    int accepted = 0;
    int seed = 0;
    while (accepted < 10000) {
        SamplerRng rng(seed++);
        auto path = node2vec_walk(g, 0, 2, 1.0, 0.5, rng);
        REQUIRE(path.size() == 3);
        if (path[1] != 2) continue;
        obs[path[2]]++;
        ++accepted;
    }
    std::map<NodeId, double> expect{{0, 0.25}, {1, 0.25}, {3, 0.5}};
    double stat = 0;
    for (auto& [node, p] : expect) {
        double e = p * accepted;
        double d = obs[node] - e;
        stat += d * d / e;
    }
    double pval = testutil::chi2_sf(stat, static_cast<int>(expect.size()) - 1);
    CHECK(pval > 0.01);
}

TEST_CASE("node2vec stops at walk length and handles isolation") {
    auto g = testutil::path_graph(3);
    SamplerRng rng(1);
    auto path = node2vec_walk(g, 1, 1, 1.0, 1.0, rng);
    CHECK(path.size() <= 2);

    GraphBuilder b;
    b.add_node_type("n", 1);
    b.add_relation("r");
    auto g2 = b.build();
    SamplerRng rng2(1);
    CHECK(node2vec_walk(g2, 0, 5, 1.0, 1.0, rng2) == WalkPath{0});
}

TEST_CASE("temporal walk is unconstrained when every node is in-window") {
    GraphBuilder b;
    auto t = b.add_node_type("n", 5);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i < 5; ++i) {
        b.add_edge(r, {t, i}, {t, (i + 1) % 5});
        b.set_time({t, i}, TimeRange::point(10));
    }
    auto g = b.build();

    SamplerRng rng(4);
    auto path = temporal_rw(g, 0, {5, 15}, 7, rng);
    CHECK(path.size() == 7);
    CHECK(path[0] == 0);
    for (std::size_t i = 1; i < path.size(); ++i) CHECK(g.adjacent(path[i - 1], path[i]));
}

TEST_CASE("temporal walk restarts from a visited node and continues") {
    // start v lies outside the window itself; its only admissible neighbor u
    // has no admissible neighbors (v is out-of-window, x too), so the walk
    // must restart from the path to continue. Reachable set is {v, u} only.
    GraphBuilder b;
    auto t = b.add_node_type("n", 4);
    auto r = b.add_relation("r");
    b.set_time({t, 0}, TimeRange::point(100));  // v, out of window
    b.set_time({t, 1}, TimeRange::point(5));    // u, in window
    b.set_time({t, 2}, TimeRange::point(200));  // x, never admissible
    b.set_time({t, 3}, TimeRange::point(300));  // isolated filler
    b.add_edge(r, {t, 0}, {t, 1});
    b.add_edge(r, {t, 0}, {t, 2});
    auto g = b.build();

    TimeRange w{4, 6};
    bool continued = false;
    for (int s = 0; s < 100; ++s) {
        SamplerRng rng(s);
        auto path = temporal_rw(g, 0, w, 4, rng);
        REQUIRE(!path.empty());
        CHECK(path[0] == 0);
        CHECK(path.size() <= 4);
        for (std::size_t i = 1; i < path.size(); ++i) CHECK(path[i] == 1);
        if (path.size() >= 3) continued = true;  // u appended again after a restart
    }
    CHECK(continued);
}

TEST_CASE("temporal walk from an isolated node returns just the node") {
    GraphBuilder b;
    auto t = b.add_node_type("n", 1);
    b.add_relation("r");
    b.set_time({t, 0}, TimeRange::point(1));
    auto g = b.build();
    SamplerRng rng(1);
    CHECK(temporal_rw(g, 0, TimeRange::all(), 5, rng) == WalkPath{0});
}

TEST_CASE("ballroom contexts stay inside the anchored window") {
    // three mutually adjacent nodes at t=10 plus one far node at t=50
    GraphBuilder b;
    auto t = b.add_node_type("n", 4);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i < 3; ++i)
        for (std::uint32_t j = i + 1; j < 4; ++j) b.add_edge(r, {t, i}, {t, j});
    for (std::uint32_t i = 0; i < 3; ++i) b.set_time({t, i}, TimeRange::point(10));
    b.set_time({t, 3}, TimeRange::point(50));
    auto g = b.build();

    TimeRange omega{-2, 2};  // window [8, 12] anchored at t_v = 10
    for (int s = 0; s < 2000; ++s) {
        SamplerRng rng(s);
        auto paths = ballroom_walk(g, 0, omega, 2, 3, rng);
        for (const auto& p : paths)
            for (NodeId u : p) {
                if (!g.has_time(u)) continue;
                CHECK(g.time_of(u).intersects(TimeRange{8, 12}));
                CHECK(u != 3);
            }
    }
}

TEST_CASE("ballroom infers the anchor timestamp for a static query") {
    // static v -- u(t=7) -- w(t=20); window [-2,2] anchors at 7 => [5,9],
    // so w can never be emitted while u can.
    GraphBuilder b;
    auto t = b.add_node_type("n", 3);
    auto r = b.add_relation("r");
    b.add_edge(r, {t, 0}, {t, 1});
    b.add_edge(r, {t, 1}, {t, 2});
    b.set_time({t, 1}, TimeRange::point(7));
    b.set_time({t, 2}, TimeRange::point(20));
    auto g = b.build();

    bool saw_u = false;
    for (int s = 0; s < 500; ++s) {
        SamplerRng rng(s);
        auto paths = ballroom_walk(g, 0, {-2, 2}, 2, 3, rng);
        for (const auto& p : paths)
            for (NodeId u : p) {
                CHECK(u != 2);
                if (u == 1) saw_u = true;
            }
    }
    CHECK(saw_u);
}

TEST_CASE("ballroom slices the pooled context into n full paths") {
    // cycle of 40 in-window nodes: every temporal walk reaches full length,
    // pool = n*l nodes, sliced into exactly n paths of l
    GraphBuilder b;
    auto t = b.add_node_type("n", 40);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i < 40; ++i) {
        b.add_edge(r, {t, i}, {t, (i + 1) % 40});
        b.set_time({t, i}, TimeRange::point(10));
    }
    auto g = b.build();

    SamplerRng rng(7);
    auto paths = ballroom_walk(g, 0, {-5, 5}, 3, 10, rng);
    REQUIRE(paths.size() == 3);
    for (const auto& p : paths) CHECK(p.size() == 10);
}

TEST_CASE("ballroom returns empty when no anchor or no residents exist") {
    // static query with no timestamped node reachable
    GraphBuilder b;
    auto t = b.add_node_type("n", 2);
    auto r = b.add_relation("r");
    b.add_edge(r, {t, 0}, {t, 1});
    auto g = b.build();
    SamplerRng rng(1);
    CHECK(ballroom_walk(g, 0, {-2, 2}, 2, 3, rng).empty());

    // timestamped query alone in its window: it is its own resident, and
    // static neighbors may ride along, but no other timestamped node can
    GraphBuilder b2;
    auto t2 = b2.add_node_type("n", 3);
    auto r2 = b2.add_relation("r");
    b2.add_edge(r2, {t2, 0}, {t2, 1});
    b2.add_edge(r2, {t2, 0}, {t2, 2});
    b2.set_time({t2, 0}, TimeRange::point(100));
    b2.set_time({t2, 2}, TimeRange::point(500));
    auto g2 = b2.build();
    for (int s = 0; s < 200; ++s) {
        SamplerRng rng2(s);
        auto paths = ballroom_walk(g2, 0, {-2, 2}, 2, 3, rng2);
        for (const auto& p : paths)
            for (NodeId u : p)
                if (g2.has_time(u)) CHECK(u == 0);
    }
}

TEST_CASE("ballroom suppresses near static pairs for timestamped queries") {
    // timestamped core with several static satellites woven in
    GraphBuilder b;
    auto t = b.add_node_type("n", 8);
    auto r = b.add_relation("r");
    for (std::uint32_t i = 0; i < 8; ++i)
        for (std::uint32_t j = i + 1; j < 8; ++j) b.add_edge(r, {t, i}, {t, j});
    for (std::uint32_t i = 0; i < 4; ++i) b.set_time({t, i}, TimeRange::point(10));
    // nodes 4..7 static
    auto g = b.build();

    for (int s = 0; s < 2000; ++s) {
        SamplerRng rng(s);
        auto paths = ballroom_walk(g, 0, {-3, 3}, 3, 6, rng);
        for (const auto& p : paths) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                for (std::size_t j = i + 1; j < p.size() && j <= i + 2; ++j) {
                    bool both_static = !g.has_time(p[i]) && !g.has_time(p[j]);
                    CHECK_FALSE(both_static);
                }
            }
        }
    }
}

TEST_CASE("negative sampling is uniform over nodes") {
    auto g = testutil::path_graph(5);
    std::vector<int> hits(5, 0);
    const int repeats = 10000;
    for (int s = 0; s < repeats; ++s) {
        SamplerRng rng(s);
        auto neg = negative_sample(g, 5, rng);
        REQUIRE(neg.size() == 5);
        for (NodeId v : neg) hits[v]++;
    }
    double n = 5.0 * repeats;
    double sigma = std::sqrt(n * 0.2 * 0.8);
    for (int v = 0; v < 5; ++v) CHECK(std::fabs(hits[v] - n / 5) <= 3 * sigma);

    SamplerRng r1(9), r2(9);
    CHECK(negative_sample(g, 4, r1) == negative_sample(g, 4, r2));

    SamplerRng r3(1);
    CHECK(negative_sample(g, 1, r3).size() == 1);
}

TEST_CASE("negative sampling can restrict to seen nodes") {
    GraphBuilder b;
    auto t = b.add_node_type("n", 6);
    b.add_relation("r");
    b.set_seen({t, 0}, false);
    b.set_seen({t, 5}, false);
    auto g = b.build();

    SamplerRng rng(2);
    for (int i = 0; i < 200; ++i)
        for (NodeId v : negative_sample(g, 8, rng, true)) {
            CHECK(v != 0);
            CHECK(v != 5);
        }
}

TEST_CASE("batch assembly deduplicates and keeps the query first") {
    std::vector<WalkPath> pe{{1, 2, 3}};
    std::vector<WalkPath> pt{{4, 5}};
    std::vector<NodeId> pbar{6, 7};
    auto batch = make_batch(0, pe, pt, pbar);
    CHECK(batch.size() == 8);  // disjoint: query + 3 + 2 + 2
    CHECK(batch[0] == 0);

    std::vector<WalkPath> same{{1, 2}};
    auto b2 = make_batch(1, same, same, std::vector<NodeId>{1, 2});
    CHECK(b2.size() == 2);
    CHECK(b2[0] == 1);

    // overlapping fixture vs brute-force set union
    std::vector<WalkPath> pe3{{3, 4, 5}, {5, 6}};
    std::vector<WalkPath> pt3{{4, 9}};
    std::vector<NodeId> pbar3{0, 3, 9};
    auto b3 = make_batch(7, pe3, pt3, pbar3);
    std::set<NodeId> expect{7, 3, 4, 5, 6, 9, 0};
    std::set<NodeId> got(b3.begin(), b3.end());
    CHECK(got == expect);
    CHECK(b3.size() == expect.size());
    CHECK(b3[0] == 7);
}
