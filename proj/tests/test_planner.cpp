#include <gtest/gtest.h>

#include <random>

#include "rfcascade/planner.hpp"
#include "testutil.hpp"

using namespace rfcascade;

namespace {

BankSpec spatial_bank(const std::vector<CovMat2>& products) {
    BankSpec bank;
    bank.family = Family::spatial;
    for (const CovMat2& p : products) {
        STParams t;
        t.s = 1.0;
        t.sigma = p;
        bank.targets.push_back(t);
    }
    return bank;
}

// exhaustive minimum over all parent assignments; every assignment is
// acyclic because feasibility is a partial order
double brute_force_min_cost(const FeasibilityGraph& g) {
    const int n = g.n_targets;
    std::vector<std::vector<const PlanEdge*>> incoming(static_cast<std::size_t>(n));
    for (const PlanEdge& e : g.edges) incoming[static_cast<std::size_t>(e.to)].push_back(&e);

    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(static_cast<std::size_t>(n), 0);
    while (true) {
        double cost = 0.0;
        for (int w = 0; w < n; ++w)
            cost += incoming[static_cast<std::size_t>(w)][static_cast<std::size_t>(
                            pick[static_cast<std::size_t>(w)])]
                        ->est_cost;
        best = std::min(best, cost);
        int axis = 0;
        while (axis < n) {
            if (++pick[static_cast<std::size_t>(axis)] <
                static_cast<int>(incoming[static_cast<std::size_t>(axis)].size()))
                break;
            pick[static_cast<std::size_t>(axis)] = 0;
            ++axis;
        }
        if (axis == n) break;
    }
    return best;
}

} // namespace

TEST(FeasibilityGraph, ConeAsymmetry) {
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells = 128 * 128;

    const BankSpec bank = spatial_bank({CovMat2::identity(), {2.0, 0.0, 2.0}});
    const FeasibilityGraph g = build_feasibility_graph(bank, grid);

    bool fwd = false, back = false;
    for (const PlanEdge& e : g.edges) {
        if (e.from == 0 && e.to == 1) fwd = true;
        if (e.from == 1 && e.to == 0) back = true;
    }
    EXPECT_TRUE(fwd);
    EXPECT_FALSE(back);

    // incomparable products: no edges either way, both fed from the input
    const BankSpec inc = spatial_bank({{2.0, 0.0, 1.0}, {1.0, 0.0, 2.0}});
    const FeasibilityGraph g2 = build_feasibility_graph(inc, grid);
    for (const PlanEdge& e : g2.edges) EXPECT_EQ(e.from, -1);
    EXPECT_EQ(g2.edges.size(), 2u);

    // increment kernels are cheaper than direct kernels for nested targets
    double direct_cost = 0.0, inc_cost = 0.0;
    for (const PlanEdge& e : g.edges) {
        if (e.to == 1 && e.from == -1) direct_cost = e.est_cost;
        if (e.to == 1 && e.from == 0) inc_cost = e.est_cost;
    }
    EXPECT_LT(inc_cost, direct_cost);
}

TEST(Plan, SingleAndIncomparable) {
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells = 64 * 64;

    const BankSpec one = spatial_bank({CovMat2::identity()});
    const CascadePlan p1 = plan(one, grid, PlanStrategy::shortest_path);
    const CascadePlan p1d = plan(one, grid, PlanStrategy::direct_only);
    EXPECT_EQ(p1.edges.size(), 1u);
    EXPECT_EQ(p1.total_cost, p1d.total_cost);

    const BankSpec incomparable =
        spatial_bank({{2.0, 0.0, 1.0}, {1.0, 0.0, 2.0}, {2.4, 0.9, 1.1}});
    const CascadePlan p2 = plan(incomparable, grid, PlanStrategy::shortest_path);
    for (const PlanEdge& e : p2.edges) EXPECT_EQ(e.from, -1);
}

TEST(Plan, NestedChainBeatsDirect) {
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells = 128 * 128;

    const BankSpec chain =
        spatial_bank({CovMat2::identity(), {2.0, 0.0, 2.0}, {4.0, 0.0, 4.0}});
    const FeasibilityGraph g = build_feasibility_graph(chain, grid);
    const CascadePlan best = plan(chain, g, PlanStrategy::shortest_path);
    const CascadePlan star = plan(chain, g, PlanStrategy::direct_only);

    EXPECT_LT(best.total_cost, star.total_cost);
    EXPECT_EQ(best.total_cost, brute_force_min_cost(g));

    // chain structure: each target feeds from its predecessor
    EXPECT_EQ(best.edges[1].from, 0);
    EXPECT_EQ(best.edges[2].from, 1);
}

TEST(Plan, BruteForceOptimalityRandomBanks) {
    std::mt19937_64 rng(91);
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells = 64 * 64;
    std::uniform_int_distribution<int> nd(1, 4);

    for (int trial = 0; trial < 50; ++trial) {
        const int n = nd(rng);
        std::vector<CovMat2> prods;
        for (int i = 0; i < n; ++i) {
            CovMat2 m = rfctest::random_cov(rng, 0.5, 6.0);
            prods.push_back(m);
        }
        const BankSpec bank = spatial_bank(prods);
        const FeasibilityGraph g = build_feasibility_graph(bank, grid);
        const CascadePlan best = plan(bank, g, PlanStrategy::shortest_path);
        EXPECT_DOUBLE_EQ(best.total_cost, brute_force_min_cost(g)) << "trial " << trial;
        EXPECT_LE(best.total_cost, plan(bank, g, PlanStrategy::direct_only).total_cost);
    }
}

TEST(Plan, CostMonotonicityForOriginalTargets) {
    // adding a feasible intermediate node never increases the cost
    // attributable to the original targets
    std::mt19937_64 rng(92);
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells = 64 * 64;

    for (int trial = 0; trial < 30; ++trial) {
        const CovMat2 a = rfctest::random_cov(rng, 0.5, 1.5);
        const CovMat2 b = a + rfctest::random_cov(rng, 0.5, 2.0);
        const BankSpec two = spatial_bank({a, b});
        const CascadePlan before = plan(two, grid, PlanStrategy::shortest_path);

        // midpoint on the segment between the two products
        const CovMat2 mid = (a + b) * 0.5;
        const BankSpec three = spatial_bank({a, mid, b});
        const CascadePlan after = plan(three, grid, PlanStrategy::shortest_path);

        double before_orig = before.total_cost;
        double after_orig = 0.0;
        for (const PlanEdge& e : after.edges)
            if (e.to == 0 || e.to == 2) after_orig += e.est_cost;
        EXPECT_LE(after_orig, before_orig + 1e-9) << "trial " << trial;
    }
}

TEST(Plan, StBankWithVelocities) {
    PlanGrid grid;
    grid.spacing = {1.0, 1.0, 1.0};
    grid.field_cells = 64 * 64 * 64;

    BankSpec bank;
    bank.family = Family::st_affine;
    STParams a;
    a.s = 4.0;
    a.tau = 4.0;
    STParams b;
    b.s = 8.0;
    b.tau = 8.0;
    b.v = {0.25, 0.0};
    bank.targets = {a, b};
    const FeasibilityGraph g = build_feasibility_graph(bank, grid);
    const CascadePlan p = plan(bank, g, PlanStrategy::shortest_path);
    EXPECT_EQ(p.edges.size(), 2u);
    EXPECT_DOUBLE_EQ(p.total_cost, brute_force_min_cost(g));
}

TEST(Execute, PlanMatchesDirectResponses) {
    const Image f = rfctest::random_smooth_image(128, 128, 0.5, 0.5, 31415);
    SampleOptions opts;
    opts.renormalize = true;
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells =
        static_cast<std::uint64_t>(f.dims[0]) * static_cast<std::uint64_t>(f.dims[1]);

    BankSpec bank = spatial_bank({CovMat2::identity(), {2.0, 0.3, 1.8}, {3.5, 0.5, 3.0}});
    bank.ops.assign(3, {DerivOp::directional(1, 0.0)});

    const CascadePlan best = plan(bank, grid, PlanStrategy::shortest_path, opts);
    const auto run = execute<2>(best, f, opts);
    ASSERT_EQ(run.responses.size(), 3u);

    // boundary contamination accumulates along the chain: sum of the kernel
    // radii plus the stencil radius
    const int margin = 38;
    for (std::size_t w = 0; w < bank.targets.size(); ++w) {
        const auto direct = rf_response(
            f, SpatialParams{bank.targets[w].s, bank.targets[w].sigma},
            DerivOp::directional(1, 0.0), opts);
        const CompareResult c = compare(run.responses[w][0], direct[0], {margin, margin});
        EXPECT_LE(c.rel_l2, 1e-3) << "target " << w;
    }

    // measured MACs equal the plan estimate (zero-padded convolutions
    // perform exactly support x field multiply-accumulates)
    EXPECT_EQ(static_cast<double>(run.macs), best.total_cost);

    // constant input: odd-order responses vanish on the interior
    Image constant = Image::zeros({96, 96}, {0.5, 0.5});
    for (auto& v : constant.values) v = 1.0;
    const auto flat = execute<2>(best, constant, opts);
    for (const auto& per_target : flat.responses)
        for (const auto& field : per_target) {
            double mx = 0.0;
            for (int iy = 40; iy < 56; ++iy)
                for (int ix = 40; ix < 56; ++ix) mx = std::max(mx, std::abs(field.at(ix, iy)));
            EXPECT_LE(mx, 1e-12);
        }
}

TEST(Plan, EdgesComposeToTargets) {
    // composing each plan path's increments onto the input reproduces every
    // target's effective parameters exactly
    std::mt19937_64 rng(93);
    PlanGrid grid;
    grid.spacing = {1.0, 1.0, 1.0};
    grid.field_cells = 64 * 64 * 64;

    BankSpec bank;
    bank.family = Family::st_affine;
    std::uniform_real_distribution<double> taud(1.0, 2.0), vd(-0.3, 0.3);
    STParams a;
    a.s = 1.0;
    a.sigma = rfctest::random_cov(rng, 2.0, 3.0);
    a.tau = taud(rng);
    a.v = {vd(rng), vd(rng)};
    STParams b = a;
    b.sigma = a.sigma + rfctest::random_cov(rng, 1.0, 2.0);
    b.tau = a.tau + taud(rng);
    STParams c = b;
    c.sigma = b.sigma + rfctest::random_cov(rng, 1.0, 2.0);
    c.tau = b.tau + taud(rng);
    bank.targets = {a, b, c};

    const CascadePlan p = plan(bank, grid, PlanStrategy::shortest_path);
    for (std::size_t w = 0; w < bank.targets.size(); ++w) {
        // walk up to the input, collecting edges, then compose downward
        std::vector<const PlanEdge*> path;
        int node = static_cast<int>(w);
        while (node >= 0) {
            const PlanEdge& e = p.edges[static_cast<std::size_t>(node)];
            path.push_back(&e);
            node = e.from;
        }
        STParams acc;   // input node: composition starts from the first edge
        bool first = true;
        for (auto it = path.rbegin(); it != path.rend(); ++it) {
            const PlanEdge& e = **it;
            STIncrement inc;
            inc.delta_prod = e.delta_prod;
            inc.delta_tau = e.delta_tau;
            inc.delta_v = e.delta_v;
            inc.feasible = true;
            if (first) {
                acc.s = 0.5 * e.delta_prod.trace();
                acc.sigma = e.delta_prod * (1.0 / acc.s);
                acc.tau = e.delta_tau;
                acc.v = e.delta_v;
                first = false;
            } else {
                acc = compose_check(inc, acc);
            }
        }
        const STParams& target = bank.targets[w];
        const double scale = target.product().trace() + target.tau;
        EXPECT_NEAR(acc.product().s11, target.product().s11, 1e-12 * scale);
        EXPECT_NEAR(acc.product().s12, target.product().s12, 1e-12 * scale);
        EXPECT_NEAR(acc.product().s22, target.product().s22, 1e-12 * scale);
        EXPECT_NEAR(acc.tau, target.tau, 1e-12 * scale);
        EXPECT_NEAR(acc.tau * acc.v[0], target.tau * target.v[0], 1e-12 * scale);
        EXPECT_NEAR(acc.tau * acc.v[1], target.tau * target.v[1], 1e-12 * scale);
    }
}

TEST(Plan, Deterministic) {
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells = 64 * 64;
    // two targets with identical costs force the tie-breaking path
    BankSpec bank = spatial_bank({CovMat2::identity(),
                                  {2.0, 0.0, 2.0},
                                  {2.0, 0.0, 2.0},
                                  {4.0, 0.0, 4.0}});
    const std::string a = plan_to_csv(plan(bank, grid, PlanStrategy::shortest_path));
    const std::string b = plan_to_csv(plan(bank, grid, PlanStrategy::shortest_path));
    EXPECT_EQ(a, b);
}

TEST(PlanCsv, RoundTrip) {
    PlanGrid grid;
    grid.spacing = {0.5, 0.5, 1.0};
    grid.field_cells = 64 * 64;
    BankSpec bank = spatial_bank({CovMat2::identity(), {2.0, 0.25, 2.0}});
    const CascadePlan p = plan(bank, grid, PlanStrategy::shortest_path);

    const std::string csv = plan_to_csv(p);
    const CascadePlan q = plan_from_csv(csv);
    EXPECT_EQ(q.family, p.family);
    ASSERT_EQ(q.targets.size(), p.targets.size());
    ASSERT_EQ(q.edges.size(), p.edges.size());
    EXPECT_EQ(q.total_cost, p.total_cost);
    for (std::size_t i = 0; i < p.edges.size(); ++i) {
        EXPECT_EQ(q.edges[i].from, p.edges[i].from);
        EXPECT_EQ(q.edges[i].to, p.edges[i].to);
        EXPECT_EQ(q.edges[i].delta_prod.s11, p.edges[i].delta_prod.s11);
        EXPECT_EQ(q.edges[i].est_cost, p.edges[i].est_cost);
    }
    EXPECT_THROW(plan_from_csv("garbage"), std::invalid_argument);
}
