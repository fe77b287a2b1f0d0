#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfcascade/cascade.hpp"
#include "rfcascade/engine.hpp"
#include "rfcascade/hermite.hpp"

namespace rfcascade {

/// A target filter bank: parameter configurations plus the derivative
/// operators wanted at each configuration.  For the spatial family only
/// (s, sigma) of each entry are read.
struct BankSpec {
    Family family = Family::spatial;
    std::vector<STParams> targets;
    std::vector<std::vector<DerivOp>> ops;   ///< per-target; may be empty

    void validate() const {
        if (targets.empty()) throw std::invalid_argument("BankSpec: no targets");
        if (!ops.empty() && ops.size() != targets.size())
            throw std::invalid_argument("BankSpec: ops list does not match targets");
        if (family == Family::st_iso)
            throw std::invalid_argument("BankSpec: use st_affine for spatio-temporal banks");
        for (const auto& t : targets) {
            t.validate();
            if ((family == Family::timecausal) != t.time_causal())
                throw std::invalid_argument("BankSpec: entry family mismatch");
        }
    }
};

/// Grid geometry the plan is costed against.
struct PlanGrid {
    std::array<double, 3> spacing = {1.0, 1.0, 1.0};   ///< dx, dy, dt (dt unused for spatial)
    std::uint64_t field_cells = 0;                     ///< output cells per convolution
};

/// One edge of the feasibility graph / plan.  from == -1 denotes the input
/// node; the increment of an input edge is the target's full kernel.
struct PlanEdge {
    int from = -1;
    int to = 0;
    CovMat2 delta_prod;
    double delta_tau = 0.0;     ///< non-causal families
    Vec2 delta_v = {0.0, 0.0};
    double mu = 0.0;            ///< time-causal non-input edges
    double est_cost = 0.0;      ///< kernel support cells x field cells
};

struct FeasibilityGraph {
    Family family = Family::spatial;
    int n_targets = 0;
    std::vector<PlanEdge> edges;   ///< all feasible edges, input edges included
};

struct CascadePlan {
    Family family = Family::spatial;
    std::vector<STParams> targets;
    std::vector<std::vector<DerivOp>> ops;
    std::vector<PlanEdge> edges;   ///< one chosen incoming edge per target
    double total_cost = 0.0;
};

enum class PlanStrategy { shortest_path, direct_only };

namespace detail {

inline std::uint64_t support_cells(Family family, const PlanEdge& e, const STParams& target,
                                   const PlanGrid& grid, const SampleOptions& opts) {
    const double dx = grid.spacing[0], dy = grid.spacing[1], dt = grid.spacing[2];
    if (family == Family::spatial) {
        const auto ext = kernel_extents(e.delta_prod, dx, dy, opts);
        return static_cast<std::uint64_t>(ext[0]) * ext[1];
    }
    if (e.from < 0) {   // full kernel from the input node
        const auto ext = kernel_extents(target, dx, dy, dt, opts);
        return static_cast<std::uint64_t>(ext[0]) * ext[1] * ext[2];
    }
    if (family == Family::timecausal) {
        TimeCausalIncrement inc;
        inc.mu = e.mu;
        inc.delta_prod = e.delta_prod;
        inc.v = e.delta_v;
        inc.feasible = true;
        const auto ext = kernel_extents(inc, dx, dy, dt, opts);
        return static_cast<std::uint64_t>(ext[0]) * ext[1] * ext[2];
    }
    STIncrement inc;
    inc.delta_tau = e.delta_tau;
    inc.delta_v = e.delta_v;
    inc.delta_prod = e.delta_prod;
    inc.feasible = true;
    const auto ext = kernel_extents(inc, dx, dy, dt, opts);
    return static_cast<std::uint64_t>(ext[0]) * ext[1] * ext[2];
}

/// Lexicographic order on the effective parameters, used for deterministic
/// tie-breaking.
inline bool param_less(const STParams& a, const STParams& b) {
    const CovMat2 pa = a.product(), pb = b.product();
    const auto ta = std::array{a.tau, pa.s11, pa.s12, pa.s22, a.v[0], a.v[1]};
    const auto tb = std::array{b.tau, pb.s11, pb.s12, pb.s22, b.v[0], b.v[1]};
    return ta < tb;
}

} // namespace detail

/// Build the feasibility graph of a bank: nodes are the input plus the
/// targets; a directed edge u -> w exists whenever the cascade from u to w is
/// feasible, weighted by the estimated multiply-accumulate cost of convolving
/// with the incremental kernel.  Smoothing-equivalent targets are linked only
/// from the lower index, which keeps the graph acyclic.
inline FeasibilityGraph build_feasibility_graph(const BankSpec& bank, const PlanGrid& grid,
                                                const SampleOptions& opts = {}) {
    bank.validate();
    if (grid.field_cells == 0) throw std::invalid_argument("PlanGrid: field_cells must be set");
    FeasibilityGraph g;
    g.family = bank.family;
    g.n_targets = static_cast<int>(bank.targets.size());

    auto push = [&](PlanEdge e, const STParams& target) {
        e.est_cost = static_cast<double>(
            detail::support_cells(bank.family, e, target, grid, opts) * grid.field_cells);
        g.edges.push_back(e);
    };

    for (int w = 0; w < g.n_targets; ++w) {
        const STParams& tw = bank.targets[w];
        // input edge: the full kernel
        PlanEdge direct;
        direct.from = -1;
        direct.to = w;
        direct.delta_prod = tw.product();
        direct.delta_tau = tw.tau;
        direct.delta_v = tw.v;
        push(direct, tw);

        for (int u = 0; u < g.n_targets; ++u) {
            if (u == w) continue;
            const STParams& tu = bank.targets[u];
            if (smoothing_equivalent(tu, tw) && u > w) continue;
            PlanEdge e;
            e.from = u;
            e.to = w;
            if (bank.family == Family::spatial) {
                const SpatialIncrement inc =
                    cascade_spatial({tu.s, tu.sigma}, {tw.s, tw.sigma});
                if (!inc.feasible) continue;
                e.delta_prod = inc.delta_prod;
            } else if (bank.family == Family::timecausal) {
                if (std::abs(*tu.c - *tw.c) > 1e-12) continue;
                const double c = *tu.c;
                if (std::abs(tu.tau - tw.tau / (c * c)) > 1e-12 * tw.tau) continue;
                if (std::abs(tu.v[0] - tw.v[0]) > 1e-12 ||
                    std::abs(tu.v[1] - tw.v[1]) > 1e-12) continue;
                const TimeCausalIncrement inc = cascade_timecausal(tu, tw);
                if (!inc.feasible) continue;
                e.delta_prod = inc.delta_prod;
                e.delta_v = inc.v;
                e.mu = inc.mu;
            } else {
                const STIncrement inc = cascade_st(tu, tw);
                if (!inc.feasible) continue;
                e.delta_prod = inc.delta_prod;
                e.delta_tau = inc.delta_tau;
                e.delta_v = inc.delta_v;
            }
            push(e, tw);
        }
    }
    return g;
}

/// Choose one incoming edge per target.  Every choice of feasible parents is
/// acyclic (feasibility is a partial order), so the minimum-cost arborescence
/// is obtained by giving each node its cheapest feasible parent; ties break
/// towards fewer hops from the input, then towards the lexicographically
/// smaller parent parameters.  direct_only is the star over input edges.
inline CascadePlan plan(const BankSpec& bank, const FeasibilityGraph& graph,
                        PlanStrategy strategy) {
    bank.validate();
    const int n = graph.n_targets;
    CascadePlan out;
    out.family = bank.family;
    out.targets = bank.targets;
    out.ops = bank.ops;

    std::vector<const PlanEdge*> chosen(static_cast<std::size_t>(n), nullptr);
    if (strategy == PlanStrategy::direct_only) {
        for (const PlanEdge& e : graph.edges)
            if (e.from < 0) chosen[static_cast<std::size_t>(e.to)] = &e;
    } else {
        // process nodes along a linear extension of the feasibility order so
        // parent depths are known when ties are broken; tau + trace(product)
        // is monotone along feasible edges
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const STParams& pa = bank.targets[static_cast<std::size_t>(a)];
            const STParams& pb = bank.targets[static_cast<std::size_t>(b)];
            const double ka = pa.tau + pa.product().trace();
            const double kb = pb.tau + pb.product().trace();
            if (ka != kb) return ka < kb;
            if (detail::param_less(pa, pb)) return true;
            if (detail::param_less(pb, pa)) return false;
            return a < b;
        });
        std::vector<int> depth(static_cast<std::size_t>(n), 0);
        for (int w : order) {
            const PlanEdge* best = nullptr;
            int best_depth = 0;
            auto better = [&](const PlanEdge& e, int d) {
                if (best == nullptr) return true;
                if (e.est_cost != best->est_cost) return e.est_cost < best->est_cost;
                if (d != best_depth) return d < best_depth;
                // equal cost and depth: both parents are targets (the single
                // input edge is alone at depth 1); smaller parameters win
                if (e.from < 0 || best->from < 0) return false;
                return detail::param_less(bank.targets[static_cast<std::size_t>(e.from)],
                                          bank.targets[static_cast<std::size_t>(best->from)]);
            };
            for (const PlanEdge& e : graph.edges) {
                if (e.to != w) continue;
                // only parents already placed in the tree are candidates; in
                // the cone order every feasible parent precedes w, and this
                // also breaks would-be two-cycles between targets that are
                // equal up to round-off
                if (e.from >= 0 && chosen[static_cast<std::size_t>(e.from)] == nullptr) continue;
                const int d = e.from < 0 ? 1 : depth[static_cast<std::size_t>(e.from)] + 1;
                if (better(e, d)) {
                    best = &e;
                    best_depth = d;
                }
            }
            if (best == nullptr)
                throw std::invalid_argument("plan: target unreachable from the input node");
            chosen[static_cast<std::size_t>(w)] = best;
            depth[static_cast<std::size_t>(w)] = best_depth;
        }
    }

    out.total_cost = 0.0;
    for (int w = 0; w < n; ++w) {
        const PlanEdge* e = chosen[static_cast<std::size_t>(w)];
        if (e == nullptr) throw std::invalid_argument("plan: target has no feasible edge");
        out.edges.push_back(*e);
        out.total_cost += e->est_cost;
    }
    return out;
}

/// Convenience: graph + plan in one call.
inline CascadePlan plan(const BankSpec& bank, const PlanGrid& grid, PlanStrategy strategy,
                        const SampleOptions& opts = {}) {
    return plan(bank, build_feasibility_graph(bank, grid, opts), strategy);
}

namespace detail {

template <int N>
inline SampledKernel<N> edge_kernel(Family family, const PlanEdge& e, const STParams& target,
                                    const std::array<double, N>& spacing,
                                    const SampleOptions& opts) {
    if constexpr (N == 2) {
        const CovMat2 prod = e.from < 0 ? target.product() : e.delta_prod;
        SpatialIncrement inc{prod, true};
        return sample(inc, spacing[0], spacing[1], opts);
    } else {
        if (e.from < 0) return sample(target, spacing[0], spacing[1], spacing[2], opts);
        if (family == Family::timecausal) {
            TimeCausalIncrement inc;
            inc.mu = e.mu;
            inc.delta_prod = e.delta_prod;
            inc.v = e.delta_v;
            inc.feasible = true;
            return sample(inc, spacing[0], spacing[1], spacing[2], opts);
        }
        STIncrement inc;
        inc.delta_tau = e.delta_tau;
        inc.delta_v = e.delta_v;
        inc.delta_prod = e.delta_prod;
        inc.feasible = true;
        return sample(inc, spacing[0], spacing[1], spacing[2], opts);
    }
}

} // namespace detail

/// Responses of every target, computed by walking the plan's edges; each
/// target's smoothed field is the parent's field convolved with the edge's
/// incremental kernel, and the per-target derivative operators are applied
/// at the end.
template <int N>
struct ExecutionResult {
    std::vector<std::vector<Grid<N>>> responses;   ///< per target, per operator component
    std::vector<Grid<N>> smoothed;                 ///< per target
    std::uint64_t macs = 0;                        ///< smoothing convolution MACs
};

template <int N>
inline ExecutionResult<N> execute(const CascadePlan& p, const Grid<N>& f,
                                  const SampleOptions& opts = {}, int threads = 1) {
    if constexpr (N == 2) {
        if (p.family != Family::spatial)
            throw std::invalid_argument("execute: spatio-temporal plan needs a volume");
    } else {
        if (p.family == Family::spatial)
            throw std::invalid_argument("execute: spatial plan needs an image");
    }
    const int n = static_cast<int>(p.targets.size());
    ExecutionResult<N> result;
    result.smoothed.resize(static_cast<std::size_t>(n));
    std::vector<bool> done(static_cast<std::size_t>(n), false);

    const std::uint64_t macs_before = mac_count();

    // walk edges until all targets are computed (parents first)
    bool progress = true;
    int remaining = n;
    while (remaining > 0 && progress) {
        progress = false;
        for (const PlanEdge& e : p.edges) {
            const std::size_t w = static_cast<std::size_t>(e.to);
            if (done[w]) continue;
            if (e.from >= 0 && !done[static_cast<std::size_t>(e.from)]) continue;
            const Grid<N>& src = e.from < 0 ? f : result.smoothed[static_cast<std::size_t>(e.from)];
            const auto kernel =
                detail::edge_kernel<N>(p.family, e, p.targets[w], f.spacing, opts);
            result.smoothed[w] = convolve(src, kernel, Boundary::zero_pad, threads);
            done[w] = true;
            --remaining;
            progress = true;
        }
    }
    if (remaining > 0) throw std::invalid_argument("execute: plan has unreachable targets");

    result.macs = mac_count() - macs_before;
    result.responses.resize(static_cast<std::size_t>(n));
    for (int w = 0; w < n; ++w) {
        const auto& ops = p.ops.empty() ? std::vector<DerivOp>{} : p.ops[static_cast<std::size_t>(w)];
        for (const DerivOp& op : ops) {
            auto fields = apply_deriv(result.smoothed[static_cast<std::size_t>(w)], op);
            for (auto& fld : fields)
                result.responses[static_cast<std::size_t>(w)].push_back(std::move(fld));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// plan serialization: node rows followed by edge rows, stable column order,
// doubles written with 17 significant digits

inline const char* plan_csv_header() {
    return "kind,id,from,to,s,p11,p12,p22,tau,v1,v2,c,dprod11,dprod12,dprod22,dtau,dv1,dv2,mu,est_cost";
}

namespace detail {

inline void append_g17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

inline void append_fields(std::string& out, const double* vals, int n) {
    for (int i = 0; i < n; ++i) {
        out += ',';
        append_g17(out, vals[i]);
    }
}

} // namespace detail

inline std::string plan_to_csv(const CascadePlan& p) {
    std::string out = plan_csv_header();
    out += '\n';
    out += "family,";
    out += family_name(p.family);
    out += '\n';
    for (std::size_t i = 0; i < p.targets.size(); ++i) {
        const STParams& t = p.targets[i];
        out += "node," + std::to_string(i) + ",,";
        const double vals[] = {t.s,    t.sigma.s11, t.sigma.s12, t.sigma.s22,
                               t.tau,  t.v[0],      t.v[1],      t.c.value_or(0.0)};
        detail::append_fields(out, vals, 8);
        out += ",,,,,,,,";   // edge columns empty
        out += '\n';
    }
    for (const PlanEdge& e : p.edges) {
        out += "edge,," + std::to_string(e.from) + ',' + std::to_string(e.to);
        out += ",,,,,,,,";   // node columns empty
        const double vals[] = {e.delta_prod.s11, e.delta_prod.s12, e.delta_prod.s22,
                               e.delta_tau,      e.delta_v[0],     e.delta_v[1],
                               e.mu,             e.est_cost};
        detail::append_fields(out, vals, 8);
        out += '\n';
    }
    out += "total,,,,,,,,,,,,,,,,,,,";
    detail::append_g17(out, p.total_cost);
    out += '\n';
    return out;
}

inline CascadePlan plan_from_csv(const std::string& text) {
    CascadePlan p;
    std::size_t pos = 0;
    auto next_line = [&](std::string& line) {
        if (pos >= text.size()) return false;
        const std::size_t e = text.find('\n', pos);
        line = text.substr(pos, e == std::string::npos ? std::string::npos : e - pos);
        pos = e == std::string::npos ? text.size() : e + 1;
        return true;
    };
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos
                                                                          : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return cells;
    };
    auto num = [](const std::string& s) { return s.empty() ? 0.0 : std::stod(s); };

    std::string line;
    bool have_header = false;
    while (next_line(line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (!have_header) {
            if (cells.empty() || cells[0] != "kind")
                throw std::invalid_argument("plan_from_csv: missing header");
            have_header = true;
            continue;
        }
        if (cells[0] == "family") {
            const std::string& f = cells.at(1);
            if (f == "spatial") p.family = Family::spatial;
            else if (f == "st_affine") p.family = Family::st_affine;
            else if (f == "timecausal") p.family = Family::timecausal;
            else throw std::invalid_argument("plan_from_csv: unknown family " + f);
        } else if (cells[0] == "node") {
            STParams t;
            t.s = num(cells.at(4));
            t.sigma = {num(cells.at(5)), num(cells.at(6)), num(cells.at(7))};
            t.tau = num(cells.at(8));
            t.v = {num(cells.at(9)), num(cells.at(10))};
            const double c = num(cells.at(11));
            if (c > 0.0) t.c = c;
            p.targets.push_back(t);
        } else if (cells[0] == "edge") {
            PlanEdge e;
            e.from = static_cast<int>(num(cells.at(2)));
            e.to = static_cast<int>(num(cells.at(3)));
            e.delta_prod = {num(cells.at(12)), num(cells.at(13)), num(cells.at(14))};
            e.delta_tau = num(cells.at(15));
            e.delta_v = {num(cells.at(16)), num(cells.at(17))};
            e.mu = num(cells.at(18));
            e.est_cost = num(cells.at(19));
            p.edges.push_back(e);
        } else if (cells[0] == "total") {
            p.total_cost = num(cells.at(19));
        } else {
            throw std::invalid_argument("plan_from_csv: unknown row kind " + cells[0]);
        }
    }
    if (!have_header) throw std::invalid_argument("plan_from_csv: empty plan");
    return p;
}

} // namespace rfcascade
