#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rfcascade/engine.hpp"
#include "rfcascade/hermite.hpp"

namespace rfcascade {

/// An infinitesimal relationship: the derivative of the smoothed
/// representation with respect to one filter parameter equals a linear
/// combination of coordinate derivatives, with coefficients depending on the
/// remaining parameters.  Scale-type parameters evolve only forward
/// (parabolic); the mixed covariance element and the velocities evolve in
/// both directions (hyperbolic).
struct GeneratorIdentity {
    Family family;
    DerivIndex lhs;
    enum class Directionality { forward_only, bidirectional } directionality;
    std::vector<std::pair<DerivIndex, std::function<double(const STParams&)>>> rhs;
};

/// The identity tables per family.
///
/// spatial    : d_s = 1/2 (S11 d_x1x1 + 2 S12 d_x1x2 + S22 d_x2x2),
///              d_S11 = (s/2) d_x1x1, d_S12 = s d_x1x2, d_S22 = (s/2) d_x2x2
/// st_iso     : d_s = 1/2 (d_x1x1 + d_x2x2), d_tau = 1/2 d_tbartbar,
///              d_v1 = tau d_x1tbar, d_v2 = tau d_x2tbar
/// st_affine  : the union of both sets (with the full Sigma coefficients)
/// timecausal : the four spatial-parameter identities only
///
/// The d_S12 coefficient is s, not s/2: the off-diagonal element appears
/// twice in the symmetric matrix, so perturbing the stored element moves
/// both entries.  This matches the derivative tables and the finite
/// differences on the three-element storage.
inline std::vector<GeneratorIdentity> list_identities(Family family) {
    using D = GeneratorIdentity::Directionality;
    auto cst = [](double a) {
        return [a](const STParams&) { return a; };
    };
    std::vector<GeneratorIdentity> out;

    auto spatial_set = [&](Family fam) {
        out.push_back({fam, DerivIndex::p_s, D::forward_only,
                       {{DerivIndex::d_x1x1, [](const STParams& p) { return 0.5 * p.sigma.s11; }},
                        {DerivIndex::d_x1x2, [](const STParams& p) { return p.sigma.s12; }},
                        {DerivIndex::d_x2x2, [](const STParams& p) { return 0.5 * p.sigma.s22; }}}});
        out.push_back({fam, DerivIndex::p_s11, D::forward_only,
                       {{DerivIndex::d_x1x1, [](const STParams& p) { return 0.5 * p.s; }}}});
        out.push_back({fam, DerivIndex::p_s12, D::bidirectional,
                       {{DerivIndex::d_x1x2, [](const STParams& p) { return p.s; }}}});
        out.push_back({fam, DerivIndex::p_s22, D::forward_only,
                       {{DerivIndex::d_x2x2, [](const STParams& p) { return 0.5 * p.s; }}}});
    };
    auto temporal_set = [&](Family fam) {
        out.push_back({fam, DerivIndex::p_tau, D::forward_only,
                       {{DerivIndex::d_tbartbar, cst(0.5)}}});
        out.push_back({fam, DerivIndex::p_v1, D::bidirectional,
                       {{DerivIndex::d_x1tbar, [](const STParams& p) { return p.tau; }}}});
        out.push_back({fam, DerivIndex::p_v2, D::bidirectional,
                       {{DerivIndex::d_x2tbar, [](const STParams& p) { return p.tau; }}}});
    };

    switch (family) {
        case Family::spatial:
            spatial_set(family);
            break;
        case Family::st_iso:
            out.push_back({family, DerivIndex::p_s, D::forward_only,
                           {{DerivIndex::d_x1x1, cst(0.5)}, {DerivIndex::d_x2x2, cst(0.5)}}});
            temporal_set(family);
            break;
        case Family::st_affine:
            spatial_set(family);
            temporal_set(family);
            break;
        case Family::timecausal:
            spatial_set(family);
            break;
    }
    return out;
}

/// Evaluate the identity's right-hand side at the ratio level (exact
/// algebra, no discretization).
inline double rhs_ratio(const GeneratorIdentity& id, const Vec2& x, double t, const STParams& p) {
    double acc = 0.0;
    for (const auto& [idx, coeff] : id.rhs) {
        double r;
        switch (id.family) {
            case Family::spatial: r = ratio_spatial(idx, x, {p.s, p.sigma}); break;
            case Family::st_iso: r = ratio_st_iso(idx, x, t, p); break;
            case Family::st_affine: r = ratio_st_affine(idx, x, t, p); break;
            case Family::timecausal: r = ratio_timecausal(idx, x, t, p); break;
            default: throw std::invalid_argument("rhs_ratio: unknown family");
        }
        acc += coeff(p) * r;
    }
    return acc;
}

/// Evaluate the identity's left-hand side at the ratio level.
inline double lhs_ratio(const GeneratorIdentity& id, const Vec2& x, double t, const STParams& p) {
    switch (id.family) {
        case Family::spatial: return ratio_spatial(id.lhs, x, {p.s, p.sigma});
        case Family::st_iso: return ratio_st_iso(id.lhs, x, t, p);
        case Family::st_affine: return ratio_st_affine(id.lhs, x, t, p);
        case Family::timecausal: return ratio_timecausal(id.lhs, x, t, p);
    }
    throw std::invalid_argument("lhs_ratio: unknown family");
}

namespace detail {

inline Stencil3 index_stencil(DerivIndex idx, const Vec2& v, double dx, double dy, double dt,
                              int accuracy) {
    switch (idx) {
        case DerivIndex::d_x1: return axis_stencil(0, 1, dx, accuracy);
        case DerivIndex::d_x2: return axis_stencil(1, 1, dy, accuracy);
        case DerivIndex::d_t: return axis_stencil(2, 1, dt, accuracy);
        case DerivIndex::d_x1x1: return axis_stencil(0, 2, dx, accuracy);
        case DerivIndex::d_x2x2: return axis_stencil(1, 2, dy, accuracy);
        case DerivIndex::d_x1x2:
            return axis_stencil(0, 1, dx, accuracy).compose(axis_stencil(1, 1, dy, accuracy));
        case DerivIndex::d_tt: return axis_stencil(2, 2, dt, accuracy);
        case DerivIndex::d_x1t:
            return axis_stencil(0, 1, dx, accuracy).compose(axis_stencil(2, 1, dt, accuracy));
        case DerivIndex::d_x2t:
            return axis_stencil(1, 1, dy, accuracy).compose(axis_stencil(2, 1, dt, accuracy));
        case DerivIndex::d_tbar: return velocity_stencil(1, v, dx, dy, dt, accuracy);
        case DerivIndex::d_tbartbar: return velocity_stencil(2, v, dx, dy, dt, accuracy);
        case DerivIndex::d_x1tbar:
            return axis_stencil(0, 1, dx, accuracy)
                .compose(velocity_stencil(1, v, dx, dy, dt, accuracy));
        case DerivIndex::d_x2tbar:
            return axis_stencil(1, 1, dy, accuracy)
                .compose(velocity_stencil(1, v, dx, dy, dt, accuracy));
        default:
            throw std::invalid_argument("index_stencil: not a coordinate-derivative index");
    }
}

} // namespace detail

/// Discretize the identity's right-hand side on a sampled field by central
/// differences (fourth-order accurate by default; the velocity-adapted
/// temporal direction expands as d_t + v1 d_x1 + v2 d_x2).  Border cells the
/// stencil cannot reach are zero.
template <int N>
inline Grid<N> apply_rhs(const GeneratorIdentity& id, const Grid<N>& field, const STParams& p,
                         int accuracy = 4) {
    Grid<N> out = Grid<N>::zeros(field.dims, field.spacing);
    out.offset = field.offset;
    const double dt = (N == 3) ? field.spacing[2] : 1.0;
    for (const auto& [idx, coeff] : id.rhs) {
        const Stencil3 st =
            detail::index_stencil(idx, p.v, field.spacing[0], field.spacing[1], dt, accuracy);
        if (N == 2 && st.radius[2] != 0)
            throw std::invalid_argument("apply_rhs: temporal stencil on a 2-D field");
        for (int a = 0; a < N; ++a)
            if (field.dims[a] <= 2 * st.radius[a])
                throw std::invalid_argument("apply_rhs: insufficient margin for the stencil");
        const Grid<N> term = detail::apply_stencil(field, st);
        const double cf = coeff(p);
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += cf * term.values[i];
    }
    return out;
}

/// One verification outcome; serializable as a CSV row.
struct IdentityReport {
    Family family{};
    DerivIndex lhs{};
    std::string params;
    double max_rel_residual = 0.0;
    bool pass = false;

    std::string csv_row() const {
        std::ostringstream os;
        os << family_name(family) << ',' << deriv_index_name(lhs) << ',' << '"' << params << '"'
           << ',' << max_rel_residual << ',' << (pass ? "pass" : "fail");
        return os.str();
    }
};

inline std::string describe_params(const STParams& p) {
    std::ostringstream os;
    os << "s=" << p.s << " sigma=[" << p.sigma.s11 << ' ' << p.sigma.s12 << ' ' << p.sigma.s22
       << "] tau=" << p.tau << " v=(" << p.v[0] << ' ' << p.v[1] << ')';
    if (p.c) os << " c=" << *p.c;
    return os.str();
}

namespace detail {

template <int N>
struct Margins {
    std::array<int, N> lo{}, hi{};
};

inline double param_step(DerivIndex lhs, const STParams& p) {
    switch (lhs) {
        case DerivIndex::p_s: return 1e-3 * p.s;
        case DerivIndex::p_tau: return 1e-3 * p.tau;
        case DerivIndex::p_s11:
        case DerivIndex::p_s12:
        case DerivIndex::p_s22: return 1e-3 * 0.5 * p.sigma.trace();
        case DerivIndex::p_v1:
        case DerivIndex::p_v2:
            return 1e-3 * std::max({1.0, std::abs(p.v[0]), std::abs(p.v[1])});
        default: throw std::invalid_argument("param_step: not a parameter tag");
    }
}

inline STParams stepped(const STParams& p, DerivIndex lhs, double h) {
    STParams q = p;
    switch (lhs) {
        case DerivIndex::p_s: q.s += h; break;
        case DerivIndex::p_tau: q.tau += h; break;
        case DerivIndex::p_s11: q.sigma.s11 += h; break;
        case DerivIndex::p_s12: q.sigma.s12 += h; break;
        case DerivIndex::p_s22: q.sigma.s22 += h; break;
        case DerivIndex::p_v1: q.v[0] += h; break;
        case DerivIndex::p_v2: q.v[1] += h; break;
        default: throw std::invalid_argument("stepped: not a parameter tag");
    }
    return q;
}

template <int N>
inline Grid<N> smooth(const Grid<N>& f, const STParams& p, Family family,
                      const SampleOptions& opts, int threads) {
    if constexpr (N == 2) {
        (void)family;
        return convolve(f, sample(SpatialParams{p.s, p.sigma}, f.spacing[0], f.spacing[1], opts),
                        Boundary::zero_pad, threads);
    } else {
        return convolve(f, sample(p, f.spacing[0], f.spacing[1], f.spacing[2], opts),
                        Boundary::zero_pad, threads);
    }
}

/// Zero-padded smoothing contaminates an asymmetric band: the low side by the
/// kernel's forward reach, the high side by its backward reach (time-causal
/// kernels only look into the past, so their high-side band is empty).
template <int N>
inline Margins<N> smoothing_margin(const STParams& p, const Grid<N>& f,
                                   const SampleOptions& opts, int stencil_radius) {
    Margins<N> m;
    if constexpr (N == 2) {
        const Kernel2 k = sample(SpatialParams{p.s, p.sigma}, f.spacing[0], f.spacing[1], opts);
        for (int a = 0; a < 2; ++a) {
            m.lo[a] = k.dims[a] - 1 - k.origin[a] + stencil_radius;
            m.hi[a] = k.origin[a] + stencil_radius;
        }
    } else {
        const Kernel3 k = sample(p, f.spacing[0], f.spacing[1], f.spacing[2], opts);
        for (int a = 0; a < 3; ++a) {
            m.lo[a] = k.dims[a] - 1 - k.origin[a] + stencil_radius;
            m.hi[a] = k.origin[a] + stencil_radius;
        }
    }
    return m;
}

} // namespace detail

/// Verify an identity at the signal level: the left-hand side is a Richardson
/// central difference of the smoothed field across a parameter step (step
/// 1e-3 of the parameter's natural scale), the right-hand side is apply_rhs
/// on the base smoothing, and the two are compared on the interior left
/// untouched by boundary effects.
///
/// The smoothings use a truncation of at least 6.5 standard deviations:
/// support extents are quantized to whole cells, so a parameter step can grow
/// the sampled support by one ring of cells, and the ring values must sit far
/// below the finite-difference resolution.
template <int N>
inline IdentityReport verify_identity(const GeneratorIdentity& id, const STParams& p,
                                      const Grid<N>& f, double tolerance = 1e-3,
                                      const SampleOptions& user_opts = {}, int threads = 1) {
    static_assert(N == 2 || N == 3);
    if constexpr (N == 2) {
        if (id.family != Family::spatial)
            throw std::invalid_argument("verify_identity: spatio-temporal identity needs a volume");
    }
    p.validate();

    SampleOptions opts = user_opts;
    opts.trunc = std::max(opts.trunc, 6.5);

    const Grid<N> base = detail::smooth(f, p, id.family, opts, threads);
    Grid<N> rhs = apply_rhs(id, base, p, 4);

    const double h = detail::param_step(id.lhs, p);
    auto central = [&](double step) {
        const Grid<N> hi = detail::smooth(f, detail::stepped(p, id.lhs, step), id.family, opts, threads);
        const Grid<N> lo = detail::smooth(f, detail::stepped(p, id.lhs, -step), id.family, opts, threads);
        Grid<N> d = Grid<N>::zeros(f.dims, f.spacing);
        for (std::size_t i = 0; i < d.values.size(); ++i)
            d.values[i] = (hi.values[i] - lo.values[i]) / (2.0 * step);
        return d;
    };
    const Grid<N> d_h = central(h);
    const Grid<N> d_h2 = central(0.5 * h);
    Grid<N> lhs = Grid<N>::zeros(f.dims, f.spacing);
    for (std::size_t i = 0; i < lhs.values.size(); ++i)
        lhs.values[i] = (4.0 * d_h2.values[i] - d_h.values[i]) / 3.0;

    // widest stencil among the rhs terms
    int stencil_radius = 0;
    const double dt = (N == 3) ? f.spacing[2] : 1.0;
    for (const auto& [idx, coeff] : id.rhs) {
        const Stencil3 st = detail::index_stencil(idx, p.v, f.spacing[0], f.spacing[1], dt, 4);
        for (int a = 0; a < 3; ++a) stencil_radius = std::max(stencil_radius, st.radius[a]);
    }
    const detail::Margins<N> margin =
        detail::smoothing_margin(detail::stepped(p, id.lhs, h), f, opts, stencil_radius);
    for (int a = 0; a < N; ++a)
        if (margin.lo[a] + margin.hi[a] >= f.dims[a])
            throw std::invalid_argument("verify_identity: field too small for the margins");

    double diff_max = 0.0, scale = 0.0;
    auto visit = [&](std::size_t i) {
        diff_max = std::max(diff_max, std::abs(lhs.values[i] - rhs.values[i]));
        scale = std::max({scale, std::abs(lhs.values[i]), std::abs(rhs.values[i])});
    };
    if constexpr (N == 2) {
        for (int iy = margin.lo[1]; iy < f.dims[1] - margin.hi[1]; ++iy)
            for (int ix = margin.lo[0]; ix < f.dims[0] - margin.hi[0]; ++ix)
                visit(f.index(ix, iy));
    } else {
        for (int it = margin.lo[2]; it < f.dims[2] - margin.hi[2]; ++it)
            for (int iy = margin.lo[1]; iy < f.dims[1] - margin.hi[1]; ++iy)
                for (int ix = margin.lo[0]; ix < f.dims[0] - margin.hi[0]; ++ix)
                    visit(f.index(ix, iy, it));
    }

    // near-constant signals leave both sides at round-off; normalize against
    // the natural magnitude of a parameter derivative of the base field so
    // the residual does not become 0/0
    double base_max = 0.0;
    for (const double v : base.values) base_max = std::max(base_max, std::abs(v));
    const double natural = h * 1e3;
    const double scale_floor = 1e-3 * base_max / natural;

    IdentityReport rep;
    rep.family = id.family;
    rep.lhs = id.lhs;
    rep.params = describe_params(p);
    rep.max_rel_residual = diff_max / std::max(scale, scale_floor);
    rep.pass = rep.max_rel_residual <= tolerance;
    return rep;
}

} // namespace rfcascade
