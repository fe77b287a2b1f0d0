#pragma once

#include <cmath>
#include <stdexcept>

#include "rfcascade/param_algebra.hpp"

namespace rfcascade {

/// Incremental kernel solving L(.; s2, Sigma2) = g(.; ds, dSigma) * L(.; s1, Sigma1).
/// Only the product ds * dSigma is determined; callers needing a split use
/// the ds = trace/2 convention.
struct SpatialIncrement {
    CovMat2 delta_prod;   ///< ds * dSigma = s2 Sigma2 - s1 Sigma1
    bool feasible = false;
};

/// Incremental kernel parameters between two non-causal spatio-temporal
/// settings.  degenerate_tau marks the tau_i = tau_j branch with unequal
/// tau*v products, where the closed forms blow up and no increment exists.
struct STIncrement {
    double delta_tau = 0.0;
    Vec2 delta_v = {0.0, 0.0};
    CovMat2 delta_prod;
    bool feasible = false;
    bool degenerate_tau = false;
};

/// Incremental kernel between adjacent time-causal temporal scales
/// tau_i = tau_j / c^2 with shared velocity: a truncated exponential with
/// time constant mu = sqrt(c^2-1) sqrt(tau_i) times an affine Gaussian.
struct TimeCausalIncrement {
    double mu = 0.0;
    CovMat2 delta_prod;
    Vec2 v = {0.0, 0.0};
    bool feasible = false;
};

/// Spatial cascade: delta product = s2 Sigma2 - s1 Sigma1, feasible iff the
/// difference lies in the closed PSD cone.  Infeasibility is data, not an
/// error; planners need the infeasible edges too.
inline SpatialIncrement cascade_spatial(const SpatialParams& p1, const SpatialParams& p2) {
    p1.validate();
    p2.validate();
    SpatialIncrement inc;
    inc.delta_prod = p2.product() - p1.product();
    inc.feasible = psd_check(inc.delta_prod);
    return inc;
}

/// Non-causal spatio-temporal cascade from parameters (s_i, Sigma_i, tau_i, v_i)
/// to (s_j, Sigma_j, tau_j, v_j):
///   dtau  = tau_j - tau_i
///   dv    = (tau_j v_j - tau_i v_i) / (tau_j - tau_i)
///   ds dSigma_ab = Sigma_{j,ab} s_j - Sigma_{i,ab} s_i
///                  + tau_i tau_j (v_{i,a}-v_{j,a})(v_{i,b}-v_{j,b}) / (tau_i - tau_j)
/// feasible iff dtau >= 0 and ds dSigma is PSD.  The tau_i = tau_j limit is
/// taken explicitly: it requires equal tau*v products, and then the velocity
/// of the (temporally delta-shaped) increment is unconstrained and set to v_i.
inline STIncrement cascade_st(const STParams& pi, const STParams& pj) {
    pi.validate();
    pj.validate();
    if (pi.time_causal() || pj.time_causal())
        throw std::invalid_argument("cascade_st: parameters must be non-causal");
    STIncrement inc;
    const CovMat2 prod_i = pi.product(), prod_j = pj.product();
    const double ti = pi.tau, tj = pj.tau;
    inc.delta_tau = tj - ti;

    const double tau_scale = std::max(ti, tj);
    if (std::abs(tj - ti) <= 1e-12 * tau_scale) {
        inc.delta_tau = 0.0;
        inc.delta_v = pi.v;
        inc.delta_prod = prod_j - prod_i;
        const double mom_scale = tau_scale * std::max({std::abs(pi.v[0]), std::abs(pi.v[1]),
                                                       std::abs(pj.v[0]), std::abs(pj.v[1]), 1.0});
        const bool products_equal =
            std::abs(tj * pj.v[0] - ti * pi.v[0]) <= 1e-12 * mom_scale &&
            std::abs(tj * pj.v[1] - ti * pi.v[1]) <= 1e-12 * mom_scale;
        inc.degenerate_tau = !products_equal;
        inc.feasible = products_equal && psd_check(inc.delta_prod);
        return inc;
    }

    inc.delta_v = {(tj * pj.v[0] - ti * pi.v[0]) / (tj - ti),
                   (tj * pj.v[1] - ti * pi.v[1]) / (tj - ti)};
    const double f = ti * tj / (ti - tj);
    inc.delta_prod.s11 = prod_j.s11 - prod_i.s11 + f * (pi.v[0] - pj.v[0]) * (pi.v[0] - pj.v[0]);
    inc.delta_prod.s12 = prod_j.s12 - prod_i.s12 + f * (pi.v[0] - pj.v[0]) * (pi.v[1] - pj.v[1]);
    inc.delta_prod.s22 = prod_j.s22 - prod_i.s22 + f * (pi.v[1] - pj.v[1]) * (pi.v[1] - pj.v[1]);
    inc.feasible = inc.delta_tau >= 0.0 && psd_check(inc.delta_prod);
    return inc;
}

/// Special case with all image velocities equal: the velocity terms drop out
/// and the spatial part reduces to the purely spatial cascade on the
/// s*Sigma products.
inline STIncrement cascade_st_equal_v(const STParams& pi, const STParams& pj) {
    pi.validate();
    pj.validate();
    if (std::abs(pi.v[0] - pj.v[0]) > 1e-12 || std::abs(pi.v[1] - pj.v[1]) > 1e-12)
        throw std::invalid_argument("cascade_st_equal_v: velocities must be equal");
    STIncrement inc;
    inc.delta_tau = pj.tau - pi.tau;
    inc.delta_v = pi.v;
    inc.delta_prod = pj.product() - pi.product();
    inc.feasible = inc.delta_tau >= 0.0 && psd_check(inc.delta_prod);
    return inc;
}

/// Time-causal cascade between adjacent temporal scales with shared velocity.
/// The increment is g(x - v t; ds, dSigma) h_exp(t; mu) with
/// mu = sqrt(c^2-1) sqrt(tau_i).  Non-adjacent scales and unequal velocities
/// have no known incremental kernel and are refused.
inline TimeCausalIncrement cascade_timecausal(const STParams& pi, const STParams& pj) {
    pi.validate();
    pj.validate();
    if (!pi.time_causal() || !pj.time_causal())
        throw std::invalid_argument("cascade_timecausal: parameters must be time-causal");
    if (std::abs(*pi.c - *pj.c) > 1e-12)
        throw std::invalid_argument("cascade_timecausal: distribution parameters differ");
    const double c = *pi.c;
    if (std::abs(pi.tau - pj.tau / (c * c)) > 1e-12 * pj.tau)
        throw std::invalid_argument("cascade_timecausal: scales not adjacent (tau_i != tau_j / c^2)");
    if (std::abs(pi.v[0] - pj.v[0]) > 1e-12 || std::abs(pi.v[1] - pj.v[1]) > 1e-12)
        throw std::invalid_argument("cascade_timecausal: velocities must be equal");
    TimeCausalIncrement inc;
    inc.mu = std::sqrt(c * c - 1.0) * std::sqrt(pi.tau);
    inc.v = pi.v;
    inc.delta_prod = pj.product() - pi.product();
    inc.feasible = psd_check(inc.delta_prod);
    return inc;
}

/// Compose a feasible spatial increment back onto base parameters.  Returns
/// the coarser parameters with the canonical s = trace/2 split.
inline SpatialParams compose_check(const SpatialIncrement& inc, const SpatialParams& base) {
    if (!inc.feasible)
        throw std::invalid_argument("compose_check: increment is infeasible");
    const CovMat2 prod = base.product() + inc.delta_prod;
    const double s = 0.5 * prod.trace();
    return {s, prod * (1.0 / s)};
}

/// Compose a feasible spatio-temporal increment back onto base parameters by
/// the addition laws on (s Sigma + dtau dv dv^T terms, tau, tau v).
inline STParams compose_check(const STIncrement& inc, const STParams& base) {
    if (!inc.feasible)
        throw std::invalid_argument("compose_check: increment is infeasible");
    STParams out;
    const CovMat2 base_prod = base.product();
    CovMat2 prod;
    prod.s11 = base_prod.s11 + inc.delta_prod.s11 + inc.delta_tau * inc.delta_v[0] * inc.delta_v[0];
    prod.s12 = base_prod.s12 + inc.delta_prod.s12 + inc.delta_tau * inc.delta_v[0] * inc.delta_v[1];
    prod.s22 = base_prod.s22 + inc.delta_prod.s22 + inc.delta_tau * inc.delta_v[1] * inc.delta_v[1];
    out.tau = base.tau + inc.delta_tau;
    const Vec2 mom = {inc.delta_tau * inc.delta_v[0] + base.tau * base.v[0],
                      inc.delta_tau * inc.delta_v[1] + base.tau * base.v[1]};
    out.v = {mom[0] / out.tau, mom[1] / out.tau};
    // prod above accumulated the joint second moments' spatial block; peel
    // off the tau v v^T part to recover the s*Sigma product.
    prod.s11 -= out.tau * out.v[0] * out.v[0] - base.tau * base.v[0] * base.v[0];
    prod.s12 -= out.tau * out.v[0] * out.v[1] - base.tau * base.v[0] * base.v[1];
    prod.s22 -= out.tau * out.v[1] * out.v[1] - base.tau * base.v[1] * base.v[1];
    out.s = 0.5 * prod.trace();
    out.sigma = prod * (1.0 / out.s);
    out.c = base.c;
    return out;
}

} // namespace rfcascade
