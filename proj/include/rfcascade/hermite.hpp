#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "rfcascade/kernels.hpp"
#include "rfcascade/param_algebra.hpp"

namespace rfcascade {

/// Kernel families with derivative-ratio tables.
enum class Family { spatial, st_iso, st_affine, timecausal };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::spatial: return "spatial";
        case Family::st_iso: return "st_iso";
        case Family::st_affine: return "st_affine";
        case Family::timecausal: return "timecausal";
    }
    return "?";
}

/// Derivative index: either a coordinate-derivative multi-index over
/// {x1, x2, t, tbar} of total order <= 2, or a first-order derivative with
/// respect to one filter parameter.  tbar denotes the velocity-adapted
/// temporal direction d_t + v1 d_x1 + v2 d_x2.
enum class DerivIndex {
    d_x1, d_x2, d_t, d_tbar,
    d_x1x1, d_x1x2, d_x2x2,
    d_x1t, d_x2t, d_x1tbar, d_x2tbar,
    d_tt, d_tbartbar,
    p_s, p_s11, p_s12, p_s22, p_tau, p_v1, p_v2,
};

inline const char* deriv_index_name(DerivIndex i) {
    switch (i) {
        case DerivIndex::d_x1: return "d_x1";
        case DerivIndex::d_x2: return "d_x2";
        case DerivIndex::d_t: return "d_t";
        case DerivIndex::d_tbar: return "d_tbar";
        case DerivIndex::d_x1x1: return "d_x1x1";
        case DerivIndex::d_x1x2: return "d_x1x2";
        case DerivIndex::d_x2x2: return "d_x2x2";
        case DerivIndex::d_x1t: return "d_x1t";
        case DerivIndex::d_x2t: return "d_x2t";
        case DerivIndex::d_x1tbar: return "d_x1tbar";
        case DerivIndex::d_x2tbar: return "d_x2tbar";
        case DerivIndex::d_tt: return "d_tt";
        case DerivIndex::d_tbartbar: return "d_tbartbar";
        case DerivIndex::p_s: return "p_s";
        case DerivIndex::p_s11: return "p_s11";
        case DerivIndex::p_s12: return "p_s12";
        case DerivIndex::p_s22: return "p_s22";
        case DerivIndex::p_tau: return "p_tau";
        case DerivIndex::p_v1: return "p_v1";
        case DerivIndex::p_v2: return "p_v2";
    }
    return "?";
}

/// Probabilistic Hermite polynomial He_m(x) by the recurrence
/// He_{m+1} = x He_m - m He_{m-1}.
inline double hermite_he(int m, double x) {
    if (m < 0) throw std::invalid_argument("hermite_he: order must be >= 0");
    double prev = 1.0;   // He_0
    if (m == 0) return prev;
    double cur = x;      // He_1
    for (int k = 1; k < m; ++k) {
        const double next = x * cur - static_cast<double>(k) * prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

/// m-th derivative of the 1-D Gaussian:
/// d_x^m g(x; s) = ((-1)^m / s^{m/2}) He_m(x / sqrt(s)) g(x; s).
inline double gauss1d_deriv(int m, double x, double s) {
    const double r = std::sqrt(s);
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    return sign * hermite_he(m, x / r) / std::pow(r, m) * gauss1d(x, s);
}

namespace detail {

[[noreturn]] inline void unsupported_index(Family fam, DerivIndex idx) {
    throw std::invalid_argument(std::string("ratio table ") + family_name(fam) +
                                ": unsupported index " + deriv_index_name(idx));
}

inline void check_conditioning(double s, const CovMat2& g) {
    const double tr = s * g.trace();
    if (s * s * g.det() < 1e-10 * tr * tr)
        throw std::invalid_argument("ratio table: covariance too close to singular");
}

/// Ratios D T / T for the affine spatio-temporal Gaussian, written with
/// u_i = x_i - v_i t.  The purely spatial table is the t = 0, v = 0
/// restriction of the same expressions; the time-causal table shares the
/// entries that do not involve t or tau, since the temporal factor cancels.
inline double affine_ratio(DerivIndex idx, double x1, double x2, double t,
                           double s, const CovMat2& g, double tau, const Vec2& v) {
    const double S11 = g.s11, S12 = g.s12, S22 = g.s22;
    const double D = S12 * S12 - S11 * S22;   // -det(Sigma)
    const double u1 = x1 - v[0] * t, u2 = x2 - v[1] * t;
    switch (idx) {
        case DerivIndex::d_x1:
            return (S12 * t * v[1] - S12 * x2 - S22 * t * v[0] + S22 * x1) / (s * D);
        case DerivIndex::d_x2:
            return (-S11 * t * v[1] + S11 * x2 + S12 * t * v[0] - S12 * x1) / (s * D);
        case DerivIndex::d_t:
            return (S11 * S22 * s * t + S11 * tau * v[1] * (t * v[1] - x2) - S12 * S12 * s * t +
                    S12 * tau * (-2.0 * t * v[0] * v[1] + v[0] * x2 + v[1] * x1) +
                    S22 * tau * v[0] * (t * v[0] - x1)) /
                   (s * tau * D);
        case DerivIndex::d_tbar:
            return -t / tau;
        case DerivIndex::d_x1x1:
            return (S22 * S22 * (u1 * u1 - S11 * s) + S12 * S12 * (S22 * s + u2 * u2) -
                    2.0 * S12 * S22 * u1 * u2) /
                   (s * s * D * D);
        case DerivIndex::d_x1x2:
            return (S11 * S12 * S22 * s - S11 * S12 * u2 * u2 + S11 * S22 * u1 * u2 -
                    S12 * S12 * S12 * s + S12 * S12 * u1 * u2 - S12 * S22 * u1 * u1) /
                   (s * s * D * D);
        case DerivIndex::d_x2x2:
            return (S11 * S11 * (u2 * u2 - S22 * s) + S11 * S12 * (S12 * s - 2.0 * u1 * u2) +
                    S12 * S12 * u1 * u1) /
                   (s * s * D * D);
        case DerivIndex::d_x1tbar:
            return t * (-S12 * t * v[1] + S12 * x2 + S22 * t * v[0] - S22 * x1) / (s * tau * D);
        case DerivIndex::d_x2tbar:
            return t * (S11 * t * v[1] - S11 * x2 - S12 * t * v[0] + S12 * x1) / (s * tau * D);
        case DerivIndex::d_tbartbar:
            return (t * t - tau) / (tau * tau);
        case DerivIndex::p_s:
            return -(S11 * (u2 * u2 - 2.0 * S22 * s) + 2.0 * S12 * S12 * s - 2.0 * S12 * u1 * u2 +
                     S22 * u1 * u1) /
                   (2.0 * s * s * D);
        case DerivIndex::p_s11:
            return (S22 * S22 * (u1 * u1 - S11 * s) + S12 * S12 * (S22 * s + u2 * u2) -
                    2.0 * S12 * S22 * u1 * u2) /
                   (2.0 * s * D * D);
        case DerivIndex::p_s12:
            return (S11 * S12 * S22 * s - S11 * S12 * u2 * u2 + S11 * S22 * u1 * u2 -
                    S12 * S12 * S12 * s + S12 * S12 * u1 * u2 - S12 * S22 * u1 * u1) /
                   (s * D * D);
        case DerivIndex::p_s22:
            return (S11 * S11 * (u2 * u2 - S22 * s) + S11 * S12 * (S12 * s - 2.0 * u1 * u2) +
                    S12 * S12 * u1 * u1) /
                   (2.0 * s * D * D);
        case DerivIndex::p_tau:
            return (t * t - tau) / (2.0 * tau * tau);
        case DerivIndex::p_v1:
            return t * (-S12 * t * v[1] + S12 * x2 + S22 * t * v[0] - S22 * x1) / (s * D);
        case DerivIndex::p_v2:
            return -t * (-S11 * t * v[1] + S11 * x2 + S12 * t * v[0] - S12 * x1) / (s * D);
        default:
            break;
    }
    throw std::invalid_argument("affine_ratio: index not in table");
}

} // namespace detail

/// Ratio (D g)/g for the purely spatial affine Gaussian.  Supported indices:
/// x-derivatives up to order 2 and the parameter tags s, S11, S12, S22.
inline double ratio_spatial(DerivIndex idx, const Vec2& x, const SpatialParams& p) {
    p.validate();
    detail::check_conditioning(p.s, p.sigma);
    switch (idx) {
        case DerivIndex::d_x1: case DerivIndex::d_x2:
        case DerivIndex::d_x1x1: case DerivIndex::d_x1x2: case DerivIndex::d_x2x2:
        case DerivIndex::p_s: case DerivIndex::p_s11: case DerivIndex::p_s12:
        case DerivIndex::p_s22:
            return detail::affine_ratio(idx, x[0], x[1], 0.0, p.s, p.sigma, 1.0, {0.0, 0.0});
        default:
            detail::unsupported_index(Family::spatial, idx);
    }
}

/// Ratio table for the spatio-temporal kernel with isotropic spatial
/// smoothing (Sigma = I); includes the d_x1t, d_x2t and d_tt entries that
/// the anisotropic table omits.
inline double ratio_st_iso(DerivIndex idx, const Vec2& x, double t, const STParams& p) {
    p.validate();
    if (std::abs(p.sigma.s11 - 1.0) > 1e-12 || std::abs(p.sigma.s22 - 1.0) > 1e-12 ||
        std::abs(p.sigma.s12) > 1e-12)
        throw std::invalid_argument("ratio_st_iso: requires Sigma = I");
    const double s = p.s, tau = p.tau;
    const double v1 = p.v[0], v2 = p.v[1];
    const double x1 = x[0], x2 = x[1];
    const double u1 = x1 - v1 * t, u2 = x2 - v2 * t;
    switch (idx) {
        case DerivIndex::d_x1: return (t * v1 - x1) / s;
        case DerivIndex::d_x2: return (t * v2 - x2) / s;
        case DerivIndex::d_t:
            return (-t * (v1 * v1 + v2 * v2) + v1 * x1 + v2 * x2) / s - t / tau;
        case DerivIndex::d_tbar: return -t / tau;
        case DerivIndex::d_x1x1: return (u1 * u1 - s) / (s * s);
        case DerivIndex::d_x1x2: return (t * v1 - x1) * (t * v2 - x2) / (s * s);
        case DerivIndex::d_x2x2: return (u2 * u2 - s) / (s * s);
        case DerivIndex::d_x1t:
            return (s * (-t * t * v1 + t * x1 + tau * v1) -
                    tau * (t * v1 - x1) * (t * (v1 * v1 + v2 * v2) - v1 * x1 - v2 * x2)) /
                   (s * s * tau);
        case DerivIndex::d_x2t:
            return (s * (-t * t * v2 + t * x2 + tau * v2) -
                    tau * (t * v2 - x2) * (t * (v1 * v1 + v2 * v2) - v1 * x1 - v2 * x2)) /
                   (s * s * tau);
        case DerivIndex::d_x1tbar: return t * u1 / (s * tau);
        case DerivIndex::d_x2tbar: return t * u2 / (s * tau);
        case DerivIndex::d_tt: {
            const double w = -t * (v1 * v1 + v2 * v2) + v1 * x1 + v2 * x2;
            return w * w / (s * s) -
                   (-2.0 * t * t * (v1 * v1 + v2 * v2) + 2.0 * t * (v1 * x1 + v2 * x2) +
                    tau * (v1 * v1 + v2 * v2)) /
                       (s * tau) +
                   (t * t - tau) / (tau * tau);
        }
        case DerivIndex::d_tbartbar: return (t * t - tau) / (tau * tau);
        case DerivIndex::p_s:
            return (-2.0 * s + t * t * (v1 * v1 + v2 * v2) - 2.0 * t * (v1 * x1 + v2 * x2) +
                    x1 * x1 + x2 * x2) /
                   (2.0 * s * s);
        case DerivIndex::p_tau: return (t * t - tau) / (2.0 * tau * tau);
        case DerivIndex::p_v1: return t * u1 / s;
        case DerivIndex::p_v2: return t * u2 / s;
        default:
            detail::unsupported_index(Family::st_iso, idx);
    }
}

/// Ratio table for the spatio-temporal kernel with anisotropic affine
/// spatial smoothing.  The d_x1t, d_x2t and d_tt entries are not part of
/// this table.
inline double ratio_st_affine(DerivIndex idx, const Vec2& x, double t, const STParams& p) {
    p.validate();
    detail::check_conditioning(p.s, p.sigma);
    switch (idx) {
        case DerivIndex::d_x1t: case DerivIndex::d_x2t: case DerivIndex::d_tt:
            detail::unsupported_index(Family::st_affine, idx);
        default:
            return detail::affine_ratio(idx, x[0], x[1], t, p.s, p.sigma, p.tau, p.v);
    }
}

/// Ratio table for the time-causal spatio-temporal kernel: spatial
/// coordinate derivatives and the tags {s, S11, S12, S22, v1, v2} only.
/// The temporal factor cancels in these ratios, so the entries coincide
/// with the anisotropic table; t- and tau-related indices have no closed
/// form and are rejected.
inline double ratio_timecausal(DerivIndex idx, const Vec2& x, double t, const STParams& p) {
    p.validate();
    detail::check_conditioning(p.s, p.sigma);
    switch (idx) {
        case DerivIndex::d_x1: case DerivIndex::d_x2:
        case DerivIndex::d_x1x1: case DerivIndex::d_x1x2: case DerivIndex::d_x2x2:
        case DerivIndex::p_s: case DerivIndex::p_s11: case DerivIndex::p_s12:
        case DerivIndex::p_s22: case DerivIndex::p_v1: case DerivIndex::p_v2:
            return detail::affine_ratio(idx, x[0], x[1], t, p.s, p.sigma, p.tau, p.v);
        default:
            detail::unsupported_index(Family::timecausal, idx);
    }
}

/// Analytic derivative of a smoothing kernel: table ratio times kernel value.
inline double analytic_deriv(Family fam, DerivIndex idx, const Vec2& x, double t,
                             const STParams& p, const LimitKernel* psi = nullptr) {
    switch (fam) {
        case Family::spatial:
            return ratio_spatial(idx, x, {p.s, p.sigma}) * affine_gauss(x, {p.s, p.sigma});
        case Family::st_iso:
            return ratio_st_iso(idx, x, t, p) * st_gauss(x, t, p);
        case Family::st_affine:
            return ratio_st_affine(idx, x, t, p) * st_gauss(x, t, p);
        case Family::timecausal: {
            if (psi == nullptr)
                throw std::invalid_argument("analytic_deriv: time-causal family needs a sampler");
            return ratio_timecausal(idx, x, t, p) * st_limit(x, t, p, *psi);
        }
    }
    throw std::invalid_argument("analytic_deriv: unknown family");
}

inline double analytic_deriv(DerivIndex idx, const Vec2& x, const SpatialParams& p) {
    return ratio_spatial(idx, x, p) * affine_gauss(x, p);
}

} // namespace rfcascade
