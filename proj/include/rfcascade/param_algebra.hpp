#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace rfcascade {

/// Relative tolerance used when classifying matrices on the boundary of the
/// positive-semidefinite cone.  Kept at round-off scale so that cascade
/// increments with a zero eigenvalue (pure temporal steps, rank-one spatial
/// steps) still count as feasible.
inline constexpr double kPsdTol = 1e-12;

/// Symmetric 2x2 spatial covariance matrix, stored as its three independent
/// elements so that symmetry holds by construction.
struct CovMat2 {
    double s11 = 0.0;
    double s12 = 0.0;
    double s22 = 0.0;

    double trace() const { return s11 + s22; }
    double det() const { return s11 * s22 - s12 * s12; }

    /// Smaller and larger eigenvalue of the symmetric matrix.
    std::array<double, 2> eigenvalues() const {
        const double m = 0.5 * trace();
        const double d = std::sqrt(std::max(0.0, m * m - det()));
        return {m - d, m + d};
    }

    bool positive_semidefinite() const {
        const double t = trace();
        return s11 >= -kPsdTol * t && s22 >= -kPsdTol * t &&
               det() >= -kPsdTol * t * t;
    }

    bool positive_definite() const {
        return s11 > 0.0 && det() > 0.0;
    }

    CovMat2 operator+(const CovMat2& o) const { return {s11 + o.s11, s12 + o.s12, s22 + o.s22}; }
    CovMat2 operator-(const CovMat2& o) const { return {s11 - o.s11, s12 - o.s12, s22 - o.s22}; }
    CovMat2 operator*(double a) const { return {a * s11, a * s12, a * s22}; }

    static CovMat2 identity() { return {1.0, 0.0, 1.0}; }
};

using Vec2 = std::array<double, 2>;

/// Parameters of the purely spatial smoothing kernel.  The effective
/// smoothing is the product s * sigma; the split is deliberately redundant,
/// so equality of parameter sets is defined on the product (see
/// smoothing_equivalent below).
struct SpatialParams {
    double s = 1.0;   ///< spatial scale, dimension length^2
    CovMat2 sigma = CovMat2::identity();

    /// Effective spatial covariance s * sigma.
    CovMat2 product() const { return sigma * s; }

    void validate() const {
        if (!(s > 0.0)) throw std::invalid_argument("SpatialParams: s must be > 0");
        if (!sigma.positive_definite())
            throw std::invalid_argument("SpatialParams: sigma must be positive definite");
    }
};

/// Parameters of the joint spatio-temporal smoothing kernels.  `c` is present
/// exactly for the time-causal family (temporal smoothing by composed
/// truncated exponentials instead of a Gaussian).
struct STParams {
    double s = 1.0;
    CovMat2 sigma = CovMat2::identity();
    double tau = 1.0;          ///< temporal scale, dimension time^2
    Vec2 v = {0.0, 0.0};       ///< image velocity, length/time
    std::optional<double> c;   ///< temporal scale ratio, > 1; set iff time-causal

    bool time_causal() const { return c.has_value(); }
    CovMat2 product() const { return sigma * s; }

    void validate() const {
        if (!(s > 0.0)) throw std::invalid_argument("STParams: s must be > 0");
        if (!(tau > 0.0)) throw std::invalid_argument("STParams: tau must be > 0");
        if (!sigma.positive_definite())
            throw std::invalid_argument("STParams: sigma must be positive definite");
        if (c && !(*c > 1.0)) throw std::invalid_argument("STParams: c must be > 1");
    }
};

/// Symmetric 3x3 covariance matrix over (x1, x2, t).
struct JointCov3 {
    // row-major upper triangle: (0,0) (0,1) (0,2) (1,1) (1,2) (2,2)
    std::array<double, 6> m{};

    double& at(int i, int j) {
        if (i > j) std::swap(i, j);
        static constexpr int idx[3][3] = {{0, 1, 2}, {-1, 3, 4}, {-1, -1, 5}};
        return m[static_cast<std::size_t>(idx[i][j])];
    }
    double at(int i, int j) const { return const_cast<JointCov3*>(this)->at(i, j); }

    double trace() const { return m[0] + m[3] + m[5]; }

    JointCov3 operator+(const JointCov3& o) const {
        JointCov3 r;
        for (std::size_t k = 0; k < 6; ++k) r.m[k] = m[k] + o.m[k];
        return r;
    }
    JointCov3 operator-(const JointCov3& o) const {
        JointCov3 r;
        for (std::size_t k = 0; k < 6; ++k) r.m[k] = m[k] - o.m[k];
        return r;
    }

    /// Smallest eigenvalue, by cyclic Jacobi sweeps.  The matrix is only
    /// 3x3, so a fixed number of sweeps reaches round-off.
    double min_eigenvalue() const {
        double a[3][3] = {{at(0, 0), at(0, 1), at(0, 2)},
                          {at(0, 1), at(1, 1), at(1, 2)},
                          {at(0, 2), at(1, 2), at(2, 2)}};
        for (int sweep = 0; sweep < 32; ++sweep) {
            double off = 0.0;
            for (int p = 0; p < 3; ++p)
                for (int q = p + 1; q < 3; ++q) off += a[p][q] * a[p][q];
            if (off < 1e-300) break;
            for (int p = 0; p < 3; ++p) {
                for (int q = p + 1; q < 3; ++q) {
                    if (a[p][q] == 0.0) continue;
                    const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                     (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    const double cth = 1.0 / std::sqrt(t * t + 1.0);
                    const double sth = t * cth;
                    for (int k = 0; k < 3; ++k) {
                        const double akp = a[k][p], akq = a[k][q];
                        a[k][p] = cth * akp - sth * akq;
                        a[k][q] = sth * akp + cth * akq;
                    }
                    for (int k = 0; k < 3; ++k) {
                        const double apk = a[p][k], aqk = a[q][k];
                        a[p][k] = cth * apk - sth * aqk;
                        a[q][k] = sth * apk + cth * aqk;
                    }
                }
            }
        }
        return std::min({a[0][0], a[1][1], a[2][2]});
    }
};

/// A composed geometric image transformation: uniform spatial scaling S_x,
/// spatial affine map A, Galilean motion u and temporal scaling S_t, acting
/// as x' = S_x (A x + u t), t' = S_t t.
struct GeometricTransform {
    double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;   ///< affine matrix A
    double sx = 1.0;                                     ///< spatial scaling
    Vec2 u = {0.0, 0.0};                                 ///< Galilean velocity
    double st = 1.0;                                     ///< temporal scaling

    double det_a() const { return a11 * a22 - a12 * a21; }

    void validate() const {
        if (det_a() == 0.0) throw std::invalid_argument("GeometricTransform: A must be nonsingular");
        if (!(sx > 0.0)) throw std::invalid_argument("GeometricTransform: S_x must be > 0");
        if (!(st > 0.0)) throw std::invalid_argument("GeometricTransform: S_t must be > 0");
    }

    static GeometricTransform rotation(double angle) {
        GeometricTransform g;
        g.a11 = std::cos(angle); g.a12 = -std::sin(angle);
        g.a21 = std::sin(angle); g.a22 = std::cos(angle);
        return g;
    }
};

/// Covariance matrix with eigenvalues sigma1^2, sigma2^2 and first principal
/// axis at angle phi:
///   s11 = l1 cos^2 phi + l2 sin^2 phi
///   s12 = (l1 - l2) cos phi sin phi
///   s22 = l1 sin^2 phi + l2 cos^2 phi,  l_i = sigma_i^2.
inline CovMat2 cov_from_axes(double sigma1, double sigma2, double phi) {
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0))
        throw std::invalid_argument("cov_from_axes: sigma1, sigma2 must be > 0");
    const double l1 = sigma1 * sigma1, l2 = sigma2 * sigma2;
    const double c = std::cos(phi), sn = std::sin(phi);
    return {l1 * c * c + l2 * sn * sn,
            (l1 - l2) * c * sn,
            l1 * sn * sn + l2 * c * c};
}

/// Elongation measure of an oriented kernel: sigma2 / sigma1.
inline double eccentricity(double sigma1, double sigma2) {
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0))
        throw std::invalid_argument("eccentricity: sigma1, sigma2 must be > 0");
    return sigma2 / sigma1;
}

/// Second-moment matrix of the non-causal spatio-temporal kernel over
/// (x1, x2, t): spatial block s*Sigma + tau v v^T, space-time couplings
/// tau v, temporal entry tau.
inline JointCov3 joint_cov(const STParams& p) {
    p.validate();
    if (p.time_causal())
        throw std::invalid_argument(
            "joint_cov: unsupported for time-causal parameters "
            "(second moments of the limit kernel are not this matrix)");
    JointCov3 j;
    const CovMat2 sp = p.product();
    j.at(0, 0) = sp.s11 + p.tau * p.v[0] * p.v[0];
    j.at(0, 1) = sp.s12 + p.tau * p.v[0] * p.v[1];
    j.at(1, 1) = sp.s22 + p.tau * p.v[1] * p.v[1];
    j.at(0, 2) = p.tau * p.v[0];
    j.at(1, 2) = p.tau * p.v[1];
    j.at(2, 2) = p.tau;
    return j;
}

/// Parameter matching under x' = S_x A x:  s' = S_x^2 s,  Sigma' = A Sigma A^T.
inline SpatialParams match_spatial(const SpatialParams& p, double sx, const GeometricTransform& t) {
    t.validate();
    if (!(sx > 0.0)) throw std::invalid_argument("match_spatial: S_x must be > 0");
    const double a = t.a11, b = t.a12, c = t.a21, d = t.a22;
    const CovMat2& g = p.sigma;
    CovMat2 out;
    out.s11 = a * (a * g.s11 + b * g.s12) + b * (a * g.s12 + b * g.s22);
    out.s12 = c * (a * g.s11 + b * g.s12) + d * (a * g.s12 + b * g.s22);
    out.s22 = c * (c * g.s11 + d * g.s12) + d * (c * g.s12 + d * g.s22);
    return {sx * sx * p.s, out};
}

/// Parameter matching under the composed transform x' = S_x (A x + u t),
/// t' = S_t t:  spatial part as match_spatial, tau' = S_t^2 tau,
/// v' = (S_x / S_t) (A v + u).
inline STParams match_spatiotemporal(const STParams& p, const GeometricTransform& t) {
    t.validate();
    SpatialParams sp{p.s, p.sigma};
    const SpatialParams msp = match_spatial(sp, t.sx, t);
    STParams out = p;
    out.s = msp.s;
    out.sigma = msp.sigma;
    out.tau = t.st * t.st * p.tau;
    const double av1 = t.a11 * p.v[0] + t.a12 * p.v[1];
    const double av2 = t.a21 * p.v[0] + t.a22 * p.v[1];
    out.v = {(t.sx / t.st) * (av1 + t.u[0]), (t.sx / t.st) * (av2 + t.u[1])};
    return out;
}

/// Feasibility test on the closed PSD cone: all eigenvalues >= -kPsdTol * trace.
inline bool psd_check(const CovMat2& m) {
    const auto ev = m.eigenvalues();
    return ev[0] >= -kPsdTol * m.trace();
}

inline bool psd_check(const JointCov3& m) {
    return m.min_eigenvalue() >= -kPsdTol * m.trace();
}

/// Two parameter sets are smoothing-equivalent when they describe the same
/// kernel: equal products s*Sigma and equal (tau, v); the (s, Sigma) split
/// itself is not canonical.
inline bool smoothing_equivalent(const STParams& a, const STParams& b, double rel_tol = 1e-12) {
    const CovMat2 pa = a.product(), pb = b.product();
    const double scale = std::max({std::abs(pa.s11), std::abs(pa.s22), std::abs(pb.s11),
                                   std::abs(pb.s22), a.tau, b.tau, 1e-300});
    auto close = [&](double x, double y) { return std::abs(x - y) <= rel_tol * scale; };
    return close(pa.s11, pb.s11) && close(pa.s12, pb.s12) && close(pa.s22, pb.s22) &&
           close(a.tau, b.tau) && close(a.v[0], b.v[0]) && close(a.v[1], b.v[1]) &&
           a.time_causal() == b.time_causal();
}

} // namespace rfcascade
