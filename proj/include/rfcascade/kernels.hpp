#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "rfcascade/param_algebra.hpp"

namespace rfcascade {

/// 1-D Gaussian with variance s: (1 / sqrt(2 pi s)) exp(-x^2 / 2s).
inline double gauss1d(double x, double s) {
    if (!(s > 0.0)) throw std::invalid_argument("gauss1d: s must be > 0");
    return std::exp(-x * x / (2.0 * s)) / std::sqrt(2.0 * std::numbers::pi * s);
}

/// Affine Gaussian g(x; s, Sigma) = exp(-x^T Sigma^{-1} x / 2s) / (2 pi s sqrt(det Sigma)).
/// Only the product s * Sigma enters the value.
inline double affine_gauss(const Vec2& x, const SpatialParams& p) {
    const CovMat2& g = p.sigma;
    const double det = g.det();
    if (!(det > 0.0) || !(p.s > 0.0))
        throw std::invalid_argument("affine_gauss: parameters must be positive definite");
    // Sigma^{-1} = [[s22, -s12], [-s12, s11]] / det
    const double q = (g.s22 * x[0] * x[0] - 2.0 * g.s12 * x[0] * x[1] + g.s11 * x[1] * x[1]) / det;
    return std::exp(-q / (2.0 * p.s)) / (2.0 * std::numbers::pi * p.s * std::sqrt(det));
}

/// Affine Gaussian in the explicit (sigma1, sigma2, phi) parameterization:
///   g_aff = exp(-A / (2 sigma1^2 sigma2^2)) / (2 pi sigma1 sigma2)
/// with the quadratic form
///   A = (s2^2 x1^2 + s1^2 x2^2) cos^2 phi + (s1^2 x1^2 + s2^2 x2^2) sin^2 phi
///       - 2 (s1^2 - s2^2) x1 x2 cos phi sin phi.
inline double affine_gauss_axes(const Vec2& x, double sigma1, double sigma2, double phi) {
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0))
        throw std::invalid_argument("affine_gauss_axes: sigma1, sigma2 must be > 0");
    const double l1 = sigma1 * sigma1, l2 = sigma2 * sigma2;
    const double c = std::cos(phi), sn = std::sin(phi);
    const double a = (l2 * x[0] * x[0] + l1 * x[1] * x[1]) * c * c +
                     (l1 * x[0] * x[0] + l2 * x[1] * x[1]) * sn * sn -
                     2.0 * (l1 - l2) * x[0] * x[1] * c * sn;
    return std::exp(-a / (2.0 * l1 * l2)) / (2.0 * std::numbers::pi * sigma1 * sigma2);
}

/// Non-causal spatio-temporal kernel T(x, t) = g(x - v t; s, Sigma) h(t; tau)
/// with a temporal Gaussian of variance tau.
inline double st_gauss(const Vec2& x, double t, const STParams& p) {
    if (p.time_causal())
        throw std::invalid_argument("st_gauss: time-causal parameters; use st_limit");
    const Vec2 u = {x[0] - p.v[0] * t, x[1] - p.v[1] * t};
    return affine_gauss(u, {p.s, p.sigma}) * gauss1d(t, p.tau);
}

/// Truncated exponential (1/mu) exp(-t/mu) for t >= 0, zero for t < 0.
inline double trunc_exp(double t, double mu) {
    if (!(mu > 0.0)) throw std::invalid_argument("trunc_exp: mu must be > 0");
    return t < 0.0 ? 0.0 : std::exp(-t / mu) / mu;
}

/// Number of truncated-exponential stages needed so that the variance of the
/// dropped tail, tau * c^{-2K}, is at most eps_var * tau.
inline int limit_kernel_stage_count(double c, double eps_var) {
    if (!(c > 1.0)) throw std::invalid_argument("limit kernel: c must be > 1");
    if (!(eps_var > 0.0) || !(eps_var < 1.0))
        throw std::invalid_argument("limit kernel: eps_var must be in (0, 1)");
    return static_cast<int>(std::ceil(std::log(1.0 / eps_var) / (2.0 * std::log(c))));
}

/// Time constants mu_k = c^{-k} sqrt(c^2 - 1) sqrt(tau), k = 1..K.
inline std::vector<double> limit_kernel_mus(double tau, double c, int stages) {
    std::vector<double> mus;
    mus.reserve(static_cast<std::size_t>(stages));
    const double base = std::sqrt(c * c - 1.0) * std::sqrt(tau);
    double f = 1.0;
    for (int k = 1; k <= stages; ++k) {
        f /= c;
        mus.push_back(f * base);
    }
    return mus;
}

/// Mean of the full limit kernel: sum mu_k = sqrt(c^2 - 1) sqrt(tau) / (c - 1).
inline double limit_kernel_mean(double tau, double c) {
    return std::sqrt(c * c - 1.0) * std::sqrt(tau) / (c - 1.0);
}

/// Finite-stage approximation of the time-causal limit kernel, sampled on a
/// uniform temporal grid t_n = n * dt, n = 0..count-1.
///
/// The kernel is built in the time domain: each truncated-exponential stage
/// is point-sampled, normalized to unit discrete mass, and the stages are
/// composed by discrete convolution restricted to the grid window.  Causality
/// is exact: value(t) is identically zero for t < 0.  The Fourier-domain
/// factor product is kept in the test suite as an independent oracle.
class LimitKernel {
public:
    LimitKernel(double tau, double c, double dt, double t_max, double eps_var = 1e-6)
        : tau_(tau), c_(c), dt_(dt) {
        if (!(tau > 0.0)) throw std::invalid_argument("LimitKernel: tau must be > 0");
        if (!(c > 1.0)) throw std::invalid_argument("LimitKernel: c must be > 1");
        if (!(dt > 0.0)) throw std::invalid_argument("LimitKernel: dt must be > 0");
        if (!(t_max > 0.0)) throw std::invalid_argument("LimitKernel: t_max must be > 0");
        stages_ = limit_kernel_stage_count(c, eps_var);
        mus_ = limit_kernel_mus(tau, c, stages_);

        const std::size_t n = static_cast<std::size_t>(std::floor(t_max / dt)) + 1;
        samples_.assign(n, 0.0);
        samples_[0] = 1.0 / dt;   // start from a discrete delta
        std::vector<double> stage, next(n);
        for (const double mu : mus_) {
            sample_stage(mu, n, stage);
            // windowed causal convolution; both factors are zero for t < 0
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                const std::size_t kmax = std::min(i + 1, stage.size());
                for (std::size_t k = 0; k < kmax; ++k)
                    acc += stage[k] * samples_[i - k];
                next[i] = acc * dt;
            }
            samples_.swap(next);
        }
        double mass = 0.0;
        for (const double v : samples_) mass += v;
        mass *= dt;
        if (mass > 0.0)
            for (double& v : samples_) v /= mass;
    }

    double tau() const { return tau_; }
    double c() const { return c_; }
    double dt() const { return dt_; }
    int stages() const { return stages_; }
    const std::vector<double>& mus() const { return mus_; }
    const std::vector<double>& samples() const { return samples_; }
    double t_max() const { return dt_ * static_cast<double>(samples_.size() - 1); }

    /// Variance of the dropped tail, tau - sum mu_k^2 = tau * c^{-2K}.
    double residual_variance() const {
        double sum = 0.0;
        for (const double mu : mus_) sum += mu * mu;
        return tau_ - sum;
    }

    /// Kernel value by linear interpolation.  Exactly zero for t < 0;
    /// querying beyond the sampled extent is an error.
    double value(double t) const {
        if (t < 0.0) return 0.0;
        const double pos = t / dt_;
        const std::size_t i = static_cast<std::size_t>(pos);
        if (i + 1 >= samples_.size()) {
            if (i < samples_.size() && pos == static_cast<double>(i)) return samples_[i];
            throw std::out_of_range("LimitKernel::value: t beyond sampled extent");
        }
        const double f = pos - static_cast<double>(i);
        return samples_[i] * (1.0 - f) + samples_[i + 1] * f;
    }

private:
    void sample_stage(double mu, std::size_t n, std::vector<double>& out) const {
        // Support long enough that the dropped tail mass is ~e^-40; stages
        // much narrower than the grid degenerate to single-cell deltas.
        std::size_t m = static_cast<std::size_t>(std::ceil(40.0 * mu / dt_)) + 1;
        m = std::min(m, n);
        m = std::max<std::size_t>(m, 1);
        out.assign(m, 0.0);
        double mass = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            out[i] = trunc_exp(static_cast<double>(i) * dt_, mu);
            mass += out[i];
        }
        mass *= dt_;
        for (double& v : out) v /= mass;
    }

    double tau_;
    double c_;
    double dt_;
    int stages_;
    std::vector<double> mus_;
    std::vector<double> samples_;
};

/// Time-causal spatio-temporal kernel value: velocity-adapted affine Gaussian
/// times the sampled limit kernel.
inline double st_limit(const Vec2& x, double t, const STParams& p, const LimitKernel& psi) {
    if (!p.time_causal())
        throw std::invalid_argument("st_limit: parameters are not time-causal");
    if (t < 0.0) return 0.0;
    const Vec2 u = {x[0] - p.v[0] * t, x[1] - p.v[1] * t};
    return affine_gauss(u, {p.s, p.sigma}) * psi.value(t);
}

/// Mixed first-order receptive field over a 1+1-D domain:
///   T_{x tbar} = d_x d_tbar ( g(x - v t; s) h(t; tau) ).
/// The velocity-adapted temporal derivative removes the transport term, so
/// T_{x tbar} = g'(x - v t; s) h'(t; tau).  For the causal case the temporal
/// factor has no closed-form derivative; it is centrally differenced on the
/// sampled limit kernel.
inline double mixed_rf_1p1d(double x, double t, double s, double tau, double v,
                            bool causal, const LimitKernel* psi = nullptr) {
    const double u = x - v * t;
    const double gx = -u / s * gauss1d(u, s);
    if (!causal) {
        const double ht = -t / tau * gauss1d(t, tau);
        return gx * ht;
    }
    if (psi == nullptr)
        throw std::invalid_argument("mixed_rf_1p1d: causal evaluation needs a limit-kernel sampler");
    const double h = psi->dt();
    const double lo = t - h >= 0.0 ? psi->value(t - h) : 0.0;
    const double hi = t + h <= psi->t_max() ? psi->value(t + h) : 0.0;
    return gx * (hi - lo) / (2.0 * h);
}

} // namespace rfcascade
