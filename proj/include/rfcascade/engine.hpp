#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <type_traits>
#include <vector>

#include "rfcascade/cascade.hpp"
#include "rfcascade/hermite.hpp"
#include "rfcascade/kernels.hpp"
#include "rfcascade/param_algebra.hpp"

namespace rfcascade {

/// Regular scalar grid; x1 is the fastest-varying axis.  `offset` records the
/// grid's position in an enclosing frame (used by interior-only convolution
/// results so they can be aligned with full-size fields).
template <int N>
struct Grid {
    static_assert(N == 2 || N == 3);
    std::array<int, N> dims{};
    std::array<double, N> spacing{};
    std::array<int, N> offset{};
    std::vector<double> values;

    static Grid zeros(const std::array<int, N>& d, const std::array<double, N>& sp) {
        Grid g;
        g.dims = d;
        g.spacing = sp;
        std::size_t n = 1;
        for (int e : d) {
            if (e <= 0) throw std::invalid_argument("Grid: dims must be positive");
            n *= static_cast<std::size_t>(e);
        }
        g.values.assign(n, 0.0);
        return g;
    }

    std::size_t size() const { return values.size(); }

    std::size_t index(int ix, int iy) const requires(N == 2) {
        return static_cast<std::size_t>(iy) * dims[0] + ix;
    }
    std::size_t index(int ix, int iy, int it) const requires(N == 3) {
        return (static_cast<std::size_t>(it) * dims[1] + iy) * dims[0] + ix;
    }
    double& at(int ix, int iy) requires(N == 2) { return values[index(ix, iy)]; }
    double at(int ix, int iy) const requires(N == 2) { return values[index(ix, iy)]; }
    double& at(int ix, int iy, int it) requires(N == 3) { return values[index(ix, iy, it)]; }
    double at(int ix, int iy, int it) const requires(N == 3) { return values[index(ix, iy, it)]; }

    double cell_volume() const {
        double v = 1.0;
        for (double sp : spacing) v *= sp;
        return v;
    }
};

using Image = Grid<2>;
using Volume = Grid<3>;

/// Kernel samples on a regular grid.  Values are densities of the continuous
/// kernel; discrete convolution therefore multiplies by the cell volume.
/// `origin` is the grid index of the continuous-domain origin.
template <int N>
struct SampledKernel {
    std::array<int, N> dims{};
    std::array<double, N> spacing{};
    std::array<int, N> origin{};
    bool normalized = false;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double cell_volume() const {
        double v = 1.0;
        for (double sp : spacing) v *= sp;
        return v;
    }
    /// Discrete mass: sum of samples times cell volume.
    double mass() const {
        double m = 0.0;
        for (double v : values) m += v;
        return m * cell_volume();
    }
    const char* axes() const { return N == 2 ? "x1x2" : "x1x2t"; }
};

using Kernel2 = SampledKernel<2>;
using Kernel3 = SampledKernel<3>;

struct SampleOptions {
    double trunc = 5.0;         ///< truncation multiplier in standard deviations
    double exp_trunc = 8.0;     ///< truncated-exponential extent in units of mu
    bool renormalize = false;   ///< rescale so the discrete mass is exactly 1
    double eps_var = 1e-6;      ///< limit-kernel stage-count tolerance
    std::size_t max_cells = std::size_t(1) << 26;   ///< memory budget guard
};

enum class Boundary { zero_pad, interior_only };

// ---------------------------------------------------------------------------
// multiply-accumulate instrumentation (smoothing convolutions only)

namespace detail {
inline std::atomic<std::uint64_t>& mac_counter_ref() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}
} // namespace detail

inline void reset_mac_count() { detail::mac_counter_ref().store(0); }
inline std::uint64_t mac_count() { return detail::mac_counter_ref().load(); }

// ---------------------------------------------------------------------------
// sampling

namespace detail {

inline void check_budget(std::size_t cells, const SampleOptions& opts) {
    if (cells > opts.max_cells)
        throw std::length_error("sample: grid exceeds the configured memory budget");
}

struct DegenerateFlags {
    bool x = false, y = false;
};

/// Classify (and validate) degenerate directions of a spatial product on
/// the boundary of the PSD cone.  Only axis-aligned degeneracies can be
/// realized as reduced-support kernels on the grid.
inline DegenerateFlags classify_product(const CovMat2& prod) {
    const double tr = prod.trace();
    const double tiny = 1e-14 * std::max(tr, 1e-300);
    DegenerateFlags d;
    d.x = prod.s11 <= tiny;
    d.y = prod.s22 <= tiny;
    if ((d.x || d.y) && std::abs(prod.s12) > tiny)
        throw std::invalid_argument("sample: degenerate spatial product is not axis-aligned");
    if (!d.x && !d.y && prod.det() <= tiny * tr)
        throw std::invalid_argument("sample: rank-one spatial product is not axis-aligned");
    return d;
}

inline std::array<int, 2> spatial_radii(const CovMat2& prod, double dx, double dy,
                                        const SampleOptions& opts) {
    const DegenerateFlags d = classify_product(prod);
    return {d.x ? 0 : static_cast<int>(std::ceil(opts.trunc * std::sqrt(prod.s11) / dx)),
            d.y ? 0 : static_cast<int>(std::ceil(opts.trunc * std::sqrt(prod.s22) / dy))};
}

/// Temporal extents (sample count and index of t = 0) per temporal profile.
struct LineExtent {
    int count = 1;
    int origin = 0;
};

inline LineExtent temporal_gaussian_extent(double tau, double dt, const SampleOptions& opts) {
    if (tau <= 1e-14) return {1, 0};
    const int rt = static_cast<int>(std::ceil(opts.trunc * std::sqrt(tau) / dt));
    return {2 * rt + 1, rt};
}

inline LineExtent temporal_limit_extent(double tau, double c, double dt,
                                        const SampleOptions& opts) {
    const double t_max = limit_kernel_mean(tau, c) + (opts.trunc + 3.0) * std::sqrt(tau);
    return {static_cast<int>(std::floor(t_max / dt)) + 1, 0};
}

inline LineExtent temporal_exp_extent(double mu, double dt, const SampleOptions& opts) {
    if (mu <= 1e-14) return {1, 0};
    return {static_cast<int>(std::ceil(opts.exp_trunc * mu / dt)) + 1, 0};
}

struct Box2 {
    std::array<int, 2> lo{}, hi{};
};

/// Axis-aligned spatial box covering the velocity-carried kernel mass over
/// the temporal extent of the kernel.
inline Box2 st_spatial_box(const CovMat2& prod, const Vec2& v, const LineExtent& line,
                           double dx, double dy, double dt, const SampleOptions& opts) {
    const DegenerateFlags deg = classify_product(prod);
    const double t_lo = -line.origin * dt;
    const double t_hi = (line.count - 1 - line.origin) * dt;
    Box2 box;
    const double sp[2] = {dx, dy};
    const double var[2] = {prod.s11, prod.s22};
    const bool dg[2] = {deg.x, deg.y};
    for (int a = 0; a < 2; ++a) {
        const double r = dg[a] ? 0.0 : opts.trunc * std::sqrt(var[a]);
        const double cmin = std::min(v[a] * t_lo, v[a] * t_hi);
        const double cmax = std::max(v[a] * t_lo, v[a] * t_hi);
        box.lo[a] = static_cast<int>(std::floor((cmin - r) / sp[a]));
        box.hi[a] = static_cast<int>(std::ceil((cmax + r) / sp[a]));
    }
    return box;
}

/// Spatial Gaussian samples with effective covariance `prod` on an
/// axis-aligned box [-rx, rx] x [-ry, ry] (cells).  Degenerate directions are
/// realized as single-cell deltas; a rank-one product that is not axis
/// aligned cannot be sampled on the grid and is refused.
inline Kernel2 sample_spatial_product(const CovMat2& prod, double dx, double dy,
                                      const SampleOptions& opts) {
    if (!psd_check(prod))
        throw std::invalid_argument("sample: spatial product is not positive semidefinite");
    const DegenerateFlags deg = classify_product(prod);
    const bool deg_x = deg.x, deg_y = deg.y;
    const std::array<int, 2> radii = spatial_radii(prod, dx, dy, opts);
    const int rx = radii[0], ry = radii[1];
    Kernel2 k;
    k.dims = {2 * rx + 1, 2 * ry + 1};
    k.spacing = {dx, dy};
    k.origin = {rx, ry};
    check_budget(static_cast<std::size_t>(k.dims[0]) * k.dims[1], opts);
    k.values.resize(static_cast<std::size_t>(k.dims[0]) * k.dims[1]);

    std::size_t i = 0;
    for (int iy = -ry; iy <= ry; ++iy) {
        for (int ix = -rx; ix <= rx; ++ix, ++i) {
            const double x = ix * dx, y = iy * dy;
            double val;
            if (deg_x && deg_y) {
                val = 1.0 / (dx * dy);
            } else if (deg_x) {
                val = gauss1d(y, prod.s22) / dx;
            } else if (deg_y) {
                val = gauss1d(x, prod.s11) / dy;
            } else {
                val = affine_gauss({x, y}, {1.0, prod});
            }
            k.values[i] = val;
        }
    }
    if (opts.renormalize) {
        const double m = k.mass();
        for (double& v : k.values) v /= m;
        k.normalized = true;
    }
    return k;
}

/// Temporal line samples (densities) shared by the spatio-temporal samplers:
/// either a non-causal Gaussian centred at zero or a causal profile on
/// t >= 0.  Returns the sample vector and the grid index of t = 0.
struct TemporalLine {
    std::vector<double> values;
    int origin = 0;
};

inline TemporalLine temporal_gaussian(double tau, double dt, const SampleOptions& opts) {
    TemporalLine line;
    if (tau <= 1e-14) {   // temporal delta
        line.values = {1.0 / dt};
        line.origin = 0;
        return line;
    }
    const int rt = static_cast<int>(std::ceil(opts.trunc * std::sqrt(tau) / dt));
    line.values.resize(static_cast<std::size_t>(2 * rt + 1));
    line.origin = rt;
    for (int it = -rt; it <= rt; ++it)
        line.values[static_cast<std::size_t>(it + rt)] = gauss1d(it * dt, tau);
    return line;
}

inline TemporalLine temporal_limit_kernel(double tau, double c, double dt,
                                          const SampleOptions& opts) {
    const double t_max = limit_kernel_mean(tau, c) + (opts.trunc + 3.0) * std::sqrt(tau);
    LimitKernel psi(tau, c, dt, t_max, opts.eps_var);
    TemporalLine line;
    line.values = psi.samples();
    line.origin = 0;
    return line;
}

inline TemporalLine temporal_trunc_exp(double mu, double dt, const SampleOptions& opts) {
    TemporalLine line;
    if (mu <= 1e-14) {
        line.values = {1.0 / dt};
        line.origin = 0;
        return line;
    }
    const int n = static_cast<int>(std::ceil(opts.exp_trunc * mu / dt)) + 1;
    line.values.resize(static_cast<std::size_t>(n));
    line.origin = 0;
    for (int it = 0; it < n; ++it)
        line.values[static_cast<std::size_t>(it)] = trunc_exp(it * dt, mu);
    return line;
}

/// Assemble a 2+1-D kernel from spatial product, velocity and a temporal
/// line: slice t_k carries g(x - v t_k; prod) * line(t_k).
inline Kernel3 assemble_st(const CovMat2& prod, const Vec2& v, const TemporalLine& line,
                           double dx, double dy, double dt, const SampleOptions& opts) {
    const DegenerateFlags deg = classify_product(prod);
    const bool deg_x = deg.x, deg_y = deg.y;

    const int nt = static_cast<int>(line.values.size());
    // a delta that travels leaves the grid between slices
    if (nt > 1 && ((deg_x && v[0] != 0.0) || (deg_y && v[1] != 0.0)))
        throw std::invalid_argument(
            "sample: moving degenerate spatial direction cannot be realized on the grid");
    const Box2 box = st_spatial_box(prod, v, {nt, line.origin}, dx, dy, dt, opts);
    const auto& lo = box.lo;
    const auto& hi = box.hi;

    Kernel3 k;
    k.dims = {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, nt};
    k.spacing = {dx, dy, dt};
    k.origin = {-lo[0], -lo[1], line.origin};
    check_budget(static_cast<std::size_t>(k.dims[0]) * k.dims[1] * k.dims[2], opts);
    k.values.resize(static_cast<std::size_t>(k.dims[0]) * k.dims[1] * k.dims[2]);

    std::size_t i = 0;
    for (int it = 0; it < nt; ++it) {
        const double t = (it - line.origin) * dt;
        const double ht = line.values[static_cast<std::size_t>(it)];
        for (int iy = lo[1]; iy <= hi[1]; ++iy) {
            for (int ix = lo[0]; ix <= hi[0]; ++ix, ++i) {
                const double u0 = ix * dx - v[0] * t;
                const double u1 = iy * dy - v[1] * t;
                double g;
                if (deg_x && deg_y)
                    g = (ix == 0 && iy == 0) ? 1.0 / (dx * dy) : 0.0;
                else if (deg_x)
                    g = (ix == 0) ? gauss1d(u1, prod.s22) / dx : 0.0;
                else if (deg_y)
                    g = (iy == 0) ? gauss1d(u0, prod.s11) / dy : 0.0;
                else
                    g = affine_gauss({u0, u1}, {1.0, prod});
                k.values[i] = g * ht;
            }
        }
    }
    if (opts.renormalize) {
        const double m = k.mass();
        for (double& vv : k.values) vv /= m;
        k.normalized = true;
    }
    return k;
}

} // namespace detail

/// Sample the purely spatial affine Gaussian kernel.
inline Kernel2 sample(const SpatialParams& p, double dx, double dy,
                      const SampleOptions& opts = {}) {
    p.validate();
    return detail::sample_spatial_product(p.product(), dx, dy, opts);
}

/// Sample a spatial incremental kernel given its effective covariance product.
inline Kernel2 sample(const SpatialIncrement& inc, double dx, double dy,
                      const SampleOptions& opts = {}) {
    if (!inc.feasible) throw std::invalid_argument("sample: infeasible spatial increment");
    return detail::sample_spatial_product(inc.delta_prod, dx, dy, opts);
}

/// Sample the joint spatio-temporal kernel (Gaussian or time-causal temporal
/// smoothing, depending on the parameters).
inline Kernel3 sample(const STParams& p, double dx, double dy, double dt,
                      const SampleOptions& opts = {}) {
    p.validate();
    const detail::TemporalLine line =
        p.time_causal() ? detail::temporal_limit_kernel(p.tau, *p.c, dt, opts)
                        : detail::temporal_gaussian(p.tau, dt, opts);
    return detail::assemble_st(p.product(), p.v, line, dx, dy, dt, opts);
}

/// Sample a non-causal spatio-temporal incremental kernel.
inline Kernel3 sample(const STIncrement& inc, double dx, double dy, double dt,
                      const SampleOptions& opts = {}) {
    if (!inc.feasible) throw std::invalid_argument("sample: infeasible spatio-temporal increment");
    const detail::TemporalLine line = detail::temporal_gaussian(inc.delta_tau, dt, opts);
    return detail::assemble_st(inc.delta_prod, inc.delta_v, line, dx, dy, dt, opts);
}

/// Sample a time-causal incremental kernel (affine Gaussian times truncated
/// exponential).
inline Kernel3 sample(const TimeCausalIncrement& inc, double dx, double dy, double dt,
                      const SampleOptions& opts = {}) {
    if (!inc.feasible) throw std::invalid_argument("sample: infeasible time-causal increment");
    const detail::TemporalLine line = detail::temporal_trunc_exp(inc.mu, dt, opts);
    return detail::assemble_st(inc.delta_prod, inc.v, line, dx, dy, dt, opts);
}

// Support extents that `sample` would produce, without materializing the
// values; the planner's cost model is the product of these extents times the
// field size.

inline std::array<int, 2> kernel_extents(const CovMat2& spatial_prod, double dx, double dy,
                                         const SampleOptions& opts = {}) {
    const auto r = detail::spatial_radii(spatial_prod, dx, dy, opts);
    return {2 * r[0] + 1, 2 * r[1] + 1};
}

namespace detail {
inline std::array<int, 3> st_extents(const CovMat2& prod, const Vec2& v, const LineExtent& line,
                                     double dx, double dy, double dt, const SampleOptions& opts) {
    const Box2 box = st_spatial_box(prod, v, line, dx, dy, dt, opts);
    return {box.hi[0] - box.lo[0] + 1, box.hi[1] - box.lo[1] + 1, line.count};
}
} // namespace detail

inline std::array<int, 3> kernel_extents(const STParams& p, double dx, double dy, double dt,
                                         const SampleOptions& opts = {}) {
    const detail::LineExtent line = p.time_causal()
                                        ? detail::temporal_limit_extent(p.tau, *p.c, dt, opts)
                                        : detail::temporal_gaussian_extent(p.tau, dt, opts);
    return detail::st_extents(p.product(), p.v, line, dx, dy, dt, opts);
}

inline std::array<int, 3> kernel_extents(const STIncrement& inc, double dx, double dy, double dt,
                                         const SampleOptions& opts = {}) {
    const detail::LineExtent line = detail::temporal_gaussian_extent(inc.delta_tau, dt, opts);
    return detail::st_extents(inc.delta_prod, inc.delta_v, line, dx, dy, dt, opts);
}

inline std::array<int, 3> kernel_extents(const TimeCausalIncrement& inc, double dx, double dy,
                                         double dt, const SampleOptions& opts = {}) {
    const detail::LineExtent line = detail::temporal_exp_extent(inc.mu, dt, opts);
    return detail::st_extents(inc.delta_prod, inc.v, line, dx, dy, dt, opts);
}

// ---------------------------------------------------------------------------
// convolution

namespace detail {

inline void check_spacing(double a, double b) {
    if (std::abs(a - b) > 1e-12 * std::max(std::abs(a), std::abs(b)))
        throw std::invalid_argument("convolve: grid spacings do not match");
}

template <typename Fn>
inline void parallel_rows(std::int64_t rows, int threads, Fn&& fn) {
    if (threads <= 1 || rows <= 1) {
        for (std::int64_t r = 0; r < rows; ++r) fn(r);
        return;
    }
    const int nthreads = std::min<std::int64_t>(threads, rows);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int tid = 0; tid < nthreads; ++tid) {
        pool.emplace_back([=]() {
            const std::int64_t lo = rows * tid / nthreads;
            const std::int64_t hi = rows * (tid + 1) / nthreads;
            for (std::int64_t r = lo; r < hi; ++r) fn(r);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace detail

/// Discrete convolution of a field with a sampled kernel (density samples,
/// so the sum is scaled by the kernel cell volume).  With zero_pad the output
/// matches the input frame; with interior_only the output covers only the
/// cells whose every kernel tap reads valid data, and its `offset` records
/// the position of that region in the input frame.  The per-cell summation
/// order is a fixed function of the kernel alone, so results are independent
/// of the thread count.
inline Volume convolve(const Volume& f, const Kernel3& k, Boundary boundary,
                       int threads = 1) {
    for (int a = 0; a < 3; ++a) detail::check_spacing(f.spacing[a], k.spacing[a]);
    const int nx = f.dims[0], ny = f.dims[1], nt = f.dims[2];
    const int kx = k.dims[0], ky = k.dims[1], kt = k.dims[2];

    // kernel reversed so inner loops read both arrays ascending
    std::vector<double> kr(k.values.size());
    const double vol = k.cell_volume();
    for (int it = 0; it < kt; ++it)
        for (int iy = 0; iy < ky; ++iy)
            for (int ix = 0; ix < kx; ++ix)
                kr[(static_cast<std::size_t>(kt - 1 - it) * ky + (ky - 1 - iy)) * kx +
                   (kx - 1 - ix)] =
                    k.values[(static_cast<std::size_t>(it) * ky + iy) * kx + ix] * vol;

    if (boundary == Boundary::zero_pad) {
        const int px = kx - 1, py = ky - 1, pt = kt - 1;
        Volume padded = Volume::zeros({nx + px, ny + py, nt + pt}, f.spacing);
        for (int it = 0; it < nt; ++it)
            for (int iy = 0; iy < ny; ++iy)
                std::copy_n(&f.values[f.index(0, iy, it)], nx,
                            &padded.values[padded.index(px - k.origin[0],
                                                        iy + py - k.origin[1],
                                                        it + pt - k.origin[2])]);
        Volume out = Volume::zeros(f.dims, f.spacing);
        out.offset = f.offset;
        const int pnx = padded.dims[0];
        detail::parallel_rows(static_cast<std::int64_t>(nt) * ny, threads, [&](std::int64_t row) {
            const int ot = static_cast<int>(row / ny);
            const int oy = static_cast<int>(row % ny);
            double* orow = &out.values[out.index(0, oy, ot)];
            for (int jt = 0; jt < kt; ++jt) {
                for (int jy = 0; jy < ky; ++jy) {
                    const double* prow = &padded.values[padded.index(0, oy + jy, ot + jt)];
                    const double* krow = &kr[(static_cast<std::size_t>(jt) * ky + jy) * kx];
                    for (int jx = 0; jx < kx; ++jx) {
                        const double kv = krow[jx];
                        const double* pr = prow + jx;
                        for (int ox = 0; ox < nx; ++ox) orow[ox] += kv * pr[ox];
                    }
                }
            }
            (void)pnx;
        });
        detail::mac_counter_ref().fetch_add(static_cast<std::uint64_t>(out.size()) * k.size());
        return out;
    }

    // interior_only
    const int onx = nx - kx + 1, ony = ny - ky + 1, ont = nt - kt + 1;
    if (onx <= 0 || ony <= 0 || ont <= 0)
        throw std::invalid_argument("convolve: field too small for interior-only output");
    Volume out = Volume::zeros({onx, ony, ont}, f.spacing);
    out.offset = {f.offset[0] + kx - 1 - k.origin[0], f.offset[1] + ky - 1 - k.origin[1],
                  f.offset[2] + kt - 1 - k.origin[2]};
    detail::parallel_rows(static_cast<std::int64_t>(ont) * ony, threads, [&](std::int64_t row) {
        const int ot = static_cast<int>(row / ony);
        const int oy = static_cast<int>(row % ony);
        double* orow = &out.values[out.index(0, oy, ot)];
        for (int jt = 0; jt < kt; ++jt) {
            for (int jy = 0; jy < ky; ++jy) {
                const double* frow = &f.values[f.index(0, oy + jy, ot + jt)];
                const double* krow = &kr[(static_cast<std::size_t>(jt) * ky + jy) * kx];
                for (int jx = 0; jx < kx; ++jx) {
                    const double kv = krow[jx];
                    const double* fr = frow + jx;
                    for (int ox = 0; ox < onx; ++ox) orow[ox] += kv * fr[ox];
                }
            }
        }
    });
    detail::mac_counter_ref().fetch_add(static_cast<std::uint64_t>(out.size()) * k.size());
    return out;
}

inline Image convolve(const Image& f, const Kernel2& k, Boundary boundary, int threads = 1) {
    // reuse the 3-D path with a singleton temporal axis
    Volume f3;
    f3.dims = {f.dims[0], f.dims[1], 1};
    f3.spacing = {f.spacing[0], f.spacing[1], 1.0};
    f3.offset = {f.offset[0], f.offset[1], 0};
    f3.values = f.values;
    Kernel3 k3;
    k3.dims = {k.dims[0], k.dims[1], 1};
    k3.spacing = {k.spacing[0], k.spacing[1], 1.0};
    k3.origin = {k.origin[0], k.origin[1], 0};
    k3.normalized = k.normalized;
    k3.values = k.values;
    Volume o3 = convolve(f3, k3, boundary, threads);
    Image out;
    out.dims = {o3.dims[0], o3.dims[1]};
    out.spacing = f.spacing;
    out.offset = {o3.offset[0], o3.offset[1]};
    out.values = std::move(o3.values);
    return out;
}

/// Crop a sub-grid; `lo` is relative to the grid's own frame, and offsets
/// accumulate so cropped fields stay aligned.
template <int N>
inline Grid<N> crop(const Grid<N>& g, const std::type_identity_t<std::array<int, N>>& lo,
                    const std::type_identity_t<std::array<int, N>>& dims) {
    for (int a = 0; a < N; ++a)
        if (lo[a] < 0 || dims[a] <= 0 || lo[a] + dims[a] > g.dims[a])
            throw std::invalid_argument("crop: region out of range");
    Grid<N> out = Grid<N>::zeros(dims, g.spacing);
    for (int a = 0; a < N; ++a) out.offset[a] = g.offset[a] + lo[a];
    if constexpr (N == 2) {
        for (int iy = 0; iy < dims[1]; ++iy)
            std::copy_n(&g.values[g.index(lo[0], lo[1] + iy)], dims[0],
                        &out.values[out.index(0, iy)]);
    } else {
        for (int it = 0; it < dims[2]; ++it)
            for (int iy = 0; iy < dims[1]; ++iy)
                std::copy_n(&g.values[g.index(lo[0], lo[1] + iy, lo[2] + it)], dims[0],
                            &out.values[out.index(0, iy, it)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// derivative operators

struct DerivOp {
    enum class Kind { directional, gradient, hessian, velocity_time, mixed };
    Kind kind = Kind::directional;
    int order = 0;        ///< directional derivative order m
    double phi = 0.0;     ///< directional derivative orientation
    int t_order = 0;      ///< velocity-adapted temporal order n
    Vec2 v = {0.0, 0.0};  ///< velocity for the adapted temporal derivative

    static DerivOp identity() { return {}; }
    static DerivOp directional(int m, double phi) {
        DerivOp op;
        op.kind = Kind::directional;
        op.order = m;
        op.phi = phi;
        return op;
    }
    static DerivOp gradient() { DerivOp op; op.kind = Kind::gradient; return op; }
    static DerivOp hessian() { DerivOp op; op.kind = Kind::hessian; return op; }
    static DerivOp velocity_time(int n, const Vec2& v) {
        DerivOp op;
        op.kind = Kind::velocity_time;
        op.t_order = n;
        op.v = v;
        return op;
    }
    static DerivOp mixed(int m, double phi, int n, const Vec2& v) {
        DerivOp op;
        op.kind = Kind::mixed;
        op.order = m;
        op.phi = phi;
        op.t_order = n;
        op.v = v;
        return op;
    }
};

/// A small finite-difference stencil over up to 3 axes; weights are indexed
/// by signed offsets from the centre and already include the 1/spacing^m
/// factors.
struct Stencil3 {
    std::array<int, 3> radius{};
    std::vector<double> w;   // dims (2r0+1) x (2r1+1) x (2r2+1), x fastest

    std::size_t idx(int ix, int iy, int it) const {
        const int nx = 2 * radius[0] + 1, ny = 2 * radius[1] + 1;
        return (static_cast<std::size_t>(it + radius[2]) * ny + (iy + radius[1])) * nx +
               (ix + radius[0]);
    }
    double& at(int ix, int iy, int it) { return w[idx(ix, iy, it)]; }
    double at(int ix, int iy, int it) const { return w[idx(ix, iy, it)]; }

    static Stencil3 delta() {
        Stencil3 s;
        s.w = {1.0};
        return s;
    }

    Stencil3 scaled(double a) const {
        Stencil3 s = *this;
        for (double& x : s.w) x *= a;
        return s;
    }

    /// Sum of two stencils (radii expand to cover both).
    Stencil3 plus(const Stencil3& o) const {
        Stencil3 s;
        for (int a = 0; a < 3; ++a) s.radius[a] = std::max(radius[a], o.radius[a]);
        s.w.assign(static_cast<std::size_t>(2 * s.radius[0] + 1) * (2 * s.radius[1] + 1) *
                       (2 * s.radius[2] + 1), 0.0);
        auto add = [&](const Stencil3& src) {
            for (int it = -src.radius[2]; it <= src.radius[2]; ++it)
                for (int iy = -src.radius[1]; iy <= src.radius[1]; ++iy)
                    for (int ix = -src.radius[0]; ix <= src.radius[0]; ++ix)
                        s.at(ix, iy, it) += src.at(ix, iy, it);
        };
        add(*this);
        add(o);
        return s;
    }

    /// Composition (discrete convolution) of two stencils.
    Stencil3 compose(const Stencil3& o) const {
        Stencil3 s;
        for (int a = 0; a < 3; ++a) s.radius[a] = radius[a] + o.radius[a];
        s.w.assign(static_cast<std::size_t>(2 * s.radius[0] + 1) * (2 * s.radius[1] + 1) *
                       (2 * s.radius[2] + 1), 0.0);
        for (int it = -radius[2]; it <= radius[2]; ++it)
            for (int iy = -radius[1]; iy <= radius[1]; ++iy)
                for (int ix = -radius[0]; ix <= radius[0]; ++ix) {
                    const double a = at(ix, iy, it);
                    if (a == 0.0) continue;
                    for (int jt = -o.radius[2]; jt <= o.radius[2]; ++jt)
                        for (int jy = -o.radius[1]; jy <= o.radius[1]; ++jy)
                            for (int jx = -o.radius[0]; jx <= o.radius[0]; ++jx)
                                s.at(ix + jx, iy + jy, it + jt) += a * o.at(jx, jy, jt);
                }
        return s;
    }
};

namespace detail {

/// Central-difference stencil for d^m/dx^m along one axis (axis 0 = x1,
/// 1 = x2, 2 = t) at second- or fourth-order accuracy.
inline Stencil3 axis_stencil(int axis, int m, double spacing, int accuracy = 2) {
    if (m < 0 || m > 4) throw std::invalid_argument("axis_stencil: order out of range");
    if (accuracy != 2 && accuracy != 4)
        throw std::invalid_argument("axis_stencil: accuracy must be 2 or 4");
    std::vector<double> taps;
    switch (m) {
        case 0: taps = {1.0}; break;
        case 1:
            taps = accuracy == 2 ? std::vector<double>{-0.5, 0.0, 0.5}
                                 : std::vector<double>{1.0 / 12, -2.0 / 3, 0.0, 2.0 / 3, -1.0 / 12};
            break;
        case 2:
            taps = accuracy == 2 ? std::vector<double>{1.0, -2.0, 1.0}
                                 : std::vector<double>{-1.0 / 12, 4.0 / 3, -5.0 / 2, 4.0 / 3, -1.0 / 12};
            break;
        case 3: taps = {-0.5, 1.0, 0.0, -1.0, 0.5}; break;
        case 4: taps = {1.0, -4.0, 6.0, -4.0, 1.0}; break;
    }
    const int r = static_cast<int>(taps.size() / 2);
    Stencil3 s;
    s.radius[axis] = r;
    s.w.assign(taps.size(), 0.0);
    const double scale = 1.0 / std::pow(spacing, m);
    for (int i = -r; i <= r; ++i) {
        if (axis == 0) s.at(i, 0, 0) = taps[static_cast<std::size_t>(i + r)] * scale;
        else if (axis == 1) s.at(0, i, 0) = taps[static_cast<std::size_t>(i + r)] * scale;
        else s.at(0, 0, i) = taps[static_cast<std::size_t>(i + r)] * scale;
    }
    return s;
}

inline long binomial(int n, int k) {
    long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

/// Directional derivative (cos phi d_x1 + sin phi d_x2)^m expanded binomially.
inline Stencil3 directional_stencil(int m, double phi, double dx, double dy, int accuracy = 2) {
    const double c = std::cos(phi), sn = std::sin(phi);
    Stencil3 s;
    bool first = true;
    for (int k = 0; k <= m; ++k) {
        const double coeff = static_cast<double>(binomial(m, k)) *
                             std::pow(c, m - k) * std::pow(sn, k);
        Stencil3 term = axis_stencil(0, m - k, dx, accuracy)
                            .compose(axis_stencil(1, k, dy, accuracy))
                            .scaled(coeff);
        s = first ? term : s.plus(term);
        first = false;
    }
    return s;
}

/// Velocity-adapted temporal derivative (d_t + v1 d_x1 + v2 d_x2)^n built by
/// composing the first-order operator n times.
inline Stencil3 velocity_stencil(int n, const Vec2& v, double dx, double dy, double dt,
                                 int accuracy = 2) {
    Stencil3 first = axis_stencil(2, 1, dt, accuracy)
                         .plus(axis_stencil(0, 1, dx, accuracy).scaled(v[0]))
                         .plus(axis_stencil(1, 1, dy, accuracy).scaled(v[1]));
    Stencil3 s = Stencil3::delta();
    for (int i = 0; i < n; ++i) s = s.compose(first);
    return s;
}

template <int N>
inline Grid<N> apply_stencil(const Grid<N>& f, const Stencil3& s) {
    if constexpr (N == 2) {
        if (s.radius[2] != 0)
            throw std::invalid_argument("apply_deriv: temporal stencil on a 2-D field");
    }
    for (int a = 0; a < N; ++a)
        if (f.dims[a] <= 2 * s.radius[a])
            throw std::invalid_argument("apply_deriv: field too small for the stencil");
    Grid<N> out = Grid<N>::zeros(f.dims, f.spacing);
    out.offset = f.offset;
    const int rx = s.radius[0], ry = s.radius[1], rt = s.radius[2];
    const int nx = f.dims[0], ny = f.dims[1];
    const int nt = (N == 3) ? f.dims[2] : 1;
    for (int ot = rt; ot < nt - rt; ++ot) {
        for (int oy = ry; oy < ny - ry; ++oy) {
            for (int ox = rx; ox < nx - rx; ++ox) {
                double acc = 0.0;
                for (int jt = -rt; jt <= rt; ++jt)
                    for (int jy = -ry; jy <= ry; ++jy)
                        for (int jx = -rx; jx <= rx; ++jx) {
                            const double w = s.at(jx, jy, jt);
                            if (w == 0.0) continue;
                            if constexpr (N == 2)
                                acc += w * f.at(ox + jx, oy + jy);
                            else
                                acc += w * f.at(ox + jx, oy + jy, ot + jt);
                        }
                if constexpr (N == 2)
                    out.at(ox, oy) = acc;
                else
                    out.at(ox, oy, ot) = acc;
            }
        }
    }
    return out;
}

template <int N>
inline std::vector<Stencil3> op_stencils(const DerivOp& op, const std::array<double, N>& spacing,
                                         int accuracy) {
    const double dx = spacing[0], dy = spacing[1];
    const double dt = (N == 3) ? spacing[2] : 1.0;
    switch (op.kind) {
        case DerivOp::Kind::directional:
            return {directional_stencil(op.order, op.phi, dx, dy, accuracy)};
        case DerivOp::Kind::gradient:
            return {axis_stencil(0, 1, dx, accuracy), axis_stencil(1, 1, dy, accuracy)};
        case DerivOp::Kind::hessian:
            return {axis_stencil(0, 2, dx, accuracy),
                    axis_stencil(0, 1, dx, accuracy).compose(axis_stencil(1, 1, dy, accuracy)),
                    axis_stencil(1, 2, dy, accuracy)};
        case DerivOp::Kind::velocity_time:
            if (N == 2) throw std::invalid_argument("apply_deriv: temporal operator on a 2-D field");
            return {velocity_stencil(op.t_order, op.v, dx, dy, dt, accuracy)};
        case DerivOp::Kind::mixed:
            if (N == 2) throw std::invalid_argument("apply_deriv: temporal operator on a 2-D field");
            return {directional_stencil(op.order, op.phi, dx, dy, accuracy)
                        .compose(velocity_stencil(op.t_order, op.v, dx, dy, dt, accuracy))};
    }
    throw std::invalid_argument("apply_deriv: unknown operator");
}

} // namespace detail

/// Apply a derivative operator by central differences.  Border cells that the
/// stencil cannot reach are left at zero; gradient and Hessian return one
/// field per component (x1, x2) and (x1x1, x1x2, x2x2).
template <int N>
inline std::vector<Grid<N>> apply_deriv(const Grid<N>& f, const DerivOp& op, int accuracy = 2) {
    std::vector<Grid<N>> out;
    for (const Stencil3& s : detail::op_stencils<N>(op, f.spacing, accuracy))
        out.push_back(detail::apply_stencil(f, s));
    return out;
}

/// Differentiate a sampled kernel: the kernel grid grows by the stencil
/// radius, so nothing is truncated (the kernel is compactly supported).
template <int N>
inline std::vector<SampledKernel<N>> apply_deriv(const SampledKernel<N>& k, const DerivOp& op,
                                                 int accuracy = 2) {
    std::vector<SampledKernel<N>> out;
    for (const Stencil3& s : detail::op_stencils<N>(op, k.spacing, accuracy)) {
        Grid<N> g;
        std::array<int, N> pad{};
        for (int a = 0; a < N; ++a) {
            // the derivative support grows by one stencil radius; pad twice
            // that so the stencil-valid interior covers all of it
            pad[a] = 2 * s.radius[a];
            g.dims[a] = k.dims[a] + 2 * pad[a];
            g.spacing[a] = k.spacing[a];
        }
        g.values.assign([&] {
            std::size_t n = 1;
            for (int a = 0; a < N; ++a) n *= static_cast<std::size_t>(g.dims[a]);
            return n;
        }(), 0.0);
        if constexpr (N == 2) {
            for (int iy = 0; iy < k.dims[1]; ++iy)
                std::copy_n(&k.values[static_cast<std::size_t>(iy) * k.dims[0]], k.dims[0],
                            &g.values[g.index(pad[0], iy + pad[1])]);
        } else {
            for (int it = 0; it < k.dims[2]; ++it)
                for (int iy = 0; iy < k.dims[1]; ++iy)
                    std::copy_n(
                        &k.values[(static_cast<std::size_t>(it) * k.dims[1] + iy) * k.dims[0]],
                        k.dims[0], &g.values[g.index(pad[0], iy + pad[1], it + pad[2])]);
        }
        Grid<N> d = detail::apply_stencil(g, s);
        SampledKernel<N> dk;
        dk.dims = d.dims;
        dk.spacing = k.spacing;
        for (int a = 0; a < N; ++a) dk.origin[a] = k.origin[a] + pad[a];
        dk.values = std::move(d.values);
        out.push_back(std::move(dk));
    }
    return out;
}

// ---------------------------------------------------------------------------
// receptive field responses and cascades

/// Receptive field response: derivative of the smoothed field.
inline std::vector<Image> rf_response(const Image& f, const SpatialParams& p, const DerivOp& op,
                                      const SampleOptions& opts = {}, int threads = 1) {
    const Image smoothed = convolve(f, sample(p, f.spacing[0], f.spacing[1], opts),
                                    Boundary::zero_pad, threads);
    return apply_deriv(smoothed, op);
}

inline std::vector<Volume> rf_response(const Volume& f, const STParams& p, const DerivOp& op,
                                       const SampleOptions& opts = {}, int threads = 1) {
    const Volume smoothed = convolve(
        f, sample(p, f.spacing[0], f.spacing[1], f.spacing[2], opts), Boundary::zero_pad, threads);
    return apply_deriv(smoothed, op);
}

/// Run a chain of feasible spatial increments: smooth with the base kernel,
/// then convolve with each incremental kernel in turn.
inline Image run_cascade(const Image& f, const SpatialParams& base,
                         const std::vector<SpatialIncrement>& incs,
                         const SampleOptions& opts = {}, int threads = 1) {
    Image cur = convolve(f, sample(base, f.spacing[0], f.spacing[1], opts),
                         Boundary::zero_pad, threads);
    for (const auto& inc : incs) {
        if (!inc.feasible) throw std::invalid_argument("run_cascade: infeasible increment");
        cur = convolve(cur, sample(inc, f.spacing[0], f.spacing[1], opts),
                       Boundary::zero_pad, threads);
    }
    return cur;
}

inline Volume run_cascade(const Volume& f, const STParams& base,
                          const std::vector<STIncrement>& incs,
                          const SampleOptions& opts = {}, int threads = 1) {
    Volume cur = convolve(f, sample(base, f.spacing[0], f.spacing[1], f.spacing[2], opts),
                          Boundary::zero_pad, threads);
    for (const auto& inc : incs) {
        if (!inc.feasible) throw std::invalid_argument("run_cascade: infeasible increment");
        cur = convolve(cur, sample(inc, f.spacing[0], f.spacing[1], f.spacing[2], opts),
                       Boundary::zero_pad, threads);
    }
    return cur;
}

inline Volume run_cascade(const Volume& f, const STParams& base,
                          const std::vector<TimeCausalIncrement>& incs,
                          const SampleOptions& opts = {}, int threads = 1) {
    Volume cur = convolve(f, sample(base, f.spacing[0], f.spacing[1], f.spacing[2], opts),
                          Boundary::zero_pad, threads);
    for (const auto& inc : incs) {
        if (!inc.feasible) throw std::invalid_argument("run_cascade: infeasible increment");
        cur = convolve(cur, sample(inc, f.spacing[0], f.spacing[1], f.spacing[2], opts),
                       Boundary::zero_pad, threads);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// field comparison

struct CompareResult {
    double rel_l2 = 0.0;
    double rel_linf = 0.0;
};

/// Relative L2 and Linf differences over the interior obtained by trimming
/// `margin` cells per axis; the second field is the reference for the
/// normalization.
template <int N>
inline CompareResult compare(const Grid<N>& a, const Grid<N>& b,
                             const std::type_identity_t<std::array<int, N>>& margin = {}) {
    if (a.dims != b.dims) throw std::invalid_argument("compare: field shapes differ");
    for (int ax = 0; ax < N; ++ax)
        if (2 * margin[ax] >= a.dims[ax])
            throw std::invalid_argument("compare: margin leaves no interior");
    double diff2 = 0.0, ref2 = 0.0, diff_max = 0.0, ref_max = 0.0;
    auto visit = [&](std::size_t ia) {
        const double d = a.values[ia] - b.values[ia];
        diff2 += d * d;
        ref2 += b.values[ia] * b.values[ia];
        diff_max = std::max(diff_max, std::abs(d));
        ref_max = std::max(ref_max, std::abs(b.values[ia]));
    };
    if constexpr (N == 2) {
        for (int iy = margin[1]; iy < a.dims[1] - margin[1]; ++iy)
            for (int ix = margin[0]; ix < a.dims[0] - margin[0]; ++ix) visit(a.index(ix, iy));
    } else {
        for (int it = margin[2]; it < a.dims[2] - margin[2]; ++it)
            for (int iy = margin[1]; iy < a.dims[1] - margin[1]; ++iy)
                for (int ix = margin[0]; ix < a.dims[0] - margin[0]; ++ix)
                    visit(a.index(ix, iy, it));
    }
    CompareResult r;
    r.rel_l2 = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
    r.rel_linf = ref_max > 0.0 ? diff_max / ref_max : diff_max;
    return r;
}

} // namespace rfcascade
