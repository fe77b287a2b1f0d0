#include <gtest/gtest.h>

#include <random>

#include "rfcascade/hermite.hpp"
#include "testutil.hpp"

using namespace rfcascade;
using rfctest::fd1;
using rfctest::fd2;
using rfctest::fd_mixed;

namespace {

const std::vector<DerivIndex> kSpatialTable = {
    DerivIndex::d_x1,  DerivIndex::d_x2,  DerivIndex::d_x1x1, DerivIndex::d_x1x2,
    DerivIndex::d_x2x2, DerivIndex::p_s,  DerivIndex::p_s11,  DerivIndex::p_s12,
    DerivIndex::p_s22};

const std::vector<DerivIndex> kStIsoTable = {
    DerivIndex::d_x1,     DerivIndex::d_x2,     DerivIndex::d_t,      DerivIndex::d_tbar,
    DerivIndex::d_x1x1,   DerivIndex::d_x1x2,   DerivIndex::d_x2x2,   DerivIndex::d_x1t,
    DerivIndex::d_x2t,    DerivIndex::d_x1tbar, DerivIndex::d_x2tbar, DerivIndex::d_tt,
    DerivIndex::d_tbartbar, DerivIndex::p_s,    DerivIndex::p_tau,    DerivIndex::p_v1,
    DerivIndex::p_v2};

const std::vector<DerivIndex> kStAffineTable = {
    DerivIndex::d_x1,     DerivIndex::d_x2,     DerivIndex::d_t,       DerivIndex::d_tbar,
    DerivIndex::d_x1x1,   DerivIndex::d_x1x2,   DerivIndex::d_x2x2,    DerivIndex::d_x1tbar,
    DerivIndex::d_x2tbar, DerivIndex::d_tbartbar, DerivIndex::p_s,     DerivIndex::p_s11,
    DerivIndex::p_s12,    DerivIndex::p_s22,    DerivIndex::p_tau,     DerivIndex::p_v1,
    DerivIndex::p_v2};

const std::vector<DerivIndex> kTimeCausalTable = {
    DerivIndex::d_x1,  DerivIndex::d_x2,  DerivIndex::d_x1x1, DerivIndex::d_x1x2,
    DerivIndex::d_x2x2, DerivIndex::p_s,  DerivIndex::p_s11,  DerivIndex::p_s12,
    DerivIndex::p_s22, DerivIndex::p_v1,  DerivIndex::p_v2};

// finite-difference derivative of the non-causal spatio-temporal kernel with
// respect to any supported index; the independent oracle for the tables
double fd_st(DerivIndex idx, const Vec2& x, double t, const STParams& p) {
    auto K = [&](const Vec2& xx, double tt, const STParams& pp) {
        return st_gauss(xx, tt, pp);
    };
    const double hx = 1e-4 * std::sqrt(p.s);
    const double ht = 1e-4 * std::sqrt(p.tau);
    const double hp = 1e-4;
    switch (idx) {
        case DerivIndex::d_x1:
            return fd1([&](double h) { return K({x[0] + h, x[1]}, t, p); }, hx);
        case DerivIndex::d_x2:
            return fd1([&](double h) { return K({x[0], x[1] + h}, t, p); }, hx);
        case DerivIndex::d_t:
            return fd1([&](double h) { return K(x, t + h, p); }, ht);
        case DerivIndex::d_tbar:
            return fd1([&](double h) {
                return K({x[0] + p.v[0] * h, x[1] + p.v[1] * h}, t + h, p);
            }, ht);
        case DerivIndex::d_x1x1:
            return fd2([&](double h) { return K({x[0] + h, x[1]}, t, p); }, hx);
        case DerivIndex::d_x2x2:
            return fd2([&](double h) { return K({x[0], x[1] + h}, t, p); }, hx);
        case DerivIndex::d_x1x2:
            return fd_mixed([&](double a, double b) { return K({x[0] + a, x[1] + b}, t, p); },
                            hx, hx);
        case DerivIndex::d_x1t:
            return fd_mixed([&](double a, double b) { return K({x[0] + a, x[1]}, t + b, p); },
                            hx, ht);
        case DerivIndex::d_x2t:
            return fd_mixed([&](double a, double b) { return K({x[0], x[1] + a}, t + b, p); },
                            hx, ht);
        case DerivIndex::d_x1tbar:
            return fd_mixed(
                [&](double a, double b) {
                    return K({x[0] + a + p.v[0] * b, x[1] + p.v[1] * b}, t + b, p);
                },
                hx, ht);
        case DerivIndex::d_x2tbar:
            return fd_mixed(
                [&](double a, double b) {
                    return K({x[0] + p.v[0] * b, x[1] + a + p.v[1] * b}, t + b, p);
                },
                hx, ht);
        case DerivIndex::d_tt:
            return fd2([&](double h) { return K(x, t + h, p); }, ht);
        case DerivIndex::d_tbartbar:
            return fd2([&](double h) {
                return K({x[0] + p.v[0] * h, x[1] + p.v[1] * h}, t + h, p);
            }, ht);
        case DerivIndex::p_s: {
            return fd1([&](double h) {
                STParams q = p;
                q.s += h;
                return K(x, t, q);
            }, hp * p.s);
        }
        case DerivIndex::p_tau: {
            return fd1([&](double h) {
                STParams q = p;
                q.tau += h;
                return K(x, t, q);
            }, hp * p.tau);
        }
        case DerivIndex::p_s11:
            return fd1([&](double h) {
                STParams q = p;
                q.sigma.s11 += h;
                return K(x, t, q);
            }, hp);
        case DerivIndex::p_s12:
            return fd1([&](double h) {
                STParams q = p;
                q.sigma.s12 += h;
                return K(x, t, q);
            }, hp);
        case DerivIndex::p_s22:
            return fd1([&](double h) {
                STParams q = p;
                q.sigma.s22 += h;
                return K(x, t, q);
            }, hp);
        case DerivIndex::p_v1:
            return fd1([&](double h) {
                STParams q = p;
                q.v[0] += h;
                return K(x, t, q);
            }, hp);
        case DerivIndex::p_v2:
            return fd1([&](double h) {
                STParams q = p;
                q.v[1] += h;
                return K(x, t, q);
            }, hp);
    }
    throw std::logic_error("fd_st: unhandled index");
}

} // namespace

TEST(HermiteHe, RecurrenceValues) {
    EXPECT_DOUBLE_EQ(hermite_he(0, 3.7), 1.0);
    EXPECT_DOUBLE_EQ(hermite_he(1, 3.7), 3.7);
    EXPECT_DOUBLE_EQ(hermite_he(2, 2.0), 3.0);    // x^2 - 1
    EXPECT_DOUBLE_EQ(hermite_he(3, 1.0), -2.0);   // x^3 - 3x
    EXPECT_DOUBLE_EQ(hermite_he(4, 2.0), 16.0 - 24.0 + 3.0);
    EXPECT_THROW(hermite_he(-1, 0.0), std::invalid_argument);
}

TEST(Gauss1dDeriv, ClosedFormVsFiniteDifference) {
    EXPECT_DOUBLE_EQ(gauss1d_deriv(1, 0.0, 1.0), 0.0);
    EXPECT_NEAR(gauss1d_deriv(2, 0.0, 1.0), -0.3989422804014327, 1e-15);
    EXPECT_NEAR(gauss1d_deriv(1, 1.0, 1.0), -gauss1d(1.0, 1.0), 1e-15);

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> xd(-3.0, 3.0), sd(0.4, 2.0);
    for (int i = 0; i < 100; ++i) {
        const double x = xd(rng), s = sd(rng);
        for (int m = 1; m <= 4; ++m) {
            auto f = [&](double h) { return gauss1d(x + h, s); };
            double fd;
            if (m == 1) fd = fd1(f, 1e-4 * std::sqrt(s));
            else if (m == 2) fd = fd2(f, 1e-4 * std::sqrt(s));
            else if (m == 3) fd = fd1([&](double h) { return gauss1d_deriv(2, x + h, s); },
                                      1e-4 * std::sqrt(s));
            else fd = fd2([&](double h) { return gauss1d_deriv(2, x + h, s); },
                          1e-4 * std::sqrt(s));
            EXPECT_NEAR(gauss1d_deriv(m, x, s), fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(RatioSpatial, FrozenExamples) {
    // d_x1 at Sigma = I: -x1 / s
    EXPECT_NEAR(ratio_spatial(DerivIndex::d_x1, {2.0, 0.0}, {1.0, CovMat2::identity()}), -2.0,
                1e-14);
    // d_s at Sigma = I reduces to (x1^2 + x2^2 - 2s) / (2 s^2)
    EXPECT_NEAR(ratio_spatial(DerivIndex::p_s, {0.0, 0.0}, {1.0, CovMat2::identity()}), -1.0,
                1e-14);
    // d_S12 at the origin with Sigma = I vanishes
    EXPECT_NEAR(ratio_spatial(DerivIndex::p_s12, {0.0, 0.0}, {1.0, CovMat2::identity()}), 0.0,
                1e-14);
    EXPECT_THROW(ratio_spatial(DerivIndex::p_tau, {0.0, 0.0}, {1.0, CovMat2::identity()}),
                 std::invalid_argument);
    // near-singular covariance refused
    EXPECT_THROW(
        ratio_spatial(DerivIndex::d_x1, {0.0, 0.0}, {1.0, {1.0, 0.99999999999, 1.0}}),
        std::invalid_argument);
}

TEST(RatioSpatial, FiniteDifferenceOracle) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> xd(-2.4, 2.4);
    for (int i = 0; i < 100; ++i) {
        const SpatialParams p = rfctest::random_spatial(rng);
        // draw within the kernel core; central differences lose precision in
        // the far tail where the values underflow toward round-off
        const Vec2 x = {xd(rng) * std::sqrt(p.s * p.sigma.s11),
                        xd(rng) * std::sqrt(p.s * p.sigma.s22)};
        STParams pst;
        pst.s = p.s;
        pst.sigma = p.sigma;
        pst.tau = 1.0;
        pst.v = {0.0, 0.0};
        const double kval = affine_gauss(x, p);
        for (DerivIndex idx : kSpatialTable) {
            const double analytic = ratio_spatial(idx, x, p) * kval;
            // the spatial kernel is the t = 0, v = 0 slice of the
            // spatio-temporal one divided by gauss1d(0, tau); differentiate
            // the 2-D kernel directly instead
            const double fd = fd_st(idx, x, 0.0, pst) / gauss1d(0.0, 1.0);
            EXPECT_NEAR(analytic, fd, 1e-5 * std::max(std::abs(fd), kval))
                << deriv_index_name(idx) << " draw " << i;
        }
    }
}

TEST(RatioStIso, FrozenExamplesAndOracle) {
    STParams p;
    p.tau = 1.0;
    EXPECT_NEAR(ratio_st_iso(DerivIndex::d_tbar, {0.0, 0.0}, 2.0, p), -2.0, 1e-14);

    STParams q;
    q.tau = 1.7;
    EXPECT_NEAR(ratio_st_iso(DerivIndex::p_tau, {0.3, -0.1}, std::sqrt(q.tau), q), 0.0, 1e-14);

    STParams r;
    EXPECT_NEAR(ratio_st_iso(DerivIndex::p_v1, {1.0, 0.0}, 1.0, r), 1.0, 1e-14);

    STParams aniso;
    aniso.sigma = {2.0, 0.0, 1.0};
    EXPECT_THROW(ratio_st_iso(DerivIndex::d_x1, {0.0, 0.0}, 0.0, aniso), std::invalid_argument);

    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> xd(-2.2, 2.2);
    for (int i = 0; i < 100; ++i) {
        const STParams pp = rfctest::random_st(rng, /*isotropic=*/true);
        const double t = xd(rng) * std::sqrt(pp.tau);
        const Vec2 x = {pp.v[0] * t + xd(rng) * std::sqrt(pp.s),
                        pp.v[1] * t + xd(rng) * std::sqrt(pp.s)};
        const double kval = st_gauss(x, t, pp);
        for (DerivIndex idx : kStIsoTable) {
            const double analytic = ratio_st_iso(idx, x, t, pp) * kval;
            const double fd = fd_st(idx, x, t, pp);
            EXPECT_NEAR(analytic, fd, 1e-5 * std::max(std::abs(fd), kval))
                << deriv_index_name(idx) << " draw " << i;
        }
    }
}

TEST(RatioStAffine, FrozenExamplesAndOracle) {
    // reduction at x = v t: d_S22 ratio equals -S11 / (2 s det Sigma)
    STParams p;
    EXPECT_NEAR(ratio_st_affine(DerivIndex::p_s22, {0.0, 0.0}, 0.0, p), -0.5, 1e-14);

    // d_v2 carries a factor t
    EXPECT_NEAR(ratio_st_affine(DerivIndex::p_v2, {0.7, -0.4}, 0.0, p), 0.0, 1e-14);

    // table omissions
    EXPECT_THROW(ratio_st_affine(DerivIndex::d_x1t, {0.0, 0.0}, 0.0, p), std::invalid_argument);
    EXPECT_THROW(ratio_st_affine(DerivIndex::d_tt, {0.0, 0.0}, 0.0, p), std::invalid_argument);

    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> xd(-2.2, 2.2);
    for (int i = 0; i < 100; ++i) {
        const STParams pp = rfctest::random_st(rng);
        const double t = xd(rng) * std::sqrt(pp.tau);
        const Vec2 x = {pp.v[0] * t + xd(rng) * std::sqrt(pp.s * pp.sigma.s11),
                        pp.v[1] * t + xd(rng) * std::sqrt(pp.s * pp.sigma.s22)};
        const double kval = st_gauss(x, t, pp);
        for (DerivIndex idx : kStAffineTable) {
            const double analytic = ratio_st_affine(idx, x, t, pp) * kval;
            const double fd = fd_st(idx, x, t, pp);
            EXPECT_NEAR(analytic, fd, 1e-5 * std::max(std::abs(fd), kval))
                << deriv_index_name(idx) << " draw " << i;
        }
    }
}

TEST(RatioTimeCausal, MatchesAffineAndOracle) {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> xd(-2.0, 2.0), td(0.2, 2.5);

    // identical rational forms to the affine table on the shared indices
    for (int i = 0; i < 100; ++i) {
        STParams p = rfctest::random_st(rng);
        p.c = 2.0;
        const Vec2 x = {xd(rng), xd(rng)};
        const double t = td(rng);
        STParams q = p;
        q.c.reset();
        for (DerivIndex idx : kTimeCausalTable)
            EXPECT_DOUBLE_EQ(ratio_timecausal(idx, x, t, p), ratio_st_affine(idx, x, t, q))
                << deriv_index_name(idx);
    }

    EXPECT_THROW(ratio_timecausal(DerivIndex::p_tau, {0.0, 0.0}, 1.0, STParams{}),
                 std::invalid_argument);
    EXPECT_THROW(ratio_timecausal(DerivIndex::d_tbar, {0.0, 0.0}, 1.0, STParams{}),
                 std::invalid_argument);

    // d_s at x = v t reduces to -1/s for Sigma = I
    STParams ds;
    ds.s = 2.0;
    ds.v = {0.4, -0.3};
    ds.c = 2.0;
    const double t0 = 1.3;
    EXPECT_NEAR(ratio_timecausal(DerivIndex::p_s, {ds.v[0] * t0, ds.v[1] * t0}, t0, ds), -0.5,
                1e-14);

    // finite differences on the sampled time-causal kernel for the v tags
    const double dt = 0.01;
    for (int i = 0; i < 25; ++i) {
        STParams p = rfctest::random_st(rng);
        p.c = 2.0;
        LimitKernel psi(p.tau, *p.c, dt, limit_kernel_mean(p.tau, *p.c) + 8.0 * std::sqrt(p.tau),
                        1e-6);
        const double t = td(rng) * std::sqrt(p.tau);
        const Vec2 x = {p.v[0] * t + xd(rng) * std::sqrt(p.s * p.sigma.s11),
                        p.v[1] * t + xd(rng) * std::sqrt(p.s * p.sigma.s22)};
        const double kval = st_limit(x, t, p, psi);
        for (DerivIndex idx : {DerivIndex::p_v1, DerivIndex::p_v2, DerivIndex::p_s}) {
            const double analytic = ratio_timecausal(idx, x, t, p) * kval;
            auto stepped = [&](DerivIndex which, double h) {
                STParams q = p;
                if (which == DerivIndex::p_v1) q.v[0] += h;
                else if (which == DerivIndex::p_v2) q.v[1] += h;
                else q.s += h;
                return st_limit(x, t, q, psi);
            };
            const double h0 = idx == DerivIndex::p_s ? 1e-4 * p.s : 1e-4;
            const double fd = fd1([&](double h) { return stepped(idx, h); }, h0);
            EXPECT_NEAR(analytic, fd, 1e-4 * std::max(std::abs(fd), kval))
                << deriv_index_name(idx) << " draw " << i;
        }
    }
}

TEST(TableConsistency, AffineReducesToIso) {
    std::mt19937_64 rng(45);
    std::uniform_real_distribution<double> xd(-2.5, 2.5);
    for (int i = 0; i < 100; ++i) {
        const STParams p = rfctest::random_st(rng, /*isotropic=*/true);
        const Vec2 x = {xd(rng), xd(rng)};
        const double t = xd(rng);
        for (DerivIndex idx : kStAffineTable) {
            // the isotropic table has no Sigma rows
            if (idx == DerivIndex::p_s11 || idx == DerivIndex::p_s12 ||
                idx == DerivIndex::p_s22)
                continue;
            const double affine = ratio_st_affine(idx, x, t, p);
            const double iso = ratio_st_iso(idx, x, t, p);
            EXPECT_NEAR(affine, iso, 1e-12 * std::max(1.0, std::abs(iso)))
                << deriv_index_name(idx);
        }
    }
}

TEST(TableConsistency, SpatialIsStAffineAtTimeZero) {
    std::mt19937_64 rng(46);
    std::uniform_real_distribution<double> xd(-2.5, 2.5);
    for (int i = 0; i < 100; ++i) {
        const SpatialParams p = rfctest::random_spatial(rng);
        STParams pst;
        pst.s = p.s;
        pst.sigma = p.sigma;
        const Vec2 x = {xd(rng), xd(rng)};
        for (DerivIndex idx : kSpatialTable) {
            const double spatial = ratio_spatial(idx, x, p);
            const double st = ratio_st_affine(idx, x, 0.0, pst);
            EXPECT_NEAR(spatial, st, 1e-12 * std::max(1.0, std::abs(st)))
                << deriv_index_name(idx);
        }
    }
}

TEST(TableConsistency, SigmaTagsAreScaledSecondDerivatives) {
    // d_S11 = (s/2) d_x1x1, d_S12 = s d_x1x2, d_S22 = (s/2) d_x2x2 at the
    // ratio level (the off-diagonal carries no 1/2: it appears twice in the
    // symmetric matrix)
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> xd(-2.5, 2.5);
    for (int i = 0; i < 100; ++i) {
        const SpatialParams p = rfctest::random_spatial(rng);
        const Vec2 x = {xd(rng), xd(rng)};
        const double s11 = ratio_spatial(DerivIndex::p_s11, x, p);
        const double s12 = ratio_spatial(DerivIndex::p_s12, x, p);
        const double s22 = ratio_spatial(DerivIndex::p_s22, x, p);
        const double xx = ratio_spatial(DerivIndex::d_x1x1, x, p);
        const double xy = ratio_spatial(DerivIndex::d_x1x2, x, p);
        const double yy = ratio_spatial(DerivIndex::d_x2x2, x, p);
        EXPECT_NEAR(s11, 0.5 * p.s * xx, 1e-12 * std::max(1.0, std::abs(s11)));
        EXPECT_NEAR(s12, p.s * xy, 1e-12 * std::max(1.0, std::abs(s12)));
        EXPECT_NEAR(s22, 0.5 * p.s * yy, 1e-12 * std::max(1.0, std::abs(s22)));
    }
}

TEST(AnalyticDeriv, KernelTimesRatio) {
    EXPECT_DOUBLE_EQ(
        analytic_deriv(DerivIndex::d_x1, {0.0, 0.0}, SpatialParams{1.0, CovMat2::identity()}),
        0.0);

    std::mt19937_64 rng(48);
    std::uniform_real_distribution<double> xd(-2.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const STParams p = rfctest::random_st(rng);
        const Vec2 x = {xd(rng), xd(rng)};
        const double t = xd(rng);
        const double a = analytic_deriv(Family::st_affine, DerivIndex::p_s, x, t, p);
        const double fd = fd_st(DerivIndex::p_s, x, t, p);
        EXPECT_NEAR(a, fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }

    // mixed velocity-adapted example at x1 = t = 1, v = 0, s = tau = 1
    STParams unit;
    const double a = analytic_deriv(Family::st_iso, DerivIndex::d_x1tbar, {1.0, 0.0}, 1.0, unit);
    EXPECT_NEAR(a, 1.0 * st_gauss({1.0, 0.0}, 1.0, unit), 1e-14);
}
