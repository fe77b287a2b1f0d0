// rfc: receptive-field kernel and cascade tool.
//
// Subcommands:
//   kernel   sample a smoothing kernel (optionally differentiated) to CSV + RFVOL
//   respond  compute receptive field responses of an image or volume,
//            directly or through a cascade plan, and compare the two
//   verify   run the built-in identity/cascade verification suites
//   plan     build a cascade plan for a filter bank and write it as CSV
//   bench    execute a plan and its direct counterpart, reporting time and MACs
//
// Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rfcascade/cascade.hpp"
#include "rfcascade/engine.hpp"
#include "rfcascade/generators.hpp"
#include "rfcascade/hermite.hpp"
#include "rfcascade/io.hpp"
#include "rfcascade/kernels.hpp"
#include "rfcascade/param_algebra.hpp"
#include "rfcascade/planner.hpp"

using namespace rfcascade;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string family = "spatial";
    double spacing_x = 1.0, spacing_y = 1.0, spacing_t = 1.0;
    double trunc = 5.0, exp_trunc = 8.0, eps_var = 1e-6, tolerance = 1e-3;
    int threads = 1;
    bool normalize = false;

    // remember which flags were set so config values only fill the gaps
    std::set<std::string> given;

    void absorb_config(const Config& cfg) {
        auto take = [&](const char* key, auto& slot, auto getter) {
            if (given.count(key) == 0 && cfg.has(key)) slot = getter(key);
        };
        take("family", family, [&](const char* k) { return cfg.get(k); });
        take("spacing_x", spacing_x, [&](const char* k) { return cfg.get_double(k, 1.0); });
        take("spacing_y", spacing_y, [&](const char* k) { return cfg.get_double(k, 1.0); });
        take("spacing_t", spacing_t, [&](const char* k) { return cfg.get_double(k, 1.0); });
        take("trunc", trunc, [&](const char* k) { return cfg.get_double(k, 5.0); });
        take("exp_trunc", exp_trunc, [&](const char* k) { return cfg.get_double(k, 8.0); });
        take("eps_var", eps_var, [&](const char* k) { return cfg.get_double(k, 1e-6); });
        take("tolerance", tolerance, [&](const char* k) { return cfg.get_double(k, 1e-3); });
        take("threads", threads, [&](const char* k) { return cfg.get_int(k, 1); });
        if (given.count("normalize") == 0 && cfg.has("normalize"))
            normalize = cfg.get_int("normalize", 0) != 0;
    }

    SampleOptions sample_options() const {
        SampleOptions o;
        o.trunc = trunc;
        o.exp_trunc = exp_trunc;
        o.eps_var = eps_var;
        o.renormalize = normalize;
        return o;
    }

    Family parsed_family() const {
        if (family == "spatial") return Family::spatial;
        if (family == "st_iso") return Family::st_iso;
        if (family == "st_affine" || family == "st") return Family::st_affine;
        if (family == "timecausal") return Family::timecausal;
        throw CLI::ValidationError("--family", "unknown family '" + family + "'");
    }
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    auto track = [&c](const std::string& key) {
        return [&c, key](const std::string&) { c.given.insert(key); };
    };
    cmd->add_option("--config", c.config_path, "key=value configuration file");
    cmd->add_option("--family", c.family, "kernel family: spatial, st_iso, st_affine, timecausal")
        ->each(track("family"));
    cmd->add_option("--spacing-x", c.spacing_x, "grid spacing along x1")->each(track("spacing_x"));
    cmd->add_option("--spacing-y", c.spacing_y, "grid spacing along x2")->each(track("spacing_y"));
    cmd->add_option("--spacing-t", c.spacing_t, "grid spacing along t")->each(track("spacing_t"));
    cmd->add_option("--trunc", c.trunc, "truncation multiplier in standard deviations")
        ->each(track("trunc"));
    cmd->add_option("--exp-trunc", c.exp_trunc, "truncated-exponential extent in units of mu")
        ->each(track("exp_trunc"));
    cmd->add_option("--eps-var", c.eps_var, "limit-kernel stage tolerance")->each(track("eps_var"));
    cmd->add_option("--tolerance", c.tolerance, "verification tolerance")->each(track("tolerance"));
    cmd->add_option("--threads", c.threads, "worker thread count")->each(track("threads"));
    cmd->add_flag("--normalize", c.normalize, "renormalize sampled kernels to unit mass")
        ->each(track("normalize"));
}

struct ParamFlags {
    double s = 1.0;
    double p11 = 1.0, p12 = 0.0, p22 = 1.0;
    std::optional<double> sigma1, sigma2;
    double phi = 0.0;
    double tau = 1.0;
    double v1 = 0.0, v2 = 0.0;
    std::optional<double> c;

    STParams to_params(Family fam) const {
        STParams p;
        p.s = s;
        if (sigma1 && sigma2)
            p.sigma = cov_from_axes(*sigma1, *sigma2, phi);
        else
            p.sigma = {p11, p12, p22};
        p.tau = tau;
        p.v = {v1, v2};
        if (fam == Family::timecausal) p.c = c.value_or(2.0);
        p.validate();
        return p;
    }
};

void add_params(CLI::App* cmd, ParamFlags& p) {
    cmd->add_option("--s", p.s, "spatial scale (length^2)");
    cmd->add_option("--p11", p.p11, "covariance element Sigma_11");
    cmd->add_option("--p12", p.p12, "covariance element Sigma_12");
    cmd->add_option("--p22", p.p22, "covariance element Sigma_22");
    cmd->add_option("--sigma1", [&p](const std::vector<std::string>& v) {
        p.sigma1 = std::stod(v[0]);
        return true;
    }, "first principal standard deviation (with --sigma2/--phi)");
    cmd->add_option("--sigma2", [&p](const std::vector<std::string>& v) {
        p.sigma2 = std::stod(v[0]);
        return true;
    }, "second principal standard deviation");
    cmd->add_option("--phi", p.phi, "principal axis orientation");
    cmd->add_option("--tau", p.tau, "temporal scale (time^2)");
    cmd->add_option("--v1", p.v1, "image velocity component 1");
    cmd->add_option("--v2", p.v2, "image velocity component 2");
    cmd->add_option("--c", [&p](const std::vector<std::string>& v) {
        p.c = std::stod(v[0]);
        return true;
    }, "temporal scale ratio (time-causal family)");
}

struct OpFlags {
    int order = 0;
    double dphi = 0.0;
    int torder = 0;

    DerivOp to_op(bool temporal_domain) const {
        if (torder > 0 && !temporal_domain)
            throw CLI::ValidationError("--torder", "temporal derivative needs a volume input");
        if (torder > 0) return DerivOp::mixed(order, dphi, torder, {0.0, 0.0});
        return DerivOp::directional(order, dphi);
    }
};

void add_ops(CLI::App* cmd, OpFlags& o) {
    cmd->add_option("--order", o.order, "directional derivative order");
    cmd->add_option("--dphi", o.dphi, "derivative orientation");
    cmd->add_option("--torder", o.torder, "velocity-adapted temporal derivative order");
}

Volume image_to_volume(const Image& img) {
    Volume v;
    v.dims = {img.dims[0], img.dims[1], 1};
    v.spacing = {img.spacing[0], img.spacing[1], 1.0};
    v.values = img.values;
    return v;
}

// ---------------------------------------------------------------------------
// kernel

int cmd_kernel(const CommonOpts& common, const ParamFlags& pf, const OpFlags& of,
               const std::string& out_prefix) {
    const Family fam = common.parsed_family();
    const STParams p = pf.to_params(fam);
    const SampleOptions opts = common.sample_options();

    if (fam == Family::spatial) {
        Kernel2 k = sample(SpatialParams{p.s, p.sigma}, common.spacing_x, common.spacing_y, opts);
        if (of.order > 0) {
            auto dk = apply_deriv(k, DerivOp::directional(of.order, of.dphi));
            k = std::move(dk[0]);
        }
        detail::write_file(out_prefix + ".csv", kernel_to_csv(k));
        Volume as_vol;
        as_vol.dims = {k.dims[0], k.dims[1], 1};
        as_vol.spacing = {k.spacing[0], k.spacing[1], 1.0};
        as_vol.values = k.values;
        write_rfvol(out_prefix + ".rfvol", as_vol);
    } else {
        Kernel3 k = sample(p, common.spacing_x, common.spacing_y, common.spacing_t, opts);
        DerivOp op = of.to_op(true);
        op.v = p.v;
        if (of.order > 0 || of.torder > 0) {
            auto dk = apply_deriv(k, op);
            k = std::move(dk[0]);
        }
        detail::write_file(out_prefix + ".csv", kernel_to_csv(k));
        Volume as_vol;
        as_vol.dims = k.dims;
        as_vol.spacing = k.spacing;
        as_vol.values = k.values;
        write_rfvol(out_prefix + ".rfvol", as_vol);
    }
    std::printf("kernel written to %s.csv and %s.rfvol\n", out_prefix.c_str(),
                out_prefix.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// respond

int cmd_respond(const CommonOpts& common, const ParamFlags& pf, const OpFlags& of,
                const std::string& input_path, const std::string& plan_path, bool direct,
                const std::string& out_prefix) {
    const SampleOptions opts = common.sample_options();
    const bool is_pgm = input_path.size() > 4 &&
                        input_path.compare(input_path.size() - 4, 4, ".pgm") == 0;

    if (!plan_path.empty()) {
        const CascadePlan plan_obj = plan_from_csv(detail::read_file(plan_path));
        if (plan_obj.family == Family::spatial) {
            const Image img = is_pgm ? read_pgm(input_path, common.spacing_x, common.spacing_y)
                                     : [&] {
                                           const Volume v = read_rfvol(input_path);
                                           Image i;
                                           i.dims = {v.dims[0], v.dims[1]};
                                           i.spacing = {v.spacing[0], v.spacing[1]};
                                           i.values = v.values;
                                           return i;
                                       }();
            CascadePlan with_ops = plan_obj;
            with_ops.ops.assign(with_ops.targets.size(), {of.to_op(false)});
            const auto run = execute<2>(with_ops, img, opts, common.threads);
            for (std::size_t w = 0; w < run.responses.size(); ++w)
                write_rfvol(out_prefix + "_t" + std::to_string(w) + "_plan.rfvol",
                            image_to_volume(run.responses[w][0]));
            if (direct) {
                for (std::size_t w = 0; w < with_ops.targets.size(); ++w) {
                    const auto& t = with_ops.targets[w];
                    const auto resp = rf_response(img, SpatialParams{t.s, t.sigma},
                                                  of.to_op(false), opts, common.threads);
                    write_rfvol(out_prefix + "_t" + std::to_string(w) + "_direct.rfvol",
                                image_to_volume(resp[0]));
                    const auto ext =
                        kernel_extents(t.product(), common.spacing_x, common.spacing_y, opts);
                    const int margin =
                        std::min({(img.dims[0] - 1) / 2 - 1, (img.dims[1] - 1) / 2 - 1,
                                  2 * std::max(ext[0], ext[1])});
                    const CompareResult c =
                        compare(run.responses[w][0], resp[0], {margin, margin});
                    std::printf("target %zu: plan vs direct rel_l2 %.3e rel_linf %.3e\n", w,
                                c.rel_l2, c.rel_linf);
                }
            }
        } else {
            const Volume vol = read_rfvol(input_path);
            CascadePlan with_ops = plan_obj;
            DerivOp op = of.to_op(true);
            with_ops.ops.clear();
            for (const auto& t : with_ops.targets) {
                DerivOp top = op;
                top.v = t.v;
                with_ops.ops.push_back({top});
            }
            const auto run = execute<3>(with_ops, vol, opts, common.threads);
            for (std::size_t w = 0; w < run.responses.size(); ++w)
                write_rfvol(out_prefix + "_t" + std::to_string(w) + "_plan.rfvol",
                            run.responses[w][0]);
            if (direct) {
                for (std::size_t w = 0; w < with_ops.targets.size(); ++w) {
                    const auto& t = with_ops.targets[w];
                    DerivOp top = op;
                    top.v = t.v;
                    const auto resp = rf_response(vol, t, top, opts, common.threads);
                    write_rfvol(out_prefix + "_t" + std::to_string(w) + "_direct.rfvol",
                                resp[0]);
                    const auto ext = kernel_extents(t, common.spacing_x, common.spacing_y,
                                                    common.spacing_t, opts);
                    std::array<int, 3> margin{};
                    for (int a = 0; a < 3; ++a)
                        margin[a] = std::min(2 * ext[a], (vol.dims[a] - 1) / 2 - 1);
                    const CompareResult c = compare(run.responses[w][0], resp[0], margin);
                    std::printf("target %zu: plan vs direct rel_l2 %.3e rel_linf %.3e\n", w,
                                c.rel_l2, c.rel_linf);
                }
            }
        }
        return 0;
    }

    // direct response at the flag parameters
    const Family fam = common.parsed_family();
    const STParams p = pf.to_params(fam);
    if (fam == Family::spatial) {
        const Image img = read_pgm(input_path, common.spacing_x, common.spacing_y);
        const auto resp = rf_response(img, SpatialParams{p.s, p.sigma}, of.to_op(false), opts,
                                      common.threads);
        for (std::size_t i = 0; i < resp.size(); ++i)
            write_rfvol(out_prefix + (resp.size() > 1 ? "_c" + std::to_string(i) : "") + ".rfvol",
                        image_to_volume(resp[i]));
    } else {
        const Volume vol = read_rfvol(input_path);
        DerivOp op = of.to_op(true);
        op.v = p.v;
        const auto resp = rf_response(vol, p, op, opts, common.threads);
        for (std::size_t i = 0; i < resp.size(); ++i)
            write_rfvol(out_prefix + (resp.size() > 1 ? "_c" + std::to_string(i) : "") + ".rfvol",
                        resp[i]);
    }
    std::printf("responses written with prefix %s\n", out_prefix.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyRow {
    std::string suite, name;
    double value, threshold;
    bool pass;
};

void verify_hermite(const std::string& family_filter, std::vector<VerifyRow>& rows) {
    std::mt19937_64 rng(1001);
    std::uniform_real_distribution<double> xd(-2.2, 2.2), td(0.2, 2.0);

    auto fd_param = [](auto eval, double h) {
        auto d = [&](double step) { return (eval(step) - eval(-step)) / (2.0 * step); };
        return (4.0 * d(h / 2.0) - d(h)) / 3.0;
    };

    struct Case {
        Family fam;
        const char* name;
        std::vector<DerivIndex> tags;
    };
    const std::vector<Case> cases = {
        {Family::spatial, "spatial",
         {DerivIndex::p_s, DerivIndex::p_s11, DerivIndex::p_s12, DerivIndex::p_s22}},
        {Family::st_iso, "st_iso",
         {DerivIndex::p_s, DerivIndex::p_tau, DerivIndex::p_v1, DerivIndex::p_v2}},
        {Family::st_affine, "st_affine",
         {DerivIndex::p_s, DerivIndex::p_s11, DerivIndex::p_s12, DerivIndex::p_s22,
          DerivIndex::p_tau, DerivIndex::p_v1, DerivIndex::p_v2}},
        {Family::timecausal, "timecausal",
         {DerivIndex::p_s, DerivIndex::p_s11, DerivIndex::p_s12, DerivIndex::p_s22,
          DerivIndex::p_v1, DerivIndex::p_v2}},
    };

    for (const Case& cs : cases) {
        if (!family_filter.empty() && family_filter != cs.name) continue;
        double worst = 0.0;
        const double tol = cs.fam == Family::timecausal ? 1e-4 : 1e-5;
        for (int i = 0; i < 100; ++i) {
            std::uniform_real_distribution<double> sd(0.5, 2.0), taud(0.5, 2.5), vd(-0.8, 0.8);
            std::uniform_real_distribution<double> eig(0.6, 2.5), ang(0.0, 3.14159);
            STParams p;
            p.s = sd(rng);
            p.sigma = cs.fam == Family::st_iso
                          ? CovMat2::identity()
                          : cov_from_axes(std::sqrt(eig(rng)), std::sqrt(eig(rng)), ang(rng));
            p.tau = taud(rng);
            p.v = {vd(rng), vd(rng)};
            std::optional<LimitKernel> psi;
            if (cs.fam == Family::timecausal) {
                p.c = 2.0;
                psi.emplace(p.tau, *p.c, 0.01,
                            limit_kernel_mean(p.tau, *p.c) + 8.0 * std::sqrt(p.tau), 1e-6);
            }
            const double t = cs.fam == Family::spatial ? 0.0 : td(rng) * std::sqrt(p.tau);
            const Vec2 x = {p.v[0] * t + xd(rng) * std::sqrt(p.s * p.sigma.s11),
                            p.v[1] * t + xd(rng) * std::sqrt(p.s * p.sigma.s22)};
            auto kernel_at = [&](const STParams& q) {
                switch (cs.fam) {
                    case Family::spatial: return affine_gauss(x, {q.s, q.sigma});
                    case Family::timecausal: return st_limit(x, t, q, *psi);
                    default: return st_gauss(x, t, q);
                }
            };
            for (DerivIndex tag : cs.tags) {
                const double analytic =
                    cs.fam == Family::spatial
                        ? analytic_deriv(tag, x, SpatialParams{p.s, p.sigma})
                        : analytic_deriv(cs.fam, tag, x, t, p, psi ? &*psi : nullptr);
                auto eval = [&](double step) {
                    STParams q = p;
                    switch (tag) {
                        case DerivIndex::p_s: q.s += step; break;
                        case DerivIndex::p_tau: q.tau += step; break;
                        case DerivIndex::p_s11: q.sigma.s11 += step; break;
                        case DerivIndex::p_s12: q.sigma.s12 += step; break;
                        case DerivIndex::p_s22: q.sigma.s22 += step; break;
                        case DerivIndex::p_v1: q.v[0] += step; break;
                        case DerivIndex::p_v2: q.v[1] += step; break;
                        default: break;
                    }
                    return kernel_at(q);
                };
                const double h = (tag == DerivIndex::p_s || tag == DerivIndex::p_tau)
                                     ? 1e-4 * p.s
                                     : 1e-4;
                const double fd = fd_param(eval, h);
                const double err =
                    std::abs(analytic - fd) / std::max(std::abs(fd), kernel_at(p));
                worst = std::max(worst, err);
            }
        }
        rows.push_back({"hermite", cs.name, worst, tol, worst <= tol});
    }
}

void verify_generators(const std::string& family_filter, double tolerance,
                       const SampleOptions& opts, int threads,
                       std::vector<VerifyRow>& rows) {
    std::mt19937_64 rng(2002);
    std::uniform_real_distribution<double> xd(-2.0, 2.0), td(0.2, 2.0);

    for (Family fam :
         {Family::spatial, Family::st_iso, Family::st_affine, Family::timecausal}) {
        if (!family_filter.empty() && family_filter != family_name(fam)) continue;
        // ratio-level exact algebra
        for (const auto& id : list_identities(fam)) {
            double worst = 0.0;
            for (int i = 0; i < 100; ++i) {
                std::uniform_real_distribution<double> sd(0.5, 2.0), taud(0.5, 2.5),
                    vd(-0.8, 0.8), eig(0.6, 2.5), ang(0.0, 3.14159);
                STParams p;
                p.s = sd(rng);
                p.sigma = fam == Family::st_iso ? CovMat2::identity()
                                                : cov_from_axes(std::sqrt(eig(rng)),
                                                                std::sqrt(eig(rng)), ang(rng));
                p.tau = taud(rng);
                p.v = {vd(rng), vd(rng)};
                if (fam == Family::timecausal) p.c = 2.0;
                const Vec2 x = {xd(rng), xd(rng)};
                const double t = td(rng);
                const double lhs = lhs_ratio(id, x, t, p);
                const double rhs = rhs_ratio(id, x, t, p);
                worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
            }
            rows.push_back({"generators_ratio",
                            std::string(family_name(fam)) + "/" + deriv_index_name(id.lhs),
                            worst, 1e-10, worst <= 1e-10});
        }
        // signal level
        SampleOptions vopts = opts;
        vopts.renormalize = true;
        if (fam == Family::spatial) {
            Image img = Image::zeros({96, 96}, {0.5, 0.5});
            std::mt19937_64 srng(7);
            std::uniform_real_distribution<double> kd(0.15, 0.25), ph(0.0, 6.28), am(0.3, 1.0);
            struct M { double kx, ky, a, p; };
            std::vector<M> modes;
            for (int m = 0; m < 8; ++m)
                modes.push_back({kd(srng) * 2.0, kd(srng) * 2.0, am(srng), ph(srng)});
            for (int iy = 0; iy < 96; ++iy)
                for (int ix = 0; ix < 96; ++ix) {
                    double v = 0.0;
                    for (const M& m : modes)
                        v += m.a * std::cos(m.kx * ix * 0.5 + m.ky * iy * 0.5 + m.p);
                    img.at(ix, iy) = v;
                }
            STParams p;
            for (const auto& id : list_identities(fam)) {
                const IdentityReport rep = verify_identity(id, p, img, tolerance, vopts, threads);
                rows.push_back({"generators_signal",
                                std::string(family_name(fam)) + "/" + deriv_index_name(id.lhs),
                                rep.max_rel_residual, tolerance, rep.pass});
            }
        } else {
            Volume vol = Volume::zeros({48, 40, 72}, {1.0, 1.0, 1.0});
            std::mt19937_64 srng(8);
            std::uniform_real_distribution<double> kd(0.15, 0.25), ph(0.0, 6.28), am(0.3, 1.0);
            struct M { double kx, ky, kt, a, p; };
            std::vector<M> modes;
            for (int m = 0; m < 8; ++m)
                modes.push_back({kd(srng), kd(srng), kd(srng), am(srng), ph(srng)});
            for (int it = 0; it < 72; ++it)
                for (int iy = 0; iy < 40; ++iy)
                    for (int ix = 0; ix < 48; ++ix) {
                        double v = 0.0;
                        for (const M& m : modes)
                            v += m.a * std::cos(m.kx * ix + m.ky * iy + m.kt * it + m.p);
                        vol.at(ix, iy, it) = v;
                    }
            STParams p;
            p.s = 4.0;
            p.tau = 4.0;
            p.v = {0.25, 0.0};
            if (fam == Family::st_iso) p.sigma = CovMat2::identity();
            else p.sigma = {1.0, 0.15, 0.85};
            if (fam == Family::timecausal) p.c = 2.0;
            for (const auto& id : list_identities(fam)) {
                const IdentityReport rep = verify_identity(id, p, vol, tolerance, vopts, threads);
                rows.push_back({"generators_signal",
                                std::string(family_name(fam)) + "/" + deriv_index_name(id.lhs),
                                rep.max_rel_residual, tolerance, rep.pass});
            }
        }
    }
}

void verify_semigroup(const SampleOptions& opts, int threads, std::vector<VerifyRow>& rows) {
    SampleOptions o = opts;
    o.renormalize = true;
    o.trunc = std::max(o.trunc, 6.0);
    Image f = Image::zeros({96, 96}, {0.5, 0.5});
    f.at(48, 48) = 4.0;
    const Kernel2 k1 = sample(SpatialParams{1.1, CovMat2::identity()}, 0.5, 0.5, o);
    const Kernel2 k2 = sample(SpatialParams{2.3, CovMat2::identity()}, 0.5, 0.5, o);
    const Kernel2 k12 = sample(SpatialParams{3.4, CovMat2::identity()}, 0.5, 0.5, o);
    const Image once =
        convolve(convolve(f, k1, Boundary::zero_pad, threads), k2, Boundary::zero_pad, threads);
    const Image direct = convolve(f, k12, Boundary::zero_pad, threads);
    const CompareResult c = compare(once, direct, {30, 30});
    rows.push_back({"semigroup", "gauss_2d", c.rel_linf, 1e-6, c.rel_linf <= 1e-6});
}

void verify_cascade(const std::string& family_filter, double tolerance,
                    const SampleOptions& opts, int threads, std::vector<VerifyRow>& rows) {
    SampleOptions o = opts;
    o.renormalize = true;

    if (family_filter.empty() || family_filter == "spatial") {
        std::mt19937_64 rng(3003);
        std::uniform_real_distribution<double> eig(1.0, 2.0), ang(0.0, 3.14159);
        Image f = Image::zeros({96, 96}, {0.5, 0.5});
        std::uniform_real_distribution<double> noise(-1.0, 1.0);
        for (auto& v : f.values) v = noise(rng);
        const Kernel2 pre = sample(SpatialParams{1.0, CovMat2::identity()}, 0.5, 0.5, o);
        f = convolve(f, pre, Boundary::zero_pad, threads);

        double worst = 0.0;
        for (int i = 0; i < 3; ++i) {
            const SpatialParams p1{1.0, cov_from_axes(std::sqrt(eig(rng)),
                                                      std::sqrt(eig(rng)), ang(rng))};
            SpatialParams p2 = p1;
            p2.sigma = p2.sigma + cov_from_axes(std::sqrt(eig(rng)), std::sqrt(eig(rng)),
                                                ang(rng));
            const SpatialIncrement inc = cascade_spatial(p1, p2);
            if (!inc.feasible) continue;
            const Image casc = run_cascade(f, p1, {inc}, o, threads);
            const Image direct = convolve(f, sample(p2, 0.5, 0.5, o), Boundary::zero_pad,
                                          threads);
            worst = std::max(worst, compare(casc, direct, {34, 34}).rel_l2);
        }
        rows.push_back({"cascade", "spatial", worst, tolerance, worst <= tolerance});
    }

    if (family_filter.empty() || family_filter == "st_affine") {
        Volume f = Volume::zeros({48, 40, 48}, {1.0, 1.0, 1.0});
        std::mt19937_64 rng(4004);
        std::uniform_real_distribution<double> noise(-1.0, 1.0);
        for (auto& v : f.values) v = noise(rng);
        STParams pre;
        pre.s = 2.0;
        pre.tau = 2.0;
        f = convolve(f, sample(pre, 1.0, 1.0, 1.0, o), Boundary::zero_pad, threads);

        STParams pi;
        pi.s = 2.0;
        pi.tau = 2.0;
        pi.v = {0.2, 0.0};
        STParams pj;
        pj.s = 4.0;
        pj.sigma = {1.1, 0.1, 0.9};
        pj.tau = 5.0;
        pj.v = {0.4, 0.1};
        const STIncrement inc = cascade_st(pi, pj);
        double value = 1.0;
        bool pass = false;
        if (inc.feasible) {
            const Volume casc = run_cascade(f, pi, {inc}, o, threads);
            const Volume direct =
                convolve(f, sample(pj, 1.0, 1.0, 1.0, o), Boundary::zero_pad, threads);
            value = compare(casc, direct, {18, 16, 18}).rel_l2;
            pass = value <= tolerance;
        }
        rows.push_back({"cascade", "st_affine", value, tolerance, pass});
    }

    if (family_filter.empty() || family_filter == "timecausal") {
        Volume f = Volume::zeros({40, 32, 96}, {1.0, 1.0, 1.0});
        std::mt19937_64 rng(5005);
        std::uniform_real_distribution<double> noise(-1.0, 1.0);
        for (auto& v : f.values) v = noise(rng);
        STParams pre;
        pre.s = 2.0;
        pre.tau = 2.0;
        f = convolve(f, sample(pre, 1.0, 1.0, 1.0, o), Boundary::zero_pad, threads);

        STParams base;
        base.s = 2.0;
        base.tau = 2.0;
        base.c = 2.0;
        STParams top = base;
        top.tau = base.tau * 4.0;
        top.s = 3.0;
        const TimeCausalIncrement inc = cascade_timecausal(base, top);
        double value = 1.0;
        bool pass = false;
        if (inc.feasible) {
            const Volume casc = run_cascade(f, base, {inc}, o, threads);
            const Volume direct =
                convolve(f, sample(top, 1.0, 1.0, 1.0, o), Boundary::zero_pad, threads);
            value = compare(casc, direct, {14, 12, 46}).rel_l2;
            pass = value <= tolerance;
        }
        rows.push_back({"cascade", "timecausal", value, tolerance, pass});
    }
}

void verify_limitkernel(std::vector<VerifyRow>& rows) {
    for (const double c : {std::sqrt(2.0), 2.0}) {
        const double tau = 1.0, dt = 2e-3;
        const double t_max = limit_kernel_mean(tau, c) + 12.0 * std::sqrt(tau);
        LimitKernel psi(tau, c, dt, t_max, 1e-8);

        const double res = psi.residual_variance() / tau;
        rows.push_back({"limitkernel", "residual_variance_c" + std::to_string(c), res, 1e-6,
                        res <= 1e-6 && res >= 0.0});

        LimitKernel finer(tau / (c * c), c, dt, t_max, 1e-8);
        const double mu = std::sqrt(c * c - 1.0) / c * std::sqrt(tau);
        const std::size_t n = psi.samples().size();
        std::vector<double> h(n);
        double hm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            h[i] = trunc_exp(static_cast<double>(i) * dt, mu);
            hm += h[i];
        }
        for (auto& v : h) v /= hm * dt;
        double l1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k <= i; ++k) acc += h[k] * finer.samples()[i - k];
            l1 += std::abs(acc * dt - psi.samples()[i]) * dt;
        }
        rows.push_back({"limitkernel", "recurrence_c" + std::to_string(c), l1, 1e-4, l1 <= 1e-4});
    }
}

int cmd_verify(const CommonOpts& common, const std::string& suite,
               const std::string& family_filter, const std::string& report_path) {
    std::vector<VerifyRow> rows;
    const SampleOptions opts = common.sample_options();

    if (suite.empty() || suite == "hermite") verify_hermite(family_filter, rows);
    if (suite.empty() || suite == "generators")
        verify_generators(family_filter, common.tolerance, opts, common.threads, rows);
    if (suite.empty() || suite == "semigroup") verify_semigroup(opts, common.threads, rows);
    if (suite.empty() || suite == "cascade")
        verify_cascade(family_filter, common.tolerance, opts, common.threads, rows);
    if (suite.empty() || suite == "limitkernel") verify_limitkernel(rows);

    std::string csv = "suite,name,value,threshold,result\n";
    bool all_pass = true;
    for (const VerifyRow& r : rows) {
        csv += r.suite + "," + r.name + "," + detail::g17(r.value) + "," +
               detail::g17(r.threshold) + "," + (r.pass ? "pass" : "fail") + "\n";
        std::printf("[%s] %-18s %-28s %11.4e (<= %g)\n", r.pass ? "pass" : "FAIL",
                    r.suite.c_str(), r.name.c_str(), r.value, r.threshold);
        all_pass &= r.pass;
    }
    if (!report_path.empty()) detail::write_file(report_path, csv);
    std::printf("%zu checks, %s\n", rows.size(), all_pass ? "all passed" : "FAILURES present");
    return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// plan / bench

BankSpec bank_from_config(const Config& cfg, Family fam) {
    BankSpec bank;
    bank.family = fam;
    for (const std::string& t : cfg.targets) bank.targets.push_back(parse_target(t));
    return bank;
}

int cmd_plan(const CommonOpts& common, const Config& cfg, int field_nx, int field_ny,
             int field_nt, const std::string& out_path) {
    const Family fam = common.parsed_family();
    const BankSpec bank = bank_from_config(cfg, fam);
    PlanGrid grid;
    grid.spacing = {common.spacing_x, common.spacing_y, common.spacing_t};
    grid.field_cells = static_cast<std::uint64_t>(field_nx) * field_ny *
                       (fam == Family::spatial ? 1 : field_nt);
    const SampleOptions opts = common.sample_options();

    const FeasibilityGraph graph = build_feasibility_graph(bank, grid, opts);
    bool any_inter = false;
    for (const PlanEdge& e : graph.edges) any_inter |= e.from >= 0;
    if (!any_inter && bank.targets.size() > 1)
        std::fprintf(stderr, "warning: no feasible cascade edges; plan degrades to direct\n");

    const CascadePlan best = plan(bank, graph, PlanStrategy::shortest_path);
    const CascadePlan direct = plan(bank, graph, PlanStrategy::direct_only);
    detail::write_file(out_path, plan_to_csv(best));
    std::printf("plan written to %s\n", out_path.c_str());
    std::printf("estimated cost %.6g MACs, direct %.6g MACs, savings ratio %.4f\n",
                best.total_cost, direct.total_cost, direct.total_cost / best.total_cost);
    return 0;
}

int cmd_bench(const CommonOpts& common, const Config& cfg, const std::string& input_path,
              const std::string& report_path) {
    const Family fam = common.parsed_family();
    const BankSpec bank = bank_from_config(cfg, fam);
    const SampleOptions opts = common.sample_options();
    PlanGrid grid;
    grid.spacing = {common.spacing_x, common.spacing_y, common.spacing_t};

    std::string csv = "strategy,wall_seconds,measured_macs,estimated_macs\n";
    auto report = [&](const char* name, double secs, std::uint64_t measured, double estimated) {
        csv += std::string(name) + "," + detail::g17(secs) + "," +
               std::to_string(measured) + "," + detail::g17(estimated) + "\n";
        std::printf("%-12s %8.3f s   measured %llu MACs   estimated %.6g MACs\n", name, secs,
                    static_cast<unsigned long long>(measured), estimated);
    };

    if (fam == Family::spatial) {
        const Image img = read_pgm(input_path, common.spacing_x, common.spacing_y);
        grid.field_cells =
            static_cast<std::uint64_t>(img.dims[0]) * static_cast<std::uint64_t>(img.dims[1]);
        const FeasibilityGraph graph = build_feasibility_graph(bank, grid, opts);
        for (const PlanStrategy strat : {PlanStrategy::shortest_path, PlanStrategy::direct_only}) {
            const CascadePlan p = plan(bank, graph, strat);
            reset_mac_count();
            const auto t0 = std::chrono::steady_clock::now();
            const auto run = execute<2>(p, img, opts, common.threads);
            const auto t1 = std::chrono::steady_clock::now();
            report(strat == PlanStrategy::shortest_path ? "cascade" : "direct",
                   std::chrono::duration<double>(t1 - t0).count(), run.macs, p.total_cost);
        }
    } else {
        const Volume vol = read_rfvol(input_path);
        grid.field_cells = static_cast<std::uint64_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
        const FeasibilityGraph graph = build_feasibility_graph(bank, grid, opts);
        for (const PlanStrategy strat : {PlanStrategy::shortest_path, PlanStrategy::direct_only}) {
            const CascadePlan p = plan(bank, graph, strat);
            reset_mac_count();
            const auto t0 = std::chrono::steady_clock::now();
            const auto run = execute<3>(p, vol, opts, common.threads);
            const auto t1 = std::chrono::steady_clock::now();
            report(strat == PlanStrategy::shortest_path ? "cascade" : "direct",
                   std::chrono::duration<double>(t1 - t0).count(), run.macs, p.total_cost);
        }
    }
    if (!report_path.empty()) detail::write_file(report_path, csv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"receptive-field kernels, responses and cascade plans"};
    app.require_subcommand(1);

    CommonOpts common;
    ParamFlags params;
    OpFlags ops;
    std::string out_prefix = "out";
    std::string input_path, plan_path, suite, family_filter, report_path, out_path = "plan.csv";
    bool direct = false;
    int field_nx = 128, field_ny = 128, field_nt = 64;

    CLI::App* kernel = app.add_subcommand("kernel", "sample a kernel to CSV and RFVOL");
    add_common(kernel, common);
    add_params(kernel, params);
    add_ops(kernel, ops);
    kernel->add_option("--out", out_prefix, "output path prefix");

    CLI::App* respond = app.add_subcommand("respond", "compute receptive field responses");
    add_common(respond, common);
    add_params(respond, params);
    add_ops(respond, ops);
    respond->add_option("--input", input_path, "input image (.pgm) or volume (.rfvol)")
        ->required();
    respond->add_option("--plan", plan_path, "execute a cascade plan (CSV)");
    respond->add_flag("--direct", direct, "compute direct responses (with --plan: compare)");
    respond->add_option("--out", out_prefix, "output path prefix");

    CLI::App* verify = app.add_subcommand("verify", "run verification suites");
    add_common(verify, common);
    verify->add_option("--suite", suite,
                       "hermite, generators, semigroup, cascade or limitkernel (default all)");
    verify->add_option("--filter-family", family_filter, "restrict to one kernel family");
    verify->add_option("--report", report_path, "write the CSV report here");

    CLI::App* planc = app.add_subcommand("plan", "build a cascade plan for a filter bank");
    add_common(planc, common);
    planc->add_option("--field-nx", field_nx, "field width used for the cost model");
    planc->add_option("--field-ny", field_ny, "field height used for the cost model");
    planc->add_option("--field-nt", field_nt, "field frame count used for the cost model");
    planc->add_option("--out", out_path, "plan CSV path");

    CLI::App* bench = app.add_subcommand("bench", "execute plan and direct, report time and MACs");
    add_common(bench, common);
    bench->add_option("--input", input_path, "input image (.pgm) or volume (.rfvol)")->required();
    bench->add_option("--report", report_path, "write the CSV timing report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        Config cfg;
        if (!common.config_path.empty()) {
            cfg = load_config(common.config_path);
            common.absorb_config(cfg);
        }
        if (kernel->parsed()) return cmd_kernel(common, params, ops, out_prefix);
        if (respond->parsed())
            return cmd_respond(common, params, ops, input_path, plan_path, direct, out_prefix);
        if (verify->parsed()) return cmd_verify(common, suite, family_filter, report_path);
        if (planc->parsed())
            return cmd_plan(common, cfg, field_nx, field_ny, field_nt, out_path);
        if (bench->parsed()) return cmd_bench(common, cfg, input_path, report_path);
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
