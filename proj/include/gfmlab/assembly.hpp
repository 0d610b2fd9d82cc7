#pragma once

// Full-system composition: converter + machine + network (or converter +
// infinite bus), equilibrium solving with setpoint trims, the two
// independent linearization routes, and the linear-vs-nonlinear
// verification harness.

#include "gfmlab/gfc.hpp"
#include "gfmlab/network.hpp"
#include "gfmlab/sync_machine.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gfmlab {

enum class SystemKind { TwoSource, InfiniteBus };

struct SystemSpec {
    SystemKind kind = SystemKind::TwoSource;
    NetworkParams net;
    SgParams sg;
    AvrParams avr;
    GovParams gov;
    GfcDesign gfc;
    std::optional<EventTopology> events;  // event-study branch groups (else Table-1 shape)
    double gfc_rating = 1.0;  // pu, feasibility screen
    double sg_rating = 1.0;
};

struct SystemSignals {
    NetSignals net;
    GfcSignals gfc;
    SgSignals sg;
    double omega_frame = 1.0;
};

/// Nonlinear system model with a fixed state/input/channel layout shared by
/// the numeric and analytic linearization routes.
class SystemModel {
public:
    explicit SystemModel(SystemSpec spec)
        : spec_(std::move(spec)),
          net_(spec_.net, spec_.kind == SystemKind::TwoSource ? NetKind::TwoSource
                                                              : NetKind::InfiniteBus),
          gfc_(spec_.gfc) {
        if (spec_.kind == SystemKind::TwoSource) {
            sg_.emplace(spec_.sg, spec_.avr, spec_.gov, spec_.net.z_tl2.r, spec_.net.z_tl2.x);
            if (spec_.events) {
                net_.set_z1(spec_.events->z1.lumped());
                sg_->set_feeder(spec_.events->z2.lumped().r, spec_.events->z2.lumped().x);
            }
        }
        off_net_ = 0;
        off_sg_ = net_.nx();
        off_gfc_ = off_sg_ + (sg_ ? sg_->nx() : 0);
        nx_ = off_gfc_ + gfc_.nx();

        state_labels_ = net_.state_labels("net");
        if (sg_) {
            auto sl = sg_->state_labels("sg");
            state_labels_.insert(state_labels_.end(), sl.begin(), sl.end());
        }
        auto gl = gfc_.state_labels("gfc");
        state_labels_.insert(state_labels_.end(), gl.begin(), gl.end());

        if (spec_.kind == SystemKind::TwoSource)
            input_labels_ = {"p_ref", "q_ref", "sg_v_ref", "sg_p_disp",
                             "load_scale", "i_inj_D", "i_inj_Q"};
        else
            input_labels_ = {"p_ref", "q_ref", "v_src_D", "v_src_Q", "i_inj_D", "i_inj_Q"};

        if (spec_.kind == SystemKind::TwoSource)
            channels_ = {"P_vsc", "Q_vsc", "P_sg", "Q_sg", "omega_sg", "omega_vsc",
                         "v_pcc_mag", "i_vsc_mag", "v_load_mag"};
        else
            channels_ = {"P_vsc", "Q_vsc", "omega_vsc", "v_pcc_mag", "i_vsc_mag"};
    }

    const SystemSpec& spec() const { return spec_; }
    SystemKind kind() const { return spec_.kind; }
    int nx() const { return nx_; }
    int nu() const { return static_cast<int>(input_labels_.size()); }
    int ny() const { return static_cast<int>(channels_.size()); }
    const std::vector<std::string>& state_labels() const { return state_labels_; }
    const std::vector<std::string>& input_labels() const { return input_labels_; }
    const std::vector<std::string>& channels() const { return channels_; }
    int input_index(const std::string& name) const {
        auto it = std::find(input_labels_.begin(), input_labels_.end(), name);
        detail::require(it != input_labels_.end(), "unknown input '" + name + "'");
        return static_cast<int>(it - input_labels_.begin());
    }
    int channel_index(const std::string& name) const {
        auto it = std::find(channels_.begin(), channels_.end(), name);
        detail::require(it != channels_.end(), "unknown channel '" + name + "'");
        return static_cast<int>(it - channels_.begin());
    }
    int state_index(const std::string& name) const {
        auto it = std::find(state_labels_.begin(), state_labels_.end(), name);
        detail::require(it != state_labels_.end(), "unknown state '" + name + "'");
        return static_cast<int>(it - state_labels_.begin());
    }

    NetworkComponent& net() { return net_; }
    const NetworkComponent& net() const { return net_; }
    SgComponent& sg() { return *sg_; }
    const SgComponent* sg_ptr() const { return sg_ ? &*sg_ : nullptr; }
    GfcComponent& gfc() { return gfc_; }
    const GfcComponent& gfc() const { return gfc_; }
    int gfc_offset() const { return off_gfc_; }
    int sg_offset() const { return off_sg_; }

    void deriv(const Vec& x, const Vec& u, Vec& dx, SystemSignals* sig = nullptr) const {
        if (dx.size() != nx_) dx.resize(nx_);
        const bool two = spec_.kind == SystemKind::TwoSource;
        const Vec x_net = x.segment(off_net_, net_.nx());
        const Vec x_gfc = x.segment(off_gfc_, gfc_.nx());

        NetInputs nin;
        double omega_frame = 1.0;
        if (two) {
            omega_frame = x[off_sg_ + sg_omega_local()];
            nin.i_sg_DQ = Vec2(x[off_sg_], x[off_sg_ + 1]);
            nin.load_scale = u[input_index("load_scale")];
        } else {
            nin.v_src_DQ = Vec2(u[2], u[3]);
        }
        nin.omega = omega_frame;
        nin.i_inj_DQ = Vec2(u[input_index("i_inj_D")], u[input_index("i_inj_Q")]);

        // network algebra first (independent of the converter voltage)
        NetSignals ns;
        Vec dx_net(net_.nx());
        net_.eval(x_net, nin, dx_net, &ns);

        GfcInputs gin;
        gin.i_vsc_DQ = ns.i_vsc;
        gin.v_pcc_DQ = ns.v_pcc;
        gin.i_grid_DQ = ns.i_grid;
        gin.omega_sg = omega_frame;
        gin.p_ref = u[0];
        gin.q_ref = u[1];
        Vec dx_gfc(gfc_.nx());
        GfcSignals gs;
        gfc_.eval(x_gfc, gin, dx_gfc, &gs);

        SgSignals ss;
        if (two) {
            SgInputs sin;
            sin.v_ext_DQ = ns.v_load;
            sin.v_ref = u[2];
            sin.p_disp = u[3];
            Vec dx_sg(sg_->nx());
            sg_->eval(x.segment(off_sg_, sg_->nx()), sin, dx_sg, &ss);
            dx.segment(off_sg_, sg_->nx()) = dx_sg;
        }

        // network derivatives with the true converter voltage
        nin.v_conv_DQ = gs.v_conv_DQ;
        net_.eval(x_net, nin, dx_net, nullptr);
        dx.segment(off_net_, net_.nx()) = dx_net;
        dx.segment(off_gfc_, gfc_.nx()) = dx_gfc;

        if (sig) {
            sig->net = ns;
            sig->gfc = gs;
            sig->sg = ss;
            sig->omega_frame = omega_frame;
        }
    }

    /// Channel vector in channels() order.
    Vec outputs(const Vec& x, const Vec& u) const {
        Vec dx;
        SystemSignals s;
        deriv(x, u, dx, &s);
        return channels_of(s);
    }

    Vec channels_of(const SystemSignals& s) const {
        Vec y(ny());
        if (spec_.kind == SystemKind::TwoSource) {
            y << s.gfc.p, s.gfc.q, s.sg.p_term, s.sg.q_term, s.sg.omega, s.gfc.omega_vsc,
                s.net.v_pcc.norm(), s.net.i_vsc.norm(), s.net.v_load.norm();
        } else {
            y << s.gfc.p, s.gfc.q, s.gfc.omega_vsc, s.net.v_pcc.norm(), s.net.i_vsc.norm();
        }
        return y;
    }

    int sg_omega_local() const { return sg_ ? sg_->nx() - 4 : 0; }

private:
    SystemSpec spec_;
    NetworkComponent net_;
    std::optional<SgComponent> sg_;
    GfcComponent gfc_;
    int off_net_ = 0, off_sg_ = 0, off_gfc_ = 0, nx_ = 0;
    std::vector<std::string> state_labels_, input_labels_, channels_;
};

// ---------------------------------------------------------------------------
// Equilibrium
// ---------------------------------------------------------------------------

struct Dispatch {
    enum class Mode {
        Share,         // two-source: split the load by gfc_share
        ZeroTransfer,  // two-source: zero current on the z1 path
        InfBus         // infinite bus: hit (p_gfc, q_gfc)
    };
    Mode mode = Mode::Share;
    double load_scale = 1.0;
    double gfc_share = 0.5;
    double v_pcc_target = 1.0;
    double v_sg_target = 1.0;
    double p_gfc = 0.5;
    double q_gfc = 0.0;
    double v_src = 1.0;
};

struct Equilibrium {
    Vec x;
    Vec u;
    double residual = 0.0;
    // power-flow summary
    double p_vsc = 0, q_vsc = 0, p_sg = 0, q_sg = 0;
    double v_pcc_mag = 0, v_load_mag = 0, v_sg_mag = 0;
    SystemSignals signals;
};

namespace assembly_detail {

inline Vec warm_start(const SystemModel& m, const Dispatch& d) {
    Vec x = Vec::Zero(m.nx());
    const bool two = m.kind() == SystemKind::TwoSource;
    // all phasors start near the +q axis (the machine rotor frame puts the
    // no-load EMF there); the infinite-bus frame is source-aligned instead
    const double ang = two ? M_PI / 2.0 : 0.0;
    const Vec2 vhat(std::cos(ang), std::sin(ang));
    const Mat2 J = jmat();

    const double g_load = two ? d.load_scale / m.spec().net.z_load : 0.0;
    const Vec2 i_load = g_load * vhat;
    const Vec2 i_z1 = two ? Vec2(d.gfc_share * i_load) : Vec2(d.p_gfc, 0.0);
    const Vec2 i_cap = m.spec().net.cf * (J * vhat);
    // net: [i_l1, v_cf, i_z1]
    x.segment<2>(0) = i_z1 + i_cap;
    x.segment<2>(2) = vhat;
    x.segment<2>(4) = i_z1;

    if (two) {
        const SgComponent& sg = *m.sg_ptr();
        Vec xs = sg.flat_state(d.v_sg_target);
        xs[0] = (1.0 - d.gfc_share) * i_load[0];
        xs[1] = (1.0 - d.gfc_share) * i_load[1];
        x.segment(m.sg_offset(), sg.nx()) = xs;
    }

    // gfc: theta aligns the converter d axis with the bus phasor
    Vec xg = Vec::Zero(m.gfc().nx());
    const double theta0 = -ang;
    xg[2] = theta0;
    xg[m.gfc().nx() - 6] = 1.0 / 120.0;  // pade d-axis carries ~1 pu command
    x.segment(m.gfc_offset(), m.gfc().nx()) = xg;
    return x;
}

}  // namespace assembly_detail

/// Newton with numerical Jacobian and step halving on residual increase.
/// Setpoint trims (machine field/governor references, converter p/q
/// references) are free variables; the dispatch constraints close the system.
inline Equilibrium find_equilibrium(const SystemModel& m, const Dispatch& d,
                                    int max_iters = 60, double tol = 1e-11) {
    const bool two = m.kind() == SystemKind::TwoSource;
    detail::require(two != (d.mode == Dispatch::Mode::InfBus),
                    "dispatch mode does not match the system kind");

    // feasibility screen
    if (two) {
        const double p_load_est = d.load_scale / m.spec().net.z_load;
        detail::require(d.gfc_share * p_load_est <= 1.2 * m.spec().gfc_rating &&
                            (1.0 - d.gfc_share) * p_load_est <= 1.2 * m.spec().sg_rating,
                        "infeasible dispatch: requested share exceeds source rating");
    } else {
        detail::require(std::abs(d.p_gfc) <= 1.2 * m.spec().gfc_rating,
                        "infeasible dispatch: power target exceeds converter rating");
    }

    const int n = m.nx();
    const int nt = two ? 4 : 2;  // trims
    const int nz = n + nt;

    Vec u0 = Vec::Zero(m.nu());
    if (two) {
        u0[m.input_index("load_scale")] = d.load_scale;
        u0[m.input_index("sg_v_ref")] = d.v_sg_target;
    } else {
        u0[m.input_index("v_src_D")] = d.v_src;
        u0[m.input_index("p_ref")] = d.p_gfc;
        u0[m.input_index("q_ref")] = d.q_gfc;
    }

    auto u_of = [&](const Vec& z) {
        Vec u = u0;
        u[0] = z[n];      // p_ref
        u[1] = z[n + 1];  // q_ref
        if (two) {
            u[m.input_index("sg_v_ref")] = z[n + 2];
            u[m.input_index("sg_p_disp")] = z[n + 3];
        }
        return u;
    };

    auto residual = [&](const Vec& z) -> Vec {
        Vec x = z.head(n);
        Vec u = u_of(z);
        Vec f(n);
        SystemSignals s;
        m.deriv(x, u, f, &s);
        Vec r(nz);
        r.head(n) = f;
        if (two) {
            const double omega = s.sg.omega;
            switch (d.mode) {
                case Dispatch::Mode::Share:
                    r[n] = omega - 1.0;
                    r[n + 1] = s.gfc.p - d.gfc_share * (s.gfc.p + s.sg.p_term);
                    r[n + 2] = s.net.v_pcc.norm() - d.v_pcc_target;
                    r[n + 3] = s.sg.v_term_mag - d.v_sg_target;
                    break;
                case Dispatch::Mode::ZeroTransfer:
                    r[n] = omega - 1.0;
                    r[n + 1] = s.net.i_z1[0];
                    r[n + 2] = s.net.i_z1[1];
                    r[n + 3] = s.sg.v_term_mag - d.v_sg_target;
                    break;
                default:
                    throw Error("bad dispatch mode");
            }
        } else {
            r[n] = s.gfc.p - d.p_gfc;
            r[n + 1] = s.gfc.q - d.q_gfc;
        }
        return r;
    };

    Vec z(nz);
    z.head(n) = assembly_detail::warm_start(m, d);
    z[n] = two ? d.gfc_share * d.load_scale / m.spec().net.z_load : d.p_gfc;
    z[n + 1] = 0.0;
    if (two) {
        z[n + 2] = d.v_sg_target;
        z[n + 3] = (1.0 - d.gfc_share) * d.load_scale / m.spec().net.z_load;
    }

    Vec r = residual(z);
    double rnorm = r.norm();
    for (int it = 0; it < max_iters && r.lpNorm<Eigen::Infinity>() > tol; ++it) {
        Mat Jz(nz, nz);
        const double h = 1e-7;
        for (int j = 0; j < nz; ++j) {
            Vec zp = z, zm = z;
            zp[j] += h;
            zm[j] -= h;
            Jz.col(j) = (residual(zp) - residual(zm)) / (2.0 * h);
        }
        Eigen::FullPivLU<Mat> lu(Jz);
        if (!lu.isInvertible())
            throw Error("equilibrium Newton: singular Jacobian (residual " +
                        std::to_string(rnorm) + ")");
        const Vec step = lu.solve(-r);
        double alpha = 1.0;
        bool accepted = false;
        for (int back = 0; back < 40; ++back) {
            Vec zn = z + alpha * step;
            Vec rn = residual(zn);
            if (rn.norm() < rnorm || rn.lpNorm<Eigen::Infinity>() < tol) {
                z = zn;
                r = rn;
                rnorm = rn.norm();
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted)
            throw Error("equilibrium Newton stalled at residual " + std::to_string(rnorm));
    }
    if (r.lpNorm<Eigen::Infinity>() > 1e-10)
        throw Error("equilibrium Newton did not converge: residual " +
                    std::to_string(r.lpNorm<Eigen::Infinity>()));

    Equilibrium eq;
    eq.x = z.head(n);
    eq.u = u_of(z);
    Vec f(n);
    m.deriv(eq.x, eq.u, f, &eq.signals);
    eq.residual = f.lpNorm<Eigen::Infinity>();
    eq.p_vsc = eq.signals.gfc.p;
    eq.q_vsc = eq.signals.gfc.q;
    eq.p_sg = eq.signals.sg.p_term;
    eq.q_sg = eq.signals.sg.q_term;
    eq.v_pcc_mag = eq.signals.net.v_pcc.norm();
    eq.v_load_mag = eq.signals.net.v_load.norm();
    eq.v_sg_mag = eq.signals.sg.v_term_mag;

    // sanity band on accepted node voltages
    for (double v : {eq.v_pcc_mag, two ? eq.v_load_mag : eq.v_pcc_mag})
        detail::require(v > 0.8 && v < 1.2,
                        "equilibrium rejected: node voltage outside [0.8, 1.2] pu");
    return eq;
}

// ---------------------------------------------------------------------------
// Linearization (two independent routes)
// ---------------------------------------------------------------------------

enum class LinearizeMethod { AnalyticBlocks, NumericJacobian };

inline StateSpaceBlock linearize_numeric(const SystemModel& m, const Equilibrium& eq,
                                         double h = 1e-5) {
    const int n = m.nx(), nu = m.nu(), ny = m.ny();
    Mat A(n, n), B(n, nu), C(ny, n), D(ny, nu);
    Vec fp(n), fm(n);
    for (int j = 0; j < n; ++j) {
        Vec xp = eq.x, xm = eq.x;
        xp[j] += h;
        xm[j] -= h;
        m.deriv(xp, eq.u, fp);
        m.deriv(xm, eq.u, fm);
        A.col(j) = (fp - fm) / (2.0 * h);
        C.col(j) = (m.outputs(xp, eq.u) - m.outputs(xm, eq.u)) / (2.0 * h);
    }
    for (int j = 0; j < nu; ++j) {
        Vec up = eq.u, um = eq.u;
        up[j] += h;
        um[j] -= h;
        m.deriv(eq.x, up, fp);
        m.deriv(eq.x, um, fm);
        B.col(j) = (fp - fm) / (2.0 * h);
        D.col(j) = (m.outputs(eq.x, up) - m.outputs(eq.x, um)) / (2.0 * h);
    }
    return {A, B, C, D, m.state_labels(), m.input_labels(), m.channels()};
}

namespace assembly_detail {

inline StateSpaceBlock magnitude_block(const Vec2& x0, const std::string& pre) {
    Mat d(1, 2);
    const double n = x0.norm();
    if (n > 1e-9)
        d << x0[0] / n, x0[1] / n;
    else
        d << 0.0, 0.0;
    return gain_block(d, {pre + ".x_D", pre + ".x_Q"}, {pre + ".mag"});
}

}  // namespace assembly_detail

/// Analytic route: per-component small-signal blocks wired by label.
inline StateSpaceBlock linearize_analytic(const SystemModel& m, const Equilibrium& eq) {
    const bool two = m.kind() == SystemKind::TwoSource;
    const auto& s = eq.signals;

    // operating-point inputs for the component linearizations
    NetInputs nin;
    nin.omega = s.omega_frame;
    nin.v_conv_DQ = s.gfc.v_conv_DQ;
    if (two) {
        nin.i_sg_DQ = s.sg.i_DQ;
        nin.load_scale = eq.u[m.input_index("load_scale")];
    } else {
        nin.v_src_DQ = Vec2(eq.u[2], eq.u[3]);
    }
    nin.i_inj_DQ = Vec2(eq.u[m.input_index("i_inj_D")], eq.u[m.input_index("i_inj_Q")]);

    std::vector<StateSpaceBlock> blocks;
    blocks.push_back(m.net().linearize(eq.x.head(m.net().nx()), nin, "net"));

    if (two) {
        SgInputs sin;
        sin.v_ext_DQ = s.net.v_load;
        sin.v_ref = eq.u[m.input_index("sg_v_ref")];
        sin.p_disp = eq.u[m.input_index("sg_p_disp")];
        blocks.push_back(m.sg_ptr()->linearize(eq.x.segment(m.sg_offset(), m.sg_ptr()->nx()),
                                               sin, "sg"));
    }

    GfcOperatingPoint gop;
    gop.theta0 = s.gfc.theta;
    gop.i_vsc_DQ0 = s.net.i_vsc;
    gop.v_pcc_DQ0 = s.net.v_pcc;
    gop.i_grid_DQ0 = s.net.i_grid;
    gop.v_br_dq0 = s.gfc.v_br_dq;
    blocks.push_back(build_gfc_linear(m.gfc().design(), gop, false, "gfc"));

    blocks.push_back(assembly_detail::magnitude_block(s.net.v_pcc, "mv"));
    blocks.push_back(assembly_detail::magnitude_block(s.net.i_vsc, "mi"));
    if (two) blocks.push_back(assembly_detail::magnitude_block(s.net.v_load, "ml"));

    std::vector<Wire> w = {
        {"net.i_vsc_D", "gfc.i_D"},
        {"net.i_vsc_Q", "gfc.i_Q"},
        {"gfc.vconv_D", "net.v_conv_D"},
        {"gfc.vconv_Q", "net.v_conv_Q"},
        {"net.v_pcc_D", "mv.x_D"},
        {"net.v_pcc_Q", "mv.x_Q"},
        {"net.i_vsc_D", "mi.x_D"},
        {"net.i_vsc_Q", "mi.x_Q"},
    };
    const bool needs_vpcc = m.gfc().design().topology != Topology::NoInner;
    if (needs_vpcc) {
        w.push_back({"net.v_pcc_D", "gfc.vpcc_D"});
        w.push_back({"net.v_pcc_Q", "gfc.vpcc_Q"});
    }
    if (m.gfc().design().topology == Topology::Cascaded) {
        w.push_back({"net.i_grid_D", "gfc.igrid_D"});
        w.push_back({"net.i_grid_Q", "gfc.igrid_Q"});
    }

    std::vector<ExternalInput> ein;
    std::vector<std::string> eout;
    if (two) {
        w.push_back({"sg.i_D", "net.i_sg_D"});
        w.push_back({"sg.i_Q", "net.i_sg_Q"});
        w.push_back({"net.v_load_D", "sg.v_ext_D"});
        w.push_back({"net.v_load_Q", "sg.v_ext_Q"});
        w.push_back({"sg.omega", "gfc.omega_sg"});
        w.push_back({"sg.omega", "net.omega"});
        w.push_back({"net.v_load_D", "ml.x_D"});
        w.push_back({"net.v_load_Q", "ml.x_Q"});
        ein = {{"p_ref", {"gfc.p_ref"}},
               {"q_ref", {"gfc.q_ref"}},
               {"sg_v_ref", {"sg.v_ref"}},
               {"sg_p_disp", {"sg.p_disp"}},
               {"load_scale", {"net.load_scale"}},
               {"i_inj_D", {"net.i_inj_D"}},
               {"i_inj_Q", {"net.i_inj_Q"}}};
        eout = {"gfc.P", "gfc.Q", "sg.P", "sg.Q", "sg.omega",
                "gfc.omega_vsc", "mv.mag", "mi.mag", "ml.mag"};
    } else {
        // fixed-frequency frame: the frame-speed inputs see no deviation
        blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {"zero.w"}));
        w.push_back({"zero.w", "gfc.omega_sg"});
        w.push_back({"zero.w", "net.omega"});
        ein = {{"p_ref", {"gfc.p_ref"}},
               {"q_ref", {"gfc.q_ref"}},
               {"v_src_D", {"net.v_src_D"}},
               {"v_src_Q", {"net.v_src_Q"}},
               {"i_inj_D", {"net.i_inj_D"}},
               {"i_inj_Q", {"net.i_inj_Q"}}};
        eout = {"gfc.P", "gfc.Q", "gfc.omega_vsc", "mv.mag", "mi.mag"};
    }
    // the network's load_scale input exists in both kinds; leave it unwired
    // in the infinite-bus case (no load there)
    if (!two) {
        blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {"zero.ls"}));
        w.push_back({"zero.ls", "net.load_scale"});
    }

    auto sys = interconnect(blocks, w, ein, eout);
    sys.output_labels = m.channels();
    return sys;
}

/// Computes both routes, enforces entrywise agreement, returns the requested
/// one. A mismatch reports the worst entries.
inline StateSpaceBlock linearize(const SystemModel& m, const Equilibrium& eq,
                                 LinearizeMethod method, double tol = 1e-6) {
    detail::require(eq.residual < 1e-9, "linearize needs a converged equilibrium");
    auto num = linearize_numeric(m, eq);
    auto ana = linearize_analytic(m, eq);
    const double da = (num.A - ana.A).cwiseAbs().maxCoeff();
    const double db = (num.B - ana.B).cwiseAbs().maxCoeff();
    if (da > tol || db > tol) {
        Eigen::Index r, c;
        (num.A - ana.A).cwiseAbs().maxCoeff(&r, &c);
        std::string msg = "linearization routes disagree: max |dA| = " + std::to_string(da) +
                          " at (" + num.state_labels[r] + ", " + num.state_labels[c] +
                          "), max |dB| = " + std::to_string(db);
        throw Error(msg);
    }
    return method == LinearizeMethod::NumericJacobian ? num : ana;
}

// ---------------------------------------------------------------------------
// Model verification (linear vs nonlinear event overlay)
// ---------------------------------------------------------------------------

struct VerifyChannel {
    std::string name;
    std::vector<double> nonlinear;
    std::vector<double> linear;
    double nrms = 0.0;  // normalized rms deviation over the event window
};

struct VerifyReport {
    std::vector<double> time;
    std::vector<VerifyChannel> channels;
    double worst_nrms = 0.0;
};

/// Runs the standard event pair (load step, reference-power step) through
/// the nonlinear model and the linearized model and reports the normalized
/// rms deviation per channel.
inline VerifyReport verify_model(const SystemModel& m, const Equilibrium& eq,
                                 double load_frac = 0.05, double pref_frac = 0.05,
                                 double t_load = 7.0, double t_pref = 10.0,
                                 double t_end = 15.0, double dt = 50e-6) {
    detail::require(m.kind() == SystemKind::TwoSource, "verification runs on the two-source system");
    auto lin = linearize(m, eq, LinearizeMethod::AnalyticBlocks);

    // input trajectory: piecewise constant
    auto u_at = [&](double t) {
        Vec u = eq.u;
        if (t >= t_load)
            u[m.input_index("load_scale")] *= (1.0 + load_frac);
        if (t >= t_pref)
            u[0] += pref_frac * std::abs(eq.u[0]);
        return u;
    };

    const int steps = static_cast<int>(std::round(t_end / dt));
    const int decim = 20;  // 1 ms channel sampling for the report
    VerifyReport rep;
    rep.channels.resize(m.ny());
    for (int c = 0; c < m.ny(); ++c) rep.channels[c].name = m.channels()[c];

    // nonlinear path; the input is held constant across each step, changing
    // exactly on the event timestamps (which sit on the step grid)
    {
        Vec x = eq.x, k1(m.nx()), k2(m.nx()), k3(m.nx()), k4(m.nx());
        Vec xt(m.nx());
        for (int i = 0; i <= steps; ++i) {
            const double t = i * dt;
            if (i % decim == 0) {
                rep.time.push_back(t);
                Vec y = m.outputs(x, u_at(t));
                for (int c = 0; c < m.ny(); ++c) rep.channels[c].nonlinear.push_back(y[c]);
            }
            if (i == steps) break;
            const Vec u = u_at(t);
            m.deriv(x, u, k1);
            xt = x + 0.5 * dt * k1;
            m.deriv(xt, u, k2);
            xt = x + 0.5 * dt * k2;
            m.deriv(xt, u, k3);
            xt = x + dt * k3;
            m.deriv(xt, u, k4);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    // linear path (deviations around the equilibrium), same stepping
    {
        Vec dx_state = Vec::Zero(m.nx());
        Vec k1(m.nx()), k2(m.nx()), k3(m.nx()), k4(m.nx()), xt(m.nx());
        const Vec y0 = m.outputs(eq.x, eq.u);
        for (int i = 0; i <= steps; ++i) {
            const double t = i * dt;
            if (i % decim == 0) {
                Vec du = u_at(t) - eq.u;
                Vec y = y0 + lin.C * dx_state + lin.D * du;
                for (int c = 0; c < m.ny(); ++c) rep.channels[c].linear.push_back(y[c]);
            }
            if (i == steps) break;
            const Vec du = u_at(t) - eq.u;
            auto f = [&](const Vec& xx) -> Vec { return lin.A * xx + lin.B * du; };
            k1 = f(dx_state);
            xt = dx_state + 0.5 * dt * k1;
            k2 = f(xt);
            xt = dx_state + 0.5 * dt * k2;
            k3 = f(xt);
            xt = dx_state + dt * k3;
            k4 = f(xt);
            dx_state += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }

    // normalized rms deviation over [first event, end]
    const double t_ev = std::min(t_load, t_pref);
    for (auto& ch : rep.channels) {
        double num = 0.0, den = 0.0;
        const double base = ch.nonlinear.front();
        int count = 0;
        for (size_t i = 0; i < rep.time.size(); ++i) {
            if (rep.time[i] < t_ev) continue;
            const double d = ch.nonlinear[i] - ch.linear[i];
            const double rsp = ch.nonlinear[i] - base;
            num += d * d;
            den += rsp * rsp;
            ++count;
        }
        const double abs_dev = count > 0 ? std::sqrt(num / count) : 0.0;
        if (abs_dev < 1e-10) {
            ch.nrms = 0.0;  // integration noise, not a model mismatch
        } else if (den == 0.0) {
            ch.nrms = 1.0;
        } else {
            ch.nrms = abs_dev / std::sqrt(den / count);
        }
        rep.worst_nrms = std::max(rep.worst_nrms, ch.nrms);
    }
    return rep;
}

}  // namespace gfmlab
