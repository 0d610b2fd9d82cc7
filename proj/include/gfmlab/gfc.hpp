#pragma once

// Grid-forming converter control: outer droop loops, virtual impedance /
// admittance, decoupled inner current and voltage controllers, PWM delay,
// and the three converter topologies built from them. Each topology exists
// twice: as a nonlinear component (pure state-derivative function) and as a
// linearized block assembled from the per-piece small-signal models.

#include "gfmlab/frames.hpp"
#include "gfmlab/lti.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gfmlab {

enum class Topology { NoInner, CurrentOnly, Cascaded };

inline const char* to_string(Topology t) {
    switch (t) {
        case Topology::NoInner: return "no_inner";
        case Topology::CurrentOnly: return "current_control";
        case Topology::Cascaded: return "cascaded";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

struct OuterLoopParams {
    double kslope = 0.05;   // reactive droop, pu
    double t_qlc = 0.5;     // s
    double droop_r = 0.05;  // f-p droop, pu
    double t_inert = 0.3;   // s; emulated inertia H = t_inert / droop_r
    double omega_b = 100.0 * M_PI;
    double omega_set = 1.0;  // pu frequency setpoint
    double v_nom = 1.0;      // pu nominal magnitude
    double p_ref = 0.0;
    double q_ref = 0.0;

    double emulated_h() const { return t_inert / droop_r; }
    void validate() const {
        detail::require(kslope >= 0.0, "Kslope must be nonnegative");
        detail::require(droop_r > 0.0, "droop R must be positive");
        detail::require(t_inert >= 0.0, "T_inert must be nonnegative");
        detail::require(t_qlc > 0.0, "T_QLC must be positive");
    }
};

/// Static + transient virtual impedance (voltage-reference modification).
/// l_virt holds the pu reactance at base frequency.
struct VirtualImpedance {
    double r_virt = 0.0;
    double l_virt = 0.0;
    double r_trans = 0.0;
    // highpass passband covers the sub-synchronous range: the transient
    // resistance damps swing-band and filter-resonance oscillations
    double tau_hp = 1.0 / (2.0 * M_PI * 5.0);

    void validate() const {
        detail::require(r_trans == 0.0 || tau_hp > 0.0,
                        "transient virtual impedance needs tau_hp > 0");
    }
};

/// Dynamic virtual admittance (current-reference generation), Y = 1/(R + (X/wb) s + jX).
struct VirtualAdmittance {
    double r_virt = 0.0;
    double l_virt = 0.15;

    void validate() const {
        detail::require(r_virt != 0.0 || l_virt != 0.0, "virtual admittance must be nonzero");
    }
};

struct InnerLoopParams {
    double cc_kp = 0.0, cc_ki = 0.0;
    double cc_leak = 0.0;  // integrator leak (finite dc gain), rad/s
    double t_m_cc = 0.0;   // voltage feedforward filter, s; 0 disables the filter
    double omega_l = 0.0;  // current decoupling = w_ref * L1
    double vc_kp = 0.0, vc_ki = 0.0;
    double vc_leak = 0.0;  // integrator leak, rad/s
    double t_m_vc = 0.0;   // current feedforward filter, s; 0 disables the filter
    double omega_c = 0.0;  // voltage decoupling = w_ref * Cf
};

/// Where the droop loops measure converter power: at the modulated bridge
/// voltage, or at the filter bus (physical delivered power). Topologies with
/// a bus-voltage sensor default to the bus.
enum class PowerMeasPoint { Bridge, FilterBus };

struct GfcDesign {
    Topology topology = Topology::NoInner;
    OuterLoopParams outer;
    std::optional<VirtualImpedance> zvirt;   // NoInner, Cascaded
    std::optional<VirtualAdmittance> yvirt;  // CurrentOnly
    std::optional<InnerLoopParams> inner;    // CurrentOnly, Cascaded
    PowerMeasPoint meas_point = PowerMeasPoint::Bridge;
    double td = 0.5e-3;   // PWM + computation delay, s
    double f_sw = 2000.0; // Hz
    int design_id = 1;    // cascaded control design objective (1..3)

    void validate() const {
        outer.validate();
        detail::require(td >= 0.0 && f_sw > 0.0, "delay/switching frequency invalid");
        detail::require(std::abs(td - 1.0 / f_sw) < 1e-12,
                        "Td must equal 1/f_sw under single-update PWM");
        switch (topology) {
            case Topology::NoInner:
                detail::require(zvirt.has_value(), "no-inner-loop design needs a virtual impedance");
                detail::require(meas_point == PowerMeasPoint::Bridge,
                                "the no-inner-loop converter has no bus-voltage sensor");
                zvirt->validate();
                break;
            case Topology::CurrentOnly:
                detail::require(yvirt.has_value(), "current-control design needs a virtual admittance");
                detail::require(inner.has_value(), "current-control design needs inner-loop gains");
                yvirt->validate();
                break;
            case Topology::Cascaded:
                detail::require(zvirt.has_value() && inner.has_value(),
                                "cascaded design needs virtual impedance and inner-loop gains");
                zvirt->validate();
                break;
        }
    }
};

/// Base-case designs: Table-2 virtual impedances/admittance, IMC-tuned inner
/// loops against the (l1, r1, cf) filter, and the cascaded design objectives.
inline GfcDesign make_gfc_design(Topology topology, double f_sw, int cascaded_design,
                                 double l1, double r1, double cf,
                                 double omega_b = 100.0 * M_PI) {
    GfcDesign d;
    d.topology = topology;
    d.outer.omega_b = omega_b;
    d.f_sw = f_sw;
    d.td = 1.0 / f_sw;
    d.design_id = cascaded_design;

    const double tau_cc = (f_sw >= 10e3) ? 1e-3 : 5e-3;
    InnerLoopParams il;
    il.cc_kp = l1 / (omega_b * tau_cc);
    il.cc_ki = r1 / tau_cc;
    il.t_m_cc = 5e-3;
    il.omega_l = l1;

    switch (topology) {
        case Topology::NoInner:
            d.zvirt = VirtualImpedance{0.0, -0.05, 0.2, 1.0 / (2.0 * M_PI * 5.0)};
            break;
        case Topology::CurrentOnly:
            d.yvirt = VirtualAdmittance{0.0, 0.15};
            d.inner = il;
            d.meas_point = PowerMeasPoint::FilterBus;
            break;
        case Topology::Cascaded: {
            d.zvirt = VirtualImpedance{0.0, 0.15, 0.2, 1.0 / (2.0 * M_PI * 5.0)};
            detail::require(cascaded_design >= 1 && cascaded_design <= 3,
                            "cascaded design id must be 1, 2 or 3");
            const double tc = (cascaded_design == 1) ? 5e-3 : 1e-3;
            const double fs = (cascaded_design == 1) ? 2000.0 : 10000.0;
            d.f_sw = fs;
            d.td = 1.0 / fs;
            const double tau_vc = 20e-3;
            il.cc_kp = l1 / (omega_b * tc);
            il.cc_ki = r1 / tc;
            il.vc_kp = cf / (omega_b * tau_vc);
            // lag compensators: near-integral action in band, finite dc gain
            // so the regulators cannot fight the droop sharing at sub-Hz
            il.vc_ki = 0.25 * il.vc_kp;
            il.vc_leak = 3.0;
            il.cc_leak = (cascaded_design == 1) ? 0.0 : 60.0;
            il.omega_c = cf;
            il.t_m_cc = (cascaded_design == 3) ? 10e-3 : 5e-3;
            il.t_m_vc = (cascaded_design == 3) ? 10e-3 : 5e-3;
            d.inner = il;
            d.meas_point = PowerMeasPoint::FilterBus;
            break;
        }
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Individual control blocks (LTI form)
// ---------------------------------------------------------------------------

/// Reactive power loop QLC(s) = Kslope / (1 + s T_QLC): q error -> voltage shift.
inline StateSpaceBlock qlc_block(const OuterLoopParams& p,
                                 const std::string& prefix = "qlc") {
    detail::require(p.t_qlc > 0.0, "T_QLC must be positive");
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << -1.0 / p.t_qlc;
    b << p.kslope / p.t_qlc;
    c << 1.0;
    d << 0.0;
    return {a, b, c, d, {prefix}, {prefix + ".q_err"}, {prefix + ".dv"}};
}

/// Active power loop PLC(s) = R wb / (1 + s T_inert): p error -> dw_vsc [rad/s].
/// T_inert = 0 degenerates to the pure droop gain.
inline StateSpaceBlock plc_block(const OuterLoopParams& p,
                                 const std::string& prefix = "plc") {
    const double gain = p.droop_r * p.omega_b;
    if (p.t_inert == 0.0)
        return gain_block(gain, prefix + ".p_err", prefix + ".dw");
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << -1.0 / p.t_inert;
    b << gain / p.t_inert;
    c << 1.0;
    d << 0.0;
    return {a, b, c, d, {prefix}, {prefix + ".p_err"}, {prefix + ".dw"}};
}

/// Static virtual impedance drop (R + jX) i on a dq pair.
inline Vec2 virtual_impedance_static_drop(const VirtualImpedance& z, const Vec2& i_dq) {
    return z.r_virt * i_dq + z.l_virt * (jmat() * i_dq);
}

/// Full virtual impedance as a 2-in/2-out block (static + highpass transient).
inline StateSpaceBlock virtual_impedance_block(const VirtualImpedance& z,
                                               const std::string& prefix = "zv") {
    z.validate();
    const bool hp = z.r_trans != 0.0;
    const int n = hp ? 2 : 0;
    Mat a = Mat::Zero(n, n), b = Mat::Zero(n, 2), c = Mat::Zero(2, n), d(2, 2);
    d << z.r_virt, -z.l_virt, z.l_virt, z.r_virt;
    std::vector<std::string> st;
    if (hp) {
        a.diagonal().setConstant(-1.0 / z.tau_hp);
        b.diagonal().setConstant(1.0 / z.tau_hp);
        c.diagonal().setConstant(-z.r_trans);
        d.diagonal().array() += z.r_trans;
        st = {prefix + ".hp_d", prefix + ".hp_q"};
    }
    return {a, b, c, d, st, {prefix + ".i_d", prefix + ".i_q"},
            {prefix + ".dv_d", prefix + ".dv_q"}};
}

/// Virtual admittance i* = (v_vsc - v_pcc) / (R + (X/wb) s + jX), a coupled
/// two-state block. Inputs are the voltage difference components.
inline StateSpaceBlock virtual_admittance_block(const VirtualAdmittance& y, double omega_b,
                                                const std::string& prefix = "yv") {
    y.validate();
    detail::require(y.l_virt > 0.0, "virtual admittance needs L_virt > 0");
    const double k = omega_b / y.l_virt;
    Mat a(2, 2), b(2, 2), c(2, 2), d(2, 2);
    a = -k * y.r_virt * Mat2::Identity() - omega_b * jmat();
    b = k * Mat2::Identity();
    c = Mat2::Identity();
    d = Mat2::Zero();
    return {a, b, c, d, {prefix + ".i_d", prefix + ".i_q"},
            {prefix + ".dv_d", prefix + ".dv_q"},
            {prefix + ".iref_d", prefix + ".iref_q"}};
}

/// Active/reactive power from dq (or DQ) pairs.
inline double power_p(const Vec2& v, const Vec2& i) { return v[0] * i[0] + v[1] * i[1]; }
inline double power_q(const Vec2& v, const Vec2& i) { return v[1] * i[0] - v[0] * i[1]; }

/// Linearized power measurement at (v0, i0): inputs [dv_d, dv_q, di_d, di_q],
/// outputs [dP, dQ].
inline StateSpaceBlock power_meas_block(const Vec2& v0, const Vec2& i0,
                                        const std::string& prefix = "pm") {
    Mat d(2, 4);
    d << i0[0], i0[1], v0[0], v0[1],
         -i0[1], i0[0], v0[1], -v0[0];
    return gain_block(d,
                      {prefix + ".v_d", prefix + ".v_q", prefix + ".i_d", prefix + ".i_q"},
                      {prefix + ".p", prefix + ".q"});
}

/// Linearized DQ -> dq measurement transform (with angle input).
inline StateSpaceBlock t_vsc_block(const Vec2& x_DQ0, double theta0,
                                   const std::string& prefix) {
    return gain_block(t_vsc(x_DQ0, theta0),
                      {prefix + ".x_D", prefix + ".x_Q", prefix + ".theta"},
                      {prefix + ".x_d", prefix + ".x_q"});
}

/// Linearized dq -> DQ command transform (with angle input).
inline StateSpaceBlock t_vsc_inv_block(const Vec2& x_dq0, double theta0,
                                       const std::string& prefix) {
    return gain_block(t_vsc_inv(x_dq0, theta0),
                      {prefix + ".x_d", prefix + ".x_q", prefix + ".theta"},
                      {prefix + ".x_D", prefix + ".x_Q"});
}

/// Fixed-rotation variants used when the outer loops (and hence the angle
/// state) are frozen.
inline StateSpaceBlock rot_block(double theta0, const std::string& prefix) {
    return gain_block(rot(theta0), {prefix + ".x_D", prefix + ".x_Q"},
                      {prefix + ".x_d", prefix + ".x_q"});
}
inline StateSpaceBlock rot_inv_block(double theta0, const std::string& prefix) {
    return gain_block(rot(-theta0), {prefix + ".x_d", prefix + ".x_q"},
                      {prefix + ".x_D", prefix + ".x_Q"});
}

// ---------------------------------------------------------------------------
// Nonlinear GFC component
// ---------------------------------------------------------------------------

struct GfcInputs {
    Vec2 i_vsc_DQ = Vec2::Zero();   // converter-side filter current, network frame
    Vec2 v_pcc_DQ = Vec2::Zero();   // filter-bus voltage, network frame
    Vec2 i_grid_DQ = Vec2::Zero();  // current leaving the filter bus (cascaded ff)
    double omega_sg = 1.0;          // network frame speed, pu
    double p_ref = 0.0;
    double q_ref = 0.0;
};

struct GfcSignals {
    Vec2 v_conv_DQ = Vec2::Zero();  // bridge voltage behind the delay, network frame
    double omega_vsc = 1.0;         // pu
    double p = 0.0, q = 0.0;        // converter power measurement
    double v_ref_mag = 1.0;
    double theta = 0.0;
    Vec2 i_dq = Vec2::Zero();
    Vec2 v_pcc_dq = Vec2::Zero();
    Vec2 v_br_dq = Vec2::Zero();
    Vec2 v_cmd_dq = Vec2::Zero();
};

/// One grid-forming converter as a pure state-derivative function. State
/// layout (canonical, shared with the linearized assembly):
///   [qlc, plc, theta, <topology>, pade_d z1..z3, pade_q z1..z3]
/// where <topology> is hp_d hp_q (NoInner), yv_d yv_q cci_d cci_q [ccf_d
/// ccf_q] (CurrentOnly) or hp_d hp_q vci_d vci_q [vcf_d vcf_q] cci_d cci_q
/// [ccf_d ccf_q] (Cascaded; feedforward states only when the filters are on).
class GfcComponent {
public:
    explicit GfcComponent(GfcDesign design) : d_(std::move(design)) {
        d_.validate();
        layout();
    }

    const GfcDesign& design() const { return d_; }
    int nx() const { return nx_; }

    std::vector<std::string> state_labels(const std::string& prefix = "gfc") const {
        std::vector<std::string> l;
        auto add = [&](const std::string& s) { l.push_back(prefix + "." + s); };
        add("qlc");
        add("plc");
        add("theta");
        if (d_.topology != Topology::CurrentOnly) { add("zv.hp_d"); add("zv.hp_q"); }
        if (d_.topology == Topology::CurrentOnly) { add("yv.i_d"); add("yv.i_q"); }
        if (d_.topology == Topology::Cascaded) {
            add("vci_d"); add("vci_q");
            if (has_vc_ff()) { add("vcf_d"); add("vcf_q"); }
        }
        if (d_.topology != Topology::NoInner) {
            add("cci_d"); add("cci_q");
            if (has_cc_ff()) { add("ccf_d"); add("ccf_q"); }
        }
        for (const char* ax : {"d", "q"})
            for (int i = 1; i <= 3; ++i)
                add(std::string("pade_") + ax + ".z" + std::to_string(i));
        return l;
    }

    bool has_cc_ff() const {
        return d_.topology != Topology::NoInner && d_.inner->t_m_cc > 0.0;
    }
    bool has_vc_ff() const {
        return d_.topology == Topology::Cascaded && d_.inner->t_m_vc > 0.0;
    }

    /// dx = f(x, u); also reports the component's algebraic signals.
    void eval(const Vec& x, const GfcInputs& in, Vec& dx, GfcSignals* sig = nullptr) const {
        const auto& o = d_.outer;
        const double wb = o.omega_b;

        const double x_qlc = x[0], x_plc = x[1], theta = x[2];
        const Mat2 R = rot(theta);
        const Vec2 i_dq = R * in.i_vsc_DQ;
        const Vec2 v_pcc_dq = R * in.v_pcc_DQ;

        const double v_ref = o.v_nom + x_qlc;
        const double omega_vsc = o.omega_set + x_plc / wb;

        // forward chain to the modulated voltage command
        Vec2 v_cmd = Vec2::Zero();
        int k = i_top_;  // first topology-specific state
        if (dx.size() != nx_) dx.resize(nx_);
        dx.setZero();
        Vec& dx_top = dx;

        if (d_.topology == Topology::NoInner) {
            const auto& z = *d_.zvirt;
            const Vec2 x_hp(x[k], x[k + 1]);
            const Vec2 i_hp = i_dq - x_hp;
            dx_top[k] = (i_dq[0] - x_hp[0]) / z.tau_hp;
            dx_top[k + 1] = (i_dq[1] - x_hp[1]) / z.tau_hp;
            v_cmd = Vec2(v_ref, 0.0) - virtual_impedance_static_drop(z, i_dq) - z.r_trans * i_hp;
        } else if (d_.topology == Topology::CurrentOnly) {
            const auto& y = *d_.yvirt;
            const auto& il = *d_.inner;
            const Vec2 i_ref(x[k], x[k + 1]);
            const Vec2 dv = Vec2(v_ref, 0.0) - v_pcc_dq;
            const Vec2 didt = (wb / y.l_virt) * (dv - y.r_virt * i_ref) - wb * (jmat() * i_ref);
            dx_top[k] = didt[0];
            dx_top[k + 1] = didt[1];
            k += 2;
            v_cmd = current_controller(x, dx_top, k, i_ref, i_dq, v_pcc_dq, il);
        } else {
            const auto& z = *d_.zvirt;
            const auto& il = *d_.inner;
            const Vec2 x_hp(x[k], x[k + 1]);
            const Vec2 i_hp = i_dq - x_hp;
            dx_top[k] = (i_dq[0] - x_hp[0]) / z.tau_hp;
            dx_top[k + 1] = (i_dq[1] - x_hp[1]) / z.tau_hp;
            k += 2;
            const Vec2 v_pcc_ref =
                Vec2(v_ref, 0.0) - virtual_impedance_static_drop(z, i_dq) - z.r_trans * i_hp;

            // decoupled voltage controller -> current reference
            const Vec2 e_v = v_pcc_ref - v_pcc_dq;
            const Vec2 z_vc(x[k], x[k + 1]);
            dx_top[k] = e_v[0] - il.vc_leak * z_vc[0];
            dx_top[k + 1] = e_v[1] - il.vc_leak * z_vc[1];
            k += 2;
            Vec2 ff_v;
            const Vec2 i_grid_dq = R * in.i_grid_DQ;
            if (has_vc_ff()) {
                const Vec2 x_g(x[k], x[k + 1]);
                dx_top[k] = (i_grid_dq[0] - x_g[0]) / il.t_m_vc;
                dx_top[k + 1] = (i_grid_dq[1] - x_g[1]) / il.t_m_vc;
                k += 2;
                ff_v = x_g;
            } else {
                ff_v = i_grid_dq;
            }
            Vec2 i_ref = il.vc_kp * e_v + il.vc_ki * z_vc + ff_v;
            i_ref[0] += -il.omega_c * v_pcc_dq[1];
            i_ref[1] += il.omega_c * v_pcc_dq[0];
            v_cmd = current_controller(x, dx_top, k, i_ref, i_dq, v_pcc_dq, il);
        }

        // PWM + computation delay: third-order Pade per axis plus the frame
        // rotation the stationary-frame delay produces in dq coordinates
        // (the modulator holds the sampled command while the frame advances
        // by w_b Td)
        Vec2 v_br;
        for (int ax = 0; ax < 2; ++ax) {
            const int z0 = i_pade_ + 3 * ax;
            const double z1 = x[z0], z2 = x[z0 + 1], z3 = x[z0 + 2];
            const double u = v_cmd[ax];
            if (d_.td > 0.0) {
                dx_top[z0] = z2 / d_.td;
                dx_top[z0 + 1] = z3 / d_.td;
                dx_top[z0 + 2] = (-120.0 * z1 - 60.0 * z2 - 12.0 * z3 + u) / d_.td;
                v_br[ax] = 240.0 * z1 + 24.0 * z3 - u;
            } else {
                v_br[ax] = u;
            }
        }
        // dq delay per axis; the modulator advances the angle over the hold
        // interval, so no net frame rotation remains

        const Vec2& v_meas = d_.meas_point == PowerMeasPoint::Bridge ? v_br : v_pcc_dq;
        const double p = power_p(v_meas, i_dq);
        const double q = power_q(v_meas, i_dq);

        dx[0] = (o.kslope * (in.q_ref - q) - x_qlc) / o.t_qlc;
        dx[1] = (o.droop_r * wb * (in.p_ref - p) - x_plc) / o.t_inert;
        dx[2] = wb * (in.omega_sg - omega_vsc);

        if (sig) {
            sig->v_conv_DQ = rot(-theta) * v_br;
            sig->omega_vsc = omega_vsc;
            sig->p = p;
            sig->q = q;
            sig->v_ref_mag = v_ref;
            sig->theta = theta;
            sig->i_dq = i_dq;
            sig->v_pcc_dq = v_pcc_dq;
            sig->v_br_dq = v_br;
            sig->v_cmd_dq = v_cmd;
        }
    }

    /// Steady-state interior state estimate for a no-current operating point
    /// (used as a Newton warm start).
    Vec flat_state() const {
        Vec x = Vec::Zero(nx_);
        const double v = d_.outer.v_nom;
        if (d_.topology == Topology::Cascaded) {
            // integral state carries the reference through the PI at zero error
            // only via ki; leave at zero, Newton resolves it.
        }
        if (d_.td > 0.0) {
            x[i_pade_] = v / 120.0;  // d-axis command ~ v_nom
        }
        return x;
    }

private:
    Vec2 current_controller(const Vec& x, Vec& dx, int& k, const Vec2& i_ref,
                            const Vec2& i_dq, const Vec2& v_pcc_dq,
                            const InnerLoopParams& il) const {
        const Vec2 e = i_ref - i_dq;
        const Vec2 z_cc(x[k], x[k + 1]);
        dx[k] = e[0] - il.cc_leak * z_cc[0];
        dx[k + 1] = e[1] - il.cc_leak * z_cc[1];
        k += 2;
        Vec2 ff;
        if (has_cc_ff()) {
            const Vec2 x_f(x[k], x[k + 1]);
            dx[k] = (v_pcc_dq[0] - x_f[0]) / il.t_m_cc;
            dx[k + 1] = (v_pcc_dq[1] - x_f[1]) / il.t_m_cc;
            k += 2;
            ff = x_f;
        } else {
            ff = v_pcc_dq;
        }
        Vec2 u = il.cc_kp * e + il.cc_ki * z_cc + ff;
        u[0] += -il.omega_l * i_dq[1];
        u[1] += il.omega_l * i_dq[0];
        return u;
    }

    void layout() {
        int n = 3;  // qlc, plc, theta
        if (d_.topology != Topology::CurrentOnly) n += 2;  // hp
        if (d_.topology == Topology::CurrentOnly) n += 2;  // admittance
        if (d_.topology == Topology::Cascaded) n += has_vc_ff() ? 4 : 2;
        if (d_.topology != Topology::NoInner) n += has_cc_ff() ? 4 : 2;
        i_top_ = 3;
        i_pade_ = n;
        n += 6;
        nx_ = n;
    }

    GfcDesign d_;
    int nx_ = 0;
    int i_top_ = 0;
    int i_pade_ = 0;
};

// ---------------------------------------------------------------------------
// Linearized GFC assembly (the small-signal model of the matching figure)
// ---------------------------------------------------------------------------

/// Operating point of one converter, extracted from an equilibrium.
struct GfcOperatingPoint {
    double theta0 = 0.0;
    Vec2 i_vsc_DQ0 = Vec2::Zero();
    Vec2 v_pcc_DQ0 = Vec2::Zero();
    Vec2 i_grid_DQ0 = Vec2::Zero();
    Vec2 v_br_dq0 = Vec2(1.0, 0.0);
};

/// Assembles the linearized converter from its per-piece blocks. Inputs:
///   <p>.i_D <p>.i_Q <p>.vpcc_D <p>.vpcc_Q [<p>.igrid_D <p>.igrid_Q]
///   <p>.omega_sg <p>.p_ref <p>.q_ref
/// Outputs: <p>.vconv_D <p>.vconv_Q <p>.omega_vsc <p>.P <p>.Q
/// With freeze_outer the droop loops and the angle integrator are removed
/// (fixed references, fixed frame), reproducing the outer-loops-frozen scans.
inline StateSpaceBlock build_gfc_linear(const GfcDesign& design, const GfcOperatingPoint& op,
                                        bool freeze_outer = false,
                                        const std::string& p = "gfc") {
    design.validate();
    const auto& o = design.outer;
    const double wb = o.omega_b;
    const Vec2 i_dq0 = rot(op.theta0) * op.i_vsc_DQ0;
    const Vec2 v_pcc_dq0 = rot(op.theta0) * op.v_pcc_DQ0;

    std::vector<StateSpaceBlock> blocks;
    std::vector<Wire> wires;
    std::vector<ExternalInput> ext_in;
    std::set<std::string> summing;

    auto wire = [&](const std::string& from, const std::string& to, double g = 1.0) {
        wires.push_back({from, to, g});
    };

    // ---- outer loops and angle -------------------------------------------
    if (!freeze_outer) {
        blocks.push_back(qlc_block(o, p + ".qlc"));
        blocks.push_back(plc_block(o, p + ".plc"));
        // theta integrates wb*dw_sg - dw_plc (the plc output is in rad/s)
        Mat a(1, 1), b(1, 2), c(1, 1), d(1, 2);
        a << 0.0;
        b << wb, -1.0;
        c << 1.0;
        d << 0.0, 0.0;
        blocks.push_back(StateSpaceBlock{a, b, c, d,
                                         {p + ".theta"},
                                         {p + ".th.omega_sg", p + ".th.dw"},
                                         {p + ".theta_out"}});
        wire(p + ".plc.dw", p + ".th.dw");
        // converter speed output in pu
        blocks.push_back(gain_block(1.0 / wb, p + ".wout.dw", p + ".omega_vsc"));
        wire(p + ".plc.dw", p + ".wout.dw");
        ext_in.push_back({p + ".omega_sg", {p + ".th.omega_sg"}});
        ext_in.push_back({p + ".p_ref", {p + ".plc.p_err"}});
        ext_in.push_back({p + ".q_ref", {p + ".qlc.q_err"}});
        summing.insert(p + ".plc.p_err");
        summing.insert(p + ".qlc.q_err");
    }

    // ---- measurement transforms ------------------------------------------
    const bool needs_vpcc = design.topology != Topology::NoInner;
    const bool needs_igrid = design.topology == Topology::Cascaded;
    if (!freeze_outer) {
        blocks.push_back(t_vsc_block(op.i_vsc_DQ0, op.theta0, p + ".ti"));
        wire(p + ".theta_out", p + ".ti.theta");
        if (needs_vpcc) {
            blocks.push_back(t_vsc_block(op.v_pcc_DQ0, op.theta0, p + ".tv"));
            wire(p + ".theta_out", p + ".tv.theta");
        }
        if (needs_igrid) {
            blocks.push_back(t_vsc_block(op.i_grid_DQ0, op.theta0, p + ".tg"));
            wire(p + ".theta_out", p + ".tg.theta");
        }
    } else {
        blocks.push_back(rot_block(op.theta0, p + ".ti"));
        if (needs_vpcc) blocks.push_back(rot_block(op.theta0, p + ".tv"));
        if (needs_igrid) blocks.push_back(rot_block(op.theta0, p + ".tg"));
    }
    ext_in.push_back({p + ".i_D", {p + ".ti.x_D"}});
    ext_in.push_back({p + ".i_Q", {p + ".ti.x_Q"}});
    if (needs_vpcc) {
        ext_in.push_back({p + ".vpcc_D", {p + ".tv.x_D"}});
        ext_in.push_back({p + ".vpcc_Q", {p + ".tv.x_Q"}});
    }
    if (needs_igrid) {
        ext_in.push_back({p + ".igrid_D", {p + ".tg.x_D"}});
        ext_in.push_back({p + ".igrid_Q", {p + ".tg.x_Q"}});
    }

    // ---- power measurement -------------------------------------------------
    const bool meas_bridge = design.meas_point == PowerMeasPoint::Bridge;
    blocks.push_back(
        power_meas_block(meas_bridge ? op.v_br_dq0 : Vec2(v_pcc_dq0), i_dq0, p + ".pm"));

    // ---- topology forward path -------------------------------------------
    // common naming: the command summing block produces vcmd_d / vcmd_q
    auto add_cc = [&](const std::string& iref_d, const std::string& iref_q) {
        const auto& il = *design.inner;
        blocks.push_back(lag_pi_block(il.cc_kp, il.cc_ki, il.cc_leak,
                                      p + ".cc.e_d", p + ".cc.u_d", p + ".cci_d"));
        blocks.push_back(lag_pi_block(il.cc_kp, il.cc_ki, il.cc_leak,
                                      p + ".cc.e_q", p + ".cc.u_q", p + ".cci_q"));
        wire(iref_d, p + ".cc.e_d");
        wire(p + ".ti.x_d", p + ".cc.e_d", -1.0);
        wire(iref_q, p + ".cc.e_q");
        wire(p + ".ti.x_q", p + ".cc.e_q", -1.0);
        summing.insert(p + ".cc.e_d");
        summing.insert(p + ".cc.e_q");
        if (il.t_m_cc > 0.0) {
            blocks.push_back(lowpass_block(il.t_m_cc, p + ".ccf.u_d", p + ".ccf.y_d", p + ".ccf_d"));
            blocks.push_back(lowpass_block(il.t_m_cc, p + ".ccf.u_q", p + ".ccf.y_q", p + ".ccf_q"));
        } else {
            blocks.push_back(gain_block(1.0, p + ".ccf.u_d", p + ".ccf.y_d"));
            blocks.push_back(gain_block(1.0, p + ".ccf.u_q", p + ".ccf.y_q"));
        }
        wire(p + ".tv.x_d", p + ".ccf.u_d");
        wire(p + ".tv.x_q", p + ".ccf.u_q");
        // vcmd = u + ff + decoupling
        Mat d(2, 6);
        // inputs: u_d u_q ff_d ff_q i_d i_q
        d << 1, 0, 1, 0, 0, -il.omega_l,
             0, 1, 0, 1, il.omega_l, 0;
        blocks.push_back(gain_block(d,
                                    {p + ".vc_sum.u_d", p + ".vc_sum.u_q", p + ".vc_sum.ff_d",
                                     p + ".vc_sum.ff_q", p + ".vc_sum.i_d", p + ".vc_sum.i_q"},
                                    {p + ".vcmd_d", p + ".vcmd_q"}));
        wire(p + ".cc.u_d", p + ".vc_sum.u_d");
        wire(p + ".cc.u_q", p + ".vc_sum.u_q");
        wire(p + ".ccf.y_d", p + ".vc_sum.ff_d");
        wire(p + ".ccf.y_q", p + ".vc_sum.ff_q");
        wire(p + ".ti.x_d", p + ".vc_sum.i_d");
        wire(p + ".ti.x_q", p + ".vc_sum.i_q");
    };

    if (design.topology == Topology::NoInner) {
        const auto& z = *design.zvirt;
        blocks.push_back(virtual_impedance_block(z, p + ".zv"));
        wire(p + ".ti.x_d", p + ".zv.i_d");
        wire(p + ".ti.x_q", p + ".zv.i_q");
        // vcmd = [v_ref; 0] - dv
        Mat d(2, 3);
        d << 1, -1, 0,
             0, 0, -1;
        std::vector<std::string> ins = {p + ".ni.vref", p + ".ni.dv_d", p + ".ni.dv_q"};
        blocks.push_back(gain_block(d, ins, {p + ".vcmd_d", p + ".vcmd_q"}));
        wire(p + ".zv.dv_d", p + ".ni.dv_d");
        wire(p + ".zv.dv_q", p + ".ni.dv_q");
        if (!freeze_outer) {
            wire(p + ".qlc.dv", p + ".ni.vref");
        } else {
            blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {p + ".zero_unused"}));
            wire(p + ".zero_unused", p + ".ni.vref");
        }
    } else if (design.topology == Topology::CurrentOnly) {
        const auto& y = *design.yvirt;
        blocks.push_back(virtual_admittance_block(y, wb, p + ".yv"));
        // dv = [v_ref;0] - v_pcc_dq
        Mat d(2, 3);
        d << 1, -1, 0,
             0, 0, -1;
        blocks.push_back(gain_block(d, {p + ".ya.vref", p + ".ya.v_d", p + ".ya.v_q"},
                                    {p + ".ya.dv_d", p + ".ya.dv_q"}));
        wire(p + ".ya.dv_d", p + ".yv.dv_d");
        wire(p + ".ya.dv_q", p + ".yv.dv_q");
        wire(p + ".tv.x_d", p + ".ya.v_d");
        wire(p + ".tv.x_q", p + ".ya.v_q");
        if (!freeze_outer)
            wire(p + ".qlc.dv", p + ".ya.vref");
        else {
            blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {p + ".zero_unused"}));
            wire(p + ".zero_unused", p + ".ya.vref");
        }
        add_cc(p + ".yv.iref_d", p + ".yv.iref_q");
    } else {
        const auto& z = *design.zvirt;
        const auto& il = *design.inner;
        blocks.push_back(virtual_impedance_block(z, p + ".zv"));
        wire(p + ".ti.x_d", p + ".zv.i_d");
        wire(p + ".ti.x_q", p + ".zv.i_q");
        // v_pcc_ref = [v_ref;0] - dv; e_v = v_pcc_ref - v_pcc
        Mat d(2, 5);
        // inputs: vref dv_d dv_q v_d v_q
        d << 1, -1, 0, -1, 0,
             0, 0, -1, 0, -1;
        blocks.push_back(gain_block(d,
                                    {p + ".ve.vref", p + ".ve.dv_d", p + ".ve.dv_q",
                                     p + ".ve.v_d", p + ".ve.v_q"},
                                    {p + ".ve.e_d", p + ".ve.e_q"}));
        wire(p + ".zv.dv_d", p + ".ve.dv_d");
        wire(p + ".zv.dv_q", p + ".ve.dv_q");
        wire(p + ".tv.x_d", p + ".ve.v_d");
        wire(p + ".tv.x_q", p + ".ve.v_q");
        if (!freeze_outer)
            wire(p + ".qlc.dv", p + ".ve.vref");
        else {
            blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {p + ".zero_unused"}));
            wire(p + ".zero_unused", p + ".ve.vref");
        }
        blocks.push_back(lag_pi_block(il.vc_kp, il.vc_ki, il.vc_leak,
                                      p + ".vc.e_d", p + ".vc.u_d", p + ".vci_d"));
        blocks.push_back(lag_pi_block(il.vc_kp, il.vc_ki, il.vc_leak,
                                      p + ".vc.e_q", p + ".vc.u_q", p + ".vci_q"));
        wire(p + ".ve.e_d", p + ".vc.e_d");
        wire(p + ".ve.e_q", p + ".vc.e_q");
        if (il.t_m_vc > 0.0) {
            blocks.push_back(lowpass_block(il.t_m_vc, p + ".vcf.u_d", p + ".vcf.y_d", p + ".vcf_d"));
            blocks.push_back(lowpass_block(il.t_m_vc, p + ".vcf.u_q", p + ".vcf.y_q", p + ".vcf_q"));
        } else {
            blocks.push_back(gain_block(1.0, p + ".vcf.u_d", p + ".vcf.y_d"));
            blocks.push_back(gain_block(1.0, p + ".vcf.u_q", p + ".vcf.y_q"));
        }
        wire(p + ".tg.x_d", p + ".vcf.u_d");
        wire(p + ".tg.x_q", p + ".vcf.u_q");
        // iref = u_v + ff + decoupling on v_pcc
        Mat di(2, 6);
        // inputs: u_d u_q ff_d ff_q v_d v_q
        di << 1, 0, 1, 0, 0, -il.omega_c,
              0, 1, 0, 1, il.omega_c, 0;
        blocks.push_back(gain_block(di,
                                    {p + ".ir.u_d", p + ".ir.u_q", p + ".ir.ff_d",
                                     p + ".ir.ff_q", p + ".ir.v_d", p + ".ir.v_q"},
                                    {p + ".iref_d", p + ".iref_q"}));
        wire(p + ".vc.u_d", p + ".ir.u_d");
        wire(p + ".vc.u_q", p + ".ir.u_q");
        wire(p + ".vcf.y_d", p + ".ir.ff_d");
        wire(p + ".vcf.y_q", p + ".ir.ff_q");
        wire(p + ".tv.x_d", p + ".ir.v_d");
        wire(p + ".tv.x_q", p + ".ir.v_q");
        add_cc(p + ".iref_d", p + ".iref_q");
    }

    // ---- delay and back-transform ----------------------------------------
    blocks.push_back(pade3(design.td, p + ".pd.u", p + ".pd.y", p + ".pade_d"));
    blocks.push_back(pade3(design.td, p + ".pq.u", p + ".pq.y", p + ".pade_q"));
    wire(p + ".vcmd_d", p + ".pd.u");
    wire(p + ".vcmd_q", p + ".pq.u");
    blocks.push_back(gain_block(Mat2::Identity(),
                                {p + ".rt.u_d", p + ".rt.u_q"},
                                {p + ".vbr_d", p + ".vbr_q"}));
    wire(p + ".pd.y", p + ".rt.u_d");
    wire(p + ".pq.y", p + ".rt.u_q");

    if (!freeze_outer) {
        blocks.push_back(t_vsc_inv_block(op.v_br_dq0, op.theta0, p + ".to"));
        wire(p + ".theta_out", p + ".to.theta");
    } else {
        blocks.push_back(rot_inv_block(op.theta0, p + ".to"));
    }
    wire(p + ".vbr_d", p + ".to.x_d");
    wire(p + ".vbr_q", p + ".to.x_q");

    if (meas_bridge) {
        wire(p + ".vbr_d", p + ".pm.v_d");
        wire(p + ".vbr_q", p + ".pm.v_q");
    } else {
        wire(p + ".tv.x_d", p + ".pm.v_d");
        wire(p + ".tv.x_q", p + ".pm.v_q");
    }
    wire(p + ".ti.x_d", p + ".pm.i_d");
    wire(p + ".ti.x_q", p + ".pm.i_q");
    if (!freeze_outer) {
        wire(p + ".pm.p", p + ".plc.p_err", -1.0);
        wire(p + ".pm.q", p + ".qlc.q_err", -1.0);
    }

    std::vector<std::string> ext_out = {p + ".to.x_D", p + ".to.x_Q"};
    if (!freeze_outer) ext_out.push_back(p + ".omega_vsc");
    ext_out.push_back(p + ".pm.p");
    ext_out.push_back(p + ".pm.q");

    auto sys = interconnect(blocks, wires, ext_in, ext_out, summing);
    // friendlier public labels
    sys.output_labels[0] = p + ".vconv_D";
    sys.output_labels[1] = p + ".vconv_Q";
    sys.output_labels[freeze_outer ? 2 : 3] = p + ".P";
    sys.output_labels[freeze_outer ? 3 : 4] = p + ".Q";
    return sys;
}

}  // namespace gfmlab
