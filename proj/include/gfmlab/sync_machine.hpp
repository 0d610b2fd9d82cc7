#pragma once

// Salient-pole synchronous generator: coupled-circuit flux model derived
// from standard parameters, with stator transients retained, plus the
// simplified AVR and governor. The stator is merged exactly with its series
// external branch (the machine "feeder"), which is how the assembly connects
// it to the network without an artificial shunt at the machine bus.
//
// Frame: the network DQ frame is this machine's rotor frame, so the stator
// equations need no rotation. Generator convention (current out of the
// machine), q axis leading d.

#include "gfmlab/frames.hpp"
#include "gfmlab/lti.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gfmlab {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct SgParams {
    // standard (operational) parameters, pu / seconds
    double xd = 1.305, xq = 0.474;
    double xd_p = 0.296;
    double xd_pp = 0.252, xq_pp = 0.243;
    double xl = 0.18;
    double ra = 0.003;
    double td0_p = 1.01, td0_pp = 0.053, tq0_pp = 0.1;
    double h = 3.7;   // s
    double d = 0.0;   // damping, pu torque per pu speed
    double omega_b = 100.0 * M_PI;
    // optional q-axis transient pair; adds a second q damper winding when set
    std::optional<double> xq_p;
    std::optional<double> tq0_p;

    void validate() const {
        detail::require(xd > xd_p && xd_p > xd_pp && xd_pp > xl,
                        "reactances must satisfy Xd > Xd' > Xd'' > Xl");
        detail::require(xq > xq_pp && xq_pp > xl, "need Xq > Xq'' > Xl");
        detail::require(td0_p > 0 && td0_pp > 0 && tq0_pp > 0, "time constants must be positive");
        detail::require(h > 0, "inertia must be positive");
        if (xq_p) detail::require(tq0_p.has_value() && *xq_p > xq_pp && *xq_p < xq,
                                  "optional Xq' needs Tq0' and Xq > Xq' > Xq''");
    }
};

struct AvrParams {
    double kp = 1.0;
    double ki = 10.0;
    double t_avr = 0.02;  // s
    void validate() const { detail::require(t_avr > 0.0, "T_AVR must be positive"); }
};

struct GovParams {
    double droop_r = 0.05;  // pu
    double t_gov = 0.5;     // s
    double omega_set = 1.0;
    void validate() const {
        detail::require(droop_r > 0.0, "governor droop must be positive");
        detail::require(t_gov > 0.0, "T_gov must be positive");
    }
};

// ---------------------------------------------------------------------------
// AVR / governor blocks (LTI form)
// ---------------------------------------------------------------------------

/// G_AVR = (Kp s + Ki)/s * 1/(1 + s T): voltage error -> field voltage.
inline StateSpaceBlock avr_block(const AvrParams& p, const std::string& prefix = "avr") {
    p.validate();
    auto pi = pi_block(p.kp, p.ki, prefix + ".e", prefix + ".u", prefix + ".int");
    auto lp = lowpass_block(p.t_avr, prefix + ".lp_u", prefix + ".efd", prefix + ".lp");
    return interconnect({pi, lp}, {{prefix + ".u", prefix + ".lp_u"}},
                        {{prefix + ".e"}}, {prefix + ".efd"});
}

/// G_gov = (1/R) * 1/(1 + s T): speed deviation -> mechanical power.
inline StateSpaceBlock gov_block(const GovParams& p, const std::string& prefix = "gov") {
    p.validate();
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << -1.0 / p.t_gov;
    b << 1.0 / (p.droop_r * p.t_gov);
    c << 1.0;
    d << 0.0;
    return {a, b, c, d, {prefix}, {prefix + ".dw"}, {prefix + ".dp"}};
}

// ---------------------------------------------------------------------------
// Coupled-circuit conversion
// ---------------------------------------------------------------------------

namespace sg_detail {

/// Fundamental winding constants recovered from the standard parameters via
/// the classical open-circuit time-constant relations.
struct Windings {
    // d axis
    double xad, xfd, xkd, rfd, rkd;
    // q axis: kq1 always present, kq2 only with the optional transient pair
    double xaq, xkq1, rkq1;
    bool has_kq2 = false;
    double xkq2 = 0.0, rkq2 = 0.0;
    double xd_pp_model, xq_pp_model;

    // psi''_d = kfd psi_fd + kkd psi_kd, rotor currents = Gd psi + hd i_d
    Mat2 gd;
    Vec2 hd;
    double kfd, kkd;
};

inline Windings derive(const SgParams& p) {
    Windings w{};
    const double wb = p.omega_b;
    w.xad = p.xd - p.xl;
    w.xfd = w.xad * (p.xd_p - p.xl) / (p.xd - p.xd_p);
    const double inv_kd = 1.0 / (p.xd_pp - p.xl) - 1.0 / w.xad - 1.0 / w.xfd;
    detail::require(inv_kd > 0.0, "inconsistent d-axis reactances");
    w.xkd = 1.0 / inv_kd;
    w.rfd = (w.xad + w.xfd) / (wb * p.td0_p);
    w.rkd = (w.xkd + w.xad * w.xfd / (w.xad + w.xfd)) / (wb * p.td0_pp);

    w.xaq = p.xq - p.xl;
    if (p.xq_p) {
        w.has_kq2 = true;
        w.xkq1 = w.xaq * (*p.xq_p - p.xl) / (p.xq - *p.xq_p);
        w.rkq1 = (w.xaq + w.xkq1) / (wb * *p.tq0_p);
        const double inv_kq2 = 1.0 / (p.xq_pp - p.xl) - 1.0 / w.xaq - 1.0 / w.xkq1;
        detail::require(inv_kq2 > 0.0, "inconsistent q-axis reactances");
        w.xkq2 = 1.0 / inv_kq2;
        w.rkq2 = (w.xkq2 + w.xaq * w.xkq1 / (w.xaq + w.xkq1)) / (wb * p.tq0_pp);
    } else {
        const double inv_kq = 1.0 / (p.xq_pp - p.xl) - 1.0 / w.xaq;
        detail::require(inv_kq > 0.0, "inconsistent q-axis reactances");
        w.xkq1 = 1.0 / inv_kq;
        w.rkq1 = (w.xkq1 + w.xaq) / (wb * p.tq0_pp);
    }

    // d-axis rotor inductance matrix Md = [[xad+xfd, xad],[xad, xad+xkd]]
    Mat2 md;
    md << w.xad + w.xfd, w.xad, w.xad, w.xad + w.xkd;
    w.gd = md.inverse();
    w.hd = w.gd * Vec2(w.xad, w.xad);
    // psi_d = -(xad+xl) i_d + xad (i_fd + i_kd)
    //       = -xd''_model i_d + [xad, xad] Gd psi_rot
    Vec2 krow = w.gd.transpose() * Vec2(w.xad, w.xad);
    w.kfd = krow[0];
    w.kkd = krow[1];
    w.xd_pp_model = (w.xad + p.xl) - Vec2(w.xad, w.xad).dot(w.hd);
    w.xq_pp_model = p.xl + (w.has_kq2
                                ? 1.0 / (1.0 / w.xaq + 1.0 / w.xkq1 + 1.0 / w.xkq2)
                                : 1.0 / (1.0 / w.xaq + 1.0 / w.xkq1));
    return w;
}

}  // namespace sg_detail

// ---------------------------------------------------------------------------
// Nonlinear component
// ---------------------------------------------------------------------------

struct SgInputs {
    Vec2 v_ext_DQ = Vec2::Zero();  // voltage at the far end of the feeder branch
    double v_ref = 1.0;            // AVR setpoint
    double p_disp = 0.0;           // governor dispatch (added to the droop output)
};

struct SgSignals {
    Vec2 i_DQ = Vec2::Zero();      // machine current into the network
    double omega = 1.0;            // pu rotor speed (network frame speed)
    Vec2 v_term = Vec2::Zero();    // machine terminal voltage
    double v_term_mag = 1.0;
    double p_term = 0.0, q_term = 0.0;
    double p_mech = 0.0, t_elec = 0.0;
    double efd = 0.0;
};

/// State layout: [i_D, i_Q, psi_fd, psi_kd, psi_kq1, (psi_kq2), omega,
/// avr_int, avr_lp, gov].
class SgComponent {
public:
    SgComponent(SgParams sg, AvrParams avr, GovParams gov,
                double feeder_r = 0.0, double feeder_x = 0.0)
        : p_(std::move(sg)), avr_(avr), gov_(gov), re_(feeder_r), xe_(feeder_x) {
        p_.validate();
        avr_.validate();
        gov_.validate();
        w_ = sg_detail::derive(p_);
        nq_ = w_.has_kq2 ? 2 : 1;
        nx_ = 2 + 2 + nq_ + 1 + 2 + 1;
    }

    int nx() const { return nx_; }
    const SgParams& params() const { return p_; }
    const sg_detail::Windings& windings() const { return w_; }
    double feeder_r() const { return re_; }
    double feeder_x() const { return xe_; }
    void set_feeder(double r, double x) { re_ = r; xe_ = x; }

    std::vector<std::string> state_labels(const std::string& prefix = "sg") const {
        std::vector<std::string> l = {prefix + ".i_D", prefix + ".i_Q", prefix + ".psi_fd",
                                      prefix + ".psi_kd", prefix + ".psi_kq1"};
        if (nq_ == 2) l.push_back(prefix + ".psi_kq2");
        l.push_back(prefix + ".omega");
        l.push_back(prefix + ".avr_int");
        l.push_back(prefix + ".avr_lp");
        l.push_back(prefix + ".gov");
        return l;
    }

    void eval(const Vec& x, const SgInputs& in, Vec& dx, SgSignals* sig = nullptr) const {
        const double wb = p_.omega_b;
        const double i_d = x[0], i_q = x[1];
        const double psi_fd = x[2], psi_kd = x[3];
        const double psi_kq1 = x[4];
        const double psi_kq2 = nq_ == 2 ? x[5] : 0.0;
        const int iw = 2 + 2 + nq_;
        const double omega = x[iw];
        const double avr_int = x[iw + 1], avr_lp = x[iw + 2], gov_x = x[iw + 3];

        // rotor currents
        const Vec2 i_rot_d = w_.gd * Vec2(psi_fd, psi_kd) + w_.hd * i_d;
        const double i_fd = i_rot_d[0], i_kd = i_rot_d[1];
        double i_kq1, i_kq2 = 0.0;
        if (nq_ == 1) {
            i_kq1 = (psi_kq1 + w_.xaq * i_q) / (w_.xaq + w_.xkq1);
        } else {
            Mat2 mq;
            mq << w_.xaq + w_.xkq1, w_.xaq, w_.xaq, w_.xaq + w_.xkq2;
            const Vec2 iq2 = mq.inverse() * (Vec2(psi_kq1, psi_kq2) + Vec2(w_.xaq, w_.xaq) * i_q);
            i_kq1 = iq2[0];
            i_kq2 = iq2[1];
        }

        // stator flux and its rotor-driven part
        const double psi_d = -(w_.xad + p_.xl) * i_d + w_.xad * (i_fd + i_kd);
        const double psi_q = -(w_.xaq + p_.xl) * i_q + w_.xaq * (i_kq1 + i_kq2);

        // field voltage in exciter pu (E_fd = Xad i_fd at open-circuit steady state)
        const double efd = avr_lp;
        const double dpsi_fd = wb * (efd * w_.rfd / w_.xad - w_.rfd * i_fd);
        const double dpsi_kd = -wb * w_.rkd * i_kd;
        const double dpsi_kq1 = -wb * w_.rkq1 * i_kq1;
        const double dpsi_kq2 = nq_ == 2 ? -wb * w_.rkq2 * i_kq2 : 0.0;

        const double dpsi_pp_d = w_.kfd * dpsi_fd + w_.kkd * dpsi_kd;
        double dpsi_pp_q;
        if (nq_ == 1) {
            dpsi_pp_q = (w_.xaq / (w_.xaq + w_.xkq1)) * dpsi_kq1;
        } else {
            Mat2 mq;
            mq << w_.xaq + w_.xkq1, w_.xaq, w_.xaq, w_.xaq + w_.xkq2;
            const Vec2 kq = mq.inverse().transpose() * Vec2(w_.xaq, w_.xaq);
            dpsi_pp_q = kq[0] * dpsi_kq1 + kq[1] * dpsi_kq2;
        }

        // stator + feeder (series R_e, X_e), generator convention
        const double ra_t = p_.ra + re_;
        const double di_d = wb / (w_.xd_pp_model + xe_) *
                            (-in.v_ext_DQ[0] - ra_t * i_d + dpsi_pp_d / wb -
                             omega * (psi_q - xe_ * i_q));
        const double di_q = wb / (w_.xq_pp_model + xe_) *
                            (-in.v_ext_DQ[1] - ra_t * i_q + dpsi_pp_q / wb +
                             omega * (psi_d - xe_ * i_d));

        // swing
        const double t_elec = psi_d * i_q - psi_q * i_d;
        const double p_mech = in.p_disp + gov_x;
        const double t_mech = p_mech / omega;
        const double domega = (t_mech - t_elec - p_.d * (omega - 1.0)) / (2.0 * p_.h);

        // terminal voltage (exact, via the just-computed current derivatives)
        const Vec2 v_term(in.v_ext_DQ[0] + re_ * i_d + (xe_ / wb) * di_d - omega * xe_ * i_q,
                          in.v_ext_DQ[1] + re_ * i_q + (xe_ / wb) * di_q + omega * xe_ * i_d);
        const double vmag = v_term.norm();

        // AVR: PI -> lowpass -> E_fd
        const double v_err = in.v_ref - vmag;
        const double avr_u = avr_.kp * v_err + avr_.ki * avr_int;
        const double davr_int = v_err;
        const double davr_lp = (avr_u - avr_lp) / avr_.t_avr;

        // governor
        const double dgov = ((gov_.omega_set - omega) / gov_.droop_r - gov_x) / gov_.t_gov;

        if (dx.size() != nx_) dx.resize(nx_);
        dx[0] = di_d;
        dx[1] = di_q;
        dx[2] = dpsi_fd;
        dx[3] = dpsi_kd;
        dx[4] = dpsi_kq1;
        if (nq_ == 2) dx[5] = dpsi_kq2;
        dx[iw] = domega;
        dx[iw + 1] = davr_int;
        dx[iw + 2] = davr_lp;
        dx[iw + 3] = dgov;

        if (sig) {
            sig->i_DQ = Vec2(i_d, i_q);
            sig->omega = omega;
            sig->v_term = v_term;
            sig->v_term_mag = vmag;
            sig->p_term = v_term[0] * i_d + v_term[1] * i_q;
            sig->q_term = v_term[1] * i_d - v_term[0] * i_q;
            sig->p_mech = p_mech;
            sig->t_elec = t_elec;
            sig->efd = efd;
        }
    }

    /// Warm start near an operating point: terminal voltage magnitude v, no
    /// current. Newton refines from here.
    Vec flat_state(double v = 1.0) const {
        Vec x = Vec::Zero(nx_);
        const double i_fd = v / w_.xad;
        // psi_fd with zero stator/damper current
        x[2] = (w_.xad + w_.xfd) * i_fd;
        x[3] = w_.xad * i_fd;
        const int iw = 2 + 2 + nq_;
        x[iw] = 1.0;
        x[iw + 1] = v / avr_.ki;  // integrator holds E_fd = Ki * x at zero error
        x[iw + 2] = v;
        return x;
    }

    /// Analytic linearization at the state/input point. Inputs
    /// [<p>.v_ext_D, <p>.v_ext_Q, <p>.v_ref, <p>.p_disp]; outputs
    /// [<p>.i_D, <p>.i_Q, <p>.omega, <p>.P, <p>.Q, <p>.vmag].
    StateSpaceBlock linearize(const Vec& x0, const SgInputs& in0,
                              const std::string& prefix = "sg") const;

private:
    SgParams p_;
    AvrParams avr_;
    GovParams gov_;
    double re_, xe_;
    sg_detail::Windings w_;
    int nq_ = 1;
    int nx_ = 0;
};

// The analytic Jacobian follows the eval() chain term by term. Bilinear
// products differentiate exactly; the only non-polynomial term is |v_term|.
inline StateSpaceBlock SgComponent::linearize(const Vec& x0, const SgInputs& in0,
                                              const std::string& prefix) const {
    const double wb = p_.omega_b;
    const int n = nx_;
    const int iw = 2 + 2 + nq_;
    const int nu = 4;
    Mat A = Mat::Zero(n, n), B = Mat::Zero(n, nu);

    const double i_d = x0[0], i_q = x0[1];
    const double psi_fd = x0[2], psi_kd = x0[3];
    const double psi_kq1 = x0[4];
    const double psi_kq2 = nq_ == 2 ? x0[5] : 0.0;
    const double omega = x0[iw];
    const double gov_x = x0[iw + 3];

    // rotor current gradients
    // i_fd = gd.row(0) . psi_rot_d + hd[0] i_d, etc.
    const Vec2 i_rot_d = w_.gd * Vec2(psi_fd, psi_kd) + w_.hd * i_d;
    Mat2 mq_inv;
    Vec2 hq, kqv;
    double i_kq1, i_kq2 = 0.0;
    if (nq_ == 1) {
        i_kq1 = (psi_kq1 + w_.xaq * i_q) / (w_.xaq + w_.xkq1);
    } else {
        Mat2 mq;
        mq << w_.xaq + w_.xkq1, w_.xaq, w_.xaq, w_.xaq + w_.xkq2;
        mq_inv = mq.inverse();
        hq = mq_inv * Vec2(w_.xaq, w_.xaq);
        kqv = mq_inv.transpose() * Vec2(w_.xaq, w_.xaq);
        const Vec2 iq2 = mq_inv * Vec2(psi_kq1, psi_kq2) + hq * i_q;
        i_kq1 = iq2[0];
        i_kq2 = iq2[1];
    }

    // psi_d = -xd''_model i_d + kfd psi_fd + kkd psi_kd
    const double psi_d = -w_.xd_pp_model * i_d + w_.kfd * psi_fd + w_.kkd * psi_kd;
    auto dpsi_d = [&](int j) -> double {
        if (j == 0) return -w_.xd_pp_model;
        if (j == 2) return w_.kfd;
        if (j == 3) return w_.kkd;
        return 0.0;
    };
    double kq1_c, kq2_c = 0.0;
    if (nq_ == 1)
        kq1_c = w_.xaq / (w_.xaq + w_.xkq1);
    else {
        kq1_c = kqv[0];
        kq2_c = kqv[1];
    }
    const double psi_q = -w_.xq_pp_model * i_q + kq1_c * psi_kq1 + kq2_c * psi_kq2;
    auto dpsi_q = [&](int j) -> double {
        if (j == 1) return -w_.xq_pp_model;
        if (j == 4) return kq1_c;
        if (nq_ == 2 && j == 5) return kq2_c;
        return 0.0;
    };

    // rotor flux equations
    // dpsi_fd = wb (efd rfd/xad - rfd i_fd); i_fd = gd(0,:) psi + hd[0] i_d
    A(2, 2) = -wb * w_.rfd * w_.gd(0, 0);
    A(2, 3) = -wb * w_.rfd * w_.gd(0, 1);
    A(2, 0) = -wb * w_.rfd * w_.hd[0];
    A(2, iw + 2) = wb * w_.rfd / w_.xad;  // efd = avr_lp
    A(3, 2) = -wb * w_.rkd * w_.gd(1, 0);
    A(3, 3) = -wb * w_.rkd * w_.gd(1, 1);
    A(3, 0) = -wb * w_.rkd * w_.hd[1];
    if (nq_ == 1) {
        const double g = 1.0 / (w_.xaq + w_.xkq1);
        A(4, 4) = -wb * w_.rkq1 * g;
        A(4, 1) = -wb * w_.rkq1 * w_.xaq * g;
    } else {
        A(4, 4) = -wb * w_.rkq1 * mq_inv(0, 0);
        A(4, 5) = -wb * w_.rkq1 * mq_inv(0, 1);
        A(4, 1) = -wb * w_.rkq1 * hq[0];
        A(5, 4) = -wb * w_.rkq2 * mq_inv(1, 0);
        A(5, 5) = -wb * w_.rkq2 * mq_inv(1, 1);
        A(5, 1) = -wb * w_.rkq2 * hq[1];
    }

    // dpsi''_d/dt = kfd dpsi_fd + kkd dpsi_kd: rows 2,3 combined
    Eigen::RowVectorXd dppd = w_.kfd * A.row(2) + w_.kkd * A.row(3);
    Eigen::RowVectorXd dppq;
    if (nq_ == 1)
        dppq = kq1_c * A.row(4);
    else
        dppq = kq1_c * A.row(4) + kq2_c * A.row(5);

    // stator/feeder current rows
    const double ra_t = p_.ra + re_;
    const double kd = wb / (w_.xd_pp_model + xe_);
    const double kq = wb / (w_.xq_pp_model + xe_);
    // di_d = kd (-v_extD - ra_t i_d + dpsi''_d/wb - omega (psi_q - xe i_q))
    for (int j = 0; j < n; ++j) {
        double a = dppd[j] / wb;
        if (j == 0) a += -ra_t;
        a += -omega * dpsi_q(j);
        if (j == 1) a += omega * xe_;
        if (j == iw) a += -(psi_q - xe_ * i_q);
        A(0, j) = kd * a;
    }
    B(0, 0) = -kd;
    for (int j = 0; j < n; ++j) {
        double a = dppq[j] / wb;
        if (j == 1) a += -ra_t;
        a += omega * dpsi_d(j);
        if (j == 0) a += -omega * xe_;
        if (j == iw) a += psi_d - xe_ * i_d;
        A(1, j) = kq * a;
    }
    B(1, 1) = -kq;

    // swing: domega = ((p_disp + gov)/omega - t_e - D (omega-1)) / (2H)
    // t_e = psi_d i_q - psi_q i_d
    const double p_mech = in0.p_disp + gov_x;
    for (int j = 0; j < n; ++j) {
        double dte = dpsi_d(j) * i_q - dpsi_q(j) * i_d;
        if (j == 1) dte += psi_d;
        if (j == 0) dte += -psi_q;
        double a = -dte;
        if (j == iw) a += -p_mech / (omega * omega) - p_.d;
        if (j == iw + 3) a += 1.0 / omega;
        A(iw, j) = a / (2.0 * p_.h);
    }
    B(iw, 3) = 1.0 / (omega * 2.0 * p_.h);

    // terminal voltage rows (functions of states, inputs and di/dt rows)
    // v_term_d = v_extD + re i_d + (xe/wb) di_d - omega xe i_q
    Eigen::RowVectorXd vtd = (xe_ / wb) * A.row(0);
    Eigen::RowVectorXd vtq = (xe_ / wb) * A.row(1);
    Eigen::RowVectorXd vtd_u = (xe_ / wb) * B.row(0);
    Eigen::RowVectorXd vtq_u = (xe_ / wb) * B.row(1);
    vtd[0] += re_;
    vtd[1] += -omega * xe_;
    vtd[iw] += -xe_ * i_q;
    vtd_u[0] += 1.0;
    vtq[1] += re_;
    vtq[0] += omega * xe_;
    vtq[iw] += xe_ * i_d;
    vtq_u[1] += 1.0;

    // recompute operating terminal voltage for |v| gradient
    Vec f0(n);
    SgSignals sig0;
    eval(x0, in0, f0, &sig0);
    const Vec2 vt0 = sig0.v_term;
    const double vmag0 = std::max(sig0.v_term_mag, 1e-12);
    Eigen::RowVectorXd vmag_x = (vt0[0] * vtd + vt0[1] * vtq) / vmag0;
    Eigen::RowVectorXd vmag_u = (vt0[0] * vtd_u + vt0[1] * vtq_u) / vmag0;

    // AVR rows
    // davr_int = v_ref - vmag
    A.row(iw + 1) = -vmag_x;
    B.row(iw + 1) = -vmag_u;
    B(iw + 1, 2) += 1.0;
    // davr_lp = (kp (v_ref - vmag) + ki avr_int - avr_lp)/T
    A.row(iw + 2) = (-avr_.kp * vmag_x) / avr_.t_avr;
    A(iw + 2, iw + 1) += avr_.ki / avr_.t_avr;
    A(iw + 2, iw + 2) += -1.0 / avr_.t_avr;
    B.row(iw + 2) = (-avr_.kp * vmag_u) / avr_.t_avr;
    B(iw + 2, 2) += avr_.kp / avr_.t_avr;

    // governor
    A(iw + 3, iw) = -1.0 / (gov_.droop_r * gov_.t_gov);
    A(iw + 3, iw + 3) = -1.0 / gov_.t_gov;

    // outputs: i_D, i_Q, omega, P, Q, vmag
    const int ny = 6;
    Mat C = Mat::Zero(ny, n), D = Mat::Zero(ny, nu);
    C(0, 0) = 1.0;
    C(1, 1) = 1.0;
    C(2, iw) = 1.0;
    // P = v_d i_d + v_q i_q
    C.row(3) = i_d * vtd + i_q * vtq;
    C(3, 0) += vt0[0];
    C(3, 1) += vt0[1];
    D.row(3) = i_d * vtd_u + i_q * vtq_u;
    // Q = v_q i_d - v_d i_q
    C.row(4) = i_d * vtq - i_q * vtd;
    C(4, 0) += vt0[1];
    C(4, 1) += -vt0[0];
    D.row(4) = i_d * vtq_u - i_q * vtd_u;
    C.row(5) = vmag_x;
    D.row(5) = vmag_u;

    return {A, B, C, D, state_labels(prefix),
            {prefix + ".v_ext_D", prefix + ".v_ext_Q", prefix + ".v_ref", prefix + ".p_disp"},
            {prefix + ".i_D", prefix + ".i_Q", prefix + ".omega", prefix + ".P", prefix + ".Q",
             prefix + ".vmag"}};
}

}  // namespace gfmlab
