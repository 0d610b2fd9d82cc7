#pragma once

// DQ-frame dynamic model of the passive network: converter LCL filter,
// transformer + line path to the load bus, load, and the switchable branch
// groups used by the event studies. Series-connected RL elements lump into
// one branch per current path (only distinct current paths carry states).
//
// Switchable parallel groups are represented by their lumped (R, X) with a
// current-share jump applied when a member opens. All members share the
// same X/R ratio, which makes the lumped terminal behaviour exact: the
// inter-branch difference mode is unobservable from the terminals.

#include "gfmlab/frames.hpp"
#include "gfmlab/lti.hpp"

#include <string>
#include <vector>

namespace gfmlab {

struct SeriesZ {
    double r = 0.0;
    double x = 0.0;
    double mag() const { return std::hypot(r, x); }
};

inline SeriesZ operator+(const SeriesZ& a, const SeriesZ& b) { return {a.r + b.r, a.x + b.x}; }

struct NetworkParams {
    double l1 = 0.2, r1 = 0.02;       // converter reactor
    double rf = 0.3, cf = 0.05;       // damped filter capacitor at the PCC
    SeriesZ z_t1{0.0, 0.1};           // converter transformer
    SeriesZ z_tl1{0.01, 0.1};         // line, PCC side
    SeriesZ z_tl2{0.02, 0.2};         // line, machine side
    double z_load = 1.0;              // resistive load
    double omega_b = 100.0 * M_PI;

    void validate() const {
        detail::require(l1 > 0.0 && cf > 0.0, "inductances and capacitances must be positive");
        detail::require(z_load > 0.0, "load resistance must be positive");
        detail::require(rf > 0.0, "capacitor damping resistance must be positive");
        detail::require(z_t1.x + z_tl1.x > 0.0 && z_tl2.x > 0.0, "branch reactances must be positive");
    }
};

// ---------------------------------------------------------------------------
// Switchable branch groups (event-study topology)
// ---------------------------------------------------------------------------

struct ParallelBranch {
    SeriesZ z;
    bool closed = true;
    int switch_id = 0;  // 0 = fixed branch
};

struct BranchGroup {
    std::vector<ParallelBranch> branches;

    SeriesZ lumped() const {
        double g_sum = 0.0, angle_r = 0.0, angle_x = 0.0;
        int n_closed = 0;
        for (const auto& b : branches) {
            if (!b.closed) continue;
            detail::require(b.z.mag() > 0.0, "zero-impedance branch");
            g_sum += 1.0 / b.z.mag();
            angle_r = b.z.r / b.z.mag();
            angle_x = b.z.x / b.z.mag();
            ++n_closed;
        }
        detail::require(n_closed > 0, "opening this switch would disconnect the load path");
        const double zmag = 1.0 / g_sum;
        return {zmag * angle_r, zmag * angle_x};
    }

    /// Admittance share retained when `switch_id` opens; multiplies the
    /// lumped branch current at the switching instant (the opened member's
    /// share is forced to zero).
    double open_share(int switch_id) const {
        double g_all = 0.0, g_keep = 0.0;
        for (const auto& b : branches) {
            if (!b.closed) continue;
            const double g = 1.0 / b.z.mag();
            g_all += g;
            if (b.switch_id != switch_id) g_keep += g;
        }
        detail::require(g_keep > 0.0, "opening this switch would disconnect the load path");
        return g_keep / g_all;
    }

    void set_switch(int switch_id, bool closed) {
        for (auto& b : branches)
            if (b.switch_id == switch_id) b.closed = closed;
    }

    bool has_switch(int switch_id) const {
        for (const auto& b : branches)
            if (b.switch_id == switch_id) return true;
        return false;
    }
};

/// Event-study network shape: Z1 between PCC and load bus, Z2 between load
/// bus and machine. S1 carries part of Z1; S2 closes extra parallel paths on
/// both. The default realization reproduces the 0.2 pu base (S1 closed,
/// S2 open), 0.6 pu after S1 opens, and 0.1 pu after S2 closes.
struct EventTopology {
    BranchGroup z1;
    BranchGroup z2;
    bool s1 = true;
    bool s2 = false;

    static EventTopology standard(double x_over_r = 10.0) {
        auto mk = [&](double mag) -> SeriesZ {
            const double den = std::hypot(1.0, x_over_r);
            return {mag / den, mag * x_over_r / den};
        };
        EventTopology t;
        t.z1.branches = {{mk(0.6), true, 0}, {mk(0.3), true, 1}, {mk(0.2), false, 2}};
        t.z2.branches = {{mk(0.2), true, 0}, {mk(0.2), false, 2}};
        return t;
    }

    void apply(int switch_id, bool closed) {
        detail::require(z1.has_switch(switch_id) || z2.has_switch(switch_id),
                        "unknown switch id");
        z1.set_switch(switch_id, closed);
        z2.set_switch(switch_id, closed);
        if (switch_id == 1) s1 = closed;
        if (switch_id == 2) s2 = closed;
    }
};

// ---------------------------------------------------------------------------
// Standalone LTI network block (module-level; both sources as voltage inputs)
// ---------------------------------------------------------------------------

/// The Table-1 network as one labeled block at fixed frame speed omega0:
/// inputs [v_conv_D/Q, v_sg_D/Q, i_inj_D/Q], outputs [i_vsc, v_pcc, i_grid,
/// v_load]. States: three current paths + the capacitor (8 total).
inline StateSpaceBlock build_network_block(const NetworkParams& p, double omega0 = 1.0,
                                           const std::string& pre = "net") {
    p.validate();
    const double wb = p.omega_b;
    const SeriesZ z1 = p.z_t1 + p.z_tl1;
    const SeriesZ z2 = p.z_tl2;
    const double g_load = 1.0 / p.z_load;

    const int n = 8;  // i_l1(2) v_cf(2) i_z1(2) i_z2(2)
    Mat A = Mat::Zero(n, n), B = Mat::Zero(n, 6);
    const Mat2 J = jmat();

    auto blk2 = [&](Mat& M, int r, int c, const Mat2& v) { M.block<2, 2>(r, c) += v; };

    // node algebra (algebraic rows folded in):
    //   i_cf = i_l1 - i_z1 + i_inj
    //   v_pcc = v_cf + rf i_cf
    //   v_load = (i_z1 + i_z2) / g_load          (i_z2 oriented machine -> load)
    // v_pcc row coefficients on states/inputs:
    Mat vpcc_x = Mat::Zero(2, n), vpcc_u = Mat::Zero(2, 6);
    vpcc_x.block<2, 2>(0, 0) = p.rf * Mat2::Identity();    // i_l1
    vpcc_x.block<2, 2>(0, 2) = Mat2::Identity();           // v_cf
    vpcc_x.block<2, 2>(0, 4) = -p.rf * Mat2::Identity();   // i_z1
    vpcc_u.block<2, 2>(0, 4) = p.rf * Mat2::Identity();    // i_inj
    Mat vload_x = Mat::Zero(2, n);
    vload_x.block<2, 2>(0, 4) = Mat2::Identity() / g_load;
    vload_x.block<2, 2>(0, 6) = Mat2::Identity() / g_load;

    // i_l1: (l1/wb) di = v_conv - v_pcc - r1 i - w0 l1 J i
    blk2(A, 0, 0, -(p.r1 * wb / p.l1) * Mat2::Identity() - wb * omega0 * J);
    A.block<2, n>(0, 0) += -(wb / p.l1) * vpcc_x;
    B.block<2, 6>(0, 0) += -(wb / p.l1) * vpcc_u;
    B.block<2, 2>(0, 0) += (wb / p.l1) * Mat2::Identity();  // v_conv

    // v_cf: (cf/wb) dv = i_cf - w0 cf J v
    blk2(A, 2, 0, (wb / p.cf) * Mat2::Identity());   // i_l1
    blk2(A, 2, 4, -(wb / p.cf) * Mat2::Identity());  // i_z1
    blk2(A, 2, 2, -wb * omega0 * J);
    B.block<2, 2>(2, 4) += (wb / p.cf) * Mat2::Identity();  // i_inj

    // i_z1 (PCC -> load): (x1/wb) di = v_pcc - v_load - r i - w0 x1 J i
    blk2(A, 4, 4, -(z1.r * wb / z1.x) * Mat2::Identity() - wb * omega0 * J);
    A.block<2, n>(4, 0) += (wb / z1.x) * (vpcc_x - vload_x);
    B.block<2, 6>(4, 0) += (wb / z1.x) * vpcc_u;

    // i_z2 (machine -> load): (x2/wb) di = v_sg - v_load - r i - w0 x2 J i
    blk2(A, 6, 6, -(z2.r * wb / z2.x) * Mat2::Identity() - wb * omega0 * J);
    A.block<2, n>(6, 0) += -(wb / z2.x) * vload_x;
    B.block<2, 2>(6, 2) += (wb / z2.x) * Mat2::Identity();  // v_sg

    // outputs: i_vsc(2) v_pcc(2) i_grid(2) v_load(2)
    Mat C = Mat::Zero(8, n), D = Mat::Zero(8, 6);
    C.block<2, 2>(0, 0) = Mat2::Identity();
    C.block<2, n>(2, 0) = vpcc_x;
    D.block<2, 6>(2, 0) = vpcc_u;
    // i_grid = i_l1 - i_cf = i_z1 - i_inj
    C.block<2, 2>(4, 4) = Mat2::Identity();
    D.block<2, 2>(4, 4) = -Mat2::Identity();
    C.block<2, n>(6, 0) = vload_x;

    return {A, B, C, D,
            {pre + ".i_l1_D", pre + ".i_l1_Q", pre + ".v_cf_D", pre + ".v_cf_Q",
             pre + ".i_z1_D", pre + ".i_z1_Q", pre + ".i_z2_D", pre + ".i_z2_Q"},
            {pre + ".v_conv_D", pre + ".v_conv_Q", pre + ".v_sg_D", pre + ".v_sg_Q",
             pre + ".i_inj_D", pre + ".i_inj_Q"},
            {pre + ".i_vsc_D", pre + ".i_vsc_Q", pre + ".v_pcc_D", pre + ".v_pcc_Q",
             pre + ".i_grid_D", pre + ".i_grid_Q", pre + ".v_load_D", pre + ".v_load_Q"}};
}

// ---------------------------------------------------------------------------
// Assembly-facing component (frame speed as a signal; machine via feeder)
// ---------------------------------------------------------------------------

enum class NetKind { TwoSource, InfiniteBus };

struct NetInputs {
    Vec2 v_conv_DQ = Vec2::Zero();
    Vec2 i_sg_DQ = Vec2::Zero();   // machine feeder current into the load bus
    Vec2 v_src_DQ = Vec2::Zero();  // infinite-bus source
    Vec2 i_inj_DQ = Vec2::Zero();  // probe injection at the PCC
    double omega = 1.0;            // frame speed, pu
    double load_scale = 1.0;       // multiplies the base load conductance
};

struct NetSignals {
    Vec2 i_vsc = Vec2::Zero();
    Vec2 v_pcc = Vec2::Zero();
    Vec2 i_grid = Vec2::Zero();
    Vec2 v_load = Vec2::Zero();
    Vec2 i_z1 = Vec2::Zero();
    double p_load = 0.0;
    double loss = 0.0;  // series I^2 R + damping loss
};

/// Runtime-switchable network half: states [i_l1(2), v_cf(2), i_z1(2)].
/// In TwoSource form the z1 path runs PCC -> load bus and the machine feeder
/// current enters the load bus; in InfiniteBus form the z1 path runs
/// PCC -> source and there is no load.
class NetworkComponent {
public:
    NetworkComponent(NetworkParams p, NetKind kind) : p_(std::move(p)), kind_(kind) {
        p_.validate();
        if (kind_ == NetKind::TwoSource)
            z1_ = p_.z_t1 + p_.z_tl1;
        else
            z1_ = p_.z_t1 + SeriesZ{0.0, 0.1};  // 0.1 pu link to the infinite bus
        g_load_base_ = kind_ == NetKind::TwoSource ? 1.0 / p_.z_load : 0.0;
    }

    static constexpr int kNx = 6;
    int nx() const { return kNx; }
    NetKind kind() const { return kind_; }
    const NetworkParams& params() const { return p_; }

    // runtime topology knobs (events)
    void set_z1(const SeriesZ& z) { z1_ = z; }
    const SeriesZ& z1() const { return z1_; }
    void set_fault_pcc(double g) { g_fault_pcc_ = g; }
    void set_fault_load(double g) { g_fault_load_ = g; }
    void set_extra_load(double g) { g_extra_load_ = g; }
    double extra_load() const { return g_extra_load_; }

    std::vector<std::string> state_labels(const std::string& pre = "net") const {
        return {pre + ".i_l1_D", pre + ".i_l1_Q", pre + ".v_cf_D",
                pre + ".v_cf_Q", pre + ".i_z1_D", pre + ".i_z1_Q"};
    }

    void eval(const Vec& x, const NetInputs& in, Vec& dx, NetSignals* sig = nullptr) const {
        const double wb = p_.omega_b;
        const Vec2 i_l1(x[0], x[1]), v_cf(x[2], x[3]), i_z1(x[4], x[5]);
        const Mat2 J = jmat();

        // PCC node: i_cf = i_l1 - i_z1 + i_inj - g_fault_pcc v_pcc
        //           v_pcc = v_cf + rf i_cf
        const Vec2 i_pcc_net = i_l1 - i_z1 + in.i_inj_DQ;
        const Vec2 v_pcc = (v_cf + p_.rf * i_pcc_net) / (1.0 + p_.rf * g_fault_pcc_);
        const Vec2 i_cf = i_pcc_net - g_fault_pcc_ * v_pcc;

        // far end of the z1 path
        Vec2 v_far;
        double g_load = 0.0;
        if (kind_ == NetKind::TwoSource) {
            g_load = g_load_base_ * in.load_scale + g_fault_load_ + g_extra_load_;
            v_far = (i_z1 + in.i_sg_DQ) / g_load;
        } else {
            v_far = in.v_src_DQ;
        }

        if (dx.size() != kNx) dx.resize(kNx);
        const Vec2 di_l1 = (wb / p_.l1) * (in.v_conv_DQ - v_pcc - p_.r1 * i_l1) -
                           wb * in.omega * (J * i_l1);
        const Vec2 dv_cf = (wb / p_.cf) * i_cf - wb * in.omega * (J * v_cf);
        const Vec2 di_z1 = (wb / z1_.x) * (v_pcc - v_far - z1_.r * i_z1) -
                           wb * in.omega * (J * i_z1);
        dx[0] = di_l1[0];
        dx[1] = di_l1[1];
        dx[2] = dv_cf[0];
        dx[3] = dv_cf[1];
        dx[4] = di_z1[0];
        dx[5] = di_z1[1];

        if (sig) {
            sig->i_vsc = i_l1;
            sig->v_pcc = v_pcc;
            sig->i_grid = i_l1 - i_cf;
            sig->v_load = v_far;
            sig->i_z1 = i_z1;
            sig->p_load = kind_ == NetKind::TwoSource ? v_far.squaredNorm() * g_load : 0.0;
            sig->loss = p_.r1 * i_l1.squaredNorm() + z1_.r * i_z1.squaredNorm() +
                        p_.rf * i_cf.squaredNorm();
        }
    }

    /// Analytic linearization at (x0, in0). Inputs [<p>.v_conv_D/Q,
    /// <p>.i_sg_D/Q | <p>.v_src_D/Q, <p>.omega, <p>.i_inj_D/Q, <p>.load_scale];
    /// outputs [i_vsc, v_pcc, i_grid, v_load].
    StateSpaceBlock linearize(const Vec& x0, const NetInputs& in0,
                              const std::string& pre = "net") const {
        const double wb = p_.omega_b;
        const Mat2 J = jmat();
        const Vec2 i_l1(x0[0], x0[1]), v_cf(x0[2], x0[3]), i_z1(x0[4], x0[5]);
        const int n = kNx;
        const bool two = kind_ == NetKind::TwoSource;
        // inputs: v_conv(2), src(2: i_sg or v_src), omega(1), i_inj(2), load_scale(1)
        const int nu = 8;

        // v_pcc rows as functions of (x, u)
        const double kp = 1.0 / (1.0 + p_.rf * g_fault_pcc_);
        Mat vp_x = Mat::Zero(2, n), vp_u = Mat::Zero(2, nu);
        vp_x.block<2, 2>(0, 0) = kp * p_.rf * Mat2::Identity();
        vp_x.block<2, 2>(0, 2) = kp * Mat2::Identity();
        vp_x.block<2, 2>(0, 4) = -kp * p_.rf * Mat2::Identity();
        vp_u.block<2, 2>(0, 5) = kp * p_.rf * Mat2::Identity();

        // i_cf rows
        Mat icf_x = -g_fault_pcc_ * vp_x, icf_u = -g_fault_pcc_ * vp_u;
        icf_x.block<2, 2>(0, 0) += Mat2::Identity();
        icf_x.block<2, 2>(0, 4) += -Mat2::Identity();
        icf_u.block<2, 2>(0, 5) += Mat2::Identity();

        // v_far rows
        double g_load = 0.0;
        Mat vf_x = Mat::Zero(2, n), vf_u = Mat::Zero(2, nu);
        Vec2 v_far0;
        if (two) {
            g_load = g_load_base_ * in0.load_scale + g_fault_load_ + g_extra_load_;
            v_far0 = (i_z1 + in0.i_sg_DQ) / g_load;
            vf_x.block<2, 2>(0, 4) = Mat2::Identity() / g_load;
            vf_u.block<2, 2>(0, 2) = Mat2::Identity() / g_load;
            // d v_far / d load_scale = -(i_z1+i_sg) g_base / g^2
            vf_u.block<2, 1>(0, 7) = -v_far0 * (g_load_base_ / g_load);
        } else {
            v_far0 = in0.v_src_DQ;
            vf_u.block<2, 2>(0, 2) = Mat2::Identity();
        }

        Mat A = Mat::Zero(n, n), B = Mat::Zero(n, nu);
        // i_l1 rows
        A.block<2, n>(0, 0) = -(wb / p_.l1) * vp_x;
        B.block<2, nu>(0, 0) = -(wb / p_.l1) * vp_u;
        A.block<2, 2>(0, 0) += -(wb * p_.r1 / p_.l1) * Mat2::Identity() - wb * in0.omega * J;
        B.block<2, 2>(0, 0) += (wb / p_.l1) * Mat2::Identity();
        B.block<2, 1>(0, 4) += -wb * (J * i_l1);
        // v_cf rows
        A.block<2, n>(2, 0) = (wb / p_.cf) * icf_x;
        B.block<2, nu>(2, 0) = (wb / p_.cf) * icf_u;
        A.block<2, 2>(2, 2) += -wb * in0.omega * J;
        B.block<2, 1>(2, 4) += -wb * (J * v_cf);
        // i_z1 rows
        A.block<2, n>(4, 0) = (wb / z1_.x) * (vp_x - vf_x);
        B.block<2, nu>(4, 0) = (wb / z1_.x) * (vp_u - vf_u);
        A.block<2, 2>(4, 4) += -(wb * z1_.r / z1_.x) * Mat2::Identity() - wb * in0.omega * J;
        B.block<2, 1>(4, 4) += -wb * (J * i_z1);

        // outputs
        Mat C = Mat::Zero(8, n), D = Mat::Zero(8, nu);
        C.block<2, 2>(0, 0) = Mat2::Identity();
        C.block<2, n>(2, 0) = vp_x;
        D.block<2, nu>(2, 0) = vp_u;
        // i_grid = i_l1 - i_cf
        C.block<2, n>(4, 0) = -icf_x;
        D.block<2, nu>(4, 0) = -icf_u;
        C.block<2, 2>(4, 0) += Mat2::Identity();
        C.block<2, n>(6, 0) = vf_x;
        D.block<2, nu>(6, 0) = vf_u;

        const std::string src_d = two ? pre + ".i_sg_D" : pre + ".v_src_D";
        const std::string src_q = two ? pre + ".i_sg_Q" : pre + ".v_src_Q";
        return {A, B, C, D, state_labels(pre),
                {pre + ".v_conv_D", pre + ".v_conv_Q", src_d, src_q, pre + ".omega",
                 pre + ".i_inj_D", pre + ".i_inj_Q", pre + ".load_scale"},
                {pre + ".i_vsc_D", pre + ".i_vsc_Q", pre + ".v_pcc_D", pre + ".v_pcc_Q",
                 pre + ".i_grid_D", pre + ".i_grid_Q", pre + ".v_load_D", pre + ".v_load_Q"}};
    }

private:
    NetworkParams p_;
    NetKind kind_;
    SeriesZ z1_;
    double g_load_base_ = 1.0;
    double g_fault_pcc_ = 0.0;
    double g_fault_load_ = 0.0;
    double g_extra_load_ = 0.0;
};

/// One dq RL branch block at frame speed omega0 (test helper and the ideal
/// reference impedance of the scans).
inline StateSpaceBlock rl_branch_block(double r, double x, double omega0, double omega_b,
                                       const std::string& pre = "rl") {
    detail::require(x > 0.0, "branch reactance must be positive");
    Mat A(2, 2), B(2, 2), C(2, 2), D(2, 2);
    A = -(r * omega_b / x) * Mat2::Identity() - omega_b * omega0 * jmat();
    B = (omega_b / x) * Mat2::Identity();
    C = Mat2::Identity();
    D = Mat2::Zero();
    return {A, B, C, D, {pre + ".i_d", pre + ".i_q"},
            {pre + ".v_d", pre + ".v_q"}, {pre + ".i_out_d", pre + ".i_out_q"}};
}

}  // namespace gfmlab
