#include <catch2/catch.hpp>

#include "gfmlab/sync_machine.hpp"

#include <cmath>

using namespace gfmlab;

namespace {

Mat numeric_a(const SgComponent& g, const Vec& x0, const SgInputs& in0, double h = 1e-6) {
    const int n = g.nx();
    Mat A(n, n);
    Vec fp(n), fm(n);
    for (int j = 0; j < n; ++j) {
        Vec xp = x0, xm = x0;
        xp[j] += h;
        xm[j] -= h;
        g.eval(xp, in0, fp);
        g.eval(xm, in0, fm);
        A.col(j) = (fp - fm) / (2.0 * h);
    }
    return A;
}

/// Newton on the standalone machine against a resistive termination:
/// v_ext = R_load * i (self-consistent closure), trimming v_ref and p_disp
/// to hit target terminal voltage magnitude and speed 1.
struct StandaloneEq {
    Vec x;
    SgInputs in;
};

StandaloneEq solve_on_resistor(SgComponent& g, double r_load, double v_target) {
    const int n = g.nx();
    Vec z(n + 2);
    z.head(n) = g.flat_state(v_target);
    z[n] = v_target;
    z[n + 1] = v_target * v_target / std::max(r_load, 1e-9);

    auto residual = [&](const Vec& zz) -> Vec {
        Vec xx = zz.head(n);
        SgInputs in;
        in.v_ref = zz[n];
        in.p_disp = zz[n + 1];
        in.v_ext_DQ = r_load * Vec2(xx[0], xx[1]);
        Vec f(n);
        SgSignals sig;
        g.eval(xx, in, f, &sig);
        Vec r(n + 2);
        r.head(n) = f;
        r[n] = sig.v_term_mag - v_target;
        const int iw = n - 4;
        r[n + 1] = xx[iw] - 1.0;
        return r;
    };
    Vec r = residual(z);
    for (int it = 0; it < 60 && r.lpNorm<Eigen::Infinity>() > 1e-12; ++it) {
        Mat J(n + 2, n + 2);
        const double h = 1e-7;
        for (int j = 0; j < n + 2; ++j) {
            Vec zp = z, zm = z;
            zp[j] += h;
            zm[j] -= h;
            J.col(j) = (residual(zp) - residual(zm)) / (2.0 * h);
        }
        Vec step = J.fullPivLu().solve(-r);
        double alpha = 1.0;
        for (int back = 0; back < 30; ++back) {
            Vec zn = z + alpha * step;
            Vec rn = residual(zn);
            if (rn.norm() < r.norm() || rn.lpNorm<Eigen::Infinity>() < 1e-12) {
                z = zn;
                r = rn;
                break;
            }
            alpha *= 0.5;
        }
    }
    StandaloneEq eq;
    eq.x = z.head(n);
    eq.in.v_ref = z[n];
    eq.in.p_disp = z[n + 1];
    eq.in.v_ext_DQ = r_load * Vec2(eq.x[0], eq.x[1]);
    return eq;
}

}  // namespace

TEST_CASE("avr block structure and step response") {
    AvrParams p;
    auto blk = avr_block(p);
    auto eig = eigen_solution(blk);
    REQUIRE(eig.values.size() == 2);
    std::vector<double> re = {eig.values[0].real(), eig.values[1].real()};
    std::sort(re.begin(), re.end());
    CHECK(re[0] == Approx(-1.0 / p.t_avr).margin(1e-9));
    CHECK(std::abs(re[1]) < 1e-12);

    // proportional plateau between the integrator and lag corners -> Kp
    const double w_mid = std::sqrt((p.ki / p.kp) * (1.0 / p.t_avr));
    auto hf = freq_point(blk, w_mid);
    CHECK(std::abs(hf(0, 0)) == Approx(p.kp).epsilon(0.05));

    // unit step: y(t) = Ki t + (Kp - Ki T)(1 - exp(-t/T)), checked at t = 0.1 s
    Vec x = Vec::Zero(2);
    const double dt = 1e-6;
    for (int i = 0; i < 100000; ++i) {
        auto f = [&](const Vec& xx) -> Vec { return blk.A * xx + blk.B * Vec::Ones(1); };
        Vec k1 = f(x), k2 = f(x + 0.5 * dt * k1), k3 = f(x + 0.5 * dt * k2), k4 = f(x + dt * k3);
        x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    const double y = (blk.C * x)(0, 0);
    const double t = 0.1;
    const double y_exact =
        p.ki * t + (p.kp - p.ki * p.t_avr) * (1.0 - std::exp(-t / p.t_avr));
    CHECK(y == Approx(y_exact).margin(1e-6));
}

TEST_CASE("governor block") {
    GovParams p;
    auto blk = gov_block(p);
    CHECK(freq_point(blk, 1e-9)(0, 0).real() == Approx(20.0).margin(1e-6));
    CHECK(std::abs(freq_point(blk, 1.0 / p.t_gov)(0, 0)) ==
          Approx(20.0 / std::sqrt(2.0)).margin(1e-9));
    // dw = 0.01 pu steady -> dp = 0.2 pu
    CHECK(0.01 * freq_point(blk, 1e-9)(0, 0).real() == Approx(0.2).margin(1e-6));
}

TEST_CASE("winding conversion reproduces the subtransient reactances") {
    SgParams p;
    auto w = sg_detail::derive(p);
    CHECK(w.xd_pp_model == Approx(p.xd_pp).margin(1e-12));
    CHECK(w.xq_pp_model == Approx(p.xq_pp).margin(1e-12));

    SgParams p2 = p;
    p2.xq_p = 0.35;
    p2.tq0_p = 0.5;
    auto w2 = sg_detail::derive(p2);
    CHECK(w2.has_kq2);
    CHECK(w2.xq_pp_model == Approx(p.xq_pp).margin(1e-12));
}

TEST_CASE("open circuit: field for 1 pu gives 1 pu terminal voltage on the q axis") {
    SgComponent g{SgParams{}, AvrParams{}, GovParams{}, 0.0, 0.0};
    auto eq = solve_on_resistor(g, 1e8, 1.0);
    Vec f;
    SgSignals sig;
    g.eval(eq.x, eq.in, f, &sig);
    // residual scale is dominated by wb * R_load; the state itself is converged
    CHECK(f.lpNorm<Eigen::Infinity>() < 1e-7);
    CHECK(sig.v_term_mag == Approx(1.0).margin(1e-8));
    CHECK(sig.i_DQ.norm() < 1e-7);
    CHECK(sig.v_term[1] == Approx(1.0).margin(1e-6));
    CHECK(std::abs(sig.v_term[0]) < 1e-6);
    CHECK(sig.efd == Approx(1.0).margin(1e-6));
}

TEST_CASE("terminal short circuit follows the subtransient envelope") {
    SgComponent g{SgParams{}, AvrParams{}, GovParams{}, 0.0, 0.0};
    auto eq = solve_on_resistor(g, 1e8, 1.0);

    SgInputs in = eq.in;
    in.v_ext_DQ = Vec2::Zero();
    Vec x = eq.x;
    const double dt = 5e-6;
    const SgParams p;
    const double t_probe = 5e-3;  // quarter cycle: the rotor-frame dc offset crosses zero
    double i_d_probe = 0.0;
    for (int i = 0; i < static_cast<int>(20e-3 / dt); ++i) {
        auto fn = [&](const Vec& xx) -> Vec {
            Vec d;
            g.eval(xx, in, d);
            return d;
        };
        Vec k1 = fn(x), k2 = fn(x + 0.5 * dt * k1), k3 = fn(x + 0.5 * dt * k2),
            k4 = fn(x + dt * k3);
        x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        const double t = (i + 1) * dt;
        if (std::abs(t - t_probe) < dt / 2) i_d_probe = x[0];
    }
    // symmetric short-circuit component:
    // i_sym(t) = E [ (1/Xd''-1/Xd') e^{-t/Td''} + (1/Xd'-1/Xd) e^{-t/Td'} + 1/Xd ]
    const double td_pp = p.td0_pp * p.xd_pp / p.xd_p;
    const double td_p = p.td0_p * p.xd_p / p.xd;
    const double i_sym = (1.0 / p.xd_pp - 1.0 / p.xd_p) * std::exp(-t_probe / td_pp) +
                         (1.0 / p.xd_p - 1.0 / p.xd) * std::exp(-t_probe / td_p) + 1.0 / p.xd;
    CHECK(std::abs(i_d_probe) == Approx(i_sym).epsilon(0.05));
}

TEST_CASE("swing equation ramps at dp/(2H) with electrical torque frozen") {
    SgParams p;
    SgComponent g{p, AvrParams{}, GovParams{}, 0.0, 0.0};
    auto eq = solve_on_resistor(g, 1e8, 1.0);
    SgInputs in = eq.in;
    in.p_disp += 0.1;
    Vec f;
    g.eval(eq.x, in, f);
    const int iw = g.nx() - 4;
    CHECK(f[iw] == Approx(0.1 / (2.0 * p.h)).epsilon(1e-6));
}

TEST_CASE("analytic linearization matches the numeric jacobian") {
    for (double r_load : {1.0, 2.0}) {
        SgComponent g{SgParams{}, AvrParams{}, GovParams{}, 0.02, 0.2};
        auto eq = solve_on_resistor(g, r_load, 1.0);
        Vec f;
        g.eval(eq.x, eq.in, f);
        REQUIRE(f.lpNorm<Eigen::Infinity>() < 1e-9);

        auto lin = g.linearize(eq.x, eq.in);
        Mat A_num = numeric_a(g, eq.x, eq.in, 1e-6);
        CHECK((lin.A - A_num).cwiseAbs().maxCoeff() < 1e-6);

        const double h = 1e-6;
        for (int j = 0; j < 4; ++j) {
            SgInputs ip = eq.in, im = eq.in;
            if (j == 0) { ip.v_ext_DQ[0] += h; im.v_ext_DQ[0] -= h; }
            if (j == 1) { ip.v_ext_DQ[1] += h; im.v_ext_DQ[1] -= h; }
            if (j == 2) { ip.v_ref += h; im.v_ref -= h; }
            if (j == 3) { ip.p_disp += h; im.p_disp -= h; }
            Vec fp, fm;
            g.eval(eq.x, ip, fp);
            g.eval(eq.x, im, fm);
            Vec fd = (fp - fm) / (2.0 * h);
            CHECK((lin.B.col(j) - fd).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("energy balance at a loaded steady state") {
    SgComponent g{SgParams{}, AvrParams{}, GovParams{}, 0.0, 0.0};
    auto eq = solve_on_resistor(g, 1.5, 1.0);
    Vec f;
    SgSignals sig;
    g.eval(eq.x, eq.in, f, &sig);
    REQUIRE(f.lpNorm<Eigen::Infinity>() < 1e-9);
    const double i2 = sig.i_DQ.squaredNorm();
    CHECK(sig.p_mech == Approx(sig.p_term + SgParams{}.ra * i2).margin(1e-8));
}

TEST_CASE("isolated machine with AVR and governor on a resistive load is stable") {
    SgComponent g{SgParams{}, AvrParams{}, GovParams{}, 0.0, 0.0};
    auto eq = solve_on_resistor(g, 1.0, 1.0);
    // close the resistive load around the linearized machine:
    // v_ext = R i  =>  A_cl = A + B[:, 0:2] * R * C[i rows]
    auto lin = g.linearize(eq.x, eq.in);
    Mat A_cl = lin.A + lin.B.leftCols<2>() * 1.0 * lin.C.topRows<2>();
    auto eig = eigen_solution(A_cl);
    for (int i = 0; i < eig.values.size(); ++i)
        CHECK(eig.values[i].real() < -1e-6);
}
