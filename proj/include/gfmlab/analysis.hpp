#pragma once

// Frequency-domain impedance extraction, modified sequence transformation,
// passivity verdicts, and eigenvalue sweeps with swing-mode tracking.

#include "gfmlab/assembly.hpp"

#include <array>
#include <functional>
#include <optional>

namespace gfmlab {

// ---------------------------------------------------------------------------
// Impedance scans
// ---------------------------------------------------------------------------

/// A_Z = (1/sqrt2) [[1, j], [1, -j]]; unitary.
inline CMat sequence_transform_matrix() {
    CMat a(2, 2);
    const double s = 1.0 / std::sqrt(2.0);
    a << Complex(s, 0), Complex(0, s), Complex(s, 0), Complex(0, -s);
    return a;
}

struct ImpedanceScan {
    std::vector<double> freq_hz;  // dq-frame offset frequency
    std::vector<CMat> z_dq;       // 2 x 2 per sample
    std::vector<CMat> z_pn;       // modified sequence form
    std::vector<bool> flagged;    // resolvent singular at this point
    std::string topology;
    std::string design;
    std::string operating_point;
    // resampler for band-edge refinement (frequency in Hz -> Z_DQ)
    std::function<CMat(double)> sample;
};

/// Z_DQ samples of a linear model seen from a current-injection port:
/// Z(jw) columns are the voltage responses to the two injection inputs.
inline ImpedanceScan dq_impedance(const StateSpaceBlock& model,
                                  const std::array<std::string, 2>& inj_inputs,
                                  const std::array<std::string, 2>& v_outputs,
                                  const std::vector<double>& freq_hz) {
    const int ui = model.input_index(inj_inputs[0]);
    const int uj = model.input_index(inj_inputs[1]);
    const int yi = model.output_index(v_outputs[0]);
    const int yj = model.output_index(v_outputs[1]);
    ImpedanceScan scan;
    scan.freq_hz = freq_hz;
    scan.sample = [=](double f) -> CMat {
        bool singular = false;
        CMat G = freq_point(model, 2.0 * M_PI * f, &singular);
        CMat z(2, 2);
        z << G(yi, ui), G(yi, uj), G(yj, ui), G(yj, uj);
        if (singular) z.setZero();
        return z;
    };
    for (double f : freq_hz) {
        detail::require(f > 0.0, "scan frequencies must be positive");
        bool singular = false;
        CMat G = freq_point(model, 2.0 * M_PI * f, &singular);
        CMat z(2, 2);
        z << G(yi, ui), G(yi, uj), G(yj, ui), G(yj, uj);
        scan.flagged.push_back(singular);
        scan.z_dq.push_back(z);
    }
    return scan;
}

/// Fills z_pn = A_Z Z_DQ A_Z^-1 for every sample.
inline void to_sequence(ImpedanceScan& scan) {
    const CMat az = sequence_transform_matrix();
    const CMat azi = az.adjoint();  // unitary
    scan.z_pn.clear();
    scan.z_pn.reserve(scan.z_dq.size());
    for (const auto& z : scan.z_dq) scan.z_pn.push_back(az * z * azi);
}

/// Default scan grid: log-spaced over the grid-code band.
inline std::vector<double> default_scan_grid(int n = 400, double lo = 5.0, double hi = 1000.0) {
    return logspace(lo, hi, n);
}

// ---------------------------------------------------------------------------
// Passivity
// ---------------------------------------------------------------------------

struct PassivityReport {
    struct Band {
        double f_lo = 0.0, f_hi = 0.0;
        bool intersects(double lo, double hi) const { return f_lo <= hi && f_hi >= lo; }
    };
    std::vector<double> freq_hz;
    std::vector<double> a;        // 2 Re Zpp
    std::vector<double> b;        // 2 Re Znn
    std::vector<double> ab_cc;    // AB - CC*
    std::vector<bool> passive;
    std::vector<Band> violations;  // maximal non-passive intervals
    double worst_re_zpp = 0.0;
    double worst_freq = 0.0;
    double tol = 0.0;  // tolerance applied to the positivity checks
};

namespace analysis_detail {

struct PassivityTerms {
    double a, b, cc, ab_cc;
    bool passive(double tol) const { return a > -tol && b > -tol && ab_cc > -tol; }
};

inline PassivityTerms passivity_terms(const CMat& z_pn) {
    PassivityTerms t{};
    t.a = 2.0 * z_pn(0, 0).real();
    t.b = 2.0 * z_pn(1, 1).real();
    const Complex c = std::conj(z_pn(0, 1)) + z_pn(1, 0);
    t.cc = std::norm(c);
    t.ab_cc = t.a * t.b - t.cc;
    return t;
}

}  // namespace analysis_detail

/// Positivity check of Z_pn + Z_pn^H per frequency, with violation bands
/// refined to within `edge_resolution_hz` by bisection on the stored
/// resampler (when available).
inline PassivityReport passivity_check(const ImpedanceScan& scan, double tol = 0.0,
                                       double edge_resolution_hz = 1.0) {
    detail::require(!scan.z_pn.empty(), "run to_sequence before the passivity check");
    PassivityReport rep;
    rep.tol = tol;
    rep.freq_hz = scan.freq_hz;
    const size_t n = scan.z_pn.size();
    rep.worst_re_zpp = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
        auto t = analysis_detail::passivity_terms(scan.z_pn[i]);
        rep.a.push_back(t.a);
        rep.b.push_back(t.b);
        rep.ab_cc.push_back(t.ab_cc);
        rep.passive.push_back(t.passive(tol));
        const double re_zpp = 0.5 * t.a;
        if (re_zpp < rep.worst_re_zpp) {
            rep.worst_re_zpp = re_zpp;
            rep.worst_freq = scan.freq_hz[i];
        }
    }

    const CMat az = sequence_transform_matrix();
    auto passive_at = [&](double f) -> bool {
        CMat zpn = az * scan.sample(f) * az.adjoint();
        return analysis_detail::passivity_terms(zpn).passive(tol);
    };
    auto refine_edge = [&](double f_pass, double f_fail) -> double {
        if (!scan.sample) return 0.5 * (f_pass + f_fail);
        while (std::abs(f_fail - f_pass) > edge_resolution_hz) {
            const double mid = 0.5 * (f_pass + f_fail);
            if (passive_at(mid))
                f_pass = mid;
            else
                f_fail = mid;
        }
        return 0.5 * (f_pass + f_fail);
    };

    // maximal disjoint violation intervals
    size_t i = 0;
    while (i < n) {
        if (rep.passive[i]) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j + 1 < n && !rep.passive[j + 1]) ++j;
        PassivityReport::Band band;
        band.f_lo = (i == 0) ? scan.freq_hz.front()
                             : refine_edge(scan.freq_hz[i - 1], scan.freq_hz[i]);
        band.f_hi = (j + 1 == n) ? scan.freq_hz.back()
                                 : refine_edge(scan.freq_hz[j + 1], scan.freq_hz[j]);
        rep.violations.push_back(band);
        i = j + 1;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Converter one-port (device impedance at the connection bus)
// ---------------------------------------------------------------------------

struct OnePortResult {
    StateSpaceBlock model;  // inputs op.i_inj_D/Q, outputs op.v_pcc_D/Q
    GfcOperatingPoint op;
    double p_ref = 0.0, q_ref = 0.0;
};

namespace analysis_detail {

/// Filter + capacitor mini-network at fixed nominal frame speed:
/// inputs [v_conv_D/Q, i_inj_D/Q], outputs [i_vsc, v_pcc, i_grid].
inline StateSpaceBlock oneport_network_block(const NetworkParams& p, const std::string& pre) {
    const double wb = p.omega_b;
    Mat A = Mat::Zero(4, 4), B = Mat::Zero(4, 4);
    const Mat2 J = jmat();
    // v_pcc = v_cf + rf (i_l1 + i_inj)
    Mat vp_x = Mat::Zero(2, 4), vp_u = Mat::Zero(2, 4);
    vp_x.block<2, 2>(0, 0) = p.rf * Mat2::Identity();
    vp_x.block<2, 2>(0, 2) = Mat2::Identity();
    vp_u.block<2, 2>(0, 2) = p.rf * Mat2::Identity();
    // i_l1
    A.block<2, 4>(0, 0) = -(wb / p.l1) * vp_x;
    B.block<2, 4>(0, 0) = -(wb / p.l1) * vp_u;
    A.block<2, 2>(0, 0) += -(wb * p.r1 / p.l1) * Mat2::Identity() - wb * J;
    B.block<2, 2>(0, 0) += (wb / p.l1) * Mat2::Identity();
    // v_cf: i_cf = i_l1 + i_inj
    A.block<2, 2>(2, 0) = (wb / p.cf) * Mat2::Identity();
    B.block<2, 2>(2, 2) = (wb / p.cf) * Mat2::Identity();
    A.block<2, 2>(2, 2) += -wb * J;

    Mat C = Mat::Zero(6, 4), D = Mat::Zero(6, 4);
    C.block<2, 2>(0, 0) = Mat2::Identity();
    C.block<2, 4>(2, 0) = vp_x;
    D.block<2, 4>(2, 0) = vp_u;
    // i_grid = i_l1 - i_cf = -i_inj
    D.block<2, 2>(4, 2) = -Mat2::Identity();

    return {A, B, C, D,
            {pre + ".i_l1_D", pre + ".i_l1_Q", pre + ".v_cf_D", pre + ".v_cf_Q"},
            {pre + ".v_conv_D", pre + ".v_conv_Q", pre + ".i_inj_D", pre + ".i_inj_Q"},
            {pre + ".i_vsc_D", pre + ".i_vsc_Q", pre + ".v_pcc_D", pre + ".v_pcc_Q",
             pre + ".i_grid_D", pre + ".i_grid_Q"}};
}

}  // namespace analysis_detail

/// Builds the converter one-port: full control + reactor + damped capacitor,
/// probed by current injection at the filter bus. The interior operating
/// point (converter idling into its own capacitor) is solved first; with
/// freeze_outer the droop loops and the angle state are then removed, which
/// reproduces the outer-loops-frozen scans.
inline OnePortResult build_gfc_oneport(const GfcDesign& design, const NetworkParams& netp,
                                       bool freeze_outer) {
    design.validate();
    GfcComponent gfc(design);
    const double wb = netp.omega_b;
    const int ng = gfc.nx();
    const int n = 4 + ng;

    // nonlinear one-port: x = [i_l1, v_cf, gfc]; v_pcc = v_cf + rf i_l1
    auto eval = [&](const Vec& x, double p_ref, double q_ref, Vec& dx, GfcSignals* gs,
                    Vec2* v_pcc_out) {
        const Vec2 i_l1(x[0], x[1]), v_cf(x[2], x[3]);
        const Vec2 v_pcc = v_cf + netp.rf * i_l1;
        GfcInputs gin;
        gin.i_vsc_DQ = i_l1;
        gin.v_pcc_DQ = v_pcc;
        gin.i_grid_DQ = Vec2::Zero();
        gin.omega_sg = 1.0;
        gin.p_ref = p_ref;
        gin.q_ref = q_ref;
        Vec dg(ng);
        GfcSignals sig;
        gfc.eval(x.tail(ng), gin, dg, &sig);
        if (dx.size() != n) dx.resize(n);
        const Mat2 J = jmat();
        const Vec2 di = (wb / netp.l1) * (sig.v_conv_DQ - v_pcc - netp.r1 * i_l1) -
                        wb * (J * i_l1);
        const Vec2 dv = (wb / netp.cf) * i_l1 - wb * (J * v_cf);
        dx[0] = di[0];
        dx[1] = di[1];
        dx[2] = dv[0];
        dx[3] = dv[1];
        dx.tail(ng) = dg;
        if (gs) *gs = sig;
        if (v_pcc_out) *v_pcc_out = v_pcc;
    };

    // Newton: unknowns [x, p_ref, q_ref]; constraints theta = 0, |v_pcc| = 1
    Vec z = Vec::Zero(n + 2);
    z[2] = 1.0;  // v_cf_D
    z.segment(4, ng) = gfc.flat_state();
    auto residual = [&](const Vec& zz) -> Vec {
        Vec x = zz.head(n);
        Vec f(n);
        GfcSignals gs;
        Vec2 v_pcc;
        eval(x, zz[n], zz[n + 1], f, &gs, &v_pcc);
        Vec r(n + 2);
        r.head(n) = f;
        r[n] = gs.theta;
        r[n + 1] = v_pcc.norm() - 1.0;
        return r;
    };
    Vec r = residual(z);
    for (int it = 0; it < 60 && r.lpNorm<Eigen::Infinity>() > 1e-12; ++it) {
        Mat Jz(n + 2, n + 2);
        const double h = 1e-7;
        for (int j = 0; j < n + 2; ++j) {
            Vec zp = z, zm = z;
            zp[j] += h;
            zm[j] -= h;
            Jz.col(j) = (residual(zp) - residual(zm)) / (2.0 * h);
        }
        Vec step = Jz.fullPivLu().solve(-r);
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
    detail::require(r.lpNorm<Eigen::Infinity>() < 1e-9,
                    "one-port operating point did not converge");

    OnePortResult res;
    Vec f(n);
    GfcSignals gs;
    Vec2 v_pcc;
    eval(z.head(n), z[n], z[n + 1], f, &gs, &v_pcc);
    res.p_ref = z[n];
    res.q_ref = z[n + 1];
    res.op.theta0 = gs.theta;
    res.op.i_vsc_DQ0 = Vec2(z[0], z[1]);
    res.op.v_pcc_DQ0 = v_pcc;
    res.op.i_grid_DQ0 = Vec2::Zero();
    res.op.v_br_dq0 = gs.v_br_dq;

    // linear assembly at that point
    std::vector<StateSpaceBlock> blocks;
    blocks.push_back(analysis_detail::oneport_network_block(netp, "op"));
    blocks.push_back(build_gfc_linear(design, res.op, freeze_outer, "gfc"));
    std::vector<Wire> w = {
        {"op.i_vsc_D", "gfc.i_D"},
        {"op.i_vsc_Q", "gfc.i_Q"},
        {"gfc.vconv_D", "op.v_conv_D"},
        {"gfc.vconv_Q", "op.v_conv_Q"},
    };
    if (design.topology != Topology::NoInner) {
        w.push_back({"op.v_pcc_D", "gfc.vpcc_D"});
        w.push_back({"op.v_pcc_Q", "gfc.vpcc_Q"});
    }
    if (design.topology == Topology::Cascaded) {
        w.push_back({"op.i_grid_D", "gfc.igrid_D"});
        w.push_back({"op.i_grid_Q", "gfc.igrid_Q"});
    }
    std::vector<ExternalInput> ein = {{"op.i_inj_D"}, {"op.i_inj_Q"}};
    if (!freeze_outer) {
        blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {"zero.w"}));
        w.push_back({"zero.w", "gfc.omega_sg"});
        // references held at the solved operating point
        blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {"zero.p"}));
        blocks.push_back(gain_block(Mat::Zero(1, 0), {}, {"zero.q"}));
        w.push_back({"zero.p", "gfc.p_ref"});
        w.push_back({"zero.q", "gfc.q_ref"});
    }
    res.model = interconnect(blocks, w, ein, {"op.v_pcc_D", "op.v_pcc_Q"});
    return res;
}

/// Ideal voltage source behind a series reactance: the reference curve of
/// the device-impedance comparison.
inline CMat ideal_source_impedance(double x_pu, double f_hz, double omega_b,
                                   double r_pu = 0.0) {
    const Complex s(0.0, 2.0 * M_PI * f_hz);
    CMat z(2, 2);
    const Complex diag = r_pu + s * x_pu / omega_b;
    z << diag, Complex(-x_pu, 0.0), Complex(x_pu, 0.0), diag;
    return z;
}

// ---------------------------------------------------------------------------
// Eigen sweeps and swing-mode identification
// ---------------------------------------------------------------------------

/// Electromechanical-pair pick: the conjugate pair inside [0.1, 5] Hz with
/// the largest combined participation of the machine speed and the converter
/// power loop (lag state plus its synchronization angle). Absent either
/// group (or any pair in band), reports not-found rather than guessing.
inline std::optional<int> identify_swing_mode(const EigenSolution& eig, const Mat& part,
                                              const std::vector<std::string>& state_labels,
                                              const std::string& sg_speed_label = "sg.omega",
                                              const std::string& gfc_plc_label = "gfc.plc",
                                              const std::string& gfc_theta_label = "gfc.theta") {
    auto find = [&](const std::string& l) -> int {
        auto it = std::find(state_labels.begin(), state_labels.end(), l);
        return it == state_labels.end() ? -1 : static_cast<int>(it - state_labels.begin());
    };
    const int r_speed = find(sg_speed_label);
    const int r_plc = find(gfc_plc_label);
    const int r_theta = find(gfc_theta_label);
    if (r_speed < 0 || r_plc < 0) return std::nullopt;

    int best = -1;
    double best_score = -1.0;
    for (int i = 0; i < eig.values.size(); ++i) {
        if (eig.values[i].imag() <= 0.0) continue;  // pair representative
        const double f = eig.frequency_hz[i];
        if (f < 0.1 || f > 5.0) continue;
        double score = part(r_speed, i) + part(r_plc, i);
        if (r_theta >= 0) score += part(r_theta, i);
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    if (best < 0) return std::nullopt;
    return best;
}

/// Participation of the swing pair aggregated into machine-speed and
/// converter-power-loop groups (the angle integrator belongs to the loop),
/// with every other state reported individually; sorted descending.
inline std::vector<std::pair<std::string, double>> grouped_participants(
    const Mat& part, int mode, const std::vector<std::string>& state_labels) {
    std::vector<std::pair<std::string, double>> out;
    double plc_group = 0.0;
    for (int r = 0; r < part.rows(); ++r) {
        const auto& l = state_labels[r];
        if (l == "gfc.plc" || l == "gfc.theta")
            plc_group += part(r, mode);
        else
            out.push_back({l, part(r, mode)});
    }
    out.push_back({"gfc.power_loop", plc_group});
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

/// Minimal-total-displacement matching between two eigenvalue sets
/// (Hungarian algorithm on |a_i - b_j|). Returns perm with b[perm[i]] ~ a[i].
inline std::vector<int> match_eigenvalues(const CVec& a, const CVec& b) {
    const int n = static_cast<int>(a.size());
    detail::require(b.size() == n, "eigenvalue sets differ in size");
    Mat cost(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) cost(i, j) = std::abs(a[i] - b[j]);
    // shortest augmenting path assignment (rows -> columns)
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> perm(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) perm[p[j] - 1] = j - 1;
    return perm;
}

struct SweepStep {
    double param = 0.0;  // swept line impedance magnitude
    CVec eigenvalues;
    Complex swing{0.0, 0.0};
    double swing_damping = 0.0;
    double swing_freq_hz = 0.0;
    bool swing_found = false;
    std::vector<std::pair<std::string, double>> top_participants;
};

struct EigenSweep {
    std::vector<SweepStep> steps;
    std::vector<std::string> state_labels;
    bool truncated = false;
    std::string truncation_reason;
};

/// Re-solves equilibrium, re-linearizes and eigen-solves along a line
/// impedance path |Z_TL1| = |Z_TL2| in [from, to], tracking the swing mode
/// by minimal-displacement matching between consecutive steps.
inline EigenSweep eig_sweep(const SystemSpec& base, double from, double to, int nsteps,
                            const Dispatch& dispatch = Dispatch{}, double x_over_r = 10.0) {
    detail::require(nsteps >= 2 && from > 0 && to > from, "bad sweep path");
    EigenSweep sweep;
    std::optional<Equilibrium> seed;
    CVec prev_eigs;
    int tracked = -1;

    for (int k = 0; k < nsteps; ++k) {
        const double mag = from + (to - from) * k / (nsteps - 1);
        SystemSpec spec = base;
        const double den = std::hypot(1.0, x_over_r);
        spec.net.z_tl1 = {mag / den, mag * x_over_r / den};
        spec.net.z_tl2 = {mag / den, mag * x_over_r / den};
        SystemModel m(spec);
        SweepStep step;
        step.param = mag;
        try {
            auto eq = find_equilibrium(m, dispatch);
            auto lin = linearize_numeric(m, eq);
            if (sweep.state_labels.empty()) sweep.state_labels = lin.state_labels;
            auto eig = eigen_solution(lin.A);
            auto part = participation(eig);
            step.eigenvalues = eig.values;

            if (tracked < 0) {
                auto id = identify_swing_mode(eig, part, lin.state_labels);
                if (id) tracked = *id;
            } else {
                auto perm = match_eigenvalues(prev_eigs, eig.values);
                tracked = perm[tracked];
            }
            if (tracked >= 0) {
                step.swing_found = true;
                step.swing = eig.values[tracked];
                step.swing_damping = eig.damping_ratio[tracked];
                step.swing_freq_hz = eig.frequency_hz[tracked];
                // top participating states of the tracked mode
                std::vector<std::pair<std::string, double>> parts;
                for (int r = 0; r < part.rows(); ++r)
                    parts.push_back({lin.state_labels[r], part(r, tracked)});
                std::sort(parts.begin(), parts.end(),
                          [](const auto& x, const auto& y) { return x.second > y.second; });
                parts.resize(std::min<size_t>(parts.size(), 4));
                step.top_participants = parts;
            }
            prev_eigs = eig.values;
            sweep.steps.push_back(std::move(step));
        } catch (const Error& e) {
            sweep.truncated = true;
            sweep.truncation_reason =
                "step " + std::to_string(k) + " (|Z| = " + std::to_string(mag) + "): " + e.what();
            break;
        }
        (void)seed;
    }
    return sweep;
}

}  // namespace gfmlab
