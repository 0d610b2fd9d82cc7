#pragma once

// Linear time-invariant block algebra: labeled state-space fragments, their
// interconnection, frequency response, delay approximation and eigen tooling.
// Blocks are immutable values; every free function here is pure.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfmlab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using Complex = std::complex<double>;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}
inline void require_unique(const std::vector<std::string>& labels, const char* kind) {
    std::set<std::string> seen;
    for (const auto& l : labels)
        require(seen.insert(l).second, std::string("duplicate ") + kind + " label '" + l + "'");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// StateSpaceBlock
// ---------------------------------------------------------------------------

/// Labeled LTI fragment  dx = A x + B u,  y = C x + D u.
struct StateSpaceBlock {
    Mat A, B, C, D;
    std::vector<std::string> state_labels;
    std::vector<std::string> input_labels;
    std::vector<std::string> output_labels;

    StateSpaceBlock() = default;

    StateSpaceBlock(Mat a, Mat b, Mat c, Mat d,
                    std::vector<std::string> states,
                    std::vector<std::string> inputs,
                    std::vector<std::string> outputs)
        : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)),
          state_labels(std::move(states)), input_labels(std::move(inputs)),
          output_labels(std::move(outputs)) {
        validate();
    }

    int nx() const { return static_cast<int>(state_labels.size()); }
    int nu() const { return static_cast<int>(input_labels.size()); }
    int ny() const { return static_cast<int>(output_labels.size()); }

    void validate() const {
        const int n = nx(), m = nu(), p = ny();
        detail::require(A.rows() == n && A.cols() == n, "A must be n x n with n = #state labels");
        detail::require(B.rows() == n && B.cols() == m, "B must be n x m with m = #input labels");
        detail::require(C.rows() == p && C.cols() == n, "C must be p x n with p = #output labels");
        detail::require(D.rows() == p && D.cols() == m, "D must be p x m");
        detail::require_unique(state_labels, "state");
        detail::require_unique(input_labels, "input");
        detail::require_unique(output_labels, "output");
    }

    int input_index(const std::string& label) const {
        auto it = std::find(input_labels.begin(), input_labels.end(), label);
        detail::require(it != input_labels.end(), "unknown input label '" + label + "'");
        return static_cast<int>(it - input_labels.begin());
    }
    int output_index(const std::string& label) const {
        auto it = std::find(output_labels.begin(), output_labels.end(), label);
        detail::require(it != output_labels.end(), "unknown output label '" + label + "'");
        return static_cast<int>(it - output_labels.begin());
    }
    int state_index(const std::string& label) const {
        auto it = std::find(state_labels.begin(), state_labels.end(), label);
        detail::require(it != state_labels.end(), "unknown state label '" + label + "'");
        return static_cast<int>(it - state_labels.begin());
    }
};

// ---------------------------------------------------------------------------
// Elementary blocks
// ---------------------------------------------------------------------------

inline StateSpaceBlock gain_block(const Mat& K,
                                  std::vector<std::string> inputs,
                                  std::vector<std::string> outputs) {
    const int p = static_cast<int>(outputs.size());
    const int m = static_cast<int>(inputs.size());
    return {Mat::Zero(0, 0), Mat::Zero(0, m), Mat::Zero(p, 0), K,
            {}, std::move(inputs), std::move(outputs)};
}

inline StateSpaceBlock gain_block(double k, const std::string& in, const std::string& out) {
    Mat K(1, 1);
    K << k;
    return gain_block(K, {in}, {out});
}

inline StateSpaceBlock integrator_block(const std::string& in, const std::string& out,
                                        const std::string& state = "int") {
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << 0.0; b << 1.0; c << 1.0; d << 0.0;
    return {a, b, c, d, {state}, {in}, {out}};
}

/// kp + ki/s
inline StateSpaceBlock pi_block(double kp, double ki,
                                const std::string& in = "e", const std::string& out = "u",
                                const std::string& state = "pi") {
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << 0.0; b << 1.0; c << ki; d << kp;
    return {a, b, c, d, {state}, {in}, {out}};
}

/// kp + ki/(s + leak): a PI whose integrator leaks, i.e. a lag compensator
/// with finite dc gain kp + ki/leak. leak = 0 recovers the pure PI.
inline StateSpaceBlock lag_pi_block(double kp, double ki, double leak,
                                    const std::string& in = "e", const std::string& out = "u",
                                    const std::string& state = "pi") {
    detail::require(leak >= 0.0, "integrator leak must be nonnegative");
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << -leak; b << 1.0; c << ki; d << kp;
    return {a, b, c, d, {state}, {in}, {out}};
}

/// 1/(1 + sT)
inline StateSpaceBlock lowpass_block(double T,
                                     const std::string& in = "u", const std::string& out = "y",
                                     const std::string& state = "lp") {
    detail::require(T > 0.0, "lowpass time constant must be positive");
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << -1.0 / T; b << 1.0 / T; c << 1.0; d << 0.0;
    return {a, b, c, d, {state}, {in}, {out}};
}

/// s tau / (1 + s tau), realized as u - lowpass(u)
inline StateSpaceBlock highpass_block(double tau,
                                      const std::string& in = "u", const std::string& out = "y",
                                      const std::string& state = "hp") {
    detail::require(tau > 0.0, "highpass time constant must be positive");
    Mat a(1, 1), b(1, 1), c(1, 1), d(1, 1);
    a << -1.0 / tau; b << 1.0 / tau; c << -1.0; d << 1.0;
    return {a, b, c, d, {state}, {in}, {out}};
}

/// Third-order Pade approximation of exp(-s Td). Td = 0 degenerates to a
/// unity gain with no states. The realization is time-scaled (states carry
/// the signal's own magnitude) so equilibrium residuals stay well scaled.
inline StateSpaceBlock pade3(double Td,
                             const std::string& in = "u", const std::string& out = "y",
                             const std::string& prefix = "pade") {
    detail::require(Td >= 0.0, "delay must be nonnegative");
    if (Td == 0.0) return gain_block(1.0, in, out);
    // exp(-p) ~ (120 - 60 p + 12 p^2 - p^3)/(120 + 60 p + 12 p^2 + p^3), p = s Td
    // With z' = (1/Td)(Ap z + Bp u): G(s) = Cp (sTd I - Ap)^-1 Bp + D.
    Mat Ap(3, 3), Bp(3, 1), Cp(1, 3), D(1, 1);
    Ap << 0, 1, 0,
          0, 0, 1,
          -120, -60, -12;
    Bp << 0, 0, 1;
    Cp << 240, 0, 24;
    D << -1;
    return {Ap / Td, Bp / Td, Cp, D,
            {prefix + ".z1", prefix + ".z2", prefix + ".z3"}, {in}, {out}};
}

// ---------------------------------------------------------------------------
// Frequency response
// ---------------------------------------------------------------------------

/// One frequency sample: G(j omega), p x m complex.
struct FreqSample {
    double omega = 0.0;
    CMat G;
    bool singular = false;  // resolvent singular at this grid point
};

inline CMat freq_point(const StateSpaceBlock& b, double omega, bool* singular = nullptr) {
    const int n = b.nx();
    if (singular) *singular = false;
    if (n == 0) return b.D.cast<Complex>();
    CMat M = CMat::Identity(n, n) * Complex(0.0, omega) - b.A.cast<Complex>();
    Eigen::FullPivLU<CMat> lu(M);
    if (!lu.isInvertible()) {
        if (singular) *singular = true;
        return CMat::Constant(b.ny(), b.nu(), Complex(0, 0));
    }
    CMat X = lu.solve(b.B.cast<Complex>());
    return b.C.cast<Complex>() * X + b.D.cast<Complex>();
}

inline std::vector<FreqSample> freq_response(const StateSpaceBlock& b, std::span<const double> omegas) {
    std::vector<FreqSample> out;
    out.reserve(omegas.size());
    double prev = 0.0;
    for (double w : omegas) {
        detail::require(w > 0.0, "frequency grid must be strictly positive");
        detail::require(w > prev, "frequency grid must be strictly increasing");
        prev = w;
        FreqSample s;
        s.omega = w;
        s.G = freq_point(b, w, &s.singular);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Interconnection
// ---------------------------------------------------------------------------

/// One routing entry: output label (or external input name) -> input label.
struct Wire {
    std::string from;
    std::string to;
    double gain = 1.0;
};

/// An external input of the combined system; may fan out to several inputs.
struct ExternalInput {
    std::string name;
    std::vector<std::string> targets;

    ExternalInput(std::string n, std::vector<std::string> t)
        : name(std::move(n)), targets(std::move(t)) {}
    ExternalInput(const char* n) : name(n), targets{name} {}
    ExternalInput(const std::string& n) : name(n), targets{n} {}
};

namespace detail {

struct LabelMap {
    std::map<std::string, std::pair<int, int>> pos;  // label -> (block, local index)
    void add(const std::string& label, int block, int idx, const char* kind) {
        require(pos.emplace(label, std::make_pair(block, idx)).second,
                std::string(kind) + " label '" + label + "' appears in more than one block");
    }
};

}  // namespace detail

/// Wires blocks into a single block whose response equals the diagram.
/// Fan-in on an input is rejected unless the input is listed in `summing`.
/// Algebraic loops are resolved by exact feedthrough elimination; an
/// ill-posed loop reports the offending cycle.
inline StateSpaceBlock interconnect(const std::vector<StateSpaceBlock>& blocks,
                                    const std::vector<Wire>& wiring,
                                    const std::vector<ExternalInput>& external_inputs,
                                    const std::vector<std::string>& external_outputs,
                                    const std::set<std::string>& summing = {}) {
    using detail::require;

    int nx = 0, nu = 0, ny = 0;
    detail::LabelMap in_map, out_map;
    std::vector<int> in_off(blocks.size()), out_off(blocks.size()), st_off(blocks.size());
    for (size_t k = 0; k < blocks.size(); ++k) {
        blocks[k].validate();
        st_off[k] = nx;
        in_off[k] = nu;
        out_off[k] = ny;
        for (int i = 0; i < blocks[k].nu(); ++i)
            in_map.add(blocks[k].input_labels[i], static_cast<int>(k), i, "input");
        for (int i = 0; i < blocks[k].ny(); ++i)
            out_map.add(blocks[k].output_labels[i], static_cast<int>(k), i, "output");
        nx += blocks[k].nx();
        nu += blocks[k].nu();
        ny += blocks[k].ny();
    }

    auto global_in = [&](const std::string& l) {
        auto it = in_map.pos.find(l);
        require(it != in_map.pos.end(), "unknown input label '" + l + "'");
        return in_off[it->second.first] + it->second.second;
    };
    auto global_out = [&](const std::string& l) {
        auto it = out_map.pos.find(l);
        require(it != out_map.pos.end(), "unknown output label '" + l + "'");
        return out_off[it->second.first] + it->second.second;
    };

    // Routing matrices: u = Py * y + Pe * e.
    Mat Py = Mat::Zero(nu, ny);
    const int ne = static_cast<int>(external_inputs.size());
    Mat Pe = Mat::Zero(nu, ne);

    std::map<int, int> fan_in;  // wired count per input
    for (const auto& w : wiring) {
        const int ui = global_in(w.to);
        Py(ui, global_out(w.from)) += w.gain;
        fan_in[ui]++;
    }
    std::vector<std::string> ext_names;
    for (int e = 0; e < ne; ++e) {
        const auto& ext = external_inputs[e];
        require(!ext.targets.empty(), "external input '" + ext.name + "' has no targets");
        ext_names.push_back(ext.name);
        for (const auto& t : ext.targets) {
            const int ui = global_in(t);
            Pe(ui, e) += 1.0;
            fan_in[ui]++;
        }
    }
    detail::require_unique(ext_names, "external input");
    for (const auto& [ui, count] : fan_in) {
        if (count > 1) {
            // recover the label for the message
            std::string label;
            for (const auto& [l, bi] : in_map.pos)
                if (in_off[bi.first] + bi.second == ui) label = l;
            require(summing.count(label) > 0,
                    "input '" + label + "' is driven " + std::to_string(count) +
                        " times but is not declared as a summing junction");
        }
    }

    // Stacked matrices.
    Mat Ab = Mat::Zero(nx, nx), Bb = Mat::Zero(nx, nu);
    Mat Cb = Mat::Zero(ny, nx), Db = Mat::Zero(ny, nu);
    std::vector<std::string> states;
    for (size_t k = 0; k < blocks.size(); ++k) {
        const auto& b = blocks[k];
        Ab.block(st_off[k], st_off[k], b.nx(), b.nx()) = b.A;
        Bb.block(st_off[k], in_off[k], b.nx(), b.nu()) = b.B;
        Cb.block(out_off[k], st_off[k], b.ny(), b.nx()) = b.C;
        Db.block(out_off[k], in_off[k], b.ny(), b.nu()) = b.D;
        states.insert(states.end(), b.state_labels.begin(), b.state_labels.end());
    }

    // u = Py (Cb x + Db u) + Pe e  =>  (I - Py Db) u = Py Cb x + Pe e
    Mat M = Mat::Identity(nu, nu) - Py * Db;
    Eigen::FullPivLU<Mat> lu(M);
    if (!lu.isInvertible()) {
        // Diagnose: find a cycle in the feedthrough graph (edges input -> input
        // through a block D and a wire).
        std::vector<std::vector<int>> adj(nu);
        for (size_t k = 0; k < blocks.size(); ++k)
            for (int i = 0; i < blocks[k].nu(); ++i)
                for (int o = 0; o < blocks[k].ny(); ++o)
                    if (blocks[k].D(o, i) != 0.0)
                        for (int uj = 0; uj < nu; ++uj)
                            if (Py(uj, out_off[k] + o) != 0.0) adj[in_off[k] + i].push_back(uj);
        std::vector<int> color(nu, 0), parent(nu, -1);
        std::vector<int> cycle;
        std::function<bool(int)> dfs = [&](int v) -> bool {
            color[v] = 1;
            for (int w : adj[v]) {
                if (color[w] == 1) {
                    cycle.push_back(w);
                    for (int x = v; x != w && x != -1; x = parent[x]) cycle.push_back(x);
                    return true;
                }
                if (color[w] == 0) {
                    parent[w] = v;
                    if (dfs(w)) return true;
                }
            }
            color[v] = 2;
            return false;
        };
        for (int v = 0; v < nu && cycle.empty(); ++v)
            if (color[v] == 0) dfs(v);
        std::ostringstream os;
        os << "ill-posed algebraic loop (singular feedthrough loop)";
        if (!cycle.empty()) {
            os << "; cycle through inputs:";
            for (auto it = cycle.rbegin(); it != cycle.rend(); ++it) {
                for (const auto& [l, bi] : in_map.pos)
                    if (in_off[bi.first] + bi.second == *it) os << " '" << l << "'";
            }
        }
        throw Error(os.str());
    }
    Mat Minv = lu.inverse();
    Mat Ku = Minv * (Py * Cb);  // u = Ku x + Ke e
    Mat Ke = Minv * Pe;

    Mat A = Ab + Bb * Ku;
    Mat B = Bb * Ke;
    Mat Cy = Cb + Db * Ku;  // all outputs vs x
    Mat Dy = Db * Ke;

    const int no = static_cast<int>(external_outputs.size());
    Mat C = Mat::Zero(no, nx), D = Mat::Zero(no, ne);
    for (int o = 0; o < no; ++o) {
        const int yo = global_out(external_outputs[o]);
        C.row(o) = Cy.row(yo);
        D.row(o) = Dy.row(yo);
    }
    return {A, B, C, D, states, ext_names, external_outputs};
}

// ---------------------------------------------------------------------------
// Eigen tooling
// ---------------------------------------------------------------------------

struct EigenSolution {
    CVec values;
    CMat right;         // columns
    CMat left;          // rows, normalized so left * right = I
    Vec damping_ratio;  // -Re/|lambda| (0 for lambda = 0)
    Vec frequency_hz;   // |Im|/2pi
};

inline EigenSolution eigen_solution(const Mat& A) {
    detail::require(A.rows() == A.cols(), "eigen analysis needs a square A");
    Eigen::EigenSolver<Mat> es(A);
    detail::require(es.info() == Eigen::Success, "eigen solver did not converge");
    EigenSolution sol;
    sol.values = es.eigenvalues();
    sol.right = es.eigenvectors();
    Eigen::FullPivLU<CMat> lu(sol.right);
    detail::require(lu.isInvertible(), "defective eigenvector matrix; left vectors undefined");
    sol.left = lu.inverse();
    const int n = static_cast<int>(A.rows());
    sol.damping_ratio = Vec::Zero(n);
    sol.frequency_hz = Vec::Zero(n);
    for (int i = 0; i < n; ++i) {
        const double mag = std::abs(sol.values[i]);
        sol.damping_ratio[i] = mag > 0.0 ? -sol.values[i].real() / mag : 0.0;
        sol.frequency_hz[i] = std::abs(sol.values[i].imag()) / (2.0 * M_PI);
    }
    return sol;
}

inline EigenSolution eigen_solution(const StateSpaceBlock& b) { return eigen_solution(b.A); }

/// Participation matrix p(k, i) = |phi_ki psi_ik|, each mode column scaled
/// to unit sum.
inline Mat participation(const EigenSolution& sol) {
    const int n = static_cast<int>(sol.values.size());
    Mat p(n, n);
    for (int i = 0; i < n; ++i) {
        double colsum = 0.0;
        for (int k = 0; k < n; ++k) {
            p(k, i) = std::abs(sol.right(k, i) * sol.left(i, k));
            colsum += p(k, i);
        }
        if (colsum > 0.0) p.col(i) /= colsum;
    }
    return p;
}

inline Mat participation(const StateSpaceBlock& b) { return participation(eigen_solution(b)); }

// ---------------------------------------------------------------------------
// Small helpers shared across modules
// ---------------------------------------------------------------------------

inline std::vector<double> logspace(double lo, double hi, int n) {
    detail::require(lo > 0.0 && hi > lo && n >= 2, "bad logspace request");
    std::vector<double> v(n);
    const double llo = std::log10(lo), lhi = std::log10(hi);
    for (int i = 0; i < n; ++i)
        v[i] = std::pow(10.0, llo + (lhi - llo) * i / (n - 1));
    v.front() = lo;
    v.back() = hi;
    return v;
}

}  // namespace gfmlab
