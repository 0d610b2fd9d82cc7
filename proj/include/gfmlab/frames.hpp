#pragma once

// Rotating-frame conventions shared by all models.
//
// Complex representation x = x_d + j x_q with the q axis leading the d axis.
// The network DQ frame is anchored to the synchronous machine rotor (or the
// ideal source in infinite-bus studies). A converter dq frame trails the DQ
// frame by the angle state theta, which integrates w_b (w_sg - w_vsc):
//   x_dq = R(theta) x_DQ,   x_DQ = R(-theta) x_dq,
//   R(theta) = [[cos, -sin], [sin, cos]].

#include <Eigen/Dense>

#include <cmath>

namespace gfmlab {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline Mat2 rot(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    Mat2 r;
    r << c, -s, s, c;
    return r;
}

/// Multiplication by j: J x maps (d, q) -> (-q, d).
inline Mat2 jmat() {
    Mat2 j;
    j << 0.0, -1.0, 1.0, 0.0;
    return j;
}

struct SystemBase {
    double s_mva = 70.0;
    double v_kv = 13.8;
    double f_hz = 50.0;
    double omega_b() const { return 2.0 * M_PI * f_hz; }
};

/// DQ -> dq rotation of a measured pair.
inline Vec2 frame_to_dq(const Vec2& x_DQ, double theta) { return rot(theta) * x_DQ; }

/// dq -> DQ rotation of a command pair.
inline Vec2 frame_to_DQ(const Vec2& x_dq, double theta) { return rot(-theta) * x_dq; }

/// Linearized DQ -> dq transform: [dx_d; dx_q] = T * [dx_D; dx_Q; dtheta].
/// The angle column is J x_dq0 evaluated at the operating point.
inline Eigen::Matrix<double, 2, 3> t_vsc(const Vec2& x_DQ0, double theta0) {
    Eigen::Matrix<double, 2, 3> t;
    const Vec2 x_dq0 = rot(theta0) * x_DQ0;
    t.leftCols<2>() = rot(theta0);
    t.col(2) = jmat() * x_dq0;
    return t;
}

/// Linearized dq -> DQ transform: [dx_D; dx_Q] = T * [dx_d; dx_q; dtheta].
inline Eigen::Matrix<double, 2, 3> t_vsc_inv(const Vec2& x_dq0, double theta0) {
    Eigen::Matrix<double, 2, 3> t;
    const Vec2 x_DQ0 = rot(-theta0) * x_dq0;
    t.leftCols<2>() = rot(-theta0);
    t.col(2) = -jmat() * x_DQ0;
    return t;
}

}  // namespace gfmlab
