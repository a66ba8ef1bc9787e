// Rotation algebra: unit quaternions, the 3-parameter minimal chart on SO(3),
// and the analytic derivatives shared by the attitude estimator and the
// system calibrator.
//
// Conventions:
//  - Quaternions are scalar-first, q = (w, v1, v2, v3).
//  - Rotation matrices act passively: R(q) = (w^2 - v.v) I + 2 v v^T - 2 w [v]x.
//  - The minimal chart maps p = (p1, p2, p3) to
//        q = 2/(a^2+1) * (p1, p2, p3, (1-a^2)/2),   a^2 = |p|^2,
//    with component assignment (w, v1, v2, v3). Under this assignment
//    p = (1,0,0) is the identity rotation, p = (0,0,0) is a half turn about
//    the third axis, and rotations about the third axis vary p1 only.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace gts {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

struct SingularParametrizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Skew-symmetric cross-product matrix [u]x such that [u]x v = u x v.
inline Mat3 skew(const Vec3& u) {
    Mat3 s;
    s << 0.0, -u.z(), u.y(),
         u.z(), 0.0, -u.x(),
        -u.y(), u.x(), 0.0;
    return s;
}

struct UnitQuaternion {
    double w = 1.0;
    Vec3 v = Vec3::Zero();

    UnitQuaternion() = default;
    UnitQuaternion(double w_, const Vec3& v_) : w(w_), v(v_) {}
    UnitQuaternion(double w_, double x, double y, double z) : w(w_), v(x, y, z) {}

    double norm() const { return std::sqrt(w * w + v.squaredNorm()); }

    /// Unit-norm quaternion with the sign fixed to w >= 0 (when w != 0).
    static UnitQuaternion normalized(double w_, const Vec3& v_) {
        const double n = std::sqrt(w_ * w_ + v_.squaredNorm());
        if (!(n > 0.0) || !std::isfinite(n))
            throw std::invalid_argument("cannot normalize zero/non-finite quaternion");
        double s = 1.0 / n;
        if (w_ < 0.0) s = -s;
        return UnitQuaternion(w_ * s, v_ * s);
    }

    UnitQuaternion conjugate() const { return UnitQuaternion(w, -v); }

    Vec4 coeffs() const { return Vec4(w, v.x(), v.y(), v.z()); }

    /// Rotation angle in [0, pi].
    double angle() const { return 2.0 * std::atan2(v.norm(), std::abs(w)); }
};

struct RotationParams {
    Vec3 p = Vec3(1.0, 0.0, 0.0);  // identity rotation

    RotationParams() = default;
    explicit RotationParams(const Vec3& p_) : p(p_) {}
    RotationParams(double p1, double p2, double p3) : p(p1, p2, p3) {}
};

/// Minimal chart: p -> q with |q| = 1 for any finite p.
inline UnitQuaternion params_to_quat(const RotationParams& params) {
    const Vec3& p = params.p;
    const double a2 = p.squaredNorm();
    const double s = 2.0 / (a2 + 1.0);
    return UnitQuaternion(s * p.x(), Vec3(s * p.y(), s * p.z(), s * (1.0 - a2) / 2.0));
}

/// Inverse chart. Defined for 1 + v3 away from zero; the chart does not cover
/// quaternions with v3 = -1 (half turns orthogonal to the third axis branch).
/// Since q and -q are the same rotation, the sign with v3 >= 0 is chosen:
/// this keeps |p| <= 1 so the parameters of any returned attitude stay far
/// from the chart rim, where the parameter Jacobian degenerates.
inline RotationParams quat_to_params(const UnitQuaternion& q) {
    if (1.0 + q.v.z() < 1e-9)
        throw SingularParametrizationError("quat_to_params: 1 + qv3 below 1e-9");
    const double sign = q.v.z() < 0.0 ? -1.0 : 1.0;
    const double denom = 1.0 + sign * q.v.z();
    return RotationParams(sign * Vec3(q.w, q.v.x(), q.v.y()) / denom);
}

/// Passive direction-cosine matrix of q.
inline Mat3 quat_to_matrix(const UnitQuaternion& q) {
    const double w = q.w;
    const Vec3& v = q.v;
    return (w * w - v.squaredNorm()) * Mat3::Identity()
         + 2.0 * (v * v.transpose())
         - 2.0 * w * skew(v);
}

/// Rotate a vector: R(q) u, without forming the matrix.
inline Vec3 rotate(const UnitQuaternion& q, const Vec3& u) {
    const double w = q.w;
    const Vec3& v = q.v;
    return (w * w - v.squaredNorm()) * u + 2.0 * v.dot(u) * v - 2.0 * w * v.cross(u);
}

/// Composition satisfying R(compose(a, b)) = R(a) R(b).
inline UnitQuaternion compose(const UnitQuaternion& a, const UnitQuaternion& b) {
    // Hamilton product b * a under the passive matrix convention above.
    return UnitQuaternion(b.w * a.w - b.v.dot(a.v),
                          b.w * a.v + a.w * b.v + b.v.cross(a.v));
}

/// Quaternion of a proper rotation matrix (Shepperd's method), with
/// R(matrix_to_quat(R)) = R and w >= 0.
inline UnitQuaternion matrix_to_quat(const Mat3& m) {
    const double tr = m.trace();
    double w, x, y, z;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        w = 0.25 * s;
        x = (m(1, 2) - m(2, 1)) / s;
        y = (m(2, 0) - m(0, 2)) / s;
        z = (m(0, 1) - m(1, 0)) / s;
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
        w = (m(1, 2) - m(2, 1)) / s;
        x = 0.25 * s;
        y = (m(1, 0) + m(0, 1)) / s;
        z = (m(2, 0) + m(0, 2)) / s;
    } else if (m(1, 1) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
        w = (m(2, 0) - m(0, 2)) / s;
        x = (m(1, 0) + m(0, 1)) / s;
        y = 0.25 * s;
        z = (m(2, 1) + m(1, 2)) / s;
    } else {
        double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
        w = (m(0, 1) - m(1, 0)) / s;
        x = (m(2, 0) + m(0, 2)) / s;
        y = (m(2, 1) + m(1, 2)) / s;
        z = 0.25 * s;
    }
    return UnitQuaternion::normalized(w, Vec3(x, y, z));
}

/// d(R(q) u)/dq, 3x4 with the scalar column first.
inline Eigen::Matrix<double, 3, 4> d_rotated_vec_d_quat(const UnitQuaternion& q, const Vec3& u) {
    Eigen::Matrix<double, 3, 4> d;
    d.col(0) = 2.0 * (q.w * u + u.cross(q.v));
    d.block<3, 3>(0, 1) = 2.0 * (q.v.dot(u) * Mat3::Identity()
                                 - u * q.v.transpose()
                                 + q.v * u.transpose()
                                 + q.w * skew(u));
    return d;
}

/// dq/dp, 4x3 with rows ordered (w, v1, v2, v3).
inline Eigen::Matrix<double, 4, 3> d_quat_d_params(const RotationParams& params) {
    const Vec3& p = params.p;
    const double a2 = p.squaredNorm();
    const double h = (a2 + 1.0) / 2.0;
    Eigen::Matrix<double, 4, 3> m;
    m.block<3, 3>(0, 0) = p * p.transpose() - h * Mat3::Identity();
    m.row(3) = p.transpose();
    return -4.0 / ((a2 + 1.0) * (a2 + 1.0)) * m;
}

/// Quaternion of a rotation by `angle` about coordinate axis 0, 1, or 2.
inline UnitQuaternion axis_quat(int axis, double angle) {
    Vec3 v = Vec3::Zero();
    v[axis] = std::sin(angle / 2.0);
    return UnitQuaternion(std::cos(angle / 2.0), v);
}

/// 3-2-1 Euler composition: R(q) = R1(roll) R2(pitch) R3(yaw).
inline UnitQuaternion quat_from_euler321(double roll, double pitch, double yaw) {
    return compose(axis_quat(0, roll), compose(axis_quat(1, pitch), axis_quat(2, yaw)));
}

struct Euler321 {
    double roll, pitch, yaw;
};

/// Inverse of quat_from_euler321 (pitch in [-pi/2, pi/2]).
inline Euler321 euler321_from_quat(const UnitQuaternion& q) {
    const Mat3 m = quat_to_matrix(q);
    Euler321 e;
    e.pitch = std::asin(std::clamp(-m(0, 2), -1.0, 1.0));
    e.yaw = std::atan2(m(0, 1), m(0, 0));
    e.roll = std::atan2(m(1, 2), m(2, 2));
    return e;
}

/// Symmetric, chart-free rotation distance between two attitudes, radians.
inline double rotation_angle_error(const UnitQuaternion& q_true, const UnitQuaternion& q_est) {
    const UnitQuaternion err = compose(q_true.conjugate(), q_est);
    return 2.0 * std::asin(std::min(1.0, err.v.norm()));
}

}  // namespace gts
