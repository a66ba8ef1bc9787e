// Online attitude solve: Gauss-Newton minimization of the total quadratic
// reprojection error over the 3 attitude parameters, with the analytic
// Jacobian of the full projection chain. The per-marker derivative blocks are
// shared with the batch calibrator.
#pragma once

#include "gts/camera.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace gts {

struct SingularNormalEquations : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotEnoughMarkersError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Observation {
    int marker_id;
    Vec2 pixel;
};

struct ObservationSet {
    int frame_id = 0;
    std::vector<Observation> entries;
};

struct AttitudeSolution {
    RotationParams p_nb;
    UnitQuaternion q_nb;
    double residual_sq = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

// Intermediates of one marker projection plus the derivative blocks of the
// pixel output with respect to the camera-frame point and the parameters.
struct MarkerChain {
    Vec3 r_isk;       // marker in its pattern frame
    Vec3 r_ib;        // marker in body frame
    Vec3 u;           // r_ib + r_bn, the rotated lever arm
    Vec3 r_ic;        // marker in camera frame
    Vec2 r_nu;        // undistorted normalized coordinates
    double rho2 = 0.0;
    Vec2 r_n;         // distorted normalized coordinates
    Vec2 pixel;

    Eigen::Matrix2d ab;                    // pixel scaling times distortion derivative
    Eigen::Matrix<double, 2, 3> dpix_drc;  // through the perspective divide
};

inline MarkerChain marker_chain(const SystemGeometry& geom, const Intrinsics& intr,
                                const UnitQuaternion& q_nb, int pattern, int index) {
    MarkerChain c;
    c.r_isk = geom.patterns[pattern].markers[index];
    c.r_ib = marker_body_coords(geom, pattern, index);
    c.u = c.r_ib + geom.r_bn;
    c.r_ic = inertial_to_camera(rotate(q_nb, c.u), geom);
    if (c.r_ic.z() <= 1e-9)
        throw BehindCameraError("projected point at or behind the camera plane");
    c.r_nu = Vec2(c.r_ic.x() / c.r_ic.z(), c.r_ic.y() / c.r_ic.z());
    c.rho2 = c.r_nu.squaredNorm();
    const double d = distortion_factor(intr, c.rho2);
    c.r_n = c.r_nu * d;
    c.pixel = Vec2(intr.fx * c.r_n.x() + intr.cx, intr.fy * c.r_n.y() + intr.cy);

    // Distortion derivative dRn/dRnu (reduces to I2 when w = 0).
    const double dpoly = 2.0 * intr.w[0] + 4.0 * intr.w[1] * c.rho2
                       + 6.0 * intr.w[2] * c.rho2 * c.rho2;
    const Eigen::Matrix2d distd =
        d * Eigen::Matrix2d::Identity() + dpoly * (c.r_nu * c.r_nu.transpose());

    // Pixel scaling A = diag(fx, fy) times distortion derivative; the inverse
    // scaling C = diag(1/fx, 1/fy) of the normalization cancels against A in
    // the chain, so keep them separate only where the calibrator needs them.
    Eigen::Matrix2d a;
    a << intr.fx, 0.0, 0.0, intr.fy;
    c.ab = a * distd;

    // Perspective-divide derivative d(r_nu)/d(r_ic), then d(pixel)/d(r_ic).
    const Vec3& rc = c.r_ic;
    Eigen::Matrix<double, 2, 3> dehom;
    dehom << 1.0 / rc.z(), 0.0, -rc.x() / (rc.z() * rc.z()),
             0.0, 1.0 / rc.z(), -rc.y() / (rc.z() * rc.z());
    c.dpix_drc = c.ab * dehom;
    return c;
}

/// d(pixel)/d(p_nb), 2x3, for one marker.
inline Eigen::Matrix<double, 2, 3> attitude_block(const MarkerChain& c,
                                                  const UnitQuaternion& q_nb,
                                                  const RotationParams& p_nb) {
    return c.dpix_drc * cn_matrix() * d_rotated_vec_d_quat(q_nb, c.u) * d_quat_d_params(p_nb);
}

}  // namespace detail

/// Stacked (predicted - observed) reprojection errors, two rows per marker,
/// in observation order.
inline Eigen::VectorXd reprojection_residuals(const SystemGeometry& geom,
                                              const Intrinsics& intr,
                                              const RotationParams& p_nb,
                                              const ObservationSet& obs) {
    const UnitQuaternion q = params_to_quat(p_nb);
    Eigen::VectorXd eps(2 * obs.entries.size());
    for (size_t i = 0; i < obs.entries.size(); ++i) {
        const auto ref = geom.find_marker(obs.entries[i].marker_id);
        const auto c = detail::marker_chain(geom, intr, q, ref.pattern, ref.index);
        eps.segment<2>(2 * i) = c.pixel - obs.entries[i].pixel;
    }
    return eps;
}

/// Analytic Jacobian of reprojection_residuals with respect to p_nb.
inline Eigen::MatrixXd attitude_jacobian(const SystemGeometry& geom,
                                         const Intrinsics& intr,
                                         const RotationParams& p_nb,
                                         const ObservationSet& obs) {
    const UnitQuaternion q = params_to_quat(p_nb);
    Eigen::MatrixXd jac(2 * obs.entries.size(), 3);
    for (size_t i = 0; i < obs.entries.size(); ++i) {
        const auto ref = geom.find_marker(obs.entries[i].marker_id);
        const auto c = detail::marker_chain(geom, intr, q, ref.pattern, ref.index);
        jac.block<2, 3>(2 * i, 0) = detail::attitude_block(c, q, p_nb);
    }
    return jac;
}

/// Damped Gauss-Newton attitude solve from an initial guess.
/// Convergence: step norm < 1e-10 and relative residual change < 1e-12,
/// within 50 iterations; steps that increase the residual are halved up to
/// 8 times.
inline AttitudeSolution solve_attitude(const SystemGeometry& geom,
                                       const Intrinsics& intr,
                                       const ObservationSet& obs,
                                       const RotationParams& initial) {
    if (obs.entries.size() < 3)
        throw NotEnoughMarkersError("attitude solve needs at least 3 markers");
    if (!initial.p.allFinite())
        throw std::invalid_argument("non-finite initial guess");

    AttitudeSolution sol;
    sol.p_nb = initial;
    Eigen::VectorXd eps = reprojection_residuals(geom, intr, sol.p_nb, obs);
    double r2 = eps.squaredNorm();

    constexpr int kMaxIter = 50;
    for (int it = 0; it < kMaxIter; ++it) {
        const Eigen::MatrixXd jac = attitude_jacobian(geom, intr, sol.p_nb, obs);
        const Mat3 jtj = jac.transpose() * jac;
        const Eigen::JacobiSVD<Mat3> svd(jtj, Eigen::ComputeFullU | Eigen::ComputeFullV);
        if (svd.singularValues()(2) <= 0.0 ||
            svd.singularValues()(0) / svd.singularValues()(2) > 1e12)
            throw SingularNormalEquations("attitude normal equations near-singular");
        const Vec3 step = svd.solve(jac.transpose() * eps);

        double scale = 1.0;
        RotationParams trial;
        Eigen::VectorXd trial_eps;
        double trial_r2 = r2;
        for (int h = 0; h <= 8; ++h) {
            trial = RotationParams(sol.p_nb.p - scale * step);
            trial_eps = reprojection_residuals(geom, intr, trial, obs);
            trial_r2 = trial_eps.squaredNorm();
            if (trial_r2 <= r2 || step.norm() < 1e-10) break;
            scale *= 0.5;
        }

        const double prev_r2 = r2;
        sol.p_nb = trial;
        eps = std::move(trial_eps);
        r2 = trial_r2;
        sol.iterations = it + 1;

        const bool small_step = (scale * step).norm() < 1e-10;
        const bool small_change =
            std::abs(prev_r2 - r2) <= 1e-12 * std::max(prev_r2, 1e-300);
        if (small_step || small_change) {
            sol.converged = true;
            break;
        }
    }
    sol.q_nb = params_to_quat(sol.p_nb);
    sol.residual_sq = r2;
    return sol;
}

}  // namespace gts
