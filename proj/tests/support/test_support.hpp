// Shared helpers for the test suite: finite-difference Jacobian oracles,
// random sampling, and synthetic observation generation.
#pragma once

#include "gts/montecarlo.hpp"

#include <Eigen/Dense>
#include <functional>
#include <random>
#include <vector>

namespace gts::test {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kFdRelTol = 1e-6;
// Relative tolerance 1e-6 with an absolute floor: each column is judged
// against max(|column|, 1e-3 * |matrix|). Central differences at h = 1e-6 on
// residual functions of O(10^3) pixels carry ~1e-7 px of cancellation noise,
// so columns far below the Jacobian's own scale cannot be resolved more
// finely than that floor regardless of analytic correctness.
inline constexpr double kFdAbsFloorScale = 1e-3;

/// Central-difference Jacobian of f: R^n -> R^m with step h on each component.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = kFdStep) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd jac(f0.size(), x.size());
    for (int j = 0; j < x.size(); ++j) {
        Eigen::VectorXd xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        jac.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return jac;
}

/// Column-scaled maximum relative deviation between an analytic Jacobian and
/// its finite-difference oracle.
inline double jacobian_rel_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& fd) {
    double worst = 0.0;
    const double floor = kFdAbsFloorScale * std::max(fd.cwiseAbs().maxCoeff(), 1.0);
    for (int j = 0; j < fd.cols(); ++j) {
        const double denom = std::max(fd.col(j).cwiseAbs().maxCoeff(), floor);
        worst = std::max(worst, (analytic.col(j) - fd.col(j)).cwiseAbs().maxCoeff() / denom);
    }
    return worst;
}

inline UnitQuaternion random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    return UnitQuaternion::normalized(g(rng), Vec3(g(rng), g(rng), g(rng)));
}

inline Vec3 random_vec3(std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    return Vec3(u(rng), u(rng), u(rng));
}

/// Exact (noise-free) observations of every marker at the given attitude.
inline ObservationSet exact_observations(const SystemGeometry& geom, const Intrinsics& intr,
                                         const RotationParams& pose, int frame_id = 0) {
    ObservationSet obs;
    obs.frame_id = frame_id;
    for (int k = 0; k < static_cast<int>(geom.patterns.size()); ++k)
        for (int i = 0; i < static_cast<int>(geom.patterns[k].markers.size()); ++i)
            obs.entries.push_back(
                {geom.patterns[k].marker_ids[i], project_marker(geom, intr, pose, k, i)});
    return obs;
}

/// Observations with i.i.d. Gaussian pixel noise added to every coordinate.
inline ObservationSet noisy_observations(const SystemGeometry& geom, const Intrinsics& intr,
                                         const RotationParams& pose, double sigma_px,
                                         std::mt19937_64& rng, int frame_id = 0) {
    ObservationSet obs = exact_observations(geom, intr, pose, frame_id);
    std::normal_distribution<double> g(0.0, sigma_px);
    for (auto& e : obs.entries) e.pixel += Vec2(g(rng), g(rng));
    return obs;
}

/// Small two-pattern, coplanar, eight-marker rig for calibrator-scale tests.
inline SystemGeometry small_geometry() {
    SystemGeometry geom;
    geom.r_bn = Vec3(0.0, 0.0, 0.042);
    geom.r_nc = Vec3(0.0, 0.0, 1.27);
    Pattern body;
    body.markers = {Vec3(0.12, 0.04, 0.05), Vec3(-0.07, 0.11, 0.05),
                    Vec3(-0.10, -0.06, 0.05), Vec3(0.05, -0.13, 0.05)};
    body.marker_ids = {1, 2, 3, 4};
    geom.patterns.push_back(body);
    Pattern second;
    second.r_skb = Vec3(0.16, -0.03, 0.05);
    second.markers = {Vec3(0.02, 0.05, 0.0), Vec3(-0.04, 0.02, 0.0),
                      Vec3(0.05, -0.03, 0.0), Vec3(-0.02, -0.06, 0.0)};
    second.marker_ids = {5, 6, 7, 8};
    geom.patterns.push_back(second);
    return geom;
}

}  // namespace gts::test
