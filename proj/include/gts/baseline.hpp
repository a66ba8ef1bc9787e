// Planar-pattern pose estimation from a single frame: normalized DLT
// homography on undistorted normalized image coordinates, followed by the
// standard planar decomposition. Serves as the calibration / cold-start
// initializer and as the PnP-class comparator in the simulation study.
#pragma once

#include "gts/camera.hpp"
#include "gts/estimator.hpp"

#include <stdexcept>
#include <vector>

namespace gts {

struct DegenerateConfigurationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PoseBehindCameraError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PosePnP {
    UnitQuaternion rotation;  // plane frame -> camera frame (columns of R)
    Vec3 translation;         // plane origin in camera frame, meters
    double reprojection_rms = 0.0;  // in normalized coordinates
};

namespace detail {

// Hartley similarity normalization: centroid to origin, mean distance sqrt(2).
inline Mat3 similarity_normalization(const std::vector<Vec2>& pts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double scale = 0.0;
    for (const auto& p : pts) scale += (p - mean).norm();
    scale /= static_cast<double>(pts.size());
    if (scale < 1e-15)
        throw DegenerateConfigurationError("coincident points in homography input");
    const double s = std::sqrt(2.0) / scale;
    Mat3 t;
    t << s, 0, -s * mean.x(),
         0, s, -s * mean.y(),
         0, 0, 1;
    return t;
}

}  // namespace detail

/// Homography mapping plane coordinates (meters) to undistorted normalized
/// image coordinates, estimated by normalized DLT.
inline Mat3 estimate_homography(const std::vector<Vec2>& world,
                                const std::vector<Vec2>& pixels,
                                const Intrinsics& intr) {
    if (world.size() != pixels.size() || world.size() < 4)
        throw DegenerateConfigurationError("homography needs >= 4 correspondences");

    std::vector<Vec2> img(pixels.size());
    for (size_t i = 0; i < pixels.size(); ++i)
        img[i] = pixel_to_normalized(pixels[i], intr);

    const Mat3 tw = detail::similarity_normalization(world);
    const Mat3 ti = detail::similarity_normalization(img);

    Eigen::MatrixXd a(2 * world.size(), 9);
    for (size_t i = 0; i < world.size(); ++i) {
        const Vec3 x = tw * Vec3(world[i].x(), world[i].y(), 1.0);
        const Vec3 y = ti * Vec3(img[i].x(), img[i].y(), 1.0);
        a.row(2 * i) << x.x(), x.y(), 1.0, 0.0, 0.0, 0.0,
                        -y.x() * x.x(), -y.x() * x.y(), -y.x();
        a.row(2 * i + 1) << 0.0, 0.0, 0.0, x.x(), x.y(), 1.0,
                            -y.y() * x.x(), -y.y() * x.y(), -y.y();
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    // Collinear world points make the DLT system rank deficient.
    if (svd.singularValues()(7) < 1e-9 * svd.singularValues()(0))
        throw DegenerateConfigurationError("rank-deficient homography system");
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Mat3 hn;
    hn << h(0), h(1), h(2),
          h(3), h(4), h(5),
          h(6), h(7), h(8);
    Mat3 result = ti.inverse() * hn * tw;
    result /= result.norm();
    return result;
}

/// Planar decomposition of a homography into rotation and translation; the
/// sign hypothesis placing the plane in front of the camera is returned.
inline PosePnP pose_from_homography(const Mat3& h) {
    const double s = 0.5 * (h.col(0).norm() + h.col(1).norm());
    if (s < 1e-15) throw DegenerateConfigurationError("singular homography");

    Mat3 hs = h / s;
    if (hs(2, 2) < 0.0) hs = -hs;  // t_z > 0 hypothesis
    if (std::abs(hs(2, 2)) < 1e-12)
        throw PoseBehindCameraError("both sign hypotheses place the plane at depth zero");

    Mat3 rraw;
    rraw.col(0) = hs.col(0);
    rraw.col(1) = hs.col(1);
    rraw.col(2) = hs.col(0).cross(hs.col(1));
    // Nearest proper rotation via SVD projection.
    Eigen::JacobiSVD<Mat3> svd(rraw, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Mat3 flip = Mat3::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
    }

    PosePnP pose;
    pose.rotation = matrix_to_quat(r);
    pose.translation = hs.col(2);
    if (pose.translation.z() <= 0.0)
        throw PoseBehindCameraError("plane behind camera for both hypotheses");
    return pose;
}

/// Full baseline solve: merged coplanar point set -> camera-frame plane pose.
/// `world` are in-plane coordinates; the caller owns the plane definition.
inline PosePnP baseline_pose(const std::vector<Vec2>& world,
                             const std::vector<Vec2>& pixels,
                             const Intrinsics& intr) {
    const Mat3 h = estimate_homography(world, pixels, intr);
    PosePnP pose = pose_from_homography(h);

    const Mat3 r = quat_to_matrix(pose.rotation);
    double sum = 0.0;
    for (size_t i = 0; i < world.size(); ++i) {
        const Vec3 pc = r * Vec3(world[i].x(), world[i].y(), 0.0) + pose.translation;
        const Vec2 pred(pc.x() / pc.z(), pc.y() / pc.z());
        sum += (pred - pixel_to_normalized(pixels[i], intr)).squaredNorm();
    }
    pose.reprojection_rms = std::sqrt(sum / (2.0 * world.size()));
    return pose;
}

// In-plane coordinates of every marker, body frame, with the residual plane
// offset d such that r_ic = [CN][NB] (x, y, 0)^T + [CN][NB] d + r_nc.
struct PlanarScene {
    std::vector<Vec2> world;
    std::vector<int> ids;
    Vec3 d = Vec3::Zero();
};

inline PlanarScene make_planar_scene(const SystemGeometry& geom) {
    PlanarScene scene;
    double zbar = 0.0;
    for (int k = 0; k < static_cast<int>(geom.patterns.size()); ++k) {
        for (int i = 0; i < static_cast<int>(geom.patterns[k].markers.size()); ++i) {
            const Vec3 r_ib = marker_body_coords(geom, k, i);
            scene.world.emplace_back(r_ib.x(), r_ib.y());
            scene.ids.push_back(geom.patterns[k].marker_ids[i]);
            zbar += r_ib.z();
        }
    }
    if (scene.world.empty())
        throw DegenerateConfigurationError("geometry has no markers");
    zbar /= static_cast<double>(scene.world.size());
    scene.d = Vec3(0.0, 0.0, zbar) + geom.r_bn;
    return scene;
}

/// Attitude-only cold start: homography pose of the merged coplanar set,
/// translation discarded, rotation projected onto the pure-rotation manifold.
inline RotationParams cold_start_attitude(const SystemGeometry& geom,
                                          const Intrinsics& intr,
                                          const ObservationSet& obs) {
    if (obs.entries.size() < 4)
        throw NotEnoughMarkersError("cold start needs at least 4 coplanar markers");
    std::vector<Vec2> world, pixels;
    for (const auto& o : obs.entries) {
        const auto ref = geom.find_marker(o.marker_id);
        const Vec3 r_ib = marker_body_coords(geom, ref.pattern, ref.index);
        world.emplace_back(r_ib.x(), r_ib.y());
        pixels.push_back(o.pixel);
    }
    const PosePnP pose = baseline_pose(world, pixels, intr);
    const Mat3 nb = cn_matrix() * quat_to_matrix(pose.rotation);
    UnitQuaternion q = matrix_to_quat(nb);
    if (1.0 + q.v.z() < 1e-9) q = UnitQuaternion(-q.w, -q.v);
    return quat_to_params(q);
}

}  // namespace gts
