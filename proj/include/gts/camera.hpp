// Forward projection of 3-D marker points to distorted pixel coordinates,
// plus the numerical undistortion inverse used by the homography baseline.
//
// Frames: B (body, rotates with the platform), N (inertial, origin at the
// center of rotation), C (camera, fixed), image (2-D pixels). The chain is
//   r_ib = r_skb + [BS_k] r_isk
//   r_in = [NB] (r_ib + r_bn)
//   r_ic = r_nc + [CN] r_in,   [CN] = diag(1, -1, -1)
// followed by pinhole projection, cubic radial distortion in normalized
// coordinates, and denormalization back to pixels.
//
// All 3-D quantities are in meters internally. Pixel (0,0) spans
// [0,1)x[0,1) with center (0.5, 0.5).
#pragma once

#include "gts/rotation.hpp"

#include <stdexcept>
#include <vector>

namespace gts {

struct BehindCameraError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownMarkerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UndistortDivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Intrinsics {
    double fx = 3478.0;
    double fy = 3478.0;
    double cx = 1024.0;
    double cy = 768.0;
    Vec3 w = Vec3::Zero();  // radial distortion polynomial coefficients
    // axial skew is identically zero
};

/// Fixed rotation from the inertial to the camera frame.
inline Mat3 cn_matrix() {
    Mat3 cn;
    cn << 1, 0, 0,
          0, -1, 0,
          0, 0, -1;
    return cn;
}

struct Pattern {
    Vec3 r_skb = Vec3::Zero();          // pattern origin in body frame
    RotationParams p_bsk;               // pattern-to-body rotation (identity: (1,0,0))
    std::vector<Vec3> markers;          // marker coordinates in the pattern frame
    std::vector<int> marker_ids;        // unique across the whole system
};

struct SystemGeometry {
    Vec3 r_bn = Vec3::Zero();           // CoR -> body origin, body frame
    Vec3 r_nc = Vec3(0, 0, 1.27);       // camera -> CoR, camera frame
    std::vector<Pattern> patterns;      // pattern 0 is the body frame itself

    int marker_count() const {
        int n = 0;
        for (const auto& p : patterns) n += static_cast<int>(p.markers.size());
        return n;
    }

    struct MarkerRef {
        int pattern;
        int index;
    };

    MarkerRef find_marker(int marker_id) const {
        for (int k = 0; k < static_cast<int>(patterns.size()); ++k) {
            const auto& ids = patterns[k].marker_ids;
            for (int i = 0; i < static_cast<int>(ids.size()); ++i)
                if (ids[i] == marker_id) return {k, i};
        }
        throw UnknownMarkerError("unknown marker id " + std::to_string(marker_id));
    }
};

/// Marker position in the body frame (Pattern 0 markers are already there).
inline Vec3 marker_body_coords(const SystemGeometry& geom, int pattern, int index) {
    if (pattern < 0 || pattern >= static_cast<int>(geom.patterns.size()))
        throw UnknownMarkerError("pattern index out of range");
    const Pattern& pat = geom.patterns[pattern];
    if (index < 0 || index >= static_cast<int>(pat.markers.size()))
        throw UnknownMarkerError("marker index out of range");
    if (pattern == 0) return pat.markers[index];
    return pat.r_skb + rotate(params_to_quat(pat.p_bsk), pat.markers[index]);
}

inline Vec3 body_to_inertial(const Vec3& r_ib, const Vec3& r_bn, const Mat3& nb) {
    return nb * (r_ib + r_bn);
}

inline Vec3 inertial_to_camera(const Vec3& r_in, const SystemGeometry& geom) {
    return geom.r_nc + cn_matrix() * r_in;
}

/// Cubic radial distortion factor 1 + w1 r^2 + w2 r^4 + w3 r^6.
inline double distortion_factor(const Intrinsics& intr, double rho2) {
    return 1.0 + rho2 * (intr.w[0] + rho2 * (intr.w[1] + rho2 * intr.w[2]));
}

/// Full projection of a camera-frame point to distorted pixel coordinates.
inline Vec2 project(const Vec3& r_ic, const Intrinsics& intr) {
    if (r_ic.z() <= 1e-9)
        throw BehindCameraError("projected point at or behind the camera plane");
    // Homogeneous projection and dehomogenization collapse to a perspective
    // divide; with zero skew the normalization by (fx, fy, cx, cy) cancels.
    const Vec2 r_nu(r_ic.x() / r_ic.z(), r_ic.y() / r_ic.z());
    const double rho2 = r_nu.squaredNorm();
    const Vec2 r_n = r_nu * distortion_factor(intr, rho2);
    return Vec2(intr.fx * r_n.x() + intr.cx, intr.fy * r_n.y() + intr.cy);
}

/// Single entry point shared by estimator, calibrator, and simulator.
inline Vec2 project_marker(const SystemGeometry& geom, const Intrinsics& intr,
                           const RotationParams& p_nb, int pattern, int index) {
    const Vec3 r_ib = marker_body_coords(geom, pattern, index);
    const Vec3 r_in = rotate(params_to_quat(p_nb), r_ib + geom.r_bn);
    return project(inertial_to_camera(r_in, geom), intr);
}

/// Inverse of the radial distortion, fixed-point iteration on normalized
/// coordinates. Identity when w = 0.
inline Vec2 undistort(const Vec2& pixel, const Intrinsics& intr) {
    const Vec2 r_n((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy);
    Vec2 r_nu = r_n;
    for (int it = 0; it < 50; ++it) {
        const Vec2 next = r_n / distortion_factor(intr, r_nu.squaredNorm());
        if ((next - r_nu).norm() < 1e-15) {
            r_nu = next;
            break;
        }
        r_nu = next;
        if (it == 49)
            throw UndistortDivergedError("undistort did not converge in 50 iterations");
    }
    return Vec2(intr.fx * r_nu.x() + intr.cx, intr.fy * r_nu.y() + intr.cy);
}

/// Normalized (undistorted) camera coordinates of a pixel, for the baseline.
inline Vec2 pixel_to_normalized(const Vec2& pixel, const Intrinsics& intr) {
    const Vec2 u = undistort(pixel, intr);
    return Vec2((u.x() - intr.cx) / intr.fx, (u.y() - intr.cy) / intr.fy);
}

}  // namespace gts
