#include <catch2/catch_amalgamated.hpp>

#include "support/test_support.hpp"

using namespace gts;

namespace {

/// Project plane points (x, y, 0) through rotation r, translation t, and the
/// intrinsics, producing the distorted pixel observations of a planar scene.
std::vector<Vec2> project_plane(const std::vector<Vec2>& world, const Mat3& r, const Vec3& t,
                                const Intrinsics& intr) {
    std::vector<Vec2> pixels;
    pixels.reserve(world.size());
    for (const auto& w : world)
        pixels.push_back(project(r * Vec3(w.x(), w.y(), 0.0) + t, intr));
    return pixels;
}

std::vector<Vec2> square_world() {
    return {Vec2(-0.1, -0.1), Vec2(0.1, -0.1), Vec2(0.1, 0.1), Vec2(-0.1, 0.1),
            Vec2(0.03, -0.02), Vec2(-0.06, 0.05)};
}

}  // namespace

TEST_CASE("homography reproduces exact correspondences", "[baseline]") {
    const Intrinsics intr = make_default_intrinsics();
    const std::vector<Vec2> world = square_world();
    const Mat3 r = Mat3::Identity();
    const Vec3 t(0.0, 0.0, 1.2);  // fronto-parallel
    const std::vector<Vec2> pixels = project_plane(world, r, t, intr);

    const Mat3 h = estimate_homography(world, pixels, intr);
    for (size_t i = 0; i < world.size(); ++i) {
        const Vec3 m = h * Vec3(world[i].x(), world[i].y(), 1.0);
        const Vec2 mapped(m.x() / m.z(), m.y() / m.z());
        CHECK((mapped - pixel_to_normalized(pixels[i], intr)).norm() < 1e-10);
    }
}

TEST_CASE("homography rejects degenerate inputs", "[baseline]") {
    const Intrinsics intr = make_default_intrinsics();
    const std::vector<Vec2> collinear = {Vec2(-0.1, 0.0), Vec2(-0.02, 0.0), Vec2(0.05, 0.0),
                                         Vec2(0.1, 0.0)};
    const std::vector<Vec2> pixels =
        project_plane(collinear, Mat3::Identity(), Vec3(0, 0, 1.2), intr);
    CHECK_THROWS_AS(estimate_homography(collinear, pixels, intr), DegenerateConfigurationError);

    const std::vector<Vec2> three = {Vec2(0, 0), Vec2(0.1, 0), Vec2(0, 0.1)};
    CHECK_THROWS_AS(estimate_homography(three, project_plane(three, Mat3::Identity(),
                                                             Vec3(0, 0, 1.2), intr),
                                        intr),
                    DegenerateConfigurationError);
}

TEST_CASE("homography is invariant to similarity re-normalization", "[baseline]") {
    const Intrinsics intr = make_default_intrinsics();
    const std::vector<Vec2> world = square_world();
    const Mat3 r = quat_to_matrix(compose(axis_quat(0, 0.2), axis_quat(2, 0.7)));
    const Vec3 t(0.05, -0.02, 1.3);
    const std::vector<Vec2> pixels = project_plane(world, r, t, intr);

    // Re-express the plane coordinates through a similarity; the estimated
    // homography must absorb it exactly, leaving the predictions unchanged.
    const double scale = 3.7;
    const double ang = 0.4;
    Eigen::Matrix2d rot2;
    rot2 << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
    const Vec2 shift(0.21, -0.34);
    std::vector<Vec2> world2;
    for (const auto& w : world) world2.push_back(scale * (rot2 * w) + shift);

    const Mat3 h1 = estimate_homography(world, pixels, intr);
    const Mat3 h2 = estimate_homography(world2, pixels, intr);
    for (size_t i = 0; i < world.size(); ++i) {
        const Vec3 m1 = h1 * Vec3(world[i].x(), world[i].y(), 1.0);
        const Vec3 m2 = h2 * Vec3(world2[i].x(), world2[i].y(), 1.0);
        CHECK((Vec2(m1.x() / m1.z(), m1.y() / m1.z()) - Vec2(m2.x() / m2.z(), m2.y() / m2.z()))
                  .norm() < 1e-10);
    }
}

TEST_CASE("pose decomposition recovers the planar pose", "[baseline]") {
    const Intrinsics intr = make_default_intrinsics();
    const std::vector<Vec2> world = square_world();
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> tilt(-0.35, 0.35);
    std::uniform_real_distribution<double> spin(-M_PI, M_PI);
    for (int i = 0; i < 100; ++i) {
        const UnitQuaternion q =
            compose(axis_quat(0, tilt(rng)), compose(axis_quat(1, tilt(rng)),
                                                     axis_quat(2, spin(rng))));
        const Mat3 r = quat_to_matrix(q);
        const Vec3 t(0.02 * tilt(rng), 0.02 * tilt(rng), 1.25);
        const std::vector<Vec2> pixels = project_plane(world, r, t, intr);
        const PosePnP pose = baseline_pose(world, pixels, intr);
        const Mat3 rest = quat_to_matrix(pose.rotation);
        CHECK((rest - r).norm() < 1e-6);
        CHECK((pose.translation - t).norm() < 1e-6);
        CHECK(pose.reprojection_rms < 1e-9);
        CHECK((rest.transpose() * rest - Mat3::Identity()).norm() < 1e-10);
        CHECK(rest.determinant() == Catch::Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("boresight half-turn selects the front hypothesis", "[baseline]") {
    const Intrinsics intr = make_default_intrinsics();
    const std::vector<Vec2> world = square_world();
    for (const double yaw : {0.0, 0.5 * M_PI, M_PI, 1.5 * M_PI}) {
        const Mat3 r = quat_to_matrix(axis_quat(2, yaw));
        const Vec3 t(0.0, 0.0, 1.2);
        const std::vector<Vec2> pixels = project_plane(world, r, t, intr);
        const PosePnP pose = baseline_pose(world, pixels, intr);
        CHECK(pose.translation.z() > 0.0);
        CHECK((quat_to_matrix(pose.rotation) - r).norm() < 1e-6);
    }
}

TEST_CASE("baseline pose with distorted optics still recovers truth", "[baseline]") {
    Intrinsics intr = make_default_intrinsics();
    intr.w = Vec3(0.09, -0.05, 0.02);
    const std::vector<Vec2> world = square_world();
    const Mat3 r = quat_to_matrix(compose(axis_quat(1, 0.25), axis_quat(2, 1.1)));
    const Vec3 t(0.03, -0.01, 1.2);
    const std::vector<Vec2> pixels = project_plane(world, r, t, intr);
    const PosePnP pose = baseline_pose(world, pixels, intr);
    CHECK((quat_to_matrix(pose.rotation) - r).norm() < 1e-6);
    CHECK((pose.translation - t).norm() < 1e-6);
}

TEST_CASE("planar scene covers all markers of the default geometry", "[baseline]") {
    const SystemGeometry geom = make_default_geometry();
    const PlanarScene scene = make_planar_scene(geom);
    CHECK(static_cast<int>(scene.world.size()) == geom.marker_count());
    // All default markers share one deck height, captured in the plane offset.
    for (int k = 0; k < static_cast<int>(geom.patterns.size()); ++k)
        for (int i = 0; i < static_cast<int>(geom.patterns[k].markers.size()); ++i)
            CHECK(marker_body_coords(geom, k, i).z() ==
                  Catch::Approx(scene.d.z() - geom.r_bn.z()).margin(1e-12));
}
