#include <catch2/catch_amalgamated.hpp>

#include "gts/io.hpp"
#include "support/test_support.hpp"

using namespace gts;

TEST_CASE("marker_body_coords composes pattern poses", "[camera]") {
    SystemGeometry geom;
    Pattern body;
    body.markers = {Vec3(0.03, -0.02, 0.01)};
    body.marker_ids = {1};
    geom.patterns.push_back(body);

    Pattern offset;
    offset.r_skb = Vec3(0.1, 0.0, 0.0);
    offset.markers = {Vec3(0.0, 0.2, 0.0)};
    offset.marker_ids = {2};
    geom.patterns.push_back(offset);

    Pattern flipped;
    flipped.p_bsk = RotationParams(0.0, 0.0, 0.0);  // half turn about axis 3
    flipped.markers = {Vec3(1.0, 0.0, 0.0)};
    flipped.marker_ids = {3};
    geom.patterns.push_back(flipped);

    CHECK((marker_body_coords(geom, 0, 0) - Vec3(0.03, -0.02, 0.01)).norm() < 1e-15);
    CHECK((marker_body_coords(geom, 1, 0) - Vec3(0.1, 0.2, 0.0)).norm() < 1e-15);
    CHECK((marker_body_coords(geom, 2, 0) - Vec3(-1.0, 0.0, 0.0)).norm() < 1e-12);
    CHECK_THROWS_AS(marker_body_coords(geom, 3, 0), UnknownMarkerError);
    CHECK_THROWS_AS(marker_body_coords(geom, 0, 5), UnknownMarkerError);
}

TEST_CASE("body_to_inertial applies translation before rotation", "[camera]") {
    CHECK((body_to_inertial(Vec3(1, 2, 3), Vec3(0.1, 0.2, 0.3), Mat3::Identity()) -
           Vec3(1.1, 2.2, 3.3))
              .norm() < 1e-15);
    const Mat3 half_turn = quat_to_matrix(axis_quat(2, M_PI));
    CHECK((body_to_inertial(Vec3(1, 0, 0), Vec3::Zero(), half_turn) - Vec3(-1, 0, 0)).norm() <
          1e-12);

    std::mt19937_64 rng(21);
    for (int i = 0; i < 100; ++i) {
        const Vec3 r_ib = test::random_vec3(rng, 1.0);
        const Vec3 r_bn = test::random_vec3(rng, 0.2);
        const Mat3 nb = quat_to_matrix(test::random_quat(rng));
        CHECK(body_to_inertial(r_ib, r_bn, nb).norm() ==
              Catch::Approx((r_ib + r_bn).norm()).margin(1e-12));
    }
}

TEST_CASE("inertial_to_camera applies the fixed CN flip", "[camera]") {
    SystemGeometry geom;
    geom.r_nc = Vec3(0.0, 0.0, 1.27);
    CHECK((inertial_to_camera(Vec3::Zero(), geom) - Vec3(0, 0, 1.27)).norm() < 1e-15);
    CHECK((inertial_to_camera(Vec3(0, 0, 1), geom) - Vec3(0, 0, 0.27)).norm() < 1e-15);

    std::mt19937_64 rng(22);
    for (int i = 0; i < 100; ++i) {
        const Vec3 r_in = test::random_vec3(rng, 1.0);
        const Vec3 r_ic = inertial_to_camera(r_in, geom);
        const Vec3 back = cn_matrix().transpose() * (r_ic - geom.r_nc);
        CHECK((back - r_in).norm() < 1e-12);
    }
}

TEST_CASE("project evaluates the full distortion chain", "[camera]") {
    {
        Intrinsics intr;  // fx = fy = 3478, (cx, cy) = (1024, 768), w = 0
        const Vec2 px = project(Vec3(0, 0, 1), intr);
        CHECK(px.x() == Catch::Approx(1024.0).margin(1e-12));
        CHECK(px.y() == Catch::Approx(768.0).margin(1e-12));
    }
    {
        Intrinsics intr;
        intr.fx = intr.fy = 1000.0;
        intr.cx = 512.0;
        intr.cy = 384.0;
        const Vec2 px = project(Vec3(0.1, 0, 1), intr);
        CHECK(px.x() == Catch::Approx(612.0).margin(1e-12));
        CHECK(px.y() == Catch::Approx(384.0).margin(1e-12));

        intr.w = Vec3(0.1, 0.0, 0.0);
        const Vec2 pxd = project(Vec3(0.1, 0, 1), intr);
        CHECK(pxd.x() == Catch::Approx(612.1).margin(1e-12));
        CHECK(pxd.y() == Catch::Approx(384.0).margin(1e-12));
    }
    CHECK_THROWS_AS(project(Vec3(0, 0, 0), Intrinsics{}), BehindCameraError);
    CHECK_THROWS_AS(project(Vec3(0.1, 0.1, -0.5), Intrinsics{}), BehindCameraError);
}

TEST_CASE("distortion vanishes at the principal point", "[camera]") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-0.15, 0.15);
    for (int i = 0; i < 100; ++i) {
        Intrinsics intr;
        intr.w = Vec3(u(rng), u(rng), u(rng));
        const Vec2 px = project(Vec3(0, 0, 0.8), intr);
        CHECK(px.x() == Catch::Approx(intr.cx).margin(1e-12));
        CHECK(px.y() == Catch::Approx(intr.cy).margin(1e-12));
        CHECK((undistort(Vec2(intr.cx, intr.cy), intr) - Vec2(intr.cx, intr.cy)).norm() < 1e-12);
    }
}

TEST_CASE("project_marker composes the four stages", "[camera]") {
    const SystemGeometry geom = make_default_geometry();
    const Intrinsics intr = make_default_intrinsics();

    {
        // Marker at the body origin on the boresight maps to the principal
        // point for the identity attitude.
        SystemGeometry axial;
        axial.r_bn = Vec3(0.0, 0.0, 0.042);
        axial.r_nc = Vec3(0.0, 0.0, 1.27);
        Pattern pat;
        pat.markers = {Vec3::Zero()};
        pat.marker_ids = {1};
        axial.patterns.push_back(pat);
        const Vec2 px = project_marker(axial, intr, RotationParams(), 0, 0);
        CHECK(px.x() == Catch::Approx(intr.cx).margin(1e-9));
        CHECK(px.y() == Catch::Approx(intr.cy).margin(1e-9));
    }

    std::mt19937_64 rng(24);
    for (int i = 0; i < 50; ++i) {
        const RotationParams pose = sample_pose(20.0, rng);
        for (int k = 0; k < static_cast<int>(geom.patterns.size()); ++k) {
            for (int m = 0; m < static_cast<int>(geom.patterns[k].markers.size()); ++m) {
                const Vec3 r_ib = marker_body_coords(geom, k, m);
                const Vec3 r_in =
                    body_to_inertial(r_ib, geom.r_bn, quat_to_matrix(params_to_quat(pose)));
                const Vec2 manual = project(inertial_to_camera(r_in, geom), intr);
                const Vec2 composed = project_marker(geom, intr, pose, k, m);
                CHECK((manual - composed).norm() < 1e-9);
                CHECK(composed.allFinite());
            }
        }
    }
}

TEST_CASE("attitude perturbation moves pixels by the lever-arm ratio", "[camera]") {
    const SystemGeometry geom = make_default_geometry();
    const Intrinsics intr = make_default_intrinsics();
    // A 1e-6 rad third-axis rotation shifts a rim marker by about
    // f * (lever / depth) * 1e-6 pixels.
    const RotationParams nominal;
    const UnitQuaternion q_pert = compose(params_to_quat(nominal), axis_quat(2, 1e-6));
    const RotationParams perturbed = quat_to_params(q_pert);
    const Vec2 before = project_marker(geom, intr, nominal, 0, 4);  // reference LED
    const Vec2 after = project_marker(geom, intr, perturbed, 0, 4);
    const double lever = marker_body_coords(geom, 0, 4).head<2>().norm();
    const double depth = geom.r_nc.z() - geom.r_bn.z() - marker_body_coords(geom, 0, 4).z();
    const double expected = intr.fx * (lever / depth) * 1e-6;
    CHECK((after - before).norm() == Catch::Approx(expected).epsilon(0.05));
}

TEST_CASE("undistort inverts the distortion", "[camera]") {
    {
        Intrinsics intr;
        const Vec2 px(1500.0, 300.0);
        CHECK((undistort(px, intr) - px).norm() < 1e-12);  // identity at w = 0
    }
    std::mt19937_64 rng(25);
    std::uniform_real_distribution<double> uw(-0.15, 0.15);
    std::uniform_real_distribution<double> ux(0.0, 2048.0);
    std::uniform_real_distribution<double> uy(0.0, 1536.0);
    for (int i = 0; i < 1000; ++i) {
        Intrinsics intr;
        intr.w = Vec3(uw(rng), uw(rng), uw(rng));
        // Distort a point whose undistorted position is in frame, then invert.
        const Vec2 target(ux(rng), uy(rng));
        const Vec2 r_nu((target.x() - intr.cx) / intr.fx, (target.y() - intr.cy) / intr.fy);
        const Vec2 distorted = project(Vec3(r_nu.x(), r_nu.y(), 1.0), intr);
        CHECK((undistort(distorted, intr) - target).norm() < 1e-9);
    }
}

TEST_CASE("system config units convert to meters", "[camera]") {
    Json j;
    j["intrinsics"] = {{"fx", 1000.0}, {"fy", 1000.0}, {"cx", 512.0}, {"cy", 384.0},
                       {"w", {0.0, 0.0, 0.0}}};
    j["geometry"]["r_bn_mm"] = {0.0, 0.0, 42.0};
    j["geometry"]["r_nc_cm"] = {0.0, 0.0, 127.0};
    j["geometry"]["patterns"] = Json::array();
    Json p0;
    p0["r_skb_m"] = {0.0, 0.0, 0.0};
    p0["p_bsk"] = {1.0, 0.0, 0.0};
    p0["markers_mm"] = {{100.0, 0.0, 0.0}, {0.0, 100.0, 0.0}, {-100.0, 0.0, 0.0},
                        {0.0, -100.0, 0.0}};
    j["geometry"]["patterns"].push_back(p0);

    const SystemConfig cfg = parse_system_config(j);
    CHECK((cfg.geometry.r_bn - Vec3(0.0, 0.0, 0.042)).norm() < 1e-15);
    CHECK((cfg.geometry.r_nc - Vec3(0.0, 0.0, 1.27)).norm() < 1e-15);
    CHECK((cfg.geometry.patterns[0].markers[0] - Vec3(0.1, 0.0, 0.0)).norm() < 1e-15);
    CHECK(cfg.geometry.patterns[0].marker_ids == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("config loader rejects a non-identity pattern 0", "[camera]") {
    Json j;
    j["intrinsics"] = {{"fx", 1000.0}, {"fy", 1000.0}, {"cx", 512.0}, {"cy", 384.0},
                       {"w", {0.0, 0.0, 0.0}}};
    j["geometry"]["r_bn_m"] = {0.0, 0.0, 0.0};
    j["geometry"]["r_nc_m"] = {0.0, 0.0, 1.27};
    Json p0;
    p0["r_skb_m"] = {0.1, 0.0, 0.0};  // must be zero for pattern 0
    p0["p_bsk"] = {1.0, 0.0, 0.0};
    p0["markers_m"] = {{0.1, 0.0, 0.0}};
    j["geometry"]["patterns"] = Json::array({p0});
    CHECK_THROWS_AS(parse_system_config(j), ConfigError);

    j["geometry"]["patterns"][0]["r_skb_m"] = {0.0, 0.0, 0.0};
    j["geometry"]["patterns"][0]["p_bsk"] = {0.0, 0.0, 0.0};  // non-identity rotation
    CHECK_THROWS_AS(parse_system_config(j), ConfigError);
}

TEST_CASE("config errors name the offending key", "[camera]") {
    Json j;
    j["geometry"]["r_bn_m"] = {0.0, 0.0, 0.0};
    try {
        parse_system_config(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("intrinsics") != std::string::npos);
    }
}

TEST_CASE("default config round trips through save and load", "[camera]") {
    const SystemGeometry geom = make_default_geometry();
    const Intrinsics intr = make_default_intrinsics();
    const std::string path = "/tmp/gts_test_config_roundtrip.json";
    save_system_config(path, geom, intr);
    const SystemConfig cfg = load_system_config(path);
    CHECK(cfg.geometry.marker_count() == geom.marker_count());
    CHECK((cfg.geometry.r_bn - geom.r_bn).norm() < 1e-15);
    CHECK((cfg.geometry.r_nc - geom.r_nc).norm() < 1e-15);
    for (size_t k = 0; k < geom.patterns.size(); ++k) {
        CHECK((cfg.geometry.patterns[k].r_skb - geom.patterns[k].r_skb).norm() < 1e-15);
        for (size_t m = 0; m < geom.patterns[k].markers.size(); ++m)
            CHECK((cfg.geometry.patterns[k].markers[m] - geom.patterns[k].markers[m]).norm() <
                  1e-15);
    }
    CHECK(cfg.intrinsics.fx == intr.fx);
    std::remove(path.c_str());
}
