// Monte Carlo reproduction of the accuracy analysis: random system
// perturbation, virtual calibration over N_i poses, evaluation on additional
// poses, per-axis error statistics, and comparison against the homography
// baseline. Trials use independent deterministic RNG substreams so a campaign
// is a pure function of (spec, seed) at any parallelism.
#pragma once

#include "gts/calibrator.hpp"
#include "gts/image.hpp"

#include <atomic>
#include <cstdint>
#include <optional>
#include <random>
#include <thread>
#include <vector>

namespace gts {

/// Representative 4-pattern LED layout: one arc-shaped board per quadrant
/// near the platform rim, five markers each. Placing the markers at a large
/// radius maximizes the lever arm of every observation, which sets the
/// attitude accuracy; the slightly irregular arc angles break the quadrant
/// symmetry so the constellation ordering is unambiguous. The first board
/// trades its middle marker for the off-ring reference used by
/// identification. Marker ids are 1..20 in enumeration order.
inline SystemGeometry make_default_geometry() {
    SystemGeometry geom;
    geom.r_bn = Vec3(0.0, 0.0, 0.042);
    geom.r_nc = Vec3(0.0, 0.0, 1.27);

    // Radii are sized so every marker stays inside the frame over the full
    // pose envelope (pitch/roll up to 20 deg, yaw free): with the marker
    // plane 0.120 m above the center of rotation, the in-frame limit is
    // 0.244 m at the envelope corners.
    //
    // Identification sorts markers by their distance from the reference LED,
    // so azimuths and radii are staggered until all nineteen distances are
    // pairwise at least 12 mm apart: the two side arcs interleave in
    // distance-from-reference, and the far arc (where chord length is nearly
    // flat in azimuth) staggers its radii instead.
    const double ring = 0.2340;  // nominal arc radius, m
    const double ref = 0.2435;   // reference LED radius, m (always outermost)
    const double deck = 0.078;   // marker deck height above the body origin, m
    auto polar = [deck](double radius, double deg) {
        const double a = deg * M_PI / 180.0;
        return Vec3(radius * std::cos(a), radius * std::sin(a), deck);
    };

    Pattern body;  // pattern 0: arc around the reference LED, body fixed
    body.markers = {polar(ring, 113.0), polar(ring, 126.0),
                    polar(ring, 148.0), polar(ring, 162.0),
                    polar(ref, 135.0)};
    geom.patterns.push_back(body);

    struct Led {
        double radius, az;
    };
    const struct {
        double center_radius, center_az;
        Led leds[5];
    } boards[3] = {
        {ring, 45.0,
         {{ring, 21.0}, {ring, 33.0}, {ring, 46.0}, {ring, 58.0}, {ring, 70.0}}},
        {ring, 232.0,
         {{ring, 207.0}, {ring, 219.0}, {ring, 232.0}, {ring, 244.0}, {ring, 256.0}}},
        {0.220, 315.0,
         {{0.2009, 290.0}, {0.2174, 302.0}, {0.2335, 315.0}, {0.2271, 327.0},
          {0.2125, 339.0}}},
    };
    for (const auto& b : boards) {
        Pattern pat;
        pat.r_skb = polar(b.center_radius, b.center_az);
        for (const Led& led : b.leds)
            pat.markers.push_back(polar(led.radius, led.az) - pat.r_skb);
        geom.patterns.push_back(pat);
    }

    int id = 1;
    for (auto& pat : geom.patterns)
        for (size_t i = 0; i < pat.markers.size(); ++i) pat.marker_ids.push_back(id++);
    return geom;
}

inline Intrinsics make_default_intrinsics() {
    return Intrinsics{};  // fx = fy = 3478, (cx, cy) = (1024, 768), w = 0
}

/// Uniform sampling half-ranges for the simulated systems.
struct PerturbationRanges {
    double focal_px = 50.0;
    double principal_px = 50.0;
    double distortion = 0.15;
    double r_bn_m = 0.01;
    double r_nc_m = 0.05;
    double r_skb_xy_m = 0.005;
    double p_bsk_1 = 8.73e-3;  // +/- 1 degree about the third axis
};

struct McSpec {
    int trials = 20;
    std::uint64_t seed = 0;
    int n_cal = 350;
    int n_eval = 500;
    double sigma_i_lo_px = 0.115, sigma_i_hi_px = 0.115;
    double sigma_p_lo_mm = 0.0, sigma_p_hi_mm = 0.0;
    double pitch_roll_limit_deg = 20.0;
    bool full_image_mode = false;  // render frames instead of direct centroids
    PerturbationRanges ranges;
    SystemGeometry nominal_geom = make_default_geometry();
    Intrinsics nominal_intr = make_default_intrinsics();
    RenderOptions render;
};

struct TrialReport {
    int trial = 0;
    double sigma_i_px = 0.0;
    double sigma_p_mm = 0.0;
    double r2_px2 = 0.0;
    double sigma2_hat_px2 = 0.0;
    int cal_iterations = 0;
    bool converged = false;
    double sigma_yaw_as = 0.0, sigma_pitch_as = 0.0, sigma_roll_as = 0.0;
    double ratio_yaw = 0.0, ratio_pitch = 0.0, ratio_roll = 0.0;
    double mean_err_as = 0.0, max_err_as = 0.0;
};

inline double rad_to_arcsec(double rad) { return rad * (180.0 / M_PI) * 3600.0; }

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(stream + 1)));
}

inline double sym_uniform(std::mt19937_64& rng, double half_range) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return u(rng) * half_range;  // draw always consumed, for stream stability
}

inline double stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

struct SampledSystem {
    SystemGeometry geom;  // true geometry, including perturbed marker coords
    Intrinsics intr;      // true optics
};

///// True system for one trial: every nominal parameter perturbed uniformly
/// within its half-range, marker body coordinates perturbed with Gaussian
/// sigma_p in all three components.
inline SampledSystem sample_system(const SystemGeometry& nominal_geom,
                                   const Intrinsics& nominal_intr,
                                   const PerturbationRanges& ranges,
                                   double sigma_p_m, std::mt19937_64& rng) {
    using detail::sym_uniform;
    SampledSystem sys{nominal_geom, nominal_intr};
    sys.intr.fx += sym_uniform(rng, ranges.focal_px);
    sys.intr.fy += sym_uniform(rng, ranges.focal_px);
    sys.intr.cx += sym_uniform(rng, ranges.principal_px);
    sys.intr.cy += sym_uniform(rng, ranges.principal_px);
    for (int i = 0; i < 3; ++i) sys.intr.w[i] += sym_uniform(rng, ranges.distortion);
    for (int i = 0; i < 3; ++i) sys.geom.r_bn[i] += sym_uniform(rng, ranges.r_bn_m);
    for (int i = 0; i < 3; ++i) sys.geom.r_nc[i] += sym_uniform(rng, ranges.r_nc_m);
    for (size_t k = 1; k < sys.geom.patterns.size(); ++k) {
        sys.geom.patterns[k].r_skb.x() += sym_uniform(rng, ranges.r_skb_xy_m);
        sys.geom.patterns[k].r_skb.y() += sym_uniform(rng, ranges.r_skb_xy_m);
        sys.geom.patterns[k].p_bsk.p(0) += sym_uniform(rng, ranges.p_bsk_1);
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& pat : sys.geom.patterns)
        for (auto& m : pat.markers)
            for (int i = 0; i < 3; ++i) m[i] += sigma_p_m * gauss(rng);
    return sys;
}

/// Random platform attitude: yaw uniform on [0, 2pi), pitch and roll uniform
/// within the mechanical envelope, composed 3-2-1.
inline RotationParams sample_pose(double pitch_roll_limit_deg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double lim = pitch_roll_limit_deg * M_PI / 180.0;
    const double yaw = 2.0 * M_PI * u01(rng);
    const double pitch = lim * (2.0 * u01(rng) - 1.0);
    const double roll = lim * (2.0 * u01(rng) - 1.0);
    UnitQuaternion q = quat_from_euler321(roll, pitch, yaw);
    if (1.0 + q.v.z() < 1e-9) q = UnitQuaternion(-q.w, -q.v);
    return quat_to_params(q);
}

namespace detail {

/// One synthetic frame: every marker projected through the true system and
/// perturbed with pixel noise sigma_i. Marker body coordinates are
/// additionally redrawn with Gaussian sigma_p for each frame, so positional
/// uncertainty enters the error budget as an independent per-observation
/// disturbance (exchangeable with pixel noise) rather than a fixed bias.
inline ObservationSet observe(const SampledSystem& sys, const RotationParams& pose,
                              double sigma_i_px, double sigma_p_m,
                              std::mt19937_64& rng, int frame_id) {
    ObservationSet obs;
    obs.frame_id = frame_id;
    std::normal_distribution<double> gauss(0.0, 1.0);
    const UnitQuaternion q_nb = params_to_quat(pose);
    for (int k = 0; k < static_cast<int>(sys.geom.patterns.size()); ++k) {
        for (int i = 0; i < static_cast<int>(sys.geom.patterns[k].markers.size()); ++i) {
            Vec3 r_ib = marker_body_coords(sys.geom, k, i);
            for (int c = 0; c < 3; ++c) r_ib[c] += sigma_p_m * gauss(rng);
            const Vec3 r_in = rotate(q_nb, r_ib + sys.geom.r_bn);
            Vec2 px = project(inertial_to_camera(r_in, sys.geom), sys.intr);
            px += sigma_i_px * Vec2(gauss(rng), gauss(rng));
            obs.entries.push_back({sys.geom.patterns[k].marker_ids[i], px});
        }
    }
    return obs;
}

inline ObservationSet observe_rendered(const SampledSystem& sys, const RotationParams& pose,
                                       double sigma_p_m, const RenderOptions& render,
                                       const MarkerLayout& layout,
                                       std::mt19937_64& rng, int frame_id) {
    SystemGeometry geom = sys.geom;
    if (sigma_p_m > 0.0) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (auto& pat : geom.patterns)
            for (auto& m : pat.markers)
                for (int c = 0; c < 3; ++c) m[c] += sigma_p_m * gauss(rng);
    }
    const Frame frame = render_frame(geom, sys.intr, pose, render, rng);
    const auto blobs = extract_blobs(frame);
    std::vector<Vec2> centroids;
    centroids.reserve(blobs.size());
    for (const auto& b : blobs) centroids.push_back(b.centroid);
    return identify_markers(centroids, layout, frame_id);
}

}  // namespace detail

inline TrialReport run_trial(const McSpec& spec, int trial_id) {
    auto rng = detail::trial_rng(spec.seed, static_cast<std::uint64_t>(trial_id));
    TrialReport rep;
    rep.trial = trial_id;

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    rep.sigma_i_px = spec.sigma_i_lo_px + (spec.sigma_i_hi_px - spec.sigma_i_lo_px) * u01(rng);
    rep.sigma_p_mm = spec.sigma_p_lo_mm + (spec.sigma_p_hi_mm - spec.sigma_p_lo_mm) * u01(rng);

    // Table-style parameter deviations are fixed per simulated system;
    // marker positional noise sigma_p is applied per frame inside observe().
    const SampledSystem sys =
        sample_system(spec.nominal_geom, spec.nominal_intr, spec.ranges, 0.0, rng);
    const double sigma_p_m = rep.sigma_p_mm * 1e-3;
    const MarkerLayout layout =
        spec.full_image_mode ? make_layout(spec.nominal_geom) : MarkerLayout{};

    // In full-image mode a frame is unusable when a marker leaves the frame
    // or the constellation ordering is ambiguous at an extreme pose; such
    // frames are dropped, like a real system skipping a failed detection.
    auto observe_or_skip = [&](const RotationParams& pose,
                               int frame_id) -> std::optional<ObservationSet> {
        if (!spec.full_image_mode)
            return detail::observe(sys, pose, rep.sigma_i_px, sigma_p_m, rng, frame_id);
        try {
            return detail::observe_rendered(sys, pose, sigma_p_m, spec.render, layout, rng,
                                            frame_id);
        } catch (const MarkerOutOfFrameError&) {
        } catch (const IdentificationError&) {
        }
        return std::nullopt;
    };

    try {
        // Virtual calibration.
        std::vector<ObservationSet> frames;
        frames.reserve(spec.n_cal);
        for (int j = 0; j < spec.n_cal; ++j) {
            const RotationParams pose = sample_pose(spec.pitch_roll_limit_deg, rng);
            if (auto obs = observe_or_skip(pose, j)) frames.push_back(std::move(*obs));
        }
        const ParameterVector guess =
            initialize_guess(frames, spec.nominal_geom, spec.nominal_intr);
        CalibrationOptions copts;
        copts.coplanar = true;
        copts.compute_covariance = false;
        const CalibrationResult cal = calibrate(guess, spec.nominal_geom, frames, copts);
        rep.r2_px2 = cal.r2;
        rep.sigma2_hat_px2 = cal.sigma2_hat;
        rep.cal_iterations = cal.iterations;
        rep.converged = cal.converged;
        if (!cal.converged) return rep;

        const SystemGeometry cal_geom = cal.v.geometry(spec.nominal_geom);
        const Intrinsics cal_intr = cal.v.intrinsics();
        const PlanarScene true_scene = make_planar_scene(sys.geom);

        std::vector<double> yaw_est, pitch_est, roll_est;
        std::vector<double> yaw_bas, pitch_bas, roll_bas;
        double err_sum = 0.0, err_max = 0.0;
        for (int j = 0; j < spec.n_eval; ++j) {
            const RotationParams pose = sample_pose(spec.pitch_roll_limit_deg, rng);
            const auto maybe_obs = observe_or_skip(pose, j);
            if (!maybe_obs) continue;
            const ObservationSet& obs = *maybe_obs;
            const UnitQuaternion q_true = params_to_quat(pose);

            // Developed method with the calibrated parameters.
            const RotationParams init = cold_start_attitude(cal_geom, cal_intr, obs);
            const AttitudeSolution sol = solve_attitude(cal_geom, cal_intr, obs, init);
            const Euler321 e = euler321_from_quat(compose(q_true.conjugate(), sol.q_nb));
            yaw_est.push_back(e.yaw);
            pitch_est.push_back(e.pitch);
            roll_est.push_back(e.roll);
            const double err = rotation_angle_error(q_true, sol.q_nb);
            err_sum += err;
            err_max = std::max(err_max, err);

            // Baseline with exact knowledge of the true system.
            std::vector<Vec2> pixels;
            pixels.reserve(obs.entries.size());
            for (const auto& o : obs.entries) pixels.push_back(o.pixel);
            const PosePnP pnp = baseline_pose(true_scene.world, pixels, sys.intr);
            const UnitQuaternion q_bas =
                matrix_to_quat(cn_matrix() * quat_to_matrix(pnp.rotation));
            const Euler321 eb = euler321_from_quat(compose(q_true.conjugate(), q_bas));
            yaw_bas.push_back(eb.yaw);
            pitch_bas.push_back(eb.pitch);
            roll_bas.push_back(eb.roll);
        }
        rep.sigma_yaw_as = rad_to_arcsec(detail::stddev(yaw_est));
        rep.sigma_pitch_as = rad_to_arcsec(detail::stddev(pitch_est));
        rep.sigma_roll_as = rad_to_arcsec(detail::stddev(roll_est));
        rep.ratio_yaw = rad_to_arcsec(detail::stddev(yaw_bas)) / rep.sigma_yaw_as;
        rep.ratio_pitch = rad_to_arcsec(detail::stddev(pitch_bas)) / rep.sigma_pitch_as;
        rep.ratio_roll = rad_to_arcsec(detail::stddev(roll_bas)) / rep.sigma_roll_as;
        rep.mean_err_as =
            yaw_est.empty() ? 0.0 : rad_to_arcsec(err_sum / static_cast<double>(yaw_est.size()));
        rep.max_err_as = rad_to_arcsec(err_max);
    } catch (const std::exception&) {
        rep.converged = false;  // recorded, not fatal
    }
    return rep;
}

/// Full campaign; trials are independent and may run on worker threads.
/// Reports come back sorted by trial id regardless of scheduling.
inline std::vector<TrialReport> run_campaign(const McSpec& spec, int threads = 1) {
    std::vector<TrialReport> reports(spec.trials);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int t = next.fetch_add(1); t < spec.trials; t = next.fetch_add(1))
            reports[t] = run_trial(spec, t);
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return reports;
}

}  // namespace gts
