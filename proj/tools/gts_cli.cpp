// Command-line front end: render, centroid, calibrate, estimate, simulate.
// Every command is deterministic given its arguments and seed; all file
// writes are atomic and outputs carry a provenance manifest.
//
// Exit codes: 0 success, 2 schema/argument error, 3 numerical failure,
// 4 I/O error.

#include "gts/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitSchema = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

std::string frame_filename(int frame_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d.pgm", frame_id);
    return buf;
}

// --- render ---------------------------------------------------------------

struct RenderArgs {
    std::string config, poses, out_dir;
    std::uint64_t seed = 0;
};

int cmd_render(const RenderArgs& args) {
    const gts::SystemConfig cfg = gts::load_system_config(args.config);
    const auto poses = gts::read_poses(args.poses);
    const gts::RenderOptions opts;

    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw gts::IoError("cannot create " + args.out_dir + ": " + ec.message());

    std::vector<std::string> outputs;
    for (const auto& row : poses) {
        auto rng = gts::detail::trial_rng(args.seed, static_cast<std::uint64_t>(row.frame_id));
        const gts::Frame frame =
            gts::render_frame(cfg.geometry, cfg.intrinsics, row.p_nb, opts, rng);
        const std::string path = (fs::path(args.out_dir) / frame_filename(row.frame_id)).string();
        try {
            gts::write_pgm(path, frame);
        } catch (const std::runtime_error& e) {
            throw gts::IoError(e.what());
        }
        outputs.push_back(path);
    }

    gts::RunManifest manifest;
    manifest.command = "render";
    manifest.inputs = {args.config, args.poses};
    manifest.outputs = outputs;
    manifest.seed = args.seed;
    manifest.spec_hash = gts::fnv1a_hex(gts::read_file(args.config));
    gts::write_manifest((fs::path(args.out_dir) / "manifest.json").string(), manifest);
    return kExitOk;
}

// --- centroid ---------------------------------------------------------------

struct CentroidArgs {
    std::string frames_dir, config, out_csv;
};

int cmd_centroid(const CentroidArgs& args) {
    const gts::SystemConfig cfg = gts::load_system_config(args.config);
    const gts::MarkerLayout layout = gts::make_layout(cfg.geometry);

    std::vector<std::string> paths;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(args.frames_dir, ec)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 4 && name.substr(name.size() - 4) == ".pgm")
            paths.push_back(entry.path().string());
    }
    if (ec) throw gts::IoError("cannot list " + args.frames_dir + ": " + ec.message());
    std::sort(paths.begin(), paths.end());

    std::vector<gts::ObservationSet> frames;
    int flagged = 0;
    for (const auto& path : paths) {
        // Frame id: trailing digit run of the stem (render's frame_NNNNNN.pgm).
        const std::string stem = fs::path(path).stem().string();
        size_t digits = 0;
        while (digits < stem.size() &&
               std::isdigit(static_cast<unsigned char>(stem[stem.size() - 1 - digits])))
            ++digits;
        if (digits == 0) {
            std::cerr << "centroid: skipping " << path << ": no frame id in filename\n";
            ++flagged;
            continue;
        }
        const int frame_id = std::stoi(stem.substr(stem.size() - digits));

        gts::Frame frame;
        try {
            frame = gts::read_pgm(path);
        } catch (const std::runtime_error& e) {
            throw gts::IoError(e.what());
        }
        const auto blobs = gts::extract_blobs(frame);
        std::vector<gts::Vec2> centroids;
        centroids.reserve(blobs.size());
        for (const auto& b : blobs) centroids.push_back(b.centroid);
        try {
            frames.push_back(gts::identify_markers(centroids, layout, frame_id));
        } catch (const gts::IdentificationError& e) {
            std::cerr << "centroid: frame " << frame_id << " flagged: " << e.what() << "\n";
            ++flagged;
        }
    }
    if (flagged > 0)
        std::cerr << "centroid: " << flagged << " frame(s) flagged, "
                  << frames.size() << " processed\n";

    gts::atomic_write_file(args.out_csv, gts::observations_csv(frames));
    gts::RunManifest manifest;
    manifest.command = "centroid";
    manifest.inputs = {args.frames_dir, args.config};
    manifest.outputs = {args.out_csv};
    manifest.spec_hash = gts::fnv1a_hex(gts::read_file(args.config));
    gts::write_manifest(args.out_csv + ".manifest.json", manifest);
    return kExitOk;
}

// --- calibrate ----------------------------------------------------------------

struct CalibrateArgs {
    std::string config, obs, out_json;
    bool full = false;
};

int cmd_calibrate(const CalibrateArgs& args) {
    const gts::SystemConfig cfg = gts::load_system_config(args.config);
    const auto frames = gts::read_observations(args.obs);
    if (frames.empty()) throw gts::ConfigError(args.obs + ": no observation frames");

    const gts::ParameterVector guess =
        gts::initialize_guess(frames, cfg.geometry, cfg.intrinsics);
    gts::CalibrationOptions opts;
    opts.coplanar = !args.full;
    const gts::CalibrationResult result = gts::calibrate(guess, cfg.geometry, frames, opts);

    gts::atomic_write_file(
        args.out_json,
        gts::calibration_result_json(result, cfg.geometry, opts.coplanar).dump(2) + "\n");
    gts::RunManifest manifest;
    manifest.command = "calibrate";
    manifest.inputs = {args.config, args.obs};
    manifest.outputs = {args.out_json};
    manifest.spec_hash = gts::fnv1a_hex(gts::read_file(args.config));
    gts::write_manifest(args.out_json + ".manifest.json", manifest);

    if (!result.converged) {
        std::cerr << "calibrate: did not converge within the iteration budget "
                  << "(result file written)\n";
        return kExitNumerical;
    }
    std::cout << "calibrate: converged in " << result.iterations
              << " iteration(s), r2 = " << result.r2 << " px^2\n";
    return kExitOk;
}

// --- estimate ---------------------------------------------------------------

struct EstimateArgs {
    std::string calibration, obs, out_csv;
    bool warm_start = false;
};

int cmd_estimate(const EstimateArgs& args) {
    const gts::SystemConfig cfg = gts::load_system_or_result(args.calibration);
    const auto frames = gts::read_observations(args.obs);

    std::vector<gts::AttitudeRow> rows;
    bool have_prev = false;
    gts::RotationParams prev;
    int skipped = 0;
    for (const auto& frame : frames) {
        try {
            const gts::RotationParams init =
                (args.warm_start && have_prev)
                    ? prev
                    : gts::cold_start_attitude(cfg.geometry, cfg.intrinsics, frame);
            const gts::AttitudeSolution sol =
                gts::solve_attitude(cfg.geometry, cfg.intrinsics, frame, init);
            rows.push_back({frame.frame_id, sol});
            if (sol.converged) {
                prev = sol.p_nb;
                have_prev = true;
            }
        } catch (const std::runtime_error& e) {
            std::cerr << "estimate: frame " << frame.frame_id << " skipped: " << e.what()
                      << "\n";
            ++skipped;
        }
    }
    if (skipped > 0)
        std::cerr << "estimate: " << skipped << " frame(s) skipped, " << rows.size()
                  << " solved\n";

    gts::atomic_write_file(args.out_csv, gts::attitudes_csv(rows));
    gts::RunManifest manifest;
    manifest.command = "estimate";
    manifest.inputs = {args.calibration, args.obs};
    manifest.outputs = {args.out_csv};
    manifest.spec_hash = gts::fnv1a_hex(gts::read_file(args.calibration));
    gts::write_manifest(args.out_csv + ".manifest.json", manifest);
    return kExitOk;
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::string spec, out_csv;
    int trials = -1;
    long long seed = -1;
    int threads = 1;
};

int cmd_simulate(const SimulateArgs& args) {
    gts::McSpec spec = args.spec.empty() ? gts::McSpec{} : gts::load_mc_spec(args.spec);
    if (args.trials >= 0) spec.trials = args.trials;
    if (args.seed >= 0) spec.seed = static_cast<std::uint64_t>(args.seed);
    if (spec.trials < 1) throw gts::ConfigError("simulate: trials must be >= 1");

    const auto reports = gts::run_campaign(spec, args.threads);
    gts::atomic_write_file(args.out_csv, gts::campaign_csv(reports));

    gts::RunManifest manifest;
    manifest.command = "simulate";
    if (!args.spec.empty()) manifest.inputs = {args.spec};
    manifest.outputs = {args.out_csv};
    manifest.seed = spec.seed;
    manifest.spec_hash =
        args.spec.empty() ? gts::fnv1a_hex("") : gts::fnv1a_hex(gts::read_file(args.spec));
    gts::write_manifest(args.out_csv + ".manifest.json", manifest);

    int failed = 0;
    for (const auto& r : reports)
        if (!r.converged) ++failed;
    if (failed > 0)
        std::cerr << "simulate: " << failed << " of " << reports.size()
                  << " trial(s) did not converge (flagged in the CSV)\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monocular attitude ground-truth toolkit"};
    app.require_subcommand(1);

    RenderArgs render_args;
    auto* render = app.add_subcommand("render", "Render synthetic PGM frames for a pose list");
    render->add_option("--config", render_args.config, "System configuration JSON")
        ->required();
    render->add_option("--poses", render_args.poses, "Poses CSV (frame_id,p1,p2,p3)")
        ->required();
    render->add_option("--out", render_args.out_dir, "Output directory")->required();
    render->add_option("--seed", render_args.seed, "Read-noise RNG seed")->default_val(0);

    CentroidArgs centroid_args;
    auto* centroid =
        app.add_subcommand("centroid", "Extract and identify marker centroids from frames");
    centroid->add_option("--frames", centroid_args.frames_dir, "Directory of PGM frames")
        ->required();
    centroid->add_option("--config", centroid_args.config, "System configuration JSON")
        ->required();
    centroid->add_option("--out", centroid_args.out_csv, "Output observations CSV")
        ->required();

    CalibrateArgs calibrate_args;
    auto* calibrate = app.add_subcommand("calibrate", "Batch system calibration");
    calibrate->add_option("--config", calibrate_args.config, "Initial-guess system JSON")
        ->required();
    calibrate->add_option("--obs", calibrate_args.obs, "Observations CSV")->required();
    calibrate->add_option("--out", calibrate_args.out_json, "Calibration result JSON")
        ->required();
    calibrate->add_flag("--full", calibrate_args.full,
                        "Estimate the full non-coplanar parameter set");
    calibrate->add_flag("--coplanar{false}", calibrate_args.full,
                        "Coplanar parameter reduction (default)");

    EstimateArgs estimate_args;
    auto* estimate = app.add_subcommand("estimate", "Per-frame attitude estimation");
    estimate
        ->add_option("--calibration", estimate_args.calibration,
                     "Calibration result JSON (or plain system config)")
        ->required();
    estimate->add_option("--obs", estimate_args.obs, "Observations CSV")->required();
    estimate->add_option("--out", estimate_args.out_csv, "Output attitudes CSV")->required();
    estimate->add_flag("--warm-start", estimate_args.warm_start,
                       "Initialize each frame from the previous solution");

    SimulateArgs simulate_args;
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo accuracy campaign");
    simulate->add_option("--spec", simulate_args.spec, "Campaign spec JSON (optional)");
    simulate->add_option("--out", simulate_args.out_csv, "Output campaign CSV")->required();
    simulate->add_option("--trials", simulate_args.trials, "Override trial count");
    simulate->add_option("--seed", simulate_args.seed, "Override RNG seed");
    simulate->add_option("--threads", simulate_args.threads, "Worker threads")->default_val(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitSchema;
    }

    try {
        if (render->parsed()) return cmd_render(render_args);
        if (centroid->parsed()) return cmd_centroid(centroid_args);
        if (calibrate->parsed()) return cmd_calibrate(calibrate_args);
        if (estimate->parsed()) return cmd_estimate(estimate_args);
        if (simulate->parsed()) return cmd_simulate(simulate_args);
    } catch (const gts::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSchema;
    } catch (const gts::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitSchema;
}
