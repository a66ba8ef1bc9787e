// Persistent file interfaces: JSON system configs and results, CSV streams
// for observations / poses / attitudes / campaign reports, binary PGM frames
// (in image.hpp), and run manifests. All writes are atomic (temp + rename)
// and byte-stable: no timestamps, fixed key order, shortest-round-trip float
// formatting.
#pragma once

#include "gts/calibrator.hpp"
#include "gts/montecarlo.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gts {

using Json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Low-level file helpers

/// Write-temp-then-rename so readers never observe a partial file.
inline void atomic_write_file(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("failed writing " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in && !in.eof()) throw IoError("failed reading " + path);
    return ss.str();
}

/// FNV-1a 64-bit hash, hex-encoded; used as the content hash in manifests.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Shortest decimal that round-trips to the same double (what JSON emits),
/// so CSV and JSON agree and repeated runs are byte-identical.
inline std::string format_double(double v) {
    return Json(v).dump();
}

// ---------------------------------------------------------------------------
// System configuration (JSON)

namespace detail {

/// Read a 3-vector given in meters, millimeters, or centimeters; exactly one
/// of key_m / key_mm / key_cm must be present.
inline Vec3 read_length_vec3(const Json& j, const std::string& key) {
    const struct { const char* suffix; double scale; } units[] = {
        {"_m", 1.0}, {"_mm", 1e-3}, {"_cm", 1e-2}};
    const Json* found = nullptr;
    double scale = 1.0;
    std::string found_key;
    for (const auto& u : units) {
        const std::string k = key + u.suffix;
        if (j.contains(k)) {
            if (found) throw ConfigError("config: both " + found_key + " and " + k + " given");
            found = &j.at(k);
            scale = u.scale;
            found_key = k;
        }
    }
    if (!found) throw ConfigError("config: missing key " + key + "_m (or _mm/_cm)");
    if (!found->is_array() || found->size() != 3)
        throw ConfigError("config: " + found_key + " must be a 3-element array");
    return Vec3((*found)[0].get<double>(), (*found)[1].get<double>(),
                (*found)[2].get<double>()) * scale;
}

inline double marker_scale(const Json& pat, std::string& key_out) {
    const struct { const char* key; double scale; } units[] = {
        {"markers_m", 1.0}, {"markers_mm", 1e-3}, {"markers_cm", 1e-2}};
    const char* found = nullptr;
    double scale = 1.0;
    for (const auto& u : units) {
        if (pat.contains(u.key)) {
            if (found)
                throw ConfigError(std::string("config: both ") + found + " and " + u.key +
                                  " given");
            found = u.key;
            scale = u.scale;
        }
    }
    if (!found) throw ConfigError("config: pattern missing markers_m (or _mm/_cm)");
    key_out = found;
    return scale;
}

}  // namespace detail

struct SystemConfig {
    SystemGeometry geometry;
    Intrinsics intrinsics;
};

/// Parse and validate a system configuration object. Marker ids are assigned
/// sequentially (1, 2, ...) in declaration order.
inline SystemConfig parse_system_config(const Json& j) {
    SystemConfig cfg;
    if (!j.contains("intrinsics")) throw ConfigError("config: missing key intrinsics");
    if (!j.contains("geometry")) throw ConfigError("config: missing key geometry");
    const Json& ji = j.at("intrinsics");
    for (const char* k : {"fx", "fy", "cx", "cy", "w"})
        if (!ji.contains(k)) throw ConfigError(std::string("config: missing key intrinsics.") + k);
    cfg.intrinsics.fx = ji.at("fx").get<double>();
    cfg.intrinsics.fy = ji.at("fy").get<double>();
    cfg.intrinsics.cx = ji.at("cx").get<double>();
    cfg.intrinsics.cy = ji.at("cy").get<double>();
    if (!ji.at("w").is_array() || ji.at("w").size() != 3)
        throw ConfigError("config: intrinsics.w must be a 3-element array");
    for (int i = 0; i < 3; ++i) cfg.intrinsics.w[i] = ji.at("w")[i].get<double>();
    if (cfg.intrinsics.fx <= 0.0 || cfg.intrinsics.fy <= 0.0)
        throw ConfigError("config: intrinsics.fx/fy must be positive");

    const Json& jg = j.at("geometry");
    cfg.geometry.r_bn = detail::read_length_vec3(jg, "r_bn");
    cfg.geometry.r_nc = detail::read_length_vec3(jg, "r_nc");
    if (!jg.contains("patterns") || !jg.at("patterns").is_array() || jg.at("patterns").empty())
        throw ConfigError("config: geometry.patterns must be a non-empty array");

    int next_id = 1;
    for (size_t k = 0; k < jg.at("patterns").size(); ++k) {
        const Json& jp = jg.at("patterns")[k];
        Pattern pat;
        pat.r_skb = detail::read_length_vec3(jp, "r_skb");
        if (!jp.contains("p_bsk") || !jp.at("p_bsk").is_array() || jp.at("p_bsk").size() != 3)
            throw ConfigError("config: pattern p_bsk must be a 3-element array");
        for (int i = 0; i < 3; ++i) pat.p_bsk.p(i) = jp.at("p_bsk")[i].get<double>();
        std::string mkey;
        const double scale = detail::marker_scale(jp, mkey);
        for (const auto& jm : jp.at(mkey)) {
            if (!jm.is_array() || jm.size() != 3)
                throw ConfigError("config: " + mkey + " entries must be 3-element arrays");
            pat.markers.push_back(
                Vec3(jm[0].get<double>(), jm[1].get<double>(), jm[2].get<double>()) * scale);
            pat.marker_ids.push_back(next_id++);
        }
        if (pat.markers.empty())
            throw ConfigError("config: pattern " + std::to_string(k) + " has no markers");
        if (k == 0 && (pat.r_skb.norm() > 0.0 ||
                       (pat.p_bsk.p - Vec3(1, 0, 0)).norm() > 0.0))
            throw ConfigError(
                "config: pattern 0 defines the body frame and must have r_skb = 0 "
                "and identity p_bsk = [1, 0, 0]");
        cfg.geometry.patterns.push_back(std::move(pat));
    }
    return cfg;
}

inline Json system_config_json(const SystemGeometry& geom, const Intrinsics& intr) {
    Json j;
    j["intrinsics"] = {{"fx", intr.fx}, {"fy", intr.fy},
                       {"cx", intr.cx}, {"cy", intr.cy},
                       {"w", {intr.w[0], intr.w[1], intr.w[2]}}};
    Json jg;
    jg["r_bn_m"] = {geom.r_bn.x(), geom.r_bn.y(), geom.r_bn.z()};
    jg["r_nc_m"] = {geom.r_nc.x(), geom.r_nc.y(), geom.r_nc.z()};
    jg["patterns"] = Json::array();
    for (const auto& pat : geom.patterns) {
        Json jp;
        jp["r_skb_m"] = {pat.r_skb.x(), pat.r_skb.y(), pat.r_skb.z()};
        jp["p_bsk"] = {pat.p_bsk.p(0), pat.p_bsk.p(1), pat.p_bsk.p(2)};
        jp["markers_m"] = Json::array();
        for (const auto& m : pat.markers) jp["markers_m"].push_back({m.x(), m.y(), m.z()});
        jg["patterns"].push_back(std::move(jp));
    }
    j["geometry"] = std::move(jg);
    return j;
}

inline SystemConfig load_system_config(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    try {
        return parse_system_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline void save_system_config(const std::string& path, const SystemGeometry& geom,
                               const Intrinsics& intr) {
    atomic_write_file(path, system_config_json(geom, intr).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV streams

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
}

inline double parse_double_field(const std::string& s, const std::string& ctx) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw IoError(ctx + ": cannot parse number '" + s + "'");
    }
}

inline long parse_int_field(const std::string& s, const std::string& ctx) {
    try {
        size_t pos = 0;
        const long v = std::stol(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw IoError(ctx + ": cannot parse integer '" + s + "'");
    }
}

/// Rows of a CSV file with the exact expected header, split into fields.
inline std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                                      const std::string& header) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) return {};  // empty file == no rows
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header)
        throw IoError(path + ": expected header '" + header + "', got '" + line + "'");
    const size_t nfields = split_csv_line(header).size();
    std::vector<std::vector<std::string>> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != nfields)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(nfields) + " fields, got " +
                          std::to_string(fields.size()));
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace detail

inline constexpr const char* kObservationsHeader = "frame_id,marker_id,u_px,v_px";
inline constexpr const char* kPosesHeader = "frame_id,p1,p2,p3";
inline constexpr const char* kAttitudesHeader =
    "frame_id,p1,p2,p3,qw,qx,qy,qz,residual_sq_px2,iterations,converged";
inline constexpr const char* kCampaignHeader =
    "trial,sigma_i_px,sigma_p_mm,r2_px2,sigma_yaw_as,sigma_pitch_as,sigma_roll_as,"
    "ratio_yaw,ratio_pitch,ratio_roll,converged";

/// Observations grouped by frame id, frames in order of first appearance.
inline std::vector<ObservationSet> read_observations(const std::string& path) {
    std::vector<ObservationSet> frames;
    std::map<long, size_t> index;
    for (const auto& row : detail::read_csv(path, kObservationsHeader)) {
        const long fid = detail::parse_int_field(row[0], path);
        auto [it, inserted] = index.try_emplace(fid, frames.size());
        if (inserted) {
            frames.emplace_back();
            frames.back().frame_id = static_cast<int>(fid);
        }
        frames[it->second].entries.push_back(
            {static_cast<int>(detail::parse_int_field(row[1], path)),
             Vec2(detail::parse_double_field(row[2], path),
                  detail::parse_double_field(row[3], path))});
    }
    return frames;
}

inline std::string observations_csv(const std::vector<ObservationSet>& frames) {
    std::string out = std::string(kObservationsHeader) + "\n";
    for (const auto& f : frames)
        for (const auto& e : f.entries)
            out += std::to_string(f.frame_id) + "," + std::to_string(e.marker_id) + "," +
                   format_double(e.pixel.x()) + "," + format_double(e.pixel.y()) + "\n";
    return out;
}

struct PoseRow {
    int frame_id;
    RotationParams p_nb;
};

inline std::vector<PoseRow> read_poses(const std::string& path) {
    std::vector<PoseRow> rows;
    for (const auto& row : detail::read_csv(path, kPosesHeader))
        rows.push_back({static_cast<int>(detail::parse_int_field(row[0], path)),
                        RotationParams(detail::parse_double_field(row[1], path),
                                       detail::parse_double_field(row[2], path),
                                       detail::parse_double_field(row[3], path))});
    return rows;
}

inline std::string poses_csv(const std::vector<PoseRow>& rows) {
    std::string out = std::string(kPosesHeader) + "\n";
    for (const auto& r : rows)
        out += std::to_string(r.frame_id) + "," + format_double(r.p_nb.p(0)) + "," +
               format_double(r.p_nb.p(1)) + "," + format_double(r.p_nb.p(2)) + "\n";
    return out;
}

struct AttitudeRow {
    int frame_id;
    AttitudeSolution sol;
};

inline std::string attitudes_csv(const std::vector<AttitudeRow>& rows) {
    std::string out = std::string(kAttitudesHeader) + "\n";
    for (const auto& r : rows) {
        const Vec4 q = r.sol.q_nb.coeffs();
        out += std::to_string(r.frame_id) + "," + format_double(r.sol.p_nb.p(0)) + "," +
               format_double(r.sol.p_nb.p(1)) + "," + format_double(r.sol.p_nb.p(2)) + "," +
               format_double(q(0)) + "," + format_double(q(1)) + "," + format_double(q(2)) +
               "," + format_double(q(3)) + "," + format_double(r.sol.residual_sq) + "," +
               std::to_string(r.sol.iterations) + "," + (r.sol.converged ? "1" : "0") + "\n";
    }
    return out;
}

inline std::string campaign_csv(const std::vector<TrialReport>& reports) {
    std::string out = std::string(kCampaignHeader) + "\n";
    for (const auto& r : reports)
        out += std::to_string(r.trial) + "," + format_double(r.sigma_i_px) + "," +
               format_double(r.sigma_p_mm) + "," + format_double(r.r2_px2) + "," +
               format_double(r.sigma_yaw_as) + "," + format_double(r.sigma_pitch_as) + "," +
               format_double(r.sigma_roll_as) + "," + format_double(r.ratio_yaw) + "," +
               format_double(r.ratio_pitch) + "," + format_double(r.ratio_roll) + "," +
               (r.converged ? "1" : "0") + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Calibration result (JSON)

inline Json calibration_result_json(const CalibrationResult& res, const SystemGeometry& base,
                                    bool coplanar) {
    Json j;
    j["system"] = system_config_json(res.v.geometry(base), res.v.intrinsics());
    j["coplanar"] = coplanar;
    j["converged"] = res.converged;
    j["iterations"] = res.iterations;
    j["r2_px2"] = res.r2;
    j["sigma2_hat_px2"] = res.sigma2_hat;
    j["residual_history_px2"] = res.residual_history;
    Json ja = Json::array();
    for (const auto& a : res.v.attitudes) ja.push_back({a.p(0), a.p(1), a.p(2)});
    j["attitudes_p"] = std::move(ja);
    if (res.sigma.size() > 0) {
        // Per-parameter 1-sigma in packed order: fx, fy, cx, cy, w1..w3,
        // r_bn, r_nc, per-pattern offsets/rotations, per-image attitudes.
        j["param_sigmas"] = std::vector<double>(res.sigma.data(),
                                                res.sigma.data() + res.sigma.size());
    }
    return j;
}

/// A calibration result file embeds a full system config under "system"; a
/// plain config file is also accepted wherever a calibrated system is needed.
inline SystemConfig load_system_or_result(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    try {
        return parse_system_config(j.contains("system") ? j.at("system") : j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Campaign spec (JSON)

/// Fill an McSpec from JSON; unknown keys are rejected to catch typos. The
/// optional "system" object overrides the default nominal layout.
inline McSpec parse_mc_spec(const Json& j) {
    McSpec spec;
    for (const auto& [key, value] : j.items()) {
        if (key == "trials") spec.trials = value.get<int>();
        else if (key == "seed") spec.seed = value.get<std::uint64_t>();
        else if (key == "n_cal") spec.n_cal = value.get<int>();
        else if (key == "n_eval") spec.n_eval = value.get<int>();
        else if (key == "sigma_i_px") {
            spec.sigma_i_lo_px = value.at(0).get<double>();
            spec.sigma_i_hi_px = value.at(1).get<double>();
        } else if (key == "sigma_p_mm") {
            spec.sigma_p_lo_mm = value.at(0).get<double>();
            spec.sigma_p_hi_mm = value.at(1).get<double>();
        } else if (key == "pitch_roll_limit_deg") {
            spec.pitch_roll_limit_deg = value.get<double>();
        } else if (key == "mode") {
            const std::string mode = value.get<std::string>();
            if (mode == "direct-centroid") spec.full_image_mode = false;
            else if (mode == "full-image") spec.full_image_mode = true;
            else throw ConfigError("spec: mode must be 'direct-centroid' or 'full-image'");
        } else if (key == "system") {
            const SystemConfig cfg = parse_system_config(value);
            spec.nominal_geom = cfg.geometry;
            spec.nominal_intr = cfg.intrinsics;
        } else if (key == "ranges") {
            for (const auto& [rk, rv] : value.items()) {
                if (rk == "focal_px") spec.ranges.focal_px = rv.get<double>();
                else if (rk == "principal_px") spec.ranges.principal_px = rv.get<double>();
                else if (rk == "distortion") spec.ranges.distortion = rv.get<double>();
                else if (rk == "r_bn_m") spec.ranges.r_bn_m = rv.get<double>();
                else if (rk == "r_nc_m") spec.ranges.r_nc_m = rv.get<double>();
                else if (rk == "r_skb_xy_m") spec.ranges.r_skb_xy_m = rv.get<double>();
                else if (rk == "p_bsk_1") spec.ranges.p_bsk_1 = rv.get<double>();
                else throw ConfigError("spec: unknown key ranges." + rk);
            }
        } else {
            throw ConfigError("spec: unknown key " + key);
        }
    }
    if (spec.trials < 1) throw ConfigError("spec: trials must be >= 1");
    if (spec.sigma_i_lo_px < 0.0 || spec.sigma_i_hi_px < spec.sigma_i_lo_px ||
        spec.sigma_p_lo_mm < 0.0 || spec.sigma_p_hi_mm < spec.sigma_p_lo_mm)
        throw ConfigError("spec: noise ranges must be non-negative and ordered");
    const int nm = spec.nominal_geom.marker_count();
    const int np = static_cast<int>(spec.nominal_geom.patterns.size()) - 1;
    if (nm < 4) throw ConfigError("spec: system needs at least 4 markers");
    const int min_ni = (13 + 3 * np + 2 * nm - 4) / (2 * nm - 3);  // smallest Ni with m >= p
    if (spec.n_cal < min_ni)
        throw ConfigError("spec: n_cal = " + std::to_string(spec.n_cal) +
                          " leaves fewer measurements than parameters (need >= " +
                          std::to_string(min_ni) + ")");
    return spec;
}

inline McSpec load_mc_spec(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    try {
        return parse_mc_spec(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
    std::string command;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;
    std::string spec_hash;  // FNV-1a of the primary input's bytes
};

/// Provenance record written alongside every command's outputs. Contains no
/// timestamps so reruns are byte-identical.
inline void write_manifest(const std::string& path, const RunManifest& m) {
    Json j;
    j["tool_version"] = kToolVersion;
    j["command"] = m.command;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    j["seed"] = m.seed;
    j["spec_hash"] = m.spec_hash;
    atomic_write_file(path, j.dump(2) + "\n");
}

}  // namespace gts
