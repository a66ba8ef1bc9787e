// Synthetic frame rendering and the detection chain: thresholded blob
// extraction, weighted-center-of-mass centroiding, and geometric marker
// identification.
//
// Pixel convention: pixel (ix, iy) spans [ix, ix+1) x [iy, iy+1) with center
// (ix + 0.5, iy + 0.5); the renderer and the centroider share it.
#pragma once

#include "gts/camera.hpp"
#include "gts/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gts {

struct MarkerOutOfFrameError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IdentificationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Frame {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // row-major

    std::uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
};

struct RenderOptions {
    int width = 2048;
    int height = 1536;
    double sigma_psf = 0.7;    // Gaussian spot width, pixels
    double peak = 180.0;       // digital counts of a perfectly centered pixel
    // Read noise must keep the dark floor below the detection threshold:
    // at 0.6 counts a background pixel exceeds 4 counts with p ~ 2e-5, so a
    // full frame stays speckle-free and every detected blob is a marker.
    double read_noise = 0.6;   // additive Gaussian, counts
    double background = 2.0;   // counts
};

struct BlobPixel {
    int x, y;
    std::uint8_t intensity;
};

struct Blob {
    std::vector<BlobPixel> pixels;
    Vec2 centroid = Vec2::Zero();
};

/// Intensity-squared weighted center of mass over pixel centers (W_j = I_j).
inline Vec2 wcom_centroid(const Blob& blob) {
    if (blob.pixels.empty())
        throw std::invalid_argument("wcom_centroid: empty blob");
    double wsum = 0.0;
    Vec2 acc = Vec2::Zero();
    for (const auto& p : blob.pixels) {
        const double w = static_cast<double>(p.intensity) * static_cast<double>(p.intensity);
        acc += w * Vec2(p.x + 0.5, p.y + 0.5);
        wsum += w;
    }
    return acc / wsum;
}

/// Gaussian spot integrated analytically per pixel (error-function
/// differences), normalized so a perfectly centered pixel reads `peak`.
inline void render_spot(Frame& frame, const Vec2& center, const RenderOptions& opts,
                        std::vector<double>& accum) {
    const double s = opts.sigma_psf * std::sqrt(2.0);
    const auto cdf_span = [&](double lo, double hi, double mu) {
        return 0.5 * (std::erf((hi - mu) / s) - std::erf((lo - mu) / s));
    };
    const double center_mass = cdf_span(-0.5, 0.5, 0.0);  // centered pixel of unit spot
    const double amp = opts.peak / (center_mass * center_mass);

    const int radius = static_cast<int>(std::ceil(5.0 * opts.sigma_psf)) + 1;
    const int x0 = std::max(0, static_cast<int>(std::floor(center.x())) - radius);
    const int x1 = std::min(frame.width - 1, static_cast<int>(std::floor(center.x())) + radius);
    const int y0 = std::max(0, static_cast<int>(std::floor(center.y())) - radius);
    const int y1 = std::min(frame.height - 1, static_cast<int>(std::floor(center.y())) + radius);
    for (int y = y0; y <= y1; ++y) {
        const double fy = cdf_span(y, y + 1.0, center.y());
        for (int x = x0; x <= x1; ++x)
            accum[static_cast<size_t>(y) * frame.width + x] +=
                amp * fy * cdf_span(x, x + 1.0, center.x());
    }
}

///// Forward image model: one Gaussian spot per marker, additive read noise,
/// 8-bit quantization over a dark background.
inline Frame render_frame(const SystemGeometry& geom, const Intrinsics& intr,
                          const RotationParams& p_nb, const RenderOptions& opts,
                          std::mt19937_64& rng) {
    Frame frame;
    frame.width = opts.width;
    frame.height = opts.height;
    frame.data.assign(static_cast<size_t>(opts.width) * opts.height, 0);
    std::vector<double> accum(frame.data.size(), opts.background);

    for (int k = 0; k < static_cast<int>(geom.patterns.size()); ++k) {
        for (int i = 0; i < static_cast<int>(geom.patterns[k].markers.size()); ++i) {
            const Vec2 px = project_marker(geom, intr, p_nb, k, i);
            if (px.x() < 0.0 || px.x() >= opts.width || px.y() < 0.0 || px.y() >= opts.height)
                throw MarkerOutOfFrameError("marker projects outside the frame");
            if (opts.peak > 0.0) render_spot(frame, px, opts, accum);
        }
    }

    std::normal_distribution<double> noise(0.0, opts.read_noise);
    for (size_t i = 0; i < accum.size(); ++i) {
        double v = accum[i];
        if (opts.read_noise > 0.0) v += noise(rng);
        frame.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    return frame;
}

/// 4-connected components of pixels with intensity strictly above i_min;
/// single-pixel components are discarded as noise.
inline std::vector<Blob> extract_blobs(const Frame& frame, int i_min = 5) {
    std::vector<int> label(frame.data.size(), -1);
    std::vector<Blob> blobs;
    std::vector<size_t> stack;
    for (int y = 0; y < frame.height; ++y) {
        for (int x = 0; x < frame.width; ++x) {
            const size_t idx = static_cast<size_t>(y) * frame.width + x;
            if (label[idx] >= 0 || frame.data[idx] <= i_min) continue;
            Blob blob;
            stack.push_back(idx);
            label[idx] = static_cast<int>(blobs.size());
            while (!stack.empty()) {
                const size_t cur = stack.back();
                stack.pop_back();
                const int cx = static_cast<int>(cur % frame.width);
                const int cy = static_cast<int>(cur / frame.width);
                blob.pixels.push_back({cx, cy, frame.data[cur]});
                const int nx[4] = {cx - 1, cx + 1, cx, cx};
                const int ny[4] = {cy, cy, cy - 1, cy + 1};
                for (int n = 0; n < 4; ++n) {
                    if (nx[n] < 0 || nx[n] >= frame.width || ny[n] < 0 || ny[n] >= frame.height)
                        continue;
                    const size_t nidx = static_cast<size_t>(ny[n]) * frame.width + nx[n];
                    if (label[nidx] < 0 && frame.data[nidx] > i_min) {
                        label[nidx] = static_cast<int>(blobs.size());
                        stack.push_back(nidx);
                    }
                }
            }
            if (blob.pixels.size() >= 2) {
                blob.centroid = wcom_centroid(blob);
                blobs.push_back(std::move(blob));
            }
        }
    }
    return blobs;
}

// ---------------------------------------------------------------------------
// Marker identification

struct MarkerLayout {
    std::vector<int> canonical_ids;  // marker ids in canonical constellation order
    std::vector<Vec2> canonical_xy;  // body-frame xy per id, same order (meters)
    double tie_rel_tol = 0.1;        // fraction of the minimum pairwise distance
    // Geometric consistency gate: the markers are coplanar, so a correct
    // assignment must fit a plane-to-image homography. The RMS transfer
    // residual is compared against this fraction of the constellation's RMS
    // image radius; a wrong assignment leaves residuals on the order of the
    // marker spacing and fails by a wide margin. Non-positive disables.
    double homography_gate = 0.02;
};

namespace detail {

/// Plane-to-image homography by normalized DLT on raw point pairs, and the
/// RMS forward-transfer residual of the fit.
inline double homography_rms_residual(const std::vector<Vec2>& world,
                                      const std::vector<Vec2>& image) {
    const int n = static_cast<int>(world.size());
    const auto normalizer = [](const std::vector<Vec2>& pts) {
        Vec2 mean = Vec2::Zero();
        for (const auto& p : pts) mean += p;
        mean /= static_cast<double>(pts.size());
        double scale = 0.0;
        for (const auto& p : pts) scale += (p - mean).norm();
        scale /= static_cast<double>(pts.size());
        Eigen::Matrix3d t;
        const double s = std::sqrt(2.0) / scale;
        t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
        return t;
    };
    const Eigen::Matrix3d tw = normalizer(world);
    const Eigen::Matrix3d ti = normalizer(image);
    Eigen::MatrixXd a(2 * n, 9);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d x = tw * Eigen::Vector3d(world[i].x(), world[i].y(), 1.0);
        const Eigen::Vector3d y = ti * Eigen::Vector3d(image[i].x(), image[i].y(), 1.0);
        a.row(2 * i) << x.x(), x.y(), 1.0, 0.0, 0.0, 0.0,
                        -y.x() * x.x(), -y.x() * x.y(), -y.x();
        a.row(2 * i + 1) << 0.0, 0.0, 0.0, x.x(), x.y(), 1.0,
                            -y.y() * x.x(), -y.y() * x.y(), -y.y();
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd hv = svd.matrixV().col(8);
    Eigen::Matrix3d h;
    h << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
    h = ti.inverse() * h * tw;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d m = h * Eigen::Vector3d(world[i].x(), world[i].y(), 1.0);
        acc += (Vec2(m.x() / m.z(), m.y() / m.z()) - image[i]).squaredNorm();
    }
    return std::sqrt(acc / n);
}

// Canonical constellation order:
//  1. the reference point is the one farthest from the mean of all points
//     (the reference LED is the outermost marker by design);
//  2. the remaining points sort by their distance from the reference.
// The order depends only on point-pair distances, so it is invariant under
// rotation, mirroring, and uniform scaling — the same rule applied to the
// body-frame layout (meters) and to detected centroids (pixels) yields
// matching sequences. The layout staggers those distances, so the order is
// also stable under small shape perturbations; a near-tie within the
// tolerance is reported as ambiguous instead of silently guessed.
inline std::vector<int> constellation_order(const std::vector<Vec2>& pts, double rel_tol) {
    const int n = static_cast<int>(pts.size());
    if (n < 4) throw IdentificationError("constellation needs at least 4 points");

    double min_dist = std::numeric_limits<double>::max();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            min_dist = std::min(min_dist, (pts[i] - pts[j]).norm());
    if (min_dist <= 0.0) throw IdentificationError("coincident points");
    const double tol = rel_tol * min_dist;

    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= n;

    int ref = 0;
    for (int i = 1; i < n; ++i)
        if ((pts[i] - mean).norm() > (pts[ref] - mean).norm()) ref = i;
    double second = -1.0;
    for (int i = 0; i < n; ++i)
        if (i != ref) second = std::max(second, (pts[i] - mean).norm());
    if ((pts[ref] - mean).norm() - second < tol)
        throw IdentificationError("ambiguous reference selection");

    struct Key {
        int idx;
        double dist;
    };
    std::vector<Key> keys;
    for (int i = 0; i < n; ++i)
        if (i != ref) keys.push_back({i, (pts[i] - pts[ref]).norm()});
    std::sort(keys.begin(), keys.end(),
              [](const Key& a, const Key& b) { return a.dist < b.dist; });
    for (size_t i = 1; i < keys.size(); ++i)
        if (keys[i].dist - keys[i - 1].dist < tol)
            throw IdentificationError("ambiguous distance-from-reference ordering");

    std::vector<int> order{ref};
    for (const Key& k : keys) order.push_back(k.idx);
    return order;
}

}  // namespace detail

/// Canonical layout of a geometry: marker ids listed in constellation order
/// of their body-frame xy coordinates.
inline MarkerLayout make_layout(const SystemGeometry& geom, double tie_rel_tol = 0.1) {
    std::vector<Vec2> pts;
    std::vector<int> ids;
    for (int k = 0; k < static_cast<int>(geom.patterns.size()); ++k) {
        for (int i = 0; i < static_cast<int>(geom.patterns[k].markers.size()); ++i) {
            const Vec3 r = marker_body_coords(geom, k, i);
            pts.emplace_back(r.x(), r.y());
            ids.push_back(geom.patterns[k].marker_ids[i]);
        }
    }
    MarkerLayout layout;
    layout.tie_rel_tol = tie_rel_tol;
    for (int idx : detail::constellation_order(pts, tie_rel_tol)) {
        layout.canonical_ids.push_back(ids[idx]);
        layout.canonical_xy.push_back(pts[idx]);
    }
    return layout;
}

/// Assign marker ids to detected centroids by matching constellation order.
/// Requires the full marker set to be visible.
inline ObservationSet identify_markers(const std::vector<Vec2>& centroids,
                                       const MarkerLayout& layout, int frame_id = 0) {
    if (centroids.size() != layout.canonical_ids.size())
        throw IdentificationError("expected " + std::to_string(layout.canonical_ids.size()) +
                                  " centroids, got " + std::to_string(centroids.size()));
    // The ordering is distance based, so the vertical-axis flip between the
    // body frame and the image needs no special handling.
    const auto order = detail::constellation_order(centroids, layout.tie_rel_tol);
    if (layout.homography_gate > 0.0 &&
        layout.canonical_xy.size() == layout.canonical_ids.size()) {
        std::vector<Vec2> matched(order.size());
        for (size_t i = 0; i < order.size(); ++i) matched[i] = centroids[order[i]];
        Vec2 mean = Vec2::Zero();
        for (const auto& p : matched) mean += p;
        mean /= static_cast<double>(matched.size());
        double rms_radius = 0.0;
        for (const auto& p : matched) rms_radius += (p - mean).squaredNorm();
        rms_radius = std::sqrt(rms_radius / static_cast<double>(matched.size()));
        const double rms = detail::homography_rms_residual(layout.canonical_xy, matched);
        if (rms > layout.homography_gate * rms_radius)
            throw IdentificationError("assignment inconsistent with a planar homography");
    }
    ObservationSet obs;
    obs.frame_id = frame_id;
    obs.entries.resize(centroids.size());
    for (size_t i = 0; i < order.size(); ++i)
        obs.entries[i] = {layout.canonical_ids[i], centroids[order[i]]};
    return obs;
}

// ---------------------------------------------------------------------------
// Binary 8-bit PGM (P5)

inline void write_pgm(const std::string& path, const Frame& frame) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "P5\n" << frame.width << " " << frame.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(frame.data.data()),
              static_cast<std::streamsize>(frame.data.size()));
    if (!out) throw std::runtime_error("failed writing " + path);
}

inline Frame read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error(path + ": not a binary PGM");
    int w, h, maxval;
    in >> w >> h >> maxval;
    if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PGM supported");
    in.get();  // single whitespace after header
    Frame frame;
    frame.width = w;
    frame.height = h;
    frame.data.resize(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(frame.data.data()),
            static_cast<std::streamsize>(frame.data.size()));
    if (!in) throw std::runtime_error(path + ": truncated pixel data");
    return frame;
}

}  // namespace gts
