// Batch estimation of all optical and geometric parameters plus per-image
// attitudes, with the coplanar parameter reduction and the residual-based
// covariance analysis.
//
// The parameter vector is ordered
//   (fx, fy, cx, cy, w1, w2, w3, r_bn, r_nc,
//    r_s1b, p_bs1, ..., r_sNb, p_bsN, p_nb_1, ..., p_nb_Ni)
// for a total of 13 + 6 Np + 3 Ni entries. In coplanar mode the third
// component of each pattern translation and the second and third rotation
// parameters are structurally constant and are removed from the vector,
// leaving 13 + 3 Np + 3 Ni.
#pragma once

#include "gts/baseline.hpp"
#include "gts/estimator.hpp"

#include <Eigen/Sparse>
#include <cstdio>
#include <stdexcept>
#include <vector>

namespace gts {

struct IncompleteFrameError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnderdeterminedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PatternPose {
    Vec3 r_skb = Vec3::Zero();
    RotationParams p_bsk;
};

struct ParameterVector {
    Vec4 k = Vec4(3478.0, 3478.0, 1024.0, 768.0);  // fx, fy, cx, cy
    Vec3 w = Vec3::Zero();
    Vec3 r_bn = Vec3::Zero();
    Vec3 r_nc = Vec3(0, 0, 1.27);
    std::vector<PatternPose> patterns;      // additional patterns only
    std::vector<RotationParams> attitudes;  // one per image

    static ParameterVector from_system(const SystemGeometry& geom, const Intrinsics& intr) {
        ParameterVector v;
        v.k = Vec4(intr.fx, intr.fy, intr.cx, intr.cy);
        v.w = intr.w;
        v.r_bn = geom.r_bn;
        v.r_nc = geom.r_nc;
        for (size_t k = 1; k < geom.patterns.size(); ++k)
            v.patterns.push_back({geom.patterns[k].r_skb, geom.patterns[k].p_bsk});
        return v;
    }

    Intrinsics intrinsics() const {
        Intrinsics intr;
        intr.fx = k(0);
        intr.fy = k(1);
        intr.cx = k(2);
        intr.cy = k(3);
        intr.w = w;
        return intr;
    }

    /// Geometry with the estimated parameters and the base marker layout.
    SystemGeometry geometry(const SystemGeometry& base) const {
        SystemGeometry g = base;
        g.r_bn = r_bn;
        g.r_nc = r_nc;
        for (size_t k = 1; k < g.patterns.size(); ++k) {
            g.patterns[k].r_skb = patterns[k - 1].r_skb;
            g.patterns[k].p_bsk = patterns[k - 1].p_bsk;
        }
        return g;
    }
};

/// Flattening of a ParameterVector for the solver; coplanar mode drops the
/// structurally constant pattern components.
class CalibrationLayout {
public:
    CalibrationLayout(int n_patterns, int n_images, bool coplanar)
        : np_(n_patterns), ni_(n_images), coplanar_(coplanar) {}

    int pattern_params() const { return coplanar_ ? 3 : 6; }
    int size() const { return 13 + pattern_params() * np_ + 3 * ni_; }
    int pattern_offset(int k) const { return 13 + pattern_params() * k; }
    int attitude_offset(int j) const { return 13 + pattern_params() * np_ + 3 * j; }
    bool coplanar() const { return coplanar_; }
    int n_patterns() const { return np_; }
    int n_images() const { return ni_; }

    Eigen::VectorXd pack(const ParameterVector& v) const {
        Eigen::VectorXd x(size());
        x.segment<4>(0) = v.k;
        x.segment<3>(4) = v.w;
        x.segment<3>(7) = v.r_bn;
        x.segment<3>(10) = v.r_nc;
        for (int k = 0; k < np_; ++k) {
            const int off = pattern_offset(k);
            if (coplanar_) {
                x.segment<2>(off) = v.patterns[k].r_skb.head<2>();
                x(off + 2) = v.patterns[k].p_bsk.p(0);
            } else {
                x.segment<3>(off) = v.patterns[k].r_skb;
                x.segment<3>(off + 3) = v.patterns[k].p_bsk.p;
            }
        }
        for (int j = 0; j < ni_; ++j)
            x.segment<3>(attitude_offset(j)) = v.attitudes[j].p;
        return x;
    }

    /// Inverse of pack; `fixed` supplies the components absent from x.
    ParameterVector unpack(const Eigen::VectorXd& x, const ParameterVector& fixed) const {
        ParameterVector v = fixed;
        v.k = x.segment<4>(0);
        v.w = x.segment<3>(4);
        v.r_bn = x.segment<3>(7);
        v.r_nc = x.segment<3>(10);
        v.patterns.resize(np_);
        v.attitudes.resize(ni_);
        for (int k = 0; k < np_; ++k) {
            const int off = pattern_offset(k);
            if (coplanar_) {
                v.patterns[k].r_skb.head<2>() = x.segment<2>(off);
                v.patterns[k].p_bsk.p(0) = x(off + 2);
            } else {
                v.patterns[k].r_skb = x.segment<3>(off);
                v.patterns[k].p_bsk.p = x.segment<3>(off + 3);
            }
        }
        for (int j = 0; j < ni_; ++j)
            v.attitudes[j].p = x.segment<3>(attitude_offset(j));
        return v;
    }

private:
    int np_;
    int ni_;
    bool coplanar_;
};

namespace detail {

inline void check_complete(const SystemGeometry& geom, const ObservationSet& frame) {
    if (static_cast<int>(frame.entries.size()) != geom.marker_count())
        throw IncompleteFrameError("calibration frame " + std::to_string(frame.frame_id) +
                                   " does not contain the full marker set");
}

}  // namespace detail

/// Stacked per-frame reprojection residuals, m = 2 Ni Nm.
inline Eigen::VectorXd stack_residuals(const ParameterVector& v,
                                       const SystemGeometry& base,
                                       const std::vector<ObservationSet>& frames) {
    const SystemGeometry geom = v.geometry(base);
    const Intrinsics intr = v.intrinsics();
    const int nm = geom.marker_count();
    Eigen::VectorXd eta(2 * nm * frames.size());
    for (size_t j = 0; j < frames.size(); ++j) {
        detail::check_complete(geom, frames[j]);
        eta.segment(2 * nm * j, 2 * nm) =
            reprojection_residuals(geom, intr, v.attitudes[j], frames[j]);
    }
    return eta;
}

/// Sparse m-by-p calibration Jacobian. Every block is analytic; the attitude
/// columns of frame j are structurally zero in all other frames' rows.
inline Eigen::SparseMatrix<double> calibration_jacobian(
    const ParameterVector& v, const SystemGeometry& base,
    const std::vector<ObservationSet>& frames, bool coplanar) {
    const SystemGeometry geom = v.geometry(base);
    const Intrinsics intr = v.intrinsics();
    const int nm = geom.marker_count();
    const int np = static_cast<int>(v.patterns.size());
    const CalibrationLayout layout(np, static_cast<int>(frames.size()), coplanar);
    const int m = 2 * nm * static_cast<int>(frames.size());

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<size_t>(m) * (13 + 6 + 3));

    Eigen::Matrix2d a_scale;
    a_scale << intr.fx, 0.0, 0.0, intr.fy;
    const Mat3 cn = cn_matrix();

    // Per-pattern quantities independent of the frame.
    std::vector<UnitQuaternion> q_bsk(np);
    for (int k = 0; k < np; ++k) q_bsk[k] = params_to_quat(v.patterns[k].p_bsk);

    auto emit = [&trip](int row, int col, const auto& block) {
        for (int r = 0; r < block.rows(); ++r)
            for (int c = 0; c < block.cols(); ++c)
                trip.emplace_back(row + r, col + c, block(r, c));
    };

    for (size_t j = 0; j < frames.size(); ++j) {
        detail::check_complete(geom, frames[j]);
        const UnitQuaternion q_nb = params_to_quat(v.attitudes[j]);
        const Mat3 nb = quat_to_matrix(q_nb);
        const auto d_rot = [&](const Vec3& u) { return d_rotated_vec_d_quat(q_nb, u); };
        const Eigen::Matrix<double, 4, 3> dq_dp = d_quat_d_params(v.attitudes[j]);

        for (size_t e = 0; e < frames[j].entries.size(); ++e) {
            const auto ref = geom.find_marker(frames[j].entries[e].marker_id);
            const auto c = detail::marker_chain(geom, intr, q_nb, ref.pattern, ref.index);
            const int row = 2 * (nm * static_cast<int>(j) + static_cast<int>(e));

            // Intrinsics block: only the final denormalization depends on
            // (fx, fy, cx, cy) -- the normalization entering the projection
            // cancels against it exactly, since skew is zero.
            Eigen::Matrix<double, 2, 4> dk;
            dk << c.r_n.x(), 0.0, 1.0, 0.0,
                  0.0, c.r_n.y(), 0.0, 1.0;
            emit(row, 0, dk);

            // Distortion block.
            const Eigen::Vector3d rho_powers(c.rho2, c.rho2 * c.rho2,
                                             c.rho2 * c.rho2 * c.rho2);
            const Eigen::Matrix<double, 2, 3> dw =
                a_scale * (c.r_nu * rho_powers.transpose());
            emit(row, 4, dw);

            // CoR offsets.
            const Eigen::Matrix<double, 2, 3> dpix_drin = c.dpix_drc * cn;
            emit(row, 7, Eigen::Matrix<double, 2, 3>(dpix_drin * nb));
            emit(row, 10, c.dpix_drc);

            // Additional-pattern blocks (zero for pattern 0 markers).
            if (ref.pattern > 0) {
                const int k = ref.pattern - 1;
                const int off = layout.pattern_offset(k);
                // r_ib = r_skb + [BS_k] r_isk: the offset enters directly.
                const Eigen::Matrix<double, 2, 3> dskb = dpix_drin * nb;
                const Eigen::Matrix<double, 2, 3> dpbsk =
                    dpix_drin * nb * d_rotated_vec_d_quat(q_bsk[k], c.r_isk) *
                    d_quat_d_params(v.patterns[k].p_bsk);
                if (coplanar) {
                    emit(row, off, Eigen::Matrix<double, 2, 2>(dskb.leftCols<2>()));
                    emit(row, off + 2, Eigen::Matrix<double, 2, 1>(dpbsk.col(0)));
                } else {
                    emit(row, off, dskb);
                    emit(row, off + 3, dpbsk);
                }
            }

            // Attitude block of this frame only.
            const Eigen::Matrix<double, 2, 3> datt = dpix_drin * d_rot(c.u) * dq_dp;
            emit(row, layout.attitude_offset(static_cast<int>(j)), datt);
        }
    }

    Eigen::SparseMatrix<double> jac(m, layout.size());
    jac.setFromTriplets(trip.begin(), trip.end());
    return jac;
}

struct CalibrationOptions {
    bool coplanar = true;
    bool compute_covariance = true;
    int max_iterations = 30;
    double step_tolerance = 1e-8;
    double initial_lambda = 1e-6;
    bool staged_start = true;   // settle geometry/attitudes before optics
    int staged_iterations = 5;  // length of the optics-frozen stage
    bool verbose = false;       // per-iteration diagnostics on stderr
};

struct CalibrationResult {
    ParameterVector v;
    double r2 = 0.0;          // total residual, pixel^2
    double sigma2_hat = 0.0;  // unbiased measurement variance estimate
    Eigen::VectorXd sigma;    // per-parameter 1-sigma, sqrt(diag(P_v))
    Eigen::MatrixXd p_v;      // parameter covariance (empty if not requested)
    int iterations = 0;
    bool converged = false;
    std::vector<double> residual_history;
};

/// Damped Gauss-Newton (Levenberg-Marquardt lambda adaptation) over the full
/// parameter vector.
inline CalibrationResult calibrate(const ParameterVector& initial,
                                   const SystemGeometry& base,
                                   const std::vector<ObservationSet>& frames,
                                   const CalibrationOptions& opts = {}) {
    const int nm = base.marker_count();
    const int ni = static_cast<int>(frames.size());
    const int np = static_cast<int>(initial.patterns.size());
    const CalibrationLayout layout(np, ni, opts.coplanar);
    const int m = 2 * nm * ni;
    const int p = layout.size();
    if (m < p)
        throw UnderdeterminedError("m = " + std::to_string(m) + " measurements < p = " +
                                   std::to_string(p) + " parameters");

    CalibrationResult res;
    res.v = initial;
    Eigen::VectorXd eta = stack_residuals(res.v, base, frames);
    double r2 = eta.squaredNorm();
    res.residual_history.push_back(r2);

    double lambda = opts.initial_lambda;
    Eigen::SparseMatrix<double> jac;
    Eigen::MatrixXd jtj;

    // One damped Gauss-Newton stage. With freeze_optics the seven optical
    // parameters are pinned (unit diagonal, zero gradient), which lets the
    // geometry and the attitudes absorb the gross model inconsistencies of
    // the initial guess before the weakly-observable distortion terms are
    // released; starting the full problem from a distant guess can otherwise
    // fall into a spurious optics minimum.
    auto run_stage = [&](int max_it, bool freeze_optics) {
        for (int it = 0; it < max_it; ++it) {
            jac = calibration_jacobian(res.v, base, frames, opts.coplanar);
            jtj = Eigen::MatrixXd(Eigen::SparseMatrix<double>(jac.transpose() * jac));
            Eigen::VectorXd g = jac.transpose() * eta;
            const Eigen::VectorXd x = layout.pack(res.v);

            bool accepted = false;
            bool flat = false;  // no achievable reduction: stationary point
            double step_norm = 0.0;
            while (lambda < 1e12) {
                Eigen::MatrixXd damped = jtj;
                damped.diagonal() += lambda * jtj.diagonal();
                if (freeze_optics) {
                    for (int i = 0; i < 7; ++i) {
                        damped.row(i).setZero();
                        damped.col(i).setZero();
                        damped(i, i) = 1.0;
                        g(i) = 0.0;
                    }
                }
                const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
                if (ldlt.info() != Eigen::Success) {
                    lambda *= 10.0;
                    continue;
                }
                const Eigen::VectorXd step = ldlt.solve(g);
                // Linear-model prediction of the residual decrease; along
                // near-degenerate parameter combinations the solve produces
                // huge steps whose prediction is pure extrapolation, so a
                // step is accepted only when a meaningful fraction of it is
                // realized.
                const double predicted =
                    step.dot(g) + lambda * step.dot(jtj.diagonal().cwiseProduct(step));
                // Relative to the current residual, so zero-noise problems
                // keep polishing down the weakly-observable valleys instead
                // of stopping at an absolute floor.
                if (predicted <= 1e-14 * r2 + 1e-30) {
                    flat = true;
                    break;
                }
                const ParameterVector trial = layout.unpack(x - step, res.v);
                try {
                    const Eigen::VectorXd trial_eta = stack_residuals(trial, base, frames);
                    const double trial_r2 = trial_eta.squaredNorm();
                    if (!std::isfinite(trial_r2)) throw BehindCameraError("non-finite residual");
                    if (r2 - trial_r2 > 1e-3 * predicted) {
                        res.v = trial;
                        eta = trial_eta;
                        r2 = trial_r2;
                        step_norm = step.norm();
                        lambda = std::max(lambda / 10.0, 1e-12);
                        accepted = true;
                        break;
                    }
                } catch (const BehindCameraError&) {
                    // step left the projection validity region; damp harder
                }
                lambda *= 10.0;
            }
            res.iterations += 1;
            res.residual_history.push_back(r2);
            if (opts.verbose)
                std::fprintf(stderr, "  iter %3d%s  r2 = %.6e  lambda = %.3e  step = %.3e\n",
                             res.iterations, freeze_optics ? "*" : " ", r2, lambda, step_norm);
            if (!accepted) {
                // Either the gradient vanished (stationary point) or no
                // damping level realized its prediction (numerical floor):
                // both mean this stage cannot reduce the residual further.
                res.converged = !freeze_optics && (flat || lambda >= 1e12);
                return;
            }
            if (step_norm < opts.step_tolerance) {
                res.converged = !freeze_optics;
                return;
            }
        }
    };

    if (opts.staged_start) {
        run_stage(opts.staged_iterations, true);
        lambda = opts.initial_lambda;
        res.converged = false;
    }
    run_stage(opts.max_iterations, false);

    res.r2 = r2;
    res.sigma2_hat = r2 / static_cast<double>(m - p - 1);

    // Covariance: with P_m = sigma2 I, the sandwich collapses to
    // sigma2 (J^T J)^(-1); computed from the factorization of J^T J.
    if (opts.compute_covariance) {
        jac = calibration_jacobian(res.v, base, frames, opts.coplanar);
        jtj = Eigen::MatrixXd(Eigen::SparseMatrix<double>(jac.transpose() * jac));
        // The parameters mix pixels, meters, and dimensionless distortion
        // terms, so the raw normal matrix carries a large but benign spread
        // of scales. Jacobi equilibration removes it, leaving the condition
        // check sensitive to genuine rank deficiency (degenerate motion)
        // rather than unit mismatch.
        const Eigen::VectorXd diag = jtj.diagonal();
        if (diag.minCoeff() <= 0.0)
            throw SingularNormalEquations(
                "calibration normal equations near-singular (degenerate motion: "
                "rotate the platform through more distinct attitudes)");
        const Eigen::VectorXd inv_s = diag.cwiseSqrt().cwiseInverse();
        const Eigen::MatrixXd scaled =
            inv_s.asDiagonal() * jtj * inv_s.asDiagonal();
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(scaled);
        const Eigen::VectorXd d = ldlt.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        const double dmin = d.cwiseAbs().minCoeff();
        if (ldlt.info() != Eigen::Success || dmin <= 0.0 || dmax / dmin > 1e12)
            throw SingularNormalEquations(
                "calibration normal equations near-singular (degenerate motion: "
                "rotate the platform through more distinct attitudes)");
        const Eigen::MatrixXd inv_scaled = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
        res.p_v = res.sigma2_hat *
                  (inv_s.asDiagonal() * inv_scaled * inv_s.asDiagonal());
        res.sigma = res.p_v.diagonal().cwiseMax(0.0).cwiseSqrt();
    }
    return res;
}

///// Initial guess: nominal fixed parameters, per-image attitudes from the
/// homography baseline under the nominal camera model. The homography start
/// is deliberately not refined against reprojection here: it separates
/// rotation from translation, so its attitude stays clean even when the
/// nominal lever arms are off by centimeters.
inline ParameterVector initialize_guess(const std::vector<ObservationSet>& frames,
                                        const SystemGeometry& nominal_geom,
                                        const Intrinsics& nominal_intr) {
    if (frames.empty())
        throw std::invalid_argument("initialize_guess: no calibration frames");
    ParameterVector v = ParameterVector::from_system(nominal_geom, nominal_intr);
    v.attitudes.reserve(frames.size());
    for (const auto& f : frames)
        v.attitudes.push_back(cold_start_attitude(nominal_geom, nominal_intr, f));
    return v;
}

}  // namespace gts
