/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/fitting/pose_refine.hpp
 *
 * Copyright 2026 The headfit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#ifndef HEADFIT_FITTING_POSE_REFINE_HPP
#define HEADFIT_FITTING_POSE_REFINE_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"

#include "Eigen/Core"
#include "Eigen/Cholesky"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace headfit {
namespace fitting {

/// One 2D keypoint observed in a frame.
struct Observation
{
    std::string keypoint_id;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    double weight = 1.0;
};

/// The observations of one frame together with the (fixed) camera of that frame.
struct FrameObservations
{
    camera::PerspectiveCamera camera;
    std::vector<Observation> points;
};

/**
 * Multi-image reprojection problem for the rigid correction T_opt:
 *
 *   sum_n sum_k w_k | pi_n(T_opt * T_sim * X_k) - y_kn |^2
 *
 * `model_points` holds X_k in canonical model coordinates, `base_transform`
 * is T_sim.
 */
struct PoseProblem
{
    std::vector<FrameObservations> frames;
    std::map<std::string, Eigen::Vector3d> model_points;
    camera::SimilarityTransform base_transform;
};

enum class JacobianMode { FiniteDifference, Analytic };

struct LMSettings
{
    int max_iterations = 100;
    double initial_damping = 1e-3;
    double damping_up = 10.0;
    double damping_down = 10.0;
    double gradient_tolerance = 1e-10;
    double step_tolerance = 1e-12;
    JacobianMode jacobian = JacobianMode::FiniteDifference;
};

enum class Termination { GradientTolerance, StepTolerance, MaxIterations, DampingOverflow };

inline const char* to_string(Termination t)
{
    switch (t)
    {
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::StepTolerance: return "step_tolerance";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::DampingOverflow: return "damping_overflow";
    }
    return "unknown";
}

struct ConvergenceReport
{
    int iterations = 0;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    Termination termination = Termination::MaxIterations;
    /// Objective after each accepted step, starting with the initial value.
    std::vector<double> accepted_objectives;
};

/// Number of accepted LM steps, process wide, that increased the objective.
inline std::atomic<long>& lm_monotonicity_violations()
{
    static std::atomic<long> count{0};
    return count;
}

inline void validate(const PoseProblem& problem)
{
    std::map<std::string, bool> seen;
    for (const auto& frame : problem.frames)
    {
        for (const auto& obs : frame.points)
        {
            if (!problem.model_points.count(obs.keypoint_id))
            {
                throw Error(ErrorKind::Validation, "keypoint '" + obs.keypoint_id + "' observed in frame " +
                                                       std::to_string(frame.camera.frame_id) +
                                                       " has no model point");
            }
            seen[obs.keypoint_id] = true;
        }
    }
    if (seen.size() < 3)
    {
        throw Error(ErrorKind::Validation, "pose problem needs at least 3 distinct keypoints");
    }
}

namespace detail {

/// Frame indices sorted by frame id, so accumulation order does not depend on input order.
inline std::vector<std::size_t> canonical_frame_order(const PoseProblem& problem)
{
    std::vector<std::size_t> order(problem.frames.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return problem.frames[a].camera.frame_id < problem.frames[b].camera.frame_id;
    });
    return order;
}

inline std::size_t residual_count(const PoseProblem& problem)
{
    std::size_t n = 0;
    for (const auto& f : problem.frames)
    {
        n += 2 * f.points.size();
    }
    return n;
}

/// Weighted residual vector; throws BehindCameraError naming the frame and keypoint.
inline Eigen::VectorXd residuals(const PoseProblem& problem, const std::vector<std::size_t>& order,
                                 const camera::RigidTransform& pose)
{
    Eigen::VectorXd r(static_cast<Eigen::Index>(residual_count(problem)));
    Eigen::Index row = 0;
    for (std::size_t fi : order)
    {
        const auto& frame = problem.frames[fi];
        for (const auto& obs : frame.points)
        {
            const Eigen::Vector3d world = pose(problem.base_transform(problem.model_points.at(obs.keypoint_id)));
            const Eigen::Vector3d cam = frame.camera.to_camera(world);
            if (!(cam.z() >= camera::min_depth))
            {
                throw BehindCameraError(frame.camera.frame_id, obs.keypoint_id,
                                        "keypoint '" + obs.keypoint_id + "' is behind camera " +
                                            std::to_string(frame.camera.frame_id));
            }
            const Eigen::Vector2d px = camera::project_camera_point(frame.camera, cam);
            r.segment<2>(row) = std::sqrt(obs.weight) * (px - obs.pixel);
            row += 2;
        }
    }
    return r;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v)
{
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

/// Right Jacobian of SO(3) at axis-angle omega.
inline Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& omega)
{
    const double theta = omega.norm();
    const Eigen::Matrix3d W = skew(omega);
    if (theta < 1e-5)
    {
        return Eigen::Matrix3d::Identity() - 0.5 * W + (1.0 / 6.0) * W * W;
    }
    const double t2 = theta * theta;
    return Eigen::Matrix3d::Identity() - (1.0 - std::cos(theta)) / t2 * W +
           (theta - std::sin(theta)) / (t2 * theta) * W * W;
}

/// Characteristic length of the posed model points, used to scale translation steps.
inline double translation_scale(const PoseProblem& problem)
{
    if (problem.model_points.empty())
    {
        return 1.0;
    }
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& [id, x] : problem.model_points)
    {
        c += problem.base_transform(x);
    }
    c /= static_cast<double>(problem.model_points.size());
    double s = 0.0;
    for (const auto& [id, x] : problem.model_points)
    {
        s += (problem.base_transform(x) - c).squaredNorm();
    }
    s = std::sqrt(s / static_cast<double>(problem.model_points.size()));
    return s > 0.0 ? s : 1.0;
}

} /* namespace detail */

/// Weighted sum of squared reprojection errors of the posed model keypoints.
inline double pose_objective(const PoseProblem& problem, const camera::RigidTransform& pose)
{
    return detail::residuals(problem, detail::canonical_frame_order(problem), pose).squaredNorm();
}

/**
 * Central finite-difference Jacobian of the residuals with respect to the
 * pose parameters (axis-angle, translation). Steps are 1e-6 rad for the
 * rotation and 1e-6 times the model extent for the translation.
 */
inline Eigen::MatrixXd pose_jacobian_numeric(const PoseProblem& problem, const Eigen::Matrix<double, 6, 1>& params)
{
    const auto order = detail::canonical_frame_order(problem);
    const double tscale = detail::translation_scale(problem);
    Eigen::MatrixXd J(static_cast<Eigen::Index>(detail::residual_count(problem)), 6);
    for (int i = 0; i < 6; ++i)
    {
        const double h = 1e-6 * (i < 3 ? 1.0 : tscale);
        Eigen::Matrix<double, 6, 1> plus = params, minus = params;
        plus(i) += h;
        minus(i) -= h;
        J.col(i) = (detail::residuals(problem, order, camera::RigidTransform::from_params(plus)) -
                    detail::residuals(problem, order, camera::RigidTransform::from_params(minus))) /
                   (2.0 * h);
    }
    return J;
}

inline Eigen::MatrixXd pose_jacobian_analytic(const PoseProblem& problem, const Eigen::Matrix<double, 6, 1>& params)
{
    const auto order = detail::canonical_frame_order(problem);
    const camera::RigidTransform pose = camera::RigidTransform::from_params(params);
    const Eigen::Matrix3d right_jac = detail::so3_right_jacobian(params.head<3>());
    Eigen::MatrixXd J(static_cast<Eigen::Index>(detail::residual_count(problem)), 6);
    Eigen::Index row = 0;
    for (std::size_t fi : order)
    {
        const auto& frame = problem.frames[fi];
        const auto& K = frame.camera.intrinsics;
        for (const auto& obs : frame.points)
        {
            const Eigen::Vector3d base = problem.base_transform(problem.model_points.at(obs.keypoint_id));
            const Eigen::Vector3d cam = frame.camera.to_camera(pose(base));
            if (!(cam.z() >= camera::min_depth))
            {
                throw BehindCameraError(frame.camera.frame_id, obs.keypoint_id, "keypoint behind camera");
            }
            const double z = cam.z();
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << K(0, 0) / z, K(0, 1) / z, -(K(0, 0) * cam.x() + K(0, 1) * cam.y()) / (z * z), 0.0,
                K(1, 1) / z, -K(1, 1) * cam.y() / (z * z);
            const Eigen::Matrix<double, 2, 3> dworld = std::sqrt(obs.weight) * dproj * frame.camera.rotation;
            J.block<2, 3>(row, 0) = dworld * (-pose.rotation * detail::skew(base) * right_jac);
            J.block<2, 3>(row, 3) = dworld;
            row += 2;
        }
    }
    return J;
}

/**
 * Levenberg-Marquardt refinement of the rigid correction.
 *
 * Damping is applied to the diagonal of J^T J (Marquardt scaling, floored so
 * unobservable parameters stay regular). A trial step that moves a keypoint
 * behind a camera counts as an infinite objective and is rejected.
 */
inline std::pair<camera::RigidTransform, ConvergenceReport>
refine_pose(const PoseProblem& problem, const camera::RigidTransform& initial, const LMSettings& settings = {})
{
    validate(problem);
    if (settings.max_iterations <= 0 || !(settings.initial_damping > 0.0) || !(settings.damping_up > 1.0) ||
        !(settings.damping_down > 1.0) || !(settings.gradient_tolerance > 0.0) || !(settings.step_tolerance > 0.0))
    {
        throw Error(ErrorKind::InvalidParams, "LM settings must be positive (damping factors > 1)");
    }
    const auto order = detail::canonical_frame_order(problem);

    Eigen::Matrix<double, 6, 1> x = initial.to_params();
    Eigen::VectorXd r;
    try
    {
        r = detail::residuals(problem, order, camera::RigidTransform::from_params(x));
    } catch (const BehindCameraError& e)
    {
        throw Error(ErrorKind::InvalidInitialization, std::string("initial pose invalid: ") + e.what());
    }
    if (!r.allFinite())
    {
        throw Error(ErrorKind::InvalidInitialization, "non-finite residuals at the initial pose");
    }

    double cost = r.squaredNorm();
    ConvergenceReport report;
    report.initial_objective = cost;
    report.accepted_objectives.push_back(cost);
    double damping = settings.initial_damping;
    const double tscale = detail::translation_scale(problem);
    Eigen::Matrix<double, 6, 1> param_scale;
    param_scale << 1.0, 1.0, 1.0, tscale, tscale, tscale;

    bool done = false;
    while (!done)
    {
        if (report.iterations >= settings.max_iterations)
        {
            report.termination = Termination::MaxIterations;
            break;
        }
        ++report.iterations;

        const Eigen::MatrixXd J = settings.jacobian == JacobianMode::Analytic ? pose_jacobian_analytic(problem, x)
                                                                              : pose_jacobian_numeric(problem, x);
        const Eigen::Matrix<double, 6, 1> g = J.transpose() * r;
        if (g.cwiseProduct(param_scale).lpNorm<Eigen::Infinity>() < settings.gradient_tolerance)
        {
            report.termination = Termination::GradientTolerance;
            break;
        }
        const Eigen::Matrix<double, 6, 6> A = J.transpose() * J;
        const double diag_floor = 1e-12 * std::max(1e-300, A.diagonal().maxCoeff());

        for (;;)
        {
            Eigen::Matrix<double, 6, 6> damped = A;
            for (int i = 0; i < 6; ++i)
            {
                damped(i, i) += damping * std::max(A(i, i), diag_floor);
            }
            const Eigen::Matrix<double, 6, 1> step = damped.ldlt().solve(-g);
            const Eigen::Matrix<double, 6, 1> scaled_step = step.cwiseQuotient(param_scale);
            const Eigen::Matrix<double, 6, 1> scaled_x = x.cwiseQuotient(param_scale);
            if (!step.allFinite() || scaled_step.norm() < settings.step_tolerance * (scaled_x.norm() + settings.step_tolerance))
            {
                report.termination = Termination::StepTolerance;
                done = true;
                break;
            }
            const Eigen::Matrix<double, 6, 1> trial = x + step;
            double trial_cost = std::numeric_limits<double>::infinity();
            Eigen::VectorXd trial_r;
            try
            {
                trial_r = detail::residuals(problem, order, camera::RigidTransform::from_params(trial));
                trial_cost = trial_r.squaredNorm();
            } catch (const BehindCameraError&)
            {
            }
            if (std::isfinite(trial_cost) && trial_cost < cost)
            {
                if (trial_cost > report.accepted_objectives.back())
                {
                    ++lm_monotonicity_violations();
                }
                x = trial;
                r = std::move(trial_r);
                cost = trial_cost;
                report.accepted_objectives.push_back(cost);
                damping = std::max(damping / settings.damping_down, 1e-15);
                break;
            }
            damping *= settings.damping_up;
            if (damping > 1e16)
            {
                report.termination = Termination::DampingOverflow;
                done = true;
                break;
            }
        }
    }
    report.final_objective = cost;
    return {camera::RigidTransform::from_params(x), report};
}

} /* namespace fitting */
} /* namespace headfit */

#endif /* HEADFIT_FITTING_POSE_REFINE_HPP */
