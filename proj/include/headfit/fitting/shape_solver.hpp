/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/fitting/shape_solver.hpp
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

#ifndef HEADFIT_FITTING_SHAPE_SOLVER_HPP
#define HEADFIT_FITTING_SHAPE_SOLVER_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/camera/umeyama.hpp"
#include "headfit/core/error.hpp"
#include "headfit/fitting/pose_refine.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"

#include "Eigen/Cholesky"
#include "Eigen/Core"

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace headfit {
namespace fitting {

/// A 2D observation bound to a model vertex.
struct VertexObservation
{
    std::string id;
    int vertex = 0;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    double weight = 1.0;
};

struct FrameKeypoints
{
    camera::PerspectiveCamera camera;
    std::vector<VertexObservation> points;
};

using KeypointSet = std::vector<FrameKeypoints>;

/**
 * Binds landmark-id observations to model vertices. Throws a Validation error
 * naming the first id that is missing from the landmark table.
 */
inline std::vector<VertexObservation> bind_landmarks(const morphablemodel::MorphableModel& model,
                                                     const std::vector<Observation>& observations)
{
    std::vector<VertexObservation> bound;
    bound.reserve(observations.size());
    for (const auto& obs : observations)
    {
        bound.push_back({obs.keypoint_id, model.landmark_vertex(obs.keypoint_id), obs.pixel, obs.weight});
    }
    return bound;
}

/**
 * State of the alternating pose/shape fit: the model, the current shape
 * coefficients, the current alignment T_opt * T_sim from model to world, the
 * regularisation weight and the dense-reconstruction anchors used to re-align
 * T_sim with Umeyama at the start of every iteration.
 */
struct FittingContext
{
    std::shared_ptr<const morphablemodel::MorphableModel> model;
    morphablemodel::ShapeParams alpha;
    camera::SimilarityTransform sim;
    camera::RigidTransform opt;
    double lambda = 100.0;
    int iteration = 0;
    /// Landmark id -> position on the dense reconstruction (world units).
    std::map<std::string, Eigen::Vector3d> anchors;
    LMSettings lm;
    /// Eigenvalues below this fraction of the largest are clamped before inversion.
    double eigenvalue_floor = 1e-8;
    /// Frames with fewer usable keypoints are dropped from the shape solve.
    int min_frame_keypoints = 4;

    camera::SimilarityTransform model_to_world() const { return opt * sim; }

    const morphablemodel::MorphableModel& m() const
    {
        if (!model)
        {
            throw Error(ErrorKind::InvalidParams, "fitting context has no model");
        }
        return *model;
    }
};

inline void validate(const FittingContext& ctx)
{
    if (!(ctx.lambda >= 0.0))
    {
        throw Error(ErrorKind::InvalidParams, "lambda must be non-negative");
    }
    morphablemodel::check_params(ctx.m(), ctx.alpha);
}

struct BackprojectedPoint
{
    std::string id;
    int vertex = 0;
    double weight = 1.0;
    double depth = 0.0;
    Eigen::Vector3d world = Eigen::Vector3d::Zero();
    /// The same point in canonical model coordinates.
    Eigen::Vector3d model = Eigen::Vector3d::Zero();
};

struct BackprojectedFrame
{
    int frame_id = 0;
    std::vector<BackprojectedPoint> points;
};

struct Backprojection
{
    std::vector<BackprojectedFrame> frames;
    std::vector<std::string> warnings;

    std::size_t point_count() const
    {
        std::size_t n = 0;
        for (const auto& f : frames)
        {
            n += f.points.size();
        }
        return n;
    }
};

/**
 * Lifts every 2D keypoint onto its viewing ray at the depth that the
 * corresponding vertex of the current aligned model has in that camera.
 * Frames in which some keypoint vertex lies behind the camera are excluded
 * and reported in `warnings`.
 */
inline Backprojection backproject_keypoints(const FittingContext& ctx, const KeypointSet& keypoints)
{
    const auto& model = ctx.m();
    const camera::SimilarityTransform to_world = ctx.model_to_world();
    const camera::SimilarityTransform to_model = to_world.inverse();

    Backprojection result;
    for (const auto& frame : keypoints)
    {
        BackprojectedFrame out{frame.camera.frame_id, {}};
        bool valid = true;
        for (const auto& obs : frame.points)
        {
            const Eigen::Vector3d x = morphablemodel::synthesize_vertex(model, ctx.alpha, obs.vertex);
            const Eigen::Vector3d cam = frame.camera.to_camera(to_world(x));
            if (!(cam.z() >= camera::min_depth))
            {
                result.warnings.push_back("frame " + std::to_string(frame.camera.frame_id) + " excluded: keypoint '" +
                                          obs.id + "' is behind the camera");
                valid = false;
                break;
            }
            BackprojectedPoint p;
            p.id = obs.id;
            p.vertex = obs.vertex;
            p.weight = obs.weight;
            p.depth = cam.z();
            p.world = frame.camera.to_world(camera::backproject(frame.camera, obs.pixel, cam.z()));
            p.model = to_model(p.world);
            out.points.push_back(std::move(p));
        }
        if (valid)
        {
            result.frames.push_back(std::move(out));
        }
    }
    return result;
}

struct ShapeSolveReport
{
    double condition_estimate = 1.0;
    /// Data term plus prior at the returned coefficients.
    double objective = 0.0;
    std::vector<int> frames_used;
    std::vector<std::string> warnings;
};

namespace detail {

inline Eigen::VectorXd clamped_eigenvalues(const morphablemodel::MorphableModel& model, double floor_fraction)
{
    const Eigen::VectorXd& ev = model.eigenvalues();
    const double floor = floor_fraction * ev.maxCoeff();
    return ev.cwiseMax(floor);
}

inline std::vector<std::size_t> usable_frames(const Backprojection& bp, int min_points,
                                              std::vector<std::string>* warnings)
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < bp.frames.size(); ++i)
    {
        if (static_cast<int>(bp.frames[i].points.size()) < min_points)
        {
            if (warnings)
            {
                warnings->push_back("frame " + std::to_string(bp.frames[i].frame_id) + " dropped from shape solve: " +
                                    std::to_string(bp.frames[i].points.size()) + " keypoints");
            }
            continue;
        }
        idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return bp.frames[a].frame_id < bp.frames[b].frame_id; });
    return idx;
}

} /* namespace detail */

/**
 * Value of the regularised shape objective in the canonical model frame:
 *
 *   sum_n sum_k w |S_k(alpha) - T^-1 Y_kn|^2 + lambda * alpha^T diag(ev)^-1 alpha
 */
inline double shape_objective(const FittingContext& ctx, const Backprojection& bp,
                              const morphablemodel::ShapeParams& alpha)
{
    const auto& model = ctx.m();
    const Eigen::VectorXd ev = detail::clamped_eigenvalues(model, ctx.eigenvalue_floor);
    double data = 0.0;
    for (std::size_t fi : detail::usable_frames(bp, ctx.min_frame_keypoints, nullptr))
    {
        for (const auto& p : bp.frames[fi].points)
        {
            data += p.weight * (morphablemodel::synthesize_vertex(model, alpha, p.vertex) - p.model).squaredNorm();
        }
    }
    return data + ctx.lambda * alpha.alpha.cwiseAbs2().cwiseQuotient(ev).sum();
}

/**
 * Regularised linear solve for the shape coefficients:
 *
 *   alpha = (sum_n U_K^T W U_K + lambda diag(ev)^-1)^-1 sum_n U_K^T W (Y_n - mu_K)
 *
 * where U_K and mu_K are the rows of the basis and mean belonging to the
 * keypoint vertices of frame n and Y_n are the backprojected keypoints mapped
 * into the canonical model frame by the inverse of T_opt * T_sim. Working in
 * the canonical frame keeps lambda independent of the reconstruction scale.
 * Frames are accumulated in frame-id order.
 */
inline morphablemodel::ShapeParams solve_shape_step(const FittingContext& ctx, const Backprojection& bp,
                                                    ShapeSolveReport* report = nullptr)
{
    validate(ctx);
    const auto& model = ctx.m();
    const int n = model.num_components();
    const Eigen::VectorXd ev = detail::clamped_eigenvalues(model, ctx.eigenvalue_floor);

    ShapeSolveReport local;
    ShapeSolveReport& rep = report ? *report : local;
    rep = {};

    Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (std::size_t fi : detail::usable_frames(bp, ctx.min_frame_keypoints, &rep.warnings))
    {
        const auto& frame = bp.frames[fi];
        rep.frames_used.push_back(frame.frame_id);
        for (const auto& p : frame.points)
        {
            const auto U = model.components_at(p.vertex);
            normal.noalias() += p.weight * (U.transpose() * U);
            rhs.noalias() += p.weight * (U.transpose() * (p.model - model.mean_at(p.vertex)));
        }
    }
    normal.diagonal() += ctx.lambda * ev.cwiseInverse();
    normal = 0.5 * (normal + normal.transpose()).eval();

    const Eigen::LLT<Eigen::MatrixXd> llt(normal);
    const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    rep.condition_estimate = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
    if (llt.info() != Eigen::Success || !(rcond > 1e-15))
    {
        throw Error(ErrorKind::IllPosed, "shape normal matrix is singular (condition estimate " +
                                             std::to_string(rep.condition_estimate) + ", " +
                                             std::to_string(rep.frames_used.size()) + " frames)");
    }
    if (rep.condition_estimate > 1e10)
    {
        rep.warnings.push_back("shape normal matrix is ill-conditioned (condition estimate " +
                               std::to_string(rep.condition_estimate) + ")");
    }
    morphablemodel::ShapeParams alpha{llt.solve(rhs)};
    rep.objective = shape_objective(ctx, bp, alpha);
    return alpha;
}

struct IterationTrace
{
    int iteration = 0;
    double pose_objective = 0.0;
    double shape_objective = 0.0;
    double alpha_norm = 0.0;
    int lm_iterations = 0;
    std::vector<int> frames_used;
    std::vector<std::string> warnings;
};

/// An iteration of iterate_fit failed. Carries the iterations completed so far.
class FitAbortedError : public Error
{
public:
    FitAbortedError(ErrorKind kind, const std::string& message, std::vector<IterationTrace> trace)
        : Error(kind, message), trace_(std::move(trace))
    {
    }
    const std::vector<IterationTrace>& trace() const noexcept { return trace_; }

private:
    std::vector<IterationTrace> trace_;
};

/// Extra per-frame observations recomputed at the start of each iteration (frame id -> points).
using DynamicFeatureSource = std::function<std::map<int, std::vector<VertexObservation>>(const FittingContext&)>;

/// Re-estimates T_sim from the anchors; leaves it untouched if there are none.
inline void realign_similarity(FittingContext& ctx)
{
    if (ctx.anchors.empty())
    {
        return;
    }
    std::vector<Eigen::Vector3d> src, dst;
    for (const auto& [id, target] : ctx.anchors)
    {
        src.push_back(morphablemodel::synthesize_vertex(ctx.m(), ctx.alpha, ctx.m().landmark_vertex(id)));
        dst.push_back(target);
    }
    ctx.sim = camera::umeyama_fit(src, dst);
}

/**
 * Pose problem over the given keypoints, with X_k taken from S(alpha) in the
 * canonical frame. Like the backprojection, frames in which some keypoint lies
 * behind the camera under T_sim alone (the LM starting point) are left out and
 * reported in `warnings`.
 */
inline PoseProblem make_pose_problem(const FittingContext& ctx, const KeypointSet& keypoints,
                                     std::vector<std::string>* warnings = nullptr)
{
    PoseProblem problem;
    problem.base_transform = ctx.sim;
    for (const auto& frame : keypoints)
    {
        FrameObservations fo{frame.camera, {}};
        bool valid = true;
        for (const auto& obs : frame.points)
        {
            const std::string key = "vertex:" + std::to_string(obs.vertex);
            const Eigen::Vector3d x = morphablemodel::synthesize_vertex(ctx.m(), ctx.alpha, obs.vertex);
            if (!(frame.camera.to_camera(ctx.sim(x)).z() >= camera::min_depth))
            {
                if (warnings)
                {
                    warnings->push_back("frame " + std::to_string(frame.camera.frame_id) +
                                        " left out of pose refinement: keypoint '" + obs.id + "' is behind the camera");
                }
                valid = false;
                break;
            }
            problem.model_points.emplace(key, x);
            fo.points.push_back({key, obs.pixel, obs.weight});
        }
        if (valid)
        {
            problem.frames.push_back(std::move(fo));
        }
    }
    return problem;
}

inline KeypointSet merge_features(const KeypointSet& fixed, const std::map<int, std::vector<VertexObservation>>& extra)
{
    KeypointSet merged = fixed;
    for (auto& frame : merged)
    {
        const auto it = extra.find(frame.camera.frame_id);
        if (it != extra.end())
        {
            frame.points.insert(frame.points.end(), it->second.begin(), it->second.end());
        }
    }
    return merged;
}

struct FitIterationResult
{
    morphablemodel::ShapeParams alpha;
    camera::SimilarityTransform sim;
    camera::RigidTransform opt;
    std::vector<IterationTrace> trace;
};

/**
 * One iteration: re-align T_sim to the anchors, refine T_opt with LM starting
 * from the identity, backproject the keypoints and solve for the shape. The
 * context is updated in place.
 */
inline IterationTrace fit_iteration(FittingContext& ctx, const KeypointSet& fixed,
                                    const DynamicFeatureSource& dynamic = {})
{
    validate(ctx);
    IterationTrace trace;
    trace.iteration = ctx.iteration;

    // Dynamic features follow the alignment of the previous iteration.
    const KeypointSet keypoints = dynamic ? merge_features(fixed, dynamic(ctx)) : fixed;

    realign_similarity(ctx);
    const PoseProblem problem = make_pose_problem(ctx, keypoints, &trace.warnings);
    auto [pose, report] = refine_pose(problem, camera::RigidTransform::identity(), ctx.lm);
    ctx.opt = pose;
    trace.pose_objective = report.final_objective;
    trace.lm_iterations = report.iterations;

    const Backprojection bp = backproject_keypoints(ctx, keypoints);
    trace.warnings.insert(trace.warnings.end(), bp.warnings.begin(), bp.warnings.end());
    ShapeSolveReport solve_report;
    ctx.alpha = solve_shape_step(ctx, bp, &solve_report);
    trace.shape_objective = solve_report.objective;
    trace.alpha_norm = ctx.alpha.alpha.norm();
    trace.frames_used = solve_report.frames_used;
    trace.warnings.insert(trace.warnings.end(), solve_report.warnings.begin(), solve_report.warnings.end());
    ++ctx.iteration;
    return trace;
}

/**
 * Alternates alignment and shape estimation for `n_iterations` rounds and
 * returns the final coefficients, transforms and per-iteration trace. If an
 * iteration fails, a FitAbortedError with the partial trace is thrown.
 */
inline FitIterationResult iterate_fit(FittingContext& ctx, const KeypointSet& keypoints, int n_iterations,
                                      const DynamicFeatureSource& dynamic = {})
{
    if (n_iterations < 1)
    {
        throw Error(ErrorKind::InvalidParams, "iterate_fit needs at least one iteration");
    }
    FitIterationResult result;
    for (int i = 0; i < n_iterations; ++i)
    {
        try
        {
            result.trace.push_back(fit_iteration(ctx, keypoints, dynamic));
        } catch (const Error& e)
        {
            throw FitAbortedError(e.kind(), "iteration " + std::to_string(ctx.iteration) + ": " + e.what(),
                                  result.trace);
        }
    }
    result.alpha = ctx.alpha;
    result.sim = ctx.sim;
    result.opt = ctx.opt;
    return result;
}

} /* namespace fitting */
} /* namespace headfit */

#endif /* HEADFIT_FITTING_SHAPE_SOLVER_HPP */
