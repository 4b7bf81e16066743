/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/pipeline/fit_pipeline.hpp
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

#ifndef HEADFIT_PIPELINE_FIT_PIPELINE_HPP
#define HEADFIT_PIPELINE_FIT_PIPELINE_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/head_angles.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/core/parallel.hpp"
#include "headfit/core/raycast.hpp"
#include "headfit/fitting/pose_refine.hpp"
#include "headfit/fitting/shape_solver.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"
#include "headfit/pipeline/scene.hpp"
#include "headfit/silhouette/rasterize.hpp"
#include "headfit/silhouette/reconstruction.hpp"
#include "headfit/silhouette/scalp_features.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace headfit {
namespace pipeline {

struct FrameSplit
{
    std::vector<int> fit;
    std::vector<int> held_out;
    std::vector<std::string> warnings;
};

/**
 * Frames with detector keypoints, split in half by alternating sorted frame
 * ids. The phase of the alternation is chosen so that `frontal_frame` lands
 * in the fit half.
 */
inline FrameSplit select_frontal_frames(const SceneInput& scene, int frontal_frame)
{
    std::vector<int> frames;
    for (const auto& [frame, points] : scene.keypoints)
    {
        if (!points.empty())
        {
            frames.push_back(frame);
        }
    }
    if (frames.empty())
    {
        throw Error(ErrorKind::UnfittableScene, "no frontal frames with keypoints");
    }
    const auto pos = std::find(frames.begin(), frames.end(), frontal_frame);
    const std::size_t phase = pos == frames.end() ? 0 : static_cast<std::size_t>(pos - frames.begin()) % 2;
    FrameSplit split;
    for (std::size_t i = 0; i < frames.size(); ++i)
    {
        (i % 2 == phase ? split.fit : split.held_out).push_back(frames[i]);
    }
    if (split.held_out.empty())
    {
        split.warnings.push_back("only one frontal frame; no frames held out for evaluation");
    }
    return split;
}

/**
 * One frame per azimuth bin. Bins are `azimuth_step` wide and centred on
 * multiples of the step (so the frontal direction, azimuth 0, is a bin
 * centre). Only frames with |elevation| <= elevation_limit qualify; within a
 * bin the frame closest to the centre wins, ties going to the smaller id.
 * Returned in bin order.
 */
inline std::vector<int> sample_pose_ring(const std::map<int, camera::HeadAngles>& angles, double azimuth_step,
                                         double elevation_limit, const std::set<int>& excluded = {})
{
    if (!(azimuth_step > 0.0) || azimuth_step > 360.0)
    {
        throw Error(ErrorKind::InvalidParams, "azimuth step must be in (0, 360]");
    }
    const int bins = static_cast<int>(std::ceil(360.0 / azimuth_step - 1e-9));
    std::vector<int> best(static_cast<std::size_t>(bins), -1);
    std::vector<double> best_dist(static_cast<std::size_t>(bins), 0.0);
    for (const auto& [frame, a] : angles)
    {
        if (excluded.count(frame) || std::abs(a.elevation) > elevation_limit)
        {
            continue;
        }
        const double az = camera::wrap_degrees_360(a.azimuth);
        const int bin = static_cast<int>(std::floor(az / azimuth_step + 0.5)) % bins;
        const double dist = camera::angular_distance_deg(az, bin * azimuth_step);
        auto& slot = best[static_cast<std::size_t>(bin)];
        if (slot < 0 || dist < best_dist[static_cast<std::size_t>(bin)])
        {
            slot = frame;
            best_dist[static_cast<std::size_t>(bin)] = dist;
        }
    }
    std::vector<int> out;
    for (int f : best)
    {
        if (f >= 0)
        {
            out.push_back(f);
        }
    }
    if (out.empty())
    {
        throw Error(ErrorKind::UnfittableScene, "no frame satisfies the elevation limit");
    }
    return out;
}

/**
 * A scene after pre-processing: the filtered dense reconstruction and a lazily
 * filled cache of its silhouettes. Safe to share between fits of the same
 * scene (e.g. a lambda sweep).
 */
class PreparedScene
{
public:
    PreparedScene(SceneInput scene, double edge_factor) : scene_(std::move(scene))
    {
        validate_scene(scene_);
        filtered_ = silhouette::filter_reconstruction(scene_.dense, edge_factor);
        frontal_frame_ = resolve_frontal_frame(scene_);
    }

    const SceneInput& scene() const noexcept { return scene_; }
    const TriangleMesh& filtered() const noexcept { return filtered_; }
    int frontal_frame() const noexcept { return frontal_frame_; }
    const morphablemodel::MorphableModel& model() const { return *scene_.model; }

    std::shared_ptr<const silhouette::SilhouetteMask> mask(int frame_id) const
    {
        {
            std::lock_guard lock(mutex_);
            const auto it = masks_.find(frame_id);
            if (it != masks_.end())
            {
                return it->second;
            }
        }
        auto m = std::make_shared<const silhouette::SilhouetteMask>(
            silhouette::rasterize_silhouette(filtered_, scene_.cameras.at(frame_id)));
        std::lock_guard lock(mutex_);
        return masks_.emplace(frame_id, std::move(m)).first->second;
    }

    /// Rasterizes the given frames up front, in parallel.
    void precompute_masks(const std::vector<int>& frames, int threads) const
    {
        std::vector<std::shared_ptr<const silhouette::SilhouetteMask>> out(frames.size());
        parallel_for(frames.size(), threads, [&](std::size_t i) { out[i] = mask(frames[i]); });
    }

private:
    SceneInput scene_;
    TriangleMesh filtered_;
    int frontal_frame_ = -1;
    mutable std::mutex mutex_;
    mutable std::map<int, std::shared_ptr<const silhouette::SilhouetteMask>> masks_;
};

struct StageTransforms
{
    camera::SimilarityTransform sim;
    camera::RigidTransform opt;

    camera::SimilarityTransform model_to_world() const { return opt * sim; }
};

struct FitResult
{
    morphablemodel::ShapeParams alpha_front;
    morphablemodel::ShapeParams alpha_final;
    /// Alignment of the mean head (Umeyama + LM on the stage-1 keypoints, no shape update).
    StageTransforms mean_alignment;
    StageTransforms stage1;
    StageTransforms stage2;
    /// Camera angles relative to the head after stage 1; azimuth 0 at the frontal frame.
    std::map<int, camera::HeadAngles> pose_angles;
    std::vector<fitting::IterationTrace> stage1_trace;
    std::vector<fitting::IterationTrace> stage2_trace;
    int frontal_frame = -1;
    std::vector<int> fit_frames;
    std::vector<int> held_out_frames;
    std::vector<int> stage2_frames;
    std::map<std::string, Eigen::Vector3d> anchors;
    std::vector<silhouette::ScalpCorrespondence> scalp_features;
    std::vector<std::string> warnings;
};

/// Raised by run_pipeline; the message is prefixed with the stage that failed.
class PipelineError : public Error
{
public:
    PipelineError(ErrorKind kind, std::string stage, const std::string& message)
        : Error(kind, stage + ": " + message), stage_(std::move(stage))
    {
    }
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/**
 * Positions of the frontal frame's facial keypoints on the dense
 * reconstruction, found by casting the keypoint rays onto the mesh.
 */
inline std::map<std::string, Eigen::Vector3d> lift_keypoints_to_mesh(const PreparedScene& prepared, int frame_id)
{
    const auto& scene = prepared.scene();
    const auto& cam = scene.cameras.at(frame_id);
    std::map<std::string, Eigen::Vector3d> anchors;
    const auto it = scene.keypoints.find(frame_id);
    if (it == scene.keypoints.end())
    {
        return anchors;
    }
    for (const auto& obs : it->second)
    {
        if (!is_facial_landmark(prepared.model(), obs.keypoint_id))
        {
            continue;
        }
        const Eigen::Vector3d dir = cam.rotation.transpose() * camera::backproject(cam, obs.pixel, 1.0).normalized();
        if (const auto hit = raycast(prepared.filtered(), cam.center(), dir))
        {
            anchors[obs.keypoint_id] = *hit;
        }
    }
    return anchors;
}

namespace detail {

inline fitting::FittingContext make_context(const PreparedScene& prepared, const PipelineConfig& config,
                                            const std::map<std::string, Eigen::Vector3d>& anchors)
{
    fitting::FittingContext ctx;
    ctx.model = prepared.scene().model;
    ctx.alpha = morphablemodel::ShapeParams::zero(prepared.model());
    ctx.lambda = config.lambda;
    ctx.anchors = anchors;
    ctx.lm = config.lm;
    ctx.eigenvalue_floor = config.eigenvalue_floor;
    ctx.min_frame_keypoints = config.min_frame_keypoints;
    fitting::realign_similarity(ctx);
    return ctx;
}

inline fitting::KeypointSet detector_keypoints(const PreparedScene& prepared, const std::vector<int>& frames)
{
    fitting::KeypointSet set;
    for (int f : frames)
    {
        fitting::FrameKeypoints fk{prepared.scene().cameras.at(f), {}};
        for (const auto& obs : prepared.scene().keypoints.at(f))
        {
            if (is_facial_landmark(prepared.model(), obs.keypoint_id))
            {
                fk.points.push_back(
                    {obs.keypoint_id, prepared.model().landmark_vertex(obs.keypoint_id), obs.pixel, obs.weight});
            }
        }
        set.push_back(std::move(fk));
    }
    return set;
}

} /* namespace detail */

struct Stage1Result
{
    FrameSplit split;
    std::map<std::string, Eigen::Vector3d> anchors;
    morphablemodel::ShapeParams alpha_front;
    StageTransforms transforms;
    StageTransforms mean_alignment;
    std::vector<fitting::IterationTrace> trace;
};

/**
 * Frontal fit: anchors from the frontal frame lifted onto the dense mesh give
 * the initial similarity alignment of the mean head, then the alternating
 * align/shape iteration runs on the facial keypoints of the fit half.
 */
inline Stage1Result stage1_frontal_fit(const PreparedScene& prepared, const PipelineConfig& config)
{
    Stage1Result out;
    out.split = select_frontal_frames(prepared.scene(), prepared.frontal_frame());
    out.anchors = lift_keypoints_to_mesh(prepared, prepared.frontal_frame());
    if (out.anchors.size() < 3)
    {
        throw Error(ErrorKind::UnfittableScene, "only " + std::to_string(out.anchors.size()) +
                                                    " frontal keypoints hit the dense reconstruction");
    }
    const fitting::KeypointSet keypoints = detail::detector_keypoints(prepared, out.split.fit);

    fitting::FittingContext ctx = detail::make_context(prepared, config, out.anchors);
    {
        fitting::FittingContext mean_ctx = ctx;
        const auto [pose, report] = fitting::refine_pose(fitting::make_pose_problem(mean_ctx, keypoints),
                                                         camera::RigidTransform::identity(), config.lm);
        out.mean_alignment = {mean_ctx.sim, pose};
    }
    const auto fit = fitting::iterate_fit(ctx, keypoints, config.iterations);
    out.alpha_front = fit.alpha;
    out.transforms = {fit.sim, fit.opt};
    out.trace = fit.trace;
    return out;
}

/// Camera angles of every frame relative to the head; azimuth 0 at the frontal frame.
inline std::map<int, camera::HeadAngles> relative_pose_angles(const PreparedScene& prepared,
                                                              const camera::SimilarityTransform& head_frame)
{
    std::map<int, camera::HeadAngles> angles;
    for (const auto& [frame, cam] : prepared.scene().cameras)
    {
        angles[frame] = camera::camera_head_angles(cam, head_frame);
    }
    const double origin = angles.at(prepared.frontal_frame()).azimuth;
    for (auto& [frame, a] : angles)
    {
        a.azimuth = camera::wrap_degrees_360(a.azimuth - origin);
    }
    return angles;
}

/**
 * Scalp correspondences of one frame for the current fit: model extrema of
 * the posed scalp region against silhouette extrema, both restricted to rows
 * above the ear line.
 */
inline std::vector<silhouette::ScalpCorrespondence>
scalp_correspondences(const PreparedScene& prepared, int frame_id, const std::vector<Eigen::Vector3d>& vertices,
                      const camera::SimilarityTransform& model_to_world)
{
    const auto& model = prepared.model();
    const auto& cam = prepared.scene().cameras.at(frame_id);
    double row_sum = 0.0;
    int rows = 0;
    for (const auto& id : model.group("ear"))
    {
        const Eigen::Vector3d c = cam.to_camera(model_to_world(vertices[static_cast<std::size_t>(model.landmark_vertex(id))]));
        if (c.z() >= camera::min_depth)
        {
            row_sum += camera::project_camera_point(cam, c).y();
            ++rows;
        }
    }
    if (rows == 0)
    {
        return {};
    }
    const int boundary = static_cast<int>(std::lround(row_sum / rows));
    const auto model_ext = silhouette::model_scalp_extrema(vertices, model.top_region(), cam, model_to_world, boundary);
    const auto mask_ext = silhouette::silhouette_scalp_extrema(*prepared.mask(frame_id), boundary);
    std::vector<silhouette::ScalpCorrespondence> out;
    for (const auto& me : model_ext)
    {
        for (const auto& se : mask_ext)
        {
            if (me.direction == se.direction)
            {
                out.push_back({frame_id, me.direction, me.vertex, Eigen::Vector2d(se.col, se.row)});
            }
        }
    }
    return out;
}

struct Stage2Result
{
    std::vector<int> frames;
    std::map<int, camera::HeadAngles> angles;
    morphablemodel::ShapeParams alpha_final;
    StageTransforms transforms;
    std::vector<fitting::IterationTrace> trace;
    std::vector<silhouette::ScalpCorrespondence> scalp_features;
};

/**
 * All-pose fit over frames sampled around the head. Facial keypoints come from
 * the detector where available and from projecting the stage-1 landmarks
 * otherwise; scalp features are re-derived from the current fit at the start
 * of every iteration. The shape restarts from the mean.
 */
inline Stage2Result stage2_allpose_fit(const PreparedScene& prepared, const Stage1Result& stage1,
                                       const PipelineConfig& config)
{
    const auto& model = prepared.model();
    const auto& scene = prepared.scene();
    Stage2Result out;
    const camera::SimilarityTransform head_frame = stage1.transforms.model_to_world();
    out.angles = relative_pose_angles(prepared, head_frame);
    const std::set<int> excluded(stage1.split.held_out.begin(), stage1.split.held_out.end());
    out.frames = sample_pose_ring(out.angles, config.azimuth_step, config.elevation_limit, excluded);
    if (config.use_scalp_features)
    {
        prepared.precompute_masks(out.frames, config.threads);
    }

    const std::set<int> fit_set(stage1.split.fit.begin(), stage1.split.fit.end());
    const HeadMesh front = morphablemodel::synthesize(model, stage1.alpha_front);
    fitting::KeypointSet keypoints;
    for (int f : out.frames)
    {
        const auto& cam = scene.cameras.at(f);
        if (fit_set.count(f))
        {
            keypoints.push_back(detail::detector_keypoints(prepared, {f}).front());
            continue;
        }
        fitting::FrameKeypoints fk{cam, {}};
        for (const auto& [id, vertex] : model.landmarks())
        {
            if (!is_facial_landmark(model, id))
            {
                continue;
            }
            const Eigen::Vector3d c = cam.to_camera(head_frame(front.vertices[static_cast<std::size_t>(vertex)]));
            if (c.z() >= camera::min_depth)
            {
                fk.points.push_back({id, vertex, camera::project_camera_point(cam, c), 1.0});
            }
        }
        keypoints.push_back(std::move(fk));
    }

    fitting::FittingContext ctx = detail::make_context(prepared, config, stage1.anchors);
    ctx.sim = stage1.transforms.sim;
    ctx.opt = stage1.transforms.opt;

    std::vector<silhouette::ScalpCorrespondence> last_features;
    fitting::DynamicFeatureSource scalp;
    if (config.use_scalp_features)
    {
        scalp = [&](const fitting::FittingContext& c) {
            const std::vector<Eigen::Vector3d> vertices = morphablemodel::synthesize(model, c.alpha).vertices;
            const camera::SimilarityTransform pose = c.model_to_world();
            std::vector<std::vector<silhouette::ScalpCorrespondence>> per_frame(out.frames.size());
            parallel_for(out.frames.size(), config.threads, [&](std::size_t i) {
                per_frame[i] = scalp_correspondences(prepared, out.frames[i], vertices, pose);
            });
            std::map<int, std::vector<fitting::VertexObservation>> extra;
            last_features.clear();
            for (const auto& frame_features : per_frame)
            {
                for (const auto& sc : frame_features)
                {
                    extra[sc.frame_id].push_back({std::string("scalp_") + silhouette::to_string(sc.direction),
                                                  sc.vertex, sc.pixel, config.scalp_weight});
                    last_features.push_back(sc);
                }
            }
            return extra;
        };
    }
    const auto fit = fitting::iterate_fit(ctx, keypoints, config.iterations, scalp);
    out.alpha_final = fit.alpha;
    out.transforms = {fit.sim, fit.opt};
    out.trace = fit.trace;
    out.scalp_features = last_features;
    return out;
}

/// Both stages on an already prepared scene.
inline FitResult run_pipeline(const PreparedScene& prepared, const PipelineConfig& config)
{
    FitResult result;
    result.frontal_frame = prepared.frontal_frame();
    Stage1Result s1;
    try
    {
        s1 = stage1_frontal_fit(prepared, config);
    } catch (const Error& e)
    {
        throw PipelineError(e.kind(), "stage1", e.what());
    }
    result.alpha_front = s1.alpha_front;
    result.stage1 = s1.transforms;
    result.mean_alignment = s1.mean_alignment;
    result.stage1_trace = s1.trace;
    result.fit_frames = s1.split.fit;
    result.held_out_frames = s1.split.held_out;
    result.anchors = s1.anchors;
    result.warnings = s1.split.warnings;

    Stage2Result s2;
    try
    {
        s2 = stage2_allpose_fit(prepared, s1, config);
    } catch (const Error& e)
    {
        throw PipelineError(e.kind(), "stage2", e.what());
    }
    result.alpha_final = s2.alpha_final;
    result.stage2 = s2.transforms;
    result.stage2_trace = s2.trace;
    result.pose_angles = s2.angles;
    result.stage2_frames = s2.frames;
    result.scalp_features = s2.scalp_features;
    for (const auto* trace : {&result.stage1_trace, &result.stage2_trace})
    {
        for (const auto& it : *trace)
        {
            result.warnings.insert(result.warnings.end(), it.warnings.begin(), it.warnings.end());
        }
    }
    return result;
}

inline FitResult run_pipeline(const SceneInput& scene, const PipelineConfig& config)
{
    std::unique_ptr<PreparedScene> prepared;
    try
    {
        prepared = std::make_unique<PreparedScene>(scene, config.edge_factor);
    } catch (const Error& e)
    {
        throw PipelineError(e.kind(), "preprocess", e.what());
    }
    return run_pipeline(*prepared, config);
}

} /* namespace pipeline */
} /* namespace headfit */

#endif /* HEADFIT_PIPELINE_FIT_PIPELINE_HPP */
