/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/pipeline/scene.hpp
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

#ifndef HEADFIT_PIPELINE_SCENE_HPP
#define HEADFIT_PIPELINE_SCENE_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/fitting/pose_refine.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace headfit {
namespace pipeline {

/**
 * Everything the fit consumes: the model, per-frame cameras, detector
 * keypoints of the frames where a face was found, the raw dense
 * reconstruction and the frame used for the initial alignment (-1 picks the
 * keypoint frame with the most keypoints, smallest id on ties).
 */
struct SceneInput
{
    std::shared_ptr<const morphablemodel::MorphableModel> model;
    std::map<int, camera::PerspectiveCamera> cameras;
    std::map<int, std::vector<fitting::Observation>> keypoints;
    TriangleMesh dense;
    int frontal_frame = -1;
};

/// Tunables of the two-stage fit.
struct PipelineConfig
{
    double lambda = 100.0;
    int iterations = 9;
    double azimuth_step = 15.0;
    double elevation_limit = 30.0;
    double edge_factor = 8.0;
    double scalp_weight = 1.0;
    bool use_scalp_features = true;
    int min_frame_keypoints = 4;
    double eigenvalue_floor = 1e-8;
    fitting::LMSettings lm;
    std::uint64_t seed = 0;
    int threads = 1;
};

inline bool is_facial_landmark(const morphablemodel::MorphableModel& model, const std::string& id)
{
    return model.in_group("face", id) || model.in_group("jawline", id);
}

inline int resolve_frontal_frame(const SceneInput& scene)
{
    if (scene.frontal_frame >= 0)
    {
        return scene.frontal_frame;
    }
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [frame, points] : scene.keypoints)
    {
        if (points.size() > best_count)
        {
            best = frame;
            best_count = points.size();
        }
    }
    if (best < 0)
    {
        throw Error(ErrorKind::UnfittableScene, "no frame has facial keypoints");
    }
    return best;
}

/**
 * Cross-checks a scene: the model is present, every camera is valid, every
 * keypoint frame has a camera, every keypoint id exists in the landmark table
 * and the frontal frame has at least 6 facial keypoints.
 */
inline void validate_scene(const SceneInput& scene)
{
    if (!scene.model)
    {
        throw Error(ErrorKind::Validation, "scene has no model");
    }
    for (const auto& [id, cam] : scene.cameras)
    {
        if (cam.frame_id != id)
        {
            throw Error(ErrorKind::Validation, "camera keyed by frame " + std::to_string(id) + " carries frame id " +
                                                   std::to_string(cam.frame_id));
        }
        cam.validate();
    }
    for (const auto& [frame, points] : scene.keypoints)
    {
        if (!scene.cameras.count(frame))
        {
            throw Error(ErrorKind::Validation, "keypoints of frame " + std::to_string(frame) + " have no camera");
        }
        for (const auto& p : points)
        {
            if (!scene.model->has_landmark(p.keypoint_id))
            {
                throw Error(ErrorKind::Validation, "keypoint id '" + p.keypoint_id + "' in frame " +
                                                       std::to_string(frame) + " is not in the model landmark table");
            }
            if (!p.pixel.allFinite())
            {
                throw Error(ErrorKind::Validation, "non-finite keypoint in frame " + std::to_string(frame));
            }
        }
    }
    validate_indices(scene.dense);
    if (scene.keypoints.empty())
    {
        throw Error(ErrorKind::UnfittableScene, "no frame has facial keypoints");
    }
    const int frontal = resolve_frontal_frame(scene);
    const auto it = scene.keypoints.find(frontal);
    std::size_t facial = 0;
    if (it != scene.keypoints.end())
    {
        for (const auto& p : it->second)
        {
            facial += is_facial_landmark(*scene.model, p.keypoint_id) ? 1 : 0;
        }
    }
    if (facial < 6)
    {
        throw Error(ErrorKind::UnfittableScene, "frontal frame " + std::to_string(frontal) + " has " +
                                                    std::to_string(facial) + " facial keypoints, need at least 6");
    }
}

} /* namespace pipeline */
} /* namespace headfit */

#endif /* HEADFIT_PIPELINE_SCENE_HPP */
