/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/silhouette/scalp_features.hpp
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

#ifndef HEADFIT_SILHOUETTE_SCALP_FEATURES_HPP
#define HEADFIT_SILHOUETTE_SCALP_FEATURES_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/silhouette/rasterize.hpp"

#include "Eigen/Core"

#include <optional>
#include <span>
#include <limits>
#include <vector>

namespace headfit {
namespace silhouette {

enum class ScalpDirection { Left, Right, Top };

inline const char* to_string(ScalpDirection d)
{
    switch (d)
    {
    case ScalpDirection::Left: return "left";
    case ScalpDirection::Right: return "right";
    case ScalpDirection::Top: return "top";
    }
    return "unknown";
}

struct ModelExtremum
{
    ScalpDirection direction;
    int vertex;
    Eigen::Vector2d pixel;
};

struct MaskExtremum
{
    ScalpDirection direction;
    int col;
    int row;
};

/// Matched scalp feature of one frame: a model vertex and the silhouette pixel it should project to.
struct ScalpCorrespondence
{
    int frame_id = 0;
    ScalpDirection direction = ScalpDirection::Left;
    int vertex = 0;
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

/**
 * Left-most (min u), right-most (max u) and top-most (min v) projections of
 * the scalp-region vertices of a head posed by `model_to_world`. Vertices
 * behind the camera or projecting at or below `max_row` are ignored; ties go
 * to the smallest vertex index.
 * Returns an empty vector when no region vertex is in front of the camera.
 */
inline std::vector<ModelExtremum> model_scalp_extrema(std::span<const Eigen::Vector3d> vertices,
                                                      std::span<const int> top_region,
                                                      const camera::PerspectiveCamera& camera,
                                                      const camera::SimilarityTransform& model_to_world,
                                                      double max_row = std::numeric_limits<double>::infinity())
{
    std::vector<std::pair<int, Eigen::Vector2d>> projected;
    projected.reserve(top_region.size());
    for (int v : top_region)
    {
        const Eigen::Vector3d cam = camera.to_camera(model_to_world(vertices[static_cast<std::size_t>(v)]));
        if (cam.z() >= camera::min_depth)
        {
            const Eigen::Vector2d px = camera::project_camera_point(camera, cam);
            if (px.y() < max_row)
            {
                projected.emplace_back(v, px);
            }
        }
    }
    if (projected.empty())
    {
        return {};
    }
    // key(px) is minimised.
    const auto extremum = [&](ScalpDirection dir, auto key) {
        const auto* best = &projected.front();
        for (const auto& p : projected)
        {
            const double k = key(p.second), kb = key(best->second);
            if (k < kb || (k == kb && p.first < best->first))
            {
                best = &p;
            }
        }
        return ModelExtremum{dir, best->first, best->second};
    };
    return {extremum(ScalpDirection::Left, [](const Eigen::Vector2d& p) { return p.x(); }),
            extremum(ScalpDirection::Right, [](const Eigen::Vector2d& p) { return -p.x(); }),
            extremum(ScalpDirection::Top, [](const Eigen::Vector2d& p) { return p.y(); })};
}

/**
 * Left-most, right-most and top-most set pixels of the mask restricted to rows
 * above `upper_boundary_row` (rows < boundary). A flat extremal run, e.g. the
 * whole top row of a disc, is resolved to its middle pixel in row-major order
 * (lower middle for even counts). Returns an empty vector for an empty submask.
 */
inline std::vector<MaskExtremum> silhouette_scalp_extrema(const SilhouetteMask& mask, int upper_boundary_row)
{
    const int rows = std::clamp(upper_boundary_row, 0, mask.height);
    int min_col = mask.width, max_col = -1, min_row = -1;
    for (int r = 0; r < rows; ++r)
    {
        for (int c = 0; c < mask.width; ++c)
        {
            if (mask.at(c, r))
            {
                min_col = std::min(min_col, c);
                max_col = std::max(max_col, c);
                if (min_row < 0)
                {
                    min_row = r;
                }
            }
        }
    }
    if (max_col < 0)
    {
        return {};
    }
    std::vector<std::pair<int, int>> left_run, right_run, top_run; // (row, col) in row-major order
    for (int r = 0; r < rows; ++r)
    {
        if (mask.at(min_col, r))
        {
            left_run.emplace_back(r, min_col);
        }
        if (mask.at(max_col, r))
        {
            right_run.emplace_back(r, max_col);
        }
    }
    for (int c = 0; c < mask.width; ++c)
    {
        if (mask.at(c, min_row))
        {
            top_run.emplace_back(min_row, c);
        }
    }
    const auto middle = [](const std::vector<std::pair<int, int>>& run) { return run[(run.size() - 1) / 2]; };
    const auto [lr, lc] = middle(left_run);
    const auto [rr, rc] = middle(right_run);
    const auto [tr, tc] = middle(top_run);
    return {{ScalpDirection::Left, lc, lr}, {ScalpDirection::Right, rc, rr}, {ScalpDirection::Top, tc, tr}};
}

/// True if the pixel is set and one of its 4-neighbours is unset or outside the image.
inline bool is_boundary_pixel(const SilhouetteMask& mask, int col, int row)
{
    return mask.at(col, row) &&
           (!mask.at(col - 1, row) || !mask.at(col + 1, row) || !mask.at(col, row - 1) || !mask.at(col, row + 1));
}

} /* namespace silhouette */
} /* namespace headfit */

#endif /* HEADFIT_SILHOUETTE_SCALP_FEATURES_HPP */
