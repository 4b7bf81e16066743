/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/silhouette/rasterize.hpp
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

#ifndef HEADFIT_SILHOUETTE_RASTERIZE_HPP
#define HEADFIT_SILHOUETTE_RASTERIZE_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace headfit {
namespace silhouette {

/// Binary mask of one frame, row-major, 1 = covered.
struct SilhouetteMask
{
    int frame_id = 0;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    SilhouetteMask() = default;
    SilhouetteMask(int frame, int w, int h)
        : frame_id(frame), width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0)
    {
    }

    bool at(int col, int row) const
    {
        return col >= 0 && row >= 0 && col < width && row < height &&
               pixels[static_cast<std::size_t>(row) * width + col] != 0;
    }
    void set(int col, int row) { pixels[static_cast<std::size_t>(row) * width + col] = 1; }

    std::size_t count() const { return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), 1)); }
};

namespace detail {

inline double edge_function(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double px, double py)
{
    return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
}

} /* namespace detail */

/**
 * Sets every pixel of `mask` whose centre lies inside or on the boundary of
 * the 2D triangle (a, b, c). Degenerate triangles cover nothing.
 */
inline void fill_triangle(SilhouetteMask& mask, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                          const Eigen::Vector2d& c)
{
    const double area = detail::edge_function(a, b, c.x(), c.y());
    if (area == 0.0 || !std::isfinite(area))
    {
        return;
    }
    const double sign = area > 0.0 ? 1.0 : -1.0;
    const auto clamp_to = [](double x, int hi) { return std::clamp(x, -1.0, static_cast<double>(hi)); };
    const int c0 = std::max(0, static_cast<int>(std::ceil(clamp_to(std::min({a.x(), b.x(), c.x()}), mask.width))));
    const int c1 =
        std::min(mask.width - 1, static_cast<int>(std::floor(clamp_to(std::max({a.x(), b.x(), c.x()}), mask.width))));
    const int r0 = std::max(0, static_cast<int>(std::ceil(clamp_to(std::min({a.y(), b.y(), c.y()}), mask.height))));
    const int r1 = std::min(mask.height - 1,
                            static_cast<int>(std::floor(clamp_to(std::max({a.y(), b.y(), c.y()}), mask.height))));
    for (int row = r0; row <= r1; ++row)
    {
        for (int col = c0; col <= c1; ++col)
        {
            const double x = col, y = row;
            if (sign * detail::edge_function(a, b, x, y) >= 0.0 && sign * detail::edge_function(b, c, x, y) >= 0.0 &&
                sign * detail::edge_function(c, a, x, y) >= 0.0)
            {
                mask.set(col, row);
            }
        }
    }
}

/**
 * Binary silhouette of a mesh seen from `camera`: a pixel is set iff its
 * centre is covered by the projection of some triangle whose three vertices
 * are in front of the camera. No depth test is needed for a binary mask.
 * Triangles with a vertex behind the camera are skipped.
 */
inline SilhouetteMask rasterize_silhouette(const TriangleMesh& mesh, const camera::PerspectiveCamera& camera)
{
    SilhouetteMask mask(camera.frame_id, camera.width, camera.height);
    std::vector<Eigen::Vector2d> projected(mesh.vertices.size());
    std::vector<bool> in_front(mesh.vertices.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    {
        const Eigen::Vector3d cam = camera.to_camera(mesh.vertices[v]);
        in_front[v] = cam.z() >= camera::min_depth;
        if (in_front[v])
        {
            projected[v] = camera::project_camera_point(camera, cam);
        }
    }
    for (const auto& t : mesh.triangles)
    {
        if (in_front[t[0]] && in_front[t[1]] && in_front[t[2]])
        {
            fill_triangle(mask, projected[t[0]], projected[t[1]], projected[t[2]]);
        }
    }
    return mask;
}

} /* namespace silhouette */
} /* namespace headfit */

#endif /* HEADFIT_SILHOUETTE_RASTERIZE_HPP */
