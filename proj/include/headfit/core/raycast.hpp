/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/core/raycast.hpp
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

#ifndef HEADFIT_CORE_RAYCAST_HPP
#define HEADFIT_CORE_RAYCAST_HPP

#include "headfit/core/mesh.hpp"

#include "Eigen/Core"

#include <cmath>
#include <limits>
#include <optional>

namespace headfit {

/// Barycentric slack so that rays through shared edges and vertices hit at least one triangle.
inline constexpr double barycentric_tolerance = 1e-10;

/// Möller-Trumbore ray/triangle test; returns the ray parameter of the hit (> 0).
inline std::optional<double> intersect_triangle(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                                const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                                const Eigen::Vector3d& c)
{
    const Eigen::Vector3d e1 = b - a;
    const Eigen::Vector3d e2 = c - a;
    const Eigen::Vector3d p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-300)
    {
        return std::nullopt;
    }
    const double inv = 1.0 / det;
    const Eigen::Vector3d s = origin - a;
    const double u = s.dot(p) * inv;
    if (u < -barycentric_tolerance || u > 1.0 + barycentric_tolerance)
    {
        return std::nullopt;
    }
    const Eigen::Vector3d q = s.cross(e1);
    const double v = dir.dot(q) * inv;
    if (v < -barycentric_tolerance || u + v > 1.0 + barycentric_tolerance)
    {
        return std::nullopt;
    }
    const double t = e2.dot(q) * inv;
    if (!(t > 0.0))
    {
        return std::nullopt;
    }
    return t;
}

/// Nearest intersection of a ray with a mesh (brute force over all triangles).
inline std::optional<Eigen::Vector3d> raycast(const TriangleMesh& mesh, const Eigen::Vector3d& origin,
                                              const Eigen::Vector3d& dir)
{
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : mesh.triangles)
    {
        const auto hit = intersect_triangle(origin, dir, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        if (hit && *hit < best)
        {
            best = *hit;
        }
    }
    if (!std::isfinite(best))
    {
        return std::nullopt;
    }
    return origin + best * dir;
}

} /* namespace headfit */

#endif /* HEADFIT_CORE_RAYCAST_HPP */
