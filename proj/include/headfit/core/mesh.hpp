/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/core/mesh.hpp
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

#ifndef HEADFIT_CORE_MESH_HPP
#define HEADFIT_CORE_MESH_HPP

#include "headfit/core/error.hpp"

#include "Eigen/Core"

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace headfit {

using Triangle = std::array<int, 3>;
using Topology = std::vector<Triangle>;

/**
 * A triangle mesh with arbitrary topology, e.g. a dense reconstruction coming
 * out of an MVS pipeline. Coordinates are in whatever units the producer used.
 */
struct TriangleMesh
{
    std::vector<Eigen::Vector3d> vertices;
    Topology triangles;

    bool empty() const noexcept { return vertices.empty() || triangles.empty(); }
};

/// Throws a Validation error if any triangle references an out-of-range vertex.
inline void validate_indices(const TriangleMesh& mesh)
{
    const int n = static_cast<int>(mesh.vertices.size());
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    {
        for (int idx : mesh.triangles[t])
        {
            if (idx < 0 || idx >= n)
            {
                throw Error(ErrorKind::Validation, "triangle " + std::to_string(t) + " references vertex " +
                                                       std::to_string(idx) + " of " + std::to_string(n));
            }
        }
    }
}

/**
 * A head instance generated from a morphable model. All instances of one model
 * share the same topology object.
 */
struct HeadMesh
{
    std::vector<Eigen::Vector3d> vertices;
    std::shared_ptr<const Topology> topology;

    std::size_t num_vertices() const noexcept { return vertices.size(); }

    TriangleMesh to_triangle_mesh() const
    {
        TriangleMesh m;
        m.vertices = vertices;
        if (topology)
        {
            m.triangles = *topology;
        }
        return m;
    }
};

} /* namespace headfit */

#endif /* HEADFIT_CORE_MESH_HPP */
