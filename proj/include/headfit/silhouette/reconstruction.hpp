/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/silhouette/reconstruction.hpp
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

#ifndef HEADFIT_SILHOUETTE_RECONSTRUCTION_HPP
#define HEADFIT_SILHOUETTE_RECONSTRUCTION_HPP

#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <numeric>
#include <vector>

namespace headfit {
namespace silhouette {

/// The dense reconstruction coming from the photogrammetry pipeline, in SfM world units.
using DenseReconstruction = TriangleMesh;

namespace detail {

class DisjointSets
{
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

    std::size_t find(std::size_t x)
    {
        while (parent_[x] != x)
        {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b)
    {
        a = find(a);
        b = find(b);
        if (a == b)
        {
            return;
        }
        // The smaller index becomes the root so labels are deterministic.
        if (b < a)
        {
            std::swap(a, b);
        }
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

/// Keeps only the triangles flagged in `keep`, then drops unreferenced vertices.
inline TriangleMesh compact(const TriangleMesh& mesh, const std::vector<bool>& keep)
{
    std::vector<int> remap(mesh.vertices.size(), -1);
    TriangleMesh out;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    {
        if (!keep[t])
        {
            continue;
        }
        Triangle tri;
        for (int k = 0; k < 3; ++k)
        {
            const int v = mesh.triangles[t][k];
            if (remap[v] < 0)
            {
                remap[v] = 0;
            }
            tri[k] = v;
        }
        out.triangles.push_back(tri);
    }
    int next = 0;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    {
        if (remap[v] >= 0)
        {
            remap[v] = next++;
            out.vertices.push_back(mesh.vertices[v]);
        }
    }
    for (auto& tri : out.triangles)
    {
        for (int& v : tri)
        {
            v = remap[v];
        }
    }
    return out;
}

inline double longest_edge(const TriangleMesh& mesh, const Triangle& t)
{
    const auto& a = mesh.vertices[t[0]];
    const auto& b = mesh.vertices[t[1]];
    const auto& c = mesh.vertices[t[2]];
    return std::max({(a - b).norm(), (b - c).norm(), (c - a).norm()});
}

} /* namespace detail */

/// Largest connected component by triangle count (ties: the component with the smallest vertex index).
inline TriangleMesh largest_component(const TriangleMesh& mesh)
{
    detail::DisjointSets sets(mesh.vertices.size());
    for (const auto& t : mesh.triangles)
    {
        sets.unite(t[0], t[1]);
        sets.unite(t[1], t[2]);
    }
    std::vector<std::size_t> tri_count(mesh.vertices.size(), 0);
    for (const auto& t : mesh.triangles)
    {
        ++tri_count[sets.find(t[0])];
    }
    std::size_t best = 0;
    for (std::size_t v = 0; v < tri_count.size(); ++v)
    {
        if (tri_count[v] > tri_count[best])
        {
            best = v;
        }
    }
    std::vector<bool> keep(mesh.triangles.size());
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    {
        keep[t] = sets.find(mesh.triangles[t][0]) == best;
    }
    return detail::compact(mesh, keep);
}

/// Median over all triangle edges (each triangle contributes its three edges).
inline double median_edge_length(const TriangleMesh& mesh)
{
    std::vector<double> lengths;
    lengths.reserve(3 * mesh.triangles.size());
    for (const auto& t : mesh.triangles)
    {
        for (int k = 0; k < 3; ++k)
        {
            lengths.push_back((mesh.vertices[t[k]] - mesh.vertices[t[(k + 1) % 3]]).norm());
        }
    }
    if (lengths.empty())
    {
        return 0.0;
    }
    const auto mid = lengths.begin() + static_cast<std::ptrdiff_t>(lengths.size() / 2);
    std::nth_element(lengths.begin(), mid, lengths.end());
    return *mid;
}

/**
 * Cleans a raw dense reconstruction: keep the largest connected component,
 * remove triangles whose longest edge exceeds edge_factor times the median
 * edge length, drop orphaned vertices. The two steps are repeated until the
 * mesh stops changing, which makes the filter idempotent.
 */
inline DenseReconstruction filter_reconstruction(const DenseReconstruction& raw, double edge_factor = 8.0)
{
    if (raw.empty())
    {
        throw Error(ErrorKind::EmptyInput, "dense reconstruction is empty");
    }
    if (!(edge_factor > 0.0))
    {
        throw Error(ErrorKind::InvalidParams, "edge factor must be positive");
    }
    validate_indices(raw);

    TriangleMesh mesh = raw;
    for (int round = 0; round < 100; ++round)
    {
        const std::size_t before = mesh.triangles.size();
        mesh = largest_component(mesh);
        const double limit = edge_factor * median_edge_length(mesh);
        std::vector<bool> keep(mesh.triangles.size());
        for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
        {
            keep[t] = detail::longest_edge(mesh, mesh.triangles[t]) <= limit;
        }
        mesh = detail::compact(mesh, keep);
        if (mesh.triangles.empty())
        {
            throw Error(ErrorKind::OverFiltered, "filtering removed every triangle");
        }
        if (mesh.triangles.size() == before)
        {
            break;
        }
    }
    return mesh;
}

} /* namespace silhouette */
} /* namespace headfit */

#endif /* HEADFIT_SILHOUETTE_RECONSTRUCTION_HPP */
