/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/eval/metrics.hpp
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

#ifndef HEADFIT_EVAL_METRICS_HPP
#define HEADFIT_EVAL_METRICS_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/camera/umeyama.hpp"
#include "headfit/core/error.hpp"
#include "headfit/core/kdtree.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/core/parallel.hpp"
#include "headfit/fitting/pose_refine.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace headfit {
namespace eval {

struct MetricReport
{
    std::string metric;
    double value = 0.0;
    std::string units;
    std::string subset;
    std::size_t frame_count = 0;
    std::size_t point_count = 0;
};

/// A fitted head: canonical model-space vertices plus the map into SfM world space.
struct AlignedHead
{
    HeadMesh canonical;
    camera::SimilarityTransform to_world;

    std::vector<Eigen::Vector3d> world_vertices() const
    {
        std::vector<Eigen::Vector3d> out;
        out.reserve(canonical.vertices.size());
        for (const auto& v : canonical.vertices)
        {
            out.push_back(to_world(v));
        }
        return out;
    }
};

/**
 * Head width: distance, in the space of `to_world`, between the scalp-region
 * vertices with the smallest and largest canonical x coordinate (ties go to
 * the smaller vertex index).
 */
inline double head_width(std::span<const Eigen::Vector3d> canonical, std::span<const int> top_region,
                         const camera::SimilarityTransform& to_world = {})
{
    if (top_region.empty())
    {
        throw Error(ErrorKind::EmptyInput, "head width needs a non-empty scalp region");
    }
    int left = top_region.front(), right = top_region.front();
    for (int v : top_region)
    {
        const double x = canonical[static_cast<std::size_t>(v)].x();
        const double lx = canonical[static_cast<std::size_t>(left)].x();
        const double rx = canonical[static_cast<std::size_t>(right)].x();
        if (x < lx || (x == lx && v < left))
        {
            left = v;
        }
        if (x > rx || (x == rx && v < right))
        {
            right = v;
        }
    }
    return (to_world(canonical[static_cast<std::size_t>(left)]) - to_world(canonical[static_cast<std::size_t>(right)]))
        .norm();
}

/**
 * Mean distance from each scalp-region vertex of the aligned fit to its
 * nearest reference vertex, divided by the head width of the aligned fit and
 * expressed in millimetres for a head of `head_width_mm`.
 *
 * With `symmetric`, the reverse direction (reference vertices whose nearest
 * fitted vertex lies in the scalp region, to that region) is averaged in.
 */
inline MetricReport chamfer_scalp(const AlignedHead& fitted, const TriangleMesh& reference,
                                  std::span<const int> top_region, double head_width_mm = 160.0,
                                  bool symmetric = false, int threads = 1)
{
    if (reference.vertices.empty())
    {
        throw Error(ErrorKind::EmptyInput, "chamfer: empty reference");
    }
    if (top_region.empty())
    {
        throw Error(ErrorKind::EmptyInput, "chamfer: empty scalp region");
    }
    const double width = head_width(fitted.canonical.vertices, top_region, fitted.to_world);
    if (!(width > 0.0))
    {
        throw Error(ErrorKind::DegenerateConfiguration, "chamfer: aligned head width is zero");
    }
    const std::vector<Eigen::Vector3d> world = fitted.world_vertices();
    std::vector<Eigen::Vector3d> region;
    region.reserve(top_region.size());
    for (int v : top_region)
    {
        region.push_back(world[static_cast<std::size_t>(v)]);
    }

    const KdTree3 ref_tree(reference.vertices);
    std::vector<double> dist(region.size());
    parallel_for(region.size(), threads, [&](std::size_t i) { dist[i] = std::sqrt(ref_tree.nearest(region[i]).second); });
    double forward = 0.0;
    for (double d : dist)
    {
        forward += d;
    }
    forward /= static_cast<double>(dist.size());
    double mean = forward;

    if (symmetric)
    {
        std::vector<bool> in_region(world.size(), false);
        for (int v : top_region)
        {
            in_region[static_cast<std::size_t>(v)] = true;
        }
        const KdTree3 fit_tree(world);
        const KdTree3 region_tree(region);
        std::vector<double> back(reference.vertices.size(), -1.0);
        parallel_for(reference.vertices.size(), threads, [&](std::size_t i) {
            const auto& p = reference.vertices[i];
            if (in_region[fit_tree.nearest(p).first])
            {
                back[i] = std::sqrt(region_tree.nearest(p).second);
            }
        });
        double sum = 0.0;
        std::size_t count = 0;
        for (double d : back)
        {
            if (d >= 0.0)
            {
                sum += d;
                ++count;
            }
        }
        if (count > 0)
        {
            mean = 0.5 * (forward + sum / static_cast<double>(count));
        }
    }
    return {"chamfer_scalp", mean / width * head_width_mm, "mm", symmetric ? "scalp-symmetric" : "scalp", 0,
            region.size()};
}

enum class LandmarkSubset { All, NoJawline, JawlineOnly };

inline const char* to_string(LandmarkSubset s)
{
    switch (s)
    {
    case LandmarkSubset::All: return "all";
    case LandmarkSubset::NoJawline: return "no_jawline";
    case LandmarkSubset::JawlineOnly: return "jawline_only";
    }
    return "unknown";
}

/**
 * RMS over (frame, keypoint) pairs of the distance between the projected
 * model landmark and the observed keypoint. Jawline membership comes from the
 * model's "jawline" landmark group.
 */
inline MetricReport rms_reprojection(const AlignedHead& fitted, const morphablemodel::MorphableModel& model,
                                     const std::map<int, camera::PerspectiveCamera>& cameras,
                                     const std::map<int, std::vector<fitting::Observation>>& keypoints,
                                     LandmarkSubset subset = LandmarkSubset::All)
{
    double sum = 0.0;
    std::size_t count = 0, frames = 0;
    for (const auto& [frame_id, points] : keypoints)
    {
        const auto cam_it = cameras.find(frame_id);
        if (cam_it == cameras.end())
        {
            throw Error(ErrorKind::Validation, "rms: no camera for frame " + std::to_string(frame_id));
        }
        bool used = false;
        for (const auto& obs : points)
        {
            const bool jaw = model.in_group("jawline", obs.keypoint_id);
            if ((subset == LandmarkSubset::NoJawline && jaw) || (subset == LandmarkSubset::JawlineOnly && !jaw))
            {
                continue;
            }
            const int v = model.landmark_vertex(obs.keypoint_id);
            const Eigen::Vector2d px =
                camera::project(cam_it->second, fitted.to_world(fitted.canonical.vertices[static_cast<std::size_t>(v)]));
            sum += (px - obs.pixel).squaredNorm();
            ++count;
            used = true;
        }
        frames += used ? 1 : 0;
    }
    if (count == 0)
    {
        throw Error(ErrorKind::EmptyInput, std::string("rms: no keypoints in subset ") + to_string(subset));
    }
    return {"rms_reprojection", std::sqrt(sum / static_cast<double>(count)), "px", to_string(subset), frames, count};
}

struct HeadRatios
{
    double height_over_width = 0.0;
    double height_over_length = 0.0;
    double portrait_width = 0.0;
    double portrait_height = 0.0;
    double lateral_length = 0.0;
    double lateral_height = 0.0;
};

/**
 * Projects every head vertex into a portrait (frontal) and a lateral view and
 * measures the pixel extents: width and height in the portrait view, length
 * and height in the lateral view.
 */
inline HeadRatios anthropometric_ratios(const AlignedHead& fitted, const camera::PerspectiveCamera& portrait,
                                        const camera::PerspectiveCamera& lateral)
{
    const auto extents = [&](const camera::PerspectiveCamera& cam) {
        Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
        Eigen::Vector2d hi = -lo;
        for (const auto& v : fitted.canonical.vertices)
        {
            const Eigen::Vector2d px = camera::project(cam, fitted.to_world(v));
            lo = lo.cwiseMin(px);
            hi = hi.cwiseMax(px);
        }
        return Eigen::Vector2d(hi - lo);
    };
    if (fitted.canonical.vertices.empty())
    {
        throw Error(ErrorKind::EmptyInput, "ratios: empty mesh");
    }
    const Eigen::Vector2d p = extents(portrait);
    const Eigen::Vector2d l = extents(lateral);
    HeadRatios r;
    r.portrait_width = p.x();
    r.portrait_height = p.y();
    r.lateral_length = l.x();
    r.lateral_height = l.y();
    r.height_over_width = p.y() / p.x();
    r.height_over_length = l.y() / l.x();
    return r;
}

struct ConsistencyReport
{
    double head_percent = 0.0;
    double face_percent = 0.0;
    double scalp_percent = 0.0;
};

/**
 * Mean per-vertex displacement between two fits of the same subject, as a
 * percentage of head width. Each fit is scaled to unit head width about its
 * centroid, then b is rigidly aligned onto a over all vertices.
 */
inline ConsistencyReport vertex_displacement_consistency(const AlignedHead& a, const AlignedHead& b,
                                                         std::span<const int> face_region,
                                                         std::span<const int> top_region)
{
    if (a.canonical.vertices.size() != b.canonical.vertices.size() ||
        (a.canonical.topology && b.canonical.topology && a.canonical.topology != b.canonical.topology &&
         *a.canonical.topology != *b.canonical.topology))
    {
        throw Error(ErrorKind::TopologyMismatch, "consistency: fits do not share a topology");
    }
    const auto normalised = [&](const AlignedHead& h) {
        std::vector<Eigen::Vector3d> w = h.world_vertices();
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (const auto& p : w)
        {
            c += p;
        }
        c /= static_cast<double>(w.size());
        const double width = head_width(h.canonical.vertices, top_region, h.to_world);
        for (auto& p : w)
        {
            p = (p - c) / width;
        }
        return w;
    };
    const std::vector<Eigen::Vector3d> pa = normalised(a);
    const std::vector<Eigen::Vector3d> pb = normalised(b);
    const camera::SimilarityTransform b_to_a = camera::umeyama_fit(pb, pa, false);

    const auto mean_percent = [&](auto&& indices, std::size_t n) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto v = static_cast<std::size_t>(indices(i));
            sum += (b_to_a(pb[v]) - pa[v]).norm();
        }
        return n == 0 ? 0.0 : 100.0 * sum / static_cast<double>(n);
    };
    ConsistencyReport r;
    r.head_percent = mean_percent([](std::size_t i) { return static_cast<int>(i); }, pa.size());
    r.face_percent = mean_percent([&](std::size_t i) { return face_region[i]; }, face_region.size());
    r.scalp_percent = mean_percent([&](std::size_t i) { return top_region[i]; }, top_region.size());
    return r;
}

} /* namespace eval */
} /* namespace headfit */

#endif /* HEADFIT_EVAL_METRICS_HPP */
