/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/synth/scene_generator.hpp
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

#ifndef HEADFIT_SYNTH_SCENE_GENERATOR_HPP
#define HEADFIT_SYNTH_SCENE_GENERATOR_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/core/random.hpp"
#include "headfit/core/raycast.hpp"
#include "headfit/eval/metrics.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"
#include "headfit/morphablemodel/model_builder.hpp"
#include "headfit/pipeline/scene.hpp"

#include "Eigen/Core"
#include "Eigen/Eigenvalues"
#include "Eigen/Geometry"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace headfit {
namespace synth {

enum class Deformation {
    /// alpha ~ N(0, scale^2 diag(eigenvalues)).
    random,
    /// A prior sample restricted to the components whose energy lies mostly in the scalp region.
    scalp
};

struct NoiseSpec
{
    /// Keypoint pixel noise standard deviation.
    double pixel_sigma = 1.0;
    /// Dense-mesh vertex jitter standard deviation, as a fraction of the head width.
    double mesh_jitter = 0.003;
    /// Probability of deleting each dense-mesh triangle.
    double hole_probability = 0.02;
    /// Adds a detached 12-triangle cube five head widths away.
    bool background = true;

    static NoiseSpec none() { return {0.0, 0.0, 0.0, false}; }
};

/**
 * Camera orbit around the head, in canonical model units (mm). Frame n sits at
 * azimuth 360 n / N and elevation max_elevation * sin(2 pi elevation_cycles n / N),
 * looking at the head origin with the head's +y as up. Frame 0 is frontal.
 */
struct OrbitSpec
{
    int num_frames = 72;
    double radius = 550.0;
    double max_elevation = 25.0;
    double elevation_cycles = 2.0;
    double focal = 1500.0;
    int width = 1080;
    int height = 1920;
    /// Frames within this azimuth of the front receive detector keypoints.
    double keypoint_azimuth = 50.0;
};

struct SyntheticSpec
{
    Deformation deformation = Deformation::random;
    double shape_scale = 1.0;
    /// Fraction of a component's energy that must lie in the scalp region for Deformation::scalp.
    double scalp_energy_ratio = 0.75;
    /// Range of the model-to-world scale of the ground truth similarity.
    double min_world_scale = 0.004;
    double max_world_scale = 0.01;
    double max_world_offset = 1.0;
    OrbitSpec orbit;
    NoiseSpec noise;
};

/// Ground truth and generation parameters of one synthetic scene.
struct SyntheticScene
{
    morphablemodel::ShapeParams alpha;
    /// Ground truth model-to-world similarity (T_opt folded in, so the true T_opt is the identity).
    camera::SimilarityTransform model_to_world;
    HeadMesh mesh;
    /// Noiseless projections of the observed keypoints, same layout as the scene keypoints.
    std::map<int, std::vector<fitting::Observation>> exact_keypoints;
    /// Head-centred camera angles per frame, degrees.
    std::map<int, std::pair<double, double>> orbit_angles;
    double head_width = 0.0;
    SyntheticSpec spec;
    std::uint64_t seed = 0;
};

namespace detail {

enum Stream : std::uint64_t { shape_stream = 1, pose_stream, keypoint_stream, jitter_stream, hole_stream };

inline Eigen::Matrix3d random_rotation(Rng& rng)
{
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q.toRotationMatrix();
}

/// Rotation whose rows are the camera axes (x right, y down, z forward) expressed in head coordinates.
inline Eigen::Matrix3d look_at_origin(const Eigen::Vector3d& center_head)
{
    const Eigen::Vector3d z = -center_head.normalized();
    Eigen::Vector3d up(0.0, 1.0, 0.0);
    if (std::abs(z.dot(up)) > 1.0 - 1e-9)
    {
        up = Eigen::Vector3d(0.0, 0.0, 1.0);
    }
    const Eigen::Vector3d y = (-(up - up.dot(z) * z)).normalized();
    const Eigen::Vector3d x = y.cross(z);
    Eigen::Matrix3d r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    return r;
}

/// Components whose unit-norm displacement has at least `ratio` of its energy in the scalp region.
inline Eigen::MatrixXd scalp_subspace(const morphablemodel::MorphableModel& model, double ratio)
{
    const int n = model.num_components();
    Eigen::MatrixXd top = Eigen::MatrixXd::Zero(n, n);
    for (int v : model.top_region())
    {
        const auto rows = model.components_at(v);
        top.noalias() += rows.transpose() * rows;
    }
    const Eigen::MatrixXd gram = model.components().transpose() * model.components();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(top, gram);
    std::vector<int> keep;
    for (int i = n - 1; i >= 0; --i)
    {
        if (solver.eigenvalues()(i) >= ratio || keep.empty())
        {
            keep.push_back(i);
        }
    }
    Eigen::MatrixXd basis(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k)
    {
        basis.col(static_cast<Eigen::Index>(k)) = solver.eigenvectors().col(keep[k]);
    }
    return basis;
}

} /* namespace detail */

/**
 * Ground-truth coefficients for the given deformation type. Scalp
 * deformations project a prior sample onto the scalp-dominated subspace and
 * rescale it to the RMS displacement of the original sample.
 */
inline morphablemodel::ShapeParams sample_ground_truth(const morphablemodel::MorphableModel& model,
                                                       const SyntheticSpec& spec, std::uint64_t seed)
{
    morphablemodel::ShapeParams alpha =
        morphablemodel::sample_random_shape(model, spec.shape_scale, derive_seed(seed, detail::shape_stream));
    if (spec.deformation == Deformation::random)
    {
        return alpha;
    }
    const Eigen::MatrixXd basis = detail::scalp_subspace(model, spec.scalp_energy_ratio);
    const Eigen::MatrixXd gram = model.components().transpose() * model.components();
    // Gram-orthogonal projection onto span(basis).
    const Eigen::MatrixXd bgb = basis.transpose() * gram * basis;
    Eigen::VectorXd projected = basis * bgb.ldlt().solve(basis.transpose() * gram * alpha.alpha);
    const double original = std::sqrt(alpha.alpha.dot(gram * alpha.alpha));
    const double now = std::sqrt(projected.dot(gram * projected));
    if (now > 0.0)
    {
        projected *= original / now;
    }
    return {projected};
}

/// Camera of orbit frame `n` for a head placed by `model_to_world`.
inline camera::PerspectiveCamera orbit_camera(const OrbitSpec& orbit, int n, const camera::SimilarityTransform& model_to_world)
{
    const double az = 360.0 * n / orbit.num_frames;
    const double el = orbit.max_elevation *
                      std::sin(2.0 * std::numbers::pi * orbit.elevation_cycles * n / orbit.num_frames);
    const Eigen::Vector3d center_head = orbit.radius * morphablemodel::detail::direction_from_angles(az, el);
    const Eigen::Matrix3d r = detail::look_at_origin(center_head) * model_to_world.rotation.transpose();
    const Eigen::Vector3d center_world = model_to_world(center_head);
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = orbit.focal;
    k(1, 1) = orbit.focal;
    k(0, 2) = 0.5 * (orbit.width - 1);
    k(1, 2) = 0.5 * (orbit.height - 1);
    return {n, k, r, -(r * center_world), orbit.width, orbit.height};
}

/// Whether the segment from the camera centre to `point` reaches it before any other surface.
inline bool is_visible(const TriangleMesh& mesh, const Eigen::Vector3d& eye, const Eigen::Vector3d& point)
{
    const Eigen::Vector3d d = point - eye;
    const double dist = d.norm();
    const auto hit = raycast(mesh, eye, d / dist);
    return !hit || (*hit - eye).norm() >= dist * (1.0 - 1e-6);
}

/**
 * Generates a synthetic scene: a ground-truth head S(alpha_r) placed in a
 * random world frame, an orbit of cameras, noisy detector keypoints on the
 * near-frontal frames and a jittered, holed dense reconstruction with a
 * background cube. Fully determined by `seed`.
 */
inline std::pair<SyntheticScene, pipeline::SceneInput>
generate_scene(std::shared_ptr<const morphablemodel::MorphableModel> model, const SyntheticSpec& spec,
               std::uint64_t seed)
{
    if (!model)
    {
        throw Error(ErrorKind::InvalidParams, "generate_scene needs a model");
    }
    const NoiseSpec& noise = spec.noise;
    if (!(noise.pixel_sigma >= 0.0) || !(noise.mesh_jitter >= 0.0) || !(noise.hole_probability >= 0.0) ||
        noise.hole_probability >= 1.0)
    {
        throw Error(ErrorKind::InvalidParams, "invalid noise spec");
    }
    if (spec.orbit.num_frames < 1 || !(spec.orbit.radius > 0.0) || !(spec.orbit.focal > 0.0) ||
        !(spec.min_world_scale > 0.0) || spec.max_world_scale < spec.min_world_scale)
    {
        throw Error(ErrorKind::InvalidParams, "invalid orbit or world placement");
    }

    SyntheticScene gt;
    gt.spec = spec;
    gt.seed = seed;
    gt.alpha = sample_ground_truth(*model, spec, seed);
    gt.mesh = morphablemodel::synthesize(*model, gt.alpha);

    Rng pose_rng(seed, detail::pose_stream);
    gt.model_to_world.rotation = detail::random_rotation(pose_rng);
    gt.model_to_world.scale = pose_rng.uniform(spec.min_world_scale, spec.max_world_scale);
    for (int i = 0; i < 3; ++i)
    {
        gt.model_to_world.translation(i) = pose_rng.uniform(-spec.max_world_offset, spec.max_world_offset);
    }
    gt.head_width = eval::head_width(gt.mesh.vertices, model->top_region(), gt.model_to_world);

    pipeline::SceneInput scene;
    scene.model = model;
    scene.frontal_frame = 0;

    // Visibility is tested in the canonical frame against the ground-truth surface.
    const TriangleMesh canonical = gt.mesh.to_triangle_mesh();
    std::vector<std::string> facial;
    for (const auto& [id, vertex] : model->landmarks())
    {
        if (pipeline::is_facial_landmark(*model, id))
        {
            facial.push_back(id);
        }
    }

    Rng kp_rng(seed, detail::keypoint_stream);
    const camera::SimilarityTransform head_from_world = gt.model_to_world.inverse();
    for (int n = 0; n < spec.orbit.num_frames; ++n)
    {
        const camera::PerspectiveCamera cam = orbit_camera(spec.orbit, n, gt.model_to_world);
        scene.cameras.emplace(n, cam);
        const double az = 360.0 * n / spec.orbit.num_frames;
        const double el = spec.orbit.max_elevation *
                          std::sin(2.0 * std::numbers::pi * spec.orbit.elevation_cycles * n / spec.orbit.num_frames);
        gt.orbit_angles[n] = {az, el};
        if (std::min(az, 360.0 - az) > spec.orbit.keypoint_azimuth + 1e-9)
        {
            continue;
        }
        const Eigen::Vector3d eye = head_from_world(cam.center());
        std::vector<fitting::Observation> exact, noisy;
        for (const auto& id : facial)
        {
            const Eigen::Vector3d p = gt.mesh.vertices[static_cast<std::size_t>(model->landmark_vertex(id))];
            if (!is_visible(canonical, eye, p))
            {
                continue;
            }
            const Eigen::Vector2d px = camera::project(cam, gt.model_to_world(p));
            if (!cam.in_image(px))
            {
                continue;
            }
            exact.push_back({id, px, 1.0});
            const double du = kp_rng.normal(0.0, noise.pixel_sigma);
            const double dv = kp_rng.normal(0.0, noise.pixel_sigma);
            noisy.push_back({id, px + Eigen::Vector2d(du, dv), 1.0});
        }
        if (!exact.empty())
        {
            gt.exact_keypoints[n] = std::move(exact);
            scene.keypoints[n] = std::move(noisy);
        }
    }

    // Dense reconstruction in world units.
    Rng jitter_rng(seed, detail::jitter_stream);
    Rng hole_rng(seed, detail::hole_stream);
    const double jitter = noise.mesh_jitter * gt.head_width;
    for (const auto& v : gt.mesh.vertices)
    {
        Eigen::Vector3d w = gt.model_to_world(v);
        if (jitter > 0.0)
        {
            for (int i = 0; i < 3; ++i)
            {
                w(i) += jitter_rng.normal(0.0, jitter);
            }
        }
        scene.dense.vertices.push_back(w);
    }
    for (const auto& t : *gt.mesh.topology)
    {
        if (noise.hole_probability > 0.0 && hole_rng.uniform() < noise.hole_probability)
        {
            continue;
        }
        scene.dense.triangles.push_back(t);
    }
    if (noise.background)
    {
        // Placed behind the head as seen from the frontal camera.
        const Eigen::Vector3d center = gt.model_to_world(Eigen::Vector3d(0.0, 0.0, -5.0 * gt.head_width / gt.model_to_world.scale));
        const double half = 0.25 * gt.head_width;
        const int base = static_cast<int>(scene.dense.vertices.size());
        for (int i = 0; i < 8; ++i)
        {
            const Eigen::Vector3d corner((i & 1) ? half : -half, (i & 2) ? half : -half, (i & 4) ? half : -half);
            scene.dense.vertices.push_back(center + corner);
        }
        static constexpr int faces[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
        for (const auto& f : faces)
        {
            scene.dense.triangles.push_back({base + f[0], base + f[1], base + f[2]});
        }
    }
    return {std::move(gt), std::move(scene)};
}

inline std::pair<SyntheticScene, pipeline::SceneInput>
generate_scene(const morphablemodel::MorphableModel& model, const SyntheticSpec& spec, std::uint64_t seed)
{
    return generate_scene(std::make_shared<const morphablemodel::MorphableModel>(model), spec, seed);
}

} /* namespace synth */
} /* namespace headfit */

#endif /* HEADFIT_SYNTH_SCENE_GENERATOR_HPP */
