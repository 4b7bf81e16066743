/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: tests/support.hpp
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

#ifndef HEADFIT_TESTS_SUPPORT_HPP
#define HEADFIT_TESTS_SUPPORT_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/core/random.hpp"
#include "headfit/fitting/pose_refine.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"
#include "headfit/morphablemodel/model_builder.hpp"

#include "Eigen/Core"
#include "Eigen/Geometry"

#include <cmath>
#include <filesystem>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace headfit::test {

/// n_alpha = 2, V = 4 model with hand-written entries.
inline morphablemodel::MorphableModel toy_model()
{
    Eigen::VectorXd mean(12);
    mean << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
    Eigen::MatrixXd u(12, 2);
    u.col(0) << 1, 0, 0, 0, 2, 0, 0, 0, 3, 1, 1, 1;
    u.col(1) << 0, -1, 0, 0.5, 0, 0, 2, 0, 0, 0, 0, -4;
    Eigen::VectorXd ev(2);
    ev << 4.0, 1.0;
    return morphablemodel::MorphableModel(mean, u, ev, {{"a", 0}, {"b", 3}}, {{"face", {"a", "b"}}}, {2, 3}, {0, 1},
                                          {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}});
}

/// Default synthetic head model, built once.
inline std::shared_ptr<const morphablemodel::MorphableModel> default_model()
{
    static const auto model =
        std::make_shared<const morphablemodel::MorphableModel>(morphablemodel::build_synthetic_model());
    return model;
}

inline std::shared_ptr<const morphablemodel::MorphableModel> model_with_components(int n)
{
    morphablemodel::SyntheticModelSpec spec;
    spec.num_components = n;
    return std::make_shared<const morphablemodel::MorphableModel>(morphablemodel::build_synthetic_model(spec));
}

/// Latitude/longitude sphere with poles, outward-facing triangles.
inline TriangleMesh uv_sphere(double radius, int rings, int segments, const Eigen::Vector3d& center = Eigen::Vector3d::Zero())
{
    TriangleMesh m;
    m.vertices.push_back(center + Eigen::Vector3d(0, 0, radius));
    for (int r = 1; r < rings; ++r)
    {
        const double polar = std::numbers::pi * r / rings;
        for (int s = 0; s < segments; ++s)
        {
            const double az = 2.0 * std::numbers::pi * s / segments;
            m.vertices.push_back(center + radius * Eigen::Vector3d(std::sin(polar) * std::cos(az),
                                                                   std::sin(polar) * std::sin(az), std::cos(polar)));
        }
    }
    m.vertices.push_back(center + Eigen::Vector3d(0, 0, -radius));
    const int south = static_cast<int>(m.vertices.size()) - 1;
    const auto idx = [segments](int ring, int s) { return 1 + (ring - 1) * segments + (s % segments); };
    for (int s = 0; s < segments; ++s)
    {
        m.triangles.push_back({0, idx(1, s), idx(1, s + 1)});
        m.triangles.push_back({south, idx(rings - 1, s + 1), idx(rings - 1, s)});
    }
    for (int r = 1; r < rings - 1; ++r)
    {
        for (int s = 0; s < segments; ++s)
        {
            m.triangles.push_back({idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)});
            m.triangles.push_back({idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)});
        }
    }
    return m;
}

/// Uniformly distributed rotation from a normalised Gaussian quaternion.
inline Eigen::Matrix3d random_rotation(Rng& rng)
{
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q.toRotationMatrix();
}

/// Camera at `eye` looking at `target`, image y axis pointing along -`up`.
inline camera::PerspectiveCamera look_at(int frame, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                         double focal = 1000.0, int width = 1920, int height = 1080,
                                         const Eigen::Vector3d& up = Eigen::Vector3d::UnitY())
{
    auto cam = camera::PerspectiveCamera::from_intrinsics(frame, focal, focal, width / 2.0, height / 2.0, width, height);
    const Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = z.cross(up);
    if (x.norm() < 1e-9)
    {
        x = z.cross(Eigen::Vector3d::UnitX());
    }
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);
    cam.rotation.row(0) = x.transpose();
    cam.rotation.row(1) = y.transpose();
    cam.rotation.row(2) = z.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
}

struct PoseFixture
{
    fitting::PoseProblem problem;
    camera::RigidTransform truth;
    /// Distance from every camera centre to the point cloud centroid.
    double camera_distance = 2.0;
};

/**
 * Random rigid-correction problem: `points` model points under a random
 * similarity, observed by `frames` cameras on a sphere around the cloud,
 * pixels generated with the random correction `truth` plus Gaussian noise.
 */
inline PoseFixture random_pose_problem(std::uint64_t seed, int frames = 20, int points = 30, double sigma = 0.0)
{
    Rng rng(seed);
    PoseFixture fx;
    auto& pb = fx.problem;
    for (int k = 0; k < points; ++k)
    {
        pb.model_points["p" + std::to_string(k)] =
            0.1 * Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    }
    pb.base_transform = {rng.uniform(0.5, 2.0), random_rotation(rng),
                         0.2 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())};
    const Eigen::Vector3d omega = 0.3 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    fx.truth = {camera::rotation_from_axis_angle(omega), 0.1 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())};
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& [id, x] : pb.model_points)
    {
        centroid += fx.truth(pb.base_transform(x));
    }
    centroid /= static_cast<double>(points);
    for (int f = 0; f < frames; ++f)
    {
        const Eigen::Vector3d dir = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
        fitting::FrameObservations frame{look_at(f, centroid + fx.camera_distance * dir, centroid), {}};
        for (const auto& [id, x] : pb.model_points)
        {
            const Eigen::Vector2d px = camera::project(frame.camera, fx.truth(pb.base_transform(x)));
            frame.points.push_back({id, px + sigma * Eigen::Vector2d(rng.normal(), rng.normal()), 1.0});
        }
        pb.frames.push_back(std::move(frame));
    }
    return fx;
}

/// `pose` rotated by `angle_deg` about a random axis and shifted by `shift` in a random direction.
inline camera::RigidTransform perturb(const camera::RigidTransform& pose, double angle_deg, double shift, Rng& rng)
{
    const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    const Eigen::Vector3d dir = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    return {camera::rotation_from_axis_angle(axis * angle_deg * std::numbers::pi / 180.0) * pose.rotation,
            pose.translation + shift * dir};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("headfit_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace headfit::test

#endif /* HEADFIT_TESTS_SUPPORT_HPP */
