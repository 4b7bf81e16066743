/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/camera/PerspectiveCamera.hpp
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

#ifndef HEADFIT_CAMERA_PERSPECTIVECAMERA_HPP
#define HEADFIT_CAMERA_PERSPECTIVECAMERA_HPP

#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"

#include "Eigen/Core"

#include <string>

namespace headfit {
namespace camera {

/// Points closer than this (camera-frame z) count as behind the camera.
inline constexpr double min_depth = 1e-9;

/**
 * Pinhole camera with world-to-camera extrinsics: x_cam = R * X + t.
 *
 * +z looks forward, the image origin is the top-left corner, u runs along
 * columns and v along rows. Pixel (col, row) has its centre at u = col,
 * v = row. The intrinsic matrix is upper triangular with K(2,2) = 1 and may
 * carry a skew term in K(0,1).
 */
struct PerspectiveCamera
{
    int frame_id = 0;
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    int width = 0;
    int height = 0;

    static PerspectiveCamera from_intrinsics(int frame_id, double fx, double fy, double cx, double cy, int width,
                                             int height)
    {
        PerspectiveCamera cam;
        cam.frame_id = frame_id;
        cam.intrinsics << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        cam.width = width;
        cam.height = height;
        return cam;
    }

    double fx() const { return intrinsics(0, 0); }
    double fy() const { return intrinsics(1, 1); }
    double cx() const { return intrinsics(0, 2); }
    double cy() const { return intrinsics(1, 2); }

    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
    Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const { return rotation.transpose() * (cam - translation); }

    /// Camera centre in world coordinates.
    Eigen::Vector3d center() const { return -(rotation.transpose() * translation); }

    /// Unit viewing direction (+z axis) in world coordinates.
    Eigen::Vector3d forward() const { return rotation.row(2).transpose(); }

    bool in_image(const Eigen::Vector2d& px) const
    {
        return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1 && px.y() <= height - 1;
    }

    /// Throws a Validation error if the invariants of the type do not hold.
    void validate() const
    {
        const std::string where = "camera " + std::to_string(frame_id) + ": ";
        if (!is_rotation(rotation))
        {
            throw Error(ErrorKind::Validation, where + "rotation is not a proper rotation (orthonormal, det = +1)");
        }
        if (!(fx() > 0.0) || !(fy() > 0.0))
        {
            throw Error(ErrorKind::Validation, where + "focal lengths must be positive");
        }
        if (intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 || intrinsics(2, 2) != 1.0)
        {
            throw Error(ErrorKind::Validation, where + "intrinsics must be upper triangular with K(2,2) = 1");
        }
        if (width <= 0 || height <= 0)
        {
            throw Error(ErrorKind::Validation, where + "image size must be positive");
        }
        if (!translation.allFinite() || !intrinsics.allFinite())
        {
            throw Error(ErrorKind::Validation, where + "non-finite parameters");
        }
    }
};

/// Pinhole projection of a camera-frame point. Throws if z < min_depth.
inline Eigen::Vector2d project_camera_point(const PerspectiveCamera& camera, const Eigen::Vector3d& cam)
{
    if (!(cam.z() >= min_depth))
    {
        throw BehindCameraError(camera.frame_id, "", "point at depth " + std::to_string(cam.z()) +
                                                         " in camera " + std::to_string(camera.frame_id));
    }
    const Eigen::Vector3d h = camera.intrinsics * (cam / cam.z());
    return h.head<2>();
}

/// Projects a world point to pixel coordinates (u, v).
inline Eigen::Vector2d project(const PerspectiveCamera& camera, const Eigen::Vector3d& world)
{
    return project_camera_point(camera, camera.to_camera(world));
}

/**
 * Camera-frame point that projects to `pixel` and has camera-frame depth
 * `depth`, i.e. depth * K^-1 [u v 1]^T.
 */
inline Eigen::Vector3d backproject(const PerspectiveCamera& camera, const Eigen::Vector2d& pixel, double depth)
{
    if (!(depth >= min_depth))
    {
        throw Error(ErrorKind::InvalidParams, "backprojection depth must be positive");
    }
    const auto& K = camera.intrinsics;
    const double y = (pixel.y() - K(1, 2)) / K(1, 1);
    const double x = (pixel.x() - K(0, 2) - K(0, 1) * y) / K(0, 0);
    return {depth * x, depth * y, depth};
}

} /* namespace camera */
} /* namespace headfit */

#endif /* HEADFIT_CAMERA_PERSPECTIVECAMERA_HPP */
