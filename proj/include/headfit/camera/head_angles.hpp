/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/camera/head_angles.hpp
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

#ifndef HEADFIT_CAMERA_HEAD_ANGLES_HPP
#define HEADFIT_CAMERA_HEAD_ANGLES_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"

#include <cmath>
#include <numbers>

namespace headfit {
namespace camera {

struct HeadAngles
{
    double azimuth = 0.0;   ///< degrees in (-180, 180], 0 along the model +z (face) axis, positive towards +x
    double elevation = 0.0; ///< degrees in [-90, 90], 0 on the model x-z plane, positive towards +y
};

/**
 * Spherical angles of the camera centre expressed in the canonical frame of
 * the head. `head_frame` maps canonical model coordinates to world.
 */
inline HeadAngles camera_head_angles(const PerspectiveCamera& camera, const SimilarityTransform& head_frame)
{
    const Eigen::Vector3d p = head_frame.inverse()(camera.center());
    const double horizontal = std::hypot(p.x(), p.z());
    if (p.norm() < 1e-12)
    {
        throw Error(ErrorKind::DegenerateConfiguration, "camera centre coincides with the head origin");
    }
    constexpr double deg = 180.0 / std::numbers::pi;
    return {std::atan2(p.x(), p.z()) * deg, std::atan2(p.y(), horizontal) * deg};
}

/// Wraps an angle in degrees to [0, 360).
inline double wrap_degrees_360(double deg)
{
    double w = std::fmod(deg, 360.0);
    if (w < 0.0)
    {
        w += 360.0;
    }
    return w >= 360.0 ? 0.0 : w;
}

/// Smallest absolute difference between two angles in degrees.
inline double angular_distance_deg(double a, double b)
{
    const double d = wrap_degrees_360(a - b);
    return d > 180.0 ? 360.0 - d : d;
}

} /* namespace camera */
} /* namespace headfit */

#endif /* HEADFIT_CAMERA_HEAD_ANGLES_HPP */
