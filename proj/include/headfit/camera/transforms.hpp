/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/camera/transforms.hpp
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

#ifndef HEADFIT_CAMERA_TRANSFORMS_HPP
#define HEADFIT_CAMERA_TRANSFORMS_HPP

#include "headfit/core/error.hpp"

#include "Eigen/Core"
#include "Eigen/Geometry"

#include <algorithm>
#include <cmath>

namespace headfit {
namespace camera {

/// True if R is orthonormal with determinant +1, both to `tol`.
inline bool is_rotation(const Eigen::Matrix3d& R, double tol = 1e-9)
{
    return (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol;
}

/// Rotation matrix of an axis-angle vector (Rodrigues).
inline Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& omega)
{
    const double angle = omega.norm();
    if (angle < 1e-300)
    {
        return Eigen::Matrix3d::Identity();
    }
    return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

inline Eigen::Vector3d axis_angle_from_rotation(const Eigen::Matrix3d& R)
{
    const Eigen::AngleAxisd aa(R);
    return aa.angle() * aa.axis();
}

/// Angle (radians) of the relative rotation between two rotation matrices.
inline double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b)
{
    const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
    // acos loses precision near zero; the chordal form stays accurate there.
    const double chord = (a - b).norm() / std::sqrt(8.0);
    return c > 0.9 ? 2.0 * std::asin(std::min(1.0, chord)) : std::acos(c);
}

/**
 * x -> R * x + t. Used for the rigid pose correction that is refined by
 * nonlinear least squares.
 */
struct RigidTransform
{
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }

    static RigidTransform from_params(const Eigen::Matrix<double, 6, 1>& p)
    {
        return {rotation_from_axis_angle(p.head<3>()), p.tail<3>()};
    }

    /// Axis-angle (3) followed by translation (3).
    Eigen::Matrix<double, 6, 1> to_params() const
    {
        Eigen::Matrix<double, 6, 1> p;
        p << axis_angle_from_rotation(rotation), translation;
        return p;
    }

    Eigen::Vector3d operator()(const Eigen::Vector3d& x) const { return rotation * x + translation; }

    RigidTransform inverse() const
    {
        return {rotation.transpose(), -(rotation.transpose() * translation)};
    }

    RigidTransform operator*(const RigidTransform& rhs) const
    {
        return {rotation * rhs.rotation, rotation * rhs.translation + translation};
    }
};

/// x -> scale * R * x + t
struct SimilarityTransform
{
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static SimilarityTransform identity() { return {}; }

    Eigen::Vector3d operator()(const Eigen::Vector3d& x) const { return scale * (rotation * x) + translation; }

    SimilarityTransform inverse() const
    {
        if (!(scale > 0.0))
        {
            throw Error(ErrorKind::InvalidParams, "similarity transform with non-positive scale is not invertible");
        }
        const Eigen::Matrix3d rt = rotation.transpose();
        return {1.0 / scale, rt, -(rt * translation) / scale};
    }

    SimilarityTransform operator*(const SimilarityTransform& rhs) const
    {
        return {scale * rhs.scale, rotation * rhs.rotation, scale * (rotation * rhs.translation) + translation};
    }

    Eigen::Matrix4d matrix() const
    {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = scale * rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }
};

inline SimilarityTransform to_similarity(const RigidTransform& r) { return {1.0, r.rotation, r.translation}; }

/// rigid * similarity, the full model-to-world map T_opt * T_sim.
inline SimilarityTransform operator*(const RigidTransform& lhs, const SimilarityTransform& rhs)
{
    return to_similarity(lhs) * rhs;
}

} /* namespace camera */
} /* namespace headfit */

#endif /* HEADFIT_CAMERA_TRANSFORMS_HPP */
