/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/camera/umeyama.hpp
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

#ifndef HEADFIT_CAMERA_UMEYAMA_HPP
#define HEADFIT_CAMERA_UMEYAMA_HPP

#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"

#include "Eigen/Core"
#include "Eigen/SVD"

#include <span>

namespace headfit {
namespace camera {

/**
 * Least-squares similarity (or rigid, with `with_scale = false`) transform
 * minimising sum_i |s R p_i + t - q_i|^2, following Umeyama (1991).
 *
 * Reflections are excluded: if the optimal orthogonal matrix has det < 0 the
 * sign of the last singular direction is flipped, so det(R) = +1 always.
 *
 * Throws DegenerateConfiguration for fewer than 3 pairs, collinear sources or
 * a cross-covariance of rank < 2.
 */
inline SimilarityTransform umeyama_fit(std::span<const Eigen::Vector3d> source,
                                       std::span<const Eigen::Vector3d> target, bool with_scale = true)
{
    if (source.size() != target.size())
    {
        throw Error(ErrorKind::InvalidParams, "umeyama: source and target sizes differ");
    }
    const auto n = source.size();
    if (n < 3)
    {
        throw Error(ErrorKind::DegenerateConfiguration, "umeyama: need at least 3 point pairs");
    }

    Eigen::Vector3d mean_src = Eigen::Vector3d::Zero(), mean_dst = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i)
    {
        mean_src += source[i];
        mean_dst += target[i];
    }
    mean_src /= static_cast<double>(n);
    mean_dst /= static_cast<double>(n);

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d src_scatter = Eigen::Matrix3d::Zero();
    double src_var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
    {
        const Eigen::Vector3d p = source[i] - mean_src;
        const Eigen::Vector3d q = target[i] - mean_dst;
        cov += q * p.transpose();
        src_scatter += p * p.transpose();
        src_var += p.squaredNorm();
    }
    cov /= static_cast<double>(n);
    src_var /= static_cast<double>(n);

    const Eigen::JacobiSVD<Eigen::Matrix3d> src_svd(src_scatter);
    const auto& src_sv = src_svd.singularValues();
    if (!(src_sv(0) > 0.0) || src_sv(1) <= 1e-12 * src_sv(0))
    {
        throw Error(ErrorKind::DegenerateConfiguration, "umeyama: source points are collinear or coincident");
    }

    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d& d = svd.singularValues();
    if (!(d(0) > 0.0) || d(1) <= 1e-12 * d(0))
    {
        throw Error(ErrorKind::DegenerateConfiguration, "umeyama: cross-covariance has rank < 2");
    }

    Eigen::Vector3d signs = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0)
    {
        signs(2) = -1.0;
    }

    SimilarityTransform result;
    result.rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
    result.scale = with_scale ? d.dot(signs) / src_var : 1.0;
    result.translation = mean_dst - result.scale * (result.rotation * mean_src);
    return result;
}

/// Sum of squared residuals |T(p_i) - q_i|^2.
inline double alignment_residual(const SimilarityTransform& transform, std::span<const Eigen::Vector3d> source,
                                 std::span<const Eigen::Vector3d> target)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i)
    {
        sum += (transform(source[i]) - target[i]).squaredNorm();
    }
    return sum;
}

} /* namespace camera */
} /* namespace headfit */

#endif /* HEADFIT_CAMERA_UMEYAMA_HPP */
