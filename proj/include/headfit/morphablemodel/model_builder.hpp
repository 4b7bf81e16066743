/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/morphablemodel/model_builder.hpp
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

#ifndef HEADFIT_MORPHABLEMODEL_MODEL_BUILDER_HPP
#define HEADFIT_MORPHABLEMODEL_MODEL_BUILDER_HPP

#include "headfit/core/error.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"

#include "Eigen/Core"
#include "Eigen/QR"

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace headfit {
namespace morphablemodel {

/**
 * Parameters of the deterministic synthetic head model.
 *
 * Canonical frame: +y up, +z out of the face, +x completes a right-handed frame.
 * Units are millimetres. The mean is an ellipsoid with the given semi-axes,
 * tessellated as a UV sphere with poles on the y axis.
 */
struct SyntheticModelSpec
{
    int rings = 30;
    int segments = 60;
    Eigen::Vector3d semi_axes{75.0, 115.0, 95.0};
    int num_components = 40;
    /// RMS per-vertex displacement (mm) of one standard deviation of the first component.
    double first_component_rms = 6.0;
    /// Ratio between consecutive eigenvalues.
    double eigenvalue_decay = 0.85;
    /// Vertices with elevation at or above this angle (deg) form the scalp region.
    double top_region_min_elevation = 0.0;
};

namespace detail {

inline Eigen::Vector3d direction_from_angles(double azimuth_deg, double elevation_deg)
{
    const double az = azimuth_deg * std::numbers::pi / 180.0;
    const double el = elevation_deg * std::numbers::pi / 180.0;
    return {std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)};
}

/// Real spherical harmonic with polar axis +y and azimuth measured from +z.
inline double real_spherical_harmonic(int l, int m, double polar, double azimuth)
{
    const unsigned ul = static_cast<unsigned>(l);
    const unsigned am = static_cast<unsigned>(std::abs(m));
    const double legendre = std::sph_legendre(ul, am, polar);
    if (m == 0)
    {
        return legendre;
    }
    if (m > 0)
    {
        return std::numbers::sqrt2 * legendre * std::cos(m * azimuth);
    }
    return std::numbers::sqrt2 * legendre * std::sin(am * azimuth);
}

inline std::string numbered(const char* prefix, int i)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%02d", prefix, i);
    return buf;
}

} /* namespace detail */

/**
 * Builds an ellipsoid-family head model.
 *
 * The deformation basis consists of normal displacement fields shaped by real
 * spherical harmonics of degree >= 2, ordered by degree. Each field has the
 * similarity tangent space of the mean (translations, rotations, isotropic
 * scale) projected out, mimicking a Procrustes-aligned PCA model, and the
 * result is orthonormalised with two-pass Gram-Schmidt. Eigenvalues decay
 * geometrically.
 */
inline MorphableModel build_synthetic_model(const SyntheticModelSpec& spec = {})
{
    if (spec.rings < 4 || spec.segments < 8)
    {
        throw Error(ErrorKind::InvalidParams, "synthetic model needs at least 4 rings and 8 segments");
    }
    if (spec.num_components < 1)
    {
        throw Error(ErrorKind::InvalidParams, "synthetic model needs at least one component");
    }
    if (!(spec.first_component_rms > 0.0) || !(spec.eigenvalue_decay > 0.0) || spec.eigenvalue_decay > 1.0)
    {
        throw Error(ErrorKind::InvalidParams, "invalid eigenvalue spectrum");
    }

    const double pi = std::numbers::pi;
    const Eigen::Vector3d& axes = spec.semi_axes;

    // Unit directions, polar angle from +y, azimuth from +z towards +x.
    std::vector<Eigen::Vector3d> dirs;
    std::vector<double> polar, azimuth;
    const auto add_vertex = [&](double theta, double phi) {
        polar.push_back(theta);
        azimuth.push_back(phi);
        dirs.emplace_back(std::sin(theta) * std::sin(phi), std::cos(theta), std::sin(theta) * std::cos(phi));
    };
    add_vertex(0.0, 0.0);
    for (int i = 1; i < spec.rings; ++i)
    {
        for (int j = 0; j < spec.segments; ++j)
        {
            add_vertex(pi * i / spec.rings, 2.0 * pi * j / spec.segments);
        }
    }
    add_vertex(pi, 0.0);
    const int num_vertices = static_cast<int>(dirs.size());
    const int bottom = num_vertices - 1;
    const auto ring_vertex = [&](int ring, int seg) { return 1 + (ring - 1) * spec.segments + seg % spec.segments; };

    Topology tris;
    for (int j = 0; j < spec.segments; ++j)
    {
        tris.push_back({0, ring_vertex(1, j), ring_vertex(1, j + 1)});
    }
    for (int i = 1; i + 1 < spec.rings; ++i)
    {
        for (int j = 0; j < spec.segments; ++j)
        {
            const int a = ring_vertex(i, j), b = ring_vertex(i, j + 1);
            const int c = ring_vertex(i + 1, j), d = ring_vertex(i + 1, j + 1);
            tris.push_back({a, c, d});
            tris.push_back({a, d, b});
        }
    }
    for (int j = 0; j < spec.segments; ++j)
    {
        tris.push_back({bottom, ring_vertex(spec.rings - 1, j + 1), ring_vertex(spec.rings - 1, j)});
    }

    Eigen::VectorXd mean(3 * num_vertices);
    std::vector<Eigen::Vector3d> normals(static_cast<std::size_t>(num_vertices));
    for (int v = 0; v < num_vertices; ++v)
    {
        const Eigen::Vector3d p = dirs[v].cwiseProduct(axes);
        mean.segment<3>(3 * v) = p;
        normals[v] = dirs[v].cwiseQuotient(axes).normalized();
    }

    // Outward orientation: flip every triangle if the first one faces inwards.
    {
        const auto& t = tris.front();
        const Eigen::Vector3d a = mean.segment<3>(3 * t[0]), b = mean.segment<3>(3 * t[1]),
                              c = mean.segment<3>(3 * t[2]);
        if ((b - a).cross(c - a).dot(a + b + c) < 0.0)
        {
            for (auto& tri : tris)
            {
                std::swap(tri[1], tri[2]);
            }
        }
    }

    // Similarity tangent space of the mean shape.
    Eigen::MatrixXd similarity(3 * num_vertices, 7);
    similarity.setZero();
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (int v = 0; v < num_vertices; ++v)
    {
        centroid += mean.segment<3>(3 * v);
    }
    centroid /= num_vertices;
    for (int v = 0; v < num_vertices; ++v)
    {
        const Eigen::Vector3d p = mean.segment<3>(3 * v) - centroid;
        for (int k = 0; k < 3; ++k)
        {
            similarity(3 * v + k, k) = 1.0;
            similarity.block<3, 1>(3 * v, 3 + k) = Eigen::Vector3d::Unit(k).cross(p);
        }
        similarity.block<3, 1>(3 * v, 6) = p;
    }
    const Eigen::MatrixXd sim_basis =
        Eigen::HouseholderQR<Eigen::MatrixXd>(similarity).householderQ() * Eigen::MatrixXd::Identity(3 * num_vertices, 7);

    std::vector<Eigen::VectorXd> basis;
    for (int l = 2; static_cast<int>(basis.size()) < spec.num_components; ++l)
    {
        if (l > 4 * spec.rings)
        {
            throw Error(ErrorKind::InvalidParams, "mesh too coarse for the requested number of components");
        }
        for (int m = -l; m <= l && static_cast<int>(basis.size()) < spec.num_components; ++m)
        {
            Eigen::VectorXd field(3 * num_vertices);
            for (int v = 0; v < num_vertices; ++v)
            {
                field.segment<3>(3 * v) = detail::real_spherical_harmonic(l, m, polar[v], azimuth[v]) * normals[v];
            }
            const double original = field.norm();
            for (int pass = 0; pass < 2; ++pass)
            {
                field -= sim_basis * (sim_basis.transpose() * field);
                for (const auto& q : basis)
                {
                    field -= q * q.dot(field);
                }
            }
            if (field.norm() > 1e-6 * original)
            {
                basis.push_back(field.normalized());
            }
        }
    }

    Eigen::MatrixXd components(3 * num_vertices, spec.num_components);
    Eigen::VectorXd eigenvalues(spec.num_components);
    const double first_stddev = spec.first_component_rms * std::sqrt(static_cast<double>(num_vertices));
    for (int j = 0; j < spec.num_components; ++j)
    {
        components.col(j) = basis[static_cast<std::size_t>(j)];
        eigenvalues(j) = first_stddev * first_stddev * std::pow(spec.eigenvalue_decay, j);
    }

    const auto nearest_vertex = [&](double az, double el) {
        const Eigen::Vector3d target = detail::direction_from_angles(az, el);
        int best = 0;
        double best_dot = -2.0;
        for (int v = 0; v < num_vertices; ++v)
        {
            const double d = dirs[v].dot(target);
            if (d > best_dot)
            {
                best_dot = d;
                best = v;
            }
        }
        return best;
    };

    std::map<std::string, int> landmarks;
    std::map<std::string, std::vector<std::string>> groups;
    int count = 0;
    for (double el : {20.0, 5.0, -10.0, -25.0})
    {
        for (double az : {-45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0})
        {
            const std::string id = detail::numbered("face", count++);
            landmarks[id] = nearest_vertex(az, el);
            groups["face"].push_back(id);
        }
    }
    count = 0;
    for (double az = -60.0; az <= 60.0; az += 15.0)
    {
        const std::string id = detail::numbered("jaw", count++);
        landmarks[id] = nearest_vertex(az, -38.0);
        groups["jawline"].push_back(id);
    }
    landmarks["ear_left"] = nearest_vertex(90.0, 0.0);
    landmarks["ear_right"] = nearest_vertex(-90.0, 0.0);
    groups["ear"] = {"ear_left", "ear_right"};
    count = 0;
    for (double az = 0.0; az < 360.0; az += 45.0)
    {
        const std::string id = detail::numbered("scalp", count++);
        landmarks[id] = nearest_vertex(az, 45.0);
        groups["scalp"].push_back(id);
    }
    for (double az = 45.0; az < 360.0; az += 90.0)
    {
        const std::string id = detail::numbered("scalp", count++);
        landmarks[id] = nearest_vertex(az, 70.0);
        groups["scalp"].push_back(id);
    }
    landmarks["scalp_top"] = 0;
    groups["scalp"].push_back("scalp_top");

    std::vector<int> top_region, face_region;
    for (int v = 0; v < num_vertices; ++v)
    {
        const double el = 90.0 - polar[v] * 180.0 / pi;
        double az = azimuth[v] * 180.0 / pi;
        if (az > 180.0)
        {
            az -= 360.0;
        }
        if (el >= spec.top_region_min_elevation)
        {
            top_region.push_back(v);
        }
        if (std::abs(az) <= 60.0 && el >= -50.0 && el <= 35.0)
        {
            face_region.push_back(v);
        }
    }

    return MorphableModel(std::move(mean), std::move(components), std::move(eigenvalues), std::move(landmarks),
                          std::move(groups), std::move(top_region), std::move(face_region), std::move(tris));
}

} /* namespace morphablemodel */
} /* namespace headfit */

#endif /* HEADFIT_MORPHABLEMODEL_MODEL_BUILDER_HPP */
