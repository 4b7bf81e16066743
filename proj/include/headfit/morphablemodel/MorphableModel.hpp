/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/morphablemodel/MorphableModel.hpp
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

#ifndef HEADFIT_MORPHABLEMODEL_MORPHABLEMODEL_HPP
#define HEADFIT_MORPHABLEMODEL_MORPHABLEMODEL_HPP

#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/core/random.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace headfit {
namespace morphablemodel {

/**
 * A PCA head model: S(alpha) = mean + components * alpha.
 *
 * The mean is stored as a flat 3V vector (x0 y0 z0 x1 ...), the components as a
 * 3V x n matrix, the eigenvalues are the variances of the coefficients. The
 * landmark table maps keypoint ids (facial landmarks and scalp anchors) to
 * vertex indices. Landmark groups ("face", "jawline", "ear", "scalp", ...) are
 * named subsets of the landmark ids. The object is immutable once built.
 */
class MorphableModel
{
public:
    MorphableModel() = default;

    MorphableModel(Eigen::VectorXd mean, Eigen::MatrixXd components, Eigen::VectorXd eigenvalues,
                   std::map<std::string, int> landmarks,
                   std::map<std::string, std::vector<std::string>> landmark_groups, std::vector<int> top_region,
                   std::vector<int> face_region, Topology topology)
        : mean_(std::move(mean)), components_(std::move(components)), eigenvalues_(std::move(eigenvalues)),
          landmarks_(std::move(landmarks)), landmark_groups_(std::move(landmark_groups)),
          top_region_(std::move(top_region)), face_region_(std::move(face_region)),
          topology_(std::make_shared<const Topology>(std::move(topology)))
    {
        validate();
    }

    int num_vertices() const noexcept { return static_cast<int>(mean_.size() / 3); }
    int num_components() const noexcept { return static_cast<int>(components_.cols()); }

    const Eigen::VectorXd& mean() const noexcept { return mean_; }
    const Eigen::MatrixXd& components() const noexcept { return components_; }
    const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }
    const std::map<std::string, int>& landmarks() const noexcept { return landmarks_; }
    const std::map<std::string, std::vector<std::string>>& landmark_groups() const noexcept
    {
        return landmark_groups_;
    }
    const std::vector<int>& top_region() const noexcept { return top_region_; }
    const std::vector<int>& face_region() const noexcept { return face_region_; }
    const Topology& topology() const noexcept { return *topology_; }
    const std::shared_ptr<const Topology>& shared_topology() const noexcept { return topology_; }

    Eigen::Vector3d mean_at(int vertex) const { return mean_.segment<3>(3 * vertex); }

    /// The three rows of the component matrix belonging to one vertex.
    auto components_at(int vertex) const { return components_.middleRows<3>(3 * vertex); }

    bool has_landmark(const std::string& id) const { return landmarks_.count(id) != 0; }

    int landmark_vertex(const std::string& id) const
    {
        const auto it = landmarks_.find(id);
        if (it == landmarks_.end())
        {
            throw Error(ErrorKind::Validation, "unknown landmark id '" + id + "'");
        }
        return it->second;
    }

    /// Ids of a landmark group; empty if the group does not exist.
    std::vector<std::string> group(const std::string& name) const
    {
        const auto it = landmark_groups_.find(name);
        return it == landmark_groups_.end() ? std::vector<std::string>{} : it->second;
    }

    bool in_group(const std::string& group_name, const std::string& id) const
    {
        const auto it = landmark_groups_.find(group_name);
        if (it == landmark_groups_.end())
        {
            return false;
        }
        return std::find(it->second.begin(), it->second.end(), id) != it->second.end();
    }

private:
    void validate() const
    {
        if (mean_.size() == 0 || mean_.size() % 3 != 0)
        {
            throw Error(ErrorKind::Validation, "mean shape length must be a positive multiple of 3");
        }
        const auto rows = mean_.size();
        if (components_.rows() != rows)
        {
            throw Error(ErrorKind::Validation, "components must have 3V rows");
        }
        if (eigenvalues_.size() != components_.cols())
        {
            throw Error(ErrorKind::Validation, "eigenvalue count must equal the number of components");
        }
        for (Eigen::Index j = 0; j < eigenvalues_.size(); ++j)
        {
            if (!(eigenvalues_(j) > 0.0) || !std::isfinite(eigenvalues_(j)))
            {
                throw Error(ErrorKind::Validation, "eigenvalues must be strictly positive");
            }
            if (j > 0 && eigenvalues_(j) > eigenvalues_(j - 1))
            {
                throw Error(ErrorKind::Validation, "eigenvalues must be non-increasing");
            }
        }
        const int v = num_vertices();
        const auto check_index = [v](int idx, const std::string& what) {
            if (idx < 0 || idx >= v)
            {
                throw Error(ErrorKind::Validation,
                            what + " vertex index " + std::to_string(idx) + " out of range [0, " +
                                std::to_string(v) + ")");
            }
        };
        for (const auto& [id, idx] : landmarks_)
        {
            check_index(idx, "landmark '" + id + "'");
        }
        for (const auto& [name, ids] : landmark_groups_)
        {
            for (const auto& id : ids)
            {
                if (!landmarks_.count(id))
                {
                    throw Error(ErrorKind::Validation, "group '" + name + "' names unknown landmark '" + id + "'");
                }
            }
        }
        for (int idx : top_region_)
        {
            check_index(idx, "top_region");
        }
        for (int idx : face_region_)
        {
            check_index(idx, "face_region");
        }
        for (const auto& tri : *topology_)
        {
            for (int idx : tri)
            {
                check_index(idx, "topology");
            }
        }
    }

    Eigen::VectorXd mean_;
    Eigen::MatrixXd components_;
    Eigen::VectorXd eigenvalues_;
    std::map<std::string, int> landmarks_;
    std::map<std::string, std::vector<std::string>> landmark_groups_;
    std::vector<int> top_region_;
    std::vector<int> face_region_;
    std::shared_ptr<const Topology> topology_ = std::make_shared<const Topology>();
};

/// PCA coefficients of one head instance.
struct ShapeParams
{
    Eigen::VectorXd alpha;

    static ShapeParams zero(const MorphableModel& model)
    {
        return {Eigen::VectorXd::Zero(model.num_components())};
    }
};

inline void check_params(const MorphableModel& model, const ShapeParams& params)
{
    if (params.alpha.size() != model.num_components())
    {
        throw Error(ErrorKind::InvalidParams, "expected " + std::to_string(model.num_components()) +
                                                  " shape coefficients, got " +
                                                  std::to_string(params.alpha.size()));
    }
}

/// Flat 3V vector mean + U * alpha.
inline Eigen::VectorXd synthesize_flat(const MorphableModel& model, const ShapeParams& params)
{
    check_params(model, params);
    return model.mean() + model.components() * params.alpha;
}

/**
 * Generates the head instance for the given coefficients. The returned mesh
 * shares the model's topology object.
 */
inline HeadMesh synthesize(const MorphableModel& model, const ShapeParams& params)
{
    const Eigen::VectorXd flat = synthesize_flat(model, params);
    HeadMesh mesh;
    mesh.vertices.resize(static_cast<std::size_t>(model.num_vertices()));
    for (int v = 0; v < model.num_vertices(); ++v)
    {
        mesh.vertices[static_cast<std::size_t>(v)] = flat.segment<3>(3 * v);
    }
    mesh.topology = model.shared_topology();
    return mesh;
}

/// Position of a single vertex of S(alpha), without building the whole mesh.
inline Eigen::Vector3d synthesize_vertex(const MorphableModel& model, const ShapeParams& params, int vertex)
{
    return model.mean_at(vertex) + model.components_at(vertex) * params.alpha;
}

/**
 * Draws alpha_j ~ N(0, scale^2 * eigenvalue_j) from an Rng seeded with `seed`.
 * Coefficients are drawn in index order from a single stream.
 */
inline ShapeParams sample_random_shape(const MorphableModel& model, double scale, std::uint64_t seed)
{
    if (!(scale > 0.0) || !std::isfinite(scale))
    {
        throw Error(ErrorKind::InvalidParams, "sample scale must be positive");
    }
    Rng rng(seed);
    ShapeParams params{Eigen::VectorXd(model.num_components())};
    for (int j = 0; j < model.num_components(); ++j)
    {
        params.alpha(j) = scale * std::sqrt(model.eigenvalues()(j)) * rng.normal();
    }
    return params;
}

/// Squared Euclidean norm of S(a) - S(b) over all vertex coordinates.
inline double shape_distance(const MorphableModel& model, const ShapeParams& a, const ShapeParams& b)
{
    check_params(model, a);
    check_params(model, b);
    return (model.components() * (a.alpha - b.alpha)).squaredNorm();
}

inline double param_cosine_similarity(const ShapeParams& a, const ShapeParams& b)
{
    if (a.alpha.size() != b.alpha.size())
    {
        throw Error(ErrorKind::InvalidParams, "coefficient vectors differ in length");
    }
    const double na = a.alpha.norm();
    const double nb = b.alpha.norm();
    if (na == 0.0 || nb == 0.0)
    {
        throw Error(ErrorKind::UndefinedInput, "cosine similarity of a zero vector is undefined");
    }
    return std::clamp(a.alpha.dot(b.alpha) / (na * nb), -1.0, 1.0);
}

} /* namespace morphablemodel */
} /* namespace headfit */

#endif /* HEADFIT_MORPHABLEMODEL_MORPHABLEMODEL_HPP */
