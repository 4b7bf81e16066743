/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/core/kdtree.hpp
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

#ifndef HEADFIT_CORE_KDTREE_HPP
#define HEADFIT_CORE_KDTREE_HPP

#include "Eigen/Core"

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace headfit {

/// Static 3D kd-tree answering exact nearest-neighbour queries.
class KdTree3
{
public:
    explicit KdTree3(std::span<const Eigen::Vector3d> points) : points_(points.begin(), points.end())
    {
        order_.resize(points_.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (!points_.empty())
        {
            nodes_.reserve(points_.size());
            root_ = build(0, order_.size(), 0);
        }
    }

    bool empty() const noexcept { return points_.empty(); }

    /// Index of the nearest point (smallest index among exact ties) and its squared distance.
    std::pair<std::size_t, double> nearest(const Eigen::Vector3d& q) const
    {
        std::size_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        if (root_ >= 0)
        {
            search(root_, q, best, best_d2);
        }
        return {best, best_d2};
    }

private:
    struct Node
    {
        std::size_t point;
        int axis;
        int left = -1;
        int right = -1;
    };

    int build(std::size_t begin, std::size_t end, int depth)
    {
        if (begin >= end)
        {
            return -1;
        }
        const int axis = depth % 3;
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                             return points_[a](axis) < points_[b](axis);
                         });
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({order_[mid], axis});
        const int l = build(begin, mid, depth + 1);
        const int r = build(mid + 1, end, depth + 1);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    void search(int node_id, const Eigen::Vector3d& q, std::size_t& best, double& best_d2) const
    {
        const Node& node = nodes_[static_cast<std::size_t>(node_id)];
        const Eigen::Vector3d& p = points_[node.point];
        const double d2 = (p - q).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && node.point < best))
        {
            best_d2 = d2;
            best = node.point;
        }
        const double diff = q(node.axis) - p(node.axis);
        const int near = diff < 0.0 ? node.left : node.right;
        const int far = diff < 0.0 ? node.right : node.left;
        if (near >= 0)
        {
            search(near, q, best, best_d2);
        }
        if (far >= 0 && diff * diff <= best_d2)
        {
            search(far, q, best, best_d2);
        }
    }

    std::vector<Eigen::Vector3d> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

} /* namespace headfit */

#endif /* HEADFIT_CORE_KDTREE_HPP */
