/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: tests/test_eval_metrics.cpp
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
#include "support.hpp"

#include "headfit/core/error.hpp"
#include "headfit/eval/metrics.hpp"
#include "headfit/pipeline/fit_pipeline.hpp"
#include "headfit/synth/scene_generator.hpp"

#include "gtest/gtest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

using namespace headfit;
using namespace headfit::eval;

namespace {

AlignedHead random_head(std::uint64_t seed, Rng& rng)
{
    const auto model = test::default_model();
    return {morphablemodel::synthesize(*model, morphablemodel::sample_random_shape(*model, 1.0, seed)),
            {rng.uniform(0.002, 0.02), test::random_rotation(rng), Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())}};
}

/// Head width written out: scalp vertices with extreme canonical x, distance in world space.
double naive_width(const AlignedHead& head, const std::vector<int>& region)
{
    int lo = region.front(), hi = region.front();
    for (int v : region)
    {
        const double x = head.canonical.vertices[static_cast<std::size_t>(v)].x();
        if (x < head.canonical.vertices[static_cast<std::size_t>(lo)].x())
        {
            lo = v;
        }
        if (x > head.canonical.vertices[static_cast<std::size_t>(hi)].x())
        {
            hi = v;
        }
    }
    return (head.to_world(head.canonical.vertices[static_cast<std::size_t>(lo)]) -
            head.to_world(head.canonical.vertices[static_cast<std::size_t>(hi)]))
        .norm();
}

double naive_nearest(const Eigen::Vector3d& p, const std::vector<Eigen::Vector3d>& cloud)
{
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : cloud)
    {
        best = std::min(best, (p - q).norm());
    }
    return best;
}

double naive_chamfer(const AlignedHead& head, const TriangleMesh& ref, const std::vector<int>& region, bool symmetric)
{
    const std::vector<Eigen::Vector3d> world = head.world_vertices();
    std::vector<Eigen::Vector3d> scalp;
    for (int v : region)
    {
        scalp.push_back(world[static_cast<std::size_t>(v)]);
    }
    double forward = 0.0;
    for (const auto& p : scalp)
    {
        forward += naive_nearest(p, ref.vertices);
    }
    forward /= static_cast<double>(scalp.size());
    double value = forward;
    if (symmetric)
    {
        const std::set<int> in_region(region.begin(), region.end());
        double back = 0.0;
        int count = 0;
        for (const auto& q : ref.vertices)
        {
            int nearest = 0;
            for (std::size_t v = 1; v < world.size(); ++v)
            {
                if ((world[v] - q).squaredNorm() < (world[static_cast<std::size_t>(nearest)] - q).squaredNorm())
                {
                    nearest = static_cast<int>(v);
                }
            }
            if (in_region.count(nearest))
            {
                back += naive_nearest(q, scalp);
                ++count;
            }
        }
        if (count > 0)
        {
            value = 0.5 * (forward + back / count);
        }
    }
    return value / naive_width(head, region) * 160.0;
}

TriangleMesh as_reference(const std::vector<Eigen::Vector3d>& points)
{
    TriangleMesh m;
    m.vertices = points;
    return m;
}

} // namespace

TEST(EvalMetrics, ChamferOfIdenticalMeshesIsZero)
{
    Rng rng(1);
    const AlignedHead head = random_head(1, rng);
    const auto report = chamfer_scalp(head, as_reference(head.world_vertices()), test::default_model()->top_region());
    EXPECT_EQ(report.value, 0.0);
    EXPECT_EQ(report.units, "mm");
}

TEST(EvalMetrics, ChamferOfOnePercentOutwardShiftIs1Point6Millimetres)
{
    const auto model = test::default_model();
    Rng rng(2);
    AlignedHead head{morphablemodel::synthesize(*model, morphablemodel::ShapeParams::zero(*model)),
                     {0.01, test::random_rotation(rng), Eigen::Vector3d(1, 2, 3)}};
    const double width = naive_width(head, model->top_region());
    std::vector<Eigen::Vector3d> shifted;
    for (const auto& v : head.canonical.vertices)
    {
        const Eigen::Vector3d outward = head.to_world.rotation * v.normalized();
        shifted.push_back(head.to_world(v) + 0.01 * width * outward);
    }
    EXPECT_NEAR(chamfer_scalp(head, as_reference(shifted), model->top_region()).value, 1.6, 1e-9);
    EXPECT_NEAR(chamfer_scalp(head, as_reference(shifted), model->top_region(), 100.0).value, 1.0, 1e-9);
}

TEST(EvalMetrics, ChamferMatchesBruteForce)
{
    const auto model = test::default_model();
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial)
    {
        const AlignedHead head = random_head(100 + trial, rng);
        const AlignedHead other = random_head(200 + trial, rng);
        TriangleMesh ref = as_reference(other.world_vertices());
        ref.vertices.resize(ref.vertices.size() / 2);
        for (bool symmetric : {false, true})
        {
            const double expected = naive_chamfer(head, ref, model->top_region(), symmetric);
            for (int threads : {1, 3})
            {
                const double got = chamfer_scalp(head, ref, model->top_region(), 160.0, symmetric, threads).value;
                EXPECT_NEAR(got, expected, 1e-10 * expected) << "trial " << trial << " symmetric " << symmetric;
            }
        }
    }
}

TEST(EvalMetrics, ChamferIsRigidInvariantAndNonNegative)
{
    const auto model = test::default_model();
    Rng rng(4);
    const AlignedHead head = random_head(5, rng);
    const AlignedHead other = random_head(6, rng);
    const TriangleMesh ref = as_reference(other.world_vertices());
    const double base = chamfer_scalp(head, ref, model->top_region()).value;
    EXPECT_GT(base, 0.0);
    const camera::SimilarityTransform motion{1.0, test::random_rotation(rng), Eigen::Vector3d(3, -2, 7)};
    AlignedHead moved = head;
    moved.to_world = motion * head.to_world;
    TriangleMesh moved_ref = ref;
    for (auto& v : moved_ref.vertices)
    {
        v = motion(v);
    }
    EXPECT_NEAR(chamfer_scalp(moved, moved_ref, model->top_region()).value, base, 1e-9 * base);
}

TEST(EvalMetrics, ChamferErrors)
{
    const auto model = test::default_model();
    Rng rng(5);
    const AlignedHead head = random_head(7, rng);
    try
    {
        chamfer_scalp(head, TriangleMesh{}, model->top_region());
        FAIL();
    } catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyInput);
    }
    EXPECT_THROW(chamfer_scalp(head, as_reference(head.world_vertices()), std::vector<int>{}), Error);
}

namespace {

struct RmsFixture
{
    AlignedHead head;
    std::map<int, camera::PerspectiveCamera> cameras;
    std::map<int, std::vector<fitting::Observation>> exact;
};

RmsFixture rms_fixture(std::uint64_t seed)
{
    Rng rng(seed);
    const auto model = test::default_model();
    RmsFixture fx{random_head(seed, rng), {}, {}};
    fx.head.to_world = {0.01, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()};
    for (int f = 0; f < 6; ++f)
    {
        const double az = rng.uniform(-0.6, 0.6);
        const auto cam = test::look_at(f, 5.0 * Eigen::Vector3d(std::sin(az), 0.1, std::cos(az)), Eigen::Vector3d::Zero());
        fx.cameras.emplace(f, cam);
        for (const auto& [id, vertex] : model->landmarks())
        {
            fx.exact[f].push_back(
                {id, camera::project(cam, fx.head.to_world(fx.head.canonical.vertices[static_cast<std::size_t>(vertex)])), 1.0});
        }
    }
    return fx;
}

} // namespace

TEST(EvalMetrics, RmsOfExactKeypointsIsZero)
{
    const auto fx = rms_fixture(10);
    const auto report = rms_reprojection(fx.head, *test::default_model(), fx.cameras, fx.exact);
    EXPECT_LT(report.value, 1e-9);
    EXPECT_EQ(report.frame_count, 6u);
    EXPECT_EQ(report.units, "px");
}

TEST(EvalMetrics, UniformThreePixelOffsetGivesThree)
{
    auto fx = rms_fixture(11);
    for (auto& [f, points] : fx.exact)
    {
        for (auto& p : points)
        {
            p.pixel.x() += 3.0;
        }
    }
    EXPECT_NEAR(rms_reprojection(fx.head, *test::default_model(), fx.cameras, fx.exact).value, 3.0, 1e-9);
}

TEST(EvalMetrics, RmsMatchesDirectFormulaPerSubset)
{
    const auto model = test::default_model();
    auto fx = rms_fixture(12);
    Rng rng(12);
    std::vector<Eigen::Vector2d> offsets;
    std::vector<bool> jaw;
    for (auto& [f, points] : fx.exact)
    {
        for (auto& p : points)
        {
            const Eigen::Vector2d d(rng.normal(0, 4), rng.normal(0, 4));
            p.pixel += d;
            offsets.push_back(d);
            jaw.push_back(model->in_group("jawline", p.keypoint_id));
        }
    }
    for (auto subset : {LandmarkSubset::All, LandmarkSubset::NoJawline, LandmarkSubset::JawlineOnly})
    {
        double sum = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < offsets.size(); ++i)
        {
            if ((subset == LandmarkSubset::NoJawline && jaw[i]) || (subset == LandmarkSubset::JawlineOnly && !jaw[i]))
            {
                continue;
            }
            sum += offsets[i].squaredNorm();
            ++n;
        }
        const auto report = rms_reprojection(fx.head, *model, fx.cameras, fx.exact, subset);
        EXPECT_NEAR(report.value, std::sqrt(sum / n), 1e-9) << to_string(subset);
        EXPECT_EQ(report.point_count, static_cast<std::size_t>(n));
    }
}

TEST(EvalMetrics, RmsIgnoresKeypointOrder)
{
    auto fx = rms_fixture(13);
    Rng rng(13);
    for (auto& [f, points] : fx.exact)
    {
        for (auto& p : points)
        {
            p.pixel += Eigen::Vector2d(rng.normal(), rng.normal());
        }
    }
    const double a = rms_reprojection(fx.head, *test::default_model(), fx.cameras, fx.exact).value;
    for (auto& [f, points] : fx.exact)
    {
        std::reverse(points.begin(), points.end());
    }
    EXPECT_NEAR(rms_reprojection(fx.head, *test::default_model(), fx.cameras, fx.exact).value, a, 1e-12 * a);
}

TEST(EvalMetrics, RmsErrors)
{
    const auto model = test::default_model();
    auto fx = rms_fixture(14);
    std::map<int, std::vector<fitting::Observation>> no_jaw;
    for (const auto& [f, points] : fx.exact)
    {
        for (const auto& p : points)
        {
            if (!model->in_group("jawline", p.keypoint_id))
            {
                no_jaw[f].push_back(p);
            }
        }
    }
    try
    {
        rms_reprojection(fx.head, *model, fx.cameras, no_jaw, LandmarkSubset::JawlineOnly);
        FAIL();
    } catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyInput);
    }
    fx.exact[99] = fx.exact.at(0);
    EXPECT_THROW(rms_reprojection(fx.head, *model, fx.cameras, fx.exact), Error);
}

TEST(EvalMetrics, SphereRatiosAreOne)
{
    const TriangleMesh sphere = test::uv_sphere(1.0, 32, 64);
    const AlignedHead head{{sphere.vertices, std::make_shared<const Topology>(sphere.triangles)}, {}};
    const auto portrait = test::look_at(0, {0, 0, 6}, {0, 0, 0});
    const auto lateral = test::look_at(1, {6, 0, 0}, {0, 0, 0});
    const HeadRatios r = anthropometric_ratios(head, portrait, lateral);
    EXPECT_NEAR(r.height_over_width, 1.0, 1e-6);
}

TEST(EvalMetrics, EllipsoidRatiosFollowTheAxes)
{
    const auto model = test::default_model();
    const AlignedHead head{morphablemodel::synthesize(*model, morphablemodel::ShapeParams::zero(*model)),
                           {}};
    // Near-orthographic: far cameras with long focal length. Semi-axes (75, 115, 95).
    const auto portrait = test::look_at(0, {0, 0, 1e6}, {0, 0, 0}, 1e7);
    const auto lateral = test::look_at(1, {1e6, 0, 0}, {0, 0, 0}, 1e7);
    const HeadRatios r = anthropometric_ratios(head, portrait, lateral);
    EXPECT_NEAR(r.height_over_width, 115.0 / 75.0, 0.01 * 115.0 / 75.0);
    EXPECT_NEAR(r.height_over_length, 115.0 / 95.0, 0.01 * 115.0 / 95.0);
}

TEST(EvalMetrics, RatiosAreStableAcrossCameraDistance)
{
    const auto model = test::default_model();
    Rng rng(15);
    const AlignedHead head{morphablemodel::synthesize(*model, morphablemodel::ShapeParams::zero(*model)),
                           {0.006, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()}};
    const double s = head.to_world.scale;
    const HeadRatios near = anthropometric_ratios(head, test::look_at(0, {0, 0, 600 * s}, {0, 0, 0}),
                                                  test::look_at(1, {600 * s, 0, 0}, {0, 0, 0}));
    const HeadRatios far = anthropometric_ratios(head, test::look_at(0, {0, 0, 1200 * s}, {0, 0, 0}),
                                                 test::look_at(1, {1200 * s, 0, 0}, {0, 0, 0}));
    EXPECT_NEAR(near.height_over_width / far.height_over_width, 1.0, 0.02);
    EXPECT_NEAR(near.height_over_length / far.height_over_length, 1.0, 0.02);
}

TEST(EvalMetrics, ConsistencyOfIdenticalFitsIsZero)
{
    const auto model = test::default_model();
    Rng rng(16);
    const AlignedHead a = random_head(16, rng);
    const ConsistencyReport r = vertex_displacement_consistency(a, a, model->face_region(), model->top_region());
    EXPECT_LT(r.head_percent, 1e-9);
    EXPECT_LT(r.face_percent, 1e-9);
    EXPECT_LT(r.scalp_percent, 1e-9);
}

TEST(EvalMetrics, ConsistencyIgnoresPlacement)
{
    const auto model = test::default_model();
    Rng rng(17);
    const AlignedHead a = random_head(17, rng);
    AlignedHead b = a;
    b.to_world.translation += Eigen::Vector3d(5, -3, 2);
    b.to_world.rotation = test::random_rotation(rng) * b.to_world.rotation;
    b.to_world.scale *= 2.5;
    const ConsistencyReport r = vertex_displacement_consistency(a, b, model->face_region(), model->top_region());
    EXPECT_LT(r.head_percent, 1e-8);
    EXPECT_LT(r.face_percent, 1e-8);
    EXPECT_LT(r.scalp_percent, 1e-8);
}

TEST(EvalMetrics, ConsistencyIsSymmetric)
{
    const auto model = test::default_model();
    Rng rng(18);
    const AlignedHead a = random_head(18, rng);
    const AlignedHead b = random_head(19, rng);
    const ConsistencyReport ab = vertex_displacement_consistency(a, b, model->face_region(), model->top_region());
    const ConsistencyReport ba = vertex_displacement_consistency(b, a, model->face_region(), model->top_region());
    EXPECT_GT(ab.head_percent, 0.0);
    EXPECT_NEAR(ab.head_percent, ba.head_percent, 1e-9 * ab.head_percent);
    EXPECT_NEAR(ab.face_percent, ba.face_percent, 1e-9 * ab.face_percent);
    EXPECT_NEAR(ab.scalp_percent, ba.scalp_percent, 1e-9 * ab.scalp_percent);
}

TEST(EvalMetrics, ConsistencyRejectsTopologyMismatch)
{
    const auto model = test::default_model();
    Rng rng(20);
    const AlignedHead a = random_head(20, rng);
    AlignedHead b = a;
    b.canonical.vertices.pop_back();
    try
    {
        vertex_displacement_consistency(a, b, model->face_region(), model->top_region());
        FAIL();
    } catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::TopologyMismatch);
    }
}

TEST(EvalMetrics, RepeatedNoisyFitsAreConsistent)
{
    // Same ground-truth head, independent keypoint noise and mesh jitter.
    const auto model = test::default_model();
    const auto [gt, first] = synth::generate_scene(model, synth::SyntheticSpec{}, 30);
    pipeline::SceneInput second = first;
    Rng rng(31);
    for (auto& [frame, points] : second.keypoints)
    {
        const auto& exact = gt.exact_keypoints.at(frame);
        for (std::size_t i = 0; i < points.size(); ++i)
        {
            points[i].pixel = exact[i].pixel + Eigen::Vector2d(rng.normal(), rng.normal());
        }
    }
    const double jitter = gt.spec.noise.mesh_jitter * gt.head_width;
    for (std::size_t v = 0; v < gt.mesh.vertices.size(); ++v)
    {
        second.dense.vertices[v] =
            gt.model_to_world(gt.mesh.vertices[v]) + jitter * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    }
    const pipeline::FitResult a = pipeline::run_pipeline(first, pipeline::PipelineConfig{});
    const pipeline::FitResult b = pipeline::run_pipeline(second, pipeline::PipelineConfig{});
    const AlignedHead ha{morphablemodel::synthesize(*model, a.alpha_final), a.stage2.model_to_world()};
    const AlignedHead hb{morphablemodel::synthesize(*model, b.alpha_final), b.stage2.model_to_world()};
    const ConsistencyReport r = vertex_displacement_consistency(ha, hb, model->face_region(), model->top_region());
    EXPECT_LT(r.head_percent, 3.0);
    EXPECT_LT(r.face_percent, 3.0);
    EXPECT_LT(r.scalp_percent, 3.0);
}
