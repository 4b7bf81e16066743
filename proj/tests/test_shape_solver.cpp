/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: tests/test_shape_solver.cpp
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
#include "headfit/fitting/shape_solver.hpp"
#include "headfit/pipeline/scene.hpp"
#include "headfit/synth/scene_generator.hpp"

#include "Eigen/Dense"
#include "gtest/gtest.h"

#include <algorithm>
#include <cmath>

using namespace headfit;
using namespace headfit::fitting;

namespace {

struct Fixture
{
    std::shared_ptr<const morphablemodel::MorphableModel> model;
    synth::SyntheticScene truth;
    pipeline::SceneInput scene;
};

Fixture noiseless(std::uint64_t seed, std::shared_ptr<const morphablemodel::MorphableModel> model = test::default_model())
{
    synth::SyntheticSpec spec;
    spec.noise = synth::NoiseSpec::none();
    auto [gt, scene] = synth::generate_scene(model, spec, seed);
    return {model, std::move(gt), std::move(scene)};
}

/// Exact projections of the selected landmarks of the true head in every `stride`-th frame.
KeypointSet exact_keypoints(const Fixture& fx, bool facial_only, int stride = 1)
{
    KeypointSet out;
    int i = 0;
    for (const auto& [frame, cam] : fx.scene.cameras)
    {
        if (i++ % stride != 0)
        {
            continue;
        }
        FrameKeypoints fk{cam, {}};
        for (const auto& [id, v] : fx.model->landmarks())
        {
            if (facial_only && !pipeline::is_facial_landmark(*fx.model, id))
            {
                continue;
            }
            const Eigen::Vector3d x = fx.truth.model_to_world(fx.truth.mesh.vertices[static_cast<std::size_t>(v)]);
            fk.points.push_back({id, v, camera::project(cam, x), 1.0});
        }
        out.push_back(std::move(fk));
    }
    return out;
}

FittingContext true_context(const Fixture& fx, double lambda)
{
    FittingContext ctx;
    ctx.model = fx.model;
    ctx.alpha = morphablemodel::ShapeParams::zero(*fx.model);
    ctx.sim = fx.truth.model_to_world;
    ctx.lambda = lambda;
    return ctx;
}

/// Independent minimiser of the stacked least-squares system via column-pivoted QR.
Eigen::VectorXd stacked_least_squares(const FittingContext& ctx, const Backprojection& bp)
{
    const auto& model = *ctx.model;
    const int n = model.num_components();
    std::vector<const BackprojectedPoint*> pts;
    for (const auto& f : bp.frames)
    {
        if (static_cast<int>(f.points.size()) < ctx.min_frame_keypoints)
        {
            continue;
        }
        for (const auto& p : f.points)
        {
            pts.push_back(&p);
        }
    }
    const Eigen::Index rows = static_cast<Eigen::Index>(3 * pts.size()) + n;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
    for (std::size_t i = 0; i < pts.size(); ++i)
    {
        const double sw = std::sqrt(pts[i]->weight);
        for (int c = 0; c < 3; ++c)
        {
            const Eigen::Index row = static_cast<Eigen::Index>(3 * i) + c;
            const Eigen::Index src = 3 * pts[i]->vertex + c;
            a.row(row) = sw * model.components().row(src);
            b(row) = sw * (pts[i]->model(c) - model.mean()(src));
        }
    }
    const double top = model.eigenvalues().maxCoeff();
    for (int j = 0; j < n; ++j)
    {
        const double ev = std::max(model.eigenvalues()(j), ctx.eigenvalue_floor * top);
        a(static_cast<Eigen::Index>(3 * pts.size()) + j, j) = std::sqrt(ctx.lambda / ev);
    }
    return a.colPivHouseholderQr().solve(b);
}

} // namespace

TEST(ShapeSolver, BackprojectionIsSelfConsistent)
{
    const Fixture fx = noiseless(1);
    FittingContext ctx = true_context(fx, 1.0);
    ctx.alpha = fx.truth.alpha;
    const KeypointSet kps = exact_keypoints(fx, false, 6);
    const Backprojection bp = backproject_keypoints(ctx, kps);
    std::size_t observations = 0;
    for (const auto& f : kps)
    {
        observations += f.points.size();
    }
    EXPECT_EQ(bp.point_count(), observations);
    EXPECT_TRUE(bp.warnings.empty());
    for (const auto& f : bp.frames)
    {
        for (const auto& p : f.points)
        {
            const Eigen::Vector3d model_pt = fx.truth.mesh.vertices[static_cast<std::size_t>(p.vertex)];
            EXPECT_LT((p.world - fx.truth.model_to_world(model_pt)).norm(), 1e-9);
            EXPECT_LT((p.model - model_pt).norm(), 1e-9 * 1e3);
        }
    }
}

TEST(ShapeSolver, PixelOffsetMovesAlongCameraX)
{
    const Fixture fx = noiseless(2);
    FittingContext ctx = true_context(fx, 1.0);
    ctx.alpha = fx.truth.alpha;
    KeypointSet kps = exact_keypoints(fx, true, 10);
    const Backprojection base = backproject_keypoints(ctx, kps);
    const double du = 2.5;
    kps[0].points[3].pixel.x() += du;
    const Backprojection moved = backproject_keypoints(ctx, kps);
    const auto& cam = kps[0].camera;
    const BackprojectedPoint& a = base.frames[0].points[3];
    const BackprojectedPoint& b = moved.frames[0].points[3];
    const Eigen::Vector3d expected = a.depth * du / cam.fx() * cam.rotation.row(0).transpose();
    EXPECT_LT((b.world - a.world - expected).norm(), 1e-12);
}

TEST(ShapeSolver, BehindCameraFrameIsExcludedWithWarning)
{
    const Fixture fx = noiseless(3);
    FittingContext ctx = true_context(fx, 1.0);
    KeypointSet kps = exact_keypoints(fx, true, 12);
    FrameKeypoints behind = kps[0];
    behind.camera.rotation = -behind.camera.rotation;
    behind.camera.rotation.row(0) = -behind.camera.rotation.row(0);
    behind.camera.translation = -behind.camera.rotation * kps[0].camera.center();
    behind.camera.frame_id = 999;
    kps.push_back(behind);
    const Backprojection bp = backproject_keypoints(ctx, kps);
    EXPECT_EQ(bp.frames.size(), kps.size() - 1);
    ASSERT_EQ(bp.warnings.size(), 1u);
    EXPECT_NE(bp.warnings[0].find("999"), std::string::npos);
}

TEST(ShapeSolver, MeanShapeObservationsGiveZeroCoefficients)
{
    Fixture fx = noiseless(4);
    fx.truth.alpha = morphablemodel::ShapeParams::zero(*fx.model);
    fx.truth.mesh = morphablemodel::synthesize(*fx.model, fx.truth.alpha);
    const KeypointSet kps = exact_keypoints(fx, false, 4);
    for (double lambda : {0.0, 1.0, 100.0, 1e4})
    {
        FittingContext ctx = true_context(fx, lambda);
        const auto alpha = solve_shape_step(ctx, backproject_keypoints(ctx, kps));
        EXPECT_LT(alpha.alpha.norm(), 1e-8) << "lambda " << lambda;
    }
}

TEST(ShapeSolver, RecoversTrueCoefficientsOnNoiselessData)
{
    const Fixture fx = noiseless(5);
    FittingContext ctx = true_context(fx, 1e-8);
    const KeypointSet kps = exact_keypoints(fx, false, 2);
    for (int it = 0; it < 200; ++it)
    {
        ctx.alpha = solve_shape_step(ctx, backproject_keypoints(ctx, kps));
    }
    EXPECT_GT(morphablemodel::param_cosine_similarity(ctx.alpha, fx.truth.alpha), 0.999);
}

TEST(ShapeSolver, MatchesStackedLeastSquares)
{
    const Fixture fx = noiseless(6);
    Rng rng(6);
    KeypointSet kps = exact_keypoints(fx, false, 5);
    for (auto& f : kps)
    {
        for (auto& p : f.points)
        {
            p.pixel += 2.0 * Eigen::Vector2d(rng.normal(), rng.normal());
            p.weight = rng.uniform(0.5, 1.5);
        }
    }
    for (double lambda : {0.1, 10.0, 1000.0})
    {
        FittingContext ctx = true_context(fx, lambda);
        const Backprojection bp = backproject_keypoints(ctx, kps);
        const Eigen::VectorXd fast = solve_shape_step(ctx, bp).alpha;
        const Eigen::VectorXd oracle = stacked_least_squares(ctx, bp);
        EXPECT_LT((fast - oracle).norm() / oracle.norm(), 1e-8) << "lambda " << lambda;
        // The minimiser beats nearby points on the objective.
        const double best = shape_objective(ctx, bp, morphablemodel::ShapeParams{fast});
        for (int k = 0; k < 10; ++k)
        {
            Eigen::VectorXd d(fast.size());
            for (Eigen::Index j = 0; j < d.size(); ++j)
            {
                d(j) = 1e-3 * rng.normal();
            }
            EXPECT_LE(best, shape_objective(ctx, bp, morphablemodel::ShapeParams{fast + d}));
        }
    }
}

TEST(ShapeSolver, LargerLambdaShrinksCoefficients)
{
    const Fixture fx = noiseless(7);
    Rng rng(7);
    KeypointSet kps = exact_keypoints(fx, false, 6);
    for (auto& f : kps)
    {
        for (auto& p : f.points)
        {
            p.pixel += Eigen::Vector2d(rng.normal(), rng.normal());
        }
    }
    FittingContext ctx = true_context(fx, 0.0);
    const Backprojection bp = backproject_keypoints(ctx, kps);
    const Eigen::VectorXd ev = fx.model->eigenvalues();
    double prev_norm = std::numeric_limits<double>::infinity();
    double prev_weighted = prev_norm;
    double norm_1e8 = 0.0;
    for (double lambda : {1e-3, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9})
    {
        ctx.lambda = lambda;
        const Eigen::VectorXd a = solve_shape_step(ctx, bp).alpha;
        const double weighted = a.cwiseAbs2().cwiseQuotient(ev).sum();
        EXPECT_LE(weighted, prev_weighted * (1 + 1e-12)) << "lambda " << lambda;
        EXPECT_LE(a.norm(), prev_norm * (1 + 1e-12)) << "lambda " << lambda;
        if (lambda == 1e8)
        {
            norm_1e8 = a.norm();
        }
        prev_norm = a.norm();
        prev_weighted = weighted;
    }
    // Strong-prior regime: the coefficients decay like 1 / lambda.
    EXPECT_NEAR(norm_1e8 / prev_norm, 10.0, 0.1);
}

TEST(ShapeSolver, FrameOrderDoesNotMatter)
{
    const Fixture fx = noiseless(8);
    Rng rng(8);
    KeypointSet kps = exact_keypoints(fx, false, 4);
    for (auto& f : kps)
    {
        for (auto& p : f.points)
        {
            p.pixel += Eigen::Vector2d(rng.normal(), rng.normal());
        }
    }
    FittingContext ctx = true_context(fx, 100.0);
    const Eigen::VectorXd a = solve_shape_step(ctx, backproject_keypoints(ctx, kps)).alpha;
    std::reverse(kps.begin(), kps.end());
    std::swap(kps[1], kps[3]);
    const Eigen::VectorXd b = solve_shape_step(ctx, backproject_keypoints(ctx, kps)).alpha;
    EXPECT_EQ(a, b);
}

TEST(ShapeSolver, SparseFramesAreDroppedWithWarning)
{
    const Fixture fx = noiseless(9);
    KeypointSet kps = exact_keypoints(fx, false, 8);
    kps[0].points.resize(3);
    FittingContext ctx = true_context(fx, 100.0);
    ShapeSolveReport report;
    solve_shape_step(ctx, backproject_keypoints(ctx, kps), &report);
    EXPECT_EQ(report.frames_used.size(), kps.size() - 1);
    EXPECT_EQ(std::count(report.frames_used.begin(), report.frames_used.end(), kps[0].camera.frame_id), 0);
    ASSERT_FALSE(report.warnings.empty());
    EXPECT_NE(report.warnings[0].find(std::to_string(kps[0].camera.frame_id)), std::string::npos);
}

TEST(ShapeSolver, UnderdeterminedUnregularisedSolveIsIllPosed)
{
    const Fixture fx = noiseless(10);
    KeypointSet kps = exact_keypoints(fx, true, 1);
    kps.resize(1);
    kps[0].points.resize(4);
    FittingContext ctx = true_context(fx, 0.0);
    try
    {
        solve_shape_step(ctx, backproject_keypoints(ctx, kps));
        FAIL() << "expected ill-posed error";
    } catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::IllPosed);
        EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
    }
}

TEST(ShapeSolver, NegativeLambdaIsRejected)
{
    const Fixture fx = noiseless(11);
    FittingContext ctx = true_context(fx, -1.0);
    EXPECT_THROW(solve_shape_step(ctx, Backprojection{}), Error);
}

namespace {

FittingContext anchored_context(const Fixture& fx, double lambda)
{
    FittingContext ctx = true_context(fx, lambda);
    ctx.sim = {};
    for (const auto& id : fx.model->group("face"))
    {
        const int v = fx.model->landmark_vertex(id);
        ctx.anchors[id] = fx.truth.model_to_world(fx.truth.mesh.vertices[static_cast<std::size_t>(v)]);
    }
    return ctx;
}

} // namespace

TEST(ShapeSolver, IterationLowersTheShapeObjective)
{
    const Fixture fx = noiseless(12);
    FittingContext ctx = anchored_context(fx, 100.0);
    const KeypointSet kps = exact_keypoints(fx, true, 6);
    const FitIterationResult r = iterate_fit(ctx, kps, 9);
    ASSERT_EQ(r.trace.size(), 9u);
    EXPECT_LT(r.trace.back().shape_objective, r.trace.front().shape_objective);
    for (std::size_t i = 0; i < r.trace.size(); ++i)
    {
        EXPECT_EQ(r.trace[i].iteration, static_cast<int>(i));
    }
}

TEST(ShapeSolver, OneIterationIsTheFourSubSteps)
{
    const Fixture fx = noiseless(13);
    const KeypointSet kps = exact_keypoints(fx, true, 6);
    FittingContext auto_ctx = anchored_context(fx, 100.0);
    const FitIterationResult r = iterate_fit(auto_ctx, kps, 1);

    FittingContext ctx = anchored_context(fx, 100.0);
    std::vector<Eigen::Vector3d> src, dst;
    for (const auto& [id, target] : ctx.anchors)
    {
        src.push_back(fx.model->mean_at(fx.model->landmark_vertex(id)));
        dst.push_back(target);
    }
    ctx.sim = camera::umeyama_fit(src, dst);
    const auto [pose, report] = refine_pose(make_pose_problem(ctx, kps), camera::RigidTransform::identity(), ctx.lm);
    ctx.opt = pose;
    const auto alpha = solve_shape_step(ctx, backproject_keypoints(ctx, kps));

    EXPECT_EQ(r.alpha.alpha, alpha.alpha);
    EXPECT_EQ(r.sim.rotation, ctx.sim.rotation);
    EXPECT_EQ(r.opt.translation, pose.translation);
    EXPECT_EQ(r.trace[0].pose_objective, report.final_objective);
}

TEST(ShapeSolver, FailedIterationCarriesPartialTrace)
{
    const Fixture fx = noiseless(14);
    FittingContext ctx = anchored_context(fx, 100.0);
    const KeypointSet kps = exact_keypoints(fx, true, 6);
    const DynamicFeatureSource failing = [](const FittingContext& c) -> std::map<int, std::vector<VertexObservation>> {
        if (c.iteration == 2)
        {
            throw Error(ErrorKind::NoFeature, "no features");
        }
        return {};
    };
    try
    {
        iterate_fit(ctx, kps, 5, failing);
        FAIL() << "expected an aborted fit";
    } catch (const FitAbortedError& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::NoFeature);
        EXPECT_EQ(e.trace().size(), 2u);
        EXPECT_NE(std::string(e.what()).find("iteration 2"), std::string::npos) << e.what();
    }
}
