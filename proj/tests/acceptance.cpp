/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: tests/acceptance.cpp
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

#include "headfit/camera/umeyama.hpp"
#include "headfit/eval/metrics.hpp"
#include "headfit/fitting/pose_refine.hpp"
#include "headfit/fitting/shape_solver.hpp"
#include "headfit/io/mesh_io.hpp"
#include "headfit/io/model_archive.hpp"
#include "headfit/io/scene_io.hpp"
#include "headfit/pipeline/fit_pipeline.hpp"
#include "headfit/silhouette/rasterize.hpp"
#include "headfit/silhouette/scalp_features.hpp"
#include "headfit/synth/lambda_sweep.hpp"
#include "headfit/synth/scene_generator.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace headfit;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

// ---------------------------------------------------------------- 1

Outcome transform_oracle()
{
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1001);
    double worst_rot = 0.0, worst_scale = 0.0;
    int trials = 0;
    while (trials < 1000)
    {
        const int n = static_cast<int>(rng.uniform(3.0, 101.0));
        std::vector<Eigen::Vector3d> src(static_cast<std::size_t>(n));
        for (auto& p : src)
            p = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        // Skip nearly collinear clouds.
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (const auto& p : src)
            mean += p;
        mean /= n;
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const auto& p : src)
            cov += (p - mean) * (p - mean).transpose();
        const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov).eigenvalues();
        if (ev(1) < 1e-3 * ev(2))
            continue;
        const camera::SimilarityTransform truth{rng.uniform(0.01, 100.0), test::random_rotation(rng),
                                                10.0 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())};
        std::vector<Eigen::Vector3d> dst;
        for (const auto& p : src)
            dst.push_back(truth(p));
        const camera::SimilarityTransform fit = camera::umeyama_fit(src, dst);
        worst_rot = std::max(worst_rot, camera::rotation_angle_between(fit.rotation, truth.rotation));
        worst_scale = std::max(worst_scale, std::abs(fit.scale / truth.scale - 1.0));
        ++trials;
    }
    const double t = seconds_since(t0);
    return {worst_rot < 1e-8 && worst_scale < 1e-9 && t < 5.0,
            fmt("1000 transforms, max rotation error %.2e rad (< 1e-8), max relative scale error %.2e (< 1e-9), %.2f s "
                "(< 5 s)",
                worst_rot, worst_scale, t)};
}

// ---------------------------------------------------------------- 2

Outcome pose_oracle()
{
    const auto t0 = std::chrono::steady_clock::now();
    int converged = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
    {
        const auto fx = test::random_pose_problem(2000 + seed, 20, 30);
        Rng rng(3000 + seed);
        const auto start = test::perturb(fx.truth, 10.0, 0.05 * fx.camera_distance, rng);
        try
        {
            const auto [pose, report] = fitting::refine_pose(fx.problem, start);
            if (report.final_objective < 1e-8)
                ++converged;
        } catch (const Error&)
        {
        }
    }
    const double t = seconds_since(t0);
    return {converged >= 95 && t < 60.0,
            fmt("%d/100 seeds reach objective < 1e-8 (>= 95) from 10 deg / 5%% starts, %.1f s (< 60 s)", converged, t)};
}

// ---------------------------------------------------------------- 3

Outcome shape_oracle()
{
    std::ostringstream detail;
    bool pass = true;
    for (int n : {5, 20, 50})
    {
        const auto model = test::model_with_components(n);
        synth::SyntheticSpec spec;
        spec.noise = synth::NoiseSpec::none();
        const auto [gt, scene] = synth::generate_scene(model, spec, 3000 + static_cast<std::uint64_t>(n));
        fitting::KeypointSet kps;
        for (const auto& [frame, cam] : scene.cameras)
        {
            fitting::FrameKeypoints fk{cam, {}};
            for (const auto& [id, v] : model->landmarks())
            {
                const Eigen::Vector3d x = gt.model_to_world(gt.mesh.vertices[static_cast<std::size_t>(v)]);
                if ((cam.rotation * x + cam.translation).z() > 0.0)
                    fk.points.push_back({id, v, camera::project(cam, x), 1.0});
            }
            kps.push_back(std::move(fk));
        }
        fitting::FittingContext ctx;
        ctx.model = model;
        ctx.alpha = morphablemodel::ShapeParams::zero(*model);
        ctx.sim = gt.model_to_world;
        ctx.lambda = 1e-8;
        for (int it = 0; it < 200; ++it)
            ctx.alpha = fitting::solve_shape_step(ctx, fitting::backproject_keypoints(ctx, kps));
        const double cosine = morphablemodel::param_cosine_similarity(ctx.alpha, gt.alpha);
        const double width = eval::head_width(gt.mesh.vertices, model->top_region());
        const double ds = morphablemodel::shape_distance(*model, ctx.alpha, gt.alpha) / (width * width);
        pass = pass && cosine > 0.999 && ds < 1e-6;
        detail << fmt("n=%d cos %.6f dS/hw^2 %.2e; ", n, cosine, ds);
    }
    return {pass, detail.str() + "thresholds cos > 0.999, dS/hw^2 < 1e-6"};
}

// ---------------------------------------------------------------- 4

Outcome lambda_sweep_ordering()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto report =
        synth::lambda_sweep(test::default_model(), synth::default_sweep_lambdas(), 10, synth::SyntheticSpec{}, 4004);
    const auto& s = report.summary;
    double best_interior = std::numeric_limits<double>::infinity();
    double best_lambda = 0.0;
    std::ostringstream table;
    for (std::size_t i = 0; i < s.size(); ++i)
    {
        table << fmt(" %g:%.4g", s[i].lambda, s[i].mean_delta_s);
        if (i > 0 && i + 1 < s.size() && s[i].mean_delta_s < best_interior)
        {
            best_interior = s[i].mean_delta_s;
            best_lambda = s[i].lambda;
        }
    }
    const double t = seconds_since(t0);
    const bool pass = best_interior < s.front().mean_delta_s && best_interior < s.back().mean_delta_s && t < 900.0;
    return {pass, fmt("best interior lambda %g, mean dS", best_lambda) + table.str() + fmt(", %.0f s (< 900 s)", t)};
}

// ---------------------------------------------------------------- 5

eval::AlignedHead aligned(const morphablemodel::MorphableModel& model, const morphablemodel::ShapeParams& alpha,
                          const camera::SimilarityTransform& to_world)
{
    return {morphablemodel::synthesize(model, alpha), to_world};
}

Outcome stage_ordering()
{
    const auto model = test::default_model();
    synth::SyntheticSpec spec;
    spec.deformation = synth::Deformation::scalp;
    int good = 0;
    std::ostringstream detail;
    for (std::uint64_t h = 0; h < 10; ++h)
    {
        const auto [gt, scene] = synth::generate_scene(model, spec, derive_seed(5005, h));
        TriangleMesh reference = gt.mesh.to_triangle_mesh();
        for (auto& v : reference.vertices)
            v = gt.model_to_world(v);
        const pipeline::FitResult r = pipeline::run_pipeline(scene, pipeline::PipelineConfig{});
        const auto chamfer = [&](const morphablemodel::ShapeParams& a, const camera::SimilarityTransform& t) {
            return eval::chamfer_scalp(aligned(*model, a, t), reference, model->top_region()).value;
        };
        const double c_mean = chamfer(morphablemodel::ShapeParams::zero(*model), r.mean_alignment.model_to_world());
        const double c_front = chamfer(r.alpha_front, r.stage1.model_to_world());
        const double c_final = chamfer(r.alpha_final, r.stage2.model_to_world());
        if (c_final < c_front && c_final < c_mean)
            ++good;
        detail << fmt(" %.2f/%.2f/%.2f", c_mean, c_front, c_final);
    }
    return {good >= 8, fmt("%d/10 heads with final < front and final < mean (>= 8); mm mean/front/final:", good) +
                           detail.str()};
}

// ---------------------------------------------------------------- 6

Outcome gradient_check()
{
    Rng rng(6006);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial)
    {
        const auto fx = test::random_pose_problem(6000 + static_cast<std::uint64_t>(trial), 10, 20, 1.0);
        const auto at = test::perturb(fx.truth, 8.0, 0.05, rng);
        const auto p = at.to_params();
        const Eigen::MatrixXd ja = fitting::pose_jacobian_analytic(fx.problem, p);
        const Eigen::MatrixXd jn = fitting::pose_jacobian_numeric(fx.problem, p);
        worst = std::max(worst, (ja - jn).norm() / jn.norm());
    }
    // Every LM run of this binary so far feeds the counter.
    const long violations = fitting::lm_monotonicity_violations().load();
    return {worst < 1e-4 && violations == 0,
            fmt("100 problems, max relative Jacobian difference %.2e (< 1e-4); objective-increasing accepted steps: "
                "%ld (== 0)",
                worst, violations)};
}

// ---------------------------------------------------------------- 7

Outcome silhouette_geometry()
{
    const TriangleMesh sphere = test::uv_sphere(1.0, 90, 180);
    const double f = 800.0, cx = 639.5, cy = 479.5;
    const auto base = camera::PerspectiveCamera::from_intrinsics(0, f, f, cx, cy, 1280, 960);
    Rng rng(7007);
    double worst_area = 0.0, worst_px = 0.0, worst_euclid = 0.0;
    for (int i = 0; i < 20; ++i)
    {
        const double d = rng.uniform(3.0, 30.0);
        auto cam = base;
        cam.translation = Eigen::Vector3d(0, 0, d);
        const auto mask = silhouette::rasterize_silhouette(sphere, cam);
        const double r = f / std::sqrt(d * d - 1.0);
        worst_area = std::max(worst_area, std::abs(static_cast<double>(mask.count()) / (std::numbers::pi * r * r) - 1.0));
        for (const auto& e : silhouette::silhouette_scalp_extrema(mask, mask.height))
        {
            Eigen::Vector2d expected(cx, cy - r);
            if (e.direction == silhouette::ScalpDirection::Left)
                expected = {cx - r, cy};
            else if (e.direction == silhouette::ScalpDirection::Right)
                expected = {cx + r, cy};
            // Pixel centres sit on integers, so each axis is quantised separately.
            const Eigen::Vector2d offset = Eigen::Vector2d(e.col, e.row) - expected;
            worst_px = std::max(worst_px, offset.cwiseAbs().maxCoeff());
            worst_euclid = std::max(worst_euclid, offset.norm());
        }
    }
    return {worst_area < 0.02 && worst_px <= 1.0,
            fmt("20 distances in [3, 30] radii, max relative area error %.4f (< 0.02), max per-axis extremum offset "
                "%.3f px (<= 1), Euclidean %.3f px",
                worst_area, worst_px, worst_euclid)};
}

// ---------------------------------------------------------------- 8

#ifdef HEADFIT_CLI_PATH
int run_cli(const std::string& args)
{
    const std::string cmd = std::string("\"") + HEADFIT_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

Outcome determinism()
{
#ifndef HEADFIT_CLI_PATH
    return {false, "command line tool not built"};
#else
    const fs::path dir = test::temp_dir("acceptance_cli");
    const std::string model = (dir / "m.mfm").string();
    if (run_cli("model-build --out " + model) != 0 || run_cli("--seed 88 synth --model " + model + " --out " + (dir / "s").string()) != 0)
        return {false, "could not build the model or scene"};
    const std::string scene = " --model " + model + " --cameras " + (dir / "s" / "cameras.json").string() +
                              " --keypoints " + (dir / "s" / "keypoints").string() + " --mesh " +
                              (dir / "s" / "dense.ply").string();
    std::vector<std::string> fits, sweeps;
    for (const auto& [tag, threads] : std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", 1}, {"c", 3}})
    {
        const fs::path fit_out = dir / ("fit_" + tag), sweep_out = dir / ("sweep_" + tag);
        const std::string global = "--seed 88 --threads " + std::to_string(threads);
        if (run_cli(global + " fit" + scene + " --out " + fit_out.string()) != 0 ||
            run_cli(global + " sweep --model " + model + " --heads 3 --out " + sweep_out.string()) != 0)
            return {false, "command failed for run " + tag};
        fits.push_back(io::detail::read_file(fit_out / "manifest.json"));
        sweeps.push_back(io::detail::read_file(sweep_out / "manifest.json"));
    }
    const bool same_fit = fits[0] == fits[1] && fits[0] == fits[2];
    const bool same_sweep = sweeps[0] == sweeps[1] && sweeps[0] == sweeps[2];
    return {same_fit && same_sweep,
            fmt("fit manifests identical: %s, sweep (3 heads x 9 lambdas) manifests identical: %s, over two "
                "single-thread runs and one 3-thread run",
                same_fit ? "yes" : "no", same_sweep ? "yes" : "no")};
#endif
}

// ---------------------------------------------------------------- 9

double naive_chamfer(const eval::AlignedHead& head, const TriangleMesh& ref, const std::vector<int>& region,
                     bool symmetric)
{
    const auto world = head.world_vertices();
    const auto nearest = [](const Eigen::Vector3d& p, const std::vector<Eigen::Vector3d>& cloud) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : cloud)
            best = std::min(best, (p - q).norm());
        return best;
    };
    std::vector<Eigen::Vector3d> scalp;
    for (int v : region)
        scalp.push_back(world[static_cast<std::size_t>(v)]);
    double value = 0.0;
    for (const auto& p : scalp)
        value += nearest(p, ref.vertices);
    value /= static_cast<double>(scalp.size());
    if (symmetric)
    {
        const std::set<int> in_region(region.begin(), region.end());
        double back = 0.0;
        int count = 0;
        for (const auto& q : ref.vertices)
        {
            std::size_t best = 0;
            for (std::size_t v = 1; v < world.size(); ++v)
            {
                if ((world[v] - q).squaredNorm() < (world[best] - q).squaredNorm())
                    best = v;
            }
            if (in_region.count(static_cast<int>(best)))
            {
                back += nearest(q, scalp);
                ++count;
            }
        }
        if (count > 0)
            value = 0.5 * (value + back / count);
    }
    int lo = region.front(), hi = region.front();
    for (int v : region)
    {
        if (head.canonical.vertices[static_cast<std::size_t>(v)].x() < head.canonical.vertices[static_cast<std::size_t>(lo)].x())
            lo = v;
        if (head.canonical.vertices[static_cast<std::size_t>(v)].x() > head.canonical.vertices[static_cast<std::size_t>(hi)].x())
            hi = v;
    }
    const double width = (world[static_cast<std::size_t>(lo)] - world[static_cast<std::size_t>(hi)]).norm();
    return value / width * 160.0;
}

Outcome metric_oracles()
{
    const auto model = test::default_model();
    Rng rng(9009);
    double worst_chamfer = 0.0, worst_rms = 0.0;
    for (int trial = 0; trial < 50; ++trial)
    {
        const auto random_head = [&](std::uint64_t seed) {
            return eval::AlignedHead{
                morphablemodel::synthesize(*model, morphablemodel::sample_random_shape(*model, 1.0, seed)),
                {rng.uniform(0.002, 0.02), test::random_rotation(rng), Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())}};
        };
        const eval::AlignedHead head = random_head(9000 + static_cast<std::uint64_t>(trial));
        const eval::AlignedHead other = random_head(9500 + static_cast<std::uint64_t>(trial));
        TriangleMesh ref;
        ref.vertices = other.world_vertices();
        ref.vertices.resize(ref.vertices.size() / 2);
        const bool symmetric = trial % 2 == 1;
        const double expected = naive_chamfer(head, ref, model->top_region(), symmetric);
        const double got = eval::chamfer_scalp(head, ref, model->top_region(), 160.0, symmetric).value;
        worst_chamfer = std::max(worst_chamfer, std::abs(got - expected) / expected);

        // Reprojection RMS against the direct formula.
        eval::AlignedHead posed = head;
        posed.to_world = {0.01, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()};
        std::map<int, camera::PerspectiveCamera> cameras;
        std::map<int, std::vector<fitting::Observation>> observed;
        double sum = 0.0;
        int count = 0;
        for (int f = 0; f < 4; ++f)
        {
            const double az = rng.uniform(-0.6, 0.6);
            const auto cam =
                test::look_at(f, 5.0 * Eigen::Vector3d(std::sin(az), 0.1, std::cos(az)), Eigen::Vector3d::Zero());
            cameras.emplace(f, cam);
            for (const auto& [id, vertex] : model->landmarks())
            {
                if (rng.uniform(0.0, 1.0) < 0.2)
                    continue;
                const Eigen::Vector2d exact =
                    camera::project(cam, posed.to_world(posed.canonical.vertices[static_cast<std::size_t>(vertex)]));
                const Eigen::Vector2d offset(rng.normal(0, 3), rng.normal(0, 3));
                observed[f].push_back({id, exact + offset, 1.0});
                sum += offset.squaredNorm();
                ++count;
            }
        }
        const double rms = eval::rms_reprojection(posed, *model, cameras, observed, eval::LandmarkSubset::All).value;
        worst_rms = std::max(worst_rms, std::abs(rms - std::sqrt(sum / count)) / std::sqrt(sum / count));
    }

    // Same ground-truth head, independent keypoint noise and mesh jitter.
    const auto [gt, first] = synth::generate_scene(model, synth::SyntheticSpec{}, 9100);
    pipeline::SceneInput second = first;
    for (auto& [frame, points] : second.keypoints)
    {
        const auto& exact = gt.exact_keypoints.at(frame);
        for (std::size_t i = 0; i < points.size(); ++i)
            points[i].pixel = exact[i].pixel + Eigen::Vector2d(rng.normal(), rng.normal());
    }
    const double jitter = gt.spec.noise.mesh_jitter * gt.head_width;
    for (std::size_t v = 0; v < gt.mesh.vertices.size(); ++v)
        second.dense.vertices[v] =
            gt.model_to_world(gt.mesh.vertices[v]) + jitter * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const auto a = pipeline::run_pipeline(first, pipeline::PipelineConfig{});
    const auto b = pipeline::run_pipeline(second, pipeline::PipelineConfig{});
    const auto c = eval::vertex_displacement_consistency(aligned(*model, a.alpha_final, a.stage2.model_to_world()),
                                                         aligned(*model, b.alpha_final, b.stage2.model_to_world()),
                                                         model->face_region(), model->top_region());
    const double worst_consistency = std::max({c.head_percent, c.face_percent, c.scalp_percent});
    return {worst_chamfer < 1e-8 && worst_rms < 1e-8 && worst_consistency < 3.0,
            fmt("50 fixtures, max relative error chamfer %.2e, rms %.2e (< 1e-8); repeated noisy fits head/face/scalp "
                "%.2f/%.2f/%.2f %% (< 3 %%)",
                worst_chamfer, worst_rms, c.head_percent, c.face_percent, c.scalp_percent)};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"transform oracle", transform_oracle},
        {"pose oracle", pose_oracle},
        {"shape oracle", shape_oracle},
        {"lambda sweep ordering", lambda_sweep_ordering},
        {"stage ordering", stage_ordering},
        {"gradient check", gradient_check},
        {"silhouette geometry", silhouette_geometry},
        {"determinism", determinism},
        {"metric oracles", metric_oracles},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i)
    {
        Outcome o;
        try
        {
            o = criteria[i].second();
        } catch (const std::exception& e)
        {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
