/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: tools/headfit.cpp
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
#include "headfit/eval/metrics.hpp"
#include "headfit/io/mesh_io.hpp"
#include "headfit/io/model_archive.hpp"
#include "headfit/io/result_io.hpp"
#include "headfit/io/scene_io.hpp"
#include "headfit/morphablemodel/model_builder.hpp"
#include "headfit/pipeline/fit_pipeline.hpp"
#include "headfit/synth/lambda_sweep.hpp"
#include "headfit/synth/scene_generator.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

using namespace headfit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class LogLevel { Quiet, Info, Debug };

/// HEADFIT_LOG: quiet, info (default) or debug.
LogLevel log_level()
{
    const char* env = std::getenv("HEADFIT_LOG");
    const std::string v = env ? env : "";
    if (v == "quiet" || v == "0")
        return LogLevel::Quiet;
    if (v == "debug" || v == "2")
        return LogLevel::Debug;
    return LogLevel::Info;
}

void info(const std::string& msg)
{
    if (log_level() != LogLevel::Quiet)
        std::cerr << "[headfit] " << msg << "\n";
}

void debug(const std::string& msg)
{
    if (log_level() == LogLevel::Debug)
        std::cerr << "[headfit:debug] " << msg << "\n";
}

struct Globals
{
    std::uint64_t seed = 0;
    int threads = 1;
    std::string config;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* threads_opt = nullptr;
};

/// Config file (if any) with --seed and --threads applied on top.
io::ProjectConfig effective_config(const Globals& g)
{
    io::ProjectConfig cfg = g.config.empty() ? io::ProjectConfig{} : io::read_config(g.config);
    if (g.seed_opt->count() > 0)
        cfg.pipeline.seed = g.seed;
    if (g.threads_opt->count() > 0)
        cfg.pipeline.threads = g.threads;
    io::validate_config(cfg);
    return cfg;
}

std::shared_ptr<const morphablemodel::MorphableModel> load_shared_model(const std::string& path)
{
    return std::make_shared<const morphablemodel::MorphableModel>(io::load_model(path));
}

/// Prints a report to stdout and, with an output directory, writes report.json and report.csv.
void emit_report(const json& report, const std::string& csv, const std::string& out)
{
    std::cout << report.dump(1) << "\n";
    if (!out.empty())
    {
        io::OutputDir dir(out);
        dir.write("report.json", report.dump(1) + "\n");
        dir.write("report.csv", csv);
        dir.finish();
    }
}

json metric_json(const eval::MetricReport& r)
{
    return {{"metric", r.metric},
            {"value", r.value},
            {"units", r.units},
            {"subset", r.subset},
            {"frame_count", r.frame_count},
            {"point_count", r.point_count}};
}

std::string metric_csv(const eval::MetricReport& r)
{
    return "metric,value,units,subset,frame_count,point_count\n" + r.metric + "," + json(r.value).dump() + "," +
           r.units + "," + r.subset + "," + std::to_string(r.frame_count) + "," + std::to_string(r.point_count) + "\n";
}

std::vector<double> parse_lambdas(const std::string& text)
{
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size())
    {
        const std::size_t next = text.find(',', pos);
        const std::string item = text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        std::size_t used = 0;
        double value = 0.0;
        try
        {
            value = std::stod(item, &used);
        } catch (const std::exception&)
        {
            used = 0;
        }
        if (item.empty() || used != item.size())
            throw Error(ErrorKind::InvalidParams, "--lambdas: cannot parse '" + item + "'");
        out.push_back(value);
        if (next == std::string::npos)
            break;
        pos = next + 1;
    }
    return out;
}

int exit_code(const Error& e)
{
    switch (e.kind())
    {
    case ErrorKind::Io:
    case ErrorKind::Format:
    case ErrorKind::Validation: return 3;
    default: return 2;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"headfit: two-stage 3D morphable head model fitting"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    g.seed_opt = app.add_option("--seed", g.seed, "Master seed");
    g.threads_opt = app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--config", g.config, "Project configuration JSON");

    // model-build
    auto* build = app.add_subcommand("model-build", "Generate a synthetic head model archive");
    morphablemodel::SyntheticModelSpec model_spec;
    std::string build_out;
    build->add_option("--out", build_out, "Output .mfm path")->required();
    build->add_option("--components", model_spec.num_components, "Number of principal components")
        ->check(CLI::PositiveNumber);
    build->add_option("--rings", model_spec.rings, "Latitude rings")->check(CLI::Range(4, 1000));
    build->add_option("--segments", model_spec.segments, "Longitude segments")->check(CLI::Range(4, 1000));
    build->add_option("--decay", model_spec.eigenvalue_decay, "Eigenvalue ratio between components")
        ->check(CLI::Range(1e-6, 1.0));

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene with ground truth");
    std::string synth_model, synth_spec, synth_out;
    synth_cmd->add_option("--model", synth_model, "Model archive")->required();
    synth_cmd->add_option("--spec", synth_spec, "Synthetic scene spec JSON");
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();

    // fit
    auto* fit = app.add_subcommand("fit", "Fit the model to a scene");
    std::string fit_model, fit_cameras, fit_keypoints, fit_mesh, fit_out;
    fit->add_option("--model", fit_model, "Model archive")->required();
    fit->add_option("--cameras", fit_cameras, "Cameras JSON")->required();
    fit->add_option("--keypoints", fit_keypoints, "Keypoint directory")->required();
    fit->add_option("--mesh", fit_mesh, "Dense reconstruction (PLY or OBJ)")->required();
    fit->add_option("--out", fit_out, "Output directory")->required();

    // validate
    auto* validate = app.add_subcommand("validate", "Load and cross-check a scene without fitting");
    std::string val_model, val_cameras, val_keypoints, val_mesh;
    validate->add_option("--model", val_model, "Model archive")->required();
    validate->add_option("--cameras", val_cameras, "Cameras JSON")->required();
    validate->add_option("--keypoints", val_keypoints, "Keypoint directory")->required();
    validate->add_option("--mesh", val_mesh, "Dense reconstruction");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Regularization sweep over synthetic heads");
    std::string sweep_model, sweep_spec, sweep_out, sweep_lambdas;
    int sweep_heads = 10;
    sweep->add_option("--model", sweep_model, "Model archive")->required();
    sweep->add_option("--spec", sweep_spec, "Synthetic scene spec JSON");
    sweep->add_option("--lambdas", sweep_lambdas, "Comma separated lambda list");
    sweep->add_option("--heads", sweep_heads, "Number of synthetic heads")->check(CLI::PositiveNumber);
    sweep->add_option("--out", sweep_out, "Output directory")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluation metrics on saved fits");
    eval_cmd->require_subcommand(1);
    std::string ev_model, ev_result, ev_stage = "final", ev_out;
    const auto common = [&](CLI::App* c) {
        c->add_option("--model", ev_model, "Model archive")->required();
        c->add_option("--stage", ev_stage, "mean, front or final")
            ->check(CLI::IsMember({"mean", "front", "final"}));
        c->add_option("--out", ev_out, "Write report.json and report.csv here");
    };
    auto* ev_chamfer = eval_cmd->add_subcommand("chamfer", "Scalp Chamfer distance to a reference mesh");
    std::string ch_mesh;
    double ch_width_mm = 160.0;
    bool ch_symmetric = false;
    common(ev_chamfer);
    ev_chamfer->add_option("--result", ev_result, "Fit output directory")->required();
    ev_chamfer->add_option("--mesh", ch_mesh, "Reference mesh")->required();
    ev_chamfer->add_option("--head-width-mm", ch_width_mm, "Reference head width in mm");
    ev_chamfer->add_flag("--symmetric", ch_symmetric, "Average in the reference-to-scalp direction");

    auto* ev_rms = eval_cmd->add_subcommand("rms", "Landmark reprojection RMS");
    std::string rms_cameras, rms_keypoints, rms_subset = "all";
    bool rms_all_frames = false;
    common(ev_rms);
    ev_rms->add_option("--result", ev_result, "Fit output directory")->required();
    ev_rms->add_option("--cameras", rms_cameras, "Cameras JSON")->required();
    ev_rms->add_option("--keypoints", rms_keypoints, "Keypoint directory")->required();
    ev_rms->add_option("--subset", rms_subset, "all, no_jawline or jawline_only")
        ->check(CLI::IsMember({"all", "no_jawline", "jawline_only"}));
    ev_rms->add_flag("--all-frames", rms_all_frames, "Use every keypoint frame instead of the held-out frames");

    auto* ev_ratios = eval_cmd->add_subcommand("ratios", "Projected height/width and height/length");
    std::string rat_cameras;
    int rat_portrait = -1, rat_lateral = -1;
    common(ev_ratios);
    ev_ratios->add_option("--result", ev_result, "Fit output directory")->required();
    ev_ratios->add_option("--cameras", rat_cameras, "Cameras JSON")->required();
    ev_ratios->add_option("--portrait", rat_portrait, "Portrait frame id")->required();
    ev_ratios->add_option("--lateral", rat_lateral, "Lateral frame id")->required();

    auto* ev_consistency = eval_cmd->add_subcommand("consistency", "Vertex displacement between two fits");
    std::string con_a, con_b;
    common(ev_consistency);
    ev_consistency->add_option("--a", con_a, "First fit output directory")->required();
    ev_consistency->add_option("--b", con_b, "Second fit output directory")->required();

    try
    {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e)
    {
        return app.exit(e);
    }

    try
    {
        if (*build)
        {
            io::save_model(build_out, morphablemodel::build_synthetic_model(model_spec));
            info("wrote " + build_out);
            return 0;
        }
        if (*synth_cmd)
        {
            const io::ProjectConfig cfg = effective_config(g);
            const auto model = load_shared_model(synth_model);
            const synth::SyntheticSpec spec =
                synth_spec.empty() ? synth::SyntheticSpec{} : io::synthetic_spec_from_json(io::detail::parse_json(synth_spec), synth_spec);
            auto [gt, scene] = synth::generate_scene(model, spec, cfg.pipeline.seed);
            io::OutputDir out(synth_out);
            const io::ScenePaths paths = io::save_scene(out.path(), scene, fs::absolute(synth_model));
            out.record("cameras.json");
            out.record("dense.ply");
            for (const auto& entry : scene.keypoints)
            {
                char name[32];
                std::snprintf(name, sizeof(name), "keypoints/frame_%05d.json", entry.first);
                out.record(name);
            }
            out.write_mesh("ground_truth.ply", gt.mesh.to_triangle_mesh());
            const json truth = {{"alpha", io::vector_to_json(gt.alpha.alpha)},
                                {"model_to_world", io::similarity_to_json(gt.model_to_world)},
                                {"head_width", gt.head_width},
                                {"frontal_frame", scene.frontal_frame},
                                {"seed", gt.seed},
                                {"spec", io::synthetic_spec_to_json(gt.spec)}};
            out.write("ground_truth.json", truth.dump(1) + "\n");
            out.finish();
            info("wrote " + std::to_string(scene.cameras.size()) + " frames to " + paths.cameras.parent_path().string());
            return 0;
        }
        if (*validate)
        {
            const io::ProjectConfig cfg = effective_config(g);
            io::ScenePaths paths{val_model, val_cameras, val_keypoints, val_mesh};
            pipeline::SceneInput scene;
            if (val_mesh.empty())
            {
                scene.model = load_shared_model(val_model);
                scene.cameras = io::read_cameras(val_cameras);
                scene.keypoints = io::read_keypoints_dir(val_keypoints, cfg.pipeline.threads);
                scene.frontal_frame = cfg.frontal_frame.value_or(-1);
                pipeline::validate_scene(scene);
            } else
            {
                scene = io::load_scene(paths, cfg);
            }
            std::size_t points = 0;
            for (const auto& entry : scene.keypoints)
                points += entry.second.size();
            const json report = {{"cameras", scene.cameras.size()},
                                 {"keypoint_frames", scene.keypoints.size()},
                                 {"keypoints", points},
                                 {"dense_vertices", scene.dense.vertices.size()},
                                 {"dense_triangles", scene.dense.triangles.size()},
                                 {"frontal_frame", pipeline::resolve_frontal_frame(scene)}};
            std::cout << report.dump(1) << "\n";
            return 0;
        }
        if (*fit)
        {
            const io::ProjectConfig cfg = effective_config(g);
            const pipeline::SceneInput scene = io::load_scene({fit_model, fit_cameras, fit_keypoints, fit_mesh}, cfg);
            info("loaded " + std::to_string(scene.cameras.size()) + " cameras, " +
                 std::to_string(scene.keypoints.size()) + " keypoint frames");
            pipeline::FitResult result;
            try
            {
                result = pipeline::run_pipeline(scene, cfg.pipeline);
            } catch (const pipeline::PipelineError& e)
            {
                std::cerr << "headfit: unfittable scene: " << e.what() << "\n";
                return 2;
            }
            for (const auto& t : result.stage1_trace)
                debug(io::trace_to_json("stage1", t).dump());
            for (const auto& t : result.stage2_trace)
                debug(io::trace_to_json("stage2", t).dump());
            for (const auto& w : result.warnings)
                info("warning: " + w);
            io::save_result(result, *scene.model, cfg, fit_out);
            info("wrote " + fit_out);
            return 0;
        }
        if (*sweep)
        {
            const io::ProjectConfig cfg = effective_config(g);
            const auto model = load_shared_model(sweep_model);
            const synth::SyntheticSpec spec =
                sweep_spec.empty() ? synth::SyntheticSpec{} : io::synthetic_spec_from_json(io::detail::parse_json(sweep_spec), sweep_spec);
            const std::vector<double> lambdas =
                sweep_lambdas.empty() ? synth::default_sweep_lambdas() : parse_lambdas(sweep_lambdas);
            const synth::SweepReport report = synth::lambda_sweep(model, lambdas, sweep_heads, spec, cfg.pipeline.seed,
                                                                  cfg.pipeline, cfg.pipeline.threads);
            for (const auto& s : report.summary)
                info("lambda " + json(s.lambda).dump() + ": mean delta_s " + json(s.mean_delta_s).dump() +
                     ", mean cosine " + json(s.mean_cosine).dump() + ", failures " + std::to_string(s.failures));
            io::save_sweep(report, sweep_out);
            return 0;
        }
        if (*eval_cmd)
        {
            const auto model = io::load_model(ev_model);
            if (*ev_consistency)
            {
                const eval::AlignedHead a = io::read_fitted_head(con_a, model, ev_stage);
                const eval::AlignedHead b = io::read_fitted_head(con_b, model, ev_stage);
                const eval::ConsistencyReport r =
                    eval::vertex_displacement_consistency(a, b, model.face_region(), model.top_region());
                const json report = {{"metric", "vertex_displacement_consistency"}, {"units", "percent"},
                                     {"head", r.head_percent}, {"face", r.face_percent}, {"scalp", r.scalp_percent}};
                emit_report(report,
                            "region,percent\nhead," + json(r.head_percent).dump() + "\nface," +
                                json(r.face_percent).dump() + "\nscalp," + json(r.scalp_percent).dump() + "\n",
                            ev_out);
                return 0;
            }
            const eval::AlignedHead head = io::read_fitted_head(ev_result, model, ev_stage);
            if (*ev_chamfer)
            {
                const eval::MetricReport r =
                    eval::chamfer_scalp(head, io::read_mesh(ch_mesh), model.top_region(), ch_width_mm, ch_symmetric,
                                        g.threads);
                emit_report(metric_json(r), metric_csv(r), ev_out);
                return 0;
            }
            if (*ev_rms)
            {
                const auto cameras = io::read_cameras(rms_cameras);
                auto keypoints = io::read_keypoints_dir(rms_keypoints, g.threads);
                if (!rms_all_frames)
                {
                    const json saved = io::detail::parse_json(fs::path(ev_result) / "result.json");
                    const auto held_out = saved.at("held_out_frames").get<std::vector<int>>();
                    std::map<int, std::vector<fitting::Observation>> subset;
                    for (int f : held_out)
                    {
                        if (keypoints.count(f))
                            subset[f] = keypoints.at(f);
                    }
                    keypoints = std::move(subset);
                }
                const eval::LandmarkSubset subset = rms_subset == "no_jawline"     ? eval::LandmarkSubset::NoJawline
                                                    : rms_subset == "jawline_only" ? eval::LandmarkSubset::JawlineOnly
                                                                                   : eval::LandmarkSubset::All;
                const eval::MetricReport r = eval::rms_reprojection(head, model, cameras, keypoints, subset);
                emit_report(metric_json(r), metric_csv(r), ev_out);
                return 0;
            }
            if (*ev_ratios)
            {
                const auto cameras = io::read_cameras(rat_cameras);
                if (!cameras.count(rat_portrait) || !cameras.count(rat_lateral))
                    throw Error(ErrorKind::Validation, "ratios: portrait or lateral frame has no camera");
                const eval::HeadRatios r =
                    eval::anthropometric_ratios(head, cameras.at(rat_portrait), cameras.at(rat_lateral));
                const json report = {{"metric", "anthropometric_ratios"},
                                     {"height_over_width", r.height_over_width},
                                     {"height_over_length", r.height_over_length},
                                     {"portrait_width_px", r.portrait_width},
                                     {"portrait_height_px", r.portrait_height},
                                     {"lateral_length_px", r.lateral_length},
                                     {"lateral_height_px", r.lateral_height}};
                emit_report(report,
                            "height_over_width,height_over_length\n" + json(r.height_over_width).dump() + "," +
                                json(r.height_over_length).dump() + "\n",
                            ev_out);
                return 0;
            }
        }
    } catch (const Error& e)
    {
        std::cerr << "headfit: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e)
    {
        std::cerr << "headfit: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
