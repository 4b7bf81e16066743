/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/io/scene_io.hpp
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

#ifndef HEADFIT_IO_SCENE_IO_HPP
#define HEADFIT_IO_SCENE_IO_HPP

#include "headfit/camera/PerspectiveCamera.hpp"
#include "headfit/core/error.hpp"
#include "headfit/core/parallel.hpp"
#include "headfit/fitting/pose_refine.hpp"
#include "headfit/io/mesh_io.hpp"
#include "headfit/io/model_archive.hpp"
#include "headfit/pipeline/scene.hpp"
#include "headfit/synth/scene_generator.hpp"

#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace headfit {
namespace io {

using nlohmann::json;

namespace detail {

inline json parse_json(const std::filesystem::path& path)
{
    const std::string text = read_file(path);
    try
    {
        return json::parse(text);
    } catch (const json::parse_error& e)
    {
        // Report the line of the offending byte.
        const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte ? byte - 1 : 0), '\n');
        format_error(path, "line " + std::to_string(line) + ", byte " + std::to_string(e.byte), e.what());
    }
}

/// Rejects keys of `j` that are not in `allowed`.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::filesystem::path& path,
                       const std::string& where)
{
    if (!j.is_object())
    {
        format_error(path, where, "expected a JSON object");
    }
    for (const auto& [key, value] : j.items())
    {
        if (!allowed.count(key))
        {
            format_error(path, where, "unknown key '" + key + "'");
        }
    }
}

template <class T>
void read_optional(const json& j, const char* key, T& out, const std::filesystem::path& path, const std::string& where)
{
    if (!j.contains(key))
    {
        return;
    }
    try
    {
        out = j.at(key).get<T>();
    } catch (const json::exception& e)
    {
        format_error(path, where + "." + key, e.what());
    }
}

} /* namespace detail */

// ---------------------------------------------------------------- cameras

inline json camera_to_json(const camera::PerspectiveCamera& cam)
{
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            r[static_cast<std::size_t>(3 * i + k)] = cam.rotation(i, k);
    return {{"frame_id", cam.frame_id}, {"fx", cam.fx()}, {"fy", cam.fy()}, {"cx", cam.cx()}, {"cy", cam.cy()},
            {"R", r}, {"t", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
            {"width", cam.width}, {"height", cam.height}};
}

/// Cameras file: a JSON list of {frame_id, fx, fy, cx, cy, R (row-major 9), t (3), width, height}.
inline std::map<int, camera::PerspectiveCamera> read_cameras(const std::filesystem::path& path)
{
    const json doc = detail::parse_json(path);
    if (!doc.is_array())
    {
        detail::format_error(path, "top level", "expected a list of cameras");
    }
    std::map<int, camera::PerspectiveCamera> cameras;
    for (std::size_t i = 0; i < doc.size(); ++i)
    {
        const json& c = doc[i];
        const std::string where = "camera " + std::to_string(i);
        detail::check_keys(c, {"frame_id", "fx", "fy", "cx", "cy", "R", "t", "width", "height"}, path, where);
        camera::PerspectiveCamera cam;
        try
        {
            cam.frame_id = c.at("frame_id").get<int>();
            const auto r = c.at("R").get<std::vector<double>>();
            const auto t = c.at("t").get<std::vector<double>>();
            if (r.size() != 9 || t.size() != 3)
            {
                detail::format_error(path, where, "R needs 9 and t needs 3 values");
            }
            cam = camera::PerspectiveCamera::from_intrinsics(cam.frame_id, c.at("fx").get<double>(), c.at("fy").get<double>(),
                                                             c.at("cx").get<double>(), c.at("cy").get<double>(),
                                                             c.at("width").get<int>(), c.at("height").get<int>());
            cam.rotation = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>(r.data());
            cam.translation = Eigen::Vector3d(t[0], t[1], t[2]);
        } catch (const json::exception& e)
        {
            detail::format_error(path, where, e.what());
        }
        try
        {
            cam.validate();
        } catch (const Error& e)
        {
            throw Error(ErrorKind::Validation, path.string() + ": " + where + " (frame " +
                                                   std::to_string(cam.frame_id) + "): " + e.what());
        }
        if (!cameras.emplace(cam.frame_id, cam).second)
        {
            throw Error(ErrorKind::Validation, path.string() + ": " + where + ": duplicate frame id " +
                                                   std::to_string(cam.frame_id));
        }
    }
    return cameras;
}

inline void write_cameras(const std::filesystem::path& path, const std::map<int, camera::PerspectiveCamera>& cameras)
{
    json doc = json::array();
    for (const auto& [id, cam] : cameras)
        doc.push_back(camera_to_json(cam));
    detail::write_file(path, doc.dump(1) + "\n");
}

// ---------------------------------------------------------------- keypoints

/// One keypoint file: {frame_id, points: [{id, u, v[, weight]}]}.
inline std::pair<int, std::vector<fitting::Observation>> read_keypoint_file(const std::filesystem::path& path)
{
    const json doc = detail::parse_json(path);
    detail::check_keys(doc, {"frame_id", "points"}, path, "top level");
    std::pair<int, std::vector<fitting::Observation>> out;
    try
    {
        out.first = doc.at("frame_id").get<int>();
        const json& pts = doc.at("points");
        if (!pts.is_array())
        {
            detail::format_error(path, "points", "expected a list");
        }
        for (std::size_t i = 0; i < pts.size(); ++i)
        {
            const std::string where = "points[" + std::to_string(i) + "]";
            detail::check_keys(pts[i], {"id", "u", "v", "weight"}, path, where);
            fitting::Observation o;
            o.keypoint_id = pts[i].at("id").get<std::string>();
            o.pixel = {pts[i].at("u").get<double>(), pts[i].at("v").get<double>()};
            o.weight = pts[i].value("weight", 1.0);
            if (!o.pixel.allFinite() || !(o.weight > 0.0))
            {
                detail::format_error(path, where, "non-finite pixel or non-positive weight");
            }
            out.second.push_back(std::move(o));
        }
    } catch (const json::exception& e)
    {
        detail::format_error(path, "top level", e.what());
    }
    return out;
}

/// Reads every *.json file of a directory (sorted by file name), up to `threads` files at a time.
inline std::map<int, std::vector<fitting::Observation>> read_keypoints_dir(const std::filesystem::path& dir,
                                                                          int threads = 1)
{
    if (!std::filesystem::is_directory(dir))
    {
        throw Error(ErrorKind::Io, dir.string() + ": not a directory");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
    {
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::pair<int, std::vector<fitting::Observation>>> parsed(files.size());
    parallel_for(files.size(), threads, [&](std::size_t i) { parsed[i] = read_keypoint_file(files[i]); });
    std::map<int, std::vector<fitting::Observation>> out;
    for (std::size_t i = 0; i < files.size(); ++i)
    {
        if (!out.emplace(parsed[i].first, std::move(parsed[i].second)).second)
        {
            throw Error(ErrorKind::Validation, files[i].string() + ": duplicate keypoints for frame " +
                                                   std::to_string(parsed[i].first));
        }
    }
    return out;
}

inline void write_keypoints_dir(const std::filesystem::path& dir,
                                const std::map<int, std::vector<fitting::Observation>>& keypoints)
{
    std::filesystem::create_directories(dir);
    for (const auto& [frame, points] : keypoints)
    {
        json pts = json::array();
        for (const auto& o : points)
        {
            json p = {{"id", o.keypoint_id}, {"u", o.pixel.x()}, {"v", o.pixel.y()}};
            if (o.weight != 1.0)
                p["weight"] = o.weight;
            pts.push_back(p);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05d.json", frame);
        detail::write_file(dir / name, json{{"frame_id", frame}, {"points", pts}}.dump(1) + "\n");
    }
}

// ---------------------------------------------------------------- config

/// Pipeline configuration plus the optional frontal frame override.
struct ProjectConfig
{
    pipeline::PipelineConfig pipeline;
    std::optional<int> frontal_frame;
};

inline json lm_to_json(const fitting::LMSettings& lm)
{
    return {{"max_iterations", lm.max_iterations},   {"initial_damping", lm.initial_damping},
            {"damping_up", lm.damping_up},           {"damping_down", lm.damping_down},
            {"gradient_tolerance", lm.gradient_tolerance}, {"step_tolerance", lm.step_tolerance},
            {"jacobian", lm.jacobian == fitting::JacobianMode::Analytic ? "analytic" : "numeric"}};
}

inline json config_to_json(const ProjectConfig& cfg)
{
    const auto& p = cfg.pipeline;
    json j = {{"lambda", p.lambda},
              {"iterations", p.iterations},
              {"azimuth_step", p.azimuth_step},
              {"elevation_limit", p.elevation_limit},
              {"edge_factor", p.edge_factor},
              {"scalp_weight", p.scalp_weight},
              {"use_scalp_features", p.use_scalp_features},
              {"min_frame_keypoints", p.min_frame_keypoints},
              {"eigenvalue_floor", p.eigenvalue_floor},
              {"seed", p.seed},
              {"threads", p.threads},
              {"lm", lm_to_json(p.lm)}};
    if (cfg.frontal_frame)
        j["frontal_frame"] = *cfg.frontal_frame;
    return j;
}

/// Checks the value ranges of a configuration; throws Validation.
inline void validate_config(const ProjectConfig& cfg)
{
    const auto& p = cfg.pipeline;
    const auto require = [](bool ok, const char* what) {
        if (!ok)
            throw Error(ErrorKind::Validation, std::string("config: ") + what);
    };
    require(p.lambda >= 0.0, "lambda must be >= 0");
    require(p.iterations >= 1, "iterations must be >= 1");
    require(p.azimuth_step > 0.0 && p.azimuth_step <= 360.0, "azimuth_step must be in (0, 360]");
    require(p.elevation_limit >= 0.0 && p.elevation_limit <= 90.0, "elevation_limit must be in [0, 90]");
    require(p.edge_factor > 0.0, "edge_factor must be > 0");
    require(p.scalp_weight > 0.0, "scalp_weight must be > 0");
    require(p.min_frame_keypoints >= 1, "min_frame_keypoints must be >= 1");
    require(p.eigenvalue_floor > 0.0 && p.eigenvalue_floor < 1.0, "eigenvalue_floor must be in (0, 1)");
    require(p.threads >= 1, "threads must be >= 1");
    require(p.lm.max_iterations >= 1, "lm.max_iterations must be >= 1");
    require(p.lm.initial_damping > 0.0 && p.lm.damping_up > 1.0 && p.lm.damping_down > 1.0,
            "lm damping must be positive with factors > 1");
    require(p.lm.gradient_tolerance > 0.0 && p.lm.step_tolerance > 0.0, "lm tolerances must be > 0");
    require(!cfg.frontal_frame || *cfg.frontal_frame >= 0, "frontal_frame must be >= 0");
}

inline ProjectConfig config_from_json(const json& j, const std::filesystem::path& path = "<config>")
{
    ProjectConfig cfg;
    auto& p = cfg.pipeline;
    detail::check_keys(j,
                       {"lambda", "iterations", "azimuth_step", "elevation_limit", "edge_factor", "scalp_weight",
                        "use_scalp_features", "min_frame_keypoints", "eigenvalue_floor", "seed", "threads", "lm",
                        "frontal_frame"},
                       path, "config");
    detail::read_optional(j, "lambda", p.lambda, path, "config");
    detail::read_optional(j, "iterations", p.iterations, path, "config");
    detail::read_optional(j, "azimuth_step", p.azimuth_step, path, "config");
    detail::read_optional(j, "elevation_limit", p.elevation_limit, path, "config");
    detail::read_optional(j, "edge_factor", p.edge_factor, path, "config");
    detail::read_optional(j, "scalp_weight", p.scalp_weight, path, "config");
    detail::read_optional(j, "use_scalp_features", p.use_scalp_features, path, "config");
    detail::read_optional(j, "min_frame_keypoints", p.min_frame_keypoints, path, "config");
    detail::read_optional(j, "eigenvalue_floor", p.eigenvalue_floor, path, "config");
    detail::read_optional(j, "seed", p.seed, path, "config");
    detail::read_optional(j, "threads", p.threads, path, "config");
    if (j.contains("frontal_frame"))
    {
        int f = 0;
        detail::read_optional(j, "frontal_frame", f, path, "config");
        cfg.frontal_frame = f;
    }
    if (j.contains("lm"))
    {
        const json& lm = j.at("lm");
        detail::check_keys(lm,
                           {"max_iterations", "initial_damping", "damping_up", "damping_down", "gradient_tolerance",
                            "step_tolerance", "jacobian"},
                           path, "config.lm");
        detail::read_optional(lm, "max_iterations", p.lm.max_iterations, path, "config.lm");
        detail::read_optional(lm, "initial_damping", p.lm.initial_damping, path, "config.lm");
        detail::read_optional(lm, "damping_up", p.lm.damping_up, path, "config.lm");
        detail::read_optional(lm, "damping_down", p.lm.damping_down, path, "config.lm");
        detail::read_optional(lm, "gradient_tolerance", p.lm.gradient_tolerance, path, "config.lm");
        detail::read_optional(lm, "step_tolerance", p.lm.step_tolerance, path, "config.lm");
        std::string mode = "numeric";
        detail::read_optional(lm, "jacobian", mode, path, "config.lm");
        if (mode != "numeric" && mode != "analytic")
            detail::format_error(path, "config.lm.jacobian", "expected 'numeric' or 'analytic'");
        p.lm.jacobian = mode == "analytic" ? fitting::JacobianMode::Analytic : fitting::JacobianMode::FiniteDifference;
    }
    try
    {
        validate_config(cfg);
    } catch (const Error& e)
    {
        throw Error(ErrorKind::Validation, path.string() + ": " + e.what());
    }
    return cfg;
}

inline ProjectConfig read_config(const std::filesystem::path& path)
{
    return config_from_json(detail::parse_json(path), path);
}

// ---------------------------------------------------------------- synthetic spec

inline json synthetic_spec_to_json(const synth::SyntheticSpec& s)
{
    return {{"deformation", s.deformation == synth::Deformation::scalp ? "scalp" : "random"},
            {"shape_scale", s.shape_scale},
            {"scalp_energy_ratio", s.scalp_energy_ratio},
            {"min_world_scale", s.min_world_scale},
            {"max_world_scale", s.max_world_scale},
            {"max_world_offset", s.max_world_offset},
            {"orbit",
             {{"num_frames", s.orbit.num_frames},
              {"radius", s.orbit.radius},
              {"max_elevation", s.orbit.max_elevation},
              {"elevation_cycles", s.orbit.elevation_cycles},
              {"focal", s.orbit.focal},
              {"width", s.orbit.width},
              {"height", s.orbit.height},
              {"keypoint_azimuth", s.orbit.keypoint_azimuth}}},
            {"noise",
             {{"pixel_sigma", s.noise.pixel_sigma},
              {"mesh_jitter", s.noise.mesh_jitter},
              {"hole_probability", s.noise.hole_probability},
              {"background", s.noise.background}}}};
}

inline synth::SyntheticSpec synthetic_spec_from_json(const json& j, const std::filesystem::path& path = "<spec>")
{
    synth::SyntheticSpec s;
    detail::check_keys(j,
                       {"deformation", "shape_scale", "scalp_energy_ratio", "min_world_scale", "max_world_scale",
                        "max_world_offset", "orbit", "noise"},
                       path, "spec");
    std::string deformation = "random";
    detail::read_optional(j, "deformation", deformation, path, "spec");
    if (deformation != "random" && deformation != "scalp")
        detail::format_error(path, "spec.deformation", "expected 'random' or 'scalp'");
    s.deformation = deformation == "scalp" ? synth::Deformation::scalp : synth::Deformation::random;
    detail::read_optional(j, "shape_scale", s.shape_scale, path, "spec");
    detail::read_optional(j, "scalp_energy_ratio", s.scalp_energy_ratio, path, "spec");
    detail::read_optional(j, "min_world_scale", s.min_world_scale, path, "spec");
    detail::read_optional(j, "max_world_scale", s.max_world_scale, path, "spec");
    detail::read_optional(j, "max_world_offset", s.max_world_offset, path, "spec");
    if (j.contains("orbit"))
    {
        const json& o = j.at("orbit");
        detail::check_keys(o, {"num_frames", "radius", "max_elevation", "elevation_cycles", "focal", "width", "height",
                               "keypoint_azimuth"},
                           path, "spec.orbit");
        detail::read_optional(o, "num_frames", s.orbit.num_frames, path, "spec.orbit");
        detail::read_optional(o, "radius", s.orbit.radius, path, "spec.orbit");
        detail::read_optional(o, "max_elevation", s.orbit.max_elevation, path, "spec.orbit");
        detail::read_optional(o, "elevation_cycles", s.orbit.elevation_cycles, path, "spec.orbit");
        detail::read_optional(o, "focal", s.orbit.focal, path, "spec.orbit");
        detail::read_optional(o, "width", s.orbit.width, path, "spec.orbit");
        detail::read_optional(o, "height", s.orbit.height, path, "spec.orbit");
        detail::read_optional(o, "keypoint_azimuth", s.orbit.keypoint_azimuth, path, "spec.orbit");
    }
    if (j.contains("noise"))
    {
        const json& n = j.at("noise");
        detail::check_keys(n, {"pixel_sigma", "mesh_jitter", "hole_probability", "background"}, path, "spec.noise");
        detail::read_optional(n, "pixel_sigma", s.noise.pixel_sigma, path, "spec.noise");
        detail::read_optional(n, "mesh_jitter", s.noise.mesh_jitter, path, "spec.noise");
        detail::read_optional(n, "hole_probability", s.noise.hole_probability, path, "spec.noise");
        detail::read_optional(n, "background", s.noise.background, path, "spec.noise");
    }
    return s;
}

// ---------------------------------------------------------------- scenes

struct ScenePaths
{
    std::filesystem::path model;
    std::filesystem::path cameras;
    std::filesystem::path keypoints;
    std::filesystem::path mesh;
};

/**
 * Loads and cross-validates a scene. Nothing is returned unless every file
 * parses and the scene passes validation.
 */
inline pipeline::SceneInput load_scene(const ScenePaths& paths, const ProjectConfig& config = {})
{
    pipeline::SceneInput scene;
    scene.model = std::make_shared<const morphablemodel::MorphableModel>(load_model(paths.model));
    scene.cameras = read_cameras(paths.cameras);
    scene.keypoints = read_keypoints_dir(paths.keypoints, config.pipeline.threads);
    scene.dense = read_mesh(paths.mesh);
    scene.frontal_frame = config.frontal_frame.value_or(-1);
    if (scene.dense.empty())
    {
        throw Error(ErrorKind::Validation, paths.mesh.string() + ": dense reconstruction is empty");
    }
    try
    {
        pipeline::validate_scene(scene);
    } catch (const Error& e)
    {
        throw Error(e.kind(), "scene: " + std::string(e.what()));
    }
    return scene;
}

/// Writes cameras.json, keypoints/ and dense.ply of a scene into `dir`.
inline ScenePaths save_scene(const std::filesystem::path& dir, const pipeline::SceneInput& scene,
                             const std::filesystem::path& model_path)
{
    std::filesystem::create_directories(dir);
    ScenePaths paths{model_path, dir / "cameras.json", dir / "keypoints", dir / "dense.ply"};
    write_cameras(paths.cameras, scene.cameras);
    write_keypoints_dir(paths.keypoints, scene.keypoints);
    write_ply(paths.mesh, scene.dense);
    return paths;
}

} /* namespace io */
} /* namespace headfit */

#endif /* HEADFIT_IO_SCENE_IO_HPP */
