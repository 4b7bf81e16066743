/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/io/result_io.hpp
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

#ifndef HEADFIT_IO_RESULT_IO_HPP
#define HEADFIT_IO_RESULT_IO_HPP

#include "headfit/camera/transforms.hpp"
#include "headfit/core/error.hpp"
#include "headfit/eval/metrics.hpp"
#include "headfit/io/mesh_io.hpp"
#include "headfit/io/scene_io.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"
#include "headfit/pipeline/fit_pipeline.hpp"
#include "headfit/synth/lambda_sweep.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace headfit {
namespace io {

/// Lower-case hex SHA-256 of a byte string.
inline std::string sha256_hex(const std::string& bytes)
{
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    {
        throw Error(ErrorKind::Io, "SHA-256 computation failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i)
    {
        std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

/// File name -> SHA-256 of the file contents.
struct Manifest
{
    std::map<std::string, std::string> files;

    json to_json() const { return {{"files", files}}; }
};

/// Collects written files and their hashes; `finish` writes manifest.json.
class OutputDir
{
public:
    explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir))
    {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec)
        {
            throw Error(ErrorKind::Io, dir_.string() + ": cannot create directory: " + ec.message());
        }
    }

    const std::filesystem::path& path() const noexcept { return dir_; }

    void write(const std::string& name, const std::string& bytes)
    {
        detail::write_file(dir_ / name, bytes);
        manifest_.files[name] = sha256_hex(bytes);
    }

    void write_mesh(const std::string& name, const TriangleMesh& mesh)
    {
        write_ply(dir_ / name, mesh);
        record(name);
    }

    /// Hashes a file that another writer already placed under the directory.
    void record(const std::string& name) { manifest_.files[name] = sha256_hex(detail::read_file(dir_ / name)); }

    Manifest finish()
    {
        detail::write_file(dir_ / "manifest.json", manifest_.to_json().dump(1) + "\n");
        return manifest_;
    }

private:
    std::filesystem::path dir_;
    Manifest manifest_;
};

inline Manifest read_manifest(const std::filesystem::path& path)
{
    const json j = detail::parse_json(path);
    Manifest m;
    try
    {
        m.files = j.at("files").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e)
    {
        detail::format_error(path, "files", e.what());
    }
    return m;
}

inline json similarity_to_json(const camera::SimilarityTransform& t)
{
    Eigen::Matrix<double, 3, 3, Eigen::RowMajor> rm = t.rotation;
    return {{"scale", t.scale},
            {"R", std::vector<double>(rm.data(), rm.data() + 9)},
            {"t", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

inline json rigid_to_json(const camera::RigidTransform& t)
{
    Eigen::Matrix<double, 3, 3, Eigen::RowMajor> rm = t.rotation;
    return {{"R", std::vector<double>(rm.data(), rm.data() + 9)},
            {"t", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

inline json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json trace_to_json(const std::string& stage, const fitting::IterationTrace& t)
{
    return {{"stage", stage},
            {"iteration", t.iteration},
            {"pose_objective", t.pose_objective},
            {"shape_objective", t.shape_objective},
            {"alpha_norm", t.alpha_norm},
            {"lm_iterations", t.lm_iterations},
            {"frames_used", t.frames_used},
            {"warnings", t.warnings}};
}

inline json result_to_json(const pipeline::FitResult& r, const ProjectConfig& config)
{
    const auto stage = [](const pipeline::StageTransforms& s) {
        return json{{"T_sim", similarity_to_json(s.sim)}, {"T_opt", rigid_to_json(s.opt)},
                    {"model_to_world", similarity_to_json(s.model_to_world())}};
    };
    json angles = json::object();
    for (const auto& [f, a] : r.pose_angles)
        angles[std::to_string(f)] = {{"azimuth", a.azimuth}, {"elevation", a.elevation}};
    json anchors = json::object();
    for (const auto& [id, p] : r.anchors)
        anchors[id] = {p.x(), p.y(), p.z()};
    json scalp = json::array();
    for (const auto& s : r.scalp_features)
        scalp.push_back({{"frame_id", s.frame_id}, {"direction", silhouette::to_string(s.direction)},
                         {"vertex", s.vertex}, {"u", s.pixel.x()}, {"v", s.pixel.y()}});
    // Omit the thread count so records match across thread settings.
    json cfg = config_to_json(config);
    cfg.erase("threads");
    return {{"alpha_front", vector_to_json(r.alpha_front.alpha)},
            {"alpha_final", vector_to_json(r.alpha_final.alpha)},
            {"mean_alignment", stage(r.mean_alignment)},
            {"stage1", stage(r.stage1)},
            {"stage2", stage(r.stage2)},
            {"frontal_frame", r.frontal_frame},
            {"fit_frames", r.fit_frames},
            {"held_out_frames", r.held_out_frames},
            {"stage2_frames", r.stage2_frames},
            {"pose_angles", angles},
            {"anchors", anchors},
            {"scalp_features", scalp},
            {"warnings", r.warnings},
            {"config", cfg}};
}

/// Mesh of S(alpha) posed into world space.
inline TriangleMesh posed_mesh(const morphablemodel::MorphableModel& model, const morphablemodel::ShapeParams& alpha,
                               const camera::SimilarityTransform& to_world)
{
    TriangleMesh mesh = morphablemodel::synthesize(model, alpha).to_triangle_mesh();
    for (auto& v : mesh.vertices)
        v = to_world(v);
    return mesh;
}

/**
 * Writes S^mean, S^front and S^final (posed in world space) as PLY, the
 * result JSON, the per-iteration traces as JSON lines and manifest.json.
 */
inline Manifest save_result(const pipeline::FitResult& result, const morphablemodel::MorphableModel& model,
                            const ProjectConfig& config, const std::filesystem::path& out_dir)
{
    OutputDir out(out_dir);
    const auto zero = morphablemodel::ShapeParams::zero(model);
    out.write_mesh("S_mean.ply", posed_mesh(model, zero, result.mean_alignment.model_to_world()));
    out.write_mesh("S_front.ply", posed_mesh(model, result.alpha_front, result.stage1.model_to_world()));
    out.write_mesh("S_final.ply", posed_mesh(model, result.alpha_final, result.stage2.model_to_world()));
    out.write("result.json", result_to_json(result, config).dump(1) + "\n");
    std::string lines;
    for (const auto& t : result.stage1_trace)
        lines += trace_to_json("stage1", t).dump() + "\n";
    for (const auto& t : result.stage2_trace)
        lines += trace_to_json("stage2", t).dump() + "\n";
    out.write("traces.jsonl", lines);
    return out.finish();
}

inline camera::SimilarityTransform similarity_from_json(const json& j)
{
    const auto r = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3)
    {
        throw Error(ErrorKind::Format, "similarity transform needs 9 rotation and 3 translation entries");
    }
    camera::SimilarityTransform s;
    s.scale = j.at("scale").get<double>();
    s.rotation = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
    s.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    return s;
}

/// Reads one stage ("mean", "front" or "final") of a saved result back as an aligned head.
inline eval::AlignedHead read_fitted_head(const std::filesystem::path& result_dir,
                                          const morphablemodel::MorphableModel& model,
                                          const std::string& stage = "final")
{
    const std::filesystem::path path = result_dir / "result.json";
    const json j = detail::parse_json(path);
    try
    {
        morphablemodel::ShapeParams alpha = morphablemodel::ShapeParams::zero(model);
        std::string transform_key;
        if (stage == "mean")
        {
            transform_key = "mean_alignment";
        } else if (stage == "front" || stage == "final")
        {
            const auto a = j.at(stage == "front" ? "alpha_front" : "alpha_final").get<std::vector<double>>();
            if (a.size() != static_cast<std::size_t>(model.num_components()))
            {
                throw Error(ErrorKind::TopologyMismatch, path.string() + ": coefficient count " +
                                                             std::to_string(a.size()) + " does not match the model");
            }
            alpha.alpha = Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
            transform_key = stage == "front" ? "stage1" : "stage2";
        } else
        {
            throw Error(ErrorKind::InvalidParams, "unknown stage '" + stage + "', expected mean, front or final");
        }
        return {morphablemodel::synthesize(model, alpha), similarity_from_json(j.at(transform_key).at("model_to_world"))};
    } catch (const json::exception& e)
    {
        detail::format_error(path, stage, e.what());
    }
}

inline std::string sweep_csv(const synth::SweepReport& report)
{
    std::string csv = "head,lambda,scene_seed,ok,cosine,delta_s,error\n";
    for (const auto& r : report.rows)
    {
        std::string err = r.error;
        for (auto& c : err)
            if (c == ',' || c == '\n' || c == '"')
                c = ' ';
        csv += std::to_string(r.head) + "," + json(r.lambda).dump() + "," + std::to_string(r.scene_seed) + "," +
               (r.ok ? "1" : "0") + "," + json(r.cosine).dump() + "," + json(r.delta_s).dump() + "," + err + "\n";
    }
    return csv;
}

inline json sweep_to_json(const synth::SweepReport& report)
{
    json rows = json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"head", r.head}, {"lambda", r.lambda}, {"scene_seed", r.scene_seed}, {"ok", r.ok},
                        {"cosine", r.ok ? json(r.cosine) : json(nullptr)},
                        {"delta_s", r.ok ? json(r.delta_s) : json(nullptr)}, {"error", r.error}});
    json summary = json::array();
    for (const auto& s : report.summary)
        summary.push_back({{"lambda", s.lambda}, {"runs", s.runs}, {"failures", s.failures},
                           {"mean_cosine", s.runs > s.failures ? json(s.mean_cosine) : json(nullptr)},
                           {"mean_delta_s", s.runs > s.failures ? json(s.mean_delta_s) : json(nullptr)}});
    return {{"rows", rows}, {"summary", summary}};
}

inline Manifest save_sweep(const synth::SweepReport& report, const std::filesystem::path& out_dir)
{
    OutputDir out(out_dir);
    out.write("sweep.csv", sweep_csv(report));
    out.write("sweep.json", sweep_to_json(report).dump(1) + "\n");
    return out.finish();
}

} /* namespace io */
} /* namespace headfit */

#endif /* HEADFIT_IO_RESULT_IO_HPP */
