/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/io/model_archive.hpp
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

#ifndef HEADFIT_IO_MODEL_ARCHIVE_HPP
#define HEADFIT_IO_MODEL_ARCHIVE_HPP

#include "headfit/core/error.hpp"
#include "headfit/io/mesh_io.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

namespace headfit {
namespace io {

/**
 * "MFM1" model archive:
 *
 *   bytes 0-3   magic "MFM1"
 *   bytes 4-11  header length H, uint64 little-endian
 *   next H      UTF-8 JSON header
 *   rest        data section of little-endian float64 blobs
 *
 * The header holds num_vertices, num_components, landmarks (id -> vertex),
 * landmark_groups, top_region, face_region, triangles and, under "blobs", the
 * byte offset (relative to the data section) and element count of "mean",
 * "components" (column-major, 3V x n) and "eigenvalues".
 */
inline constexpr char model_magic[4] = {'M', 'F', 'M', '1'};

inline std::string encode_model(const morphablemodel::MorphableModel& model)
{
    using nlohmann::json;
    const auto n_mean = static_cast<std::uint64_t>(model.mean().size());
    const auto n_comp = static_cast<std::uint64_t>(model.components().size());
    const auto n_ev = static_cast<std::uint64_t>(model.eigenvalues().size());
    json header;
    header["format"] = "MFM1";
    header["num_vertices"] = model.num_vertices();
    header["num_components"] = model.num_components();
    header["landmarks"] = model.landmarks();
    header["landmark_groups"] = model.landmark_groups();
    header["top_region"] = model.top_region();
    header["face_region"] = model.face_region();
    header["triangles"] = model.topology();
    header["blobs"] = {
        {"mean", {{"offset", 0}, {"count", n_mean}}},
        {"components", {{"offset", 8 * n_mean}, {"count", n_comp}, {"layout", "column-major"}}},
        {"eigenvalues", {{"offset", 8 * (n_mean + n_comp)}, {"count", n_ev}}},
    };
    const std::string text = header.dump();
    std::string out(model_magic, 4);
    const std::uint64_t len = text.size();
    out.append(reinterpret_cast<const char*>(&len), 8);
    out += text;
    const auto put = [&out](const double* p, std::uint64_t n) {
        out.append(reinterpret_cast<const char*>(p), static_cast<std::size_t>(8 * n));
    };
    put(model.mean().data(), n_mean);
    put(model.components().data(), n_comp);
    put(model.eigenvalues().data(), n_ev);
    return out;
}

inline void save_model(const std::filesystem::path& path, const morphablemodel::MorphableModel& model)
{
    detail::write_file(path, encode_model(model));
}

inline morphablemodel::MorphableModel decode_model(const std::string& bytes, const std::filesystem::path& path = "<memory>")
{
    using nlohmann::json;
    if (bytes.size() < 12 || std::memcmp(bytes.data(), model_magic, 4) != 0)
    {
        detail::format_error(path, "byte 0", "missing MFM1 magic");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 4, 8);
    if (len > bytes.size() - 12)
    {
        detail::format_error(path, "byte 4", "header length exceeds file size");
    }
    json header;
    try
    {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(len));
    } catch (const json::parse_error& e)
    {
        detail::format_error(path, "header byte " + std::to_string(12 + e.byte), e.what());
    }
    const std::size_t data_start = 12 + static_cast<std::size_t>(len);
    try
    {
        const int v = header.at("num_vertices").get<int>();
        const int n = header.at("num_components").get<int>();
        if (v <= 0 || n <= 0)
        {
            detail::format_error(path, "header", "num_vertices and num_components must be positive");
        }
        const auto blob = [&](const char* name, std::uint64_t expected) {
            const auto& b = header.at("blobs").at(name);
            const auto offset = b.at("offset").get<std::uint64_t>();
            const auto count = b.at("count").get<std::uint64_t>();
            if (count != expected)
            {
                detail::format_error(path, std::string("blob '") + name + "'",
                                     "count " + std::to_string(count) + " does not match " + std::to_string(expected));
            }
            if (offset % 8 != 0 || offset > bytes.size() - data_start || 8 * count > bytes.size() - data_start - offset)
            {
                detail::format_error(path, std::string("blob '") + name + "'", "out of the data section");
            }
            return bytes.data() + data_start + offset;
        };
        const auto nv3 = static_cast<std::uint64_t>(3 * v);
        Eigen::VectorXd mean(3 * v);
        std::memcpy(mean.data(), blob("mean", nv3), 8 * nv3);
        if (header.at("blobs").at("components").value("layout", "column-major") != "column-major")
        {
            detail::format_error(path, "blob 'components'", "only column-major layout is supported");
        }
        Eigen::MatrixXd components(3 * v, n);
        std::memcpy(components.data(), blob("components", nv3 * static_cast<std::uint64_t>(n)),
                    8 * nv3 * static_cast<std::uint64_t>(n));
        Eigen::VectorXd eigenvalues(n);
        std::memcpy(eigenvalues.data(), blob("eigenvalues", static_cast<std::uint64_t>(n)), 8 * static_cast<std::size_t>(n));
        return morphablemodel::MorphableModel(
            std::move(mean), std::move(components), std::move(eigenvalues),
            header.at("landmarks").get<std::map<std::string, int>>(),
            header.value("landmark_groups", std::map<std::string, std::vector<std::string>>{}),
            header.value("top_region", std::vector<int>{}), header.value("face_region", std::vector<int>{}),
            header.at("triangles").get<Topology>());
    } catch (const json::exception& e)
    {
        detail::format_error(path, "header", e.what());
    } catch (const Error& e)
    {
        if (e.kind() == ErrorKind::Format)
        {
            throw;
        }
        detail::format_error(path, "model", e.what());
    }
}

inline morphablemodel::MorphableModel load_model(const std::filesystem::path& path)
{
    return decode_model(detail::read_file(path), path);
}

} /* namespace io */
} /* namespace headfit */

#endif /* HEADFIT_IO_MODEL_ARCHIVE_HPP */
