/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/io/mesh_io.hpp
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

#ifndef HEADFIT_IO_MESH_IO_HPP
#define HEADFIT_IO_MESH_IO_HPP

#include "headfit/core/error.hpp"
#include "headfit/core/mesh.hpp"
#include "headfit/silhouette/rasterize.hpp"

#include "Eigen/Core"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

namespace headfit {
namespace io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw Error(ErrorKind::Io, path.string() + ": cannot open for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
    {
        throw Error(ErrorKind::Io, path.string() + ": cannot open for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
    {
        throw Error(ErrorKind::Io, path.string() + ": write failed");
    }
}

[[noreturn]] inline void format_error(const std::filesystem::path& path, const std::string& where,
                                      const std::string& cause)
{
    throw Error(ErrorKind::Format, path.string() + ": " + where + ": " + cause);
}

/// Size in bytes of a PLY scalar type, 0 if unknown.
inline int ply_type_size(const std::string& t)
{
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8")
        return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16")
        return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32")
        return 4;
    if (t == "double" || t == "float64")
        return 8;
    return 0;
}

inline double ply_decode(const std::string& t, const char* p)
{
    const auto get = [p]<class T>(T) {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return static_cast<double>(v);
    };
    if (t == "char" || t == "int8")
        return get(std::int8_t{});
    if (t == "uchar" || t == "uint8")
        return get(std::uint8_t{});
    if (t == "short" || t == "int16")
        return get(std::int16_t{});
    if (t == "ushort" || t == "uint16")
        return get(std::uint16_t{});
    if (t == "int" || t == "int32")
        return get(std::int32_t{});
    if (t == "uint" || t == "uint32")
        return get(std::uint32_t{});
    if (t == "float" || t == "float32")
        return get(float{});
    return get(double{});
}

struct PlyProperty
{
    std::string name;
    std::string type;
    bool is_list = false;
    std::string count_type;
};

struct PlyElement
{
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

} /* namespace detail */

/**
 * Reads a PLY triangle mesh (ASCII or binary little-endian). Vertex positions
 * come from the x, y, z properties; faces from the vertex_indices (or
 * vertex_index) list, with polygons fan-triangulated. Other elements and
 * properties are skipped.
 */
inline TriangleMesh read_ply(const std::filesystem::path& path)
{
    const std::string data = detail::read_file(path);
    std::size_t pos = 0;
    int line_no = 0;
    const auto next_line = [&]() {
        const std::size_t end = data.find('\n', pos);
        if (end == std::string::npos)
        {
            detail::format_error(path, "line " + std::to_string(line_no + 1), "unterminated header");
        }
        std::string line = data.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r')
        {
            line.pop_back();
        }
        pos = end + 1;
        ++line_no;
        return line;
    };

    if (next_line() != "ply")
    {
        detail::format_error(path, "line 1", "missing 'ply' magic");
    }
    bool binary = false;
    std::vector<detail::PlyElement> elements;
    for (;;)
    {
        const std::string line = next_line();
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        const std::string where = "line " + std::to_string(line_no);
        if (key == "end_header")
        {
            break;
        }
        if (key == "comment" || key == "obj_info" || key.empty())
        {
            continue;
        }
        if (key == "format")
        {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian")
                binary = true;
            else if (fmt != "ascii")
                detail::format_error(path, where, "unsupported format '" + fmt + "'");
        }
        else if (key == "element")
        {
            detail::PlyElement e;
            if (!(ls >> e.name >> e.count))
                detail::format_error(path, where, "malformed element line");
            elements.push_back(e);
        }
        else if (key == "property")
        {
            if (elements.empty())
                detail::format_error(path, where, "property before any element");
            detail::PlyProperty p;
            std::string type;
            ls >> type;
            if (type == "list")
            {
                p.is_list = true;
                ls >> p.count_type >> p.type >> p.name;
                if (!detail::ply_type_size(p.count_type))
                    detail::format_error(path, where, "unknown list count type '" + p.count_type + "'");
            }
            else
            {
                p.type = type;
                ls >> p.name;
            }
            if (!detail::ply_type_size(p.type) || p.name.empty())
                detail::format_error(path, where, "unknown property type '" + p.type + "'");
            elements.back().properties.push_back(p);
        }
        else
        {
            detail::format_error(path, where, "unexpected header keyword '" + key + "'");
        }
    }

    TriangleMesh mesh;
    std::istringstream ascii(binary ? std::string() : data.substr(pos));
    ascii.imbue(std::locale::classic());
    std::size_t token_line = static_cast<std::size_t>(line_no);
    const auto read_value = [&](const std::string& type, const std::string& what) -> double {
        if (binary)
        {
            const int size = detail::ply_type_size(type);
            if (pos + static_cast<std::size_t>(size) > data.size())
                detail::format_error(path, "byte " + std::to_string(pos), "truncated binary data in " + what);
            const double v = detail::ply_decode(type, data.data() + pos);
            pos += static_cast<std::size_t>(size);
            return v;
        }
        double v;
        if (!(ascii >> v))
            detail::format_error(path, "data after line " + std::to_string(token_line), "malformed or missing value in " + what);
        return v;
    };

    for (const auto& e : elements)
    {
        const bool is_vertex = e.name == "vertex";
        const bool is_face = e.name == "face";
        int ix = -1, iy = -1, iz = -1;
        for (int i = 0; i < static_cast<int>(e.properties.size()); ++i)
        {
            const auto& n = e.properties[static_cast<std::size_t>(i)].name;
            ix = n == "x" ? i : ix;
            iy = n == "y" ? i : iy;
            iz = n == "z" ? i : iz;
        }
        if (is_vertex && (ix < 0 || iy < 0 || iz < 0))
            detail::format_error(path, "header", "vertex element lacks x, y or z");
        for (std::size_t r = 0; r < e.count; ++r)
        {
            Eigen::Vector3d v = Eigen::Vector3d::Zero();
            for (int i = 0; i < static_cast<int>(e.properties.size()); ++i)
            {
                const auto& p = e.properties[static_cast<std::size_t>(i)];
                if (!p.is_list)
                {
                    const double value = read_value(p.type, e.name + " " + std::to_string(r));
                    if (i == ix) v.x() = value;
                    if (i == iy) v.y() = value;
                    if (i == iz) v.z() = value;
                    continue;
                }
                const double n = read_value(p.count_type, e.name + " " + std::to_string(r));
                if (n < 0 || n != std::floor(n))
                    detail::format_error(path, e.name + " " + std::to_string(r), "invalid list length");
                std::vector<int> idx(static_cast<std::size_t>(n));
                for (auto& k : idx)
                {
                    const double value = read_value(p.type, e.name + " " + std::to_string(r));
                    k = static_cast<int>(value);
                }
                if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index"))
                {
                    if (idx.size() < 3)
                        detail::format_error(path, "face " + std::to_string(r), "fewer than 3 vertices");
                    for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                        mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
                }
            }
            if (is_vertex)
                mesh.vertices.push_back(v);
        }
    }
    try
    {
        validate_indices(mesh);
    } catch (const Error& e)
    {
        detail::format_error(path, "faces", e.what());
    }
    return mesh;
}

/// Writes a binary little-endian PLY with double-precision vertices and int face indices.
inline void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh)
{
    std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(mesh.vertices.size()) +
                      "\nproperty double x\nproperty double y\nproperty double z\nelement face " +
                      std::to_string(mesh.triangles.size()) + "\nproperty list uchar int vertex_indices\nend_header\n";
    out.reserve(out.size() + mesh.vertices.size() * 24 + mesh.triangles.size() * 13);
    const auto put = [&out](const auto& v) { out.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
    for (const auto& v : mesh.vertices)
    {
        put(v.x());
        put(v.y());
        put(v.z());
    }
    for (const auto& t : mesh.triangles)
    {
        put(std::uint8_t{3});
        put(std::int32_t{t[0]});
        put(std::int32_t{t[1]});
        put(std::int32_t{t[2]});
    }
    detail::write_file(path, out);
}

/// Reads the v and f records of a Wavefront OBJ file; polygons are fan-triangulated.
inline TriangleMesh read_obj(const std::filesystem::path& path)
{
    std::istringstream in(detail::read_file(path));
    in.imbue(std::locale::classic());
    TriangleMesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        std::istringstream ls(line);
        ls.imbue(std::locale::classic());
        std::string key;
        ls >> key;
        const std::string where = "line " + std::to_string(line_no);
        if (key == "v")
        {
            Eigen::Vector3d v;
            if (!(ls >> v.x() >> v.y() >> v.z()))
                detail::format_error(path, where, "malformed vertex");
            mesh.vertices.push_back(v);
        }
        else if (key == "f")
        {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok)
            {
                int k = 0;
                try
                {
                    k = std::stoi(tok.substr(0, tok.find('/')));
                } catch (const std::exception&)
                {
                    detail::format_error(path, where, "malformed face index '" + tok + "'");
                }
                if (k == 0)
                    detail::format_error(path, where, "face index 0");
                idx.push_back(k > 0 ? k - 1 : static_cast<int>(mesh.vertices.size()) + k);
            }
            if (idx.size() < 3)
                detail::format_error(path, where, "face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    try
    {
        validate_indices(mesh);
    } catch (const Error& e)
    {
        detail::format_error(path, "faces", e.what());
    }
    return mesh;
}

/// Dispatches on the extension (.ply or .obj, case-insensitive).
inline TriangleMesh read_mesh(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    for (auto& c : ext)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".ply")
        return read_ply(path);
    if (ext == ".obj")
        return read_obj(path);
    throw Error(ErrorKind::Format, path.string() + ": unsupported mesh extension '" + ext + "'");
}

/// Binary PGM (P5) dump of a mask, set pixels white.
inline void write_pgm(const std::filesystem::path& path, const silhouette::SilhouetteMask& mask)
{
    std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
    for (auto p : mask.pixels)
        out.push_back(static_cast<char>(p ? 255 : 0));
    detail::write_file(path, out);
}

} /* namespace io */
} /* namespace headfit */

#endif /* HEADFIT_IO_MESH_IO_HPP */
