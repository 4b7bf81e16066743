/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/core/error.hpp
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

#ifndef HEADFIT_CORE_ERROR_HPP
#define HEADFIT_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace headfit {

/**
 * Categories of failures raised by the library. The CLI maps these onto
 * process exit codes (see tools/headfit.cpp).
 */
enum class ErrorKind {
    InvalidParams,
    UndefinedInput,
    BehindCamera,
    DegenerateConfiguration,
    InvalidInitialization,
    IllPosed,
    OverFiltered,
    NoFeature,
    EmptyInput,
    TopologyMismatch,
    UnfittableScene,
    Io,
    Format,
    Validation,
};

inline const char* to_string(ErrorKind kind)
{
    switch (kind)
    {
    case ErrorKind::InvalidParams: return "invalid-params";
    case ErrorKind::UndefinedInput: return "undefined-input";
    case ErrorKind::BehindCamera: return "behind-camera";
    case ErrorKind::DegenerateConfiguration: return "degenerate-configuration";
    case ErrorKind::InvalidInitialization: return "invalid-initialization";
    case ErrorKind::IllPosed: return "ill-posed";
    case ErrorKind::OverFiltered: return "over-filtered";
    case ErrorKind::NoFeature: return "no-feature";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::TopologyMismatch: return "topology-mismatch";
    case ErrorKind::UnfittableScene: return "unfittable-scene";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Validation: return "validation";
    }
    return "unknown";
}

class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised when a point lands at depth < 1e-9 in a camera frame.
class BehindCameraError : public Error
{
public:
    BehindCameraError(int frame_id, std::string keypoint, const std::string& message)
        : Error(ErrorKind::BehindCamera, message), frame_id_(frame_id), keypoint_(std::move(keypoint))
    {
    }

    int frame_id() const noexcept { return frame_id_; }
    const std::string& keypoint() const noexcept { return keypoint_; }

private:
    int frame_id_;
    std::string keypoint_;
};

} /* namespace headfit */

#endif /* HEADFIT_CORE_ERROR_HPP */
