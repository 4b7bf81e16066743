/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/synth/lambda_sweep.hpp
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

#ifndef HEADFIT_SYNTH_LAMBDA_SWEEP_HPP
#define HEADFIT_SYNTH_LAMBDA_SWEEP_HPP

#include "headfit/core/error.hpp"
#include "headfit/core/parallel.hpp"
#include "headfit/core/random.hpp"
#include "headfit/morphablemodel/MorphableModel.hpp"
#include "headfit/pipeline/fit_pipeline.hpp"
#include "headfit/synth/scene_generator.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace headfit {
namespace synth {

struct SweepRow
{
    int head = 0;
    double lambda = 0.0;
    std::uint64_t scene_seed = 0;
    bool ok = false;
    double cosine = std::numeric_limits<double>::quiet_NaN();
    double delta_s = std::numeric_limits<double>::quiet_NaN();
    std::string error;
};

struct SweepSummary
{
    double lambda = 0.0;
    int runs = 0;
    int failures = 0;
    double mean_cosine = std::numeric_limits<double>::quiet_NaN();
    double mean_delta_s = std::numeric_limits<double>::quiet_NaN();
};

struct SweepReport
{
    /// Head-major: rows[h * lambdas.size() + l].
    std::vector<SweepRow> rows;
    std::vector<SweepSummary> summary;
};

inline std::vector<double> default_sweep_lambdas()
{
    return {0.1, 5.0, 10.0, 50.0, 100.0, 200.0, 1000.0, 2000.0, 10000.0};
}

/**
 * Fits `n_heads` random synthetic heads with every lambda and records the
 * cosine similarity and squared shape distance between the true and the final
 * coefficients. Head h uses the scene seed derive_seed(seed, h); the prepared
 * scene (filtered mesh, silhouettes) is shared by all lambdas of a head. Heads
 * run in parallel; failures are recorded per row.
 */
inline SweepReport lambda_sweep(std::shared_ptr<const morphablemodel::MorphableModel> model,
                                const std::vector<double>& lambdas, int n_heads, const SyntheticSpec& spec,
                                std::uint64_t seed, const pipeline::PipelineConfig& base = {}, int threads = 1)
{
    if (n_heads < 1)
    {
        throw Error(ErrorKind::InvalidParams, "lambda sweep needs at least one head");
    }
    if (lambdas.empty())
    {
        throw Error(ErrorKind::InvalidParams, "lambda sweep needs at least one lambda");
    }
    for (double l : lambdas)
    {
        if (!(l >= 0.0))
        {
            throw Error(ErrorKind::InvalidParams, "lambda must be non-negative");
        }
    }
    SweepReport report;
    report.rows.resize(static_cast<std::size_t>(n_heads) * lambdas.size());
    parallel_for(static_cast<std::size_t>(n_heads), threads, [&](std::size_t h) {
        const std::uint64_t scene_seed = derive_seed(seed, h);
        SweepRow* rows = &report.rows[h * lambdas.size()];
        for (std::size_t l = 0; l < lambdas.size(); ++l)
        {
            rows[l].head = static_cast<int>(h);
            rows[l].lambda = lambdas[l];
            rows[l].scene_seed = scene_seed;
        }
        try
        {
            auto [gt, scene] = generate_scene(model, spec, scene_seed);
            pipeline::PipelineConfig config = base;
            config.threads = 1;
            const pipeline::PreparedScene prepared(std::move(scene), config.edge_factor);
            for (std::size_t l = 0; l < lambdas.size(); ++l)
            {
                config.lambda = lambdas[l];
                try
                {
                    const pipeline::FitResult fit = pipeline::run_pipeline(prepared, config);
                    rows[l].delta_s = morphablemodel::shape_distance(*model, gt.alpha, fit.alpha_final);
                    rows[l].cosine = morphablemodel::param_cosine_similarity(gt.alpha, fit.alpha_final);
                    rows[l].ok = true;
                } catch (const Error& e)
                {
                    rows[l].error = e.what();
                }
            }
        } catch (const Error& e)
        {
            for (std::size_t l = 0; l < lambdas.size(); ++l)
            {
                rows[l].error = e.what();
            }
        }
    });

    for (std::size_t l = 0; l < lambdas.size(); ++l)
    {
        SweepSummary s;
        s.lambda = lambdas[l];
        double cos_sum = 0.0, ds_sum = 0.0;
        for (int h = 0; h < n_heads; ++h)
        {
            const SweepRow& row = report.rows[static_cast<std::size_t>(h) * lambdas.size() + l];
            ++s.runs;
            if (!row.ok)
            {
                ++s.failures;
                continue;
            }
            cos_sum += row.cosine;
            ds_sum += row.delta_s;
        }
        const int good = s.runs - s.failures;
        if (good > 0)
        {
            s.mean_cosine = cos_sum / good;
            s.mean_delta_s = ds_sum / good;
        }
        report.summary.push_back(s);
    }
    return report;
}

} /* namespace synth */
} /* namespace headfit */

#endif /* HEADFIT_SYNTH_LAMBDA_SWEEP_HPP */
