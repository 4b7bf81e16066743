/*
 * headfit - Two-stage 3D morphable head model fitting
 *
 * File: include/headfit/core/parallel.hpp
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

#ifndef HEADFIT_CORE_PARALLEL_HPP
#define HEADFIT_CORE_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace headfit {

/**
 * Runs body(i) for i in [0, count) on up to `threads` workers.
 *
 * Work items are independent and each is expected to write only to its own
 * output slot, so results do not depend on the thread count. The first
 * exception thrown (lowest index) is rethrown after all workers join.
 */
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body)
{
    const std::size_t workers =
        std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < count; ++i)
        {
            body(i);
        }
        return;
    }

    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
    {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += workers)
            {
                try
                {
                    body(i);
                } catch (...)
                {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool)
    {
        t.join();
    }
    for (const auto& e : errors)
    {
        if (e)
        {
            std::rethrow_exception(e);
        }
    }
}

} /* namespace headfit */

#endif /* HEADFIT_CORE_PARALLEL_HPP */
