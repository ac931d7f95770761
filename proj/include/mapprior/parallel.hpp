// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mapprior {

    /// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work items must not share mutable state.
    /// The first exception thrown by any item is rethrown on the caller's thread.
    template <typename Fn>
    void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
        jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
        if (jobs == 1) {
            for (std::size_t i = 0; i < n; ++i) {
                fn(i);
            }
            return;
        }
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        std::vector<std::thread> workers;
        workers.reserve(jobs);
        for (unsigned w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) {
                            error = std::current_exception();
                        }
                    }
                }
            });
        }
        for (auto& t : workers) {
            t.join();
        }
        if (error) {
            std::rethrow_exception(error);
        }
    }

} // namespace mapprior
