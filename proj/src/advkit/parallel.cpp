#include "advkit/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace advkit {

void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    int nthreads = workers > 0 ? workers : static_cast<int>(hw);
    if (nthreads > n) nthreads = static_cast<int>(n);

    if (nthreads <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::atomic<int64_t> next(0);
    std::exception_ptr first_error;
    std::mutex err_mx;

    auto body = [&]() {
        for (;;) {
            int64_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mx);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace advkit
