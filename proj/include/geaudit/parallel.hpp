#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

namespace geaudit {

/// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
/// exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < w; ++t) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

/// Concurrent callers asking for the same key share one computation.
template <typename K, typename V>
class SingleFlight {
public:
    V run(const K& key, const std::function<V()>& compute) {
        std::shared_future<V> fut;
        std::promise<V> promise;
        bool leader = false;
        {
            std::lock_guard lock(mu_);
            auto it = flights_.find(key);
            if (it != flights_.end()) {
                fut = it->second;
            } else {
                fut = promise.get_future().share();
                flights_.emplace(key, fut);
                leader = true;
            }
        }
        if (!leader) return fut.get();
        try {
            promise.set_value(compute());
        } catch (...) {
            promise.set_exception(std::current_exception());
        }
        {
            std::lock_guard lock(mu_);
            flights_.erase(key);
        }
        return fut.get();
    }

private:
    std::mutex mu_;
    std::map<K, std::shared_future<V>> flights_;
};

}  // namespace geaudit
