// Copyright 2026 The maskdesk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Bounded producer/consumer queue that runs indexed jobs on a worker pool
// and hands results back strictly in index order, so the consumer sees the
// same sequence regardless of worker count.

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <variant>
#include <vector>

namespace maskdesk {

template <typename R>
class OrderedWorkQueue {
 public:
  // workers == 0 runs each job on the consumer thread inside next().
  OrderedWorkQueue(std::function<R(std::size_t)> job, std::size_t count,
                   std::size_t workers, std::size_t capacity)
      : job_(std::move(job)), count_(count), capacity_(capacity ? capacity : 1) {
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
  }

  ~OrderedWorkQueue() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  OrderedWorkQueue(const OrderedWorkQueue&) = delete;
  OrderedWorkQueue& operator=(const OrderedWorkQueue&) = delete;

  // Next result in index order; nullopt once all `count` jobs are consumed.
  // Rethrows a job's exception at its position in the sequence.
  std::optional<R> next() {
    if (consumed_ >= count_) return std::nullopt;
    if (threads_.empty()) return job_(consumed_++);
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return done_.count(consumed_) > 0; });
    auto node = done_.extract(consumed_);
    ++consumed_;
    cv_.notify_all();
    lock.unlock();
    if (auto* err = std::get_if<std::exception_ptr>(&node.mapped())) {
      std::rethrow_exception(*err);
    }
    return std::move(std::get<R>(node.mapped()));
  }

 private:
  void run() {
    for (;;) {
      std::size_t index;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] {
          return stop_ || (claimed_ < count_ && claimed_ < consumed_ + capacity_);
        });
        if (stop_) return;
        index = claimed_++;
      }
      std::variant<R, std::exception_ptr> result;
      try {
        result.template emplace<R>(job_(index));
      } catch (...) {
        result.template emplace<std::exception_ptr>(std::current_exception());
      }
      {
        std::lock_guard lock(mu_);
        done_.emplace(index, std::move(result));
      }
      cv_.notify_all();
    }
  }

  std::function<R(std::size_t)> job_;
  std::size_t count_;
  std::size_t capacity_;
  std::size_t claimed_ = 0;
  std::size_t consumed_ = 0;
  bool stop_ = false;
  std::map<std::size_t, std::variant<R, std::exception_ptr>> done_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::thread> threads_;
};

}  // namespace maskdesk
