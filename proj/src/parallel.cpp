#include "dfm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

namespace dfm {
namespace {

std::atomic<int> g_threads{0};
thread_local bool t_inside_worker = false;

int default_threads() {
  if (const char* env = std::getenv("DFM_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs tasks [0, count) on up to thread_count() workers. The first exception
// thrown by any task is rethrown on the caller.
void run_tasks(std::size_t count, const std::function<void(std::size_t)>& task) {
  if (count == 0) return;
  std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(thread_count()));
  if (workers <= 1 || t_inside_worker) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto loop = [&] {
    t_inside_worker = true;
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) break;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
      }
    }
    t_inside_worker = false;
  };

  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(loop);
  loop();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

void set_thread_count(int n) { g_threads.store(n > 0 ? n : 0); }

int thread_count() {
  int n = g_threads.load();
  return n > 0 ? n : default_threads();
}

void parallel_for_blocks(std::size_t n, std::size_t block_size,
                         const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  if (block_size == 0) block_size = 1;
  std::size_t blocks = (n + block_size - 1) / block_size;
  run_tasks(blocks, [&](std::size_t b) {
    std::size_t begin = b * block_size;
    body(b, begin, std::min(n, begin + block_size));
  });
}

void parallel_for_each(std::size_t n, const std::function<void(std::size_t)>& body) {
  run_tasks(n, body);
}

std::vector<double> blocked_sum(
    std::size_t n, std::size_t block_size, std::size_t width,
    const std::function<void(std::size_t, std::size_t, std::size_t, std::span<double>)>& body) {
  if (block_size == 0) block_size = 1;
  const std::size_t blocks = (n + block_size - 1) / block_size;
  if (blocks == 0) return std::vector<double>(width, 0.0);

  // Binary-counter reduction: entry k of the stack holds the sum of 2^level
  // consecutive blocks; equal levels merge as soon as they meet.
  struct Node {
    int level;
    std::vector<double> sum;
  };
  std::vector<Node> stack;
  auto push = [&](std::vector<double> v) {
    Node node{0, std::move(v)};
    while (!stack.empty() && stack.back().level == node.level) {
      auto& left = stack.back().sum;
      for (std::size_t k = 0; k < width; ++k) left[k] += node.sum[k];
      node = Node{stack.back().level + 1, std::move(left)};
      stack.pop_back();
    }
    stack.push_back(std::move(node));
  };

  const std::size_t wave = std::max<std::size_t>(1, static_cast<std::size_t>(thread_count())) * 8;
  std::vector<std::vector<double>> partials;
  for (std::size_t first = 0; first < blocks; first += wave) {
    const std::size_t count = std::min(wave, blocks - first);
    partials.assign(count, std::vector<double>(width, 0.0));
    run_tasks(count, [&](std::size_t k) {
      const std::size_t b = first + k;
      const std::size_t begin = b * block_size;
      body(b, begin, std::min(n, begin + block_size), partials[k]);
    });
    for (auto& p : partials) push(std::move(p));
  }
  while (stack.size() > 1) {
    auto right = std::move(stack.back().sum);
    stack.pop_back();
    auto& left = stack.back().sum;
    for (std::size_t k = 0; k < width; ++k) left[k] += right[k];
  }
  return std::move(stack.front().sum);
}

}  // namespace dfm
