#include "threadpool.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

namespace attenlab {
namespace {

int resolve_worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("ATTENLAB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

// Process-lifetime pool with a plain mutex-guarded task queue. parallel_for
// enqueues contiguous index ranges and the caller participates until its own
// batch is drained, so nested calls degrade to inline execution instead of
// deadlocking.
class Pool {
public:
  static Pool& instance() {
    // Deliberately leaked: workers block on the queue for the process
    // lifetime and must not be torn down during static destruction.
    static Pool* pool = new Pool(resolve_worker_count());
    return *pool;
  }

  int workers() const { return workers_; }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    const int64_t chunks = std::min<int64_t>(workers_, n);
    if (chunks <= 1 || inside_pool_) {
      fn(0, n);
      return;
    }
    auto batch = std::make_shared<Batch>();
    batch->fn = &fn;
    batch->remaining = static_cast<int>(chunks);
    const int64_t per = (n + chunks - 1) / chunks;
    {
      std::lock_guard<std::mutex> lk(mutex_);
      for (int64_t c = 1; c < chunks; ++c) {
        tasks_.push_back(Task{batch, c * per, std::min(n, (c + 1) * per)});
      }
      cv_.notify_all();
    }
    exec(batch, 0, std::min(n, per));
    // Help with whatever is queued (ours or not), then wait for our batch.
    std::unique_lock<std::mutex> lk(mutex_);
    while (batch->remaining > 0) {
      if (!tasks_.empty()) {
        Task t = std::move(tasks_.front());
        tasks_.pop_front();
        lk.unlock();
        exec(t.batch, t.begin, t.end);
        lk.lock();
      } else {
        done_cv_.wait(lk, [&] { return batch->remaining == 0 || !tasks_.empty(); });
      }
    }
  }

private:
  struct Batch {
    const std::function<void(int64_t, int64_t)>* fn = nullptr;
    int remaining = 0;
  };
  struct Task {
    std::shared_ptr<Batch> batch;
    int64_t begin = 0;
    int64_t end = 0;
  };

  explicit Pool(int workers) : workers_(workers) {
    for (int i = 1; i < workers_; ++i) {
      std::thread([this] { worker_loop(); }).detach();
    }
  }

  void exec(const std::shared_ptr<Batch>& batch, int64_t b, int64_t e) {
    inside_pool_ = true;
    (*batch->fn)(b, e);
    inside_pool_ = false;
    std::lock_guard<std::mutex> lk(mutex_);
    if (--batch->remaining == 0) done_cv_.notify_all();
  }

  void worker_loop() {
    std::unique_lock<std::mutex> lk(mutex_);
    for (;;) {
      cv_.wait(lk, [&] { return !tasks_.empty(); });
      Task t = std::move(tasks_.front());
      tasks_.pop_front();
      lk.unlock();
      exec(t.batch, t.begin, t.end);
      lk.lock();
    }
  }

  const int workers_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::deque<Task> tasks_;
  static thread_local bool inside_pool_;
};

thread_local bool Pool::inside_pool_ = false;

}  // namespace

int worker_count() { return Pool::instance().workers(); }

void parallel_for_ranges(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  Pool::instance().run(n, fn);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  parallel_for_ranges(n, [&fn](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace attenlab
