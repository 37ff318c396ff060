#include "medvt/threads.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace medvt {

namespace {

std::atomic<int> g_threads{0};  // 0 = uninitialized
thread_local bool tls_in_worker = false;

int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Persistent pool; jobs are (fn, n) pairs drained with an atomic cursor.
// Nested parallel_for calls run serially in the calling worker.
class Pool {
 public:
  static Pool& instance() {
    static Pool p;
    return p;
  }

  void run(int64_t n, const std::function<void(int64_t)>& fn, int workers) {
    ensure_workers(workers - 1);
    {
      std::lock_guard<std::mutex> lk(m_);
      fn_ = &fn;
      n_ = n;
      cursor_.store(0);
      pending_ = std::min<int64_t>(workers - 1, static_cast<int64_t>(threads_.size()));
      ++epoch_;
    }
    cv_.notify_all();
    drain();  // caller participates
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [&] { return active_ == 0 && pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  Pool() = default;
  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(m_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void ensure_workers(int want) {
    std::lock_guard<std::mutex> lk(m_);
    while (static_cast<int>(threads_.size()) < want) {
      threads_.emplace_back([this] { worker(); });
    }
  }

  void worker() {
    tls_in_worker = true;
    uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(m_);
      cv_.wait(lk, [&] { return stop_ || (epoch_ != seen && pending_ > 0); });
      if (stop_) return;
      seen = epoch_;
      if (pending_ <= 0) continue;
      --pending_;
      ++active_;
      lk.unlock();
      drain();
      lk.lock();
      --active_;
      if (active_ == 0 && pending_ == 0) done_cv_.notify_all();
    }
  }

  void drain() {
    const auto* fn = fn_;
    const int64_t n = n_;
    if (!fn) return;
    for (;;) {
      const int64_t i = cursor_.fetch_add(1);
      if (i >= n) return;
      (*fn)(i);
    }
  }

  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int64_t)>* fn_ = nullptr;
  int64_t n_ = 0;
  std::atomic<int64_t> cursor_{0};
  int64_t pending_ = 0;
  int64_t active_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace

void set_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

int get_threads() {
  int n = g_threads.load();
  if (n == 0) {
    n = default_threads();
    g_threads.store(n);
  }
  return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<int64_t>(get_threads(), n));
  if (workers <= 1 || n < 8 || tls_in_worker) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  Pool::instance().run(n, fn, workers);
}

}  // namespace medvt
