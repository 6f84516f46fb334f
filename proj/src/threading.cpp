#include "conformer/threading.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace conformer {
namespace {

int resolve_num_threads() {
  if (const char* env = std::getenv("CONFORMER_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Minimal persistent pool. Workers sleep on a condition variable and wake for
// one parallel_for at a time; the submitting thread participates as worker 0.
class Pool {
 public:
  Pool() : threads_(resolve_num_threads()) {
    for (int i = 1; i < threads_; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int threads() const { return threads_; }

  void run(int64_t begin, int64_t end, const std::function<void(int64_t, int64_t)>& fn) {
    int64_t n = end - begin;
    int chunks = static_cast<int>(std::min<int64_t>(threads_, n));
    if (chunks <= 1) {
      fn(begin, end);
      return;
    }
    std::unique_lock<std::mutex> lk(mu_);
    job_fn_ = &fn;
    job_begin_ = begin;
    job_end_ = end;
    job_chunks_ = chunks;
    next_chunk_ = 1;  // chunk 0 runs on this thread
    pending_ = chunks - 1;
    ++generation_;
    lk.unlock();
    cv_.notify_all();

    run_chunk(0);

    lk.lock();
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  void run_chunk(int chunk) {
    // Deterministic partition: chunk c covers the half-open block of the range
    // obtained by even division with the remainder spread over leading chunks.
    int64_t n = job_end_ - job_begin_;
    int64_t base = n / job_chunks_, rem = n % job_chunks_;
    int64_t lo = job_begin_ + chunk * base + std::min<int64_t>(chunk, rem);
    int64_t hi = lo + base + (chunk < rem ? 1 : 0);
    (*job_fn_)(lo, hi);
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      int chunk = -1;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || (generation_ != seen && next_chunk_ < job_chunks_); });
        if (stop_) return;
        if (next_chunk_ >= job_chunks_) continue;
        chunk = next_chunk_++;
        if (next_chunk_ >= job_chunks_) seen = generation_;
      }
      run_chunk(chunk);
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  int threads_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  bool stop_ = false;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_begin_ = 0, job_end_ = 0;
  int job_chunks_ = 0;
  int next_chunk_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
};

Pool& pool() {
  static Pool p;
  return p;
}

thread_local bool inside_parallel = false;

}  // namespace

int num_threads() { return pool().threads(); }

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn, int64_t min_grain) {
  if (end <= begin) return;
  // Nested parallel sections run serially; the pool handles one job at a time.
  if (inside_parallel || end - begin < min_grain || pool().threads() == 1) {
    fn(begin, end);
    return;
  }
  std::function<void(int64_t, int64_t)> guarded = [&fn](int64_t lo, int64_t hi) {
    inside_parallel = true;
    fn(lo, hi);
    inside_parallel = false;
  };
  pool().run(begin, end, guarded);
}

}  // namespace conformer
