#include "nvhalt/memmgr.hpp"

#include <algorithm>

namespace nvhalt {

MemMgr::MemMgr(PHeap* heap, const MemOptions& opt) : heap_(heap), opt_(opt) {
  NVHALT_CHECK(heap_ != nullptr);
  NVHALT_CHECK(opt_.static_words <= heap_->word_count());
  dyn_start_ = (opt_.static_words + kRunWords - 1) / kRunWords * kRunWords;
  uint64_t dyn_words = heap_->word_count() > dyn_start_ ? heap_->word_count() - dyn_start_ : 0;
  run_count_ = uint32_t(dyn_words / kRunWords);
  tail_words_ = dyn_words - uint64_t(run_count_) * kRunWords + (dyn_start_ - opt_.static_words);

  run_class_ = std::vector<std::atomic<int8_t>>(run_count_);
  for (auto& rc : run_class_) rc.store(-1, std::memory_order_relaxed);
  free_runs_.reserve(run_count_);
  for (uint32_t r = run_count_; r > 0; r--) free_runs_.push_back(r - 1);  // hand out low runs first
  reservoir_.assign(kNumClasses, {});

  threads_.resize(heap_->thread_slots() + 1);
  for (auto& t : threads_) t.pool.assign(kNumClasses, {});
  announce_ = std::vector<std::atomic<uint64_t>>(heap_->thread_slots() + 1);
  live_per_class_ = std::vector<std::atomic<uint64_t>>(kNumClasses);
}

uint32_t MemMgr::run_of(WordIdx base) const {
  NVHALT_CHECK(base >= dyn_start_);
  uint64_t off = base - dyn_start_;
  uint32_t run = uint32_t(off / kRunWords);
  NVHALT_CHECK(run < run_count_);
  return run;
}

uint32_t MemMgr::class_of(WordIdx base) const {
  uint32_t run = run_of(base);
  int8_t cls = run_class_[run].load(std::memory_order_acquire);
  NVHALT_CHECK(cls >= 0);
  uint64_t off = (base - dyn_start_) % kRunWords;
  NVHALT_CHECK(off % class_words(uint32_t(cls)) == 0);
  return uint32_t(cls);
}

void MemMgr::fill_words(ThreadId tid, WordIdx base, uint32_t cls, Word pattern) {
  for (uint32_t w = 0; w < class_words(cls); w++) heap_->store(tid, base + w, pattern);
}

std::optional<WordIdx> MemMgr::refill_and_pop(ThreadId tid, uint32_t cls) {
  std::lock_guard<std::mutex> g(global_mu_);
  auto& res = reservoir_[cls];
  if (res.empty()) {
    if (free_runs_.empty()) return std::nullopt;
    uint32_t run = free_runs_.back();
    free_runs_.pop_back();
    run_class_[run].store(int8_t(cls), std::memory_order_release);
    WordIdx rb = run_base(run);
    for (uint32_t off = 0; off < kRunWords; off += class_words(cls)) res.push_back(rb + off);
  }
  auto& pool = ts(tid).pool[cls];
  uint32_t take = std::min<uint32_t>(opt_.refill_batch, uint32_t(res.size()));
  for (uint32_t i = 0; i < take; i++) {
    pool.push_back(res.back());
    res.pop_back();
  }
  WordIdx got = pool.back();
  pool.pop_back();
  return got;
}

std::optional<WordIdx> MemMgr::tx_alloc(ThreadId tid, uint32_t bytes) {
  uint32_t cls = class_for_bytes(bytes);
  NVHALT_CHECK(cls < kNumClasses);
  ThreadState& t = ts(tid);
  std::optional<WordIdx> base;
  if (!t.pool[cls].empty()) {
    base = t.pool[cls].back();
    t.pool[cls].pop_back();
  } else {
    base = refill_and_pop(tid, cls);
    if (!base) return std::nullopt;
  }
  fill_words(tid, *base, cls, 0);  // fresh objects read as zero
  t.log.allocs.emplace_back(*base, cls);
  live_objects_.fetch_add(1, std::memory_order_relaxed);
  live_per_class_[cls].fetch_add(1, std::memory_order_relaxed);
  return base;
}

void MemMgr::tx_free(ThreadId tid, WordIdx base) {
  uint32_t cls = class_of(base);  // validates alignment + run assignment
  ThreadState& t = ts(tid);
  for (const auto& f : t.log.frees)
    NVHALT_CHECK(f.first != base);  // double free within one transaction
  t.log.frees.emplace_back(base, cls);
}

void MemMgr::on_commit(ThreadId tid) {
  ThreadState& t = ts(tid);
  uint64_t e = epoch_.load(std::memory_order_acquire);
  for (const auto& f : t.log.frees) {
    t.retired.push_back({f.first, f.second, e});
    live_objects_.fetch_sub(1, std::memory_order_relaxed);
    live_per_class_[f.second].fetch_sub(1, std::memory_order_relaxed);
  }
  t.log.allocs.clear();
  t.log.frees.clear();
  if (++t.commits_since_advance >= opt_.epoch_advance_stride) {
    t.commits_since_advance = 0;
    try_advance_epoch();
    reclaim(tid);
  }
}

void MemMgr::on_abort(ThreadId tid) {
  ThreadState& t = ts(tid);
  for (const auto& a : t.log.allocs) {
    if (opt_.debug_poison) fill_words(tid, a.first, a.second, kPoisonWord);
    t.pool[a.second].push_back(a.first);
    live_objects_.fetch_sub(1, std::memory_order_relaxed);
    live_per_class_[a.second].fetch_sub(1, std::memory_order_relaxed);
  }
  t.log.allocs.clear();
  t.log.frees.clear();
}

void MemMgr::epoch_enter(ThreadId tid) {
  NVHALT_CHECK((announce_[tid].load(std::memory_order_relaxed) & 1) == 0);  // not reentrant
  uint64_t e = epoch_.load(std::memory_order_seq_cst);
  announce_[tid].store((e << 1) | 1, std::memory_order_seq_cst);
}

void MemMgr::epoch_exit(ThreadId tid) {
  uint64_t a = announce_[tid].load(std::memory_order_relaxed);
  NVHALT_CHECK((a & 1) == 1);  // must pair with an enter
  announce_[tid].store(a & ~uint64_t(1), std::memory_order_seq_cst);
}

uint64_t MemMgr::min_active_epoch() const {
  uint64_t mn = epoch_.load(std::memory_order_seq_cst);
  for (const auto& a : announce_) {
    uint64_t v = a.load(std::memory_order_seq_cst);
    if (v & 1) mn = std::min(mn, v >> 1);
  }
  return mn;
}

bool MemMgr::try_advance_epoch() {
  uint64_t e = epoch_.load(std::memory_order_seq_cst);
  for (const auto& a : announce_) {
    uint64_t v = a.load(std::memory_order_seq_cst);
    if ((v & 1) && (v >> 1) < e) return false;  // a straggler pins the epoch
  }
  epoch_.compare_exchange_strong(e, e + 1, std::memory_order_seq_cst, std::memory_order_seq_cst);
  return true;
}

uint64_t MemMgr::reclaim(ThreadId tid) {
  ThreadState& t = ts(tid);
  uint64_t safe = min_active_epoch();
  uint64_t n = 0;
  size_t keep = 0;
  for (size_t i = 0; i < t.retired.size(); i++) {
    const auto& r = t.retired[i];
    if (r.epoch + 2 <= safe) {
      if (opt_.debug_poison) fill_words(tid, r.base, r.cls, kPoisonWord);
      t.pool[r.cls].push_back(r.base);
      n++;
    } else {
      t.retired[keep++] = r;
    }
  }
  t.retired.resize(keep);
  t.reclaim_count += n;
  return n;
}

uint64_t MemMgr::drain() {
  uint64_t total = 0;
  for (int round = 0; round < 8; round++) {
    try_advance_epoch();
    try_advance_epoch();
    uint64_t n = 0;
    for (ThreadId tid = 1; tid < ThreadId(threads_.size()); tid++) n += reclaim(tid);
    total += n;
    bool empty = true;
    for (const auto& t : threads_)
      if (!t.retired.empty()) empty = false;
    if (empty) break;
  }
  return total;
}

void MemMgr::rebuild_from_iterator(const std::vector<LiveObject>& live) {
  // Reset to virgin state.
  for (auto& rc : run_class_) rc.store(-1, std::memory_order_relaxed);
  free_runs_.clear();
  reservoir_.assign(kNumClasses, {});
  for (auto& t : threads_) {
    t.pool.assign(kNumClasses, {});
    t.retired.clear();
    t.log.allocs.clear();
    t.log.frees.clear();
    t.commits_since_advance = 0;
  }
  live_objects_.store(0, std::memory_order_relaxed);
  for (auto& c : live_per_class_) c.store(0, std::memory_order_relaxed);

  // Bind runs and validate the census.
  std::vector<std::vector<WordIdx>> run_live(run_count_);
  for (const LiveObject& o : live) {
    uint32_t cls = class_for_bytes(o.bytes);
    NVHALT_CHECK(cls < kNumClasses);
    NVHALT_CHECK(o.base >= dyn_start_);
    uint32_t run = run_of(o.base);
    uint64_t off = (o.base - dyn_start_) % kRunWords;
    NVHALT_CHECK(off % class_words(cls) == 0);
    int8_t prev = run_class_[run].load(std::memory_order_relaxed);
    if (prev == -1)
      run_class_[run].store(int8_t(cls), std::memory_order_relaxed);
    else
      NVHALT_CHECK(uint32_t(prev) == cls);  // one class per run
    run_live[run].push_back(o.base);
    live_objects_.fetch_add(1, std::memory_order_relaxed);
    live_per_class_[cls].fetch_add(1, std::memory_order_relaxed);
  }
  // Reconstruct free slots; duplicate bases are overlaps.
  for (uint32_t run = 0; run < run_count_; run++) {
    int8_t cls = run_class_[run].load(std::memory_order_relaxed);
    if (cls == -1) {
      free_runs_.push_back(run);
      continue;
    }
    auto& lv = run_live[run];
    std::sort(lv.begin(), lv.end());
    for (size_t i = 1; i < lv.size(); i++) NVHALT_CHECK(lv[i] != lv[i - 1]);  // overlap
    size_t j = 0;
    WordIdx rb = run_base(run);
    for (uint32_t off = 0; off < kRunWords; off += class_words(uint32_t(cls))) {
      WordIdx slot = rb + off;
      if (j < lv.size() && lv[j] == slot) {
        j++;
      } else {
        reservoir_[uint32_t(cls)].push_back(slot);
      }
    }
    NVHALT_CHECK(j == lv.size());
  }
  std::sort(free_runs_.rbegin(), free_runs_.rend());
}

MemAudit MemMgr::audit() const {
  MemAudit a;
  a.managed_words = uint64_t(run_count_) * kRunWords;
  a.tail_words = tail_words_;
  for (uint32_t c = 0; c < kNumClasses; c++)
    a.live_words += live_per_class_[c].load(std::memory_order_relaxed) * class_words(c);
  a.live_objects = live_objects_.load(std::memory_order_relaxed);
  for (uint32_t c = 0; c < kNumClasses; c++)
    a.pooled_words += reservoir_[c].size() * class_words(c);
  for (const auto& t : threads_) {
    for (uint32_t c = 0; c < kNumClasses; c++) a.pooled_words += t.pool[c].size() * class_words(c);
    for (const auto& r : t.retired) a.retired_words += class_words(r.cls);
    a.reclaims += t.reclaim_count;
  }
  a.virgin_words = uint64_t(free_runs_.size()) * kRunWords;
  a.conserved = (a.live_words + a.pooled_words + a.retired_words + a.virgin_words == a.managed_words);
  return a;
}

}  // namespace nvhalt
