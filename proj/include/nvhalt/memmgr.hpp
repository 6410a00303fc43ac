#pragma once

#include <mutex>
#include <optional>
#include <vector>

#include "nvhalt/pheap.hpp"

namespace nvhalt {

// Transactional word-granular allocator with epoch-based reclamation.
//
// Contract with the TM: allocation carves immediately (rolled back via the
// per-transaction log if the attempt aborts); frees only take effect at commit,
// where the object is retired into EBR and reclaimed once every concurrently
// running transaction has left its epoch. The allocator touches no versioned
// locks and no transactional read/write sets, and none of its own state is
// persisted — recovery rebuilds it from a user-supplied census of live objects.
//
// Geometry: the heap prefix [0, static_words) belongs to container roots and is
// not managed. The rest is carved into 1024-word runs; a run is bound to one
// size class (16B..4KiB, powers of two) on first use and sliced into slots.

inline constexpr Word kPoisonWord = 0xDEADDEADDEADDEADull;
inline constexpr uint32_t kRunWords = 1024;
inline constexpr uint32_t kNumClasses = 9;  // 2,4,8,...,512 words

constexpr uint32_t class_words(uint32_t cls) { return 2u << cls; }
constexpr uint32_t class_bytes(uint32_t cls) { return class_words(cls) * 8; }

// Smallest class fitting `bytes`, or kNumClasses if too large.
constexpr uint32_t class_for_bytes(uint64_t bytes) {
  for (uint32_t c = 0; c < kNumClasses; c++)
    if (bytes <= class_bytes(c)) return c;
  return kNumClasses;
}

struct MemOptions {
  uint64_t static_words = 0;
  uint32_t epoch_advance_stride = 64;  // commits between advance attempts
  bool debug_poison = true;
  uint32_t refill_batch = 32;
};

struct LiveObject {
  WordIdx base;
  uint32_t bytes;
};

struct MemAudit {
  uint64_t managed_words = 0;
  uint64_t live_words = 0;
  uint64_t pooled_words = 0;
  uint64_t retired_words = 0;
  uint64_t virgin_words = 0;  // unassigned runs
  uint64_t tail_words = 0;    // alignment leftovers, never handed out
  bool conserved = false;
  uint64_t live_objects = 0;
  uint64_t reclaims = 0;
};

class MemMgr {
 public:
  MemMgr(PHeap* heap, const MemOptions& opt);

  // ---- transactional interface (tid owns the calling transaction) ----
  // nullopt = managed space exhausted (the TM surfaces a voluntary abort).
  std::optional<WordIdx> tx_alloc(ThreadId tid, uint32_t bytes);
  void tx_free(ThreadId tid, WordIdx base);

  void on_commit(ThreadId tid);
  void on_abort(ThreadId tid);

  // ---- epochs ----
  void epoch_enter(ThreadId tid);
  void epoch_exit(ThreadId tid);
  bool try_advance_epoch();       // true if the global epoch moved
  uint64_t reclaim(ThreadId tid); // objects moved retired → pool for this thread
  uint64_t global_epoch() const { return epoch_.load(std::memory_order_acquire); }

  // Quiesced contexts only (tests, shutdown): advance/reclaim until nothing is
  // retired anywhere. Returns objects reclaimed.
  uint64_t drain();

  // ---- recovery ----
  // Reset all state, then adopt the given census as ground truth.
  // Throws ContractViolation on overlapping/misaligned/corrupt layouts.
  void rebuild_from_iterator(const std::vector<LiveObject>& live);

  // ---- audit (quiesced) ----
  MemAudit audit() const;

  uint32_t class_of(WordIdx base) const;  // contract-checked
  bool debug_poison() const { return opt_.debug_poison; }

 private:
  struct ThreadState {
    std::vector<std::vector<WordIdx>> pool;  // per class
    struct Retired {
      WordIdx base;
      uint32_t cls;
      uint64_t epoch;
    };
    std::vector<Retired> retired;  // FIFO by epoch
    struct AllocLog {
      std::vector<std::pair<WordIdx, uint32_t>> allocs;  // {base, cls}
      std::vector<std::pair<WordIdx, uint32_t>> frees;
    } log;
    uint64_t commits_since_advance = 0;
    uint64_t reclaim_count = 0;
  };

  WordIdx run_base(uint32_t run) const { return WordIdx(dyn_start_ + uint64_t(run) * kRunWords); }
  uint32_t run_of(WordIdx base) const;
  void fill_words(ThreadId tid, WordIdx base, uint32_t cls, Word pattern);
  std::optional<WordIdx> refill_and_pop(ThreadId tid, uint32_t cls);
  uint64_t min_active_epoch() const;
  ThreadState& ts(ThreadId tid) {
    NVHALT_CHECK(tid >= 1 && tid < threads_.size());
    return threads_[tid];
  }

  PHeap* heap_;
  MemOptions opt_;
  uint64_t dyn_start_ = 0;  // run-aligned start of managed space
  uint32_t run_count_ = 0;
  uint64_t tail_words_ = 0;

  std::vector<std::atomic<int8_t>> run_class_;  // -1 = virgin
  std::vector<uint32_t> free_runs_;             // virgin runs (mutex-guarded)
  std::vector<std::vector<WordIdx>> reservoir_; // per class (mutex-guarded)
  std::mutex global_mu_;

  std::vector<ThreadState> threads_;            // per tid
  std::atomic<uint64_t> epoch_{2};
  std::vector<std::atomic<uint64_t>> announce_; // (epoch << 1) | active
  std::atomic<uint64_t> live_objects_{0};
  std::vector<std::atomic<uint64_t>> live_per_class_;
};

}  // namespace nvhalt
