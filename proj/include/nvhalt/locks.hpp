#pragma once

#include <vector>

#include "nvhalt/common.hpp"

namespace nvhalt {

// Fine-grained versioned write-locks. Each lock is a packed 64-bit word —
// owner in the high 16 bits (0 = unlocked), a 48-bit version in the low bits —
// plus a second monotone counter (hver) that only hardware transactions bump,
// used by the strongly progressive commit to detect hardware interference
// without full version validation.
//
// The version is odd exactly while the lock is held; one acquire/release pair
// advances it by exactly 2, so an unchanged even version brackets a quiescent
// window.

struct LockSnapshot {
  uint64_t packed = 0;  // {owner, sver}
  uint64_t hver = 0;

  ThreadId owner() const { return packed_tid(packed); }
  uint64_t sver() const { return packed_ver(packed); }
  bool locked() const { return (sver() & 1) != 0; }
};

enum class LockMode { Hashed, Colocated };

struct LockOptions {
  LockMode mode = LockMode::Hashed;
  uint32_t table_log2 = 20;  // Hashed: 2^20 locks by default
};

class LockTable {
 public:
  // word_count is the heap size; Colocated allocates one lock per word.
  LockTable(const LockOptions& opt, uint64_t word_count);

  LockMode mode() const { return opt_.mode; }
  uint64_t size() const { return locks_.size(); }

  LockIdx lock_of(WordIdx addr) const {
    if (opt_.mode == LockMode::Colocated) return addr;
    return LockIdx((uint64_t(addr) * 0x9E3779B97F4A7C15ull) >> shift_);
  }

  // All lock-word accesses are seq_cst: the HTM simulator's conflict-detection
  // argument orders tracker registration, publication, and these raw
  // operations in one total order.

  // Consistent {packed, hver} pair (seqlock read).
  LockSnapshot snapshot(LockIdx i) const {
    const Slot& s = slot(i);
    for (;;) {
      uint64_t p1 = s.packed.load(std::memory_order_seq_cst);
      uint64_t h = s.hver.load(std::memory_order_seq_cst);
      uint64_t p2 = s.packed.load(std::memory_order_seq_cst);
      if (p1 == p2) return LockSnapshot{p1, h};
    }
  }

  uint64_t packed(LockIdx i) const { return slot(i).packed.load(std::memory_order_seq_cst); }
  uint64_t hver(LockIdx i) const { return slot(i).hver.load(std::memory_order_seq_cst); }

  // Software acquire: single CAS from {unlocked, expected even version} to
  // {tid, version+1}. Fails on any interference.
  bool try_acquire(LockIdx i, uint64_t expected_even_sver, ThreadId tid) {
    NVHALT_CHECK(tid != 0);
    NVHALT_DCHECK((expected_even_sver & 1) == 0);
    uint64_t expect = pack_tid_ver(0, expected_even_sver);
    uint64_t desired = pack_tid_ver(tid, expected_even_sver + 1);
    return slot(i).packed.compare_exchange_strong(expect, desired, std::memory_order_seq_cst,
                                                  std::memory_order_seq_cst);
  }

  void release(LockIdx i, ThreadId tid) {
    Slot& s = slot(i);
    uint64_t cur = s.packed.load(std::memory_order_seq_cst);
    NVHALT_CHECK(packed_tid(cur) == tid && (packed_ver(cur) & 1) == 1);
    s.packed.store(pack_tid_ver(0, packed_ver(cur) + 1), std::memory_order_seq_cst);
  }

  // Raw stores used only when the HTM layer publishes speculative lock words
  // at commit and when the hardware path releases after persisting.
  void raw_store_packed(LockIdx i, uint64_t v) { slot(i).packed.store(v, std::memory_order_seq_cst); }
  void raw_store_hver(LockIdx i, uint64_t v) { slot(i).hver.store(v, std::memory_order_seq_cst); }

 private:
  struct alignas(kLineBytes) Slot {
    std::atomic<uint64_t> packed{0};
    std::atomic<uint64_t> hver{0};
  };

  Slot& slot(LockIdx i) {
    NVHALT_CHECK(i < locks_.size());
    return locks_[i];
  }
  const Slot& slot(LockIdx i) const {
    NVHALT_CHECK(i < locks_.size());
    return locks_[i];
  }

  LockOptions opt_;
  unsigned shift_ = 0;
  std::vector<Slot> locks_;
};

inline LockTable::LockTable(const LockOptions& opt, uint64_t word_count) : opt_(opt) {
  if (opt_.mode == LockMode::Colocated) {
    locks_ = std::vector<Slot>(word_count);
  } else {
    NVHALT_CHECK(opt_.table_log2 >= 1 && opt_.table_log2 < 32);
    shift_ = 64 - opt_.table_log2;
    locks_ = std::vector<Slot>(uint64_t(1) << opt_.table_log2);
  }
}

}  // namespace nvhalt
