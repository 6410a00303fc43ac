#pragma once

#include <shared_mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nvhalt/common.hpp"

namespace nvhalt {

// Simulated best-effort hardware transactional memory with Intel-RTM-like
// semantics: per-transaction read/write tracking sets over an abstract tracked
// address space, buffered speculative writes published at commit, eager
// requester-wins conflict dooming surfaced lazily at the victim's next
// instrumented operation, capacity limits, seeded spurious aborts, and strong
// isolation against raw (non-transactional) accesses. No nesting.
//
// Tracked addresses are plain indices; the owner wires the value plane
// (tracked_load / tracked_publish) to heap words and lock words.

enum class HwAbortKind : uint8_t { Conflict, Capacity, Spurious, ExplicitFlush, User };

inline const char* to_string(HwAbortKind k) {
  switch (k) {
    case HwAbortKind::Conflict: return "Conflict";
    case HwAbortKind::Capacity: return "Capacity";
    case HwAbortKind::Spurious: return "Spurious";
    case HwAbortKind::ExplicitFlush: return "ExplicitFlush";
    case HwAbortKind::User: return "User";
  }
  return "?";
}

// Unwinds the transaction body back to the xbegin caller.
struct HwAbortException {
  HwAbortKind kind;
  uint8_t user_code = 0;  // meaningful iff kind == User
};

struct HwResult {
  bool committed = true;
  HwAbortKind kind = HwAbortKind::Conflict;
  uint8_t user_code = 0;
};

struct TrackedMemory {
  virtual ~TrackedMemory() = default;
  virtual uint64_t tracked_load(uint64_t taddr) = 0;
  virtual void tracked_publish(uint64_t taddr, uint64_t v) = 0;
};

struct HtmOptions {
  uint32_t read_capacity = 256;
  uint32_t write_capacity = 64;
  double spurious_p = 0.0;
  uint64_t seed = 0;
  uint32_t max_threads = 64;  // dooming uses a 64-bit reader mask
};

class HtmSim {
 public:
  HtmSim(const HtmOptions& opt, uint64_t tracked_size, TrackedMemory* mem);

  // ---- transactional interface (tid identifies the logical thread) ----
  void xbegin(ThreadId tid);
  uint64_t tx_load(ThreadId tid, uint64_t taddr);
  void tx_store(ThreadId tid, uint64_t taddr, uint64_t v);
  [[noreturn]] void xabort(ThreadId tid, uint8_t user_code);
  HwResult xend(ThreadId tid);

  bool in_txn(ThreadId tid) const;

  // Own-buffer lookup without tracking side effects (hardware-path helpers).
  bool buffered(ThreadId tid, uint64_t taddr, uint64_t* out) const;

  // ---- strong isolation: raw accesses from outside any transaction ----
  // A raw write dooms every active transaction tracking taddr; a raw read
  // dooms an active transaction holding taddr in its write set. The calling
  // thread's own transaction (if any) is exempt.
  void raw_access(ThreadId tid, uint64_t taddr, bool is_write);

  // Explicit flush issued by tid: aborts tid's own active transaction.
  void on_explicit_flush(ThreadId tid);

  // Commit/raw exclusion. A committing transaction publishes its write buffer
  // under the unique side. A non-transactional compound mutation of tracked
  // memory (e.g. a lock CAS followed by raw_access) takes the shared side
  // around {real operation; raw_access} so a concurrent publish can neither
  // interleave into the pair nor overwrite it: the publisher either committed
  // before the section (the real operation sees its value) or its commit CAS
  // runs after and finds the transaction doomed.
  std::shared_mutex& commit_mutex() { return commit_mu_; }

 private:
  enum : uint32_t { kInactive = 0, kActive = 1, kCommitting = 2, kDoomedBase = 16 };

  struct WriteEnt {
    uint64_t taddr;
    uint64_t value;
  };

  struct alignas(kLineBytes) Txn {
    std::atomic<uint32_t> status{kInactive};
    std::vector<uint64_t> rlist;               // insertion order, deduped
    std::unordered_set<uint64_t> rset;
    std::vector<WriteEnt> wbuf;                // insertion order, deduped
    std::unordered_map<uint64_t, uint32_t> wpos;
    Rng rng{1};
  };

  struct Entry {
    std::atomic<uint64_t> readers{0};  // bit (tid-1)
    std::atomic<uint16_t> writer{0};   // 0 = none
  };

  Txn& self(ThreadId tid) {
    NVHALT_CHECK(tid >= 1 && tid <= opt_.max_threads);
    return txns_[tid];
  }
  const Txn& self(ThreadId tid) const {
    NVHALT_CHECK(tid >= 1 && tid <= opt_.max_threads);
    return txns_[tid];
  }
  static uint64_t bit(ThreadId tid) { return uint64_t(1) << (tid - 1); }

  void doom_other(ThreadId victim, HwAbortKind kind);
  void doom_trackers(uint64_t taddr, ThreadId except, bool include_readers);
  [[noreturn]] void surface(ThreadId tid, Txn& t, HwAbortKind kind, uint8_t user_code);
  void check_doomed(ThreadId tid, Txn& t);  // throws if a pending doom exists
  void cleanup(ThreadId tid, Txn& t);

  HtmOptions opt_;
  TrackedMemory* mem_;
  std::shared_mutex commit_mu_;
  std::vector<Txn> txns_;      // slot per tid, [1, max_threads]
  std::vector<Entry> table_;   // per tracked address
};

}  // namespace nvhalt
