#pragma once

#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nvhalt/common.hpp"
#include "nvhalt/history.hpp"
#include "nvhalt/htmsim.hpp"
#include "nvhalt/locks.hpp"
#include "nvhalt/memmgr.hpp"
#include "nvhalt/pheap.hpp"
#include "nvhalt/probe.hpp"
#include "nvhalt/stats.hpp"

namespace nvhalt {

// Hybrid transactional memory with durable commits.
//
// Every transaction runs up to C attempts on the hardware path — reads check
// the versioned lock of each word inside the hardware transaction, writes
// acquire it speculatively so the acquisition publishes atomically with the
// data at commit — then falls back to a buffered software path with
// commit-time locking and full read-set validation. Both paths persist through
// per-word slots (old value, writer version stamp, new value) followed by a
// fenced per-thread version-number bump; locks are released only after that
// fence, so no thread can read data whose durability is still in flight.

enum class Variant : uint8_t { WeakProg, StrongProg };
enum class SwRetry : uint8_t { UntilCommit, Bounded };

struct TmOptions {
  HeapOptions heap;
  LockOptions locks;
  HtmOptions htm;
  MemOptions mem;
  Variant variant = Variant::WeakProg;
  uint32_t max_hw_attempts = 10;  // hardware attempts before software fallback
  SwRetry sw_retry = SwRetry::UntilCommit;
  uint64_t sw_retry_bound = 1000;  // Bounded only
  bool record_history = false;     // feed the serializability/durability checkers

  // Deliberately unsound configurations, used only to demonstrate why the
  // protocol needs its lock discipline. The first strips the hardware path of
  // all lock reads and acquisitions; the second keeps the read-side checks but
  // never acquires, so values persist without being locked.
  bool no_lock_instrumentation = false;
  bool no_persist_locking = false;
};

// Explicit hardware abort codes (HwAbortKind::User payloads).
inline constexpr uint8_t kAbortLockedByOther = 1;
inline constexpr uint8_t kAbortVoluntary = 2;

// Terminates an attempt. Thrown by read/write/commit after the attempt's side
// effects are rolled back; run_transaction (or a scripted driver) catches it
// and decides whether to retry.
struct TxAborted {
  bool hw_path = false;
  HwAbortKind hw_kind = HwAbortKind::Conflict;  // hardware attempts only
  uint8_t hw_user_code = 0;
  SwAbortReason sw_reason = SwAbortReason::ReadValidation;  // software only
  std::optional<ConflictWitness> witness;  // present on every software abort
};

// Unwinds a transaction body after TxHandle::abort(); surfaces to the
// run_transaction caller as a false return.
struct VoluntaryAbort {};

// Thrown when SwRetry::Bounded runs out of software attempts.
struct RetriesExhausted : std::runtime_error {
  RetriesExhausted() : std::runtime_error("software retry bound exhausted") {}
};

struct RecoveryReport {
  std::vector<WordIdx> reverted;  // words restored to their pre-crash old value
  std::vector<std::pair<ThreadId, Word>> resumed_pver;  // next version per thread
};

class Tm;

// Per-transaction view handed to run_transaction bodies.
class TxHandle {
 public:
  Word read(WordIdx addr);
  void write(WordIdx addr, Word v);
  std::optional<WordIdx> alloc(uint32_t bytes);
  void free_object(WordIdx base);
  [[noreturn]] void abort();  // voluntary: rolls back, never retried
  ThreadId tid() const { return tid_; }
  bool hw_path() const;

 private:
  friend class Tm;
  TxHandle(Tm* tm, ThreadId tid) : tm_(tm), tid_(tid) {}
  Tm* tm_;
  ThreadId tid_;
};

class Tm final : private RawAccessHooks, private TrackedMemory {
 public:
  explicit Tm(const TmOptions& opt);
  // Recovery: rebuilds volatile state from a crash image. Every slot whose
  // writer had not durably committed is reverted to its old value (and the
  // revert is itself persisted, so a second crash cannot resurrect it); the
  // allocator is rebuilt from the caller's census of live objects.
  Tm(const TmOptions& opt, const PersistentImage& image, const std::vector<LiveObject>& census);
  ~Tm() override = default;

  Tm(const Tm&) = delete;
  Tm& operator=(const Tm&) = delete;

  // ---- attempt-level interface (scripted schedules drive this directly) ----
  // All of these may throw TxAborted (attempt rolled back) or propagate a
  // probe's CrashRequested.
  void begin(ThreadId tid);                 // path chosen from the attempt count
  void begin_path(ThreadId tid, bool hw);   // forced path (schedules)
  Word read(ThreadId tid, WordIdx addr);
  void write(ThreadId tid, WordIdx addr, Word v);
  std::optional<WordIdx> alloc(ThreadId tid, uint32_t bytes);
  void free_object(ThreadId tid, WordIdx base);
  void commit(ThreadId tid);
  void cancel(ThreadId tid);                // voluntary abort: ends the transaction
  bool in_attempt(ThreadId tid) const { return ctx(tid).path != Path::None; }
  bool attempt_is_hw(ThreadId tid) const { return ctx(tid).path == Path::Hw; }

  // ---- whole-transaction interface ----
  // Runs body under retry policy. Returns true on commit, false if the body
  // aborted voluntarily.
  template <typename F>
  bool run_transaction(ThreadId tid, F&& body) {
    for (;;) {
      begin(tid);
      TxHandle h(this, tid);
      try {
        body(h);
        commit(tid);
        return true;
      } catch (const TxAborted&) {
        ThreadCtx& c = ctx(tid);
        if (opt_.sw_retry == SwRetry::Bounded &&
            c.hw_attempts_used >= opt_.max_hw_attempts &&
            c.sw_attempts_used >= opt_.sw_retry_bound) {
          c.txn_open = false;
          throw RetriesExhausted();
        }
      } catch (const VoluntaryAbort&) {
        return false;
      }
    }
  }

  // ---- plumbing ----
  PHeap& heap() { return heap_; }
  LockTable& locks() { return locks_; }
  HtmSim& htm() { return htm_; }
  MemMgr& mem() { return mem_; }
  History& history() { return history_; }
  const TmOptions& options() const { return opt_; }
  const RecoveryReport& recovery_report() const { return report_; }
  uint64_t gclock() const { return gclock_.load(std::memory_order_seq_cst); }
  Word volatile_pver(ThreadId tid) const { return ctx(tid).pver; }

  TxStats& stats(ThreadId tid) { return ctx(tid).stats; }
  TxStats total_stats() const;

  void set_probe(Probe* p) { probe_.store(p, std::memory_order_seq_cst); }

  // Tracked-address layout: [0, W) heap words, [W, W+L) lock words,
  // [W+L, W+2L) hardware version words.
  uint64_t lock_taddr(LockIdx i) const { return heap_.word_count() + i; }
  uint64_t hver_taddr(LockIdx i) const { return heap_.word_count() + locks_.size() + i; }

 private:
  enum class Path : uint8_t { None, Hw, Sw };

  struct ReadEnt {
    WordIdx addr;
    LockIdx lock;
    uint64_t enc_sver;  // even = unlocked at encounter
    uint64_t enc_hver;
  };
  struct WriteEnt {
    WordIdx addr;
    LockIdx lock;
    uint64_t enc_sver;
    Word val;
  };
  struct HwEnt {
    WordIdx addr;
    Word old_v;  // pre-transaction value, captured at first write
  };

  struct alignas(kLineBytes) ThreadCtx {
    ThreadId tid = 0;
    Path path = Path::None;
    bool txn_open = false;  // spans attempts until commit/cancel
    uint32_t hw_attempts_used = 0;
    uint64_t sw_attempts_used = 0;
    uint64_t rclock = 0;  // StrongProg: clock snapshot at attempt begin
    Word pver = 1;        // volatile persistent-version counter
    uint64_t attempt_id = 0;

    std::vector<ReadEnt> rset;
    std::unordered_map<WordIdx, uint32_t> rmap;
    std::vector<WriteEnt> wset;
    std::unordered_map<WordIdx, uint32_t> wmap;

    std::vector<HwEnt> hwset;
    std::unordered_set<WordIdx> hwlogged;
    std::vector<LockIdx> hlocks;  // speculative acquisitions, in order

    std::vector<LockIdx> acquired;            // commit-time locks held
    std::unordered_set<LockIdx> acquired_set;

    TxStats stats;
  };

  ThreadCtx& ctx(ThreadId tid) {
    NVHALT_CHECK(tid >= 1 && tid < ctxs_.size());
    return ctxs_[tid];
  }
  const ThreadCtx& ctx(ThreadId tid) const {
    NVHALT_CHECK(tid >= 1 && tid < ctxs_.size());
    return ctxs_[tid];
  }

  void probe_at(PipelinePoint p, ThreadId tid) {
    Probe* pr = probe_.load(std::memory_order_seq_cst);
    if (pr) pr->at(p, tid);
  }

  // RawAccessHooks: heap word traffic outside hardware transactions feeds the
  // simulator's strong-isolation conflict detection.
  void raw_word_access(ThreadId tid, WordIdx addr, bool is_write) override {
    htm_.raw_access(tid, addr, is_write);
  }
  void explicit_flush(ThreadId tid) override { htm_.on_explicit_flush(tid); }

  // TrackedMemory: the simulator's view of tracked addresses.
  uint64_t tracked_load(uint64_t taddr) override;
  void tracked_publish(uint64_t taddr, uint64_t v) override;

  // Raw lock operations paired with conflict notification. Mutations take the
  // simulator's commit mutex shared so a concurrent hardware publish cannot
  // interleave into {operation, doom}.
  LockSnapshot lock_snapshot_raw(ThreadId tid, LockIdx lk);
  uint64_t lock_packed_raw(ThreadId tid, LockIdx lk);
  uint64_t lock_hver_raw(ThreadId tid, LockIdx lk);
  bool acquire_lock_raw(ThreadId tid, LockIdx lk, uint64_t enc_sver);
  void release_lock_raw(ThreadId tid, LockIdx lk);

  void begin_attempt(ThreadCtx& c, bool hw);

  Word sw_read(ThreadCtx& c, WordIdx addr);
  void sw_write(ThreadCtx& c, WordIdx addr, Word v);
  void sw_commit(ThreadCtx& c);
  void validate_sver(ThreadCtx& c);      // full read-set validation
  void validate_hver_only(ThreadCtx& c); // StrongProg clock-CAS winners

  Word hw_read(ThreadCtx& c, WordIdx addr);
  void hw_write(ThreadCtx& c, WordIdx addr, Word v);
  void hw_commit(ThreadCtx& c);
  void htm_acquire(ThreadCtx& c, LockIdx lk);

  void persist_write_sets(ThreadCtx& c, bool hw);  // slots, fences, version bump
  void release_all(ThreadCtx& c);
  void finish_commit(ThreadCtx& c, bool hw, bool readonly);
  [[noreturn]] void abort_sw(ThreadCtx& c, SwAbortReason r, const ConflictWitness& w,
                             bool release_held);
  [[noreturn]] void on_hw_abort(ThreadCtx& c, const HwAbortException& e);

  void run_recovery(const std::vector<LiveObject>& census);

  static TmOptions normalize(TmOptions opt) {
    NVHALT_CHECK(opt.heap.thread_slots >= 1 && opt.heap.thread_slots <= 64);
    opt.htm.max_threads = opt.heap.thread_slots;
    return opt;
  }

  TmOptions opt_;
  PHeap heap_;
  LockTable locks_;
  HtmSim htm_;
  MemMgr mem_;
  History history_;
  RecoveryReport report_;
  std::atomic<uint64_t> gclock_{0};
  std::atomic<Probe*> probe_{nullptr};
  std::vector<ThreadCtx> ctxs_;
};

inline Word TxHandle::read(WordIdx addr) { return tm_->read(tid_, addr); }
inline void TxHandle::write(WordIdx addr, Word v) { tm_->write(tid_, addr, v); }
inline std::optional<WordIdx> TxHandle::alloc(uint32_t bytes) { return tm_->alloc(tid_, bytes); }
inline void TxHandle::free_object(WordIdx base) { tm_->free_object(tid_, base); }
inline bool TxHandle::hw_path() const { return tm_->attempt_is_hw(tid_); }
inline void TxHandle::abort() {
  tm_->cancel(tid_);
  throw VoluntaryAbort{};
}

}  // namespace nvhalt
