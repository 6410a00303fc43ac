#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nvhalt/common.hpp"

namespace nvhalt {

// Simulated non-volatile heap: a volatile word array (the DRAM view the fast
// paths touch) in front of a line-structured persistent layout with explicit
// cache-line states. Durability exists only for content that reached the
// persistent image via flush+fence, a background write-back, or crash()
// inclusion of a pending line.
//
// Persistent layout, in 64-byte lines:
//   line 0                      header {magic, format version, word_count, thread_slots}
//   lines [1, 1+T)              per-thread persistent version counters (T = thread_slots)
//   lines [1+T, 1+T+word_count) one slot per heap word: {new, old, pver, pad}

struct PersistentSlot {
  Word new_v = 0;
  Word old_v = 0;
  Word pver = 0;  // pack_tid_ver(owner tid, sequence)
  bool operator==(const PersistentSlot&) const = default;
};

struct PersistentImage {
  static constexpr char kMagic[9] = "NVHALT01";
  static constexpr uint32_t kFormatVersion = 1;

  uint64_t word_count = 0;
  uint32_t thread_slots = 0;
  std::vector<Word> pvers;             // thread_slots entries, tid t at [t-1]
  std::vector<PersistentSlot> slots;   // word_count entries

  bool operator==(const PersistentImage&) const = default;

  Word pver_of(ThreadId tid) const {
    NVHALT_CHECK(tid >= 1 && tid <= thread_slots);
    return pvers[tid - 1];
  }

  void save(const std::string& path) const;
  static PersistentImage load(const std::string& path);

  // Human-readable field-level differences, for test diagnostics.
  std::vector<std::string> diff(const PersistentImage& other) const;
};

enum class LineState : uint8_t { Clean = 0, Dirty = 1, FlushPending = 2 };

struct BgFlushPolicy {
  enum class Mode { Off, Seeded, Adversarial };
  Mode mode = Mode::Off;
  double p = 0.0;      // Seeded: per-store write-back probability
  uint64_t seed = 0;   // Seeded: per-thread deterministic draws
  std::function<bool(uint32_t line)> adversary;  // Adversarial: true → write back now

  static BgFlushPolicy off() { return {}; }
  static BgFlushPolicy seeded(double p, uint64_t seed) {
    return BgFlushPolicy{Mode::Seeded, p, seed, nullptr};
  }
  static BgFlushPolicy adversarial(std::function<bool(uint32_t)> cb) {
    return BgFlushPolicy{Mode::Adversarial, 0.0, 0, std::move(cb)};
  }
};

struct CrashPolicy {
  enum class Kind { Seeded, IncludeAllPending, ExcludeAllPending };
  Kind kind = Kind::Seeded;
  uint64_t seed = 0;

  static CrashPolicy seeded(uint64_t s) { return {Kind::Seeded, s}; }
  static CrashPolicy include_all() { return {Kind::IncludeAllPending, 0}; }
  static CrashPolicy exclude_all() { return {Kind::ExcludeAllPending, 0}; }
};

struct HeapOptions {
  uint64_t word_count = 1024;
  uint32_t thread_slots = 8;
  bool eadr_mode = false;
  BgFlushPolicy bg{};
};

// Strong-isolation instrumentation: raw (non-transactional) heap accesses and
// explicit flushes are reported so the HTM simulator can doom conflicting
// hardware transactions. tid 0 identifies internal/recovery accesses.
struct RawAccessHooks {
  virtual ~RawAccessHooks() = default;
  virtual void raw_word_access(ThreadId tid, WordIdx addr, bool is_write) = 0;
  virtual void explicit_flush(ThreadId tid) = 0;
};

class PHeap {
 public:
  explicit PHeap(const HeapOptions& opt);
  PHeap(const HeapOptions& opt, const PersistentImage& image);

  PHeap(const PHeap&) = delete;
  PHeap& operator=(const PHeap&) = delete;

  uint64_t word_count() const { return opt_.word_count; }
  uint32_t thread_slots() const { return opt_.thread_slots; }
  bool eadr() const { return opt_.eadr_mode; }

  // ---- line geometry ----
  uint32_t header_lines() const { return 1; }
  uint32_t vmem_addr_to_pmem(WordIdx addr) const {
    NVHALT_CHECK(addr < opt_.word_count);
    return header_lines() + opt_.thread_slots + addr;
  }
  uint32_t pver_line(ThreadId tid) const {
    NVHALT_CHECK(tid >= 1 && tid <= opt_.thread_slots);
    return header_lines() + (tid - 1);
  }
  uint32_t line_count() const {
    return header_lines() + opt_.thread_slots + uint32_t(opt_.word_count);
  }

  // ---- volatile accesses (word-atomic) ----
  Word load(ThreadId tid, WordIdx addr);
  void store(ThreadId tid, WordIdx addr, Word v);

  // HTM commit publication: volatile word only. The persistent slot is touched
  // exclusively by write_slot afterwards, so a background write-back can never
  // persist a speculative value under a stale version stamp.
  void publish_word(WordIdx addr, Word v);

  // ---- persistence-path writes (caller must hold the covering versioned lock;
  //      asserted by the TM layer, which is the only caller) ----
  void write_slot(ThreadId tid, WordIdx addr, Word old_v, Word pver, Word new_v);
  void store_pver(ThreadId tid, Word value);

  // ---- flush / fence ----
  void flush_line(ThreadId tid, uint32_t line);
  void fence(ThreadId tid);

  // Sweep every non-clean line through the background policy once.
  void background_flush_tick();

  // ---- crash ----
  // Terminal: discards the cache, returns the surviving image. Every Dirty or
  // FlushPending line is independently included or excluded per the policy; in
  // eadr mode the full cache content survives.
  PersistentImage crash(const CrashPolicy& policy);
  bool crashed() const { return crashed_; }

  // Copy of the current persistent image (what a crash excluding all pending
  // lines would return), without killing the heap. Test/diagnostic use.
  PersistentImage image_snapshot() const;

  // ---- recovery support ----
  // Rebuild one volatile word after crash recovery decided its value.
  void set_recovered_word(WordIdx addr, Word v);
  Word persisted_pver(ThreadId tid) const;
  Word cached_pver(ThreadId tid) const;

  // ---- inspection (tests / verify; uninstrumented) ----
  PersistentSlot cache_slot(WordIdx addr) const;
  PersistentSlot image_slot(WordIdx addr) const;
  LineState line_state(uint32_t line) const;
  Word peek_word(WordIdx addr) const;  // volatile view, no hooks

  void set_hooks(RawAccessHooks* hooks) { hooks_ = hooks; }

 private:
  struct SlotCell {
    std::atomic<Word> new_v{0};
    std::atomic<Word> old_v{0};
    std::atomic<Word> pver{0};
  };

  void init_storage();
  void mark_dirty(uint32_t line) { line_state_[line].store(uint8_t(LineState::Dirty), std::memory_order_relaxed); }
  void writeback_line(uint32_t line);            // copy cache → image, state unchanged
  void maybe_background_flush(ThreadId tid, uint32_t line);
  void check_alive() const { NVHALT_CHECK(!crashed_); }

  HeapOptions opt_;
  RawAccessHooks* hooks_ = nullptr;
  bool crashed_ = false;

  std::vector<std::atomic<Word>> vol_;         // volatile user words
  std::vector<SlotCell> cache_slots_;          // cached slot lines
  std::vector<std::atomic<Word>> cache_pver_;  // cached per-thread counters
  PersistentImage image_;                      // the non-volatile medium
  std::vector<std::atomic<uint8_t>> line_state_;
  std::vector<std::vector<uint32_t>> pending_;  // per tid (0..thread_slots): lines awaiting fence
  std::vector<Rng> bg_rng_;                     // per tid, Seeded background draws
};

}  // namespace nvhalt
