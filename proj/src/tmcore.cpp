#include "nvhalt/tmcore.hpp"

#include <algorithm>

namespace nvhalt {

Tm::Tm(const TmOptions& opt)
    : opt_(normalize(opt)),
      heap_(opt_.heap),
      locks_(opt_.locks, opt_.heap.word_count),
      htm_(opt_.htm, opt_.heap.word_count + 2 * locks_.size(), this),
      mem_(&heap_, opt_.mem) {
  ctxs_.resize(opt_.heap.thread_slots + 1);
  for (ThreadId t = 1; t < ThreadId(ctxs_.size()); t++) ctxs_[t].tid = t;
  heap_.set_hooks(this);
}

Tm::Tm(const TmOptions& opt, const PersistentImage& image, const std::vector<LiveObject>& census)
    : opt_(normalize(opt)),
      heap_(opt_.heap, image),
      locks_(opt_.locks, opt_.heap.word_count),
      htm_(opt_.htm, opt_.heap.word_count + 2 * locks_.size(), this),
      mem_(&heap_, opt_.mem) {
  ctxs_.resize(opt_.heap.thread_slots + 1);
  for (ThreadId t = 1; t < ThreadId(ctxs_.size()); t++) ctxs_[t].tid = t;
  run_recovery(census);
  heap_.set_hooks(this);  // hooks stay off while recovery rewrites slots
}

// ---------------------------------------------------------------------------
// Tracked-memory glue

uint64_t Tm::tracked_load(uint64_t taddr) {
  uint64_t wc = heap_.word_count();
  if (taddr < wc) return heap_.peek_word(WordIdx(taddr));
  taddr -= wc;
  if (taddr < locks_.size()) return locks_.packed(LockIdx(taddr));
  taddr -= locks_.size();
  NVHALT_CHECK(taddr < locks_.size());
  return locks_.hver(LockIdx(taddr));
}

void Tm::tracked_publish(uint64_t taddr, uint64_t v) {
  uint64_t wc = heap_.word_count();
  if (taddr < wc) {
    heap_.publish_word(WordIdx(taddr), v);
    return;
  }
  taddr -= wc;
  if (taddr < locks_.size()) {
    locks_.raw_store_packed(LockIdx(taddr), v);
    return;
  }
  taddr -= locks_.size();
  NVHALT_CHECK(taddr < locks_.size());
  locks_.raw_store_hver(LockIdx(taddr), v);
}

LockSnapshot Tm::lock_snapshot_raw(ThreadId tid, LockIdx lk) {
  htm_.raw_access(tid, lock_taddr(lk), /*is_write=*/false);
  if (opt_.variant == Variant::StrongProg) htm_.raw_access(tid, hver_taddr(lk), false);
  return locks_.snapshot(lk);
}

uint64_t Tm::lock_packed_raw(ThreadId tid, LockIdx lk) {
  htm_.raw_access(tid, lock_taddr(lk), false);
  return locks_.packed(lk);
}

uint64_t Tm::lock_hver_raw(ThreadId tid, LockIdx lk) {
  htm_.raw_access(tid, hver_taddr(lk), false);
  return locks_.hver(lk);
}

bool Tm::acquire_lock_raw(ThreadId tid, LockIdx lk, uint64_t enc_sver) {
  // Shared side of the publish exclusion: the CAS and the conflict
  // notification form one unit no hardware commit can split.
  std::shared_lock<std::shared_mutex> g(htm_.commit_mutex());
  bool ok = locks_.try_acquire(lk, enc_sver, tid);
  htm_.raw_access(tid, lock_taddr(lk), /*is_write=*/ok);
  return ok;
}

void Tm::release_lock_raw(ThreadId tid, LockIdx lk) {
  std::shared_lock<std::shared_mutex> g(htm_.commit_mutex());
  locks_.release(lk, tid);
  htm_.raw_access(tid, lock_taddr(lk), /*is_write=*/true);
}

// ---------------------------------------------------------------------------
// Attempt lifecycle

void Tm::begin(ThreadId tid) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path == Path::None);  // one live transaction per thread
  if (!c.txn_open) {
    c.txn_open = true;
    c.hw_attempts_used = 0;
    c.sw_attempts_used = 0;
  }
  begin_attempt(c, c.hw_attempts_used < opt_.max_hw_attempts);
}

void Tm::begin_path(ThreadId tid, bool hw) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path == Path::None);
  if (!c.txn_open) {
    c.txn_open = true;
    c.hw_attempts_used = 0;
    c.sw_attempts_used = 0;
  }
  begin_attempt(c, hw);
}

void Tm::begin_attempt(ThreadCtx& c, bool hw) {
  mem_.epoch_enter(c.tid);
  c.rset.clear();
  c.rmap.clear();
  c.wset.clear();
  c.wmap.clear();
  c.hwset.clear();
  c.hwlogged.clear();
  c.hlocks.clear();
  c.acquired.clear();
  c.acquired_set.clear();
  if (opt_.variant == Variant::StrongProg) c.rclock = gclock_.load(std::memory_order_seq_cst);
  if (hw) {
    c.hw_attempts_used++;
    c.path = Path::Hw;
    htm_.xbegin(c.tid);
  } else {
    c.sw_attempts_used++;
    c.path = Path::Sw;
  }
  if (opt_.record_history) c.attempt_id = history_.begin_attempt(c.tid, hw);
  probe_at(PipelinePoint::TxBeginDone, c.tid);
}

Word Tm::read(ThreadId tid, WordIdx addr) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path != Path::None);
  NVHALT_CHECK(addr < heap_.word_count());
  Word v = (c.path == Path::Hw) ? hw_read(c, addr) : sw_read(c, addr);
  if (v == kPoisonWord && mem_.debug_poison()) c.stats.poison_reads++;
  return v;
}

void Tm::write(ThreadId tid, WordIdx addr, Word v) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path != Path::None);
  NVHALT_CHECK(addr < heap_.word_count());
  if (c.path == Path::Hw)
    hw_write(c, addr, v);
  else
    sw_write(c, addr, v);
}

std::optional<WordIdx> Tm::alloc(ThreadId tid, uint32_t bytes) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path != Path::None);
  return mem_.tx_alloc(tid, bytes);
}

void Tm::free_object(ThreadId tid, WordIdx base) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path != Path::None);
  mem_.tx_free(tid, base);
}

void Tm::commit(ThreadId tid) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path != Path::None);
  if (c.path == Path::Hw)
    hw_commit(c);
  else
    sw_commit(c);
}

void Tm::cancel(ThreadId tid) {
  ThreadCtx& c = ctx(tid);
  NVHALT_CHECK(c.path != Path::None);
  if (c.path == Path::Hw) {
    try {
      htm_.xabort(tid, kAbortVoluntary);
    } catch (const HwAbortException&) {
      // expected unwind; speculative state already discarded
    }
  }
  c.stats.voluntary_aborts++;
  if (opt_.record_history) history_.aborted(c.attempt_id, tid);
  mem_.on_abort(tid);
  mem_.epoch_exit(tid);
  c.path = Path::None;
  c.txn_open = false;
  probe_at(PipelinePoint::AbortDone, tid);
}

// ---------------------------------------------------------------------------
// Software path

Word Tm::sw_read(ThreadCtx& c, WordIdx addr) {
  auto wp = c.wmap.find(addr);
  if (wp != c.wmap.end()) {
    Word v = c.wset[wp->second].val;
    if (opt_.record_history) history_.read(c.attempt_id, c.tid, addr, v);
    probe_at(PipelinePoint::ReadDone, c.tid);
    return v;
  }
  LockIdx lk = locks_.lock_of(addr);
  if (c.rmap.find(addr) == c.rmap.end()) {
    LockSnapshot s = lock_snapshot_raw(c.tid, lk);
    c.rmap.emplace(addr, uint32_t(c.rset.size()));
    c.rset.push_back(ReadEnt{addr, lk, s.sver(), s.hver});
  }
  Word v = heap_.load(c.tid, addr);
  // The value was read before validation; validation passing proves every
  // encounter version (this one included) is still current, so the value is
  // consistent with all earlier reads.
  validate_sver(c);
  if (opt_.record_history) history_.read(c.attempt_id, c.tid, addr, v);
  probe_at(PipelinePoint::ReadDone, c.tid);
  return v;
}

void Tm::sw_write(ThreadCtx& c, WordIdx addr, Word v) {
  auto wp = c.wmap.find(addr);
  if (wp != c.wmap.end()) {
    c.wset[wp->second].val = v;  // keep the first encounter version
  } else {
    LockIdx lk = locks_.lock_of(addr);
    uint64_t enc;
    auto rp = c.rmap.find(addr);
    if (rp != c.rmap.end()) {
      enc = c.rset[rp->second].enc_sver;  // one coherent encounter per address
    } else {
      enc = packed_ver(lock_packed_raw(c.tid, lk));  // odd = deferred conflict
    }
    c.wmap.emplace(addr, uint32_t(c.wset.size()));
    c.wset.push_back(WriteEnt{addr, lk, enc, v});
  }
  if (opt_.record_history) history_.write(c.attempt_id, c.tid, addr, v);
  probe_at(PipelinePoint::WriteBuffered, c.tid);
}

void Tm::validate_sver(ThreadCtx& c) {
  for (const ReadEnt& e : c.rset) {
    uint64_t p = lock_packed_raw(c.tid, e.lock);
    bool ok = p == pack_tid_ver(0, e.enc_sver) ||
              p == pack_tid_ver(c.tid, e.enc_sver + 1);  // self-held at commit
    if (!ok) {
      abort_sw(c, SwAbortReason::ReadValidation,
               ConflictWitness{e.lock, p, locks_.hver(e.lock), e.enc_sver},
               /*release_held=*/true);
    }
  }
}

void Tm::validate_hver_only(ThreadCtx& c) {
  for (const ReadEnt& e : c.rset) {
    uint64_t h = lock_hver_raw(c.tid, e.lock);
    if (h != e.enc_hver) {
      abort_sw(c, SwAbortReason::HtxConflict,
               ConflictWitness{e.lock, locks_.packed(e.lock), h, e.enc_sver},
               /*release_held=*/true);
    }
  }
}

void Tm::sw_commit(ThreadCtx& c) {
  probe_at(PipelinePoint::CommitEntered, c.tid);

  if (c.wset.empty()) {
    // Read-only: every read already validated the full set, so the last read
    // is the serialization point. No locks, no persistence.
    finish_commit(c, /*hw=*/false, /*readonly=*/true);
    return;
  }

  if (opt_.variant == Variant::StrongProg) {
    std::stable_sort(c.wset.begin(), c.wset.end(),
                     [](const WriteEnt& a, const WriteEnt& b) { return a.lock < b.lock; });
  }

  // (1) Acquire every write lock at its encounter version, first failure
  // releases everything and aborts.
  for (const WriteEnt& e : c.wset) {
    if (c.acquired_set.count(e.lock)) {
      // Lock already held for an earlier entry: this entry's encounter must
      // agree or some commit slipped between the two samples.
      if (locks_.packed(e.lock) != pack_tid_ver(c.tid, e.enc_sver + 1)) {
        abort_sw(c, SwAbortReason::WriteLockBusy,
                 ConflictWitness{e.lock, locks_.packed(e.lock), locks_.hver(e.lock), e.enc_sver},
                 true);
      }
      continue;
    }
    bool ok = (e.enc_sver & 1) == 0 && acquire_lock_raw(c.tid, e.lock, e.enc_sver);
    if (!ok) {
      abort_sw(c, SwAbortReason::WriteLockBusy,
               ConflictWitness{e.lock, locks_.packed(e.lock), locks_.hver(e.lock), e.enc_sver},
               true);
    }
    c.acquired.push_back(e.lock);
    c.acquired_set.insert(e.lock);
    probe_at(PipelinePoint::LockAcquired, c.tid);
  }

  // (2) Validate. StrongProg: the clock CAS winner proves no software writer
  // committed since its snapshot and only needs to rule out hardware
  // interference via the hardware version counters.
  if (opt_.variant == Variant::StrongProg) {
    uint64_t expect = c.rclock;
    bool won = gclock_.compare_exchange_strong(expect, c.rclock + 1, std::memory_order_seq_cst,
                                               std::memory_order_seq_cst);
    if (!won) gclock_.fetch_add(1, std::memory_order_seq_cst);
    probe_at(PipelinePoint::ClockCasDone, c.tid);
    if (won) {
      c.stats.validations_skipped++;
      validate_hver_only(c);
    } else {
      c.stats.validations_full++;
      validate_sver(c);
    }
  } else {
    c.stats.validations_full++;
    validate_sver(c);
  }
  probe_at(PipelinePoint::Validated, c.tid);

  if (opt_.record_history) {
    std::vector<std::pair<WordIdx, Word>> ws;
    ws.reserve(c.wset.size());
    for (const WriteEnt& e : c.wset) ws.emplace_back(e.addr, e.val);
    history_.commit_started(c.attempt_id, c.tid, std::move(ws));
  }

  persist_write_sets(c, /*hw=*/false);
  release_all(c);
  finish_commit(c, /*hw=*/false, /*readonly=*/false);
}

// ---------------------------------------------------------------------------
// Hardware path

Word Tm::hw_read(ThreadCtx& c, WordIdx addr) {
  try {
    if (!opt_.no_lock_instrumentation) {
      LockIdx lk = locks_.lock_of(addr);
      uint64_t p = htm_.tx_load(c.tid, lock_taddr(lk));
      if ((packed_ver(p) & 1) != 0 && packed_tid(p) != c.tid)
        htm_.xabort(c.tid, kAbortLockedByOther);
    }
    Word v = htm_.tx_load(c.tid, addr);
    if (opt_.record_history) history_.read(c.attempt_id, c.tid, addr, v);
    probe_at(PipelinePoint::ReadDone, c.tid);
    return v;
  } catch (const HwAbortException& e) {
    on_hw_abort(c, e);
  }
}

void Tm::htm_acquire(ThreadCtx& c, LockIdx lk) {
  uint64_t p = htm_.tx_load(c.tid, lock_taddr(lk));
  if ((packed_ver(p) & 1) != 0) {
    if (packed_tid(p) != c.tid) htm_.xabort(c.tid, kAbortLockedByOther);
    return;  // already held by this transaction
  }
  // Speculative acquisition: becomes visible atomically with the data when
  // the hardware transaction commits. Lock word first, then the hardware
  // counter, so no consistent snapshot pairs the new counter with the old
  // (unlocked) lock word.
  htm_.tx_store(c.tid, lock_taddr(lk), pack_tid_ver(c.tid, packed_ver(p) + 1));
  if (opt_.variant == Variant::StrongProg) {
    uint64_t h = htm_.tx_load(c.tid, hver_taddr(lk));
    htm_.tx_store(c.tid, hver_taddr(lk), h + 1);
  }
  c.hlocks.push_back(lk);
}

void Tm::hw_write(ThreadCtx& c, WordIdx addr, Word v) {
  try {
    if (!opt_.no_lock_instrumentation) {
      LockIdx lk = locks_.lock_of(addr);
      if (opt_.no_persist_locking) {
        // Unsound mode: check but never acquire.
        uint64_t p = htm_.tx_load(c.tid, lock_taddr(lk));
        if ((packed_ver(p) & 1) != 0 && packed_tid(p) != c.tid)
          htm_.xabort(c.tid, kAbortLockedByOther);
      } else {
        htm_acquire(c, lk);
      }
    }
    if (!c.hwlogged.count(addr)) {
      Word old = htm_.tx_load(c.tid, addr);  // pre-transaction value
      c.hwlogged.insert(addr);
      c.hwset.push_back(HwEnt{addr, old});
    }
    htm_.tx_store(c.tid, addr, v);
    if (opt_.record_history) history_.write(c.attempt_id, c.tid, addr, v);
    probe_at(PipelinePoint::WriteBuffered, c.tid);
  } catch (const HwAbortException& e) {
    on_hw_abort(c, e);
  }
}

void Tm::hw_commit(ThreadCtx& c) {
  probe_at(PipelinePoint::CommitEntered, c.tid);
  bool readonly = c.hwset.empty();

  if (opt_.record_history && !readonly) {
    std::vector<std::pair<WordIdx, Word>> ws;
    ws.reserve(c.hwset.size());
    for (const HwEnt& e : c.hwset) {
      uint64_t v = 0;
      NVHALT_CHECK(htm_.buffered(c.tid, e.addr, &v));
      ws.emplace_back(e.addr, v);
    }
    history_.commit_started(c.attempt_id, c.tid, std::move(ws));
  }

  HwResult r = htm_.xend(c.tid);
  if (!r.committed) {
    on_hw_abort(c, HwAbortException{r.kind, r.user_code});
  }

  if (readonly) {
    // Nothing written: no persistence, no lock traffic.
    finish_commit(c, /*hw=*/true, /*readonly=*/true);
    return;
  }

  // Values and lock acquisitions are now visible; the locks stay held (odd,
  // owned) until persistence completes.
  probe_at(PipelinePoint::HwPublished, c.tid);

  persist_write_sets(c, /*hw=*/true);

  for (LockIdx lk : c.hlocks) {
    release_lock_raw(c.tid, lk);
    probe_at(PipelinePoint::LockReleased, c.tid);
  }
  finish_commit(c, /*hw=*/true, /*readonly=*/false);
}

// ---------------------------------------------------------------------------
// Shared commit tail

void Tm::persist_write_sets(ThreadCtx& c, bool hw) {
  Word stamp = pack_tid_ver(c.tid, c.pver);
  if (hw) {
    for (const HwEnt& e : c.hwset) {
      Word newv = heap_.load(c.tid, e.addr);  // published value
      heap_.write_slot(c.tid, e.addr, e.old_v, stamp, newv);
      probe_at(PipelinePoint::SlotWritten, c.tid);
      heap_.flush_line(c.tid, heap_.vmem_addr_to_pmem(e.addr));
      probe_at(PipelinePoint::SlotFlushed, c.tid);
    }
  } else {
    for (const WriteEnt& e : c.wset) {
      Word old = heap_.load(c.tid, e.addr);  // pre-commit value, lock held
      heap_.write_slot(c.tid, e.addr, old, stamp, e.val);
      probe_at(PipelinePoint::SlotWritten, c.tid);
      heap_.flush_line(c.tid, heap_.vmem_addr_to_pmem(e.addr));
      probe_at(PipelinePoint::SlotFlushed, c.tid);
      heap_.store(c.tid, e.addr, e.val);
      probe_at(PipelinePoint::WritebackDone, c.tid);
    }
  }
  heap_.fence(c.tid);
  probe_at(PipelinePoint::DataFenced, c.tid);

  c.pver += 1;
  heap_.store_pver(c.tid, c.pver);
  probe_at(PipelinePoint::PVerWritten, c.tid);
  heap_.flush_line(c.tid, heap_.pver_line(c.tid));
  probe_at(PipelinePoint::PVerFlushed, c.tid);
  heap_.fence(c.tid);
  probe_at(PipelinePoint::PVerFenced, c.tid);
}

void Tm::release_all(ThreadCtx& c) {
  for (auto it = c.acquired.rbegin(); it != c.acquired.rend(); ++it) {
    release_lock_raw(c.tid, *it);
    probe_at(PipelinePoint::LockReleased, c.tid);
  }
  c.acquired.clear();
  c.acquired_set.clear();
}

void Tm::finish_commit(ThreadCtx& c, bool hw, bool readonly) {
  if (hw) {
    c.stats.commits_hw++;
    if (readonly) c.stats.commits_hw_readonly++;
    c.stats.record_sets(0, c.hwset.size(), false);
  } else {
    c.stats.commits_sw++;
    if (readonly) c.stats.commits_sw_readonly++;
    c.stats.record_sets(c.rset.size(), c.wset.size(), false);
  }
  c.stats.record_finish(c.hw_attempts_used, hw, opt_.max_hw_attempts);
  if (opt_.record_history) history_.committed(c.attempt_id, c.tid);
  mem_.on_commit(c.tid);
  mem_.epoch_exit(c.tid);
  c.path = Path::None;
  c.txn_open = false;
  probe_at(PipelinePoint::CommitDone, c.tid);
}

void Tm::abort_sw(ThreadCtx& c, SwAbortReason r, const ConflictWitness& w, bool release_held) {
  if (release_held) release_all(c);
  c.stats.sw_aborts++;
  c.stats.sw_aborts_with_witness++;
  c.stats.sw_abort_reason[size_t(r)]++;
  c.stats.record_sets(c.rset.size(), c.wset.size(), true);
  if (opt_.record_history) history_.aborted(c.attempt_id, c.tid);
  mem_.on_abort(c.tid);
  mem_.epoch_exit(c.tid);
  c.path = Path::None;
  probe_at(PipelinePoint::AbortDone, c.tid);
  throw TxAborted{false, HwAbortKind::Conflict, 0, r, w};
}

void Tm::on_hw_abort(ThreadCtx& c, const HwAbortException& e) {
  c.stats.hw_aborts[size_t(e.kind)]++;
  if (opt_.record_history) history_.aborted(c.attempt_id, c.tid);
  mem_.on_abort(c.tid);
  mem_.epoch_exit(c.tid);
  c.path = Path::None;
  probe_at(PipelinePoint::AbortDone, c.tid);
  throw TxAborted{true, e.kind, e.user_code, SwAbortReason::ReadValidation, std::nullopt};
}

// ---------------------------------------------------------------------------
// Recovery

void Tm::run_recovery(const std::vector<LiveObject>& census) {
  for (WordIdx addr = 0; addr < WordIdx(heap_.word_count()); addr++) {
    PersistentSlot s = heap_.image_slot(addr);
    ThreadId wt = packed_tid(s.pver);
    Word seq = packed_ver(s.pver);
    bool revert;
    if (wt == 0 || wt > heap_.thread_slots()) {
      revert = true;  // unattributed slot: pre-state is the only safe value
    } else {
      // The writer durably committed iff it persisted a version number
      // strictly greater than the stamp it put in the slot.
      revert = seq >= heap_.persisted_pver(wt);
    }
    heap_.set_recovered_word(addr, revert ? s.old_v : s.new_v);
    if (revert && s.pver != 0) {
      report_.reverted.push_back(addr);
      // Neutralize the slot in persistent memory too: the stamp's sequence
      // number will eventually fall below its thread's advancing persisted
      // counter, and a later crash would otherwise resurrect the dead value.
      heap_.write_slot(0, addr, s.old_v, 0, s.old_v);
      heap_.flush_line(0, heap_.vmem_addr_to_pmem(addr));
    }
  }
  heap_.fence(0);

  for (ThreadId t = 1; t <= ThreadId(heap_.thread_slots()); t++) {
    ctxs_[t].pver = heap_.persisted_pver(t) + 1;  // sequence numbers stay unique
    report_.resumed_pver.emplace_back(t, ctxs_[t].pver);
  }

  mem_.rebuild_from_iterator(census);
}

TxStats Tm::total_stats() const {
  TxStats total;
  for (const ThreadCtx& c : ctxs_) total.merge(c.stats);
  return total;
}

}  // namespace nvhalt
