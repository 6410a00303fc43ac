#include "nvhalt/htmsim.hpp"

#include <mutex>

namespace nvhalt {

HtmSim::HtmSim(const HtmOptions& opt, uint64_t tracked_size, TrackedMemory* mem)
    : opt_(opt), mem_(mem) {
  NVHALT_CHECK(opt_.max_threads >= 1 && opt_.max_threads <= 64);
  NVHALT_CHECK(mem_ != nullptr);
  txns_ = std::vector<Txn>(opt_.max_threads + 1);
  for (uint32_t t = 0; t <= opt_.max_threads; t++)
    txns_[t].rng = Rng(mix64(opt_.seed ^ (0xd1342543de82ef95ull * (t + 1))));
  table_ = std::vector<Entry>(tracked_size);
}

void HtmSim::xbegin(ThreadId tid) {
  Txn& t = self(tid);
  NVHALT_CHECK(t.status.load(std::memory_order_acquire) == kInactive);  // no nesting
  t.rlist.clear();
  t.rset.clear();
  t.wbuf.clear();
  t.wpos.clear();
  t.status.store(kActive, std::memory_order_seq_cst);
}

bool HtmSim::in_txn(ThreadId tid) const {
  if (tid == 0 || tid > opt_.max_threads) return false;
  uint32_t s = self(tid).status.load(std::memory_order_acquire);
  return s != kInactive;
}

void HtmSim::check_doomed(ThreadId tid, Txn& t) {
  uint32_t s = t.status.load(std::memory_order_acquire);
  if (s >= kDoomedBase) surface(tid, t, HwAbortKind(s - kDoomedBase), 0);
}

void HtmSim::surface(ThreadId tid, Txn& t, HwAbortKind kind, uint8_t user_code) {
  cleanup(tid, t);
  throw HwAbortException{kind, user_code};
}

void HtmSim::cleanup(ThreadId tid, Txn& t) {
  for (uint64_t taddr : t.rlist)
    table_[taddr].readers.fetch_and(~bit(tid), std::memory_order_seq_cst);
  for (const WriteEnt& w : t.wbuf) {
    uint16_t expect = tid;
    table_[w.taddr].writer.compare_exchange_strong(expect, 0, std::memory_order_seq_cst,
                                                   std::memory_order_seq_cst);
  }
  t.rlist.clear();
  t.rset.clear();
  t.wbuf.clear();
  t.wpos.clear();
  t.status.store(kInactive, std::memory_order_seq_cst);
}

uint64_t HtmSim::tx_load(ThreadId tid, uint64_t taddr) {
  Txn& t = self(tid);
  NVHALT_CHECK(t.status.load(std::memory_order_acquire) != kInactive);
  NVHALT_CHECK(taddr < table_.size());
  check_doomed(tid, t);
  if (t.rng.chance(opt_.spurious_p)) surface(tid, t, HwAbortKind::Spurious, 0);

  // Reads of addresses in the own write set are served from the buffer and
  // need no read tracking (the write set already tracks the line).
  auto wp = t.wpos.find(taddr);
  if (wp != t.wpos.end()) return t.wbuf[wp->second].value;

  if (t.rset.find(taddr) == t.rset.end()) {
    if (t.rlist.size() >= opt_.read_capacity) surface(tid, t, HwAbortKind::Capacity, 0);
    t.rset.insert(taddr);
    t.rlist.push_back(taddr);
    table_[taddr].readers.fetch_or(bit(tid), std::memory_order_seq_cst);
  }
  // Requester wins: a buffered writer elsewhere loses to this read.
  uint16_t w = table_[taddr].writer.load(std::memory_order_seq_cst);
  if (w != 0 && w != tid) doom_other(ThreadId(w), HwAbortKind::Conflict);
  return mem_->tracked_load(taddr);
}

void HtmSim::tx_store(ThreadId tid, uint64_t taddr, uint64_t v) {
  Txn& t = self(tid);
  NVHALT_CHECK(t.status.load(std::memory_order_acquire) != kInactive);
  NVHALT_CHECK(taddr < table_.size());
  check_doomed(tid, t);
  if (t.rng.chance(opt_.spurious_p)) surface(tid, t, HwAbortKind::Spurious, 0);

  auto wp = t.wpos.find(taddr);
  if (wp != t.wpos.end()) {
    t.wbuf[wp->second].value = v;  // overwrite in place, tracking unchanged
    return;
  }
  if (t.wbuf.size() >= opt_.write_capacity) surface(tid, t, HwAbortKind::Capacity, 0);
  t.wpos.emplace(taddr, uint32_t(t.wbuf.size()));
  t.wbuf.push_back(WriteEnt{taddr, v});
  uint16_t prev = table_[taddr].writer.exchange(tid, std::memory_order_seq_cst);
  if (prev != 0 && prev != tid) doom_other(ThreadId(prev), HwAbortKind::Conflict);
  uint64_t readers = table_[taddr].readers.load(std::memory_order_seq_cst);
  readers &= ~bit(tid);
  while (readers) {
    int b = __builtin_ctzll(readers);
    readers &= readers - 1;
    doom_other(ThreadId(b + 1), HwAbortKind::Conflict);
  }
}

void HtmSim::xabort(ThreadId tid, uint8_t user_code) {
  Txn& t = self(tid);
  NVHALT_CHECK(t.status.load(std::memory_order_acquire) != kInactive);
  surface(tid, t, HwAbortKind::User, user_code);
}

HwResult HtmSim::xend(ThreadId tid) {
  Txn& t = self(tid);
  NVHALT_CHECK(t.status.load(std::memory_order_acquire) != kInactive);

  {
    // Excludes raw compound sections (see commit_mutex()) for the whole
    // decide-publish-doom sequence.
    std::unique_lock<std::shared_mutex> g(commit_mu_);

    // Commit point: once Committing, late doom attempts lose.
    uint32_t expect = kActive;
    if (!t.status.compare_exchange_strong(expect, kCommitting, std::memory_order_seq_cst,
                                          std::memory_order_seq_cst)) {
      HwAbortKind kind = HwAbortKind(expect - kDoomedBase);
      cleanup(tid, t);
      return HwResult{false, kind, 0};
    }

    // Publish all buffered writes, then doom every other transaction still
    // tracking a published address. A reader that registers mid-publish either
    // shows up in the doom pass or registered after it — in which case its
    // load also happened after it and returned the committed value.
    for (const WriteEnt& w : t.wbuf) mem_->tracked_publish(w.taddr, w.value);
    for (const WriteEnt& w : t.wbuf) doom_trackers(w.taddr, tid, /*include_readers=*/true);
  }

  cleanup(tid, t);
  return HwResult{true, HwAbortKind::Conflict, 0};
}

bool HtmSim::buffered(ThreadId tid, uint64_t taddr, uint64_t* out) const {
  const Txn& t = self(tid);
  auto wp = t.wpos.find(taddr);
  if (wp == t.wpos.end()) return false;
  if (out) *out = t.wbuf[wp->second].value;
  return true;
}

void HtmSim::doom_other(ThreadId victim, HwAbortKind kind) {
  if (victim == 0 || victim > opt_.max_threads) return;
  Txn& v = txns_[victim];
  uint32_t expect = kActive;
  v.status.compare_exchange_strong(expect, kDoomedBase + uint32_t(kind),
                                   std::memory_order_seq_cst, std::memory_order_seq_cst);
}

void HtmSim::doom_trackers(uint64_t taddr, ThreadId except, bool include_readers) {
  uint16_t w = table_[taddr].writer.load(std::memory_order_seq_cst);
  if (w != 0 && w != except) doom_other(ThreadId(w), HwAbortKind::Conflict);
  if (!include_readers) return;
  uint64_t readers = table_[taddr].readers.load(std::memory_order_seq_cst);
  if (except != 0) readers &= ~bit(except);
  while (readers) {
    int b = __builtin_ctzll(readers);
    readers &= readers - 1;
    doom_other(ThreadId(b + 1), HwAbortKind::Conflict);
  }
}

void HtmSim::raw_access(ThreadId tid, uint64_t taddr, bool is_write) {
  if (taddr >= table_.size()) return;
  doom_trackers(taddr, tid, /*include_readers=*/is_write);
}

void HtmSim::on_explicit_flush(ThreadId tid) {
  if (tid == 0 || tid > opt_.max_threads) return;
  Txn& t = self(tid);
  uint32_t s = t.status.load(std::memory_order_acquire);
  if (s == kInactive || s == kCommitting) return;
  check_doomed(tid, t);  // an earlier doom surfaces with its own code
  surface(tid, t, HwAbortKind::ExplicitFlush, 0);
}

}  // namespace nvhalt
