#include "nvhalt/pheap.hpp"

#include <cstring>
#include <fstream>

namespace nvhalt {

// ---------------------------------------------------------------------------
// PersistentImage file format: little-endian, one 64-byte record per line.
//   line 0:   magic[8] "NVHALT01", format-version u32, word_count u64,
//             thread_slots u32, zero pad to 64
//   pver line: counter u64, zero pad to 64
//   slot line: new u64, old u64, pver u64, zero pad to 64
// ---------------------------------------------------------------------------

namespace {

void put_u32(unsigned char* p, uint32_t v) {
  for (int i = 0; i < 4; i++) p[i] = (unsigned char)(v >> (8 * i));
}
void put_u64(unsigned char* p, uint64_t v) {
  for (int i = 0; i < 8; i++) p[i] = (unsigned char)(v >> (8 * i));
}
uint32_t get_u32(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; i++) v |= uint32_t(p[i]) << (8 * i);
  return v;
}
uint64_t get_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; i++) v |= uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

void PersistentImage::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  NVHALT_CHECK(out.good());
  unsigned char line[kLineBytes];

  std::memset(line, 0, sizeof(line));
  std::memcpy(line, kMagic, 8);
  put_u32(line + 8, kFormatVersion);
  put_u64(line + 12, word_count);
  put_u32(line + 20, thread_slots);
  out.write(reinterpret_cast<char*>(line), kLineBytes);

  for (Word p : pvers) {
    std::memset(line, 0, sizeof(line));
    put_u64(line, p);
    out.write(reinterpret_cast<char*>(line), kLineBytes);
  }
  for (const PersistentSlot& s : slots) {
    std::memset(line, 0, sizeof(line));
    put_u64(line, s.new_v);
    put_u64(line + 8, s.old_v);
    put_u64(line + 16, s.pver);
    out.write(reinterpret_cast<char*>(line), kLineBytes);
  }
  NVHALT_CHECK(out.good());
}

PersistentImage PersistentImage::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  NVHALT_CHECK(in.good());
  unsigned char line[kLineBytes];

  in.read(reinterpret_cast<char*>(line), kLineBytes);
  NVHALT_CHECK(in.gcount() == kLineBytes);
  NVHALT_CHECK(std::memcmp(line, kMagic, 8) == 0);
  NVHALT_CHECK(get_u32(line + 8) == kFormatVersion);

  PersistentImage img;
  img.word_count = get_u64(line + 12);
  img.thread_slots = get_u32(line + 20);
  img.pvers.resize(img.thread_slots);
  img.slots.resize(img.word_count);

  for (uint32_t t = 0; t < img.thread_slots; t++) {
    in.read(reinterpret_cast<char*>(line), kLineBytes);
    NVHALT_CHECK(in.gcount() == kLineBytes);
    img.pvers[t] = get_u64(line);
  }
  for (uint64_t w = 0; w < img.word_count; w++) {
    in.read(reinterpret_cast<char*>(line), kLineBytes);
    NVHALT_CHECK(in.gcount() == kLineBytes);
    img.slots[w] = PersistentSlot{get_u64(line), get_u64(line + 8), get_u64(line + 16)};
  }
  return img;
}

std::vector<std::string> PersistentImage::diff(const PersistentImage& other) const {
  std::vector<std::string> out;
  char buf[160];
  if (word_count != other.word_count || thread_slots != other.thread_slots) {
    out.emplace_back("geometry differs");
    return out;
  }
  for (uint32_t t = 0; t < thread_slots; t++) {
    if (pvers[t] != other.pvers[t]) {
      std::snprintf(buf, sizeof(buf), "pver[tid %u]: %llu vs %llu", t + 1,
                    (unsigned long long)pvers[t], (unsigned long long)other.pvers[t]);
      out.emplace_back(buf);
    }
  }
  for (uint64_t w = 0; w < word_count; w++) {
    if (!(slots[w] == other.slots[w])) {
      std::snprintf(buf, sizeof(buf),
                    "slot[%llu]: {new %llu old %llu pver %llx} vs {new %llu old %llu pver %llx}",
                    (unsigned long long)w, (unsigned long long)slots[w].new_v,
                    (unsigned long long)slots[w].old_v, (unsigned long long)slots[w].pver,
                    (unsigned long long)other.slots[w].new_v,
                    (unsigned long long)other.slots[w].old_v,
                    (unsigned long long)other.slots[w].pver);
      out.emplace_back(buf);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PHeap
// ---------------------------------------------------------------------------

PHeap::PHeap(const HeapOptions& opt) : opt_(opt) {
  NVHALT_CHECK(opt_.word_count > 0);
  NVHALT_CHECK(opt_.thread_slots >= 1 && opt_.thread_slots < (1u << 16));
  image_.word_count = opt_.word_count;
  image_.thread_slots = opt_.thread_slots;
  image_.pvers.assign(opt_.thread_slots, 0);
  image_.slots.assign(opt_.word_count, PersistentSlot{});
  init_storage();
}

PHeap::PHeap(const HeapOptions& opt, const PersistentImage& image) : opt_(opt) {
  NVHALT_CHECK(image.word_count == opt_.word_count);
  NVHALT_CHECK(image.thread_slots == opt_.thread_slots);
  NVHALT_CHECK(image.pvers.size() == image.thread_slots);
  NVHALT_CHECK(image.slots.size() == image.word_count);
  image_ = image;
  init_storage();
  // Reboot: the cache comes up equal to the medium. The volatile words stay
  // zero until recovery decides each one (set_recovered_word).
  for (uint64_t w = 0; w < opt_.word_count; w++) {
    cache_slots_[w].new_v.store(image_.slots[w].new_v, std::memory_order_relaxed);
    cache_slots_[w].old_v.store(image_.slots[w].old_v, std::memory_order_relaxed);
    cache_slots_[w].pver.store(image_.slots[w].pver, std::memory_order_relaxed);
  }
  for (uint32_t t = 0; t < opt_.thread_slots; t++)
    cache_pver_[t].store(image_.pvers[t], std::memory_order_relaxed);
}

void PHeap::init_storage() {
  vol_ = std::vector<std::atomic<Word>>(opt_.word_count);
  cache_slots_ = std::vector<SlotCell>(opt_.word_count);
  cache_pver_ = std::vector<std::atomic<Word>>(opt_.thread_slots);
  line_state_ = std::vector<std::atomic<uint8_t>>(line_count());
  pending_.assign(opt_.thread_slots + 1, {});
  bg_rng_.clear();
  for (uint32_t t = 0; t <= opt_.thread_slots; t++)
    bg_rng_.emplace_back(mix64(opt_.bg.seed + 0x517cc1b727220a95ull * t));
}

Word PHeap::load(ThreadId tid, WordIdx addr) {
  check_alive();
  NVHALT_CHECK(addr < opt_.word_count);
  if (hooks_) hooks_->raw_word_access(tid, addr, /*is_write=*/false);
  return vol_[addr].load(std::memory_order_seq_cst);
}

void PHeap::store(ThreadId tid, WordIdx addr, Word v) {
  check_alive();
  NVHALT_CHECK(addr < opt_.word_count);
  if (hooks_) hooks_->raw_word_access(tid, addr, /*is_write=*/true);
  vol_[addr].store(v, std::memory_order_seq_cst);
  cache_slots_[addr].new_v.store(v, std::memory_order_release);
  uint32_t line = vmem_addr_to_pmem(addr);
  mark_dirty(line);
  maybe_background_flush(tid, line);
}

void PHeap::publish_word(WordIdx addr, Word v) {
  check_alive();
  NVHALT_CHECK(addr < opt_.word_count);
  vol_[addr].store(v, std::memory_order_seq_cst);
}

void PHeap::write_slot(ThreadId tid, WordIdx addr, Word old_v, Word pver, Word new_v) {
  check_alive();
  NVHALT_CHECK(addr < opt_.word_count);
  SlotCell& c = cache_slots_[addr];
  // Same-line write order matters: any concurrent write-back captures a prefix
  // of {old, pver, new}, and every prefix recovers to the pre-state.
  c.old_v.store(old_v, std::memory_order_release);
  c.pver.store(pver, std::memory_order_release);
  c.new_v.store(new_v, std::memory_order_release);
  uint32_t line = vmem_addr_to_pmem(addr);
  mark_dirty(line);
  maybe_background_flush(tid, line);
}

void PHeap::store_pver(ThreadId tid, Word value) {
  check_alive();
  NVHALT_CHECK(tid >= 1 && tid <= opt_.thread_slots);
  cache_pver_[tid - 1].store(value, std::memory_order_release);
  uint32_t line = pver_line(tid);
  mark_dirty(line);
  maybe_background_flush(tid, line);
}

void PHeap::flush_line(ThreadId tid, uint32_t line) {
  check_alive();
  NVHALT_CHECK(line < line_count());
  NVHALT_CHECK(tid <= opt_.thread_slots);
  if (opt_.eadr_mode) return;  // flushes are free in eadr: nothing to do, nothing aborted
  if (hooks_) hooks_->explicit_flush(tid);  // aborts the caller's active hardware txn
  uint8_t st = line_state_[line].load(std::memory_order_relaxed);
  if (st == uint8_t(LineState::Clean)) return;
  line_state_[line].store(uint8_t(LineState::FlushPending), std::memory_order_relaxed);
  pending_[tid].push_back(line);
}

void PHeap::fence(ThreadId tid) {
  check_alive();
  NVHALT_CHECK(tid <= opt_.thread_slots);
  if (opt_.eadr_mode) return;
  for (uint32_t line : pending_[tid]) {
    writeback_line(line);
    line_state_[line].store(uint8_t(LineState::Clean), std::memory_order_relaxed);
  }
  pending_[tid].clear();
}

void PHeap::writeback_line(uint32_t line) {
  if (line < header_lines()) return;  // header is immutable
  uint32_t t = line - header_lines();
  if (t < opt_.thread_slots) {
    image_.pvers[t] = cache_pver_[t].load(std::memory_order_acquire);
    return;
  }
  uint64_t w = t - opt_.thread_slots;
  SlotCell& c = cache_slots_[w];
  // Read in reverse write order so the captured tuple is always a prefix of a
  // concurrent write_slot (see write_slot).
  Word nv = c.new_v.load(std::memory_order_acquire);
  Word pv = c.pver.load(std::memory_order_acquire);
  Word ov = c.old_v.load(std::memory_order_acquire);
  image_.slots[w] = PersistentSlot{nv, ov, pv};
}

void PHeap::maybe_background_flush(ThreadId tid, uint32_t line) {
  switch (opt_.bg.mode) {
    case BgFlushPolicy::Mode::Off:
      return;
    case BgFlushPolicy::Mode::Seeded:
      if (bg_rng_[tid].chance(opt_.bg.p)) writeback_line(line);
      return;
    case BgFlushPolicy::Mode::Adversarial:
      if (opt_.bg.adversary && opt_.bg.adversary(line)) writeback_line(line);
      return;
  }
}

void PHeap::background_flush_tick() {
  check_alive();
  if (opt_.bg.mode == BgFlushPolicy::Mode::Off) return;
  for (uint32_t line = header_lines(); line < line_count(); line++) {
    if (line_state_[line].load(std::memory_order_relaxed) == uint8_t(LineState::Clean)) continue;
    if (opt_.bg.mode == BgFlushPolicy::Mode::Seeded) {
      if (bg_rng_[0].chance(opt_.bg.p)) writeback_line(line);
    } else if (opt_.bg.adversary && opt_.bg.adversary(line)) {
      writeback_line(line);
    }
  }
}

PersistentImage PHeap::crash(const CrashPolicy& policy) {
  check_alive();
  crashed_ = true;
  if (opt_.eadr_mode) {
    // Extended persistence domain: the full cache content survives.
    for (uint32_t line = header_lines(); line < line_count(); line++) writeback_line(line);
    return image_;
  }
  for (uint32_t line = header_lines(); line < line_count(); line++) {
    uint8_t st = line_state_[line].load(std::memory_order_relaxed);
    if (st == uint8_t(LineState::Clean)) continue;
    bool include;
    switch (policy.kind) {
      case CrashPolicy::Kind::IncludeAllPending: include = true; break;
      case CrashPolicy::Kind::ExcludeAllPending: include = false; break;
      default:  // independent per-line coin, deterministic in (seed, line)
        include = (mix64(policy.seed ^ (0x9E3779B97F4A7C15ull * (line + 1))) & 1) != 0;
    }
    if (include) writeback_line(line);
  }
  return image_;
}

PersistentImage PHeap::image_snapshot() const { return image_; }

void PHeap::set_recovered_word(WordIdx addr, Word v) {
  NVHALT_CHECK(addr < opt_.word_count);
  vol_[addr].store(v, std::memory_order_release);
}

Word PHeap::persisted_pver(ThreadId tid) const {
  NVHALT_CHECK(tid >= 1 && tid <= opt_.thread_slots);
  return image_.pvers[tid - 1];
}

Word PHeap::cached_pver(ThreadId tid) const {
  NVHALT_CHECK(tid >= 1 && tid <= opt_.thread_slots);
  return cache_pver_[tid - 1].load(std::memory_order_acquire);
}

PersistentSlot PHeap::cache_slot(WordIdx addr) const {
  NVHALT_CHECK(addr < opt_.word_count);
  const SlotCell& c = cache_slots_[addr];
  return PersistentSlot{c.new_v.load(std::memory_order_acquire),
                        c.old_v.load(std::memory_order_acquire),
                        c.pver.load(std::memory_order_acquire)};
}

PersistentSlot PHeap::image_slot(WordIdx addr) const {
  NVHALT_CHECK(addr < opt_.word_count);
  return image_.slots[addr];
}

LineState PHeap::line_state(uint32_t line) const {
  NVHALT_CHECK(line < line_count());
  return LineState(line_state_[line].load(std::memory_order_relaxed));
}

Word PHeap::peek_word(WordIdx addr) const {
  NVHALT_CHECK(addr < opt_.word_count);
  return vol_[addr].load(std::memory_order_acquire);
}

}  // namespace nvhalt
