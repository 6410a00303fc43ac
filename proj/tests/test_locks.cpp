#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <map>
#include <set>
#include <thread>
#include <vector>

#include "nvhalt/locks.hpp"

using namespace nvhalt;

namespace {

LockTable hashed_table(uint32_t log2 = 8, uint64_t words = 1024) {
  return LockTable(LockOptions{LockMode::Hashed, log2}, words);
}

}  // namespace

TEST_CASE("colocated mode maps every word to its own lock") {
  LockTable t(LockOptions{LockMode::Colocated, 0}, 256);
  CHECK(t.size() == 256);
  CHECK(t.lock_of(17) == 17);
  std::set<LockIdx> seen;
  for (WordIdx a = 0; a < 256; a++) CHECK(seen.insert(t.lock_of(a)).second);
}

TEST_CASE("hashed mapping is deterministic and matches the multiplicative formula") {
  LockTable t = hashed_table(20, 1 << 30);
  CHECK(t.size() == (1u << 20));
  for (WordIdx a : {0u, 1u, 17u, 123456u, 0x3FFFFFFFu}) {
    LockIdx expect = LockIdx((uint64_t(a) * 0x9E3779B97F4A7C15ull) >> 44);  // independent oracle
    CHECK(t.lock_of(a) == expect);
    CHECK(t.lock_of(a) == t.lock_of(a));
  }
}

TEST_CASE("hashed collisions over random addresses stay near the birthday bound") {
  LockTable t = hashed_table(20, 1 << 30);
  Rng rng(42);
  std::set<WordIdx> addrs;
  while (addrs.size() < 100000) addrs.insert(WordIdx(rng.below(1u << 30)));

  // Oracle: count collisions by pigeonhole over an independent recomputation.
  std::map<LockIdx, int> buckets;
  for (WordIdx a : addrs) buckets[LockIdx((uint64_t(a) * 0x9E3779B97F4A7C15ull) >> 44)]++;
  uint64_t oracle_collisions = 0;
  for (auto& [lk, n] : buckets) oracle_collisions += uint64_t(n) - 1;

  uint64_t collisions = 0;
  std::map<LockIdx, int> got;
  for (WordIdx a : addrs) got[t.lock_of(a)]++;
  for (auto& [lk, n] : got) collisions += uint64_t(n) - 1;

  CHECK(collisions == oracle_collisions);
  // n^2 / 2m with n = 1e5, m = 2^20 gives about 4768 expected collisions.
  CHECK(collisions > 4000);
  CHECK(collisions < 5600);
}

TEST_CASE("acquisition is one compare-and-swap on the packed word") {
  LockTable t = hashed_table();
  LockIdx lk = 5;

  // Advance to version 4 with two acquire/release pairs.
  CHECK(t.try_acquire(lk, 0, 7));
  t.release(lk, 7);
  CHECK(t.try_acquire(lk, 2, 7));
  t.release(lk, 7);
  CHECK(t.packed(lk) == pack_tid_ver(0, 4));

  SUBCASE("success installs owner and odd version") {
    CHECK(t.try_acquire(lk, 4, 7));
    CHECK(t.packed(lk) == pack_tid_ver(7, 5));
    LockSnapshot s = t.snapshot(lk);
    CHECK(s.owner() == 7);
    CHECK(s.sver() == 5);
    CHECK(s.locked());
  }
  SUBCASE("a held lock rejects other acquirers") {
    CHECK(t.try_acquire(lk, 4, 7));
    CHECK_FALSE(t.try_acquire(lk, 4, 9));
    CHECK(t.packed(lk) == pack_tid_ver(7, 5));  // unchanged
  }
  SUBCASE("an advanced version rejects the stale expectation") {
    CHECK(t.try_acquire(lk, 4, 7));
    t.release(lk, 7);  // now {0, 6}
    CHECK_FALSE(t.try_acquire(lk, 4, 9));
    CHECK(t.packed(lk) == pack_tid_ver(0, 6));
  }
}

TEST_CASE("release clears the owner and completes the +2 advance") {
  LockTable t = hashed_table();
  CHECK(t.try_acquire(3, 0, 7));
  CHECK(t.packed(3) == pack_tid_ver(7, 1));
  t.release(3, 7);
  CHECK(t.packed(3) == pack_tid_ver(0, 2));
  // A reader that sampled version 0 before the acquire now sees a mismatch.
  CHECK(packed_ver(t.packed(3)) != 0);
}

TEST_CASE("release by a non-owner is a contract violation") {
  LockTable t = hashed_table();
  CHECK(t.try_acquire(3, 0, 7));
  CHECK_THROWS_AS(t.release(3, 9), ContractViolation);
  CHECK_THROWS_AS(t.release(4, 7), ContractViolation);  // not even locked
  t.release(3, 7);
  CHECK_THROWS_AS(t.release(3, 7), ContractViolation);  // double release
}

TEST_CASE("snapshot of a fresh lock is unlocked at version zero") {
  LockTable t = hashed_table();
  LockSnapshot s = t.snapshot(0);
  CHECK(s.owner() == 0);
  CHECK(s.sver() == 0);
  CHECK(s.hver == 0);
  CHECK_FALSE(s.locked());
}

TEST_CASE("mutual exclusion and exact version accounting under contention") {
  LockTable t = hashed_table();
  const LockIdx lk = 9;
  const int kThreads = 4, kIters = 5000;
  uint64_t unprotected = 0;  // mutated only under the lock
  std::atomic<uint64_t> successes{0};

  std::vector<std::thread> ws;
  for (int i = 0; i < kThreads; i++) {
    ws.emplace_back([&, tid = ThreadId(i + 1)] {
      for (int k = 0; k < kIters; k++) {
        uint64_t v = packed_ver(t.packed(lk));
        if ((v & 1) != 0) continue;
        if (!t.try_acquire(lk, v, tid)) continue;
        unprotected++;  // data race iff mutual exclusion is broken
        successes.fetch_add(1, std::memory_order_relaxed);
        t.release(lk, tid);
      }
    });
  }
  for (auto& w : ws) w.join();

  CHECK(unprotected == successes.load());
  // Every acquire/release pair advances the version by exactly 2.
  CHECK(packed_ver(t.packed(lk)) == 2 * successes.load());
  CHECK(packed_tid(t.packed(lk)) == 0);
}

TEST_CASE("hardware version counter is stable whenever the lock is free") {
  LockTable t = hashed_table();
  const LockIdx lk = 2;
  std::atomic<bool> stop{false};

  // Writer: acquire, bump the hardware counter while held, release.
  std::thread writer([&] {
    ThreadId tid = 1;
    for (int k = 0; k < 20000; k++) {
      uint64_t v = packed_ver(t.packed(lk));
      if ((v & 1) != 0 || !t.try_acquire(lk, v, tid)) continue;
      t.raw_store_hver(lk, t.hver(lk) + 1);
      t.release(lk, tid);
    }
    stop.store(true);
  });

  // Reader: for a fixed even software version, the hardware counter must be
  // single-valued — it only moves while the lock is held (odd).
  std::map<uint64_t, uint64_t> hver_of_sver;
  while (!stop.load()) {
    LockSnapshot s = t.snapshot(lk);
    if ((s.sver() & 1) != 0) continue;
    auto [it, fresh] = hver_of_sver.emplace(s.sver(), s.hver);
    if (!fresh) CHECK(it->second == s.hver);
  }
  writer.join();

  // Coherence at rest: counter bumps equal completed pairs.
  CHECK(t.hver(lk) == packed_ver(t.packed(lk)) / 2);
}
