#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <thread>
#include <vector>

#include "nvhalt/htmsim.hpp"

using namespace nvhalt;

namespace {

// Flat word array standing in for the heap+locks address space.
struct TestMem final : TrackedMemory {
  std::vector<std::atomic<uint64_t>> words;
  explicit TestMem(size_t n) : words(n) {}
  uint64_t tracked_load(uint64_t taddr) override { return words[taddr].load(); }
  void tracked_publish(uint64_t taddr, uint64_t v) override { words[taddr].store(v); }
};

HtmOptions opts(uint32_t rcap = 256, uint32_t wcap = 64, double sp = 0.0, uint64_t seed = 0) {
  HtmOptions o;
  o.read_capacity = rcap;
  o.write_capacity = wcap;
  o.spurious_p = sp;
  o.seed = seed;
  o.max_threads = 8;
  return o;
}

}  // namespace

TEST_CASE("an empty transaction commits with no effects") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  HwResult r = htm.xend(1);
  CHECK(r.committed);
  for (auto& w : mem.words) CHECK(w.load() == 0);
}

TEST_CASE("nesting is a contract violation, sequential transactions are not") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  CHECK_THROWS_AS(htm.xbegin(1), ContractViolation);
  CHECK(htm.xend(1).committed);
  htm.xbegin(1);  // a fresh transaction by the same thread is fine
  htm.tx_store(1, 0, 7);
  CHECK(htm.xend(1).committed);
  CHECK(mem.words[0].load() == 7);
}

TEST_CASE("buffered writes are invisible until commit and readable by their writer") {
  TestMem mem(16);
  mem.words[3] = 10;
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  htm.tx_store(1, 3, 5);
  CHECK(htm.tx_load(1, 3) == 5);      // read-own-write
  CHECK(mem.words[3].load() == 10);   // not published
  uint64_t probe = 0;
  CHECK(htm.buffered(1, 3, &probe));
  CHECK(probe == 5);
  CHECK(htm.xend(1).committed);
  CHECK(mem.words[3].load() == 5);
}

TEST_CASE("reads past the tracking capacity abort with Capacity") {
  TestMem mem(16);
  HtmSim htm(opts(/*rcap=*/2), 16, &mem);
  htm.xbegin(1);
  htm.tx_load(1, 0);
  htm.tx_load(1, 1);
  htm.tx_load(1, 0);  // already tracked: free
  try {
    htm.tx_load(1, 2);
    FAIL("expected capacity abort");
  } catch (const HwAbortException& e) {
    CHECK(e.kind == HwAbortKind::Capacity);
  }
  CHECK_FALSE(htm.in_txn(1));  // aborted transactions are torn down
}

TEST_CASE("writes past the buffer capacity abort with Capacity") {
  TestMem mem(16);
  HtmSim htm(opts(256, /*wcap=*/1), 16, &mem);
  htm.xbegin(1);
  htm.tx_store(1, 0, 1);
  htm.tx_store(1, 0, 2);  // overwrite in place: free
  try {
    htm.tx_store(1, 1, 3);
    FAIL("expected capacity abort");
  } catch (const HwAbortException& e) {
    CHECK(e.kind == HwAbortKind::Capacity);
  }
  CHECK(mem.words[0].load() == 0);
}

TEST_CASE("a certain spurious abort fires on the first instrumented access") {
  TestMem mem(16);
  HtmSim htm(opts(256, 64, /*sp=*/1.0, /*seed=*/9), 16, &mem);
  htm.xbegin(1);  // beginning itself never aborts
  try {
    htm.tx_load(1, 0);
    FAIL("expected spurious abort");
  } catch (const HwAbortException& e) {
    CHECK(e.kind == HwAbortKind::Spurious);
  }
  htm.xbegin(1);
  try {
    htm.tx_store(1, 0, 1);
    FAIL("expected spurious abort");
  } catch (const HwAbortException& e) {
    CHECK(e.kind == HwAbortKind::Spurious);
  }
}

TEST_CASE("explicit aborts discard writes and carry their code to the handler") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  htm.tx_store(1, 4, 99);
  try {
    htm.xabort(1, 42);
    FAIL("unreachable");
  } catch (const HwAbortException& e) {
    CHECK(e.kind == HwAbortKind::User);
    CHECK(e.user_code == 42);
  }
  CHECK(mem.words[4].load() == 0);
}

TEST_CASE("a non-transactional store dooms readers of the address") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  htm.tx_load(1, 5);

  htm.raw_access(/*tid=*/2, 5, /*is_write=*/true);
  mem.words[5] = 77;  // the real store the notification models

  SUBCASE("the doom surfaces at the next instrumented access") {
    try {
      htm.tx_load(1, 6);
      FAIL("expected conflict abort");
    } catch (const HwAbortException& e) {
      CHECK(e.kind == HwAbortKind::Conflict);
    }
  }
  SUBCASE("or at commit") {
    HwResult r = htm.xend(1);
    CHECK_FALSE(r.committed);
    CHECK(r.kind == HwAbortKind::Conflict);
  }
}

TEST_CASE("a non-transactional load is harmless to readers but dooms a writer") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);

  htm.xbegin(1);
  htm.tx_load(1, 5);
  htm.raw_access(2, 5, /*is_write=*/false);  // read vs read: no conflict
  CHECK(htm.xend(1).committed);

  htm.xbegin(1);
  htm.tx_store(1, 5, 9);
  htm.raw_access(2, 5, /*is_write=*/false);  // read of a speculative write
  HwResult r = htm.xend(1);
  CHECK_FALSE(r.committed);
  CHECK(r.kind == HwAbortKind::Conflict);
  CHECK(mem.words[5].load() == 0);
}

TEST_CASE("a thread's own raw accesses never doom its transaction") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  htm.tx_load(1, 5);
  htm.tx_store(1, 6, 1);
  htm.raw_access(1, 5, true);
  htm.raw_access(1, 6, false);
  CHECK(htm.xend(1).committed);
}

TEST_CASE("conflicting speculative writers resolve requester-wins") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  htm.xbegin(2);
  htm.tx_store(1, 7, 11);
  htm.tx_store(2, 7, 22);  // the requester dooms the earlier writer
  HwResult r1 = htm.xend(1);
  CHECK_FALSE(r1.committed);
  CHECK(r1.kind == HwAbortKind::Conflict);
  CHECK(htm.xend(2).committed);
  CHECK(mem.words[7].load() == 22);
}

TEST_CASE("transactional reads doom a concurrent speculative writer") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  htm.xbegin(2);
  htm.tx_store(1, 7, 11);
  CHECK(htm.tx_load(2, 7) == 0);  // sees the committed value, not the buffer
  CHECK_FALSE(htm.xend(1).committed);
  CHECK(htm.xend(2).committed);
}

TEST_CASE("a committed publication is all-or-nothing for later observers") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  htm.tx_store(1, 0, 1);
  htm.tx_store(1, 1, 2);
  CHECK(mem.words[0].load() == 0);
  CHECK(mem.words[1].load() == 0);
  CHECK(htm.xend(1).committed);
  CHECK(mem.words[0].load() == 1);
  CHECK(mem.words[1].load() == 2);
}

TEST_CASE("committing twice is a contract violation") {
  TestMem mem(16);
  HtmSim htm(opts(), 16, &mem);
  htm.xbegin(1);
  CHECK(htm.xend(1).committed);
  CHECK_THROWS_AS(htm.xend(1), ContractViolation);
}

TEST_CASE("identical seeds and schedules produce identical abort patterns") {
  auto run = [](uint64_t seed) {
    TestMem mem(16);
    HtmSim htm(opts(256, 64, 0.3, seed), 16, &mem);
    std::vector<int> abort_at;  // op index of the first abort per transaction
    for (int t = 0; t < 50; t++) {
      htm.xbegin(1);
      int aborted = -1;
      for (int i = 0; i < 8; i++) {
        try {
          htm.tx_store(1, uint64_t(i), uint64_t(t));
        } catch (const HwAbortException&) {
          aborted = i;
          break;
        }
      }
      if (aborted < 0) htm.xend(1);
      abort_at.push_back(aborted);
    }
    return abort_at;
  };
  CHECK(run(1234) == run(1234));
  CHECK(run(1234) != run(5678));  // and the seed actually matters
}

TEST_CASE("transactional increments never lose updates under real threads") {
  TestMem mem(4);
  HtmSim htm(opts(), 4, &mem);
  const int kThreads = 4, kCommits = 2000;
  std::vector<std::thread> ws;
  for (int i = 0; i < kThreads; i++) {
    ws.emplace_back([&, tid = ThreadId(i + 1)] {
      int done = 0;
      while (done < kCommits) {
        try {
          htm.xbegin(tid);
          uint64_t v = htm.tx_load(tid, 0);
          htm.tx_store(tid, 0, v + 1);
          if (htm.xend(tid).committed) done++;
        } catch (const HwAbortException&) {
          // retry
        }
      }
    });
  }
  for (auto& w : ws) w.join();
  CHECK(mem.words[0].load() == uint64_t(kThreads) * kCommits);
}
