#pragma once

#include <vector>

#include "nvhalt/tmcore.hpp"

namespace nvhalt {

// Allocator-interference workload: an array of pointers to 16-byte (2-word)
// objects, each element handled by exactly one populate transaction and one
// clear transaction, both performing 3 transactional stores. Every thread
// works a disjoint random subset per phase, so TM conflicts can come only
// from lock-table collisions — never from data. The three modes vary only in
// where allocation happens:
//   AllocFree  — populate allocates in-transaction, clear frees in-transaction
//   AllocOnly  — populate allocates in-transaction, clear never frees
//   Prealloc   — objects obtained before measurement; transactions untouched
// Since the allocator performs no transactional accesses, the abort count
// must be identical across modes for the same seed and schedule.
enum class AfMode : uint8_t { AllocFree, AllocOnly, Prealloc };

struct AfConfig {
  uint64_t objects = 100000;
  uint32_t threads = 4;
  AfMode mode = AfMode::AllocFree;
  uint64_t seed = 1;
  // Deterministic mode interleaves the logical threads' operations
  // round-robin on one OS thread; otherwise real threads run timed.
  bool scripted = true;
  // Prealloc only: element -> object address, typically the layout recorded
  // by a paired AllocFree run so both runs touch identical words. Empty =
  // allocate upfront in the same round-robin order the scripted phase uses.
  std::vector<WordIdx> layout;
};

struct AfReport {
  TxStats before;  // merged TM stats at measurement start (after prealloc)
  TxStats after;
  std::vector<WordIdx> layout;  // object address used for each element
  uint64_t aborts() const { return after.aborts_total() - before.aborts_total(); }
  uint64_t commits() const { return after.commits_total() - before.commits_total(); }
};

class TypeAF {
 public:
  // array_base .. array_base + objects must lie in the static region past
  // word 0 (0 is the null pointer).
  TypeAF(Tm* tm, WordIdx array_base, const AfConfig& cfg);

  AfReport run();

 private:
  void assign_subsets();
  void prealloc_upfront();
  void run_scripted();
  void run_threaded();

  Tm* tm_;
  WordIdx array_;
  AfConfig cfg_;
  // Per-thread element sequences (disjoint within each phase).
  std::vector<std::vector<uint64_t>> phase_a_;
  std::vector<std::vector<uint64_t>> phase_f_;
  std::vector<WordIdx> obj_of_;  // element -> object, filled in phase A
};

}  // namespace nvhalt
