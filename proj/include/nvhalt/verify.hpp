#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nvhalt/history.hpp"
#include "nvhalt/pheap.hpp"
#include "nvhalt/probe.hpp"
#include "nvhalt/stats.hpp"
#include "nvhalt/tmcore.hpp"

namespace nvhalt {

// Scripted-schedule runner plus the checkers built on it.
//
// A schedule interleaves a handful of scripted transactions at the granularity
// of the commit pipeline's probe points: each logical thread runs on a
// cooperatively scheduled fiber that suspends at every probe and at every step
// boundary, and the driver decides who advances next. A crash can be injected
// at any suspension point; the heap image taken there feeds recovery, and the
// recorded history feeds the serializability and durability checkers.

// ---------------------------------------------------------------------------
// Scripted transactions
// ---------------------------------------------------------------------------

enum class StepKind : uint8_t {
  Begin,           // path chosen by the retry policy
  BeginHw,         // forced hardware attempt
  BeginSw,         // forced software attempt
  Read,
  Write,
  Alloc,           // value = byte count; result becomes "last alloc"
  Free,
  Commit,
  VoluntaryAbort,  // ends the transaction without retry
  CrashHere,       // inject the crash at this point in this thread's script
};

// Address bit marking a reference relative to the thread's most recent
// allocation: (kLastAllocRef | k) resolves to last_alloc_base + k.
inline constexpr WordIdx kLastAllocRef = WordIdx(1) << 31;

struct TxStep {
  StepKind kind = StepKind::Begin;
  WordIdx addr = 0;   // Read/Write/Free target (may carry kLastAllocRef)
  Word value = 0;     // Write payload; Alloc byte count
};

inline TxStep step_begin() { return {StepKind::Begin, 0, 0}; }
inline TxStep step_begin_hw() { return {StepKind::BeginHw, 0, 0}; }
inline TxStep step_begin_sw() { return {StepKind::BeginSw, 0, 0}; }
inline TxStep step_read(WordIdx a) { return {StepKind::Read, a, 0}; }
inline TxStep step_write(WordIdx a, Word v) { return {StepKind::Write, a, v}; }
inline TxStep step_alloc(uint32_t bytes) { return {StepKind::Alloc, 0, bytes}; }
inline TxStep step_free(WordIdx a) { return {StepKind::Free, a, 0}; }
inline TxStep step_commit() { return {StepKind::Commit, 0, 0}; }
inline TxStep step_cancel() { return {StepKind::VoluntaryAbort, 0, 0}; }
inline TxStep step_crash() { return {StepKind::CrashHere, 0, 0}; }
inline WordIdx last_alloc(WordIdx offset) { return kLastAllocRef | offset; }

// One logical thread's program. Either a step list, retried as a unit up to
// max_rounds times on abort (a transaction that keeps aborting simply stops
// after max_rounds with gave_up set), or — for workload fuzzing — an arbitrary
// body that drives the TM itself; a body runs once and handles its own
// retries.
struct ScriptedTx {
  ThreadId tid = 1;
  std::vector<TxStep> steps;
  uint32_t max_rounds = 1;
  std::function<void()> body;  // when set, steps/max_rounds are ignored
};

// ---------------------------------------------------------------------------
// Schedules and results
// ---------------------------------------------------------------------------

struct CrashPlan {
  bool enabled = false;
  uint64_t at_step = 0;  // global suspension-point count at which to crash
  CrashPolicy policy = CrashPolicy::exclude_all();
};

// Either an explicit pick sequence (each entry advances that thread by one
// suspension interval) or a seed for a uniform random scheduler.
struct Schedule {
  std::vector<ThreadId> picks;
  uint64_t seed = 0;
  uint64_t max_picks = uint64_t(1) << 20;
  CrashPlan crash;
};

struct ThreadOutcome {
  uint32_t rounds_started = 0;
  uint32_t commits = 0;
  uint32_t aborts = 0;
  bool script_done = false;
  bool gave_up = false;  // exhausted max_rounds without committing
};

// Copyable snapshot of a recorded History.
struct RecordedHistory {
  std::vector<HistEvent> events;
  std::vector<uint64_t> ws_attempt;
  std::vector<std::vector<std::pair<WordIdx, Word>>> ws_writes;

  const std::vector<std::pair<WordIdx, Word>>* writes_of(uint64_t attempt) const {
    for (size_t i = 0; i < ws_attempt.size(); i++)
      if (ws_attempt[i] == attempt) return &ws_writes[i];
    return nullptr;
  }
};

struct ScheduleResult {
  RecordedHistory history;
  bool crashed = false;
  PersistentImage image;           // valid iff crashed
  std::vector<Word> final_words;   // volatile heap at crash (or at finish)
  std::vector<ThreadOutcome> outcomes;  // indexed by script insertion order
  std::vector<std::pair<ThreadId, std::optional<PipelinePoint>>> trace;  // one per suspension
  TxStats stats;
  uint64_t steps_taken = 0;
};

// ---------------------------------------------------------------------------
// The runner
// ---------------------------------------------------------------------------

class ScheduleRunner {
 public:
  explicit ScheduleRunner(TmOptions opt);  // record_history is forced on
  ~ScheduleRunner();
  ScheduleRunner(const ScheduleRunner&) = delete;
  ScheduleRunner& operator=(const ScheduleRunner&) = delete;

  // Scripts must be added before the first grant. Duplicate tids chain
  // sequentially: the second script runs once the first finishes.
  size_t add_script(ScriptedTx s);

  Tm& tm() { return *tm_; }

  enum class Stop : uint8_t {
    AtPoint,   // run_until reached the requested probe point
    Yielded,   // suspended at some other point
    Resolved,  // the grant committed, aborted, or finished a round
    Finished,  // no runnable fiber remains for that tid
    Crashed,   // the crash fired
  };

  // Advance tid's current fiber by one suspension interval.
  Stop step(ThreadId tid);
  // Advance tid until it suspends at `point` (or resolves/finishes first).
  Stop run_until(ThreadId tid, PipelinePoint point, uint64_t limit = 100000);
  // Advance tid until its current transaction commits or aborts.
  Stop run_to_resolution(ThreadId tid, uint64_t limit = 100000);
  // Advance tid until its whole script is done.
  Stop run_to_completion(ThreadId tid, uint64_t limit = 1000000);

  // Crash between grants: freezes volatile state, takes the heap image, and
  // marks every fiber dead. After this only finish() is useful.
  void crash_now(const CrashPolicy& policy);
  void set_crash_plan(const CrashPlan& plan) { plan_ = plan; }

  // Extra suspension point for body scripts (call between operations so a
  // planned crash can land there).
  void boundary();

  bool crashed() const { return crashed_; }
  uint64_t steps_taken() const { return steps_taken_; }
  const ThreadOutcome& outcome(size_t script_index) const;
  std::optional<PipelinePoint> last_point(ThreadId tid) const;
  bool thread_done(ThreadId tid) const;
  std::vector<ThreadId> runnable_tids() const;  // distinct, insertion order

  // Kills surviving fibers (their open attempts stay unresolved, i.e. look
  // in-flight) and packages the run.
  ScheduleResult finish();

 private:
  struct Fiber;
  struct MainContext;
  friend struct RunnerProbe;

  void on_probe(PipelinePoint p, ThreadId tid);
  void yield_here(std::optional<PipelinePoint> p);
  [[noreturn]] void crash_from_fiber();
  void capture_crash(const CrashPolicy& policy);
  void kill_all();
  Fiber* runnable(ThreadId tid);
  const Fiber* runnable(ThreadId tid) const;
  Stop grant(Fiber* f);
  void run_script(Fiber& f);
  void exec_step(Fiber& f, const TxStep& st);
  WordIdx resolve(const Fiber& f, WordIdx addr) const;

  static void trampoline();

  TmOptions opt_;
  std::unique_ptr<Tm> tm_;
  std::unique_ptr<struct RunnerProbe> probe_;
  std::unique_ptr<MainContext> main_;
  std::vector<std::unique_ptr<Fiber>> fibers_;
  Fiber* cur_ = nullptr;
  bool started_ = false;
  bool finished_ = false;
  bool crashed_ = false;
  CrashPlan plan_;
  uint64_t steps_taken_ = 0;
  PersistentImage image_;
  std::vector<Word> final_words_;
  std::vector<std::pair<ThreadId, std::optional<PipelinePoint>>> trace_;
};

// Convenience wrapper: build a runner, apply the schedule, return the result.
// Explicit picks are validated against the scripts (an entry naming a thread
// with nothing left to run is an error); the seeded form draws uniformly over
// the threads that still have work.
ScheduleResult run_schedule(const TmOptions& opt, std::vector<ScriptedTx> scripts,
                            const Schedule& sched);

// ---------------------------------------------------------------------------
// Checkers
// ---------------------------------------------------------------------------

struct SerialVerdict {
  bool sat = false;
  bool bound_exceeded = false;
  std::vector<uint64_t> witness;  // attempt ids in a valid serial order
  std::string why;
};

// Is there a serial order of the committed transactions, consistent with
// real-time precedence (commit response before begin), under which every
// recorded read returns the value written by the latest prior write (heap
// words start at zero)? Exhaustive over at most max_txns committed
// transactions; more than that reports bound_exceeded.
SerialVerdict check_serializable(const RecordedHistory& h, size_t max_txns = 10);

struct DurableVerdict {
  bool ok = false;
  bool bound_exceeded = false;
  std::vector<uint64_t> witness;  // attempt ids whose effects survived
  std::string why;
};

// Does the recovered state equal some legal post-crash state: all transactions
// whose commit response precedes the crash, none whose begin follows it, plus
// any subset of the in-flight ones, applied in some precedence- and
// read-consistent serial order? `recovered` maps a word index to its
// post-recovery value. Exhaustive up to max_txns transactions; beyond that it
// falls back to commit-order replay (still exact for histories whose committed
// order is the unique serial order, which holds for everything the runner
// produces: commits are serialized under locks).
DurableVerdict check_durable(const RecordedHistory& pre_crash,
                             const std::function<Word(WordIdx)>& recovered,
                             size_t max_txns = 10);

struct ProgressVerdict {
  bool ok = true;
  std::string why;
};

// Progress-contract audit over aggregated stats: no transaction consumed more
// than max_hw_attempts hardware attempts; every software abort carries a
// conflict witness; under the strongly progressive variant, every round of a
// lockstep driver (when round data is supplied) committed at least one
// transaction.
ProgressVerdict check_progress(const TxStats& stats, uint32_t max_hw_attempts, Variant variant,
                               const std::vector<uint64_t>* commits_per_round = nullptr);

// ---------------------------------------------------------------------------
// Crash fuzzing
// ---------------------------------------------------------------------------

struct FuzzConfig {
  std::string structure = "hashmap";  // "hashmap" or "abtree"
  uint32_t threads = 2;               // 2..4
  uint32_t read_pct = 0;              // share of contains() ops
  uint32_t ops_per_thread = 24;
  uint64_t key_range = 48;
  Variant variant = Variant::WeakProg;
  LockMode lock_mode = LockMode::Colocated;
  bool eadr_mode = false;
  double bg_flush_p = 0.01;           // random background flusher probability
  uint32_t max_hw_attempts = 4;
};

struct FuzzFinding {
  uint64_t seed = 0;
  std::string what;
};

struct FuzzReport {
  uint64_t runs = 0;
  uint64_t crashes_injected = 0;
  uint64_t committed_ops = 0;
  uint64_t inflight_ops = 0;
  std::vector<FuzzFinding> findings;
  bool ok() const { return findings.empty(); }
};

// For each seed: run a randomized container workload under a random
// interleaving twice — once to completion to count suspension points, once
// crashing at a seeded point — then recover from the image and check that the
// recovered container (a) passes its structural validator and (b) holds
// exactly the contents of the committed operations plus some subset of the
// operations in flight at the crash, including the words of the static region.
FuzzReport crash_fuzz(const FuzzConfig& cfg, uint64_t seed_begin, uint64_t seed_count);

// ---------------------------------------------------------------------------
// Negative-configuration demonstrations
// ---------------------------------------------------------------------------

// A hardware reader that never looks at lock words overlaps a software commit
// half-done with its writeback: with the lock checks stripped the recorded
// history is not serializable; the full protocol forces the reader to abort
// and retry, and the identical schedule is serializable.
SerialVerdict demo_uninstrumented_hw_reads(bool full_config);

// A hardware commit that publishes without acquiring locks lets a software
// transaction read — and durably commit against — values whose persistence is
// still in flight; crashing there fails the durability check. The full
// protocol holds the locks until the version fence, and the identical schedule
// passes.
DurableVerdict demo_unlocked_publication(bool full_config);

// Two writers that take the same two locks in opposite orders, driven in
// lockstep. Weakly progressive: both abort every round. Strongly progressive:
// the clock winner commits every round.
struct LivelockRoundReport {
  std::vector<uint64_t> commits_per_round;
  std::vector<uint64_t> aborts_per_round;
  uint32_t rounds = 0;
};
LivelockRoundReport run_crossing_writers(Variant variant, uint32_t rounds);

// Write-ordering demonstration: a raw (non-transactional) linked-list append
// whose head pointer is flushed by an adversarial background flusher before
// the node contents can reach persistence leaves a dangling head after a
// crash; the same workload through transactions recovers all-or-nothing.
struct OrderingDemoReport {
  bool bad_order_violation = false;  // raw version: reachable garbage node
  bool tm_violation = false;         // transactional version: must stay false
  std::string detail;
};
OrderingDemoReport linked_list_ordering_demo(uint64_t seed = 1);

// ---------------------------------------------------------------------------
// Scenario text
// ---------------------------------------------------------------------------

// Line format, one op per line ('#' comments, blank lines skipped):
//   T1 begin [hw|sw]
//   T1 read a3
//   T1 write a3 42
//   T1 alloc [bytes]
//   T1 free a3 | T1 free last
//   T1 commit
//   T1 abort
//   crash [exclude|include|seed <n>]
// Ops run sequentially in file order (op granularity, direct TM calls; a
// begin-less access opens a transaction implicitly). Returns a JSON verdict:
// per-line outcomes, the serializability check, and — when a crash line is
// present — the durability check against the recovered heap.
std::string run_scenario_text(const std::string& text, const TmOptions& opt);
std::string run_scenario_text(const std::string& text);  // desk-scale defaults

}  // namespace nvhalt
