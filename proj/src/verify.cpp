#include "nvhalt/verify.hpp"

#include <ucontext.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "nvhalt/containers/abtree.hpp"
#include "nvhalt/containers/hashmap.hpp"

namespace nvhalt {

// ===========================================================================
// Fibers
// ===========================================================================

namespace {

// Thrown into a suspended fiber to unwind its stack; never escapes the fiber.
struct FiberKilled {};

constexpr size_t kFiberStackBytes = 256 * 1024;

// Handoff slot for trampoline arguments (makecontext can't portably carry a
// pointer). The runner is single-threaded and sets these immediately before
// the first switch into the new context.
thread_local ScheduleRunner* t_launch_runner = nullptr;
thread_local size_t t_launch_index = 0;

}  // namespace

struct RunnerProbe final : Probe {
  ScheduleRunner* runner;
  explicit RunnerProbe(ScheduleRunner* r) : runner(r) {}
  void at(PipelinePoint p, ThreadId tid) override { runner->on_probe(p, tid); }
};

struct ScheduleRunner::MainContext {
  ucontext_t ctx{};
};

struct ScheduleRunner::Fiber {
  ThreadId tid = 1;
  size_t index = 0;
  ScriptedTx script;
  ucontext_t ctx{};
  std::vector<char> stack;
  bool started = false;
  bool done = false;
  bool kill = false;
  std::optional<PipelinePoint> at;  // probe it is suspended at (nullopt = step boundary)
  WordIdx last_alloc_base = 0;
  ThreadOutcome outcome;
  std::exception_ptr error;  // script/body failure, rethrown on the main context
};

ScheduleRunner::ScheduleRunner(TmOptions opt)
    : opt_([&] {
        opt.record_history = true;
        return opt;
      }()),
      tm_(std::make_unique<Tm>(opt_)),
      probe_(std::make_unique<RunnerProbe>(this)),
      main_(std::make_unique<MainContext>()) {
  tm_->set_probe(probe_.get());
}

ScheduleRunner::~ScheduleRunner() {
  if (!finished_) kill_all();
  if (tm_) tm_->set_probe(nullptr);
}

size_t ScheduleRunner::add_script(ScriptedTx s) {
  NVHALT_CHECK(!started_ && !finished_ && !crashed_);
  NVHALT_CHECK(s.tid >= 1 && uint32_t(s.tid) <= opt_.heap.thread_slots);
  NVHALT_CHECK(s.body != nullptr || !s.steps.empty());
  auto f = std::make_unique<Fiber>();
  f->tid = s.tid;
  f->index = fibers_.size();
  f->script = std::move(s);
  fibers_.push_back(std::move(f));
  return fibers_.size() - 1;
}

void ScheduleRunner::trampoline() {
  ScheduleRunner& r = *t_launch_runner;
  Fiber& f = *r.fibers_[t_launch_index];
  try {
    r.run_script(f);
  } catch (const FiberKilled&) {
  } catch (const CrashRequested&) {
  } catch (...) {
    // A script/body error must not unwind through the ucontext switch (that
    // would terminate the process); stash it for the main context to rethrow.
    f.error = std::current_exception();
  }
  f.done = true;
  // Falling off the end resumes the main context via uc_link.
}

void ScheduleRunner::run_script(Fiber& f) {
  if (f.script.body) {
    yield_here(std::nullopt);
    f.outcome.rounds_started = 1;
    f.script.body();
    f.outcome.script_done = true;
    return;
  }
  for (uint32_t round = 0; round < f.script.max_rounds; round++) {
    f.outcome.rounds_started++;
    try {
      for (const TxStep& st : f.script.steps) {
        yield_here(std::nullopt);
        exec_step(f, st);
      }
      f.outcome.script_done = true;
      return;
    } catch (const TxAborted&) {
      f.outcome.aborts++;
    }
  }
  f.outcome.gave_up = true;
}

WordIdx ScheduleRunner::resolve(const Fiber& f, WordIdx addr) const {
  if (addr & kLastAllocRef) {
    NVHALT_CHECK(f.last_alloc_base != 0);
    return f.last_alloc_base + WordIdx(addr & ~kLastAllocRef);
  }
  return addr;
}

void ScheduleRunner::exec_step(Fiber& f, const TxStep& st) {
  Tm& tm = *tm_;
  switch (st.kind) {
    case StepKind::Begin:
      tm.begin(f.tid);
      break;
    case StepKind::BeginHw:
      tm.begin_path(f.tid, true);
      break;
    case StepKind::BeginSw:
      tm.begin_path(f.tid, false);
      break;
    case StepKind::Read:
      (void)tm.read(f.tid, resolve(f, st.addr));
      break;
    case StepKind::Write:
      tm.write(f.tid, resolve(f, st.addr), st.value);
      break;
    case StepKind::Alloc: {
      std::optional<WordIdx> base = tm.alloc(f.tid, uint32_t(st.value));
      NVHALT_CHECK(base.has_value());
      f.last_alloc_base = *base;
      break;
    }
    case StepKind::Free:
      tm.free_object(f.tid, resolve(f, st.addr));
      break;
    case StepKind::Commit:
      tm.commit(f.tid);
      f.outcome.commits++;
      break;
    case StepKind::VoluntaryAbort:
      tm.cancel(f.tid);
      f.outcome.aborts++;
      break;
    case StepKind::CrashHere:
      crash_from_fiber();
  }
}

void ScheduleRunner::on_probe(PipelinePoint p, ThreadId tid) {
  if (!cur_) return;  // traffic outside a grant (none expected, but harmless)
  NVHALT_CHECK(cur_->tid == tid);
  yield_here(p);
}

void ScheduleRunner::boundary() {
  NVHALT_CHECK(cur_ != nullptr);
  yield_here(std::nullopt);
}

void ScheduleRunner::yield_here(std::optional<PipelinePoint> p) {
  Fiber& f = *cur_;
  steps_taken_++;
  trace_.push_back({f.tid, p});
  if (plan_.enabled && !crashed_ && steps_taken_ == plan_.at_step) crash_from_fiber();
  f.at = p;
  swapcontext(&f.ctx, &main_->ctx);
  if (f.kill) throw FiberKilled{};
}

void ScheduleRunner::capture_crash(const CrashPolicy& policy) {
  NVHALT_CHECK(!crashed_);
  PHeap& h = tm_->heap();
  final_words_.resize(h.word_count());
  for (uint64_t w = 0; w < h.word_count(); w++) final_words_[w] = h.peek_word(WordIdx(w));
  tm_->history().crash_marker();
  image_ = h.crash(policy);
  crashed_ = true;
}

void ScheduleRunner::crash_from_fiber() {
  capture_crash(plan_.policy);
  throw CrashRequested{};
}

void ScheduleRunner::crash_now(const CrashPolicy& policy) {
  NVHALT_CHECK(cur_ == nullptr);  // only between grants
  capture_crash(policy);
  kill_all();
}

void ScheduleRunner::kill_all() {
  for (auto& fp : fibers_) {
    Fiber& f = *fp;
    if (f.done) continue;
    if (!f.started) {
      f.done = true;
      continue;
    }
    f.kill = true;
    cur_ = &f;
    swapcontext(&main_->ctx, &f.ctx);
    cur_ = nullptr;
    NVHALT_CHECK(f.done);
  }
}

ScheduleRunner::Fiber* ScheduleRunner::runnable(ThreadId tid) {
  for (auto& fp : fibers_)
    if (fp->tid == tid && !fp->done) return fp.get();
  return nullptr;
}

const ScheduleRunner::Fiber* ScheduleRunner::runnable(ThreadId tid) const {
  for (const auto& fp : fibers_)
    if (fp->tid == tid && !fp->done) return fp.get();
  return nullptr;
}

std::vector<ThreadId> ScheduleRunner::runnable_tids() const {
  std::vector<ThreadId> out;
  for (const auto& fp : fibers_)
    if (!fp->done && std::find(out.begin(), out.end(), fp->tid) == out.end())
      out.push_back(fp->tid);
  return out;
}

ScheduleRunner::Stop ScheduleRunner::grant(Fiber* f) {
  NVHALT_CHECK(!finished_);
  if (crashed_) return Stop::Crashed;
  if (!f) return Stop::Finished;
  uint64_t before = uint64_t(f->outcome.commits) + f->outcome.aborts;
  if (!f->started) {
    getcontext(&f->ctx);
    f->stack.resize(kFiberStackBytes);
    f->ctx.uc_stack.ss_sp = f->stack.data();
    f->ctx.uc_stack.ss_size = f->stack.size();
    f->ctx.uc_link = &main_->ctx;
    makecontext(&f->ctx, &ScheduleRunner::trampoline, 0);
    t_launch_runner = this;
    t_launch_index = f->index;
    f->started = true;
  }
  cur_ = f;
  swapcontext(&main_->ctx, &f->ctx);
  cur_ = nullptr;
  if (f->error) {
    std::exception_ptr e = f->error;
    f->error = nullptr;
    std::rethrow_exception(e);
  }
  if (crashed_) return Stop::Crashed;
  uint64_t after = uint64_t(f->outcome.commits) + f->outcome.aborts;
  if (after != before || f->done) return Stop::Resolved;
  return Stop::Yielded;
}

ScheduleRunner::Stop ScheduleRunner::step(ThreadId tid) {
  started_ = true;
  return grant(runnable(tid));
}

ScheduleRunner::Stop ScheduleRunner::run_until(ThreadId tid, PipelinePoint point, uint64_t limit) {
  started_ = true;
  for (uint64_t i = 0; i < limit; i++) {
    Fiber* f = runnable(tid);
    if (!f) return crashed_ ? Stop::Crashed : Stop::Finished;
    Stop s = grant(f);
    if (s != Stop::Yielded) return s;
    if (f->at == point) return Stop::AtPoint;
  }
  throw ContractViolation("run_until: grant limit exhausted");
}

ScheduleRunner::Stop ScheduleRunner::run_to_resolution(ThreadId tid, uint64_t limit) {
  started_ = true;
  for (uint64_t i = 0; i < limit; i++) {
    Fiber* f = runnable(tid);
    if (!f) return crashed_ ? Stop::Crashed : Stop::Finished;
    Stop s = grant(f);
    if (s != Stop::Yielded && s != Stop::AtPoint) return s;
  }
  throw ContractViolation("run_to_resolution: grant limit exhausted");
}

ScheduleRunner::Stop ScheduleRunner::run_to_completion(ThreadId tid, uint64_t limit) {
  started_ = true;
  for (uint64_t i = 0; i < limit; i++) {
    Fiber* f = runnable(tid);
    if (!f) return crashed_ ? Stop::Crashed : Stop::Finished;
    Stop s = grant(f);
    if (s == Stop::Crashed) return s;
  }
  throw ContractViolation("run_to_completion: grant limit exhausted");
}

const ThreadOutcome& ScheduleRunner::outcome(size_t script_index) const {
  NVHALT_CHECK(script_index < fibers_.size());
  return fibers_[script_index]->outcome;
}

std::optional<PipelinePoint> ScheduleRunner::last_point(ThreadId tid) const {
  const Fiber* f = runnable(tid);
  return f ? f->at : std::nullopt;
}

bool ScheduleRunner::thread_done(ThreadId tid) const { return runnable(tid) == nullptr; }

ScheduleResult ScheduleRunner::finish() {
  NVHALT_CHECK(!finished_);
  kill_all();
  finished_ = true;
  if (!crashed_) {
    PHeap& h = tm_->heap();
    final_words_.resize(h.word_count());
    for (uint64_t w = 0; w < h.word_count(); w++) final_words_[w] = h.peek_word(WordIdx(w));
  }
  ScheduleResult r;
  History& h = tm_->history();
  r.history.events = h.events;
  r.history.ws_attempt = h.ws_attempt;
  r.history.ws_writes = h.ws_writes;
  r.crashed = crashed_;
  if (crashed_) r.image = image_;
  r.final_words = final_words_;
  r.outcomes.reserve(fibers_.size());
  for (const auto& fp : fibers_) r.outcomes.push_back(fp->outcome);
  r.trace = trace_;
  r.stats = tm_->total_stats();
  r.steps_taken = steps_taken_;
  return r;
}

ScheduleResult run_schedule(const TmOptions& opt, std::vector<ScriptedTx> scripts,
                            const Schedule& sched) {
  ScheduleRunner r(opt);
  for (auto& s : scripts) r.add_script(std::move(s));
  r.set_crash_plan(sched.crash);
  if (!sched.picks.empty()) {
    for (ThreadId t : sched.picks) {
      if (r.crashed()) break;
      ScheduleRunner::Stop s = r.step(t);
      if (s == ScheduleRunner::Stop::Finished)
        throw ContractViolation("schedule names a thread with no work left");
      if (s == ScheduleRunner::Stop::Crashed) break;
    }
  } else {
    Rng rng(mix64(sched.seed ^ 0xA11CEull) | 1);
    for (uint64_t i = 0; !r.crashed(); i++) {
      NVHALT_CHECK(i < sched.max_picks);
      std::vector<ThreadId> tids = r.runnable_tids();
      if (tids.empty()) break;
      r.step(tids[rng.below(tids.size())]);
    }
  }
  return r.finish();
}

// ===========================================================================
// Serializability / durability checkers
// ===========================================================================

namespace {

// One committed (or mid-commit) transaction attempt as a checkable unit.
struct TxUnit {
  uint64_t attempt = 0;
  ThreadId tid = 0;
  size_t begin_idx = SIZE_MAX;
  size_t commit_started_idx = SIZE_MAX;  // SIZE_MAX: read-only (never locked)
  size_t committed_idx = SIZE_MAX;  // SIZE_MAX: no commit response (in flight)
  std::vector<const HistEvent*> ops;  // Read/Write events in program order
  const std::vector<std::pair<WordIdx, Word>>* ws = nullptr;  // frozen write set
};

struct AttemptScan {
  ThreadId tid = 0;
  size_t begin_idx = SIZE_MAX;
  size_t commit_started_idx = SIZE_MAX;
  size_t committed_idx = SIZE_MAX;
  size_t aborted_idx = SIZE_MAX;
  std::vector<const HistEvent*> ops;
};

// Scans events[0, limit) into per-attempt records, in first-touch order.
std::vector<std::pair<uint64_t, AttemptScan>> scan_attempts(const RecordedHistory& h,
                                                            size_t limit) {
  std::vector<std::pair<uint64_t, AttemptScan>> order;
  std::unordered_map<uint64_t, size_t> pos;
  auto rec = [&](uint64_t attempt) -> AttemptScan& {
    auto it = pos.find(attempt);
    if (it == pos.end()) {
      pos.emplace(attempt, order.size());
      order.emplace_back(attempt, AttemptScan{});
      return order.back().second;
    }
    return order[it->second].second;
  };
  for (size_t i = 0; i < limit && i < h.events.size(); i++) {
    const HistEvent& e = h.events[i];
    switch (e.kind) {
      case EventKind::AttemptBegin: {
        AttemptScan& a = rec(e.attempt);
        a.begin_idx = i;
        a.tid = e.tid;
        break;
      }
      case EventKind::Read:
      case EventKind::Write:
        rec(e.attempt).ops.push_back(&e);
        break;
      case EventKind::CommitStarted:
        rec(e.attempt).commit_started_idx = i;
        break;
      case EventKind::Committed:
        rec(e.attempt).committed_idx = i;
        break;
      case EventKind::Aborted:
        rec(e.attempt).aborted_idx = i;
        break;
      case EventKind::CrashMarker:
        break;
    }
  }
  return order;
}

size_t crash_marker_index(const RecordedHistory& h) {
  for (size_t i = 0; i < h.events.size(); i++)
    if (h.events[i].kind == EventKind::CrashMarker) return i;
  return h.events.size();
}

Word state_get(const std::unordered_map<WordIdx, Word>& s, WordIdx a) {
  auto it = s.find(a);
  return it == s.end() ? Word(0) : it->second;
}

// Replays the unit against `state`: every recorded read must return the latest
// of its own earlier buffered writes or the state value (fresh words read 0).
// On success the frozen write set is applied and logged in `undo`.
bool apply_unit(const TxUnit& u, std::unordered_map<WordIdx, Word>& state,
                std::vector<std::pair<WordIdx, Word>>& undo) {
  std::vector<std::pair<WordIdx, Word>> buf;
  for (const HistEvent* e : u.ops) {
    if (e->kind == EventKind::Read) {
      Word v = 0;
      bool own = false;
      for (auto it = buf.rbegin(); it != buf.rend(); ++it) {
        if (it->first == e->addr) {
          v = it->second;
          own = true;
          break;
        }
      }
      if (!own) v = state_get(state, e->addr);
      if (v != e->value) return false;
    } else {
      buf.emplace_back(e->addr, e->value);
    }
  }
  if (u.ws) {
    for (const auto& [a, v] : *u.ws) {
      undo.emplace_back(a, state_get(state, a));
      state[a] = v;
    }
  }
  return true;
}

// Depth-first search over serial orders respecting real-time precedence
// (commit response before begin) and read-value legality. `leaf` (when set)
// must accept the final state; when null any complete order is a witness.
struct SerialSearch {
  const std::vector<TxUnit>& units;
  std::function<bool(const std::unordered_map<WordIdx, Word>&)> leaf;
  std::vector<uint64_t> witness;
  std::unordered_map<WordIdx, Word> state;
  std::vector<char> used;

  explicit SerialSearch(const std::vector<TxUnit>& u,
                        std::function<bool(const std::unordered_map<WordIdx, Word>&)> l = nullptr)
      : units(u), leaf(std::move(l)) {}

  bool run() {
    used.assign(units.size(), 0);
    state.clear();
    witness.clear();
    return dfs(0);
  }

  bool dfs(size_t placed) {
    if (placed == units.size()) return leaf ? leaf(state) : true;
    for (size_t i = 0; i < units.size(); i++) {
      if (used[i]) continue;
      bool blocked = false;
      for (size_t j = 0; j < units.size(); j++) {
        if (j == i || used[j]) continue;
        if (units[j].committed_idx < units[i].begin_idx) {
          blocked = true;  // j's commit response preceded i's begin
          break;
        }
      }
      if (blocked) continue;
      std::vector<std::pair<WordIdx, Word>> undo;
      if (apply_unit(units[i], state, undo)) {
        used[i] = 1;
        witness.push_back(units[i].attempt);
        if (dfs(placed + 1)) return true;
        witness.pop_back();
        used[i] = 0;
      }
      for (auto it = undo.rbegin(); it != undo.rend(); ++it) state[it->first] = it->second;
    }
    return false;
  }
};

TxUnit to_unit(uint64_t attempt, const AttemptScan& a, const RecordedHistory& h, bool committed) {
  TxUnit u;
  u.attempt = attempt;
  u.tid = a.tid;
  u.begin_idx = a.begin_idx;
  u.commit_started_idx = a.commit_started_idx;
  u.committed_idx = committed ? a.committed_idx : SIZE_MAX;
  u.ops = a.ops;
  u.ws = h.writes_of(attempt);
  return u;
}

}  // namespace

SerialVerdict check_serializable(const RecordedHistory& h, size_t max_txns) {
  size_t limit = crash_marker_index(h);
  auto scans = scan_attempts(h, limit);
  std::vector<TxUnit> units;
  for (const auto& [attempt, a] : scans)
    if (a.committed_idx != SIZE_MAX) units.push_back(to_unit(attempt, a, h, true));
  SerialVerdict v;
  if (units.size() > max_txns) {
    v.bound_exceeded = true;
    v.why = "committed transaction count exceeds the checker bound";
    return v;
  }
  SerialSearch search(units);
  if (search.run()) {
    v.sat = true;
    v.witness = search.witness;
  } else {
    v.why = "no serial order is consistent with real-time precedence and the recorded reads";
  }
  return v;
}

DurableVerdict check_durable(const RecordedHistory& pre_crash,
                             const std::function<Word(WordIdx)>& recovered, size_t max_txns) {
  DurableVerdict v;
  size_t marker = crash_marker_index(pre_crash);
  if (marker == pre_crash.events.size()) {
    v.why = "history has no crash marker";
    return v;
  }
  auto scans = scan_attempts(pre_crash, marker);
  std::vector<TxUnit> committed;
  std::vector<TxUnit> inflight;
  for (const auto& [attempt, a] : scans) {
    if (a.committed_idx != SIZE_MAX) {
      committed.push_back(to_unit(attempt, a, pre_crash, true));
    } else if (a.commit_started_idx != SIZE_MAX && a.aborted_idx == SIZE_MAX) {
      inflight.push_back(to_unit(attempt, a, pre_crash, false));
    }
  }

  // Comparison universe: every word any attempt read, wrote, or committed.
  std::set<WordIdx> universe;
  for (size_t i = 0; i < marker; i++) {
    const HistEvent& e = pre_crash.events[i];
    if (e.kind == EventKind::Read || e.kind == EventKind::Write) universe.insert(e.addr);
  }
  for (const auto& ws : pre_crash.ws_writes)
    for (const auto& [a, w] : ws) {
      (void)w;
      universe.insert(a);
    }

  auto leaf = [&](const std::unordered_map<WordIdx, Word>& state) {
    for (WordIdx a : universe)
      if (state_get(state, a) != recovered(a)) return false;
    return true;
  };

  if (inflight.size() > 20) {
    v.bound_exceeded = true;
    v.why = "too many in-flight transactions to enumerate";
    return v;
  }

  if (committed.size() + inflight.size() <= max_txns) {
    for (uint64_t mask = 0; mask < (uint64_t(1) << inflight.size()); mask++) {
      std::vector<TxUnit> units = committed;
      for (size_t b = 0; b < inflight.size(); b++)
        if (mask & (uint64_t(1) << b)) units.push_back(inflight[b]);
      SerialSearch search(units, leaf);
      if (search.run()) {
        v.ok = true;
        v.witness = search.witness;
        return v;
      }
    }
    v.why = "recovered state matches no crash-consistent serialization";
    return v;
  }

  // Lock-order fallback for large histories: committed effects in the order
  // their CommitStarted events fired (every write lock is held at that point,
  // so conflicting commits appear in serialization order; the Committed
  // response fires after lock release and can invert). Read-only commits have
  // no CommitStarted and no effects; they sort last, harmlessly.
  std::sort(committed.begin(), committed.end(), [](const TxUnit& a, const TxUnit& b) {
    return a.commit_started_idx < b.commit_started_idx;
  });
  std::unordered_map<WordIdx, Word> base;
  std::vector<uint64_t> base_witness;
  for (const TxUnit& u : committed) {
    if (u.ws)
      for (const auto& [a, w] : *u.ws) base[a] = w;
    base_witness.push_back(u.attempt);
  }
  for (uint64_t mask = 0; mask < (uint64_t(1) << inflight.size()); mask++) {
    std::unordered_map<WordIdx, Word> state = base;
    std::vector<uint64_t> witness = base_witness;
    for (size_t b = 0; b < inflight.size(); b++) {
      if (!(mask & (uint64_t(1) << b))) continue;
      if (inflight[b].ws)
        for (const auto& [a, w] : *inflight[b].ws) state[a] = w;
      witness.push_back(inflight[b].attempt);
    }
    if (leaf(state)) {
      v.ok = true;
      v.witness = std::move(witness);
      return v;
    }
  }
  v.why = "recovered state matches no commit-order serialization with any in-flight subset";
  return v;
}

ProgressVerdict check_progress(const TxStats& stats, uint32_t max_hw_attempts, Variant variant,
                               const std::vector<uint64_t>* commits_per_round) {
  ProgressVerdict v;
  auto over_cap = [&](const std::vector<uint64_t>& hist, const char* name) {
    for (size_t i = max_hw_attempts + 1; i < hist.size(); i++) {
      if (hist[i] != 0) {
        v.ok = false;
        v.why = std::string(name) + ": a transaction consumed more hardware attempts than the cap";
        return true;
      }
    }
    return false;
  };
  if (over_cap(stats.attempts_then_hw, "attempts_then_hw")) return v;
  if (over_cap(stats.attempts_then_sw, "attempts_then_sw")) return v;
  if (stats.sw_aborts_with_witness != stats.sw_aborts) {
    v.ok = false;
    v.why = "a software abort carried no conflict witness";
    return v;
  }
  if (variant == Variant::StrongProg && commits_per_round) {
    for (size_t r = 0; r < commits_per_round->size(); r++) {
      if ((*commits_per_round)[r] == 0) {
        v.ok = false;
        v.why = "strongly progressive run had a round with no commit (round " + std::to_string(r) +
                ")";
        return v;
      }
    }
  }
  return v;
}

// ===========================================================================
// Crash fuzzing
// ===========================================================================

namespace {

constexpr WordIdx kFuzzHashBase = 1;
constexpr uint64_t kFuzzHashBuckets = 61;
constexpr WordIdx kFuzzTreeRoot = 1;

struct FuzzOp {
  int kind = 0;  // 0 contains, 1 insert, 2 remove
  Word key = 0;
  Word value = 0;
};

FuzzOp fuzz_op(const FuzzConfig& cfg, uint64_t seed, ThreadId tid, uint32_t j) {
  uint64_t u = mix64(seed * 0x9E3779B97F4A7C15ull ^ (uint64_t(tid) * 0x100000001B3ull) ^
                     (uint64_t(j) + 0x1234567ull));
  FuzzOp op;
  if (u % 100 < cfg.read_pct)
    op.kind = 0;
  else
    op.kind = ((u >> 8) & 1) ? 1 : 2;
  op.key = (u >> 16) % cfg.key_range;
  op.value = mix64(u ^ 0xABCDEFull) | 1;
  return op;
}

TmOptions fuzz_opts(const FuzzConfig& cfg, uint64_t seed) {
  TmOptions o;
  o.heap.word_count = 8192;
  o.heap.thread_slots = cfg.threads;
  o.heap.eadr_mode = cfg.eadr_mode;
  if (cfg.bg_flush_p > 0.0) o.heap.bg = BgFlushPolicy::seeded(cfg.bg_flush_p, mix64(seed ^ 0xB61Full));
  o.locks.mode = cfg.lock_mode;
  o.locks.table_log2 = 8;
  o.mem.static_words = 128;
  o.variant = cfg.variant;
  o.max_hw_attempts = cfg.max_hw_attempts;
  o.htm.spurious_p = 0.02;
  o.htm.seed = mix64(seed ^ 0x5117ull);
  return o;
}

// Workload container interface over either structure, bound to one Tm.
struct FuzzContainer {
  std::unique_ptr<TxHashMap> map;
  std::unique_ptr<TxABTree> tree;

  FuzzContainer(Tm* tm, const std::string& structure) {
    if (structure == "hashmap")
      map = std::make_unique<TxHashMap>(tm, kFuzzHashBase, kFuzzHashBuckets);
    else if (structure == "abtree")
      tree = std::make_unique<TxABTree>(tm, kFuzzTreeRoot);
    else
      throw ContractViolation("unknown fuzz structure: " + structure);
  }

  void apply(ThreadId tid, const FuzzOp& op) {
    if (map) {
      if (op.kind == 0)
        (void)map->contains(tid, op.key);
      else if (op.kind == 1)
        (void)map->insert(tid, op.key, op.value);
      else
        (void)map->remove(tid, op.key);
    } else {
      if (op.kind == 0)
        (void)tree->contains(tid, op.key);
      else if (op.kind == 1)
        (void)tree->insert(tid, op.key, op.value);
      else
        (void)tree->remove(tid, op.key);
    }
  }

  std::vector<std::pair<Word, Word>> items() const { return map ? map->items() : tree->items(); }
  std::vector<LiveObject> live_nodes() const {
    return map ? map->live_nodes() : tree->live_nodes();
  }
  bool validate(std::string* why) const { return map ? map->validate(why) : tree->validate(why); }
};

// Seeded uniform interleaving; returns false if the pick budget ran out.
bool drive_random(ScheduleRunner& r, uint64_t seed, uint64_t max_picks = uint64_t(1) << 20) {
  Rng rng(mix64(seed ^ 0xD21Eull) | 1);
  for (uint64_t i = 0; i < max_picks; i++) {
    if (r.crashed()) return true;
    std::vector<ThreadId> tids = r.runnable_tids();
    if (tids.empty()) return true;
    r.step(tids[rng.below(tids.size())]);
  }
  return r.crashed() || r.runnable_tids().empty();
}

void apply_fuzz_op(std::map<Word, Word>& m, const FuzzOp& op) {
  if (op.kind == 1) {
    if (m.find(op.key) == m.end()) m.emplace(op.key, op.value);
  } else if (op.kind == 2) {
    m.erase(op.key);
  }
}

}  // namespace

FuzzReport crash_fuzz(const FuzzConfig& cfg, uint64_t seed_begin, uint64_t seed_count) {
  NVHALT_CHECK(cfg.threads >= 1 && cfg.threads <= 8);
  NVHALT_CHECK(cfg.structure == "hashmap" || cfg.structure == "abtree");
  FuzzReport report;

  for (uint64_t seed = seed_begin; seed < seed_begin + seed_count; seed++) {
    report.runs++;
    TmOptions opt = fuzz_opts(cfg, seed);
    auto fail = [&](const std::string& what) { report.findings.push_back({seed, what}); };

    auto build = [&](ScheduleRunner& r, std::shared_ptr<FuzzContainer>& c) {
      c = std::make_shared<FuzzContainer>(&r.tm(), cfg.structure);
      for (uint32_t t = 1; t <= cfg.threads; t++) {
        ScriptedTx s;
        s.tid = ThreadId(t);
        ScheduleRunner* rp = &r;
        std::shared_ptr<FuzzContainer> cc = c;
        FuzzConfig ccfg = cfg;
        s.body = [rp, cc, ccfg, seed, t]() {
          for (uint32_t j = 0; j < ccfg.ops_per_thread; j++) {
            cc->apply(ThreadId(t), fuzz_op(ccfg, seed, ThreadId(t), j));
            rp->boundary();
          }
        };
        r.add_script(std::move(s));
      }
    };

    // Pass 1: full run, no crash; counts the suspension points.
    uint64_t total_steps = 0;
    {
      ScheduleRunner r1(opt);
      std::shared_ptr<FuzzContainer> c1;
      build(r1, c1);
      if (!drive_random(r1, seed)) {
        fail("schedule pick budget exhausted on the crash-free pass");
        continue;
      }
      total_steps = r1.steps_taken();
      ScheduleResult res1 = r1.finish();
      bool all_done = true;
      for (const ThreadOutcome& o : res1.outcomes) all_done = all_done && o.script_done;
      if (!all_done) {
        fail("a workload thread did not finish on the crash-free pass");
        continue;
      }
    }
    NVHALT_CHECK(total_steps > 0);

    // Pass 2: identical run, crash at a seeded suspension point.
    CrashPlan plan;
    plan.enabled = true;
    plan.at_step = 1 + mix64(seed ^ 0xC0FFEEull) % total_steps;
    switch (seed % 3) {
      case 0: plan.policy = CrashPolicy::exclude_all(); break;
      case 1: plan.policy = CrashPolicy::include_all(); break;
      default: plan.policy = CrashPolicy::seeded(mix64(seed ^ 0xD00Dull)); break;
    }

    ScheduleRunner r2(opt);
    std::shared_ptr<FuzzContainer> c2;
    build(r2, c2);
    r2.set_crash_plan(plan);
    if (!drive_random(r2, seed)) {
      fail("schedule pick budget exhausted on the crash pass");
      continue;
    }
    ScheduleResult res = r2.finish();
    if (!res.crashed) {
      fail("planned crash point was never reached");
      continue;
    }
    report.crashes_injected++;

    if (res.stats.voluntary_aborts != 0) {
      fail("workload hit a voluntary abort (allocator exhausted?)");
      continue;
    }
    if (res.stats.poison_reads != 0) {
      fail("a transactional read returned the reclaim sentinel");
      continue;
    }

    // Recover into a fresh TM and rebuild the allocator from the reachable
    // nodes.
    TmOptions ropt = opt;
    ropt.record_history = false;
    ropt.heap.bg = BgFlushPolicy::off();
    Tm rec(ropt, res.image, {});
    FuzzContainer rc(&rec, cfg.structure);
    std::string why;
    if (!rc.validate(&why)) {
      fail("recovered structure invalid: " + why);
      continue;
    }
    rec.mem().rebuild_from_iterator(rc.live_nodes());
    MemAudit audit = rec.mem().audit();
    if (!audit.conserved) {
      fail("allocator conservation audit failed after recovery");
      continue;
    }

    // Map committed attempts back to operations: one committed attempt per
    // completed container operation, in program order per thread. Effects are
    // replayed in lock-serialization order, which is the order of the
    // CommitStarted events (emitted with every write lock held) — the
    // Committed response fires after lock release and can invert between two
    // racing commits. Read-only commits (lookups, no-op updates) have no
    // effect and no CommitStarted; they only consume their operation slot.
    size_t marker = crash_marker_index(res.history);
    auto scans = scan_attempts(res.history, marker);
    std::vector<std::pair<size_t, uint64_t>> committed_order;  // (event idx, attempt)
    for (const auto& [attempt, a] : scans)
      if (a.committed_idx != SIZE_MAX) committed_order.emplace_back(a.committed_idx, attempt);
    std::sort(committed_order.begin(), committed_order.end());

    std::unordered_map<uint64_t, const AttemptScan*> scan_of;
    for (const auto& [attempt, a] : scans) scan_of[attempt] = &a;

    struct WriterRec {
      size_t cs_idx;
      FuzzOp op;
      const std::vector<std::pair<WordIdx, Word>>* ws;
    };
    std::vector<uint32_t> next_op(cfg.threads + 1, 0);
    std::vector<WriterRec> writers;
    bool mapping_ok = true;
    for (const auto& [idx, attempt] : committed_order) {
      (void)idx;
      const AttemptScan& a = *scan_of[attempt];
      if (a.tid < 1 || a.tid > cfg.threads || next_op[a.tid] >= cfg.ops_per_thread) {
        mapping_ok = false;
        break;
      }
      FuzzOp op = fuzz_op(cfg, seed, a.tid, next_op[a.tid]++);
      if (const auto* ws = res.history.writes_of(attempt)) {
        if (a.commit_started_idx == SIZE_MAX) {
          mapping_ok = false;
          break;
        }
        writers.push_back({a.commit_started_idx, op, ws});
      }
      report.committed_ops++;
    }
    if (!mapping_ok) {
      fail("committed attempts do not map onto the operation streams");
      continue;
    }
    std::sort(writers.begin(), writers.end(),
              [](const WriterRec& x, const WriterRec& y) { return x.cs_idx < y.cs_idx; });
    std::map<Word, Word> shadow;
    std::vector<Word> shadow_static(opt.mem.static_words, 0);
    for (const WriterRec& w : writers) {
      apply_fuzz_op(shadow, w.op);
      for (const auto& [wi, v] : *w.ws)
        if (wi < opt.mem.static_words) shadow_static[wi] = v;
    }

    struct Inflight {
      FuzzOp op;
      const std::vector<std::pair<WordIdx, Word>>* ws;
    };
    std::vector<Inflight> inflight;
    bool inflight_ok = true;
    for (const auto& [attempt, a] : scans) {
      if (a.committed_idx != SIZE_MAX || a.commit_started_idx == SIZE_MAX ||
          a.aborted_idx != SIZE_MAX)
        continue;
      const auto* ws = res.history.writes_of(attempt);
      if (!ws || a.tid < 1 || a.tid > cfg.threads || next_op[a.tid] >= cfg.ops_per_thread) {
        inflight_ok = false;
        break;
      }
      inflight.push_back({fuzz_op(cfg, seed, a.tid, next_op[a.tid]), ws});
    }
    if (!inflight_ok) {
      fail("an in-flight attempt has no write set or no pending operation");
      continue;
    }
    report.inflight_ops += inflight.size();
    if (inflight.size() > 8) {
      fail("implausibly many in-flight transactions");
      continue;
    }

    // The recovered contents must equal the committed prefix plus some subset
    // of the in-flight operations — both the key/value view and the static
    // root words.
    std::vector<std::pair<Word, Word>> got = rc.items();
    std::sort(got.begin(), got.end());
    std::vector<Word> got_static(opt.mem.static_words, 0);
    for (uint64_t w = 0; w < opt.mem.static_words; w++)
      got_static[w] = rec.heap().peek_word(WordIdx(w));

    bool matched = false;
    for (uint64_t mask = 0; mask < (uint64_t(1) << inflight.size()) && !matched; mask++) {
      std::map<Word, Word> m = shadow;
      std::vector<Word> st = shadow_static;
      for (size_t b = 0; b < inflight.size(); b++) {
        if (!(mask & (uint64_t(1) << b))) continue;
        apply_fuzz_op(m, inflight[b].op);
        for (const auto& [w, v] : *inflight[b].ws)
          if (w < opt.mem.static_words) st[w] = v;
      }
      if (st != got_static) continue;
      std::vector<std::pair<Word, Word>> want(m.begin(), m.end());
      matched = want == got;
    }
    if (!matched) {
      if (std::getenv("NVHALT_FUZZ_DEBUG")) {
        std::fprintf(stderr, "[fuzz %llu] crash at step %llu, %zu committed, %zu inflight\n",
                     (unsigned long long)seed, (unsigned long long)plan.at_step,
                     committed_order.size(), inflight.size());
        std::fprintf(stderr, "  committed shadow (%zu items):", shadow.size());
        for (const auto& [k, v] : shadow)
          std::fprintf(stderr, " %llu=%llu", (unsigned long long)k, (unsigned long long)v);
        std::fprintf(stderr, "\n  recovered (%zu items):", got.size());
        for (const auto& [k, v] : got)
          std::fprintf(stderr, " %llu=%llu", (unsigned long long)k, (unsigned long long)v);
        std::fprintf(stderr, "\n");
        for (const Inflight& f : inflight)
          std::fprintf(stderr, "  inflight op kind=%d key=%llu value=%llu ws=%zu\n", f.op.kind,
                       (unsigned long long)f.op.key, (unsigned long long)f.op.value,
                       f.ws->size());
        for (uint64_t w = 0; w < opt.mem.static_words; w++)
          if (shadow_static[w] != got_static[w])
            std::fprintf(stderr, "  static word %llu: shadow=%llu recovered=%llu\n",
                         (unsigned long long)w, (unsigned long long)shadow_static[w],
                         (unsigned long long)got_static[w]);
      }
      fail("recovered contents match no committed-plus-inflight-subset candidate");
    }
  }
  return report;
}

// ===========================================================================
// Negative-configuration demonstrations
// ===========================================================================

SerialVerdict demo_uninstrumented_hw_reads(bool full_config) {
  TmOptions opt;
  opt.heap.word_count = 64;
  opt.heap.thread_slots = 2;
  opt.locks.mode = LockMode::Colocated;
  opt.mem.static_words = 16;
  opt.no_lock_instrumentation = !full_config;

  constexpr WordIdx X = 3, Y = 5, Z = 7;
  ScriptedTx t1;
  t1.tid = 1;
  t1.steps = {step_begin_sw(), step_write(X, 1), step_write(Y, 1), step_commit()};
  ScriptedTx t2;
  t2.tid = 2;
  t2.max_rounds = 3;
  t2.steps = {step_begin_hw(), step_read(X), step_read(Y), step_write(Z, 1), step_commit()};

  ScheduleRunner r(opt);
  r.add_script(t1);
  r.add_script(t2);
  // Suspend the software committer after its first word reached the heap but
  // before the second; run the hardware reader across the gap; let the
  // committer finish.
  r.run_until(1, PipelinePoint::WritebackDone);
  r.run_to_completion(2);
  r.run_to_completion(1);
  ScheduleResult res = r.finish();
  return check_serializable(res.history);
}

DurableVerdict demo_unlocked_publication(bool full_config) {
  TmOptions opt;
  opt.heap.word_count = 64;
  opt.heap.thread_slots = 2;
  opt.locks.mode = LockMode::Colocated;
  opt.mem.static_words = 16;
  opt.no_persist_locking = !full_config;

  constexpr WordIdx X = 3, Y = 5;
  ScriptedTx t1;
  t1.tid = 1;
  t1.steps = {step_begin_hw(), step_write(X, 5), step_commit()};
  ScriptedTx t2;
  t2.tid = 2;
  t2.max_rounds = 2;
  t2.steps = {step_begin_sw(), step_read(X), step_write(Y, 5), step_commit()};

  ScheduleRunner r(opt);
  r.add_script(t1);
  r.add_script(t2);
  // Suspend the hardware committer right after publication, before any of its
  // slots or its version counter persist; run a software transaction that
  // reads the published value and commits durably; then crash.
  r.run_until(1, PipelinePoint::HwPublished);
  r.run_to_completion(2);
  r.crash_now(CrashPolicy::exclude_all());
  ScheduleResult res = r.finish();

  TmOptions ropt = opt;
  ropt.record_history = false;
  Tm rec(ropt, res.image, {});
  return check_durable(res.history,
                       [&rec](WordIdx a) { return rec.heap().peek_word(a); });
}

LivelockRoundReport run_crossing_writers(Variant variant, uint32_t rounds) {
  NVHALT_CHECK(rounds >= 1);
  TmOptions opt;
  opt.heap.word_count = 64;
  opt.heap.thread_slots = 2;
  opt.locks.mode = LockMode::Colocated;
  opt.mem.static_words = 16;
  opt.variant = variant;

  constexpr WordIdx A = 3, B = 5;
  ScriptedTx t1;
  t1.tid = 1;
  t1.max_rounds = rounds;
  t1.steps = {step_begin_sw(), step_write(A, 1), step_write(B, 1), step_commit()};
  ScriptedTx t2;
  t2.tid = 2;
  t2.max_rounds = rounds;
  t2.steps = {step_begin_sw(), step_write(B, 2), step_write(A, 2), step_commit()};

  ScheduleRunner r(opt);
  r.add_script(t1);
  r.add_script(t2);

  LivelockRoundReport rep;
  for (uint32_t round = 0; round < rounds; round++) {
    if (r.thread_done(1) && r.thread_done(2)) break;
    uint64_t c_before[2] = {r.outcome(0).commits, r.outcome(1).commits};
    uint64_t a_before[2] = {r.outcome(0).aborts, r.outcome(1).aborts};
    auto resolved = [&](int i) {
      return r.outcome(size_t(i)).commits != c_before[i] ||
             r.outcome(size_t(i)).aborts != a_before[i];
    };
    // Lockstep: both to the commit gate, both to their first lock
    // acquisition, then whoever is still undecided runs to a verdict.
    for (int i = 0; i < 2; i++) {
      ThreadId t = ThreadId(i + 1);
      if (!r.thread_done(t) && !resolved(i)) r.run_until(t, PipelinePoint::CommitEntered);
    }
    for (int i = 0; i < 2; i++) {
      ThreadId t = ThreadId(i + 1);
      if (!r.thread_done(t) && !resolved(i)) r.run_until(t, PipelinePoint::LockAcquired);
    }
    for (int i = 0; i < 2; i++) {
      ThreadId t = ThreadId(i + 1);
      while (!r.thread_done(t) && !resolved(i)) r.run_to_resolution(t);
    }
    rep.commits_per_round.push_back((r.outcome(0).commits - c_before[0]) +
                                    (r.outcome(1).commits - c_before[1]));
    rep.aborts_per_round.push_back((r.outcome(0).aborts - a_before[0]) +
                                   (r.outcome(1).aborts - a_before[1]));
    rep.rounds++;
  }
  (void)r.finish();
  return rep;
}

OrderingDemoReport linked_list_ordering_demo(uint64_t seed) {
  OrderingDemoReport rep;
  constexpr WordIdx kHead = 1;
  constexpr uint32_t kNodes = 3;
  auto node_addr = [](uint32_t k) { return WordIdx(8 * (k + 1)); };  // {value, next}
  auto node_value = [seed](uint32_t k) { return mix64(seed ^ (k + 1)) | 1; };

  // Raw version: plain stores, no flush discipline; an adversarial background
  // flusher persists only the head pointer's line. After a crash the head
  // points at a node whose contents never reached the medium.
  {
    HeapOptions ho;
    ho.word_count = 256;
    ho.thread_slots = 1;
    PHeap probe_heap(ho);  // only to compute the head's line number
    uint32_t head_line = probe_heap.vmem_addr_to_pmem(kHead);
    ho.bg = BgFlushPolicy::adversarial([head_line](uint32_t line) { return line == head_line; });
    PHeap heap(ho);
    Word prev_head = 0;
    for (uint32_t k = 0; k < kNodes; k++) {
      WordIdx n = node_addr(k);
      heap.store(1, n, node_value(k));
      heap.store(1, n + 1, prev_head);
      heap.store(1, kHead, n);  // head updated; node words still unflushed
      prev_head = n;
    }
    PersistentImage img = heap.crash(CrashPolicy::exclude_all());
    // A raw program has no recovery protocol: the medium's word values are
    // the state.
    Word cur = img.slots[kHead].new_v;
    uint32_t hops = 0;
    while (cur != 0 && hops++ < 8) {
      bool known = false;
      for (uint32_t k = 0; k < kNodes; k++)
        if (cur == node_addr(k) && img.slots[WordIdx(cur)].new_v == node_value(k)) known = true;
      if (!known) {
        rep.bad_order_violation = true;
        rep.detail = "raw: head reaches a node whose contents never persisted";
        break;
      }
      cur = img.slots[WordIdx(cur) + 1].new_v;
    }
  }

  // Transactional version: the same appends as transactions under the same
  // adversary, crashing in the middle of the last commit. Recovery keeps each
  // append all-or-nothing.
  {
    TmOptions opt;
    opt.heap.word_count = 256;
    opt.heap.thread_slots = 1;
    opt.locks.mode = LockMode::Colocated;
    opt.mem.static_words = 64;
    {
      PHeap probe_heap(opt.heap);
      uint32_t head_line = probe_heap.vmem_addr_to_pmem(kHead);
      opt.heap.bg =
          BgFlushPolicy::adversarial([head_line](uint32_t line) { return line == head_line; });
    }

    ScriptedTx t1;
    t1.tid = 1;
    for (uint32_t k = 0; k < kNodes; k++) {
      WordIdx n = node_addr(k);
      t1.steps.push_back(step_begin());
      t1.steps.push_back(step_write(n, node_value(k)));
      t1.steps.push_back(step_write(n + 1, k == 0 ? 0 : node_addr(k - 1)));
      t1.steps.push_back(step_write(kHead, n));
      t1.steps.push_back(step_commit());
    }
    ScheduleRunner r(opt);
    r.add_script(t1);
    for (uint32_t k = 0; k < kNodes; k++) {
      // Advance to the k-th append's version write (run_until reports the
      // previous append's commit as Resolved on the way).
      for (;;) {
        ScheduleRunner::Stop s = r.run_until(1, PipelinePoint::PVerWritten);
        if (s == ScheduleRunner::Stop::AtPoint) break;
        NVHALT_CHECK(s == ScheduleRunner::Stop::Resolved);
      }
    }
    r.crash_now(CrashPolicy::exclude_all());
    ScheduleResult res = r.finish();

    TmOptions ropt = opt;
    ropt.record_history = false;
    ropt.heap.bg = BgFlushPolicy::off();
    Tm rec(ropt, res.image, {});
    Word cur = rec.heap().peek_word(kHead);
    uint32_t hops = 0;
    while (cur != 0 && hops++ < 8) {
      bool known = false;
      for (uint32_t k = 0; k < kNodes; k++)
        if (cur == node_addr(k) && rec.heap().peek_word(WordIdx(cur)) == node_value(k))
          known = true;
      if (!known) {
        rep.tm_violation = true;
        rep.detail += std::string(rep.detail.empty() ? "" : "; ") +
                      "transactional: head reaches an unpersisted node";
        break;
      }
      cur = rec.heap().peek_word(WordIdx(cur) + 1);
    }
  }
  return rep;
}

// ===========================================================================
// Scenario text
// ===========================================================================

namespace {

using nlohmann::json;

json serial_to_json(const SerialVerdict& v) {
  json j;
  j["sat"] = v.sat;
  j["bound_exceeded"] = v.bound_exceeded;
  j["witness"] = v.witness;
  j["why"] = v.why;
  return j;
}

json durable_to_json(const DurableVerdict& v) {
  json j;
  j["ok"] = v.ok;
  j["bound_exceeded"] = v.bound_exceeded;
  j["witness"] = v.witness;
  j["why"] = v.why;
  return j;
}

bool parse_addr(const std::string& tok, WordIdx* out) {
  if (tok.size() < 2 || tok[0] != 'a') return false;
  uint64_t v = 0;
  for (size_t i = 1; i < tok.size(); i++) {
    if (tok[i] < '0' || tok[i] > '9') return false;
    v = v * 10 + uint64_t(tok[i] - '0');
  }
  *out = WordIdx(v);
  return true;
}

}  // namespace

std::string run_scenario_text(const std::string& text, const TmOptions& opt_in) {
  TmOptions opt = opt_in;
  opt.record_history = true;
  Tm tm(opt);

  json out;
  out["lines"] = json::array();
  bool crashed = false;
  PersistentImage image;
  std::unordered_map<uint32_t, WordIdx> last_alloc_of;

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    lineno++;
    std::string line = raw;
    if (size_t hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank / comment-only

    json entry;
    entry["n"] = lineno;
    entry["op"] = line;
    std::string result = "ok";

    if (crashed) {
      entry["result"] = "error: after crash";
      out["lines"].push_back(entry);
      continue;
    }

    try {
      if (tok == "crash") {
        std::string p;
        CrashPolicy policy = CrashPolicy::exclude_all();
        if (ls >> p) {
          if (p == "include") {
            policy = CrashPolicy::include_all();
          } else if (p == "seed") {
            uint64_t s = 0;
            ls >> s;
            policy = CrashPolicy::seeded(s);
          } else if (p != "exclude") {
            result = "error: unknown crash policy '" + p + "'";
          }
        }
        if (result == "ok") {
          tm.history().crash_marker();
          image = tm.heap().crash(policy);
          crashed = true;
          result = "crashed";
        }
      } else if (tok.size() >= 2 && tok[0] == 'T') {
        uint32_t tid = 0;
        bool tid_ok = true;
        for (size_t i = 1; i < tok.size(); i++) {
          if (tok[i] < '0' || tok[i] > '9') tid_ok = false;
          tid = tid * 10 + uint32_t(tok[i] - '0');
        }
        std::string op;
        if (!tid_ok || tid < 1 || tid > opt.heap.thread_slots) {
          result = "error: bad thread id";
        } else if (!(ls >> op)) {
          result = "error: missing operation";
        } else {
          ThreadId t = ThreadId(tid);
          auto ensure_open = [&] {
            if (!tm.in_attempt(t)) tm.begin(t);
          };
          if (op == "begin") {
            std::string path;
            if (tm.in_attempt(t)) {
              result = "error: transaction already open";
            } else if (ls >> path) {
              if (path == "hw")
                tm.begin_path(t, true);
              else if (path == "sw")
                tm.begin_path(t, false);
              else
                result = "error: unknown path '" + path + "'";
            } else {
              tm.begin(t);
            }
            if (result == "ok") result = tm.attempt_is_hw(t) ? "ok (hw)" : "ok (sw)";
          } else if (op == "read") {
            std::string a;
            WordIdx addr = 0;
            if (!(ls >> a) || !parse_addr(a, &addr)) {
              result = "error: expected address like a3";
            } else {
              ensure_open();
              Word v = tm.read(t, addr);
              entry["value"] = v;
            }
          } else if (op == "write") {
            std::string a;
            WordIdx addr = 0;
            uint64_t v = 0;
            if (!(ls >> a) || !parse_addr(a, &addr) || !(ls >> v)) {
              result = "error: expected address and value";
            } else {
              ensure_open();
              tm.write(t, addr, v);
            }
          } else if (op == "alloc") {
            uint64_t bytes = 64;
            ls >> bytes;
            ensure_open();
            std::optional<WordIdx> base = tm.alloc(t, uint32_t(bytes));
            if (base) {
              last_alloc_of[tid] = *base;
              entry["base"] = *base;
            } else {
              result = "error: allocation failed";
            }
          } else if (op == "free") {
            std::string a;
            WordIdx addr = 0;
            if (!(ls >> a)) {
              result = "error: expected address or 'last'";
            } else if (a == "last") {
              auto it = last_alloc_of.find(tid);
              if (it == last_alloc_of.end())
                result = "error: no previous allocation";
              else
                addr = it->second;
            } else if (!parse_addr(a, &addr)) {
              result = "error: expected address like a3";
            }
            if (result == "ok") {
              ensure_open();
              tm.free_object(t, addr);
            }
          } else if (op == "commit") {
            if (!tm.in_attempt(t))
              result = "error: no open transaction";
            else
              tm.commit(t);
          } else if (op == "abort") {
            if (!tm.in_attempt(t))
              result = "error: no open transaction";
            else
              tm.cancel(t);
          } else {
            result = "error: unknown operation '" + op + "'";
          }
        }
      } else {
        result = "error: expected T<i> or crash";
      }
    } catch (const TxAborted& a) {
      result = std::string("aborted: ") +
               (a.hw_path ? to_string(a.hw_kind) : to_string(a.sw_reason));
    } catch (const ContractViolation& e) {
      result = std::string("error: ") + e.what();
    }
    entry["result"] = result;
    out["lines"].push_back(entry);
  }

  RecordedHistory rh;
  rh.events = tm.history().events;
  rh.ws_attempt = tm.history().ws_attempt;
  rh.ws_writes = tm.history().ws_writes;

  out["serializable"] = serial_to_json(check_serializable(rh));
  if (crashed) {
    TmOptions ropt = opt;
    ropt.record_history = false;
    ropt.heap.bg = BgFlushPolicy::off();
    Tm rec(ropt, image, {});
    out["durable"] =
        durable_to_json(check_durable(rh, [&rec](WordIdx a) { return rec.heap().peek_word(a); }));
  } else {
    out["durable"] = nullptr;
  }

  TxStats st = tm.total_stats();
  json stats;
  stats["commits_hw"] = st.commits_hw;
  stats["commits_sw"] = st.commits_sw;
  stats["sw_aborts"] = st.sw_aborts;
  stats["hw_aborts"] = st.hw_aborts_total();
  stats["voluntary_aborts"] = st.voluntary_aborts;
  out["stats"] = stats;
  return out.dump(2);
}

std::string run_scenario_text(const std::string& text) {
  TmOptions opt;
  opt.heap.word_count = 1024;
  opt.heap.thread_slots = 8;
  opt.locks.mode = LockMode::Colocated;
  opt.mem.static_words = 256;
  return run_scenario_text(text, opt);
}

}  // namespace nvhalt
