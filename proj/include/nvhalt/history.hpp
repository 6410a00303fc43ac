#pragma once

#include <mutex>
#include <vector>

#include "nvhalt/common.hpp"
#include "nvhalt/htmsim.hpp"
#include "nvhalt/stats.hpp"

namespace nvhalt {

// Linear event log of one run. Each transaction attempt gets a globally unique
// id; the serializability and durability checkers treat each committing (or
// mid-commit) attempt as one transaction.

enum class EventKind : uint8_t {
  AttemptBegin,
  Read,          // returned value
  Write,         // buffered value (final values travel with CommitStarted)
  CommitStarted, // write set frozen; lock acquisition about to begin
  Committed,
  Aborted,
  CrashMarker,
};

struct HistEvent {
  EventKind kind;
  uint64_t attempt = 0;
  ThreadId tid = 0;
  bool hw_path = false;
  WordIdx addr = 0;
  Word value = 0;
};

struct History {
  std::vector<HistEvent> events;
  // Frozen write sets keyed by attempt id (parallel arrays, appended at
  // CommitStarted).
  std::vector<uint64_t> ws_attempt;
  std::vector<std::vector<std::pair<WordIdx, Word>>> ws_writes;

  std::mutex mu;
  uint64_t next_attempt = 1;

  uint64_t begin_attempt(ThreadId tid, bool hw) {
    std::lock_guard<std::mutex> g(mu);
    uint64_t id = next_attempt++;
    events.push_back({EventKind::AttemptBegin, id, tid, hw, 0, 0});
    return id;
  }
  void read(uint64_t attempt, ThreadId tid, WordIdx a, Word v) {
    std::lock_guard<std::mutex> g(mu);
    events.push_back({EventKind::Read, attempt, tid, false, a, v});
  }
  void write(uint64_t attempt, ThreadId tid, WordIdx a, Word v) {
    std::lock_guard<std::mutex> g(mu);
    events.push_back({EventKind::Write, attempt, tid, false, a, v});
  }
  void commit_started(uint64_t attempt, ThreadId tid,
                      std::vector<std::pair<WordIdx, Word>> writes) {
    std::lock_guard<std::mutex> g(mu);
    events.push_back({EventKind::CommitStarted, attempt, tid, false, 0, 0});
    ws_attempt.push_back(attempt);
    ws_writes.push_back(std::move(writes));
  }
  void committed(uint64_t attempt, ThreadId tid) {
    std::lock_guard<std::mutex> g(mu);
    events.push_back({EventKind::Committed, attempt, tid, false, 0, 0});
  }
  void aborted(uint64_t attempt, ThreadId tid) {
    std::lock_guard<std::mutex> g(mu);
    events.push_back({EventKind::Aborted, attempt, tid, false, 0, 0});
  }
  void crash_marker() {
    std::lock_guard<std::mutex> g(mu);
    events.push_back({EventKind::CrashMarker, 0, 0, false, 0, 0});
  }

  const std::vector<std::pair<WordIdx, Word>>* writes_of(uint64_t attempt) const {
    for (size_t i = 0; i < ws_attempt.size(); i++)
      if (ws_attempt[i] == attempt) return &ws_writes[i];
    return nullptr;
  }
};

}  // namespace nvhalt
