#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nvhalt/common.hpp"
#include "nvhalt/htmsim.hpp"

namespace nvhalt {

// Why a software-path attempt aborted.
enum class SwAbortReason : uint8_t { WriteLockBusy, ReadValidation, HtxConflict };

inline const char* to_string(SwAbortReason r) {
  switch (r) {
    case SwAbortReason::WriteLockBusy: return "WriteLockBusy";
    case SwAbortReason::ReadValidation: return "ReadValidation";
    case SwAbortReason::HtxConflict: return "HtxConflict";
  }
  return "?";
}

// Every software abort names the conflicting lock it observed: which lock, who
// held it (or what version it moved to), and what the aborting transaction
// expected. This is the progress evidence the harness checks.
struct ConflictWitness {
  LockIdx lock = 0;
  uint64_t observed_packed = 0;  // {owner, sver} seen at failure
  uint64_t observed_hver = 0;
  uint64_t expected_sver = 0;    // encounter-time version
};

struct TxStats {
  // Committed transactions by path (read-only = no write set at commit).
  uint64_t commits_hw = 0;
  uint64_t commits_sw = 0;
  uint64_t commits_hw_readonly = 0;
  uint64_t commits_sw_readonly = 0;
  uint64_t voluntary_aborts = 0;

  // Hardware attempt failures by kind; User covers lock-busy xaborts.
  std::array<uint64_t, 5> hw_aborts{};  // indexed by HwAbortKind

  // Software attempt failures.
  uint64_t sw_aborts = 0;
  uint64_t sw_aborts_with_witness = 0;
  std::array<uint64_t, 3> sw_abort_reason{};  // indexed by SwAbortReason

  // Histogram over hardware attempts consumed per finished transaction,
  // split by the committing path. Index = number of hardware attempts.
  std::vector<uint64_t> attempts_then_hw;  // committed on hw attempt number `index`
  std::vector<uint64_t> attempts_then_sw;  // fell back after `index` hw attempts

  // Strongly progressive validation accounting.
  uint64_t validations_skipped = 0;  // gClock CAS won: hver check only
  uint64_t validations_full = 0;

  // Set-size accounting: overall and at-abort.
  uint64_t rs_sum = 0, rs_max = 0, rs_n = 0;
  uint64_t ws_sum = 0, ws_max = 0, ws_n = 0;
  uint64_t rs_abort_sum = 0, rs_abort_max = 0, rs_abort_n = 0;
  uint64_t ws_abort_sum = 0, ws_abort_max = 0, ws_abort_n = 0;

  uint64_t poison_reads = 0;  // transactional reads that returned the reclaim sentinel

  void record_sets(uint64_t rs, uint64_t ws, bool at_abort) {
    rs_sum += rs;
    ws_sum += ws;
    rs_n++;
    ws_n++;
    if (rs > rs_max) rs_max = rs;
    if (ws > ws_max) ws_max = ws;
    if (at_abort) {
      rs_abort_sum += rs;
      ws_abort_sum += ws;
      rs_abort_n++;
      ws_abort_n++;
      if (rs > rs_abort_max) rs_abort_max = rs;
      if (ws > ws_abort_max) ws_abort_max = ws;
    }
  }

  void record_finish(uint32_t hw_attempts_used, bool committed_hw, uint32_t cap) {
    auto& h = committed_hw ? attempts_then_hw : attempts_then_sw;
    if (h.size() <= cap) h.resize(cap + 1, 0);
    h[hw_attempts_used <= cap ? hw_attempts_used : cap]++;
  }

  uint64_t hw_aborts_total() const {
    uint64_t s = 0;
    for (uint64_t v : hw_aborts) s += v;
    return s;
  }
  uint64_t commits_total() const { return commits_hw + commits_sw; }
  uint64_t aborts_total() const { return hw_aborts_total() + sw_aborts + voluntary_aborts; }

  void merge(const TxStats& o) {
    commits_hw += o.commits_hw;
    commits_sw += o.commits_sw;
    commits_hw_readonly += o.commits_hw_readonly;
    commits_sw_readonly += o.commits_sw_readonly;
    voluntary_aborts += o.voluntary_aborts;
    for (size_t i = 0; i < hw_aborts.size(); i++) hw_aborts[i] += o.hw_aborts[i];
    sw_aborts += o.sw_aborts;
    sw_aborts_with_witness += o.sw_aborts_with_witness;
    for (size_t i = 0; i < sw_abort_reason.size(); i++) sw_abort_reason[i] += o.sw_abort_reason[i];
    if (attempts_then_hw.size() < o.attempts_then_hw.size())
      attempts_then_hw.resize(o.attempts_then_hw.size(), 0);
    for (size_t i = 0; i < o.attempts_then_hw.size(); i++) attempts_then_hw[i] += o.attempts_then_hw[i];
    if (attempts_then_sw.size() < o.attempts_then_sw.size())
      attempts_then_sw.resize(o.attempts_then_sw.size(), 0);
    for (size_t i = 0; i < o.attempts_then_sw.size(); i++) attempts_then_sw[i] += o.attempts_then_sw[i];
    validations_skipped += o.validations_skipped;
    validations_full += o.validations_full;
    rs_sum += o.rs_sum;
    rs_n += o.rs_n;
    ws_sum += o.ws_sum;
    ws_n += o.ws_n;
    if (o.rs_max > rs_max) rs_max = o.rs_max;
    if (o.ws_max > ws_max) ws_max = o.ws_max;
    rs_abort_sum += o.rs_abort_sum;
    rs_abort_n += o.rs_abort_n;
    ws_abort_sum += o.ws_abort_sum;
    ws_abort_n += o.ws_abort_n;
    if (o.rs_abort_max > rs_abort_max) rs_abort_max = o.rs_abort_max;
    if (o.ws_abort_max > ws_abort_max) ws_abort_max = o.ws_abort_max;
    poison_reads += o.poison_reads;
  }
};

}  // namespace nvhalt
