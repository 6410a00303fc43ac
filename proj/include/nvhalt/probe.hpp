#pragma once

#include "nvhalt/common.hpp"

namespace nvhalt {

// Instrumentation points between every persistence- and concurrency-relevant
// step of the commit pipelines. The scripted scheduler yields at each probe;
// crash injection throws through one.
enum class PipelinePoint : uint8_t {
  TxBeginDone,
  ReadDone,
  WriteBuffered,
  CommitEntered,   // write set frozen, before lock acquisition
  LockAcquired,    // per lock
  ClockCasDone,    // strongly progressive variant only
  Validated,
  HwPublished,     // hardware path: immediately after successful xend
  SlotWritten,     // per write entry
  SlotFlushed,     // per write entry
  WritebackDone,   // per write entry (software path)
  DataFenced,
  PVerWritten,
  PVerFlushed,
  PVerFenced,      // durability point: state is "post" from here on
  LockReleased,    // per lock
  CommitDone,
  AbortDone,
};

inline const char* to_string(PipelinePoint p) {
  switch (p) {
    case PipelinePoint::TxBeginDone: return "TxBeginDone";
    case PipelinePoint::ReadDone: return "ReadDone";
    case PipelinePoint::WriteBuffered: return "WriteBuffered";
    case PipelinePoint::CommitEntered: return "CommitEntered";
    case PipelinePoint::LockAcquired: return "LockAcquired";
    case PipelinePoint::ClockCasDone: return "ClockCasDone";
    case PipelinePoint::Validated: return "Validated";
    case PipelinePoint::HwPublished: return "HwPublished";
    case PipelinePoint::SlotWritten: return "SlotWritten";
    case PipelinePoint::SlotFlushed: return "SlotFlushed";
    case PipelinePoint::WritebackDone: return "WritebackDone";
    case PipelinePoint::DataFenced: return "DataFenced";
    case PipelinePoint::PVerWritten: return "PVerWritten";
    case PipelinePoint::PVerFlushed: return "PVerFlushed";
    case PipelinePoint::PVerFenced: return "PVerFenced";
    case PipelinePoint::LockReleased: return "LockReleased";
    case PipelinePoint::CommitDone: return "CommitDone";
    case PipelinePoint::AbortDone: return "AbortDone";
  }
  return "?";
}

// Thrown by a probe to model power failure at that step. Only the crash
// harness throws it; the TM never catches it internally.
struct CrashRequested {};

struct Probe {
  virtual ~Probe() = default;
  virtual void at(PipelinePoint p, ThreadId tid) = 0;
};

}  // namespace nvhalt
