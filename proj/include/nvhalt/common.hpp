#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace nvhalt {

using Word = uint64_t;
// Heap addresses are word indices into the transactional heap.
using WordIdx = uint32_t;
using ThreadId = uint16_t;   // 0 = "no owner"; real threads are 1-based
using LockIdx = uint32_t;

inline constexpr uint32_t kLineBytes = 64;
inline constexpr uint32_t kVerBits = 48;   // low bits of a packed word
inline constexpr uint64_t kVerMask = (uint64_t(1) << kVerBits) - 1;

// {tid | seq} packing shared by versioned locks and persistent version stamps:
// tid in the high 16 bits, 48-bit counter in the low bits.
constexpr uint64_t pack_tid_ver(ThreadId tid, uint64_t ver) {
  return (uint64_t(tid) << kVerBits) | (ver & kVerMask);
}
constexpr ThreadId packed_tid(uint64_t packed) { return ThreadId(packed >> kVerBits); }
constexpr uint64_t packed_ver(uint64_t packed) { return packed & kVerMask; }

struct ContractViolation : std::logic_error {
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

[[noreturn]] inline void contract_fail(const char* cond, const char* file, int line) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "contract violation: %s (%s:%d)", cond, file, line);
  throw ContractViolation(buf);
}

// Cheap caller-contract checks stay on in all builds; the simulator's value is
// catching misuse, not raw speed.
#define NVHALT_CHECK(cond)                                   \
  do {                                                       \
    if (!(cond)) ::nvhalt::contract_fail(#cond, __FILE__, __LINE__); \
  } while (0)

#ifdef NDEBUG
#define NVHALT_DCHECK(cond) ((void)0)
#else
#define NVHALT_DCHECK(cond) NVHALT_CHECK(cond)
#endif

// splitmix64: seeding and cheap stateless mixing.
constexpr uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Small deterministic RNG used everywhere nondeterminism is injected.
class Rng {
 public:
  explicit Rng(uint64_t seed = 1) : s_(seed ? seed : 0x853c49e6748fea9bull) {}
  uint64_t next() {
    uint64_t z = (s_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  // Uniform in [0, n)
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }
  // Bernoulli with probability p
  bool chance(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return double(next() >> 11) * 0x1.0p-53 < p;
  }
  double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

 private:
  uint64_t s_;
};

}  // namespace nvhalt
