#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nvhalt/tmcore.hpp"

namespace nvhalt {

// Fixed-bucket chained hashmap over the TM. Buckets are a contiguous range of
// words in the allocator's static region holding node pointers (0 = empty;
// word 0 is reserved so a node base can never be 0). Nodes are allocated
// transactionally and never freed: removal marks the node empty, so a key's
// node is reused by a later insert. All synchronization is the TM's.
class TxHashMap {
 public:
  // Node: {key, value, mark, next}. mark==0 means logically absent.
  static constexpr uint32_t kNodeWords = 4;
  static constexpr uint32_t kNodeBytes = kNodeWords * 8;

  // [bucket_base, bucket_base + buckets) must lie inside the static region
  // and start past word 0.
  TxHashMap(Tm* tm, WordIdx bucket_base, uint64_t buckets);

  // Each call is one transaction. insert returns false if the key is present
  // (or allocation failed, surfacing the voluntary abort); remove returns
  // false if absent.
  bool insert(ThreadId tid, Word key, Word value);
  bool remove(ThreadId tid, Word key);
  bool contains(ThreadId tid, Word key);
  std::optional<Word> get(ThreadId tid, Word key);

  uint64_t buckets() const { return buckets_; }
  WordIdx bucket_word(uint64_t b) const { return base_ + b; }
  uint64_t bucket_of(Word key) const { return key % buckets_; }

  // Quiescent whole-map walks (non-transactional): present key/value pairs,
  // every allocated node for the recovery census, and the structural check
  // (nodes hash to their bucket, no duplicate keys, chains acyclic).
  std::vector<std::pair<Word, Word>> items() const;
  std::vector<LiveObject> live_nodes() const;
  bool validate(std::string* why = nullptr) const;

 private:
  Tm* tm_;
  WordIdx base_;
  uint64_t buckets_;
};

}  // namespace nvhalt
