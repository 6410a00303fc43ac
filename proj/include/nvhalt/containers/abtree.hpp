#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nvhalt/tmcore.hpp"

namespace nvhalt {

// (a,b)-tree over the TM with a=4, b=16: every non-root node has between a
// and b children (internal) or keys (leaf); all leaves at one depth. Keys
// live in the leaves; internal routers send key < r left of r. Updates use
// preemptive descent: insert splits every full node on the way down, remove
// merges or borrows at every minimal child before descending into it, so one
// top-down transactional pass suffices. Nodes come from the transactional
// allocator; a merge frees the emptied node.
class TxABTree {
 public:
  static constexpr uint32_t kA = 4;
  static constexpr uint32_t kB = 16;
  // Node: {header = is_leaf | count<<1, keys[16], slots[17]} where slots are
  // child pointers (internal, count+1 of them) or values (leaf, count).
  static constexpr uint32_t kNodeWords = 34;
  static constexpr uint32_t kNodeBytes = kNodeWords * 8;

  // root_ptr_word is a static-region word holding the root node pointer
  // (0 = empty tree).
  TxABTree(Tm* tm, WordIdx root_ptr_word);

  // One transaction per call. insert returns false if the key is present (or
  // allocation failed via voluntary abort); remove returns false if absent.
  bool insert(ThreadId tid, Word key, Word value);
  bool remove(ThreadId tid, Word key);
  bool contains(ThreadId tid, Word key);
  std::optional<Word> get(ThreadId tid, Word key);

  // Quiescent whole-tree walks (non-transactional): in-order contents, every
  // node for the recovery census, and the structural check (counts within
  // bounds, sorted keys, router ranges, uniform leaf depth).
  std::vector<std::pair<Word, Word>> items() const;
  std::vector<LiveObject> live_nodes() const;
  bool validate(std::string* why = nullptr) const;

 private:
  // Word layout helpers (addresses, not values).
  WordIdx key_w(WordIdx n, uint32_t i) const { return n + 1 + i; }
  WordIdx slot_w(WordIdx n, uint32_t i) const { return n + 17 + i; }

  WordIdx alloc_node(TxHandle& h, bool leaf, uint32_t count);
  void split_child(TxHandle& h, WordIdx parent, uint32_t idx);
  void fix_child(TxHandle& h, WordIdx parent, uint32_t& idx);
  bool insert_body(TxHandle& h, Word key, Word value);
  bool remove_body(TxHandle& h, Word key);

  bool validate_node(WordIdx n, bool is_root, Word lo, bool has_lo, Word hi,
                     bool has_hi, uint32_t depth, int32_t& leaf_depth,
                     uint64_t& visited, std::string* why) const;

  Tm* tm_;
  WordIdx root_ptr_;
};

}  // namespace nvhalt
