#include "nvhalt/containers/hashmap.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_set>

#include "nvhalt/containers/abtree.hpp"
#include "nvhalt/containers/typeaf.hpp"

namespace nvhalt {

// ---------------------------------------------------------------------------
// TxHashMap

TxHashMap::TxHashMap(Tm* tm, WordIdx bucket_base, uint64_t buckets)
    : tm_(tm), base_(bucket_base), buckets_(buckets) {
  NVHALT_CHECK(buckets >= 1);
  NVHALT_CHECK(bucket_base >= 1);  // word 0 is the null pointer
  NVHALT_CHECK(bucket_base + buckets <= tm->heap().word_count());
}

bool TxHashMap::insert(ThreadId tid, Word key, Word value) {
  bool res = false;
  bool committed = tm_->run_transaction(tid, [&](TxHandle& h) {
    WordIdx bw = bucket_word(bucket_of(key));
    Word head = h.read(bw);
    for (WordIdx n = WordIdx(head); n != 0; n = WordIdx(h.read(n + 3))) {
      if (h.read(n) != key) continue;
      if (h.read(n + 2) != 0) {  // live node: key already present
        res = false;
        return;
      }
      h.write(n + 1, value);  // revive the marked-empty node
      h.write(n + 2, 1);
      res = true;
      return;
    }
    auto nb = h.alloc(kNodeBytes);
    if (!nb) h.abort();
    h.write(*nb, key);
    h.write(*nb + 1, value);
    h.write(*nb + 2, 1);
    h.write(*nb + 3, head);  // push at chain head
    h.write(bw, *nb);
    res = true;
  });
  return committed && res;
}

bool TxHashMap::remove(ThreadId tid, Word key) {
  bool res = false;
  bool committed = tm_->run_transaction(tid, [&](TxHandle& h) {
    WordIdx bw = bucket_word(bucket_of(key));
    for (WordIdx n = WordIdx(h.read(bw)); n != 0; n = WordIdx(h.read(n + 3))) {
      if (h.read(n) != key) continue;
      if (h.read(n + 2) == 0) break;
      h.write(n + 2, 0);  // mark empty; the node itself is never freed
      res = true;
      return;
    }
    res = false;
  });
  return committed && res;
}

std::optional<Word> TxHashMap::get(ThreadId tid, Word key) {
  std::optional<Word> res;
  tm_->run_transaction(tid, [&](TxHandle& h) {
    res.reset();
    WordIdx bw = bucket_word(bucket_of(key));
    for (WordIdx n = WordIdx(h.read(bw)); n != 0; n = WordIdx(h.read(n + 3))) {
      if (h.read(n) != key) continue;
      if (h.read(n + 2) != 0) res = h.read(n + 1);
      return;
    }
  });
  return res;
}

bool TxHashMap::contains(ThreadId tid, Word key) { return get(tid, key).has_value(); }

std::vector<std::pair<Word, Word>> TxHashMap::items() const {
  std::vector<std::pair<Word, Word>> out;
  const PHeap& hp = tm_->heap();
  uint64_t cap = hp.word_count() / kNodeWords + 1;  // cycle guard
  for (uint64_t b = 0; b < buckets_; b++) {
    uint64_t steps = 0;
    for (WordIdx n = WordIdx(hp.peek_word(base_ + b)); n != 0 && steps <= cap;
         n = WordIdx(hp.peek_word(n + 3)), steps++) {
      if (hp.peek_word(n + 2) != 0) out.emplace_back(hp.peek_word(n), hp.peek_word(n + 1));
    }
  }
  return out;
}

std::vector<LiveObject> TxHashMap::live_nodes() const {
  std::vector<LiveObject> out;
  const PHeap& hp = tm_->heap();
  uint64_t cap = hp.word_count() / kNodeWords + 1;
  for (uint64_t b = 0; b < buckets_; b++) {
    uint64_t steps = 0;
    for (WordIdx n = WordIdx(hp.peek_word(base_ + b)); n != 0 && steps <= cap;
         n = WordIdx(hp.peek_word(n + 3)), steps++)
      out.push_back({n, kNodeBytes});
  }
  return out;
}

bool TxHashMap::validate(std::string* why) const {
  auto fail = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  const PHeap& hp = tm_->heap();
  uint64_t cap = hp.word_count() / kNodeWords + 1;
  std::unordered_set<Word> live_keys;
  for (uint64_t b = 0; b < buckets_; b++) {
    uint64_t steps = 0;
    std::unordered_set<Word> chain_keys;
    for (WordIdx n = WordIdx(hp.peek_word(base_ + b)); n != 0;
         n = WordIdx(hp.peek_word(n + 3))) {
      if (++steps > cap) return fail("chain cycle in bucket " + std::to_string(b));
      if (n >= hp.word_count() - kNodeWords)
        return fail("node pointer out of range: " + std::to_string(n));
      Word key = hp.peek_word(n);
      Word mark = hp.peek_word(n + 2);
      if (key % buckets_ != b)
        return fail("key " + std::to_string(key) + " in wrong bucket " + std::to_string(b));
      if (mark > 1) return fail("bad mark " + std::to_string(mark));
      if (!chain_keys.insert(key).second)
        return fail("duplicate node for key " + std::to_string(key));
      if (mark != 0 && !live_keys.insert(key).second)
        return fail("duplicate live key " + std::to_string(key));
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// TxABTree

namespace {

inline bool nd_leaf(Word hdr) { return (hdr & 1) != 0; }
inline uint32_t nd_count(Word hdr) { return uint32_t(hdr >> 1); }
inline Word nd_hdr(bool leaf, uint32_t n) { return (Word(n) << 1) | (leaf ? 1u : 0u); }

}  // namespace

TxABTree::TxABTree(Tm* tm, WordIdx root_ptr_word) : tm_(tm), root_ptr_(root_ptr_word) {
  NVHALT_CHECK(root_ptr_word >= 1);
  NVHALT_CHECK(root_ptr_word < tm->heap().word_count());
}

WordIdx TxABTree::alloc_node(TxHandle& h, bool leaf, uint32_t count) {
  auto b = h.alloc(kNodeBytes);
  if (!b) h.abort();
  h.write(*b, nd_hdr(leaf, count));
  return *b;
}

// Splits the full child at parent slot idx, pushing one router up. Leaves
// copy the router (it stays as the right half's first key); internal nodes
// move the median up.
void TxABTree::split_child(TxHandle& h, WordIdx parent, uint32_t idx) {
  WordIdx c = WordIdx(h.read(slot_w(parent, idx)));
  Word ch = h.read(c);
  Word router;
  WordIdx right;
  if (nd_leaf(ch)) {
    right = alloc_node(h, true, kB / 2);
    for (uint32_t i = 0; i < kB / 2; i++) {
      h.write(key_w(right, i), h.read(key_w(c, kB / 2 + i)));
      h.write(slot_w(right, i), h.read(slot_w(c, kB / 2 + i)));
    }
    h.write(c, nd_hdr(true, kB / 2));
    router = h.read(key_w(right, 0));
  } else {
    // children 16, keys 15: left keeps 8 children / 7 keys, median rises.
    right = alloc_node(h, false, kB / 2 - 1);
    for (uint32_t i = 0; i < kB / 2 - 1; i++)
      h.write(key_w(right, i), h.read(key_w(c, kB / 2 + i)));
    for (uint32_t i = 0; i < kB / 2; i++)
      h.write(slot_w(right, i), h.read(slot_w(c, kB / 2 + i)));
    router = h.read(key_w(c, kB / 2 - 1));
    h.write(c, nd_hdr(false, kB / 2 - 1));
  }
  Word ph = h.read(parent);
  uint32_t pc = nd_count(ph);
  for (uint32_t j = pc; j > idx; j--) h.write(key_w(parent, j), h.read(key_w(parent, j - 1)));
  for (uint32_t j = pc + 1; j > idx + 1; j--)
    h.write(slot_w(parent, j), h.read(slot_w(parent, j - 1)));
  h.write(key_w(parent, idx), router);
  h.write(slot_w(parent, idx + 1), right);
  h.write(parent, nd_hdr(false, pc + 1));
}

bool TxABTree::insert_body(TxHandle& h, Word key, Word value) {
  WordIdx root = WordIdx(h.read(root_ptr_));
  if (root == 0) {
    WordIdx n = alloc_node(h, true, 1);
    h.write(key_w(n, 0), key);
    h.write(slot_w(n, 0), value);
    h.write(root_ptr_, n);
    return true;
  }
  Word rh = h.read(root);
  if (nd_count(rh) == (nd_leaf(rh) ? kB : kB - 1)) {
    WordIdx nr = alloc_node(h, false, 0);
    h.write(slot_w(nr, 0), root);
    h.write(root_ptr_, nr);
    split_child(h, nr, 0);
    root = nr;
  }
  WordIdx n = root;
  Word hdr = h.read(n);
  while (!nd_leaf(hdr)) {
    uint32_t c = nd_count(hdr);
    uint32_t i = 0;
    while (i < c && key >= h.read(key_w(n, i))) i++;  // key == router goes right
    WordIdx ch = WordIdx(h.read(slot_w(n, i)));
    Word chh = h.read(ch);
    if (nd_count(chh) == (nd_leaf(chh) ? kB : kB - 1)) {
      split_child(h, n, i);
      if (key >= h.read(key_w(n, i))) i++;
      ch = WordIdx(h.read(slot_w(n, i)));
    }
    n = ch;
    hdr = h.read(n);
  }
  uint32_t c = nd_count(hdr);
  uint32_t i = 0;
  while (i < c && h.read(key_w(n, i)) < key) i++;
  if (i < c && h.read(key_w(n, i)) == key) return false;
  for (uint32_t j = c; j > i; j--) {
    h.write(key_w(n, j), h.read(key_w(n, j - 1)));
    h.write(slot_w(n, j), h.read(slot_w(n, j - 1)));
  }
  h.write(key_w(n, i), key);
  h.write(slot_w(n, i), value);
  h.write(n, nd_hdr(true, c + 1));
  return true;
}

// Guarantees the child at parent slot idx is above minimal size before
// descent: borrow a key through the parent router, or merge with a sibling
// (freeing the emptied node). The parent is never minimal here (preemptive
// descent), so dropping one router is safe.
void TxABTree::fix_child(TxHandle& h, WordIdx parent, uint32_t& idx) {
  WordIdx c = WordIdx(h.read(slot_w(parent, idx)));
  Word ch = h.read(c);
  bool leaf = nd_leaf(ch);
  uint32_t cc = nd_count(ch);
  uint32_t minimal = leaf ? kA : kA - 1;
  if (cc > minimal) return;
  Word phdr = h.read(parent);
  uint32_t pc = nd_count(phdr);

  if (idx > 0) {  // try borrowing from the left sibling
    WordIdx left = WordIdx(h.read(slot_w(parent, idx - 1)));
    Word lh = h.read(left);
    uint32_t lc = nd_count(lh);
    if (lc > minimal) {
      for (uint32_t j = cc; j > 0; j--) {  // shift child right by one
        h.write(key_w(c, j), h.read(key_w(c, j - 1)));
        h.write(slot_w(c, j + (leaf ? 0 : 1)), h.read(slot_w(c, j - 1 + (leaf ? 0 : 1))));
      }
      if (!leaf) h.write(slot_w(c, 1), h.read(slot_w(c, 0)));
      if (leaf) {
        h.write(key_w(c, 0), h.read(key_w(left, lc - 1)));
        h.write(slot_w(c, 0), h.read(slot_w(left, lc - 1)));
        h.write(key_w(parent, idx - 1), h.read(key_w(c, 0)));
      } else {
        h.write(key_w(c, 0), h.read(key_w(parent, idx - 1)));  // router down
        h.write(slot_w(c, 0), h.read(slot_w(left, lc)));
        h.write(key_w(parent, idx - 1), h.read(key_w(left, lc - 1)));  // router up
      }
      h.write(left, nd_hdr(leaf, lc - 1));
      h.write(c, nd_hdr(leaf, cc + 1));
      return;
    }
  }
  if (idx < pc) {  // try borrowing from the right sibling
    WordIdx right = WordIdx(h.read(slot_w(parent, idx + 1)));
    Word rh = h.read(right);
    uint32_t rc = nd_count(rh);
    if (rc > minimal) {
      // New router: leaf borrow exposes right's second key as its minimum;
      // internal borrow lifts right's first key. Capture before the shift.
      Word up = leaf ? h.read(key_w(right, 1)) : h.read(key_w(right, 0));
      if (leaf) {
        h.write(key_w(c, cc), h.read(key_w(right, 0)));
        h.write(slot_w(c, cc), h.read(slot_w(right, 0)));
      } else {
        h.write(key_w(c, cc), h.read(key_w(parent, idx)));  // router down
        h.write(slot_w(c, cc + 1), h.read(slot_w(right, 0)));
      }
      for (uint32_t j = 0; j + 1 < rc; j++) {  // shift right sibling left
        h.write(key_w(right, j), h.read(key_w(right, j + 1)));
        h.write(slot_w(right, j), h.read(slot_w(right, j + 1)));
      }
      if (!leaf) h.write(slot_w(right, rc - 1), h.read(slot_w(right, rc)));
      h.write(key_w(parent, idx), up);
      h.write(right, nd_hdr(leaf, rc - 1));
      h.write(c, nd_hdr(leaf, cc + 1));
      return;
    }
  }

  // Merge with a sibling: fold (left, router, right) into the left node and
  // free the right one.
  uint32_t j = idx > 0 ? idx - 1 : idx;  // merge slots j and j+1
  WordIdx ln = WordIdx(h.read(slot_w(parent, j)));
  WordIdx rn = WordIdx(h.read(slot_w(parent, j + 1)));
  Word lh = h.read(ln);
  Word rhh = h.read(rn);
  uint32_t lc = nd_count(lh);
  uint32_t rc = nd_count(rhh);
  if (leaf) {
    for (uint32_t k2 = 0; k2 < rc; k2++) {
      h.write(key_w(ln, lc + k2), h.read(key_w(rn, k2)));
      h.write(slot_w(ln, lc + k2), h.read(slot_w(rn, k2)));
    }
    h.write(ln, nd_hdr(true, lc + rc));
  } else {
    h.write(key_w(ln, lc), h.read(key_w(parent, j)));  // router comes down
    for (uint32_t k2 = 0; k2 < rc; k2++)
      h.write(key_w(ln, lc + 1 + k2), h.read(key_w(rn, k2)));
    for (uint32_t k2 = 0; k2 <= rc; k2++)
      h.write(slot_w(ln, lc + 1 + k2), h.read(slot_w(rn, k2)));
    h.write(ln, nd_hdr(false, lc + 1 + rc));
  }
  for (uint32_t k2 = j; k2 + 1 < pc; k2++)  // drop router j and slot j+1
    h.write(key_w(parent, k2), h.read(key_w(parent, k2 + 1)));
  for (uint32_t k2 = j + 1; k2 < pc; k2++)
    h.write(slot_w(parent, k2), h.read(slot_w(parent, k2 + 1)));
  h.write(parent, nd_hdr(false, pc - 1));
  h.free_object(rn);
  idx = j;  // the target keys now live under the merged node
}

bool TxABTree::remove_body(TxHandle& h, Word key) {
  WordIdx root = WordIdx(h.read(root_ptr_));
  if (root == 0) return false;
  WordIdx n = root;
  Word hdr = h.read(n);
  while (!nd_leaf(hdr)) {
    uint32_t c = nd_count(hdr);
    uint32_t i = 0;
    while (i < c && key >= h.read(key_w(n, i))) i++;
    WordIdx ch = WordIdx(h.read(slot_w(n, i)));
    Word chh = h.read(ch);
    if (nd_count(chh) <= (nd_leaf(chh) ? kA : kA - 1)) {
      fix_child(h, n, i);
      hdr = h.read(n);
      c = nd_count(hdr);
      if (n == root && c == 0) {  // root collapsed to a single child
        WordIdx only = WordIdx(h.read(slot_w(n, 0)));
        h.write(root_ptr_, only);
        h.free_object(n);
        root = only;
        n = only;
        hdr = h.read(n);
        continue;
      }
      i = 0;
      while (i < c && key >= h.read(key_w(n, i))) i++;
      ch = WordIdx(h.read(slot_w(n, i)));
    }
    n = ch;
    hdr = h.read(n);
  }
  uint32_t c = nd_count(hdr);
  uint32_t i = 0;
  while (i < c && h.read(key_w(n, i)) < key) i++;
  if (i >= c || h.read(key_w(n, i)) != key) return false;
  for (uint32_t j = i; j + 1 < c; j++) {
    h.write(key_w(n, j), h.read(key_w(n, j + 1)));
    h.write(slot_w(n, j), h.read(slot_w(n, j + 1)));
  }
  h.write(n, nd_hdr(true, c - 1));
  if (n == root && c - 1 == 0) {  // tree emptied
    h.write(root_ptr_, 0);
    h.free_object(n);
  }
  return true;
}

bool TxABTree::insert(ThreadId tid, Word key, Word value) {
  bool res = false;
  bool committed =
      tm_->run_transaction(tid, [&](TxHandle& h) { res = insert_body(h, key, value); });
  return committed && res;
}

bool TxABTree::remove(ThreadId tid, Word key) {
  bool res = false;
  bool committed = tm_->run_transaction(tid, [&](TxHandle& h) { res = remove_body(h, key); });
  return committed && res;
}

std::optional<Word> TxABTree::get(ThreadId tid, Word key) {
  std::optional<Word> res;
  tm_->run_transaction(tid, [&](TxHandle& h) {
    res.reset();
    WordIdx n = WordIdx(h.read(root_ptr_));
    if (n == 0) return;
    Word hdr = h.read(n);
    while (!nd_leaf(hdr)) {
      uint32_t c = nd_count(hdr);
      uint32_t i = 0;
      while (i < c && key >= h.read(key_w(n, i))) i++;
      n = WordIdx(h.read(slot_w(n, i)));
      hdr = h.read(n);
    }
    uint32_t c = nd_count(hdr);
    for (uint32_t i = 0; i < c; i++) {
      Word k = h.read(key_w(n, i));
      if (k == key) {
        res = h.read(slot_w(n, i));
        return;
      }
      if (k > key) return;
    }
  });
  return res;
}

bool TxABTree::contains(ThreadId tid, Word key) { return get(tid, key).has_value(); }

std::vector<std::pair<Word, Word>> TxABTree::items() const {
  std::vector<std::pair<Word, Word>> out;
  const PHeap& hp = tm_->heap();
  WordIdx root = WordIdx(hp.peek_word(root_ptr_));
  if (root == 0) return out;
  uint64_t budget = hp.word_count() / kNodeWords + 1;
  std::function<void(WordIdx)> walk = [&](WordIdx n) {
    if (budget-- == 0) return;
    Word hdr = hp.peek_word(n);
    uint32_t c = nd_count(hdr);
    if (nd_leaf(hdr)) {
      for (uint32_t i = 0; i < c; i++)
        out.emplace_back(hp.peek_word(key_w(n, i)), hp.peek_word(slot_w(n, i)));
      return;
    }
    for (uint32_t i = 0; i <= c; i++) walk(WordIdx(hp.peek_word(slot_w(n, i))));
  };
  walk(root);
  return out;
}

std::vector<LiveObject> TxABTree::live_nodes() const {
  std::vector<LiveObject> out;
  const PHeap& hp = tm_->heap();
  WordIdx root = WordIdx(hp.peek_word(root_ptr_));
  if (root == 0) return out;
  uint64_t budget = hp.word_count() / kNodeWords + 1;
  std::function<void(WordIdx)> walk = [&](WordIdx n) {
    if (budget-- == 0) return;
    out.push_back({n, kNodeBytes});
    Word hdr = hp.peek_word(n);
    if (nd_leaf(hdr)) return;
    for (uint32_t i = 0; i <= nd_count(hdr); i++)
      walk(WordIdx(hp.peek_word(slot_w(n, i))));
  };
  walk(root);
  return out;
}

bool TxABTree::validate_node(WordIdx n, bool is_root, Word lo, bool has_lo, Word hi,
                             bool has_hi, uint32_t depth, int32_t& leaf_depth,
                             uint64_t& visited, std::string* why) const {
  auto fail = [&](const std::string& m) {
    if (why) *why = "node " + std::to_string(n) + ": " + m;
    return false;
  };
  const PHeap& hp = tm_->heap();
  if (++visited > hp.word_count() / kNodeWords + 1) return fail("node budget exceeded (cycle?)");
  if (n == 0 || n + kNodeWords > hp.word_count()) return fail("pointer out of range");
  Word hdr = hp.peek_word(n);
  bool leaf = nd_leaf(hdr);
  uint32_t c = nd_count(hdr);
  uint32_t min_c = leaf ? kA : kA - 1;
  uint32_t max_c = leaf ? kB : kB - 1;
  uint32_t root_min = leaf ? 1 : 1;  // root leaf >= 1 key, root internal >= 1 router
  if (c > max_c) return fail("count " + std::to_string(c) + " over bound");
  if (c < (is_root ? root_min : min_c)) return fail("count " + std::to_string(c) + " under bound");
  Word prev = 0;
  for (uint32_t i = 0; i < c; i++) {
    Word k = hp.peek_word(key_w(n, i));
    if (i > 0 && k <= prev) return fail("keys not strictly ascending");
    if (has_lo && k < lo) return fail("key below subtree bound");
    if (has_hi && k >= hi) return fail("key at or above subtree bound");
    prev = k;
  }
  if (leaf) {
    if (leaf_depth < 0) leaf_depth = int32_t(depth);
    if (int32_t(depth) != leaf_depth) return fail("leaf depth mismatch");
    return true;
  }
  for (uint32_t i = 0; i <= c; i++) {
    Word clo = i == 0 ? lo : hp.peek_word(key_w(n, i - 1));
    bool chas_lo = i == 0 ? has_lo : true;
    Word chi = i == c ? hi : hp.peek_word(key_w(n, i));
    bool chas_hi = i == c ? has_hi : true;
    if (!validate_node(WordIdx(hp.peek_word(slot_w(n, i))), false, clo, chas_lo, chi,
                       chas_hi, depth + 1, leaf_depth, visited, why))
      return false;
  }
  return true;
}

bool TxABTree::validate(std::string* why) const {
  WordIdx root = WordIdx(tm_->heap().peek_word(root_ptr_));
  if (root == 0) return true;
  int32_t leaf_depth = -1;
  uint64_t visited = 0;
  return validate_node(root, true, 0, false, 0, false, 0, leaf_depth, visited, why);
}

// ---------------------------------------------------------------------------
// TypeAF

TypeAF::TypeAF(Tm* tm, WordIdx array_base, const AfConfig& cfg)
    : tm_(tm), array_(array_base), cfg_(cfg) {
  NVHALT_CHECK(cfg_.threads >= 1);
  NVHALT_CHECK(array_base >= 1);
  NVHALT_CHECK(array_base + cfg_.objects <= tm->heap().word_count());
  obj_of_.assign(cfg_.objects, 0);
}

void TypeAF::assign_subsets() {
  std::vector<uint64_t> perm(cfg_.objects);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng_a(cfg_.seed);
  std::shuffle(perm.begin(), perm.end(), rng_a);
  phase_a_.assign(cfg_.threads, {});
  for (size_t j = 0; j < perm.size(); j++) phase_a_[j % cfg_.threads].push_back(perm[j]);
  std::mt19937_64 rng_f(cfg_.seed ^ 0x9E3779B97F4A7C15ull);
  std::shuffle(perm.begin(), perm.end(), rng_f);
  phase_f_.assign(cfg_.threads, {});
  for (size_t j = 0; j < perm.size(); j++) phase_f_[j % cfg_.threads].push_back(perm[j]);
}

void TypeAF::prealloc_upfront() {
  if (!cfg_.layout.empty()) {
    // Adopt a paired run's layout so both runs touch identical words.
    NVHALT_CHECK(cfg_.layout.size() == cfg_.objects);
    obj_of_ = cfg_.layout;
    std::vector<LiveObject> census;
    census.reserve(cfg_.objects);
    for (WordIdx base : obj_of_) census.push_back({base, 16});
    tm_->mem().rebuild_from_iterator(census);
    return;
  }
  // Same round-robin order the scripted phase would allocate in.
  for (size_t s = 0;; s++) {
    bool any = false;
    for (uint32_t t = 0; t < cfg_.threads; t++) {
      if (s >= phase_a_[t].size()) continue;
      any = true;
      uint64_t e = phase_a_[t][s];
      tm_->run_transaction(ThreadId(t + 1), [&](TxHandle& h) {
        auto b = h.alloc(16);
        if (!b) h.abort();
        obj_of_[e] = *b;
      });
      NVHALT_CHECK(obj_of_[e] != 0);
    }
    if (!any) break;
  }
}

namespace {

// Deterministic per-element field values.
inline Word af_field(uint64_t elem, uint32_t which) {
  return mix64(elem * 2 + which + 1);
}

}  // namespace

void TypeAF::run_scripted() {
  struct Cursor {
    size_t idx = 0;
    int op = 0;
  };
  bool alloc_in_tx = cfg_.mode != AfMode::Prealloc;
  bool free_in_tx = cfg_.mode == AfMode::AllocFree;

  for (int phase = 0; phase < 2; phase++) {
    auto& lists = phase == 0 ? phase_a_ : phase_f_;
    std::vector<Cursor> cur(cfg_.threads);
    // Both phases use the same 6-slot transaction shape in every mode, so
    // paired runs interleave identically; allocator calls occupy a slot that
    // is a no-op in the modes that skip them.
    bool running = true;
    while (running) {
      running = false;
      for (uint32_t t = 0; t < cfg_.threads; t++) {
        Cursor& cu = cur[t];
        if (cu.idx >= lists[t].size()) continue;
        running = true;
        ThreadId tid = ThreadId(t + 1);
        uint64_t e = lists[t][cu.idx];
        try {
          switch (cu.op) {
            case 0:
              tm_->begin(tid);
              cu.op = 1;
              break;
            case 1:
              if (phase == 0 && alloc_in_tx) {
                auto b = tm_->alloc(tid, 16);
                NVHALT_CHECK(b.has_value());  // heap sized by the caller
                obj_of_[e] = *b;
              }
              cu.op = 2;
              break;
            case 2:
              if (phase == 0)
                tm_->write(tid, array_ + e, obj_of_[e]);
              else
                tm_->write(tid, obj_of_[e], af_field(e, 2));
              cu.op = 3;
              break;
            case 3:
              if (phase == 0)
                tm_->write(tid, obj_of_[e], af_field(e, 0));
              else
                tm_->write(tid, obj_of_[e] + 1, af_field(e, 3));
              cu.op = 4;
              break;
            case 4:
              if (phase == 0)
                tm_->write(tid, obj_of_[e] + 1, af_field(e, 1));
              else
                tm_->write(tid, array_ + e, 0);
              cu.op = 5;
              break;
            case 5:
              if (phase == 1 && free_in_tx) tm_->free_object(tid, obj_of_[e]);
              tm_->commit(tid);
              cu.idx++;
              cu.op = 0;
              break;
          }
        } catch (const TxAborted&) {
          cu.op = 0;  // attempt rolled back; retry the same element
        }
      }
    }
  }
}

void TypeAF::run_threaded() {
  bool alloc_in_tx = cfg_.mode != AfMode::Prealloc;
  bool free_in_tx = cfg_.mode == AfMode::AllocFree;
  for (int phase = 0; phase < 2; phase++) {
    auto& lists = phase == 0 ? phase_a_ : phase_f_;
    std::vector<std::thread> ws;
    for (uint32_t t = 0; t < cfg_.threads; t++) {
      ws.emplace_back([&, t] {
        ThreadId tid = ThreadId(t + 1);
        for (uint64_t e : lists[t]) {
          if (phase == 0) {
            tm_->run_transaction(tid, [&](TxHandle& h) {
              if (alloc_in_tx) {
                auto b = h.alloc(16);
                if (!b) h.abort();
                obj_of_[e] = *b;
              }
              h.write(array_ + e, obj_of_[e]);
              h.write(obj_of_[e], af_field(e, 0));
              h.write(obj_of_[e] + 1, af_field(e, 1));
            });
          } else {
            tm_->run_transaction(tid, [&](TxHandle& h) {
              h.write(obj_of_[e], af_field(e, 2));
              h.write(obj_of_[e] + 1, af_field(e, 3));
              h.write(array_ + e, 0);
              if (free_in_tx) h.free_object(obj_of_[e]);
            });
          }
        }
      });
    }
    for (auto& w : ws) w.join();  // phase barrier
  }
}

AfReport TypeAF::run() {
  assign_subsets();
  if (cfg_.mode == AfMode::Prealloc) prealloc_upfront();
  AfReport rep;
  rep.before = tm_->total_stats();
  if (cfg_.scripted)
    run_scripted();
  else
    run_threaded();
  rep.after = tm_->total_stats();
  rep.layout = obj_of_;
  return rep;
}

}  // namespace nvhalt
