// Workload benchmark for the transactional memory library: timed multi-thread
// trials over the transactional containers, plus a scripted deterministic mode
// whose output is bit-identical across runs, plus an optional crash-recovery
// fuzz pass over the same configuration. Reports JSON (default) or CSV.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nvhalt/containers/abtree.hpp"
#include "nvhalt/containers/hashmap.hpp"
#include "nvhalt/verify.hpp"

using namespace nvhalt;
using nlohmann::json;

namespace {

struct BenchConfig {
  std::string structure = "hashmap";  // hashmap | abtree
  uint64_t key_range = 1 << 14;
  uint32_t read_pct = 50;
  std::string dist = "uniform";  // uniform | zipf
  double theta = 0.9;            // zipf exponent
  uint32_t threads = 2;
  double seconds = 2.0;
  uint32_t trials = 3;
  std::string variant = "weak";  // weak | strong
  std::string locks = "hashed";  // hashed | colocated
  uint32_t max_hw_attempts = 10;
  double spurious_p = 0.0;
  uint64_t seed = 1;
  uint32_t prefill_pct = 50;
  bool deterministic = false;
  uint64_t ops = 200;  // per thread, deterministic mode
  uint64_t crash_test = 0;
  std::string format = "json";  // json | csv
};

// Key sampler: uniform, or zipf where rank equals key index (key 0 hottest).
class KeySampler {
 public:
  KeySampler(const std::string& dist, double theta, uint64_t n) : n_(n) {
    if (dist == "zipf") {
      cum_.reserve(size_t(n));
      double total = 0;
      for (uint64_t k = 0; k < n; k++) {
        total += 1.0 / std::pow(double(k + 1), theta);
        cum_.push_back(total);
      }
    }
  }
  Word draw(Rng& rng) const {
    if (cum_.empty()) return rng.below(n_);
    double u = rng.uniform01() * cum_.back();
    size_t lo = 0, hi = cum_.size();
    while (lo < hi) {
      size_t mid = (lo + hi) / 2;
      if (cum_[mid] < u)
        lo = mid + 1;
      else
        hi = mid;
    }
    return Word(lo < cum_.size() ? lo : cum_.size() - 1);
  }

 private:
  uint64_t n_;
  std::vector<double> cum_;
};

struct BenchOp {
  int kind;  // 0 contains, 1 insert, 2 remove
  Word key;
  Word value;
};

BenchOp draw_op(Rng& rng, const KeySampler& keys, uint32_t read_pct) {
  uint64_t u = rng.next();
  BenchOp op;
  if (u % 100 < read_pct)
    op.kind = 0;
  else
    op.kind = ((u >> 8) & 1) ? 1 : 2;  // updates: half insert, half remove
  op.key = keys.draw(rng);
  op.value = mix64(u ^ 0xBE9CAull) | 1;
  return op;
}

// Container facade over either structure.
struct BenchContainer {
  std::unique_ptr<TxHashMap> map;
  std::unique_ptr<TxABTree> tree;
  BenchContainer(Tm* tm, const BenchConfig& cfg, WordIdx base, uint64_t buckets) {
    if (cfg.structure == "hashmap")
      map = std::make_unique<TxHashMap>(tm, base, buckets);
    else
      tree = std::make_unique<TxABTree>(tm, base);
  }
  void apply(ThreadId tid, const BenchOp& op) {
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
};

struct Geometry {
  TmOptions opt;
  WordIdx base = 0;      // bucket base or root pointer word
  uint64_t buckets = 0;  // hashmap only
};

Geometry make_geometry(const BenchConfig& cfg, uint64_t seed) {
  Geometry g;
  TmOptions& o = g.opt;
  o.heap.thread_slots = cfg.threads;
  o.locks.mode = cfg.locks == "colocated" ? LockMode::Colocated : LockMode::Hashed;
  o.variant = cfg.variant == "strong" ? Variant::StrongProg : Variant::WeakProg;
  o.max_hw_attempts = cfg.max_hw_attempts;
  o.htm.spurious_p = cfg.spurious_p;
  o.htm.seed = mix64(seed ^ 0x5EEDull);

  uint64_t static_words, dyn_words;
  if (cfg.structure == "hashmap") {
    g.base = 8;
    g.buckets = std::max<uint64_t>(64, cfg.key_range / 2) | 1;
    static_words = 8 + g.buckets;
    // Nodes are revived in place after removal, so the live ceiling is one
    // node per distinct key, plus per-thread pool slack.
    dyn_words = cfg.key_range * 4 + uint64_t(cfg.threads) * 1024 + 4096;
  } else {
    g.base = 1;
    static_words = 64;
    // Minimum leaf occupancy bounds node count by about keys/3 including
    // internals; each node occupies a 64-word size-class slot. Epoch lag adds
    // churn slack.
    dyn_words = (cfg.key_range / 3 + 128) * 64 + uint64_t(cfg.threads) * 4096 + 8192;
  }
  o.mem.static_words = uint32_t(static_words);
  uint64_t words = ((static_words + 1023) / 1024 + (dyn_words + 1023) / 1024) * 1024 + 1024;
  o.heap.word_count = words;
  return g;
}

struct TrialResult {
  uint64_t ops = 0;             // completed container operations (incl. prefill)
  double elapsed_s = 0;
  uint64_t steps = 0;           // deterministic mode: suspension points driven
  TxStats stats;
  MemAudit audit;
  bool conservation_ok = false;
};

uint64_t prefill(BenchContainer& c, const BenchConfig& cfg, uint64_t seed) {
  uint64_t n = 0;
  Rng rng(mix64(seed ^ 0xF111ull) | 1);
  for (uint64_t k = 0; k < cfg.key_range; k++) {
    if (rng.below(100) < cfg.prefill_pct) {
      BenchOp op{1, Word(k), mix64(seed ^ k) | 1};
      c.apply(1, op);
      n++;
    }
  }
  return n;
}

TrialResult run_timed_trial(const BenchConfig& cfg, uint64_t trial_seed) {
  Geometry g = make_geometry(cfg, trial_seed);
  Tm tm(g.opt);
  BenchContainer c(&tm, cfg, g.base, g.buckets);
  KeySampler keys(cfg.dist, cfg.theta, cfg.key_range);

  uint64_t total_ops = prefill(c, cfg, trial_seed);

  std::atomic<bool> stop{false};
  std::vector<uint64_t> ops_of(cfg.threads, 0);
  std::vector<std::thread> workers;
  auto t0 = std::chrono::steady_clock::now();
  for (uint32_t t = 0; t < cfg.threads; t++) {
    workers.emplace_back([&, t] {
      ThreadId tid = ThreadId(t + 1);
      Rng rng(mix64(trial_seed ^ (0x1000ull + t)) | 1);
      uint64_t done = 0;
      while (!stop.load(std::memory_order_relaxed)) {
        c.apply(tid, draw_op(rng, keys, cfg.read_pct));
        done++;
      }
      ops_of[t] = done;
    });
  }
  std::this_thread::sleep_for(std::chrono::duration<double>(cfg.seconds));
  stop.store(true, std::memory_order_relaxed);
  for (auto& w : workers) w.join();
  auto t1 = std::chrono::steady_clock::now();

  TrialResult r;
  for (uint64_t n : ops_of) total_ops += n;
  r.ops = total_ops;
  r.elapsed_s = std::chrono::duration<double>(t1 - t0).count();
  r.stats = tm.total_stats();
  tm.mem().drain();
  r.audit = tm.mem().audit();
  // Completed-operation conservation: every operation either committed once
  // or ended in a voluntary abort (allocator exhaustion); retries are aborts,
  // never extra commits.
  r.conservation_ok =
      (r.stats.commits_total() + r.stats.voluntary_aborts == total_ops) && r.audit.conserved;
  return r;
}

TrialResult run_deterministic_trial(const BenchConfig& cfg, uint64_t trial_seed) {
  Geometry g = make_geometry(cfg, trial_seed);
  ScheduleRunner runner(g.opt);
  auto c = std::make_shared<BenchContainer>(&runner.tm(), cfg, g.base, g.buckets);
  auto keys = std::make_shared<KeySampler>(cfg.dist, cfg.theta, cfg.key_range);

  uint64_t total_ops = prefill(*c, cfg, trial_seed);  // runs outside any grant

  for (uint32_t t = 0; t < cfg.threads; t++) {
    ScriptedTx s;
    s.tid = ThreadId(t + 1);
    ScheduleRunner* rp = &runner;
    BenchConfig ccfg = cfg;
    s.body = [rp, c, keys, ccfg, trial_seed, t]() {
      Rng rng(mix64(trial_seed ^ (0x1000ull + t)) | 1);
      for (uint64_t j = 0; j < ccfg.ops; j++) {
        c->apply(ThreadId(t + 1), draw_op(rng, *keys, ccfg.read_pct));
        rp->boundary();
      }
    };
    runner.add_script(std::move(s));
  }

  Rng pick(mix64(trial_seed ^ 0x9C4Eull) | 1);
  for (;;) {
    std::vector<ThreadId> tids = runner.runnable_tids();
    if (tids.empty()) break;
    runner.step(tids[pick.below(tids.size())]);
  }
  ScheduleResult res = runner.finish();

  TrialResult r;
  total_ops += uint64_t(cfg.ops) * cfg.threads;
  r.ops = total_ops;
  r.steps = res.steps_taken;
  r.stats = res.stats;
  runner.tm().mem().drain();
  r.audit = runner.tm().mem().audit();
  r.conservation_ok =
      (r.stats.commits_total() + r.stats.voluntary_aborts == total_ops) && r.audit.conserved;
  return r;
}

json stats_json(const TxStats& s) {
  json j;
  j["commits"] = {{"hw", s.commits_hw},
                  {"sw", s.commits_sw},
                  {"hw_readonly", s.commits_hw_readonly},
                  {"sw_readonly", s.commits_sw_readonly},
                  {"total", s.commits_total()}};
  json hw;
  for (int k = 0; k < 5; k++) hw[to_string(HwAbortKind(k))] = s.hw_aborts[size_t(k)];
  json sw;
  for (int k = 0; k < 3; k++) sw[to_string(SwAbortReason(k))] = s.sw_abort_reason[size_t(k)];
  j["aborts"] = {{"hw", hw},
                 {"sw", sw},
                 {"sw_total", s.sw_aborts},
                 {"sw_with_witness", s.sw_aborts_with_witness},
                 {"voluntary", s.voluntary_aborts},
                 {"total", s.aborts_total()}};
  j["attempts"] = {{"committed_on_hw_attempt", s.attempts_then_hw},
                   {"fell_back_after", s.attempts_then_sw}};
  j["validations"] = {{"skipped_by_clock_win", s.validations_skipped},
                      {"full", s.validations_full}};
  auto avg = [](uint64_t sum, uint64_t n) { return n ? double(sum) / double(n) : 0.0; };
  j["read_set"] = {{"avg", avg(s.rs_sum, s.rs_n)},
                   {"max", s.rs_max},
                   {"avg_at_abort", avg(s.rs_abort_sum, s.rs_abort_n)},
                   {"max_at_abort", s.rs_abort_max}};
  j["write_set"] = {{"avg", avg(s.ws_sum, s.ws_n)},
                    {"max", s.ws_max},
                    {"avg_at_abort", avg(s.ws_abort_sum, s.ws_abort_n)},
                    {"max_at_abort", s.ws_abort_max}};
  j["poison_reads"] = s.poison_reads;
  return j;
}

json audit_json(const MemAudit& a) {
  return json{{"managed_words", a.managed_words}, {"live_words", a.live_words},
              {"pooled_words", a.pooled_words},   {"retired_words", a.retired_words},
              {"virgin_words", a.virgin_words},   {"tail_words", a.tail_words},
              {"live_objects", a.live_objects},   {"reclaims", a.reclaims},
              {"conserved", a.conserved}};
}

double ops_per_sec(const TrialResult& r) {
  return (r.elapsed_s > 0) ? double(r.ops) / r.elapsed_s : 0.0;
}

double hw_commit_pct(const TxStats& s) {
  uint64_t total = s.commits_total();
  return total ? 100.0 * double(s.commits_hw) / double(total) : 0.0;
}

}  // namespace

int main(int argc, char** argv) {
  BenchConfig cfg;
  if (const char* env = std::getenv("NVHALT_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);

  CLI::App app{"transactional-memory container benchmark"};
  app.add_option("--structure", cfg.structure, "hashmap | abtree")
      ->check(CLI::IsMember({"hashmap", "abtree"}));
  app.add_option("--keys", cfg.key_range, "key range (default 16384)")
      ->check(CLI::Range(uint64_t(64), uint64_t(1) << 20));
  app.add_option("--read-pct", cfg.read_pct, "lookup share, 0..100 (default 50)")
      ->check(CLI::Range(0, 100));
  app.add_option("--dist", cfg.dist, "uniform | zipf (rank = key index)")
      ->check(CLI::IsMember({"uniform", "zipf"}));
  app.add_option("--theta", cfg.theta, "zipf exponent (default 0.9)");
  app.add_option("--threads", cfg.threads, "worker threads (default 2)")
      ->check(CLI::Range(1, 16));
  app.add_option("--seconds", cfg.seconds, "seconds per timed trial (default 2)");
  app.add_option("--trials", cfg.trials, "trial count (default 3)")->check(CLI::Range(1, 100));
  app.add_option("--variant", cfg.variant, "weak | strong progress (default weak)")
      ->check(CLI::IsMember({"weak", "strong"}));
  app.add_option("--locks", cfg.locks, "hashed | colocated (default hashed)")
      ->check(CLI::IsMember({"hashed", "colocated"}));
  app.add_option("--max-hw-attempts", cfg.max_hw_attempts,
                 "hardware attempts before software fallback (default 10)");
  app.add_option("--spurious-p", cfg.spurious_p, "per-access spurious hw abort probability");
  app.add_option("--seed", cfg.seed, "base seed (or NVHALT_SEED env)");
  app.add_option("--prefill-pct", cfg.prefill_pct, "prefilled key share (default 50)")
      ->check(CLI::Range(0, 100));
  app.add_flag("--deterministic", cfg.deterministic,
               "scripted single-threaded interleaving; output is reproducible");
  app.add_option("--ops", cfg.ops, "ops per thread in deterministic mode (default 200)");
  app.add_option("--crash-test", cfg.crash_test,
                 "also run this many crash-recovery fuzz seeds on the configuration");
  app.add_option("--format", cfg.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  CLI11_PARSE(app, argc, argv);

  json out;
  out["config"] = {{"structure", cfg.structure},
                   {"keys", cfg.key_range},
                   {"read_pct", cfg.read_pct},
                   {"dist", cfg.dist},
                   {"theta", cfg.theta},
                   {"threads", cfg.threads},
                   {"seconds", cfg.deterministic ? 0.0 : cfg.seconds},
                   {"trials", cfg.trials},
                   {"variant", cfg.variant},
                   {"locks", cfg.locks},
                   {"max_hw_attempts", cfg.max_hw_attempts},
                   {"spurious_p", cfg.spurious_p},
                   {"seed", cfg.seed},
                   {"prefill_pct", cfg.prefill_pct},
                   {"deterministic", cfg.deterministic},
                   {"ops_per_thread", cfg.deterministic ? cfg.ops : 0}};

  std::vector<TrialResult> trials;
  for (uint32_t t = 0; t < cfg.trials; t++) {
    uint64_t trial_seed = mix64(cfg.seed + t);
    trials.push_back(cfg.deterministic ? run_deterministic_trial(cfg, trial_seed)
                                       : run_timed_trial(cfg, trial_seed));
  }

  out["trials"] = json::array();
  double mean_tput = 0, mean_hw_pct = 0;
  uint64_t mean_aborts = 0;
  bool all_conserved = true;
  for (const TrialResult& r : trials) {
    json j;
    j["ops"] = r.ops;
    if (cfg.deterministic)
      j["steps"] = r.steps;
    else {
      j["elapsed_s"] = r.elapsed_s;
      j["ops_per_sec"] = ops_per_sec(r);
    }
    j["hw_commit_pct"] = hw_commit_pct(r.stats);
    j["stats"] = stats_json(r.stats);
    j["allocator"] = audit_json(r.audit);
    j["conservation_ok"] = r.conservation_ok;
    out["trials"].push_back(j);
    mean_tput += ops_per_sec(r) / double(trials.size());
    mean_hw_pct += hw_commit_pct(r.stats) / double(trials.size());
    mean_aborts += r.stats.aborts_total();
    all_conserved = all_conserved && r.conservation_ok;
  }
  mean_aborts /= trials.size();
  out["mean"] = {{"ops_per_sec", cfg.deterministic ? 0.0 : mean_tput},
                 {"hw_commit_pct", mean_hw_pct},
                 {"abort_total", mean_aborts}};
  out["conservation_ok"] = all_conserved;

  if (cfg.crash_test > 0) {
    FuzzConfig fz;
    fz.structure = cfg.structure;
    fz.threads = std::min(cfg.threads, 4u);
    fz.read_pct = cfg.read_pct;
    fz.variant = cfg.variant == "strong" ? Variant::StrongProg : Variant::WeakProg;
    fz.lock_mode = cfg.locks == "colocated" ? LockMode::Colocated : LockMode::Hashed;
    fz.max_hw_attempts = std::min(cfg.max_hw_attempts, 8u);
    FuzzReport rep = crash_fuzz(fz, cfg.seed, cfg.crash_test);
    json cj;
    cj["runs"] = rep.runs;
    cj["crashes_injected"] = rep.crashes_injected;
    cj["committed_ops"] = rep.committed_ops;
    cj["inflight_ops"] = rep.inflight_ops;
    cj["findings"] = json::array();
    for (const FuzzFinding& f : rep.findings)
      cj["findings"].push_back({{"seed", f.seed}, {"what", f.what}});
    cj["ok"] = rep.ok();
    out["crash_test"] = cj;
  }

  if (cfg.format == "csv") {
    std::printf("trial,structure,threads,read_pct,variant,lock_mode,ops_per_sec,hw_commit_pct,abort_total\n");
    for (size_t i = 0; i < trials.size(); i++) {
      std::printf("%zu,%s,%u,%u,%s,%s,%.1f,%.2f,%llu\n", i, cfg.structure.c_str(), cfg.threads,
                  cfg.read_pct, cfg.variant.c_str(), cfg.locks.c_str(), ops_per_sec(trials[i]),
                  hw_commit_pct(trials[i].stats),
                  (unsigned long long)trials[i].stats.aborts_total());
    }
    std::printf("mean,%s,%u,%u,%s,%s,%.1f,%.2f,%llu\n", cfg.structure.c_str(), cfg.threads,
                cfg.read_pct, cfg.variant.c_str(), cfg.locks.c_str(),
                cfg.deterministic ? 0.0 : mean_tput, mean_hw_pct,
                (unsigned long long)mean_aborts);
  } else {
    std::printf("%s\n", out.dump(2).c_str());
  }

  bool fuzz_ok = cfg.crash_test == 0 || out["crash_test"]["ok"].get<bool>();
  return (all_conserved && fuzz_ok) ? 0 : 1;
}
