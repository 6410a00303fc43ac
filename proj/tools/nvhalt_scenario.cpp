// Runs a scenario-text file (or stdin) through the transactional memory
// engine and prints the JSON verdict: per-line outcomes, the serializability
// check, and — when the scenario crashes — the durability check against the
// recovered heap.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "nvhalt/verify.hpp"

int main(int argc, char** argv) {
  std::string path = "-";
  uint64_t words = 1024;
  uint32_t threads = 8;
  uint32_t static_words = 256;
  std::string locks = "colocated";

  CLI::App app{"scenario-text runner"};
  app.add_option("file", path, "scenario file ('-' or omitted reads stdin)");
  app.add_option("--words", words, "heap size in words (default 1024)");
  app.add_option("--threads", threads, "thread slots (default 8)")->check(CLI::Range(1, 64));
  app.add_option("--static", static_words, "statically addressable words (default 256)");
  app.add_option("--locks", locks, "colocated | hashed (default colocated)")
      ->check(CLI::IsMember({"colocated", "hashed"}));
  CLI11_PARSE(app, argc, argv);

  std::string text;
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  } else {
    std::ifstream in(path);
    if (!in) {
      std::fprintf(stderr, "cannot open %s\n", path.c_str());
      return 2;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }

  nvhalt::TmOptions opt;
  opt.heap.word_count = words;
  opt.heap.thread_slots = threads;
  opt.locks.mode =
      locks == "hashed" ? nvhalt::LockMode::Hashed : nvhalt::LockMode::Colocated;
  opt.mem.static_words = static_words;

  try {
    std::printf("%s\n", nvhalt::run_scenario_text(text, opt).c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
