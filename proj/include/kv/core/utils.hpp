#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace kv {

// FNV-1a, used for dataset/file checksums and config hashes.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string fnv1a_hex(const void* data, std::size_t n);
std::string fnv1a_hex(const std::string& s);

// Deterministic sub-seed derivation: mixes a stream id into a master seed so
// that independent consumers (phantom i, sample j, epoch e, ...) get
// decorrelated but reproducible generators.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream);

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks across up
// to `threads` workers; results must not depend on the partition (callers
// write to disjoint output slots). threads <= 1 runs inline.
void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn);

// Process-wide default worker count (CLI --workers / KNEEVIEW_WORKERS, else
// hardware concurrency).
int default_workers();
void set_default_workers(int n);

std::vector<std::string> split_ws(const std::string& line);
std::string trim(const std::string& s);
std::string lowercase(std::string s);

double uniform_in(std::mt19937_64& rng, double lo, double hi);

struct Timer {
    Timer();
    double seconds() const;
    void reset();
  private:
    std::int64_t t0_ns_;
};

// Line-atomic logger. Levels: info, warn, error.
void log_info(const std::string& msg);
void log_warn(const std::string& msg);
void log_error(const std::string& msg);
void set_log_quiet(bool quiet);

}  // namespace kv
