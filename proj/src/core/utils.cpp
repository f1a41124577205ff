#include "kv/core/utils.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

namespace kv {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string fnv1a_hex(const void* data, std::size_t n) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(data, n)));
    return buf;
}

std::string fnv1a_hex(const std::string& s) { return fnv1a_hex(s.data(), s.size()); }

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
    // splitmix64 finalizer over the pair
    std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn) {
    if (n <= 0) return;
    int nt = std::max(1, threads);
    nt = static_cast<int>(std::min<std::int64_t>(nt, n));
    if (nt == 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    const std::int64_t chunk = std::max<std::int64_t>(1, n / (nt * 8));
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::exception_ptr err;
    std::mutex err_mtx;
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::int64_t begin = next.fetch_add(chunk);
                if (begin >= n) return;
                const std::int64_t end = std::min(n, begin + chunk);
                try {
                    for (std::int64_t i = begin; i < end; ++i) fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mtx);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

namespace {
int g_workers = 0;
std::once_flag g_workers_once;
bool g_quiet = false;
std::mutex g_log_mtx;

void emit(const char* level, const std::string& msg) {
    std::lock_guard<std::mutex> lk(g_log_mtx);
    std::fprintf(stderr, "[%s] %s\n", level, msg.c_str());
}
}  // namespace

int default_workers() {
    std::call_once(g_workers_once, []() {
        if (g_workers > 0) return;
        if (const char* env = std::getenv("KNEEVIEW_WORKERS")) {
            g_workers = std::max(1, std::atoi(env));
            return;
        }
        g_workers = std::max(1u, std::thread::hardware_concurrency());
    });
    return g_workers;
}

void set_default_workers(int n) {
    g_workers = std::max(1, n);
    std::call_once(g_workers_once, []() {});
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

Timer::Timer() { reset(); }

void Timer::reset() {
    t0_ns_ = std::chrono::duration_cast<std::chrono::nanoseconds>(
                 std::chrono::steady_clock::now().time_since_epoch())
                 .count();
}

double Timer::seconds() const {
    const auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(
                         std::chrono::steady_clock::now().time_since_epoch())
                         .count();
    return static_cast<double>(now - t0_ns_) * 1e-9;
}

void log_info(const std::string& msg) {
    if (!g_quiet) emit("info", msg);
}
void log_warn(const std::string& msg) { emit("warn", msg); }
void log_error(const std::string& msg) { emit("error", msg); }
void set_log_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace kv
