#ifndef QDSLAB_PARALLEL_HPP
#define QDSLAB_PARALLEL_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace qdslab {

/// Worker count: QDSLAB_THREADS if set and positive, else hardware concurrency.
unsigned thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Tasks must
/// write only to their own slots; the first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent generator for (seed, stream, index), e.g. one per simulation chunk.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace qdslab

#endif
