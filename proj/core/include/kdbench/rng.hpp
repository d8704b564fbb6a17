#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace kdbench {

// Seed-splitting rule used everywhere randomness is derived from a parent
// seed: two rounds of the splitmix64 finalizer over the xor-combined inputs.
// All streams in a run are derived as mix_seed(run_seed, stream_tag), so
// adding a consumer never shifts another stream's draws.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t base, std::string_view tag);

// Stream tags for the independent RNG domains of one training run.
inline constexpr std::uint64_t kStreamData = 1;     // dataset sampling + label noise
inline constexpr std::uint64_t kStreamBatch = 2;    // epoch shuffling
inline constexpr std::uint64_t kStreamTeacher = 3;  // per-step teacher selection
inline constexpr std::uint64_t kStreamInit = 4;     // weight init
inline constexpr std::uint64_t kStreamAugment = 5;  // mixup pairing and mixing

// Deterministic random source. std::mt19937_64 output is fully specified by
// the standard; every conversion to doubles/ranges is done here so that two
// builds produce bit-identical streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0,1), 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform in (0,1], never exactly zero (safe under log).
    double uniform01_open() { return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller (cosine branch only; no cached spare, so
    // the draw sequence is a pure function of the call count).
    double normal();

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n);

    // Marsaglia-Tsang gamma; Johnk-free and valid for any alpha > 0.
    double gamma(double alpha);

    // Beta(a, b) as a gamma ratio. Values lie in [0, 1]: with tiny shape
    // parameters a gamma draw can underflow, landing exactly on an endpoint.
    double beta(double a, double b);

    // Fisher-Yates permutation of 0..n-1.
    std::vector<int> permutation(int n);

    // k distinct values from 0..n-1, uniform without replacement
    // (partial Fisher-Yates; order is the draw order).
    std::vector<int> sample_without_replacement(int n, int k);

private:
    std::mt19937_64 gen_;
};

}  // namespace kdbench
